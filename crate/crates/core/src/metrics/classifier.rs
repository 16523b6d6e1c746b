//! Recurrent action classifier trained on real motion. Its tanh feature
//! layer supplies the embedding for FID, diversity and multimodality.

use std::path::Path;

use mogen_tensor::nn::{Gru, Linear};
use mogen_tensor::{AdamState, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{self, Manifest};
use crate::dataset::{split, Corpus, MotionRecord};
use crate::error::{Error, Result};
use crate::kinematics::Motion;
use crate::model::time_major;

pub const CLASSIFIER_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "classifier.txt";
const PARAMS_FILE: &str = "classifier.bin";
const INFER_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub layers: usize,
    pub feature: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 48,
            layers: 2,
            feature: 30,
            epochs: 30,
            batch_size: 32,
            learning_rate: 2e-3,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.feature == 0 || self.batch_size == 0 {
            return Err(Error::Config("classifier sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("classifier learning rate must be positive".into()));
        }
        Ok(())
    }
}

pub struct ActionClassifier {
    pub config: ClassifierConfig,
    pub joints: usize,
    pub categories: usize,
    pub store: ParamStore,
    gru: Gru,
    feature: Linear,
    out: Linear,
}

impl std::fmt::Debug for ActionClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActionClassifier")
            .field("config", &self.config)
            .field("joints", &self.joints)
            .field("categories", &self.categories)
            .finish()
    }
}

/// Outcome of classifier training.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierReport {
    pub train_accuracy: f64,
    pub held_out_accuracy: f64,
    /// Mean cross-entropy per epoch.
    pub losses: Vec<f64>,
}

impl ActionClassifier {
    pub fn new(config: ClassifierConfig, joints: usize, categories: usize) -> Result<Self> {
        config.validate()?;
        if joints == 0 || categories < 2 {
            return Err(Error::Config("classifier needs joints and at least 2 categories".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "cls.gru", joints * 3, config.hidden, config.layers, &mut rng)?;
        let feature = Linear::new(&mut store, "cls.feature", config.hidden, config.feature, &mut rng)?;
        let out = Linear::new(&mut store, "cls.out", config.feature, categories, &mut rng)?;
        Ok(Self {
            config,
            joints,
            categories,
            store,
            gru,
            feature,
            out,
        })
    }

    /// Returns `(features, logits)` for a batch of equally long motions.
    fn forward(&self, tape: &mut Tape, motions: &[&Motion]) -> Result<(Var, Var)> {
        let frames = motions[0].frames();
        for m in motions {
            if m.joints() != self.joints {
                return Err(Error::Shape(format!(
                    "motion has {} joints, classifier expects {}",
                    m.joints(),
                    self.joints
                )));
            }
            if m.frames() != frames {
                return Err(Error::Shape("motions in one batch differ in length".into()));
            }
        }
        let b = motions.len();
        let rows: Vec<&[f64]> = motions.iter().map(|m| m.positions()).collect();
        let x = tape.constant(time_major(frames, self.joints * 3, &rows));
        let mut state = self.gru.zero_state(tape, b);
        let mut h = state[state.len() - 1];
        for t in 0..frames {
            let xt = tape.slice(x, 0, t * b, b)?;
            h = self.gru.step(tape, &self.store, xt, &mut state)?;
        }
        let f = self.feature.forward(tape, &self.store, h)?;
        let f = tape.tanh(f)?;
        let logits = self.out.forward(tape, &self.store, f)?;
        Ok((f, logits))
    }

    fn batched<T>(&self, motions: &[Motion], mut each: impl FnMut(&Tape, Var, Var, usize) -> T) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(motions.len());
        for chunk in motions.chunks(INFER_BATCH) {
            let refs: Vec<&Motion> = chunk.iter().collect();
            let mut tape = Tape::new();
            let (f, l) = self.forward(&mut tape, &refs)?;
            for i in 0..chunk.len() {
                out.push(each(&tape, f, l, i));
            }
        }
        Ok(out)
    }

    /// Feature vectors in `(−1, 1)^F`.
    pub fn features(&self, motions: &[Motion]) -> Result<Vec<Vec<f64>>> {
        self.batched(motions, |tape, f, _, i| tape.value(f).row_slice(i).to_vec())
    }

    pub fn predict(&self, motions: &[Motion]) -> Result<Vec<usize>> {
        self.batched(motions, |tape, _, l, i| argmax(tape.value(l).row_slice(i)))
    }

    /// Features and predicted labels in one pass.
    pub fn analyze(&self, motions: &[Motion]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let both = self.batched(motions, |tape, f, l, i| {
            (tape.value(f).row_slice(i).to_vec(), argmax(tape.value(l).row_slice(i)))
        })?;
        Ok(both.into_iter().unzip())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        archive::ensure_dir(dir)?;
        let c = &self.config;
        let mut man = Manifest::new();
        man.set("version", CLASSIFIER_VERSION);
        man.set("kind", "action-classifier");
        man.set("joints", self.joints);
        man.set("categories", self.categories);
        man.set("hidden", c.hidden);
        man.set("layers", c.layers);
        man.set("feature", c.feature);
        man.set("epochs", c.epochs);
        man.set("batch_size", c.batch_size);
        man.set("learning_rate", c.learning_rate);
        man.set("test_fraction", c.test_fraction);
        man.set("seed", c.seed);
        let bytes = archive::params_to_manifest(&self.store, &mut man);
        archive::write_bytes(&dir.join(PARAMS_FILE), &bytes)?;
        man.write(&dir.join(MANIFEST_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let man = Manifest::read(&dir.join(MANIFEST_FILE))?;
        man.check_version(CLASSIFIER_VERSION)?;
        if man.require("kind")? != "action-classifier" {
            return Err(Error::Data(format!("{} is not a classifier checkpoint", dir.display())));
        }
        let config = ClassifierConfig {
            hidden: man.parse("hidden")?,
            layers: man.parse("layers")?,
            feature: man.parse("feature")?,
            epochs: man.parse("epochs")?,
            batch_size: man.parse("batch_size")?,
            learning_rate: man.parse("learning_rate")?,
            test_fraction: man.parse("test_fraction")?,
            seed: man.parse("seed")?,
        };
        let mut cls = Self::new(config, man.parse("joints")?, man.parse("categories")?)?;
        let bytes = archive::read_verified(&dir.join(PARAMS_FILE), &man, PARAMS_FILE)?;
        archive::params_from_manifest(&mut cls.store, &man, &bytes)?;
        Ok(cls)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Top-1 accuracy against `labels`.
pub fn accuracy(classifier: &ActionClassifier, motions: &[Motion], labels: &[usize]) -> Result<f64> {
    if motions.is_empty() {
        return Err(Error::Data("accuracy of an empty set is undefined".into()));
    }
    if motions.len() != labels.len() {
        return Err(Error::Data(format!("{} motions but {} labels", motions.len(), labels.len())));
    }
    let pred = classifier.predict(motions)?;
    Ok(hit_rate(&pred, labels))
}

pub(crate) fn hit_rate(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / pred.len() as f64
}

fn cross_entropy_step(
    cls: &mut ActionClassifier,
    adam: &mut AdamState,
    batch: &[&MotionRecord],
) -> Result<f64> {
    let motions: Vec<&Motion> = batch.iter().map(|r| &r.motion).collect();
    let mut tape = Tape::new();
    let (_, logits) = cls.forward(&mut tape, &motions)?;
    let logp = tape.log_softmax_rows(logits)?;
    let mut target = vec![0.0; batch.len() * cls.categories];
    for (i, r) in batch.iter().enumerate() {
        target[i * cls.categories + r.category()] = 1.0;
    }
    let target = tape.constant(Tensor::new(vec![batch.len(), cls.categories], target)?);
    let picked = tape.hadamard(logp, target)?;
    let total = tape.sum(picked)?;
    let loss = tape.scale(total, -1.0 / batch.len() as f64)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numerical("classifier loss is not finite".into()));
    }
    tape.backward(loss, &mut cls.store)?;
    cls.store.clip_grad_norm(5.0);
    adam.step(&mut cls.store)?;
    Ok(value)
}

/// Fit a classifier on a stratified training split of `corpus` and report
/// held-out accuracy on the rest.
pub fn train_classifier(corpus: &Corpus, cfg: &ClassifierConfig) -> Result<(ActionClassifier, ClassifierReport)> {
    cfg.validate()?;
    let (train, test) = split(&corpus.records, cfg.test_fraction, cfg.seed)?;
    let mut cls = ActionClassifier::new(cfg.clone(), corpus.joints(), corpus.num_categories())?;
    let mut adam = AdamState::new(&cls.store, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&MotionRecord> = chunk.iter().map(|&i| &train[i]).collect();
            sum += cross_entropy_step(&mut cls, &mut adam, &batch)?;
            steps += 1;
        }
        losses.push(sum / steps as f64);
    }
    let eval = |records: &[MotionRecord]| {
        let motions: Vec<Motion> = records.iter().map(|r| r.motion.clone()).collect();
        let labels: Vec<usize> = records.iter().map(MotionRecord::category).collect();
        accuracy(&cls, &motions, &labels)
    };
    let report = ClassifierReport {
        train_accuracy: eval(&train)?,
        held_out_accuracy: eval(&test)?,
        losses,
    };
    Ok((cls, report))
}
