//! Paired-sample training loop with Adam, global gradient clipping and a
//! linearly decaying teacher-forcing rate.

use std::fmt::Write as _;
use std::time::Instant;

use mogen_tensor::{grad_check, AdamState, GradCheckOptions, GradCheckReport, Tape, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, PairBatch, PairMember, StratifiedSampler};
use crate::error::{Error, Result};
use crate::kinematics::{decompose, normalize_origin, Lmp, Motion};
use crate::latent::CodeBank;
use crate::losses::{batch_loss, AblationFlags, BatchLoss, BatchTargets, ContrastiveConfig, LossBreakdown};
use crate::model::{time_major, CheckpointMeta, ModelConfig, MotionModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    /// Optimizer steps per epoch; by default enough pairs to draw every
    /// record once on average.
    pub batches_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub contrastive: ContrastiveConfig,
    pub tf_start: f64,
    pub tf_end: f64,
    /// Epochs over which the teacher-forcing rate decays; defaults to
    /// `epochs`.
    pub tf_decay_epochs: Option<usize>,
    pub window: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub positive_boost: f64,
    pub clip_norm: f64,
    pub teacher_forcing: TeacherForcing,
}

/// What a teacher-forcing coin flip decides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherForcing {
    /// One Bernoulli draw per frame.
    #[default]
    Frame,
    /// One draw per sequence; a forced sequence sees ground truth at
    /// every step.
    Sequence,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            batches_per_epoch: None,
            learning_rate: 1e-3,
            contrastive: ContrastiveConfig::default(),
            tf_start: 1.0,
            tf_end: 0.3,
            tf_decay_epochs: None,
            window: 60,
            seed: 0,
            ablation: AblationFlags::default(),
            positive_boost: 0.0,
            clip_norm: 5.0,
            teacher_forcing: TeacherForcing::default(),
        }
    }
}

impl TrainConfig {
    /// Recipe for the desk-scale corpus: whole-sequence teacher forcing and
    /// a learning rate of 3e-3, otherwise the defaults. With per-frame
    /// forcing the small decoder learns to copy the previous true pose and
    /// its free-running output loses most within-category diversity.
    pub fn desk() -> Self {
        Self {
            learning_rate: 3e-3,
            teacher_forcing: TeacherForcing::Sequence,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.contrastive.validate()?;
        let rate = |x: f64| (0.0..=1.0).contains(&x);
        if !(rate(self.tf_start) && rate(self.tf_end) && rate(self.positive_boost)) {
            return Err(Error::Config("teacher-forcing rates and positive boost must lie in [0, 1]".into()));
        }
        if self.tf_start < self.tf_end {
            return Err(Error::Config("tf_start must not be below tf_end".into()));
        }
        if self.batch_size == 0 || self.window == 0 || self.batches_per_epoch == Some(0) {
            return Err(Error::Config("batch size, window and batches per epoch must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, records: usize) -> usize {
        self.batches_per_epoch
            .unwrap_or_else(|| records.div_ceil(2 * self.batch_size).max(1))
    }
}

/// Linear decay from `tf_start` at epoch 0 to `tf_end` at
/// `tf_decay_epochs`, constant afterwards.
pub fn tf_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let span = cfg.tf_decay_epochs.unwrap_or(cfg.epochs);
    if span == 0 {
        return cfg.tf_end;
    }
    let frac = (epoch as f64 / span as f64).min(1.0);
    cfg.tf_start + (cfg.tf_end - cfg.tf_start) * frac
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub tf_rate: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l_es,l_r,l_mre,l_cons,total,tf_rate,seconds\n");
        for e in &self.epochs {
            let l = &e.losses;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.3}",
                e.epoch, l.l_es, l.l_r, l.l_mre, l.l_cons, l.total, e.tf_rate, e.seconds
            );
        }
        s
    }
}

/// Training stream for `seed`, independent of the model-initialization
/// stream with the same seed.
fn train_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Reparameterization noise and teacher-forcing masks for one batch.
pub(crate) struct BatchNoise {
    pub eps: Tensor,
    pub masks: Vec<Vec<bool>>,
}

impl BatchNoise {
    fn draw(model: &MotionModel, rows: usize, tf_rate: f64, mode: TeacherForcing, rng: &mut impl Rng) -> Result<Self> {
        let c = &model.config;
        let eps: Vec<f64> = (0..rows * c.latent).map(|_| StandardNormal.sample(rng)).collect();
        let masks = (0..rows)
            .map(|_| match mode {
                TeacherForcing::Frame => (0..c.frames).map(|_| rng.random_bool(tf_rate)).collect(),
                TeacherForcing::Sequence => vec![rng.random_bool(tf_rate); c.frames],
            })
            .collect();
        Ok(Self {
            eps: Tensor::new(vec![rows, c.latent], eps)?,
            masks,
        })
    }
}

/// Run one optimizer step on a prepared batch and return its loss terms.
pub(crate) fn train_step(
    model: &mut MotionModel,
    adam: &mut AdamState,
    batch: &PairBatch,
    tf_rate: f64,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LossBreakdown> {
    let noise = BatchNoise::draw(model, 2 * batch.pairs.len(), tf_rate, cfg.teacher_forcing, rng)?;
    let mut tape = Tape::new();
    let loss = batch_objective(&mut tape, model, batch, &noise, &cfg.contrastive, &cfg.ablation)?;
    let total = tape.value(loss.total).item();
    if !total.is_finite() {
        return Err(Error::Numerical("training loss is not finite".into()));
    }
    tape.backward(loss.total, &mut model.store)?;
    model.store.clip_grad_norm(cfg.clip_norm);
    adam.step(&mut model.store)?;
    Ok(LossBreakdown {
        l_es: tape.value(loss.l_es).item(),
        l_r: loss.l_r.map_or(0.0, |v| tape.value(v).item()),
        l_mre: tape.value(loss.l_mre).item(),
        l_cons: loss.l_cons.map_or(0.0, |v| tape.value(v).item()),
        total,
    })
}

/// Record the batch loss on `tape`. Rows `0..P` hold the first pair
/// members, rows `P..2P` the second ones.
pub(crate) fn batch_objective(
    tape: &mut Tape,
    model: &MotionModel,
    batch: &PairBatch,
    noise: &BatchNoise,
    contrastive: &ContrastiveConfig,
    ablation: &AblationFlags,
) -> Result<BatchLoss> {
    let c = &model.config;
    let members: Vec<_> = batch
        .pairs
        .iter()
        .map(|(a, _)| a)
        .chain(batch.pairs.iter().map(|(_, b)| b))
        .collect();
    let lmps: Vec<&Lmp> = members.iter().map(|m| &m.lmp).collect();
    let categories: Vec<usize> = members.iter().map(|m| m.category).collect();
    let endpoints: Vec<[f64; 3]> = members.iter().map(|m| m.trajectory.end()).collect();
    let pose_rows: Vec<&[f64]> = members.iter().map(|m| m.motion.positions()).collect();
    let vels: Vec<Vec<f64>> = members
        .iter()
        .map(|m| m.trajectory.velocities().into_iter().flatten().collect())
        .collect();
    let vel_rows: Vec<&[f64]> = vels.iter().map(Vec::as_slice).collect();
    let targets = BatchTargets {
        pairs: batch.pairs.len(),
        same_category: batch.pairs.iter().map(|(a, b)| a.category == b.category).collect(),
        velocities: time_major(c.frames, 3, &vel_rows),
        poses: time_major(c.frames, c.pose_dim(), &pose_rows),
    };
    let fwd = model.forward_batch(
        tape,
        &lmps,
        &categories,
        c.endpoint_conditioning.then_some(endpoints.as_slice()),
        noise.eps.clone(),
        Some((&targets.poses, &noise.masks)),
    )?;
    batch_loss(tape, &fwd, &targets, c.root, contrastive, ablation)
}

/// Central-difference check of the full training objective on the tiny
/// configuration with random motions, mixed pair types and partial teacher
/// forcing.
pub fn grad_check_tiny(seed: u64) -> Result<GradCheckReport> {
    let config = ModelConfig::tiny();
    let mut model = MotionModel::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let member = |category: usize, rng: &mut ChaCha8Rng| -> Result<PairMember> {
        let n = config.frames * config.pose_dim();
        let positions = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut *rng);
                0.3 * e
            })
            .collect();
        let m = Motion::new(config.frames, config.joints, config.root, positions, category)?;
        PairMember::prepare(&m, config.frames, rng)
    };
    let batch = PairBatch {
        pairs: vec![
            (member(0, &mut rng)?, member(0, &mut rng)?),
            (member(0, &mut rng)?, member(1, &mut rng)?),
            (member(1, &mut rng)?, member(1, &mut rng)?),
        ],
    };
    let noise = BatchNoise::draw(&model, 6, 0.5, TeacherForcing::Frame, &mut rng)?;
    let contrastive = ContrastiveConfig::default();
    let ablation = AblationFlags::default();
    let mut store = std::mem::take(&mut model.store);
    let report = grad_check(&mut store, GradCheckOptions::default(), |tape, params| {
        model.store = params.clone();
        let loss = batch_objective(tape, &model, &batch, &noise, &contrastive, &ablation)
            .map_err(|e| TensorError::Invalid(e.to_string()))?;
        Ok(loss.total)
    })?;
    Ok(report)
}

/// Train in place. `on_epoch` sees each finished epoch record.
pub fn train(
    model: &mut MotionModel,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(CheckpointMeta, TrainLog)> {
    cfg.validate()?;
    let mc = &model.config;
    if mc.categories != corpus.num_categories() {
        return Err(Error::Config(format!(
            "model has {} categories, corpus has {}",
            mc.categories,
            corpus.num_categories()
        )));
    }
    if mc.joints != corpus.joints() || mc.root != corpus.manifest.skeleton.root {
        return Err(Error::Config("model skeleton does not match the corpus".into()));
    }
    if mc.frames != cfg.window {
        return Err(Error::Config(format!(
            "model decodes {} frames but the training window is {}",
            mc.frames, cfg.window
        )));
    }
    if mc.endpoint_conditioning == cfg.ablation.no_endpoint {
        return Err(Error::Config("model endpoint conditioning disagrees with the ablation flags".into()));
    }
    let mut sampler = StratifiedSampler::new(&corpus.records, corpus.num_categories())?;
    sampler.positive_boost = cfg.positive_boost;
    let mut rng = train_rng(cfg.seed);
    let mut adam = AdamState::new(&model.store, cfg.learning_rate);
    model.store.zero_grad();
    let steps = cfg.steps_per_epoch(corpus.records.len());
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let tf = tf_schedule(epoch, cfg);
        let mut acc = LossBreakdown::default();
        for _ in 0..steps {
            let batch = sampler.next_batch(&corpus.records, cfg.batch_size, cfg.window, &mut rng)?;
            let l = train_step(model, &mut adam, &batch, tf, cfg, &mut rng)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}: {m}")),
                    Error::Tensor(t) => Error::Numerical(format!("epoch {epoch}: {t}")),
                    other => other,
                })?;
            acc.l_es += l.l_es;
            acc.l_r += l.l_r;
            acc.l_mre += l.l_mre;
            acc.l_cons += l.l_cons;
            acc.total += l.total;
        }
        let n = steps as f64;
        let rec = EpochRecord {
            epoch,
            losses: LossBreakdown {
                l_es: acc.l_es / n,
                l_r: acc.l_r / n,
                l_mre: acc.l_mre / n,
                l_cons: acc.l_cons / n,
                total: acc.total / n,
            },
            tf_rate: tf,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: total {:.4} tf {tf:.3}", rec.losses.total);
        on_epoch(&rec);
        log.epochs.push(rec);
    }
    let meta = CheckpointMeta {
        step: adam.steps(),
        rng: Some((cfg.seed, rng.get_word_pos())),
    };
    Ok((meta, log))
}

/// Posterior means, categories and true end points of every record, each
/// taken from the origin-normalized full record.
pub fn extract_code_bank(model: &MotionModel, corpus: &Corpus) -> Result<CodeBank> {
    let prepared: Vec<_> = corpus
        .records
        .iter()
        .map(|r| decompose(&normalize_origin(&r.motion)))
        .collect();
    let mut codes = Vec::with_capacity(prepared.len());
    for chunk in prepared.chunks(64) {
        let lmps: Vec<&Lmp> = chunk.iter().map(|(l, _)| l).collect();
        for p in model.encode_batch(&lmps)? {
            codes.push(p.mean);
        }
    }
    CodeBank::new(
        codes,
        corpus.records.iter().map(|r| r.category()).collect(),
        prepared.iter().map(|(_, t)| t.end()).collect(),
        corpus.records.iter().map(|r| r.mode).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{l_cons, l_es, l_mre, l_r};

    fn tiny_batch(model: &MotionModel, rng: &mut ChaCha8Rng) -> PairBatch {
        let c = &model.config;
        let mut member = |category: usize| {
            let positions = (0..c.frames * c.pose_dim())
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut *rng);
                    0.3 * e
                })
                .collect();
            let m = Motion::new(c.frames, c.joints, c.root, positions, category).unwrap();
            PairMember::prepare(&m, c.frames, &mut *rng).unwrap()
        };
        PairBatch {
            pairs: vec![(member(0), member(0)), (member(0), member(1)), (member(1), member(0))],
        }
    }

    /// The batched tape objective equals the per-sample plain functions.
    #[test]
    fn tape_loss_matches_plain_loss() {
        let model = MotionModel::new(ModelConfig::tiny(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = tiny_batch(&model, &mut rng);
        let noise = BatchNoise::draw(&model, 6, 0.0, TeacherForcing::Frame, &mut rng).unwrap();
        let cfg = ContrastiveConfig::default();
        for flags in [
            AblationFlags::default(),
            AblationFlags {
                no_cons: true,
                ..Default::default()
            },
            AblationFlags {
                no_traj: true,
                ..Default::default()
            },
        ] {
            let mut tape = Tape::new();
            let loss = batch_objective(&mut tape, &model, &batch, &noise, &cfg, &flags).unwrap();
            let tape_total = tape.value(loss.total).item();

            let c = &model.config;
            let members: Vec<&PairMember> = batch
                .pairs
                .iter()
                .map(|(a, _)| a)
                .chain(batch.pairs.iter().map(|(_, b)| b))
                .collect();
            let b = members.len();
            let lmps: Vec<&Lmp> = members.iter().map(|m| &m.lmp).collect();
            let posts = model.encode_batch(&lmps).unwrap();
            let mut plain = 0.0;
            for (i, (a, bm)) in batch.pairs.iter().enumerate() {
                plain += l_es(&posts[i], a.category, &posts[i + 3], bm.category, &cfg).unwrap();
            }
            // with no teacher forcing the decoder sees only its own output,
            // so the plain generation path reproduces each member exactly
            for (i, m) in members.iter().enumerate() {
                let post = &posts[i];
                let z: Vec<f64> = (0..c.latent)
                    .map(|k| post.mean[k] + post.var[k].sqrt() * noise.eps.data()[i * c.latent + k])
                    .collect();
                let code = crate::model::LatentCode(z);
                let (vel, traj) = model.gen_trajectory(m.category, &code, Some(m.trajectory.end())).unwrap();
                let motion = model
                    .gen_motion(m.category, &code, &traj, None, 0.0, &mut rng)
                    .unwrap();
                let mut member_loss = l_mre(&motion, &m.motion).unwrap();
                if !flags.no_traj {
                    member_loss += l_r(&vel, &m.trajectory).unwrap();
                    if !flags.no_cons {
                        member_loss += l_cons(&traj, &motion.root_track()).unwrap();
                    }
                }
                plain += member_loss;
            }
            plain /= (b / 2) as f64;
            assert!(
                (tape_total - plain).abs() < 1e-9 * plain.abs().max(1.0),
                "{flags:?}: tape {tape_total} plain {plain}"
            );
        }
    }

    #[test]
    fn grad_check_passes_on_tiny_config() {
        let report = grad_check_tiny(0).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.coords_checked > 1000);
    }

    #[test]
    fn tf_schedule_is_linear_then_flat() {
        let cfg = TrainConfig {
            epochs: 10,
            tf_start: 1.0,
            tf_end: 0.5,
            ..Default::default()
        };
        assert_eq!(tf_schedule(0, &cfg), 1.0);
        assert!((tf_schedule(5, &cfg) - 0.75).abs() < 1e-12);
        assert_eq!(tf_schedule(10, &cfg), 0.5);
        assert_eq!(tf_schedule(20, &cfg), 0.5);
    }
}
