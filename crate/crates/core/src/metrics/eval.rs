//! The sampling protocols: independent evaluation sets with 95% confidence
//! intervals, trajectory customization and the discovered-mode grouping.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{hit_rate, ActionClassifier};
use super::stats::{apd, diversity, dist_e, fid, mean, multimodality, FeatureStats};
use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::kinematics::Motion;
use crate::latent::{sample_mode_preserving, CodeBank, ConventionalSampler, KnnEndpointModel, ModeCatalog};
use crate::model::{GenRequest, LatentCode, MotionModel};

const GEN_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub sets: usize,
    pub per_category: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            sets: 10,
            per_category: 64,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    fn validate(&self) -> Result<()> {
        if self.sets < 2 || self.per_category < 2 {
            return Err(Error::Config("evaluation needs at least 2 sets of at least 2 samples".into()));
        }
        Ok(())
    }
}

/// Mean with half-width `1.96 · s / √n` of a 95% interval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub ci: f64,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let m = mean(values);
        if n < 2 {
            return Self { mean: m, ci: 0.0 };
        }
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean: m,
            ci: 1.96 * (var / n as f64).sqrt(),
        }
    }
}

/// How model samples pick their latent codes.
#[derive(Clone, Copy, Debug)]
pub enum CodeSource<'a> {
    ModePreserving(&'a ModeCatalog),
    Conventional(&'a ConventionalSampler),
}

impl CodeSource<'_> {
    pub fn sample(&self, category: usize, rng: &mut impl Rng) -> Result<LatentCode> {
        match self {
            CodeSource::ModePreserving(cat) => Ok(sample_mode_preserving(cat, category, None, rng)?.1),
            CodeSource::Conventional(s) => s.sample(category, rng),
        }
    }
}

/// Where evaluation motions come from.
#[derive(Clone, Copy, Debug)]
pub enum MotionSource<'a> {
    /// Records of a corpus, drawn without replacement until exhausted.
    Real(&'a Corpus),
    /// Model generations; endpoint-conditioned models get KNN end points.
    Model {
        model: &'a MotionModel,
        codes: CodeSource<'a>,
        knn: &'a KnnEndpointModel,
    },
}

/// Generate motions for `(category, code, endpoint)` requests in batches.
pub fn generate_many(model: &MotionModel, requests: &[GenRequest]) -> Result<Vec<Motion>> {
    let mut out = Vec::with_capacity(requests.len());
    for chunk in requests.chunks(GEN_BATCH) {
        out.extend(model.generate_batch(chunk)?.into_iter().map(|g| g.motion));
    }
    Ok(out)
}

impl MotionSource<'_> {
    pub fn draw(&self, category: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<Motion>> {
        match *self {
            MotionSource::Real(corpus) => {
                let pool: Vec<&Motion> = corpus.by_category(category).map(|r| &r.motion).collect();
                if pool.is_empty() {
                    return Err(Error::Unknown {
                        what: "category",
                        name: category.to_string(),
                    });
                }
                let mut out = Vec::with_capacity(n);
                while out.len() < n {
                    let mut idx: Vec<usize> = (0..pool.len()).collect();
                    idx.shuffle(rng);
                    out.extend(idx.into_iter().take(n - out.len()).map(|i| pool[i].clone()));
                }
                Ok(out)
            }
            MotionSource::Model { model, codes, knn } => {
                let requests = (0..n)
                    .map(|_| {
                        let code = codes.sample(category, rng)?;
                        let endpoint = if model.config.endpoint_conditioning {
                            Some(knn.predict(&code, category)?)
                        } else {
                            None
                        };
                        Ok(GenRequest {
                            category,
                            code,
                            endpoint,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                generate_many(model, &requests)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub label: String,
    pub sets: usize,
    pub per_category: usize,
    pub categories: Vec<String>,
    pub accuracy: Summary,
    pub fid: Summary,
    pub diversity: Summary,
    pub multimodality: Summary,
    /// `100 · APD(samples) / APD(real)`, averaged over categories.
    pub n_apd: Summary,
    pub category_accuracy: Vec<Summary>,
    pub category_n_apd: Vec<Summary>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,metric,category,mean,ci95\n");
        let rows = [
            ("accuracy", &self.accuracy),
            ("fid", &self.fid),
            ("diversity", &self.diversity),
            ("multimodality", &self.multimodality),
            ("n_apd", &self.n_apd),
        ];
        for (name, m) in rows {
            let _ = writeln!(s, "{},{name},all,{},{}", self.label, m.mean, m.ci);
        }
        for (c, name) in self.categories.iter().enumerate() {
            let a = &self.category_accuracy[c];
            let n = &self.category_n_apd[c];
            let _ = writeln!(s, "{},accuracy,{name},{},{}", self.label, a.mean, a.ci);
            let _ = writeln!(s, "{},n_apd,{name},{},{}", self.label, n.mean, n.ci);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}: {} sets x {} samples per category",
            self.label, self.sets, self.per_category
        );
        let _ = writeln!(
            s,
            "{:<16} {:>16} {:>16} {:>16} {:>16} {:>16}",
            "", "Acc", "FID", "Diversity", "Multimodality", "n-APD"
        );
        let cell = |m: &Summary| format!("{:.3}±{:.3}", m.mean, m.ci);
        let _ = writeln!(
            s,
            "{:<16} {:>16} {:>16} {:>16} {:>16} {:>16}",
            self.label,
            cell(&self.accuracy),
            cell(&self.fid),
            cell(&self.diversity),
            cell(&self.multimodality),
            cell(&self.n_apd)
        );
        let _ = writeln!(s, "\n{:<16} {:>16} {:>16}", "category", "Acc", "n-APD");
        for (c, name) in self.categories.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<16} {:>16} {:>16}",
                name,
                cell(&self.category_accuracy[c]),
                cell(&self.category_n_apd[c])
            );
        }
        s
    }
}

/// Run the set-based protocol for `source` against `reference`.
pub fn evaluate(
    source: &MotionSource,
    reference: &Corpus,
    classifier: &ActionClassifier,
    protocol: &EvalProtocol,
    label: &str,
) -> Result<MetricReport> {
    protocol.validate()?;
    let cats = reference.num_categories();
    if classifier.categories != cats {
        return Err(Error::Config(format!(
            "classifier knows {} categories, reference corpus has {cats}",
            classifier.categories
        )));
    }
    let real = reference.grouped();
    let real_stats = FeatureStats::from_features(&classifier.features(&reference.motions())?)?;
    let real_apd = real.iter().map(|g| apd(g)).collect::<Result<Vec<_>>>()?;
    if let Some(c) = real_apd.iter().position(|&a| a <= 0.0) {
        return Err(Error::Data(format!("category {c}: real APD is zero")));
    }

    let mut acc = Vec::new();
    let mut fids = Vec::new();
    let mut divs = Vec::new();
    let mut mms = Vec::new();
    let mut napd = Vec::new();
    let mut cat_acc = vec![Vec::new(); cats];
    let mut cat_napd = vec![Vec::new(); cats];
    for set in 0..protocol.sets {
        let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
        rng.set_stream(set as u64);
        let mut all_features = Vec::with_capacity(cats * protocol.per_category);
        let mut per_cat_features = Vec::with_capacity(cats);
        let mut hits = 0.0;
        let mut ratios = Vec::with_capacity(cats);
        for c in 0..cats {
            let motions = source.draw(c, protocol.per_category, &mut rng)?;
            let (features, pred) = classifier.analyze(&motions)?;
            let a = hit_rate(&pred, &vec![c; pred.len()]);
            hits += a;
            cat_acc[c].push(a);
            let r = apd(&motions)? / real_apd[c];
            ratios.push(r);
            cat_napd[c].push(100.0 * r);
            all_features.extend(features.iter().cloned());
            per_cat_features.push(features);
        }
        acc.push(hits / cats as f64);
        napd.push(100.0 * mean(&ratios));
        fids.push(fid(&FeatureStats::from_features(&all_features)?, &real_stats)?);
        divs.push(diversity(&all_features, &mut rng)?);
        mms.push(multimodality(&per_cat_features, &mut rng)?);
    }
    Ok(MetricReport {
        label: label.to_string(),
        sets: protocol.sets,
        per_category: protocol.per_category,
        categories: reference.manifest.categories.clone(),
        accuracy: Summary::from_values(&acc),
        fid: Summary::from_values(&fids),
        diversity: Summary::from_values(&divs),
        multimodality: Summary::from_values(&mms),
        n_apd: Summary::from_values(&napd),
        category_accuracy: cat_acc.iter().map(|v| Summary::from_values(v)).collect(),
        category_n_apd: cat_napd.iter().map(|v| Summary::from_values(v)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CustomizationProtocol {
    pub trials: usize,
    pub codes_per_category: usize,
    /// End points placed strictly between the two real ones.
    pub interpolants: usize,
    pub seed: u64,
}

impl Default for CustomizationProtocol {
    fn default() -> Self {
        Self {
            trials: 10,
            codes_per_category: 40,
            interpolants: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CustomizationReport {
    pub accuracy: Summary,
    pub dist_e: Summary,
    /// Mean distance of the targets from the origin.
    pub mean_target_distance: f64,
}

impl CustomizationReport {
    pub fn to_text(&self) -> String {
        format!(
            "customization: Acc {:.3}±{:.3}  dist_e {:.4}±{:.4}  mean target distance {:.3}\n",
            self.accuracy.mean, self.accuracy.ci, self.dist_e.mean, self.dist_e.ci, self.mean_target_distance
        )
    }
}

/// Two real end points of the category plus evenly spaced points between
/// them, ends included.
pub fn customization_targets(a: [f64; 3], b: [f64; 3], interpolants: usize) -> Vec<[f64; 3]> {
    let n = interpolants + 2;
    (0..n)
        .map(|i| {
            let l = i as f64 / (n - 1) as f64;
            [0, 1, 2].map(|k| (1.0 - l) * a[k] + l * b[k])
        })
        .collect()
}

/// Per trial and category: sample codes, pair each with a line of target
/// end points between two real ones, generate, and score classifier
/// accuracy and endpoint error.
pub fn trajectory_customization_eval(
    model: &MotionModel,
    codes: CodeSource,
    bank: &CodeBank,
    classifier: &ActionClassifier,
    protocol: &CustomizationProtocol,
) -> Result<CustomizationReport> {
    if !model.config.endpoint_conditioning {
        return Err(Error::EndpointUnsupported);
    }
    if protocol.trials == 0 || protocol.codes_per_category == 0 {
        return Err(Error::Config("customization needs at least one trial and one code".into()));
    }
    let cats = model.config.categories;
    let mut accs = Vec::with_capacity(protocol.trials);
    let mut errs = Vec::with_capacity(protocol.trials);
    let mut norm_sum = 0.0;
    let mut norm_n = 0usize;
    for trial in 0..protocol.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
        rng.set_stream(trial as u64);
        let mut requests = Vec::new();
        for c in 0..cats {
            let ends: Vec<[f64; 3]> = bank.indices(c).into_iter().map(|i| bank.end_points[i]).collect();
            if ends.len() < 2 {
                return Err(Error::Data(format!("category {c} needs at least 2 real end points")));
            }
            for _ in 0..protocol.codes_per_category {
                let code = codes.sample(c, &mut rng)?;
                let pick: Vec<&[f64; 3]> = ends.choose_multiple(&mut rng, 2).collect();
                for target in customization_targets(*pick[0], *pick[1], protocol.interpolants) {
                    requests.push(GenRequest {
                        category: c,
                        code: code.clone(),
                        endpoint: Some(target),
                    });
                }
            }
        }
        let motions = generate_many(model, &requests)?;
        let targets: Vec<[f64; 3]> = requests.iter().map(|r| r.endpoint.expect("set above")).collect();
        let labels: Vec<usize> = requests.iter().map(|r| r.category).collect();
        let pred = classifier.predict(&motions)?;
        accs.push(hit_rate(&pred, &labels));
        errs.push(dist_e(&motions, &targets)?);
        for t in &targets {
            norm_sum += (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
            norm_n += 1;
        }
    }
    Ok(CustomizationReport {
        accuracy: Summary::from_values(&accs),
        dist_e: Summary::from_values(&errs),
        mean_target_distance: norm_sum / norm_n as f64,
    })
}

/// Real motions of each category split by their discovered mode:
/// `groups[c][k]`.
pub fn discovered_mode_groups(catalog: &ModeCatalog, corpus: &Corpus) -> Result<Vec<Vec<Vec<Motion>>>> {
    catalog
        .categories
        .iter()
        .map(|cm| {
            let mut groups = vec![Vec::new(); cm.modes()];
            for (&idx, &k) in cm.members.iter().zip(&cm.gmm().assignment) {
                let rec = corpus
                    .records
                    .get(idx)
                    .ok_or_else(|| Error::Data(format!("catalog refers to record {idx} outside the corpus")))?;
                groups[k].push(rec.motion.clone());
            }
            Ok(groups)
        })
        .collect()
}

/// The same group sizes with members reassigned uniformly at random.
pub fn shuffled_groups(groups: &[Vec<Vec<Motion>>], rng: &mut impl Rng) -> Vec<Vec<Vec<Motion>>> {
    groups
        .iter()
        .map(|modes| {
            let mut all: Vec<Motion> = modes.iter().flatten().cloned().collect();
            all.shuffle(rng);
            let mut it = all.into_iter();
            modes.iter().map(|g| it.by_ref().take(g.len()).collect()).collect()
        })
        .collect()
}
