//! Motion corpora: the synthetic generator, the on-disk format, stratified
//! pair sampling for training and a stratified train/test split.

mod synth;

pub use synth::{generate_synthetic, CategorySpec, ModeSpec, Oscillation, Shape, SyntheticSpec, Vertical};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::{self, Manifest};
use crate::error::{Error, Result};
use crate::kinematics::{decompose, normalize_origin, sample_window, Lmp, Motion, Skeleton, Trajectory};

pub const CORPUS_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const RECORDS_FILE: &str = "records.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct MotionRecord {
    pub motion: Motion,
    /// Planted mode id; synthetic corpora only, never used for training.
    pub mode: Option<usize>,
}

impl MotionRecord {
    pub fn category(&self) -> usize {
        self.motion.category
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub skeleton: Skeleton,
    pub frames: usize,
    pub categories: Vec<String>,
    pub counts: Vec<usize>,
    /// Optional per-category planted mode names.
    pub mode_names: Option<Vec<Vec<String>>>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub records: Vec<MotionRecord>,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains([',', ';', '|', '=', '\n', '\r']) {
        return Err(Error::Data(format!("name `{name}` is empty or contains a reserved character")));
    }
    Ok(())
}

impl Corpus {
    /// Assemble a corpus, deriving counts from the records.
    pub fn new(skeleton: Skeleton, categories: Vec<String>, records: Vec<MotionRecord>, seed: u64) -> Result<Self> {
        let frames = records.first().map_or(0, |r| r.motion.frames());
        let mut counts = vec![0; categories.len()];
        for (i, r) in records.iter().enumerate() {
            let c = r.category();
            if c >= categories.len() {
                return Err(Error::MalformedRecord {
                    index: i,
                    reason: format!("category {c} out of range"),
                });
            }
            counts[c] += 1;
        }
        let corpus = Self {
            manifest: CorpusManifest {
                skeleton,
                frames,
                categories,
                counts,
                mode_names: None,
                seed,
            },
            records,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// The default synthetic corpus for `seed`.
    pub fn synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Self> {
        let records = generate_synthetic(spec, seed)?;
        let mut c = Self::new(spec.skeleton.clone(), spec.category_names(), records, seed)?;
        c.manifest.mode_names = Some(
            spec.categories
                .iter()
                .map(|c| c.modes.iter().map(|m| m.name.clone()).collect())
                .collect(),
        );
        c.validate()?;
        Ok(c)
    }

    pub fn num_categories(&self) -> usize {
        self.manifest.categories.len()
    }

    pub fn frames(&self) -> usize {
        self.manifest.frames
    }

    pub fn joints(&self) -> usize {
        self.manifest.skeleton.joints()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.manifest.categories.iter().position(|c| c == name)
    }

    pub fn by_category(&self, c: usize) -> impl Iterator<Item = &MotionRecord> {
        self.records.iter().filter(move |r| r.category() == c)
    }

    pub fn motions(&self) -> Vec<Motion> {
        self.records.iter().map(|r| r.motion.clone()).collect()
    }

    /// Records split into per-category motion lists.
    pub fn grouped(&self) -> Vec<Vec<Motion>> {
        let mut g = vec![Vec::new(); self.num_categories()];
        for r in &self.records {
            g[r.category()].push(r.motion.clone());
        }
        g
    }

    /// Same manifest, a subset of records; counts are recomputed.
    pub fn with_records(&self, records: Vec<MotionRecord>) -> Self {
        let mut manifest = self.manifest.clone();
        manifest.counts = vec![0; manifest.categories.len()];
        for r in &records {
            manifest.counts[r.category()] += 1;
        }
        Self { manifest, records }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.skeleton.validate()?;
        for c in &m.categories {
            check_name(c)?;
        }
        for n in &m.skeleton.names {
            check_name(n)?;
        }
        if let Some(modes) = &m.mode_names {
            if modes.len() != m.categories.len() {
                return Err(Error::Data("mode name table does not match the category count".into()));
            }
            for n in modes.iter().flatten() {
                check_name(n)?;
            }
        }
        if m.counts.len() != m.categories.len() {
            return Err(Error::Data("counts do not match the category count".into()));
        }
        let mut seen = vec![0; m.categories.len()];
        for (i, r) in self.records.iter().enumerate() {
            let mo = &r.motion;
            if mo.frames() != m.frames || mo.joints() != m.skeleton.joints() || mo.root() != m.skeleton.root {
                return Err(Error::MalformedRecord {
                    index: i,
                    reason: format!(
                        "shape {}×{} (root {}) does not match corpus {}×{} (root {})",
                        mo.frames(),
                        mo.joints(),
                        mo.root(),
                        m.frames,
                        m.skeleton.joints(),
                        m.skeleton.root
                    ),
                });
            }
            let c = r.category();
            if c >= seen.len() {
                return Err(Error::MalformedRecord {
                    index: i,
                    reason: format!("category {c} out of range"),
                });
            }
            seen[c] += 1;
        }
        for (c, (&want, &got)) in m.counts.iter().zip(&seen).enumerate() {
            if want != got {
                return Err(Error::Data(format!(
                    "category `{}`: manifest count {want}, records {got}",
                    m.categories[c]
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        archive::ensure_dir(dir)?;
        let mut bytes = Vec::new();
        for r in &self.records {
            archive::f64s_to_bytes(r.motion.positions(), &mut bytes);
            bytes.extend_from_slice(&(r.category() as i32).to_le_bytes());
            bytes.extend_from_slice(&r.mode.map_or(-1, |m| m as i32).to_le_bytes());
        }
        let m = &self.manifest;
        let sk = &m.skeleton;
        let mut man = Manifest::new();
        man.set("version", CORPUS_VERSION);
        man.set("joints", sk.joints());
        man.set("root", sk.root);
        man.set("frames", m.frames);
        man.set("categories", m.categories.join(","));
        man.set("counts", join(&m.counts));
        man.set("seed", m.seed);
        man.set("sha256", archive::sha256_hex(&bytes));
        man.set(
            "parents",
            sk.parents
                .iter()
                .map(|p| p.map_or("-".to_string(), |p| p.to_string()))
                .collect::<Vec<_>>()
                .join(","),
        );
        man.set("joint_names", sk.names.join(","));
        if let Some(modes) = &m.mode_names {
            man.set("modes", modes.iter().map(|v| v.join("|")).collect::<Vec<_>>().join(";"));
        }
        archive::write_bytes(&dir.join(RECORDS_FILE), &bytes)?;
        man.write(&dir.join(MANIFEST_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let man = Manifest::read(&dir.join(MANIFEST_FILE))?;
        man.check_version(CORPUS_VERSION)?;
        let joints: usize = man.parse("joints")?;
        let root: usize = man.parse("root")?;
        let frames: usize = man.parse("frames")?;
        let categories: Vec<String> = man.parse_list("categories")?;
        let counts: Vec<usize> = man.parse_list("counts")?;
        let seed: u64 = man.parse("seed")?;
        let skeleton = match (man.get("parents"), man.get("joint_names")) {
            (Some(_), Some(_)) => {
                let parents = man
                    .parse_list::<String>("parents")?
                    .into_iter()
                    .map(|p| match p.as_str() {
                        "-" => Ok(None),
                        s => s
                            .parse()
                            .map(Some)
                            .map_err(|_| Error::Data(format!("invalid parent `{s}`"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Skeleton::new(root, parents, man.parse_list("joint_names")?)?
            }
            _ => {
                // star skeleton around the root when no tree is stored
                let parents = (0..joints).map(|j| (j != root).then_some(root)).collect();
                Skeleton::new(root, parents, (0..joints).map(|j| format!("j{j}")).collect())?
            }
        };
        if skeleton.joints() != joints {
            return Err(Error::Data(format!(
                "manifest declares {joints} joints but the skeleton has {}",
                skeleton.joints()
            )));
        }
        let mode_names = man.get("modes").map(|s| {
            s.split(';')
                .map(|c| c.split('|').filter(|m| !m.is_empty()).map(str::to_string).collect())
                .collect()
        });

        let bytes = archive::read_bytes(&dir.join(RECORDS_FILE))?;
        let total: usize = counts.iter().sum();
        let stride = frames * joints * 3 * 8 + 8;
        let mut records = Vec::with_capacity(total);
        for i in 0..total {
            let Some(chunk) = bytes.get(i * stride..(i + 1) * stride) else {
                return Err(Error::MalformedRecord {
                    index: i,
                    reason: format!("record file ends after {} bytes", bytes.len()),
                });
            };
            let (coords, tail) = chunk.split_at(stride - 8);
            let category = i32::from_le_bytes(tail[..4].try_into().expect("4 bytes"));
            let mode = i32::from_le_bytes(tail[4..].try_into().expect("4 bytes"));
            if category < 0 || category as usize >= categories.len() {
                return Err(Error::MalformedRecord {
                    index: i,
                    reason: format!("category id {category} out of range"),
                });
            }
            if mode < -1 {
                return Err(Error::MalformedRecord {
                    index: i,
                    reason: format!("mode id {mode} is invalid"),
                });
            }
            let motion = Motion::new(frames, joints, root, archive::bytes_to_f64s(coords), category as usize).map_err(
                |e| Error::MalformedRecord {
                    index: i,
                    reason: e.to_string(),
                },
            )?;
            records.push(MotionRecord {
                motion,
                mode: (mode >= 0).then_some(mode as usize),
            });
        }
        if bytes.len() != total * stride {
            return Err(Error::MalformedRecord {
                index: total,
                reason: format!("{} trailing bytes after the last record", bytes.len() - total * stride),
            });
        }
        if archive::sha256_hex(&bytes) != man.require("sha256")? {
            return Err(Error::Checksum {
                what: RECORDS_FILE.to_string(),
            });
        }
        let corpus = Self {
            manifest: CorpusManifest {
                skeleton,
                frames,
                categories,
                counts,
                mode_names,
                seed,
            },
            records,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// One pair member after windowing, origin normalization and decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMember {
    pub motion: Motion,
    pub lmp: Lmp,
    pub trajectory: Trajectory,
    pub category: usize,
}

impl PairMember {
    pub fn prepare(motion: &Motion, window: usize, rng: &mut impl Rng) -> Result<Self> {
        let m = normalize_origin(&sample_window(motion, window, rng)?);
        let (lmp, trajectory) = decompose(&m);
        Ok(Self {
            category: m.category,
            motion: m,
            lmp,
            trajectory,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(PairMember, PairMember)>,
}

/// Uniform-category sampler: draw a category uniformly, then a record
/// uniformly within it.
#[derive(Clone, Debug)]
pub struct StratifiedSampler {
    by_category: Vec<Vec<usize>>,
    /// Probability that the second pair member is forced into the first
    /// member's category.
    pub positive_boost: f64,
}

impl StratifiedSampler {
    pub fn new(records: &[MotionRecord], categories: usize) -> Result<Self> {
        let mut by_category = vec![Vec::new(); categories];
        for (i, r) in records.iter().enumerate() {
            if r.category() >= categories {
                return Err(Error::MalformedRecord {
                    index: i,
                    reason: format!("category {} out of range", r.category()),
                });
            }
            by_category[r.category()].push(i);
        }
        if let Some(c) = by_category.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("category {c} has no records")));
        }
        Ok(Self {
            by_category,
            positive_boost: 0.0,
        })
    }

    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        let c = rng.random_range(0..self.by_category.len());
        self.draw_in(c, rng)
    }

    pub fn draw_in(&self, category: usize, rng: &mut impl Rng) -> usize {
        let pool = &self.by_category[category];
        pool[rng.random_range(0..pool.len())]
    }

    pub fn draw_pair(&self, records: &[MotionRecord], rng: &mut impl Rng) -> (usize, usize) {
        let a = self.draw(rng);
        let b = if self.positive_boost > 0.0 && rng.random_bool(self.positive_boost.min(1.0)) {
            self.draw_in(records[a].category(), rng)
        } else {
            self.draw(rng)
        };
        (a, b)
    }
}

/// `batches` pair batches of `batch_size` pairs each.
pub fn stratified_pair_batches(
    records: &[MotionRecord],
    categories: usize,
    batch_size: usize,
    batches: usize,
    window: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PairBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let sampler = StratifiedSampler::new(records, categories)?;
    (0..batches)
        .map(|_| sampler.next_batch(records, batch_size, window, rng))
        .collect()
}

impl StratifiedSampler {
    pub fn next_batch(
        &self,
        records: &[MotionRecord],
        batch_size: usize,
        window: usize,
        rng: &mut impl Rng,
    ) -> Result<PairBatch> {
        let mut pairs = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (a, b) = self.draw_pair(records, rng);
            let ma = PairMember::prepare(&records[a].motion, window, rng)?;
            let mb = PairMember::prepare(&records[b].motion, window, rng)?;
            pairs.push((ma, mb));
        }
        Ok(PairBatch { pairs })
    }
}

/// Stratified split: each category contributes `round(n·test_fraction)`
/// records to the test side, and both sides get at least one.
pub fn split(records: &[MotionRecord], test_fraction: f64, seed: u64) -> Result<(Vec<MotionRecord>, Vec<MotionRecord>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories = records.iter().map(MotionRecord::category).max().map_or(0, |c| c + 1);
    let mut test_mask = vec![false; records.len()];
    for c in 0..categories {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].category() == c).collect();
        if idx.is_empty() {
            continue;
        }
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test == idx.len() {
            return Err(Error::Data(format!(
                "category {c} has {} records, too few to appear in both splits",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            test_mask[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, t) in records.iter().zip(test_mask) {
        if t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, test))
}
