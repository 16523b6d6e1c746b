//! Latent-space analysis over posterior-mean codes: per-category mode
//! discovery, mode-preserving and conventional sampling, interpolation,
//! end-point regression and a 2-D projection for display.

mod gmm;

pub use gmm::{
    choose_k, fit_gmm, prune, select_k, silhouette, Gaussian, GmmModel, SelectKOptions, Selection, COV_RIDGE,
    MAX_ITERS, MAX_RESEEDS, N_INIT, TOLERANCE,
};

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::archive::{self, Manifest};
use crate::error::{Error, Result};
use crate::model::LatentCode;

pub const CATALOG_VERSION: u32 = 1;

/// Codes of real motions with their categories and true end points.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeBank {
    pub codes: Vec<Vec<f64>>,
    pub categories: Vec<usize>,
    pub end_points: Vec<[f64; 3]>,
    pub modes: Vec<Option<usize>>,
}

impl CodeBank {
    pub fn new(
        codes: Vec<Vec<f64>>,
        categories: Vec<usize>,
        end_points: Vec<[f64; 3]>,
        modes: Vec<Option<usize>>,
    ) -> Result<Self> {
        let n = codes.len();
        if categories.len() != n || end_points.len() != n || modes.len() != n {
            return Err(Error::Data("code bank columns differ in length".into()));
        }
        let d = codes.first().map_or(0, Vec::len);
        if codes.iter().any(|c| c.len() != d || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data("codes must be finite and share one dimension".into()));
        }
        Ok(Self {
            codes,
            categories,
            end_points,
            modes,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }

    pub fn num_categories(&self) -> usize {
        self.categories.iter().max().map_or(0, |c| c + 1)
    }

    /// Bank row indices of one category.
    pub fn indices(&self, category: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.categories[i] == category).collect()
    }

    pub fn category_codes(&self, category: usize) -> Vec<Vec<f64>> {
        self.indices(category).into_iter().map(|i| self.codes[i].clone()).collect()
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut man = Manifest::new();
        man.set("version", CATALOG_VERSION);
        man.set("kind", "code-bank");
        man.set("count", self.len());
        man.set("dim", self.dim());
        man.set("categories", join(&self.categories));
        man.set(
            "modes",
            self.modes
                .iter()
                .map(|m| m.map_or("-".to_string(), |m| m.to_string()))
                .collect::<Vec<_>>()
                .join(","),
        );
        let mut values = Vec::with_capacity(self.len() * (self.dim() + 3));
        for (c, e) in self.codes.iter().zip(&self.end_points) {
            values.extend_from_slice(c);
            values.extend_from_slice(e);
        }
        archive::write_archive(dir, stem, &man, &values)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (man, values) = archive::read_archive(dir, stem)?;
        man.check_version(CATALOG_VERSION)?;
        let n: usize = man.parse("count")?;
        let d: usize = man.parse("dim")?;
        if values.len() != n * (d + 3) {
            return Err(Error::Data(format!("code bank payload holds {} values, expected {}", values.len(), n * (d + 3))));
        }
        let categories: Vec<usize> = man.parse_list("categories")?;
        let modes = man
            .parse_list::<String>("modes")?
            .into_iter()
            .map(|m| match m.as_str() {
                "-" => Ok(None),
                s => s.parse().map(Some).map_err(|_| Error::Data(format!("invalid mode `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut codes = Vec::with_capacity(n);
        let mut end_points = Vec::with_capacity(n);
        for row in values.chunks_exact(d + 3) {
            codes.push(row[..d].to_vec());
            end_points.push([row[d], row[d + 1], row[d + 2]]);
        }
        Self::new(codes, categories, end_points, modes)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Discovered modes of one category.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryModes {
    pub name: String,
    pub selection: Selection,
    /// Bank indices of this category's codes, aligned with the mixture's
    /// assignment.
    pub members: Vec<usize>,
}

impl CategoryModes {
    pub fn gmm(&self) -> &GmmModel {
        &self.selection.model
    }

    /// Number of surviving modes.
    pub fn modes(&self) -> usize {
        self.gmm().k()
    }

    /// Fraction of the category's codes assigned to each surviving mode.
    pub fn membership_weights(&self) -> Vec<f64> {
        let counts = self.gmm().member_counts();
        let n: usize = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / n as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeCatalog {
    pub categories: Vec<CategoryModes>,
}

impl ModeCatalog {
    /// Run the adaptive mode search for every category of `bank`.
    pub fn discover(bank: &CodeBank, names: &[String], seed: u64, opts: &SelectKOptions) -> Result<Self> {
        if names.len() < bank.num_categories() {
            return Err(Error::Data("fewer category names than categories in the code bank".into()));
        }
        let categories = names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let members = bank.indices(c);
                let codes: Vec<Vec<f64>> = members.iter().map(|&i| bank.codes[i].clone()).collect();
                let selection = select_k(&codes, seed.wrapping_add(c as u64), opts)
                    .map_err(|e| Error::Data(format!("category `{name}`: {e}")))?;
                Ok(CategoryModes {
                    name: name.clone(),
                    selection,
                    members,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { categories })
    }

    pub fn category(&self, c: usize) -> Result<&CategoryModes> {
        self.categories.get(c).ok_or_else(|| Error::Unknown {
            what: "category",
            name: c.to_string(),
        })
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut man = Manifest::new();
        man.set("version", CATALOG_VERSION);
        man.set("kind", "mode-catalog");
        man.set("categories", self.categories.len());
        let mut values = Vec::new();
        for (i, c) in self.categories.iter().enumerate() {
            let s = &c.selection;
            let g = &s.model;
            man.set(&format!("c{i}.name"), &c.name);
            man.set(&format!("c{i}.k"), s.k);
            man.set(
                &format!("c{i}.scores"),
                s.scores.iter().map(|(k, v)| format!("{k}:{v:e}")).collect::<Vec<_>>().join(","),
            );
            man.set(
                &format!("c{i}.dropped"),
                s.dropped.iter().map(|(k, n)| format!("{k}:{n}")).collect::<Vec<_>>().join(","),
            );
            man.set(&format!("c{i}.components"), g.k());
            man.set(&format!("c{i}.dim"), g.components.first().map_or(0, Gaussian::dim));
            man.set(&format!("c{i}.members"), join(&c.members));
            man.set(&format!("c{i}.assignment"), join(&g.assignment));
            man.set(
                &format!("c{i}.log_likelihoods"),
                g.log_likelihoods.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","),
            );
            for (w, comp) in g.weights.iter().zip(&g.components) {
                values.push(*w);
                values.extend(comp.mean.iter());
                values.extend(comp.cov.iter());
            }
        }
        archive::write_archive(dir, "catalog", &man, &values)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (man, values) = archive::read_archive(dir, "catalog")?;
        man.check_version(CATALOG_VERSION)?;
        if man.require("kind")? != "mode-catalog" {
            return Err(Error::Data("not a mode catalog".into()));
        }
        let n: usize = man.parse("categories")?;
        let mut offset = 0;
        let mut categories = Vec::with_capacity(n);
        for i in 0..n {
            let pairs = |key: &str| -> Result<Vec<(String, String)>> {
                let raw = man.require(key)?;
                if raw.is_empty() {
                    return Ok(Vec::new());
                }
                raw.split(',')
                    .map(|p| {
                        p.split_once(':')
                            .map(|(a, b)| (a.to_string(), b.to_string()))
                            .ok_or_else(|| Error::Data(format!("malformed entry `{p}` in `{key}`")))
                    })
                    .collect()
            };
            let bad = |key: &str| Error::Data(format!("malformed value in `{key}`"));
            let scores = pairs(&format!("c{i}.scores"))?
                .into_iter()
                .map(|(k, v)| Ok((k.parse().map_err(|_| bad("scores"))?, v.parse().map_err(|_| bad("scores"))?)))
                .collect::<Result<Vec<(usize, f64)>>>()?;
            let dropped = pairs(&format!("c{i}.dropped"))?
                .into_iter()
                .map(|(k, v)| Ok((k.parse().map_err(|_| bad("dropped"))?, v.parse().map_err(|_| bad("dropped"))?)))
                .collect::<Result<Vec<(usize, usize)>>>()?;
            let k: usize = man.parse(&format!("c{i}.components"))?;
            let d: usize = man.parse(&format!("c{i}.dim"))?;
            let per = 1 + d + d * d;
            let Some(block) = values.get(offset..offset + k * per) else {
                return Err(Error::Data("catalog payload is too short".into()));
            };
            offset += k * per;
            let mut weights = Vec::with_capacity(k);
            let mut components = Vec::with_capacity(k);
            for row in block.chunks_exact(per) {
                weights.push(row[0]);
                components.push(Gaussian::new(
                    DVector::from_column_slice(&row[1..1 + d]),
                    DMatrix::from_column_slice(d, d, &row[1 + d..]),
                )?);
            }
            let assignment: Vec<usize> = man.parse_list(&format!("c{i}.assignment"))?;
            if assignment.iter().any(|&a| a >= k) {
                return Err(Error::Data("catalog assignment refers to a missing component".into()));
            }
            categories.push(CategoryModes {
                name: man.require(&format!("c{i}.name"))?.to_string(),
                selection: Selection {
                    k: man.parse(&format!("c{i}.k"))?,
                    scores,
                    model: GmmModel {
                        weights,
                        components,
                        assignment,
                        log_likelihoods: man.parse_list(&format!("c{i}.log_likelihoods"))?,
                    },
                    dropped,
                },
                members: man.parse_list(&format!("c{i}.members"))?,
            });
        }
        if offset != values.len() {
            return Err(Error::Data("catalog payload has trailing values".into()));
        }
        Ok(Self { categories })
    }
}

fn draw_index(weights: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Config("mode weights must be non-negative with a positive sum".into()));
    }
    let mut u = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(weights.iter().rposition(|&w| w > 0.0).expect("positive sum"))
}

/// Draw a code component-first from the category's mixture, using the
/// membership fractions unless `weights` overrides them.
pub fn sample_mode_preserving(
    catalog: &ModeCatalog,
    category: usize,
    weights: Option<&[f64]>,
    rng: &mut impl Rng,
) -> Result<(usize, LatentCode)> {
    let cm = catalog.category(category)?;
    let default;
    let w = match weights {
        Some(w) => {
            if w.len() != cm.modes() {
                return Err(Error::Config(format!(
                    "{} mode weights given for {} modes",
                    w.len(),
                    cm.modes()
                )));
            }
            w
        }
        None => {
            default = cm.membership_weights();
            &default
        }
    };
    let k = draw_index(w, rng)?;
    Ok((k, LatentCode(cm.gmm().components[k].sample(rng))))
}

/// Draw a code from a specific mode.
pub fn sample_mode(catalog: &ModeCatalog, category: usize, mode: usize, rng: &mut impl Rng) -> Result<LatentCode> {
    let cm = catalog.category(category)?;
    let g = cm.gmm().components.get(mode).ok_or_else(|| Error::Unknown {
        what: "mode",
        name: mode.to_string(),
    })?;
    Ok(LatentCode(g.sample(rng)))
}

/// One full-covariance Gaussian per category.
#[derive(Clone, Debug, PartialEq)]
pub struct ConventionalSampler {
    pub gaussians: Vec<Gaussian>,
}

impl ConventionalSampler {
    pub fn fit(bank: &CodeBank) -> Result<Self> {
        let gaussians = (0..bank.num_categories())
            .map(|c| Gaussian::fit(&bank.category_codes(c)))
            .collect::<Result<_>>()?;
        Ok(Self { gaussians })
    }

    pub fn sample(&self, category: usize, rng: &mut impl Rng) -> Result<LatentCode> {
        let g = self.gaussians.get(category).ok_or_else(|| Error::Unknown {
            what: "category",
            name: category.to_string(),
        })?;
        Ok(LatentCode(g.sample(rng)))
    }
}

pub fn sample_conventional(bank: &CodeBank, category: usize, rng: &mut impl Rng) -> Result<LatentCode> {
    let codes = bank.category_codes(category);
    if codes.is_empty() {
        return Err(Error::Unknown {
            what: "category",
            name: category.to_string(),
        });
    }
    Ok(LatentCode(Gaussian::fit(&codes)?.sample(rng)))
}

/// `steps` codes on the segment from `a` to `b`, both ends included.
pub fn interpolate(a: &LatentCode, b: &LatentCode, steps: usize) -> Result<Vec<LatentCode>> {
    if steps < 2 {
        return Err(Error::Config("interpolation needs at least 2 steps".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape("codes differ in dimension".into()));
    }
    Ok((0..steps)
        .map(|i| {
            let l = i as f64 / (steps - 1) as f64;
            LatentCode(a.0.iter().zip(&b.0).map(|(x, y)| (1.0 - l) * x + l * y).collect())
        })
        .collect())
}

/// Distance-weighted k-nearest-neighbour regression from codes to end
/// points, restricted to one category.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnEndpointModel {
    pub k: usize,
    per_category: Vec<Vec<(Vec<f64>, [f64; 3])>>,
}

pub const KNN_K: usize = 5;

impl KnnEndpointModel {
    pub fn new(bank: &CodeBank, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let per_category = (0..bank.num_categories())
            .map(|c| {
                bank.indices(c)
                    .into_iter()
                    .map(|i| (bank.codes[i].clone(), bank.end_points[i]))
                    .collect()
            })
            .collect();
        Ok(Self { k, per_category })
    }

    pub fn predict(&self, z: &LatentCode, category: usize) -> Result<[f64; 3]> {
        let bank = self
            .per_category
            .get(category)
            .filter(|b| !b.is_empty())
            .ok_or_else(|| Error::Data(format!("no reference codes for category {category}")))?;
        let mut d: Vec<(f64, usize)> = bank
            .iter()
            .enumerate()
            .map(|(i, (c, _))| (c.iter().zip(&z.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for &(dist, i) in d.iter().take(self.k) {
            let w = 1.0 / (dist + 1e-8);
            for k in 0..3 {
                acc[k] += w * bank[i].1[k];
            }
            wsum += w;
        }
        Ok(acc.map(|v| v / wsum))
    }
}

/// Top-two principal axes of a code set.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub basis: [Vec<f64>; 2],
    /// Variance along each basis vector.
    pub explained: [f64; 2],
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn fit(codes: &[Vec<f64>]) -> Result<Self> {
        let n = codes.len();
        if n < 2 {
            return Err(Error::Data("PCA needs at least 2 codes".into()));
        }
        let d = codes[0].len();
        if d < 2 {
            return Err(Error::Data("PCA to 2-D needs codes of dimension ≥ 2".into()));
        }
        let mut mean = DVector::zeros(d);
        for c in codes {
            mean += DVector::from_column_slice(c);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for c in codes {
            let x = DVector::from_column_slice(c) - &mean;
            cov += &x * x.transpose();
        }
        cov /= (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let axis = |j: usize| {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        Ok(Self {
            mean: mean.as_slice().to_vec(),
            basis: [axis(order[0]), axis(order[1])],
            explained: [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]],
            eigenvalues: order.iter().map(|&j| eig.eigenvalues[j]).collect(),
        })
    }

    pub fn project(&self, code: &[f64]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (k, b) in self.basis.iter().enumerate() {
            p[k] = code.iter().zip(&self.mean).zip(b).map(|((x, m), w)| (x - m) * w).sum();
        }
        p
    }

    /// Map a 2-D point back to code space on the plane through the mean.
    pub fn lift(&self, point: [f64; 2]) -> LatentCode {
        LatentCode(
            (0..self.mean.len())
                .map(|i| self.mean[i] + point[0] * self.basis[0][i] + point[1] * self.basis[1][i])
                .collect(),
        )
    }

    /// Project a Gaussian: 2-D mean and 2×2 covariance `Bᵀ Σ B`.
    pub fn project_gaussian(&self, g: &Gaussian) -> ([f64; 2], [[f64; 2]; 2]) {
        let center = self.project(g.mean.as_slice());
        let mut cov = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let ba = DVector::from_column_slice(&self.basis[a]);
                let bb = DVector::from_column_slice(&self.basis[b]);
                cov[a][b] = ba.dot(&(&g.cov * bb));
            }
        }
        (center, cov)
    }
}

pub fn pca_project(codes: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, Pca)> {
    let pca = Pca::fit(codes)?;
    Ok((codes.iter().map(|c| pca.project(c)).collect(), pca))
}

/// Axes of the `scale`-σ ellipse of a 2×2 covariance: `(semi_major,
/// semi_minor, angle)` with the angle of the major axis in radians.
pub fn ellipse(cov: [[f64; 2]; 2], scale: f64) -> (f64, f64, f64) {
    let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let l1 = (mid + rad).max(0.0);
    let l2 = (mid - rad).max(0.0);
    let angle = 0.5 * (2.0 * b).atan2(a - c);
    (scale * l1.sqrt(), scale * l2.sqrt(), angle)
}
