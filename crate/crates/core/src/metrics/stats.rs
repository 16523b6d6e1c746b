//! Distribution-level motion statistics: pairwise distances, normalized
//! diversity ratios, feature-space Fréchet distance and endpoint error.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kinematics::Motion;

/// Frobenius distance between two equally shaped motions.
pub fn motion_distance(a: &Motion, b: &Motion) -> f64 {
    a.positions()
        .iter()
        .zip(b.positions())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Average pairwise distance over all ordered pairs `i ≠ j`.
pub fn apd(motions: &[Motion]) -> Result<f64> {
    let n = motions.len();
    if n < 2 {
        return Err(Error::Data(format!("APD needs at least 2 motions, got {n}")));
    }
    check_same_shape(motions)?;
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += motion_distance(&motions[i], &motions[j]);
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

fn check_same_shape(motions: &[Motion]) -> Result<()> {
    let Some(first) = motions.first() else {
        return Ok(());
    };
    let bad = motions
        .iter()
        .any(|m| m.frames() != first.frames() || m.joints() != first.joints());
    if bad {
        return Err(Error::Shape("motions in one set must share frames and joints".into()));
    }
    Ok(())
}

/// `100 · mean_c APD(model_c) / APD(real_c)`.
pub fn n_apd(model: &[Vec<Motion>], real: &[Vec<Motion>]) -> Result<f64> {
    Ok(100.0 * mean(&n_apd_per_category(model, real)?))
}

/// Per-category ratios `APD(model_c) / APD(real_c)`.
pub fn n_apd_per_category(model: &[Vec<Motion>], real: &[Vec<Motion>]) -> Result<Vec<f64>> {
    if model.len() != real.len() || model.is_empty() {
        return Err(Error::Data(format!(
            "n-APD needs matching non-empty category lists, got {} and {}",
            model.len(),
            real.len()
        )));
    }
    model
        .iter()
        .zip(real)
        .enumerate()
        .map(|(c, (m, r))| {
            let denom = apd(r)?;
            if denom <= 0.0 {
                return Err(Error::Data(format!("category {c}: real APD is zero")));
            }
            Ok(apd(m)? / denom)
        })
        .collect()
}

/// Size-weighted mean of per-group APDs.
pub fn mode_apd(groups: &[Vec<Motion>]) -> Result<f64> {
    let total: usize = groups.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Data("mode-APD of an empty category".into()));
    }
    let mut acc = 0.0;
    for (k, g) in groups.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        if g.len() < 2 {
            return Err(Error::Data(format!("mode {k} has a single member")));
        }
        acc += g.len() as f64 * apd(g)?;
    }
    Ok(acc / total as f64)
}

/// `100 · mean_c (APD(G_c) − mode-APD(G_c)) / APD(G_c)` where `groups[c]`
/// lists category `c`'s motions split by mode.
pub fn mode_homogeneity(groups: &[Vec<Vec<Motion>>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Data("mode homogeneity needs at least one category".into()));
    }
    let mut ratios = Vec::with_capacity(groups.len());
    for (c, modes) in groups.iter().enumerate() {
        let all: Vec<Motion> = modes.iter().flatten().cloned().collect();
        let whole = apd(&all)?;
        if whole <= 0.0 {
            return Err(Error::Data(format!("category {c}: APD is zero")));
        }
        ratios.push((whole - mode_apd(modes)?) / whole);
    }
    Ok(100.0 * mean(&ratios))
}

/// Mean squared distance between targets and final root positions.
pub fn dist_e(motions: &[Motion], targets: &[[f64; 3]]) -> Result<f64> {
    if motions.len() != targets.len() || motions.is_empty() {
        return Err(Error::Data(format!(
            "dist_e needs aligned non-empty lists, got {} motions and {} targets",
            motions.len(),
            targets.len()
        )));
    }
    let sum: f64 = motions
        .iter()
        .zip(targets)
        .map(|(m, t)| {
            let r = m.root_position(m.frames() - 1);
            (0..3).map(|k| (t[k] - r[k]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(sum / motions.len() as f64)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean and sample covariance of a set of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::Data(format!("feature statistics need at least 2 samples, got {n}")));
        }
        let f = features[0].len();
        if features.iter().any(|x| x.len() != f) {
            return Err(Error::Shape("feature vectors differ in length".into()));
        }
        let mut mean = DVector::zeros(f);
        for x in features {
            mean += DVector::from_column_slice(x);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(f, f);
        for x in features {
            let d = DVector::from_column_slice(x) - &mean;
            cov += &d * d.transpose();
        }
        cov /= (n - 1) as f64;
        Ok(Self { mean, cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

const PSD_TOL: f64 = 1e-8;

/// Symmetric PSD square root, rejecting eigenvalues below `−tol·scale`.
fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -PSD_TOL * scale) {
        return Err(Error::Numerical(format!("{what} is not positive semi-definite")));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`, with the trace of the product
/// root taken from the symmetric matrix `√Σ₁ Σ₂ √Σ₁`.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dims {} and {} differ", a.dim(), b.dim())));
    }
    let s1 = sqrt_psd(&a.cov, "first covariance")?;
    sqrt_psd(&b.cov, "second covariance")?;
    let inner = &s1 * &b.cov * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let d = &a.mean - &b.mean;
    let value = d.dot(&d) + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    let scale = 1.0 + a.cov.trace() + b.cov.trace() + d.dot(&d);
    if value < -PSD_TOL * scale {
        return Err(Error::Numerical(format!("FID evaluated to {value}")));
    }
    Ok(value.max(0.0))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean feature distance over `pairs` random pairs of distinct items. When
/// fewer distinct pairs exist than requested, every pair is used once.
pub fn mean_pair_distance(features: &[Vec<f64>], pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Data(format!("pair sampling needs at least 2 items, got {n}")));
    }
    let available = n * (n - 1) / 2;
    if available <= pairs {
        if available < pairs {
            log::warn!("only {available} distinct pairs available, {pairs} requested; using all");
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += euclid(&features[i], &features[j]);
            }
        }
        return Ok(sum / available as f64);
    }
    let mut sum = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        sum += euclid(&features[i], &features[j]);
    }
    Ok(sum / pairs as f64)
}

pub const DIVERSITY_PAIRS: usize = 200;
pub const MULTIMODALITY_PAIRS: usize = 20;

/// Mean distance between random feature pairs across all categories.
pub fn diversity(features: &[Vec<f64>], rng: &mut impl Rng) -> Result<f64> {
    mean_pair_distance(features, DIVERSITY_PAIRS, rng)
}

/// Within-category mean pair distance, averaged over categories.
pub fn multimodality(per_category: &[Vec<Vec<f64>>], rng: &mut impl Rng) -> Result<f64> {
    if per_category.is_empty() {
        return Err(Error::Data("multimodality needs at least one category".into()));
    }
    let v = per_category
        .iter()
        .map(|f| mean_pair_distance(f, MULTIMODALITY_PAIRS, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&v))
}
