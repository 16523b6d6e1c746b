//! Full-covariance Gaussian mixtures fitted by EM, silhouette scores and
//! the adaptive choice of the component count.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance ridge added in every M-step.
pub const COV_RIDGE: f64 = 1e-6;
pub const MAX_ITERS: usize = 200;
pub const TOLERANCE: f64 = 1e-6;
pub const MAX_RESEEDS: usize = 5;
/// Successful initializations compared per fit.
pub const N_INIT: usize = 5;
/// A component whose soft count falls below this is treated as collapsed.
const MIN_SOFT_COUNT: f64 = 1.5;

#[derive(Clone, Debug)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        Ok(Self { mean, cov, chol })
    }

    /// Maximum-likelihood fit (covariance divided by `N`) plus the ridge.
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Data("cannot fit a Gaussian to no points".into()));
        }
        let d = points[0].len();
        let n = points.len() as f64;
        let mut mean = DVector::zeros(d);
        for p in points {
            mean += DVector::from_column_slice(p);
        }
        mean /= n;
        let mut cov = DMatrix::identity(d, d) * COV_RIDGE;
        for p in points {
            let x = DVector::from_column_slice(p) - &mean;
            cov += (&x * x.transpose()) / n;
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let diff = DVector::from_column_slice(x) - &self.mean;
        let y = self.chol.l().solve_lower_triangular(&diff).expect("triangular factor is invertible");
        let log_det: f64 = 2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + y.norm_squared())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let e = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        (&self.mean + self.chol.l() * e).as_slice().to_vec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian>,
    /// Max-responsibility component of each training point.
    pub assignment: Vec<usize>,
    /// Log-likelihood after every E-step.
    pub log_likelihoods: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Per-component log of `π_k N(x | μ_k, Σ_k)`.
    pub fn weighted_log_pdfs(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, g)| w.ln() + g.log_pdf(x))
            .collect()
    }

    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let l = self.weighted_log_pdfs(x);
        let z = log_sum_exp(&l);
        l.iter().map(|v| (v - z).exp()).collect()
    }

    pub fn assign(&self, x: &[f64]) -> usize {
        argmax(&self.weighted_log_pdfs(x))
    }

    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|x| log_sum_exp(&self.weighted_log_pdfs(x))).sum()
    }

    /// Points per component under the stored assignment.
    pub fn member_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k()];
        for &a in &self.assignment {
            c[a] += 1;
        }
        c
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding: first center uniform, then proportional to the
/// squared distance to the nearest chosen center.
fn kmeanspp(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    centers
}

fn m_step(points: &[Vec<f64>], resp: &[Vec<f64>], k: usize) -> Result<(Vec<f64>, Vec<Gaussian>, Vec<f64>)> {
    let n = points.len();
    let d = points[0].len();
    let mut counts = vec![0.0; k];
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        counts[j] = nk;
        let mut mean = DVector::zeros(d);
        if nk > 0.0 {
            for (p, r) in points.iter().zip(resp) {
                mean += DVector::from_column_slice(p) * r[j];
            }
            mean /= nk;
        }
        let mut cov = DMatrix::identity(d, d) * COV_RIDGE;
        if nk > 0.0 {
            for (p, r) in points.iter().zip(resp) {
                let x = DVector::from_column_slice(p) - &mean;
                cov += (&x * x.transpose()) * (r[j] / nk);
            }
        }
        comps.push(Gaussian::new(mean, cov)?);
    }
    let weights = counts.iter().map(|c| c / n as f64).collect();
    Ok((weights, comps, counts))
}

enum Attempt {
    Done(GmmModel),
    Degenerate,
}

fn fit_once(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Result<Attempt> {
    let centers = kmeanspp(points, k, rng);
    let mut resp: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let dists: Vec<f64> = centers.iter().map(|&c| -sq_dist(p, &points[c])).collect();
            let mut r = vec![0.0; k];
            r[argmax(&dists)] = 1.0;
            r
        })
        .collect();
    let mut lls = Vec::new();
    let mut model = None;
    for _ in 0..MAX_ITERS {
        let (weights, components, counts) = m_step(points, &resp, k)?;
        if counts.iter().any(|&c| c < MIN_SOFT_COUNT) {
            return Ok(Attempt::Degenerate);
        }
        let m = GmmModel {
            weights,
            components,
            assignment: Vec::new(),
            log_likelihoods: Vec::new(),
        };
        let mut ll = 0.0;
        for (p, r) in points.iter().zip(resp.iter_mut()) {
            let l = m.weighted_log_pdfs(p);
            let z = log_sum_exp(&l);
            ll += z;
            for (ri, li) in r.iter_mut().zip(&l) {
                *ri = (li - z).exp();
            }
        }
        if !ll.is_finite() {
            return Ok(Attempt::Degenerate);
        }
        let converged = lls.last().is_some_and(|prev: &f64| (ll - prev).abs() < TOLERANCE);
        lls.push(ll);
        model = Some(m);
        if converged {
            break;
        }
    }
    let mut m = model.expect("at least one iteration");
    m.assignment = points.iter().map(|p| m.assign(p)).collect();
    m.log_likelihoods = lls;
    Ok(Attempt::Done(m))
}

/// EM fit from [`N_INIT`] k-means++ initializations, keeping the one with
/// the highest final log-likelihood. Initializations whose components
/// collapse are redrawn, at most [`MAX_RESEEDS`] times in total.
pub fn fit_gmm(points: &[Vec<f64>], k: usize, seed: u64) -> Result<GmmModel> {
    if k == 0 || points.len() < k {
        return Err(Error::Data(format!("cannot fit {k} components to {} points", points.len())));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("points must be finite and share a positive dimension".into()));
    }
    let mut best: Option<GmmModel> = None;
    let mut done = 0;
    let mut failures = 0;
    let mut stream = 0u64;
    while done < N_INIT && failures <= MAX_RESEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        stream += 1;
        match fit_once(points, k, &mut rng)? {
            Attempt::Done(m) => {
                done += 1;
                let ll = *m.log_likelihoods.last().expect("at least one iteration");
                if best.as_ref().is_none_or(|b| ll > *b.log_likelihoods.last().expect("non-empty")) {
                    best = Some(m);
                }
            }
            Attempt::Degenerate => {
                failures += 1;
                log::debug!("GMM with {k} components collapsed on initialization {stream}");
            }
        }
    }
    best.ok_or_else(|| {
        Error::Numerical(format!(
            "GMM with {k} components collapsed after {MAX_RESEEDS} reseeds"
        ))
    })
}

/// Mean silhouette with Euclidean distances. Points in singleton clusters
/// score 0; fewer than two non-empty clusters score 0 overall.
pub fn silhouette(points: &[Vec<f64>], assignment: &[usize]) -> Result<f64> {
    let n = points.len();
    if n != assignment.len() || n == 0 {
        return Err(Error::Data("silhouette needs one label per point".into()));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Ok(0.0);
    }
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sq_dist(&points[i], &points[j]).sqrt()).collect())
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let own = assignment[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            sums[assignment[j]] += dist[i][j];
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectKOptions {
    pub k_min: usize,
    pub k_max: usize,
    pub ratio: f64,
    pub min_members: usize,
}

impl Default for SelectKOptions {
    fn default() -> Self {
        Self {
            k_min: 3,
            k_max: 11,
            ratio: 0.95,
            min_members: 10,
        }
    }
}

/// Outcome of the adaptive component search for one category.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Chosen component count, or 1 when no count in range could be fitted.
    pub k: usize,
    /// `(K, silhouette)` for every searched K; a failed fit scores −1.
    pub scores: Vec<(usize, f64)>,
    /// Mixture restricted to surviving components, weights renormalized
    /// and points reassigned among the survivors.
    pub model: GmmModel,
    /// `(component index in the K-component fit, member count)` of every
    /// dropped component.
    pub dropped: Vec<(usize, usize)>,
}

/// First K in the search range whose silhouette exceeds `ratio` times the
/// next one; otherwise the best-scoring K.
pub fn choose_k(scores: &[(usize, f64)], ratio: f64) -> Option<usize> {
    for w in scores.windows(2) {
        if w[0].1 > ratio * w[1].1 {
            return Some(w[0].0);
        }
    }
    scores
        .iter()
        .fold(None::<(usize, f64)>, |best, &(k, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((k, s)),
        })
        .map(|(k, _)| k)
}

pub fn select_k(points: &[Vec<f64>], seed: u64, opts: &SelectKOptions) -> Result<Selection> {
    let n = points.len();
    let k_max = opts.k_max.min(n.saturating_sub(1));
    if k_max < opts.k_min {
        return Err(Error::Data(format!(
            "{n} codes are too few to search {}..={} components",
            opts.k_min, opts.k_max
        )));
    }
    let mut scores = Vec::new();
    let mut fits = Vec::new();
    for k in opts.k_min..=k_max {
        match fit_gmm(points, k, seed.wrapping_add(k as u64 * 0x9e37_79b9)) {
            Ok(m) => {
                scores.push((k, silhouette(points, &m.assignment)?));
                fits.push(Some(m));
            }
            Err(Error::Numerical(msg)) => {
                log::warn!("K={k}: {msg}; scoring −1");
                scores.push((k, -1.0));
                fits.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let k = choose_k(&scores, opts.ratio).expect("non-empty search range");
    let Some(full) = fits[k - opts.k_min].take() else {
        log::warn!("no component count in {}..={k_max} could be fitted; using one Gaussian", opts.k_min);
        return Ok(Selection {
            k: 1,
            scores,
            model: single_component(points)?,
            dropped: Vec::new(),
        });
    };
    let (model, dropped) = prune(points, &full, opts.min_members)?;
    Ok(Selection {
        k,
        scores,
        model,
        dropped,
    })
}

/// One Gaussian over all points, for code sets no mixture can be fitted to.
fn single_component(points: &[Vec<f64>]) -> Result<GmmModel> {
    let g = Gaussian::fit(points)?;
    let ll = points.iter().map(|p| g.log_pdf(p)).sum();
    Ok(GmmModel {
        weights: vec![1.0],
        components: vec![g],
        assignment: vec![0; points.len()],
        log_likelihoods: vec![ll],
    })
}

/// Drop components with fewer than `min_members` assigned points (keeping
/// the largest if none qualifies), renormalize and reassign.
pub fn prune(points: &[Vec<f64>], full: &GmmModel, min_members: usize) -> Result<(GmmModel, Vec<(usize, usize)>)> {
    let counts = full.member_counts();
    let mut keep: Vec<usize> = (0..full.k()).filter(|&j| counts[j] >= min_members).collect();
    if keep.is_empty() {
        keep.push(argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>()));
    }
    let dropped = (0..full.k())
        .filter(|j| !keep.contains(j))
        .map(|j| (j, counts[j]))
        .collect();
    let total: f64 = keep.iter().map(|&j| full.weights[j]).sum();
    let mut model = GmmModel {
        weights: keep.iter().map(|&j| full.weights[j] / total).collect(),
        components: keep.iter().map(|&j| full.components[j].clone()).collect(),
        assignment: Vec::new(),
        log_likelihoods: full.log_likelihoods.clone(),
    };
    model.assignment = points.iter().map(|p| model.assign(p)).collect();
    Ok((model, dropped))
}
