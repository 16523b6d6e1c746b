//! Training objective: contrastive latent loss with a variance prior,
//! trajectory velocity loss, motion reconstruction and trajectory/motion
//! consistency, summed with unit weights.

use mogen_tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Motion, Trajectory};
use crate::model::{Forward, LatentPosterior};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    /// Margin α for pairs from different categories.
    pub margin: f64,
    /// Target posterior variance σ².
    pub target_var: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 5.0,
            target_var: 0.05,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.target_var > 0.0) {
            return Err(Error::Config("contrastive margin and target variance must be positive".into()));
        }
        Ok(())
    }
}

/// Terms switched off for ablation studies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Drop the mean-distance part of the contrastive loss; the variance
    /// prior stays.
    pub no_es: bool,
    pub no_cons: bool,
    /// Drop both the velocity loss and the consistency loss.
    pub no_traj: bool,
    /// Train without feeding the end point to the trajectory generator.
    pub no_endpoint: bool,
}

impl AblationFlags {
    pub fn label(&self) -> &'static str {
        match (self.no_es, self.no_cons, self.no_traj, self.no_endpoint) {
            (false, false, false, false) => "full",
            (true, false, false, false) => "no-es",
            (false, true, false, false) => "no-cons",
            (false, false, true, false) => "no-traj",
            (false, false, false, true) => "no-endpoint",
            _ => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_es: f64,
    pub l_r: f64,
    pub l_mre: f64,
    pub l_cons: f64,
    pub total: f64,
}

/// `Σ_i [−ln σ²_i + σ²_i / σ²_target]` over one posterior.
pub fn variance_prior(post: &LatentPosterior, target_var: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &v in &post.var {
        if !(v > 0.0) {
            return Err(Error::Numerical(format!("posterior variance {v} is not positive")));
        }
        acc += -v.ln() + v / target_var;
    }
    Ok(acc)
}

/// Contrastive latent loss for one pair split into the mean-distance term
/// and the variance prior of both members.
pub fn l_es_parts(
    a: &LatentPosterior,
    ca: usize,
    b: &LatentPosterior,
    cb: usize,
    cfg: &ContrastiveConfig,
) -> Result<(f64, f64)> {
    if a.mean.len() != b.mean.len() || a.var.len() != a.mean.len() || b.var.len() != b.mean.len() {
        return Err(Error::Shape("posteriors differ in dimension".into()));
    }
    let sq: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let means = if ca == cb {
        sq
    } else {
        (cfg.margin - sq.sqrt()).max(0.0).powi(2)
    };
    let prior = variance_prior(a, cfg.target_var)? + variance_prior(b, cfg.target_var)?;
    Ok((means, prior))
}

pub fn l_es(a: &LatentPosterior, ca: usize, b: &LatentPosterior, cb: usize, cfg: &ContrastiveConfig) -> Result<f64> {
    let (m, p) = l_es_parts(a, ca, b, cb, cfg)?;
    Ok(m + p)
}

/// `Σ_t ‖v̂_t − (r_t − r_{t−1})‖²` with `r_0 = 0`.
pub fn l_r(pred_velocities: &[[f64; 3]], truth: &Trajectory) -> Result<f64> {
    if pred_velocities.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} velocities for a trajectory of {} points",
            pred_velocities.len(),
            truth.len()
        )));
    }
    Ok(pred_velocities
        .iter()
        .zip(truth.velocities())
        .map(|(p, v)| (0..3).map(|k| (p[k] - v[k]).powi(2)).sum::<f64>())
        .sum())
}

/// `Σ_t ‖m_t − m̂_t‖²` over all joints.
pub fn l_mre(pred: &Motion, truth: &Motion) -> Result<f64> {
    if pred.frames() != truth.frames() || pred.joints() != truth.joints() {
        return Err(Error::Shape("motions differ in shape".into()));
    }
    Ok(pred
        .positions()
        .iter()
        .zip(truth.positions())
        .map(|(a, b)| (a - b).powi(2))
        .sum())
}

/// `Σ_t ‖r̂_t − m̂_{root,t}‖²`.
pub fn l_cons(generated: &Trajectory, root_track: &Trajectory) -> Result<f64> {
    if generated.len() != root_track.len() {
        return Err(Error::Shape("trajectories differ in length".into()));
    }
    Ok(generated
        .points
        .iter()
        .zip(&root_track.points)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
        .sum())
}

/// Unit-weighted sum of the enabled terms. Disabled terms are reported as
/// zero.
pub fn total_loss(l_es: f64, l_r: f64, l_mre: f64, l_cons: f64, flags: &AblationFlags) -> LossBreakdown {
    let l_r = if flags.no_traj { 0.0 } else { l_r };
    let l_cons = if flags.no_traj || flags.no_cons { 0.0 } else { l_cons };
    LossBreakdown {
        l_es,
        l_r,
        l_mre,
        l_cons,
        total: l_es + l_r + l_mre + l_cons,
    }
}

/// Both sides of `Σ_i Σ_j ½‖μ_i − μ_j‖² = 2n Σ_i ½‖μ_i − μ̄‖²`.
pub fn spring_centering_lhs_rhs(mus: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = mus.len();
    if n == 0 {
        return Err(Error::Data("spring identity needs at least one code".into()));
    }
    let d = mus[0].len();
    if mus.iter().any(|m| m.len() != d) {
        return Err(Error::Shape("codes differ in dimension".into()));
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut lhs = 0.0;
    for a in mus {
        for b in mus {
            lhs += 0.5 * sq(a, b);
        }
    }
    let mut center = vec![0.0; d];
    for m in mus {
        for (c, v) in center.iter_mut().zip(m) {
            *c += v / n as f64;
        }
    }
    let rhs = 2.0 * n as f64 * mus.iter().map(|m| 0.5 * sq(m, &center)).sum::<f64>();
    Ok((lhs, rhs))
}

/// Ground truth for one batch of `P` pairs. Rows `0..P` are the first pair
/// members and rows `P..2P` the second ones; stacked tensors are time-major.
pub(crate) struct BatchTargets {
    pub pairs: usize,
    pub same_category: Vec<bool>,
    /// `T·B × 3` true per-step velocities.
    pub velocities: Tensor,
    /// `T·B × 3J` true poses.
    pub poses: Tensor,
}

/// Tape variables of the batch loss, each already divided into per-pair
/// units.
pub(crate) struct BatchLoss {
    pub total: Var,
    pub l_es: Var,
    pub l_r: Option<Var>,
    pub l_mre: Var,
    pub l_cons: Option<Var>,
}

/// Mean per-pair loss: `l_es` once per pair, the other terms summed over
/// the two pair members.
pub(crate) fn batch_loss(
    tape: &mut Tape,
    fwd: &Forward,
    targets: &BatchTargets,
    root: usize,
    cfg: &ContrastiveConfig,
    flags: &AblationFlags,
) -> Result<BatchLoss> {
    let p = targets.pairs;
    let per_pair = 1.0 / p as f64;

    // variance prior: Σ −logvar + exp(logvar)/σ²
    let var = tape.exp(fwd.logvar)?;
    let var = tape.scale(var, 1.0 / cfg.target_var)?;
    let prior = tape.sub(var, fwd.logvar)?;
    let mut l_es = tape.sum(prior)?;
    if !flags.no_es {
        let mu1 = tape.slice(fwd.mu, 0, 0, p)?;
        let mu2 = tape.slice(fwd.mu, 0, p, p)?;
        let d = tape.sub(mu1, mu2)?;
        let sq = tape.sq_norm_rows(d)?;
        let norm = tape.norm_rows(d)?;
        let gap = tape.scale(norm, -1.0)?;
        let gap = tape.add_scalar(gap, cfg.margin)?;
        let hinge = tape.relu(gap)?;
        let hinge = tape.square(hinge)?;
        let same: Vec<f64> = targets.same_category.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        let diff: Vec<f64> = same.iter().map(|s| 1.0 - s).collect();
        let same = tape.constant(Tensor::new(vec![p, 1], same)?);
        let diff = tape.constant(Tensor::new(vec![p, 1], diff)?);
        let pull = tape.hadamard(sq, same)?;
        let push = tape.hadamard(hinge, diff)?;
        let both = tape.add(pull, push)?;
        let means = tape.sum(both)?;
        l_es = tape.add(l_es, means)?;
    }
    let l_es = tape.scale(l_es, per_pair)?;

    let true_pose = tape.constant(targets.poses.clone());
    let d = tape.sub(fwd.poses, true_pose)?;
    let d = tape.square(d)?;
    let l_mre = tape.sum(d)?;
    let l_mre = tape.scale(l_mre, per_pair)?;

    let mut total = tape.add(l_es, l_mre)?;
    let mut l_r = None;
    let mut l_cons = None;
    if !flags.no_traj {
        let true_vel = tape.constant(targets.velocities.clone());
        let d = tape.sub(fwd.velocities, true_vel)?;
        let d = tape.square(d)?;
        let v = tape.sum(d)?;
        let v = tape.scale(v, per_pair)?;
        total = tape.add(total, v)?;
        l_r = Some(v);
        if !flags.no_cons {
            let root_track = tape.slice(fwd.poses, 1, root * 3, 3)?;
            let d = tape.sub(fwd.trajectory, root_track)?;
            let d = tape.square(d)?;
            let v = tape.sum(d)?;
            let v = tape.scale(v, per_pair)?;
            total = tape.add(total, v)?;
            l_cons = Some(v);
        }
    }
    Ok(BatchLoss {
        total,
        l_es,
        l_r,
        l_mre,
        l_cons,
    })
}
