//! The three networks: LMP encoder, trajectory generator and the motion
//! generator (trajectory encoder plus autoregressive pose decoder).
//!
//! Every forward path works on batches. Rows of a batch are independent
//! samples; time steps are unrolled on one [`Tape`].

mod checkpoint;
mod config;

pub use checkpoint::{CheckpointMeta, CHECKPOINT_VERSION};
pub use config::ModelConfig;

use mogen_tensor::nn::{LayerNorm, Linear, Lstm, LstmState, Prelu};
use mogen_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kinematics::{integrate_velocities, normalize_origin, Lmp, Motion, Trajectory};

/// Diagonal Gaussian posterior over latent codes.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `z = μ + √σ² ⊙ ε` with `ε ~ N(0, I)`.
pub fn reparameterize(post: &LatentPosterior, rng: &mut impl Rng) -> LatentCode {
    LatentCode(
        post.mean
            .iter()
            .zip(&post.var)
            .map(|(m, v)| {
                let e: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * e
            })
            .collect(),
    )
}

/// One generation request.
#[derive(Clone, Debug, PartialEq)]
pub struct GenRequest {
    pub category: usize,
    pub code: LatentCode,
    pub endpoint: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub motion: Motion,
    /// Trajectory predicted by the trajectory generator.
    pub trajectory: Trajectory,
    pub velocities: Vec<[f64; 3]>,
}

struct Mlp {
    layers: Vec<(Linear, Prelu)>,
}

impl Mlp {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        for (fc, act) in &self.layers {
            let y = fc.forward(tape, store, x)?;
            x = act.forward(tape, store, y)?;
        }
        Ok(x)
    }
}

pub(crate) struct Encoder {
    lstm: Lstm,
    fc: [(Linear, LayerNorm, Prelu); 2],
    out: Linear,
}

pub(crate) struct TrajectoryGenerator {
    embed_in: Linear,
    embed_act: Prelu,
    embed_out: Linear,
    lstm: Lstm,
    feature: Mlp,
    out: Linear,
}

pub(crate) struct MotionGenerator {
    traj_embed: Linear,
    traj_act: Prelu,
    traj_lstm: Lstm,
    embed: Linear,
    embed_act: Prelu,
    lstm: Lstm,
    out: Linear,
    start_pose: ParamId,
}

pub struct MotionModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub(crate) encoder: Encoder,
    pub(crate) trajectory: TrajectoryGenerator,
    pub(crate) motion: MotionGenerator,
}

impl std::fmt::Debug for MotionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MotionModel")
            .field("config", &self.config)
            .field("parameters", &self.store.numel())
            .finish()
    }
}

impl Clone for MotionModel {
    fn clone(&self) -> Self {
        let mut m = Self::build(self.config.clone(), 0).expect("config already validated");
        m.store = self.store.clone();
        m
    }
}

/// Tape variables produced by one batched forward pass.
pub(crate) struct Forward {
    pub mu: Var,
    pub logvar: Var,
    /// Stacked velocities, `T·B × 3`, time-major.
    pub velocities: Var,
    /// Stacked trajectory points, `T·B × 3`.
    pub trajectory: Var,
    /// Stacked poses, `T·B × 3J`.
    pub poses: Var,
}

/// Stack per-sample rows of frame `t` for every `t`, time-major.
pub(crate) fn time_major(frames: usize, width: usize, rows: &[&[f64]]) -> Tensor {
    let b = rows.len();
    let mut data = Vec::with_capacity(frames * b * width);
    for t in 0..frames {
        for r in rows {
            data.extend_from_slice(&r[t * width..(t + 1) * width]);
        }
    }
    Tensor::new(vec![frames * b, width], data).expect("sizes agree")
}

impl MotionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Self::build(config, seed)
    }

    fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let c = &config;
        let pose = c.pose_dim();
        let d = c.latent;

        let lstm = Lstm::new(s, "enc.lstm", pose, c.enc_hidden, 1, rng)?;
        let fc0 = (
            Linear::new(s, "enc.fc0", c.enc_hidden, c.enc_feature, rng)?,
            LayerNorm::new(s, "enc.ln0", c.enc_feature)?,
            Prelu::new(s, "enc.act0")?,
        );
        let fc1 = (
            Linear::new(s, "enc.fc1", c.enc_feature, c.enc_feature, rng)?,
            LayerNorm::new(s, "enc.ln1", c.enc_feature)?,
            Prelu::new(s, "enc.act1")?,
        );
        let out = Linear::new(s, "enc.out", c.enc_feature, 2 * d, rng)?;
        let encoder = Encoder {
            lstm,
            fc: [fc0, fc1],
            out,
        };

        let cond = c.categories + d + if c.endpoint_conditioning { 3 } else { 0 };
        let trajectory = TrajectoryGenerator {
            embed_in: Linear::new(s, "traj.embed0", cond, c.traj_embed, rng)?,
            embed_act: Prelu::new(s, "traj.embed_act")?,
            embed_out: Linear::new(s, "traj.embed1", c.traj_embed, c.traj_embed, rng)?,
            lstm: Lstm::new(s, "traj.lstm", c.traj_embed, c.traj_hidden, c.layers, rng)?,
            feature: Mlp {
                layers: (0..3)
                    .map(|k| {
                        let inp = if k == 0 { c.traj_hidden } else { c.traj_feature };
                        Ok((
                            Linear::new(s, &format!("traj.fc{k}"), inp, c.traj_feature, rng)?,
                            Prelu::new(s, &format!("traj.act{k}"))?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            },
            out: Linear::new(s, "traj.out", c.traj_feature, 3, rng)?,
        };

        let motion = MotionGenerator {
            traj_embed: Linear::new(s, "motion.traj_embed", 3, c.motion_embed, rng)?,
            traj_act: Prelu::new(s, "motion.traj_act")?,
            traj_lstm: Lstm::new(s, "motion.traj_lstm", c.motion_embed, c.motion_hidden, c.layers, rng)?,
            embed: Linear::new(s, "motion.embed", pose + c.categories + d + 3, c.motion_embed, rng)?,
            embed_act: Prelu::new(s, "motion.embed_act")?,
            lstm: Lstm::new(s, "motion.lstm", c.motion_embed, c.motion_hidden, c.layers, rng)?,
            out: Linear::new(s, "motion.out", c.motion_hidden, pose, rng)?,
            start_pose: s.add("motion.start_pose", Tensor::zeros(&[pose]))?,
        };
        Ok(Self {
            config,
            store,
            encoder,
            trajectory,
            motion,
        })
    }

    pub(crate) fn onehots(&self, categories: &[usize]) -> Result<Tensor> {
        let c = self.config.categories;
        let mut data = vec![0.0; categories.len() * c];
        for (i, &k) in categories.iter().enumerate() {
            if k >= c {
                return Err(Error::Unknown {
                    what: "category",
                    name: k.to_string(),
                });
            }
            data[i * c + k] = 1.0;
        }
        Ok(Tensor::new(vec![categories.len(), c], data)?)
    }

    fn check_lmp(&self, lmp: &Lmp) -> Result<()> {
        let c = &self.config;
        if lmp.frames != c.frames || lmp.joints != c.joints || lmp.offsets.len() != c.frames * c.pose_dim() {
            return Err(Error::Shape(format!(
                "LMP is {}×{}, model expects {}×{}",
                lmp.frames, lmp.joints, c.frames, c.joints
            )));
        }
        Ok(())
    }

    /// Encoder forward; returns `(μ, logvar)`, each `B × D`.
    pub(crate) fn encode_tape(&self, tape: &mut Tape, lmps: &[&Lmp]) -> Result<(Var, Var)> {
        for l in lmps {
            self.check_lmp(l)?;
        }
        let c = &self.config;
        let st = &self.store;
        let e = &self.encoder;
        let b = lmps.len();
        let rows: Vec<&[f64]> = lmps.iter().map(|l| l.offsets.as_slice()).collect();
        let x = time_major(c.frames, c.pose_dim(), &rows);
        let x = tape.constant(x);
        let mut state = e.lstm.zero_state(tape, b);
        let mut h = state[0].h;
        for t in 0..c.frames {
            let xt = tape.slice(x, 0, t * b, b)?;
            h = e.lstm.step(tape, st, xt, &mut state)?;
        }
        for (fc, ln, act) in &e.fc {
            let y = fc.forward(tape, st, h)?;
            let y = ln.forward(tape, st, y)?;
            h = act.forward(tape, st, y)?;
        }
        let out = e.out.forward(tape, st, h)?;
        let mu = tape.slice(out, 1, 0, c.latent)?;
        let logvar = tape.slice(out, 1, c.latent, c.latent)?;
        Ok((mu, logvar))
    }

    /// Trajectory generator forward. `endpoints` must be present iff the
    /// model is endpoint-conditioned. Returns stacked `(velocities, points)`.
    pub(crate) fn trajectory_tape(
        &self,
        tape: &mut Tape,
        onehot: Var,
        z: Var,
        endpoints: Option<Var>,
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        let st = &self.store;
        let g = &self.trajectory;
        let b = tape.shape(z)[0];
        let cond = match (endpoints, c.endpoint_conditioning) {
            (Some(e), true) => tape.concat(&[onehot, z, e], 1)?,
            (None, false) => tape.concat(&[onehot, z], 1)?,
            (Some(_), false) => return Err(Error::EndpointUnsupported),
            (None, true) => return Err(Error::EndpointRequired),
        };
        let e = g.embed_in.forward(tape, st, cond)?;
        let e = g.embed_act.forward(tape, st, e)?;
        let e = g.embed_out.forward(tape, st, e)?;
        let mut state = g.lstm.zero_state(tape, b);
        let mut hs = Vec::with_capacity(c.frames);
        for _ in 0..c.frames {
            hs.push(g.lstm.step(tape, st, e, &mut state)?);
        }
        let h = tape.concat(&hs, 0)?;
        let f = g.feature.forward(tape, st, h)?;
        let vel = g.out.forward(tape, st, f)?;
        let mut acc = tape.slice(vel, 0, 0, b)?;
        let mut points = vec![acc];
        for t in 1..c.frames {
            let v = tape.slice(vel, 0, t * b, b)?;
            acc = tape.add(acc, v)?;
            points.push(acc);
        }
        let traj = tape.concat(&points, 0)?;
        Ok((vel, traj))
    }

    /// Motion generator forward over a stacked trajectory `T·B × 3`.
    ///
    /// `teacher` holds stacked ground-truth poses and a per-row, per-frame
    /// mask; a set mask entry at frame `t` feeds the true pose `m_{t−1}`
    /// as the decoder's previous pose at step `t`.
    pub(crate) fn motion_tape(
        &self,
        tape: &mut Tape,
        onehot: Var,
        z: Var,
        trajectory: Var,
        teacher: Option<(&Tensor, &[Vec<bool>])>,
    ) -> Result<Var> {
        let c = &self.config;
        let st = &self.store;
        let g = &self.motion;
        let b = tape.shape(z)[0];
        let pose = c.pose_dim();

        let e = g.traj_embed.forward(tape, st, trajectory)?;
        let e = g.traj_act.forward(tape, st, e)?;
        let mut state: Vec<LstmState> = g.traj_lstm.zero_state(tape, b);
        for t in 0..c.frames {
            let et = tape.slice(e, 0, t * b, b)?;
            g.traj_lstm.step(tape, st, et, &mut state)?;
        }

        let zeros = tape.constant(Tensor::zeros(&[b, pose]));
        let start = tape.param(st, g.start_pose);
        let mut prev = tape.add_row(zeros, start)?;
        let mut outputs = Vec::with_capacity(c.frames);
        for t in 0..c.frames {
            if t > 0 {
                if let Some((truth, masks)) = teacher {
                    prev = self.teacher_mix(tape, prev, truth, masks, t)?;
                }
            }
            let rt = tape.slice(trajectory, 0, t * b, b)?;
            let inp = tape.concat(&[prev, onehot, z, rt], 1)?;
            let x = g.embed.forward(tape, st, inp)?;
            let x = g.embed_act.forward(tape, st, x)?;
            let h = g.lstm.step(tape, st, x, &mut state)?;
            let delta = g.out.forward(tape, st, h)?;
            let pose_t = tape.add(prev, delta)?;
            outputs.push(pose_t);
            prev = pose_t;
        }
        Ok(tape.concat(&outputs, 0)?)
    }

    fn teacher_mix(&self, tape: &mut Tape, pred: Var, truth: &Tensor, masks: &[Vec<bool>], t: usize) -> Result<Var> {
        let b = masks.len();
        let pose = self.config.pose_dim();
        let n_forced = masks.iter().filter(|m| m[t]).count();
        if n_forced == 0 {
            return Ok(pred);
        }
        let rows = &truth.data()[(t - 1) * b * pose..t * b * pose];
        if n_forced == b {
            return Ok(tape.constant(Tensor::new(vec![b, pose], rows.to_vec())?));
        }
        let mut keep = vec![0.0; b * pose];
        let mut forced = vec![0.0; b * pose];
        for (i, m) in masks.iter().enumerate() {
            let span = i * pose..(i + 1) * pose;
            if m[t] {
                forced[span.clone()].copy_from_slice(&rows[span]);
            } else {
                keep[span].fill(1.0);
            }
        }
        let keep = tape.constant(Tensor::new(vec![b, pose], keep)?);
        let forced = tape.constant(Tensor::new(vec![b, pose], forced)?);
        let kept = tape.hadamard(pred, keep)?;
        Ok(tape.add(kept, forced)?)
    }

    /// Full training-time pass: encode, reparameterize with the supplied
    /// noise `eps` (`B × D`), generate the trajectory and decode poses along
    /// it with optional teacher forcing.
    pub(crate) fn forward_batch(
        &self,
        tape: &mut Tape,
        lmps: &[&Lmp],
        categories: &[usize],
        endpoints: Option<&[[f64; 3]]>,
        eps: Tensor,
        teacher: Option<(&Tensor, &[Vec<bool>])>,
    ) -> Result<Forward> {
        let (mu, logvar) = self.encode_tape(tape, lmps)?;
        let half = tape.scale(logvar, 0.5)?;
        let sd = tape.exp(half)?;
        let eps = tape.constant(eps);
        let noise = tape.hadamard(sd, eps)?;
        let z = tape.add(mu, noise)?;
        let onehot = self.onehots(categories)?;
        let onehot = tape.constant(onehot);
        let e = match endpoints {
            Some(e) => {
                let flat: Vec<f64> = e.iter().flatten().copied().collect();
                Some(tape.constant(Tensor::new(vec![e.len(), 3], flat)?))
            }
            None => None,
        };
        let (velocities, trajectory) = self.trajectory_tape(tape, onehot, z, e)?;
        let poses = self.motion_tape(tape, onehot, z, trajectory, teacher)?;
        Ok(Forward {
            mu,
            logvar,
            velocities,
            trajectory,
            poses,
        })
    }

    pub fn encode(&self, lmp: &Lmp) -> Result<LatentPosterior> {
        Ok(self.encode_batch(&[lmp])?.remove(0))
    }

    pub fn encode_batch(&self, lmps: &[&Lmp]) -> Result<Vec<LatentPosterior>> {
        if lmps.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let (mu, logvar) = self.encode_tape(&mut tape, lmps)?;
        let d = self.config.latent;
        let mu = tape.value(mu);
        let lv = tape.value(logvar);
        (0..lmps.len())
            .map(|i| {
                let var: Vec<f64> = lv.row_slice(i).iter().map(|v| v.exp()).collect();
                if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Numerical("posterior variance is not positive and finite".into()));
                }
                debug_assert_eq!(var.len(), d);
                Ok(LatentPosterior {
                    mean: mu.row_slice(i).to_vec(),
                    var,
                })
            })
            .collect()
    }

    fn request_inputs(&self, tape: &mut Tape, requests: &[GenRequest]) -> Result<(Var, Var, Option<Var>)> {
        let d = self.config.latent;
        let cats: Vec<usize> = requests.iter().map(|r| r.category).collect();
        let onehot = self.onehots(&cats)?;
        let mut zs = Vec::with_capacity(requests.len() * d);
        for r in requests {
            if r.code.dim() != d {
                return Err(Error::Shape(format!("code has {} dims, model expects {d}", r.code.dim())));
            }
            if r.code.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("code contains non-finite values".into()));
            }
            zs.extend_from_slice(&r.code.0);
        }
        let onehot = tape.constant(onehot);
        let z = tape.constant(Tensor::new(vec![requests.len(), d], zs)?);
        let has_endpoint = requests.iter().filter(|r| r.endpoint.is_some()).count();
        let endpoints = match (has_endpoint, self.config.endpoint_conditioning) {
            (0, false) => None,
            (_, false) => return Err(Error::EndpointUnsupported),
            (n, true) if n < requests.len() => return Err(Error::EndpointRequired),
            _ => {
                let e: Vec<f64> = requests.iter().flat_map(|r| r.endpoint.expect("checked")).collect();
                if e.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data("endpoint contains non-finite values".into()));
                }
                Some(tape.constant(Tensor::new(vec![requests.len(), 3], e)?))
            }
        };
        Ok((onehot, z, endpoints))
    }

    /// Velocities and integrated trajectory for one request.
    pub fn gen_trajectory(&self, category: usize, code: &LatentCode, endpoint: Option<[f64; 3]>) -> Result<(Vec<[f64; 3]>, Trajectory)> {
        let req = [GenRequest {
            category,
            code: code.clone(),
            endpoint,
        }];
        let mut tape = Tape::new();
        let (onehot, z, e) = self.request_inputs(&mut tape, &req)?;
        let (vel, _) = self.trajectory_tape(&mut tape, onehot, z, e)?;
        let v: Vec<[f64; 3]> = tape
            .value(vel)
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let traj = integrate_velocities(&v);
        Ok((v, traj))
    }

    /// Decode a motion along `trajectory`. With a teacher, each frame uses
    /// the true previous pose with probability `tf_rate`.
    pub fn gen_motion(
        &self,
        category: usize,
        code: &LatentCode,
        trajectory: &Trajectory,
        teacher: Option<&Motion>,
        tf_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Motion> {
        let c = &self.config;
        if !(0.0..=1.0).contains(&tf_rate) {
            return Err(Error::Config(format!("teacher forcing rate {tf_rate} outside [0, 1]")));
        }
        if trajectory.len() != c.frames {
            return Err(Error::Shape(format!("trajectory has {} points, model expects {}", trajectory.len(), c.frames)));
        }
        let req = [GenRequest {
            category,
            code: code.clone(),
            endpoint: None,
        }];
        let mut tape = Tape::new();
        let onehot = tape.constant(self.onehots(&[category])?);
        let z = tape.constant(Tensor::new(vec![1, c.latent], req[0].code.0.clone())?);
        let pts: Vec<f64> = trajectory.points.iter().flatten().copied().collect();
        let traj = tape.constant(Tensor::new(vec![c.frames, 3], pts)?);
        let poses = match teacher {
            Some(m) => {
                if m.frames() != c.frames || m.joints() != c.joints {
                    return Err(Error::Shape(format!(
                        "teacher is {}×{}, model expects {}×{}",
                        m.frames(),
                        m.joints(),
                        c.frames,
                        c.joints
                    )));
                }
                let truth = time_major(c.frames, c.pose_dim(), &[m.positions()]);
                let mask = vec![(0..c.frames).map(|_| rng.random_bool(tf_rate)).collect::<Vec<_>>()];
                self.motion_tape(&mut tape, onehot, z, traj, Some((&truth, &mask)))?
            }
            None => self.motion_tape(&mut tape, onehot, z, traj, None)?,
        };
        Ok(Motion::new(c.frames, c.joints, c.root, tape.value(poses).data().to_vec(), category)?)
    }

    /// Full autoregressive generation for one request.
    pub fn generate(&self, category: usize, code: &LatentCode, endpoint: Option<[f64; 3]>) -> Result<Generated> {
        Ok(self
            .generate_batch(&[GenRequest {
                category,
                code: code.clone(),
                endpoint,
            }])?
            .remove(0))
    }

    /// Batched generation: trajectory first, then poses without teacher
    /// forcing; output motions are origin-normalized.
    pub fn generate_batch(&self, requests: &[GenRequest]) -> Result<Vec<Generated>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let c = &self.config;
        let b = requests.len();
        let pose = c.pose_dim();
        let mut tape = Tape::new();
        let (onehot, z, e) = self.request_inputs(&mut tape, requests)?;
        let (vel, traj) = self.trajectory_tape(&mut tape, onehot, z, e)?;
        let poses = self.motion_tape(&mut tape, onehot, z, traj, None)?;
        let vel = tape.value(vel).data();
        let traj = tape.value(traj).data();
        let poses = tape.value(poses).data();
        (0..b)
            .map(|i| {
                let mut positions = Vec::with_capacity(c.frames * pose);
                let mut velocities = Vec::with_capacity(c.frames);
                let mut points = Vec::with_capacity(c.frames);
                for t in 0..c.frames {
                    let row = t * b + i;
                    positions.extend_from_slice(&poses[row * pose..(row + 1) * pose]);
                    velocities.push([vel[row * 3], vel[row * 3 + 1], vel[row * 3 + 2]]);
                    points.push([traj[row * 3], traj[row * 3 + 1], traj[row * 3 + 2]]);
                }
                let motion = Motion::new(c.frames, c.joints, c.root, positions, requests[i].category)?;
                Ok(Generated {
                    motion: normalize_origin(&motion),
                    trajectory: Trajectory { points },
                    velocities,
                })
            })
            .collect()
    }
}
