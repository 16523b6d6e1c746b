//! Procedural motion families with planted categories and modes.
//!
//! Every record is built from a root path (planar heading walk plus an
//! optional vertical component) and a rest pose perturbed by per-joint
//! periodic offsets expressed in the body frame (x lateral, y up, z forward).

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MotionRecord;
use crate::error::{Error, Result};
use crate::kinematics::{normalize_origin, Motion, Skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// `sin(x)`
    Sine,
    /// `max(0, sin(x))`
    Positive,
    /// `|sin(x)|`
    Abs,
    /// `(1 − cos(x)) / 2`, in `[0, 1]`
    Dip,
}

impl Shape {
    fn eval(self, x: f64) -> f64 {
        match self {
            Shape::Sine => x.sin(),
            Shape::Positive => x.sin().max(0.0),
            Shape::Abs => x.sin().abs(),
            Shape::Dip => 0.5 * (1.0 - x.cos()),
        }
    }
}

/// A periodic displacement of one joint along a body-frame axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oscillation {
    pub joint: usize,
    pub axis: [f64; 3],
    pub amplitude: f64,
    /// Period in frames.
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "default_shape")]
    pub shape: Shape,
}

fn full_cycle() -> f64 {
    TAU
}

fn default_shape() -> Shape {
    Shape::Sine
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vertical {
    /// Signed peak height of the root, meters.
    pub amplitude: f64,
    pub period: f64,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub name: String,
    pub count: usize,
    /// Ground speed in meters per frame.
    #[serde(default)]
    pub speed: f64,
    /// Heading change in radians per frame.
    #[serde(default)]
    pub turn_rate: f64,
    #[serde(default)]
    pub vertical: Option<Vertical>,
    /// Lateral sway amplitude for otherwise stationary modes, meters.
    #[serde(default)]
    pub sway: f64,
    /// Record phases are uniform in `[0, phase_spread)`; defaults to a full cycle.
    #[serde(default = "full_cycle")]
    pub phase_spread: f64,
    /// Forward lean of the upper body, meters at head height.
    #[serde(default)]
    pub lean: f64,
    /// Feet keep their rest height when the root moves vertically.
    #[serde(default)]
    pub grounded_feet: bool,
    /// Static body-frame offsets added to the rest pose: `(joint, offset)`.
    #[serde(default)]
    pub pose: Vec<(usize, [f64; 3])>,
    #[serde(default)]
    pub oscillations: Vec<Oscillation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    pub modes: Vec<ModeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub frames: usize,
    pub skeleton: Skeleton,
    /// Body-frame rest offsets from the root, one per joint.
    pub rest_pose: Vec<[f64; 3]>,
    /// Initial heading is uniform in `±heading_jitter` radians.
    pub heading_jitter: f64,
    /// Relative standard deviation applied to amplitudes, speeds and periods.
    pub jitter: f64,
    /// Per-joint phase noise standard deviation, radians.
    pub phase_jitter: f64,
    pub categories: Vec<CategorySpec>,
}

const L_HAND: usize = 4;
const L_FOOT: usize = 5;
const R_HAND: usize = 7;
const R_FOOT: usize = 8;

const X: [f64; 3] = [1.0, 0.0, 0.0];
const Y: [f64; 3] = [0.0, 1.0, 0.0];
const Z: [f64; 3] = [0.0, 0.0, 1.0];

fn osc(joint: usize, axis: [f64; 3], amplitude: f64, period: f64, phase: f64, shape: Shape) -> Oscillation {
    Oscillation {
        joint,
        axis,
        amplitude,
        period,
        phase,
        shape,
    }
}

fn mode(name: &str, count: usize) -> ModeSpec {
    ModeSpec {
        name: name.into(),
        count,
        speed: 0.0,
        turn_rate: 0.0,
        vertical: None,
        sway: 0.0,
        phase_spread: TAU,
        lean: 0.0,
        grounded_feet: false,
        pose: Vec::new(),
        oscillations: Vec::new(),
    }
}

fn gait(period: f64, arm: f64, leg: f64, lift: f64) -> Vec<Oscillation> {
    vec![
        osc(L_HAND, Z, arm, period, 0.0, Shape::Sine),
        osc(R_HAND, Z, arm, period, PI, Shape::Sine),
        osc(L_FOOT, Z, leg, period, PI, Shape::Sine),
        osc(R_FOOT, Z, leg, period, 0.0, Shape::Sine),
        osc(L_FOOT, Y, lift, period, PI, Shape::Positive),
        osc(R_FOOT, Y, lift, period, 0.0, Shape::Positive),
    ]
}

impl SyntheticSpec {
    /// Six categories, sixty records each, sixty frames on the nine-joint
    /// skeleton. Walk has three modes; every other category has two.
    pub fn default_desk() -> Self {
        let per = 60;
        let walk = |name: &str, turn: f64, arm: f64| ModeSpec {
            speed: 0.04,
            turn_rate: turn,
            oscillations: gait(30.0, arm, 0.25, 0.08),
            ..mode(name, per / 3)
        };
        let run = |name: &str, speed: f64, period: f64, arm: f64, leg: f64, lean: f64| ModeSpec {
            speed,
            lean,
            pose: vec![(L_HAND, [0.0, 0.25, 0.1]), (R_HAND, [0.0, 0.25, 0.1])],
            oscillations: gait(period, arm, leg, 0.2),
            ..mode(name, per / 2)
        };
        let jump = |name: &str, speed: f64| ModeSpec {
            speed,
            vertical: Some(Vertical {
                amplitude: 0.35,
                period: 40.0,
                shape: Shape::Abs,
            }),
            grounded_feet: true,
            oscillations: vec![
                osc(L_HAND, Y, 0.45, 40.0, 0.0, Shape::Abs),
                osc(R_HAND, Y, 0.45, 40.0, 0.0, Shape::Abs),
                osc(L_FOOT, Y, 0.15, 40.0, 0.0, Shape::Abs),
                osc(R_FOOT, Y, 0.15, 40.0, 0.0, Shape::Abs),
            ],
            ..mode(name, per / 2)
        };
        let wave = |name: &str, hand: usize, side: f64| ModeSpec {
            sway: 0.01,
            pose: vec![(hand, [0.05 * side, 0.8, 0.05])],
            oscillations: vec![osc(hand, X, 0.15, 20.0, 0.0, Shape::Sine)],
            ..mode(name, per / 2)
        };
        let kick = |name: &str, foot: usize, other_hand: usize| ModeSpec {
            sway: 0.01,
            oscillations: vec![
                osc(foot, Z, 0.6, 30.0, 0.0, Shape::Positive),
                osc(foot, Y, 0.5, 30.0, 0.0, Shape::Positive),
                osc(other_hand, Z, 0.2, 30.0, 0.0, Shape::Positive),
            ],
            ..mode(name, per / 2)
        };
        let squat = |name: &str, period: f64, depth: f64| ModeSpec {
            vertical: Some(Vertical {
                amplitude: -depth,
                period,
                shape: Shape::Dip,
            }),
            grounded_feet: true,
            phase_spread: 0.5,
            oscillations: vec![
                osc(L_HAND, Z, 0.45, period, 0.0, Shape::Dip),
                osc(R_HAND, Z, 0.45, period, 0.0, Shape::Dip),
                osc(L_HAND, Y, 0.35, period, 0.0, Shape::Dip),
                osc(R_HAND, Y, 0.35, period, 0.0, Shape::Dip),
            ],
            ..mode(name, per / 2)
        };

        Self {
            frames: 60,
            skeleton: Skeleton::default_nine(),
            rest_pose: vec![
                [0.0, 0.0, 0.0],
                [0.0, 0.3, 0.0],
                [0.0, 0.65, 0.0],
                [0.2, 0.5, 0.0],
                [0.25, -0.05, 0.0],
                [0.1, -0.9, 0.0],
                [-0.2, 0.5, 0.0],
                [-0.25, -0.05, 0.0],
                [-0.1, -0.9, 0.0],
            ],
            heading_jitter: 0.3,
            jitter: 0.05,
            phase_jitter: 0.1,
            categories: vec![
                CategorySpec {
                    name: "walk".into(),
                    modes: vec![
                        walk("straight", 0.0, 0.25),
                        walk("left-arc", 0.025, 0.12),
                        walk("right-arc", -0.025, 0.4),
                    ],
                },
                CategorySpec {
                    name: "run".into(),
                    modes: vec![
                        run("jog", 0.08, 20.0, 0.3, 0.35, 0.08),
                        run("sprint", 0.13, 15.0, 0.5, 0.5, 0.2),
                    ],
                },
                CategorySpec {
                    name: "jump".into(),
                    modes: vec![jump("forward", 0.05), jump("in-place", 0.0)],
                },
                CategorySpec {
                    name: "wave".into(),
                    modes: vec![wave("left-hand", L_HAND, 1.0), wave("right-hand", R_HAND, -1.0)],
                },
                CategorySpec {
                    name: "kick".into(),
                    modes: vec![kick("left-leg", L_FOOT, R_HAND), kick("right-leg", R_FOOT, L_HAND)],
                },
                CategorySpec {
                    name: "squat".into(),
                    modes: vec![squat("slow", 60.0, 0.4), squat("fast", 20.0, 0.25)],
                },
            ],
        }
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        let j = self.skeleton.joints();
        if self.frames == 0 {
            return Err(Error::Config("synthetic spec needs at least one frame".into()));
        }
        if self.rest_pose.len() != j {
            return Err(Error::Config(format!(
                "rest pose has {} joints, skeleton has {j}",
                self.rest_pose.len()
            )));
        }
        if self.categories.is_empty() {
            return Err(Error::Config("synthetic spec has no categories".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) || self.phase_jitter < 0.0 || self.heading_jitter < 0.0 {
            return Err(Error::Config("jitter parameters out of range".into()));
        }
        for c in &self.categories {
            if c.modes.is_empty() {
                return Err(Error::Config(format!("category `{}` has no modes", c.name)));
            }
            for m in &c.modes {
                if !(m.phase_spread > 0.0) {
                    return Err(Error::Config(format!("mode `{}/{}` needs a positive phase spread", c.name, m.name)));
                }
                if m.count == 0 {
                    return Err(Error::Config(format!("mode `{}/{}` has a zero count", c.name, m.name)));
                }
                let joints_ok = m.pose.iter().map(|p| p.0).chain(m.oscillations.iter().map(|o| o.joint)).all(|k| k < j);
                if !joints_ok {
                    return Err(Error::Config(format!("mode `{}/{}` references an unknown joint", c.name, m.name)));
                }
                let periods_ok = m.oscillations.iter().map(|o| o.period).chain(m.vertical.as_ref().map(|v| v.period)).all(|p| p > 0.0);
                if !periods_ok {
                    return Err(Error::Config(format!("mode `{}/{}` has a non-positive period", c.name, m.name)));
                }
            }
            for (a, ma) in c.modes.iter().enumerate() {
                for mb in &c.modes[a + 1..] {
                    if !self.separated(ma, mb) {
                        return Err(Error::Config(format!(
                            "modes `{}` and `{}` of `{}` are not separated by 3σ of jitter",
                            ma.name, mb.name, c.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Two modes are separated when some parameter differs by at least
    /// three jitter standard deviations, or they move different joints.
    fn separated(&self, a: &ModeSpec, b: &ModeSpec) -> bool {
        let far = |x: f64, y: f64| (x - y).abs() > 3.0 * self.jitter * x.abs().max(y.abs()) + 1e-12;
        if far(a.speed, b.speed) || far(a.turn_rate, b.turn_rate) || far(a.lean, b.lean) {
            return true;
        }
        match (&a.vertical, &b.vertical) {
            (Some(va), Some(vb)) => {
                if far(va.amplitude, vb.amplitude) || far(va.period, vb.period) || va.shape != vb.shape {
                    return true;
                }
            }
            (None, None) => {}
            _ => return true,
        }
        let key = |o: &Oscillation| (o.joint, o.axis.map(f64::to_bits), o.shape);
        let ja: Vec<_> = a.oscillations.iter().map(key).collect();
        let jb: Vec<_> = b.oscillations.iter().map(key).collect();
        if ja != jb {
            return true;
        }
        let osc_far = a
            .oscillations
            .iter()
            .zip(&b.oscillations)
            .any(|(x, y)| far(x.amplitude, y.amplitude) || far(x.period, y.period));
        let pose_far = a.pose.len() != b.pose.len()
            || a.pose.iter().zip(&b.pose).any(|(x, y)| x.0 != y.0 || (0..3).any(|k| far(x.1[k], y.1[k])));
        osc_far || pose_far
    }

    pub fn total_records(&self) -> usize {
        self.categories.iter().flat_map(|c| &c.modes).map(|m| m.count).sum()
    }
}

fn rotate(local: [f64; 3], heading: f64) -> [f64; 3] {
    // forward = (sin θ, 0, cos θ), lateral = (cos θ, 0, −sin θ)
    let (s, c) = heading.sin_cos();
    [local[0] * c + local[2] * s, local[1], -local[0] * s + local[2] * c]
}

/// Deterministic corpus for `(spec, seed)`, grouped by category in spec
/// order, each record origin-normalized and tagged with its mode index.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<MotionRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.total_records());
    for (ci, cat) in spec.categories.iter().enumerate() {
        for (mi, m) in cat.modes.iter().enumerate() {
            for _ in 0..m.count {
                let motion = synth_one(spec, m, ci, &mut rng)?;
                out.push(MotionRecord {
                    motion,
                    mode: Some(mi),
                });
            }
        }
    }
    Ok(out)
}

fn synth_one(spec: &SyntheticSpec, m: &ModeSpec, category: usize, rng: &mut impl Rng) -> Result<Motion> {
    let jitter = spec.jitter;
    let noisy = |v: f64, rng: &mut dyn rand::RngCore| {
        let n: f64 = StandardNormal.sample(rng);
        v * (1.0 + jitter * n)
    };
    let heading0 = rng.random_range(-spec.heading_jitter..=spec.heading_jitter);
    let speed = noisy(m.speed, rng);
    let turn = noisy(m.turn_rate, rng);
    let lean = noisy(m.lean, rng);
    let scale = noisy(1.0, rng);
    let phase = rng.random_range(0.0..m.phase_spread);
    let vertical = m.vertical.as_ref().map(|v| (noisy(v.amplitude, rng), noisy(v.period, rng), v.shape));
    let oscs: Vec<(usize, [f64; 3], f64, f64, f64, Shape)> = m
        .oscillations
        .iter()
        .map(|o| {
            let a = noisy(o.amplitude, rng);
            let p = noisy(o.period, rng);
            let n: f64 = StandardNormal.sample(rng);
            (o.joint, o.axis, a, p, o.phase + spec.phase_jitter * n, o.shape)
        })
        .collect();

    let j = spec.skeleton.joints();
    let root = spec.skeleton.root;
    let t_len = spec.frames;
    let mut positions = Vec::with_capacity(t_len * j * 3);
    let mut planar = [0.0f64; 2];
    let mut heading = heading0;
    for t in 0..t_len {
        let tf = t as f64;
        let lift = vertical.map_or(0.0, |(a, p, s)| a * s.eval(TAU * tf / p + phase));
        let sway = m.sway * (TAU * tf / 40.0 + phase).sin();
        let side = rotate([sway, 0.0, 0.0], heading);
        let root_pos = [planar[0] + side[0], lift, planar[1] + side[2]];
        for k in 0..j {
            let mut local = spec.rest_pose[k].map(|v| v * scale);
            for (pj, off) in &m.pose {
                if *pj == k {
                    for d in 0..3 {
                        local[d] += off[d];
                    }
                }
            }
            if local[1] > 0.0 && k != root {
                local[2] += lean * local[1] / 0.65;
            }
            for &(oj, axis, a, p, ph, shape) in &oscs {
                if oj == k {
                    let v = a * shape.eval(TAU * tf / p + phase + ph);
                    for d in 0..3 {
                        local[d] += v * axis[d];
                    }
                }
            }
            if m.grounded_feet && (k == L_FOOT || k == R_FOOT) && j == 9 {
                local[1] -= lift;
            }
            let w = rotate(local, heading);
            positions.extend_from_slice(&[root_pos[0] + w[0], root_pos[1] + w[1], root_pos[2] + w[2]]);
        }
        let fwd = rotate([0.0, 0.0, speed], heading);
        planar[0] += fwd[0];
        planar[1] += fwd[2];
        heading += turn;
    }
    let motion = Motion::new(t_len, j, root, positions, category)?;
    Ok(normalize_origin(&motion))
}
