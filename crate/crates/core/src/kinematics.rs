//! Skeletons, motions and the split of a motion into a root trajectory and
//! a root-relative local movement profile (LMP).
//!
//! All positions are meters, stored row-major as `frame × joint × xyz`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub root: usize,
    /// `parents[j]` is `None` only for the root.
    pub parents: Vec<Option<usize>>,
    pub names: Vec<String>,
}

impl Skeleton {
    pub fn new(root: usize, parents: Vec<Option<usize>>, names: Vec<String>) -> Result<Self> {
        let s = Self { root, parents, names };
        s.validate()?;
        Ok(s)
    }

    /// The nine-joint skeleton used by the synthetic corpus: pelvis (root),
    /// spine, head, then shoulder/hand pairs and the two feet.
    pub fn default_nine() -> Self {
        let parents = vec![None, Some(0), Some(1), Some(1), Some(3), Some(0), Some(1), Some(6), Some(0)];
        let names = [
            "pelvis",
            "spine",
            "head",
            "left_shoulder",
            "left_hand",
            "left_foot",
            "right_shoulder",
            "right_hand",
            "right_foot",
        ];
        Self {
            root: 0,
            parents,
            names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// A chain skeleton `0 ← 1 ← … ← J−1` with generic names.
    pub fn chain(joints: usize) -> Self {
        Self {
            root: 0,
            parents: (0..joints).map(|j| j.checked_sub(1)).collect(),
            names: (0..joints).map(|j| format!("j{j}")).collect(),
        }
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        if j == 0 {
            return Err(Error::Data("skeleton has no joints".into()));
        }
        if self.names.len() != j {
            return Err(Error::Data(format!("skeleton has {j} joints but {} names", self.names.len())));
        }
        if self.root >= j {
            return Err(Error::Data(format!("root index {} out of range for {j} joints", self.root)));
        }
        for (k, p) in self.parents.iter().enumerate() {
            match p {
                None if k != self.root => return Err(Error::Data(format!("joint {k} has no parent but is not the root"))),
                Some(_) if k == self.root => return Err(Error::Data("root joint has a parent".into())),
                Some(p) if *p >= j => return Err(Error::Data(format!("joint {k} has parent {p} out of range"))),
                _ => {}
            }
        }
        // every joint must reach the root without revisiting a joint
        for start in 0..j {
            let mut cur = start;
            for _ in 0..=j {
                match self.parents[cur] {
                    None => break,
                    Some(p) => cur = p,
                }
            }
            if cur != self.root {
                return Err(Error::Data(format!("joint {start} is on a parent cycle")));
            }
        }
        Ok(())
    }
}

/// A fixed-length sequence of joint positions with its category label.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    frames: usize,
    joints: usize,
    root: usize,
    positions: Vec<f64>,
    pub category: usize,
}

impl Motion {
    pub fn new(frames: usize, joints: usize, root: usize, positions: Vec<f64>, category: usize) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Shape("motion must have at least one frame and one joint".into()));
        }
        if root >= joints {
            return Err(Error::Shape(format!("root {root} out of range for {joints} joints")));
        }
        if positions.len() != frames * joints * 3 {
            return Err(Error::Shape(format!(
                "expected {} coordinates for {frames}×{joints}×3, got {}",
                frames * joints * 3,
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("motion contains non-finite coordinates".into()));
        }
        Ok(Self {
            frames,
            joints,
            root,
            positions,
            category,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    /// All joints of frame `t`, flattened to `J·3` values.
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.joints * 3;
        &self.positions[t * w..(t + 1) * w]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let o = (t * self.joints + j) * 3;
        [self.positions[o], self.positions[o + 1], self.positions[o + 2]]
    }

    pub fn root_position(&self, t: usize) -> [f64; 3] {
        self.joint(t, self.root)
    }

    /// Root track of the motion.
    pub fn root_track(&self) -> Trajectory {
        Trajectory {
            points: (0..self.frames).map(|t| self.root_position(t)).collect(),
        }
    }

    /// Add `offset` to every joint of every frame.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let mut out = self.clone();
        for p in out.positions.chunks_exact_mut(3) {
            for k in 0..3 {
                p[k] += offset[k];
            }
        }
        out
    }
}

/// Root-relative joint offsets; the root row is zero in every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Lmp {
    pub frames: usize,
    pub joints: usize,
    pub root: usize,
    pub offsets: Vec<f64>,
}

impl Lmp {
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.joints * 3;
        &self.offsets[t * w..(t + 1) * w]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The end point r_e (last point).
    pub fn end(&self) -> [f64; 3] {
        *self.points.last().expect("non-empty trajectory")
    }

    /// Per-step differences with an implicit origin before the first point.
    pub fn velocities(&self) -> Vec<[f64; 3]> {
        let mut prev = [0.0; 3];
        self.points
            .iter()
            .map(|p| {
                let v = [p[0] - prev[0], p[1] - prev[1], p[2] - prev[2]];
                prev = *p;
                v
            })
            .collect()
    }

    /// Largest distance of any point from the first one.
    pub fn max_displacement(&self) -> f64 {
        let Some(first) = self.points.first() else {
            return 0.0;
        };
        self.points.iter().map(|p| dist(p, first)).fold(0.0, f64::max)
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn decompose(motion: &Motion) -> (Lmp, Trajectory) {
    let traj = motion.root_track();
    let mut offsets = motion.positions.clone();
    let w = motion.joints * 3;
    for (t, frame) in offsets.chunks_exact_mut(w).enumerate() {
        let r = traj.points[t];
        for p in frame.chunks_exact_mut(3) {
            for k in 0..3 {
                p[k] -= r[k];
            }
        }
    }
    let lmp = Lmp {
        frames: motion.frames,
        joints: motion.joints,
        root: motion.root,
        offsets,
    };
    (lmp, traj)
}

pub fn recompose(lmp: &Lmp, traj: &Trajectory, category: usize) -> Result<Motion> {
    if lmp.frames != traj.len() {
        return Err(Error::Shape(format!(
            "lmp has {} frames, trajectory has {}",
            lmp.frames,
            traj.len()
        )));
    }
    let mut positions = lmp.offsets.clone();
    let w = lmp.joints * 3;
    for (t, frame) in positions.chunks_exact_mut(w).enumerate() {
        let r = traj.points[t];
        for p in frame.chunks_exact_mut(3) {
            for k in 0..3 {
                p[k] += r[k];
            }
        }
    }
    Motion::new(lmp.frames, lmp.joints, lmp.root, positions, category)
}

/// Cumulative sum of per-step velocities starting from an implicit origin.
pub fn integrate_velocities(velocities: &[[f64; 3]]) -> Trajectory {
    let mut acc = [0.0; 3];
    let points = velocities
        .iter()
        .map(|v| {
            for k in 0..3 {
                acc[k] += v[k];
            }
            acc
        })
        .collect();
    Trajectory { points }
}

/// A random contiguous window of `target` frames. Shorter sources are
/// padded by repeating their last frame.
pub fn sample_window(motion: &Motion, target: usize, rng: &mut impl Rng) -> Result<Motion> {
    if target == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let w = motion.joints * 3;
    let positions = if motion.frames >= target {
        let start = rng.random_range(0..=motion.frames - target);
        motion.positions[start * w..(start + target) * w].to_vec()
    } else {
        let mut p = motion.positions.clone();
        let last = motion.frame(motion.frames - 1).to_vec();
        for _ in motion.frames..target {
            p.extend_from_slice(&last);
        }
        p
    };
    Motion::new(target, motion.joints, motion.root, positions, motion.category)
}

/// Translate so the first frame's root sits at the origin.
pub fn normalize_origin(motion: &Motion) -> Motion {
    let r = motion.root_position(0);
    motion.translated([-r[0], -r[1], -r[2]])
}
