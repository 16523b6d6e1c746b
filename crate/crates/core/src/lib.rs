//! Action-conditioned 3D human motion generation.
//!
//! A motion is split into a root trajectory and a root-relative local
//! movement profile. An LSTM encoder maps the profile to a diagonal
//! Gaussian whose means are pulled together within an action category and
//! pushed apart across categories. Generation runs in two stages: a
//! trajectory generator integrates predicted root velocities, then an
//! autoregressive motion decoder produces joint positions along that path.
//! Per-category Gaussian mixtures over the latent codes expose discovered
//! sub-styles (modes) for sampling, interpolation and endpoint-driven
//! customization.

pub mod archive;
pub mod bundle;
pub mod dataset;
pub mod error;
pub mod kinematics;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, ErrorKind, Result};
