//! Request and response bodies. Categories are addressed by name; motions
//! are nested `T × J × 3` arrays.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub index: usize,
    pub name: String,
    /// Training codes in the category.
    pub count: usize,
    /// Surviving modes.
    pub k: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categories {
    pub categories: Vec<CategoryInfo>,
    pub frames: usize,
    pub joints: usize,
    pub latent: usize,
    /// Skeleton parent of each joint, `null` for the root.
    pub parents: Vec<Option<usize>>,
    pub endpoint_conditioned: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MapQuery {
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub x: f64,
    pub y: f64,
    pub mode: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMode {
    pub index: usize,
    pub weight: f64,
    pub members: usize,
    /// Projected mean.
    pub center: [f64; 2],
    /// Full-dimensional mean.
    pub mean: Vec<f64>,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Major-axis angle in radians from the first map axis.
    pub angle: f64,
}

/// 2-D projection of one category's codes. A map point `p` lifts back to
/// `mean + p.x·axes[0] + p.y·axes[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    pub category: String,
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    pub explained: [f64; 2],
    /// Contour scale of the mode ellipses.
    pub sigmas: f64,
    pub points: Vec<MapPoint>,
    pub modes: Vec<MapMode>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub category: String,
    #[serde(default)]
    pub mode: Option<usize>,
    #[serde(default)]
    pub code: Option<Vec<f64>>,
    #[serde(default)]
    pub endpoint: Option<[f64; 3]>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionJson {
    pub frames: Vec<Vec<[f64; 3]>>,
    /// Output of the trajectory generator.
    pub trajectory: Vec<[f64; 3]>,
    /// Endpoint the model was conditioned on, if any.
    pub endpoint: Option<[f64; 3]>,
    /// Squared distance from the final root position to a client-given
    /// endpoint.
    pub dist_e: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub seed: u64,
    pub category: String,
    /// Mode the code was drawn from; absent for client codes.
    pub mode: Option<usize>,
    pub code: Vec<f64>,
    pub motion: MotionJson,
}

/// Each end is either an explicit code or a mode, whose mean is used.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateRequest {
    pub category: String,
    #[serde(default)]
    pub code_a: Option<Vec<f64>>,
    #[serde(default)]
    pub code_b: Option<Vec<f64>>,
    #[serde(default)]
    pub mode_a: Option<usize>,
    #[serde(default)]
    pub mode_b: Option<usize>,
    pub steps: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolatedMotion {
    pub lambda: f64,
    pub code: Vec<f64>,
    pub motion: MotionJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub seed: u64,
    pub category: String,
    pub motions: Vec<InterpolatedMotion>,
}

/// One code against many endpoints, or `samples` drawn codes against one
/// or more endpoints.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomizeRequest {
    pub category: String,
    #[serde(default)]
    pub code: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: Option<usize>,
    pub endpoints: Vec<[f64; 3]>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomizedMotion {
    /// Index into the response's `codes`.
    pub code_index: usize,
    pub motion: MotionJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomizeResponse {
    pub seed: u64,
    pub category: String,
    pub codes: Vec<Vec<f64>>,
    pub motions: Vec<CustomizedMotion>,
    pub mean_dist_e: f64,
}
