//! HTTP/JSON facade over a trained [`ModelBundle`].
//!
//! All state is immutable after load. Every request that involves
//! randomness takes an optional `seed` (server-random when absent) and
//! echoes the seed it used, so any response can be reproduced. Model work
//! runs on the blocking thread pool.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mogen::bundle::ModelBundle;
use mogen::latent::{ellipse, interpolate, sample_mode, sample_mode_preserving, Pca};
use mogen::model::{GenRequest, Generated, LatentCode};
use mogen::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

mod api;

pub use api::*;

/// Upper bounds that keep a single request's work bounded.
pub const MAX_STEPS: usize = 100;
pub const MAX_TARGETS: usize = 256;
pub const MAX_SAMPLES: usize = 64;

/// Scale of the mode contours in the latent map, in standard deviations.
pub const ELLIPSE_SIGMAS: f64 = 2.0;

struct CategoryMap {
    pca: Pca,
    points: Vec<MapPoint>,
    modes: Vec<MapMode>,
}

pub struct AppState {
    bundle: ModelBundle,
    model_id: String,
    maps: Vec<CategoryMap>,
    failures: AtomicU64,
}

impl AppState {
    /// Precompute the per-category latent maps.
    pub fn new(bundle: ModelBundle) -> mogen::Result<Self> {
        let model_id = bundle.model.fingerprint()[..16].to_string();
        let maps = bundle
            .catalog
            .categories
            .iter()
            .map(|cat| {
                let codes: Vec<Vec<f64>> = cat.members.iter().map(|&i| bundle.bank.codes[i].clone()).collect();
                let pca = Pca::fit(&codes)?;
                let gmm = cat.gmm();
                let points = codes
                    .iter()
                    .zip(&gmm.assignment)
                    .map(|(z, &mode)| {
                        let [x, y] = pca.project(z);
                        MapPoint { x, y, mode }
                    })
                    .collect();
                let counts = gmm.member_counts();
                let modes = gmm
                    .components
                    .iter()
                    .enumerate()
                    .map(|(k, g)| {
                        let (center, cov) = pca.project_gaussian(g);
                        let (semi_major, semi_minor, angle) = ellipse(cov, ELLIPSE_SIGMAS);
                        MapMode {
                            index: k,
                            weight: gmm.weights[k],
                            members: counts[k],
                            center,
                            mean: g.mean.iter().copied().collect(),
                            semi_major,
                            semi_minor,
                            angle,
                        }
                    })
                    .collect();
                Ok(CategoryMap { pca, points, modes })
            })
            .collect::<mogen::Result<_>>()?;
        Ok(Self {
            bundle,
            model_id,
            maps,
            failures: AtomicU64::new(0),
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    fn category(&self, name: &str) -> Result<usize, ApiError> {
        self.bundle.category_index(name).map_err(|e| self.error(e))
    }

    fn check_code(&self, code: &[f64]) -> Result<LatentCode, ApiError> {
        let d = self.bundle.model.config.latent;
        if code.len() != d {
            return Err(ApiError::bad_request(format!("code has {} entries, the model expects {d}", code.len())));
        }
        if code.iter().any(|v| !v.is_finite()) {
            return Err(ApiError::bad_request("code entries must be finite"));
        }
        Ok(LatentCode(code.to_vec()))
    }

    fn check_endpoint(&self, e: [f64; 3]) -> Result<[f64; 3], ApiError> {
        if !self.bundle.model.config.endpoint_conditioning {
            return Err(self.error(Error::EndpointUnsupported));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(ApiError::bad_request("endpoint coordinates must be finite"));
        }
        Ok(e)
    }

    /// Endpoint to condition on when the client gave none.
    fn default_endpoint(&self, category: usize, code: &LatentCode) -> Result<Option<[f64; 3]>, ApiError> {
        if !self.bundle.model.config.endpoint_conditioning {
            return Ok(None);
        }
        self.bundle.knn.predict(code, category).map(Some).map_err(|e| self.error(e))
    }

    /// Mode mean as a code.
    fn mode_mean(&self, category: usize, mode: usize) -> Result<LatentCode, ApiError> {
        let cat = self.bundle.catalog.category(category).map_err(|e| self.error(e))?;
        cat.gmm()
            .components
            .get(mode)
            .map(|g| LatentCode(g.mean.iter().copied().collect()))
            .ok_or_else(|| unknown_mode(&cat.name, mode))
    }

    /// Explicit code, a draw from one mode, or a mode-preserving draw.
    fn resolve_code(
        &self,
        category: usize,
        code: Option<&[f64]>,
        mode: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Option<usize>, LatentCode), ApiError> {
        match (code, mode) {
            (Some(_), Some(_)) => Err(ApiError::bad_request("give either `code` or `mode`, not both")),
            (Some(z), None) => Ok((None, self.check_code(z)?)),
            (None, Some(k)) => {
                let cat = self.bundle.catalog.category(category).map_err(|e| self.error(e))?;
                if k >= cat.modes() {
                    return Err(unknown_mode(&cat.name, k));
                }
                let z = sample_mode(&self.bundle.catalog, category, k, rng).map_err(|e| self.error(e))?;
                Ok((Some(k), z))
            }
            (None, None) => {
                let (k, z) = sample_mode_preserving(&self.bundle.catalog, category, None, rng).map_err(|e| self.error(e))?;
                Ok((Some(k), z))
            }
        }
    }

    fn generate(&self, requests: &[GenRequest]) -> Result<Vec<Generated>, ApiError> {
        self.bundle.model.generate_batch(requests).map_err(|e| self.error(e))
    }

    /// Map a library error to a response; failures that are not the
    /// client's fault get a diagnostic id that also goes to the log.
    fn error(&self, e: Error) -> ApiError {
        match e {
            Error::Unknown { .. } => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            Error::EndpointUnsupported => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            Error::Config(_) | Error::Shape(_) | Error::EndpointRequired => ApiError::bad_request(e.to_string()),
            other => {
                let id = format!("E{:06}", self.failures.fetch_add(1, Ordering::Relaxed) + 1);
                log::error!("{id}: {other}");
                ApiError {
                    status: StatusCode::INTERNAL_SERVER_ERROR,
                    body: ErrorBody {
                        error: other.to_string(),
                        id: Some(id),
                    },
                }
            }
        }
    }
}

fn unknown_mode(category: &str, mode: usize) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, format!("category `{category}` has no mode {mode}"))
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: message.into(),
                id: None,
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Shared) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Router::new()
        .route("/health", get(health))
        .route("/categories", get(categories))
        .route("/latent-map", get(latent_map))
        .route("/generate", post(generate))
        .route("/interpolate", post(interpolate_codes))
        .route("/customize", post(customize))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}

/// Run model work off the async executor.
async fn blocking<T: Send + 'static>(
    state: Shared,
    f: impl FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    match tokio::task::spawn_blocking(move || f(&state)).await {
        Ok(r) => r.map(Json),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"))),
    }
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

async fn health(State(s): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_id: s.model_id.clone(),
    })
}

async fn categories(State(s): State<Shared>) -> Json<Categories> {
    let b = &s.bundle;
    let c = &b.model.config;
    let categories = b
        .catalog
        .categories
        .iter()
        .enumerate()
        .map(|(index, cat)| CategoryInfo {
            index,
            name: cat.name.clone(),
            count: cat.members.len(),
            k: cat.modes(),
            weights: cat.membership_weights(),
        })
        .collect();
    Json(Categories {
        categories,
        frames: c.frames,
        joints: c.joints,
        latent: c.latent,
        parents: b.skeleton.parents.clone(),
        endpoint_conditioned: c.endpoint_conditioning,
    })
}

async fn latent_map(State(s): State<Shared>, q: Result<Query<MapQuery>, QueryRejection>) -> ApiResult<LatentMap> {
    let Query(q) = q?;
    let c = s.category(&q.category)?;
    let map = &s.maps[c];
    Ok(Json(LatentMap {
        category: q.category,
        mean: map.pca.mean.clone(),
        axes: map.pca.basis.clone(),
        explained: map.pca.explained,
        sigmas: ELLIPSE_SIGMAS,
        points: map.points.clone(),
        modes: map.modes.clone(),
    }))
}

fn motion_json(g: Generated, endpoint: Option<[f64; 3]>, score: bool) -> MotionJson {
    let m = &g.motion;
    let frames = (0..m.frames())
        .map(|t| (0..m.joints()).map(|j| m.joint(t, j)).collect())
        .collect();
    let dist_e = if score {
        endpoint.map(|e| {
            let r = m.root_position(m.frames() - 1);
            (0..3).map(|i| (r[i] - e[i]).powi(2)).sum()
        })
    } else {
        None
    };
    MotionJson {
        frames,
        trajectory: g.trajectory.points,
        endpoint,
        dist_e,
    }
}

async fn generate(State(s): State<Shared>, body: Result<Json<GenerateRequest>, JsonRejection>) -> ApiResult<GenerateResponse> {
    let Json(req) = body?;
    blocking(s, move |s| {
        let c = s.category(&req.category)?;
        let seed = seed_or_random(req.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mode, code) = s.resolve_code(c, req.code.as_deref(), req.mode, &mut rng)?;
        let (endpoint, score) = match req.endpoint {
            Some(e) => (Some(s.check_endpoint(e)?), true),
            None => (s.default_endpoint(c, &code)?, false),
        };
        let g = s.generate(&[GenRequest {
            category: c,
            code: code.clone(),
            endpoint,
        }])?;
        let motion = motion_json(g.into_iter().next().expect("one request"), endpoint, score);
        Ok(GenerateResponse {
            seed,
            category: req.category,
            mode,
            code: code.0,
            motion,
        })
    })
    .await
}

async fn interpolate_codes(
    State(s): State<Shared>,
    body: Result<Json<InterpolateRequest>, JsonRejection>,
) -> ApiResult<InterpolateResponse> {
    let Json(req) = body?;
    blocking(s, move |s| {
        let c = s.category(&req.category)?;
        let seed = seed_or_random(req.seed);
        if !(2..=MAX_STEPS).contains(&req.steps) {
            return Err(ApiError::bad_request(format!("steps must lie in 2..={MAX_STEPS}")));
        }
        let end = |code: &Option<Vec<f64>>, mode: Option<usize>, which: &str| match (code, mode) {
            (Some(z), None) => s.check_code(z),
            (None, Some(k)) => s.mode_mean(c, k),
            _ => Err(ApiError::bad_request(format!("give exactly one of `code_{which}` and `mode_{which}`"))),
        };
        let a = end(&req.code_a, req.mode_a, "a")?;
        let b = end(&req.code_b, req.mode_b, "b")?;
        let codes = interpolate(&a, &b, req.steps).map_err(|e| s.error(e))?;
        let requests = codes
            .iter()
            .map(|z| {
                Ok(GenRequest {
                    category: c,
                    code: z.clone(),
                    endpoint: s.default_endpoint(c, z)?,
                })
            })
            .collect::<Result<Vec<_>, ApiError>>()?;
        let motions = s
            .generate(&requests)?
            .into_iter()
            .zip(requests)
            .enumerate()
            .map(|(i, (g, r))| InterpolatedMotion {
                lambda: i as f64 / (req.steps - 1) as f64,
                code: r.code.0,
                motion: motion_json(g, r.endpoint, false),
            })
            .collect();
        Ok(InterpolateResponse {
            seed,
            category: req.category,
            motions,
        })
    })
    .await
}

async fn customize(State(s): State<Shared>, body: Result<Json<CustomizeRequest>, JsonRejection>) -> ApiResult<CustomizeResponse> {
    let Json(req) = body?;
    blocking(s, move |s| {
        let c = s.category(&req.category)?;
        let seed = seed_or_random(req.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if req.endpoints.is_empty() || req.endpoints.len() > MAX_TARGETS {
            return Err(ApiError::bad_request(format!("give between 1 and {MAX_TARGETS} endpoints")));
        }
        let samples = req.samples.unwrap_or(1);
        if samples == 0 || samples > MAX_SAMPLES {
            return Err(ApiError::bad_request(format!("samples must lie in 1..={MAX_SAMPLES}")));
        }
        if req.code.is_some() && samples != 1 {
            return Err(ApiError::bad_request("an explicit code allows only one sample"));
        }
        let endpoints = req
            .endpoints
            .iter()
            .map(|&e| s.check_endpoint(e))
            .collect::<Result<Vec<_>, _>>()?;
        let codes = (0..samples)
            .map(|_| s.resolve_code(c, req.code.as_deref(), req.mode, &mut rng).map(|(_, z)| z))
            .collect::<Result<Vec<_>, _>>()?;
        let mut requests = Vec::with_capacity(codes.len() * endpoints.len());
        let mut index = Vec::with_capacity(requests.capacity());
        for (ci, z) in codes.iter().enumerate() {
            for &e in &endpoints {
                requests.push(GenRequest {
                    category: c,
                    code: z.clone(),
                    endpoint: Some(e),
                });
                index.push(ci);
            }
        }
        let motions: Vec<CustomizedMotion> = s
            .generate(&requests)?
            .into_iter()
            .zip(&requests)
            .zip(index)
            .map(|((g, r), code_index)| CustomizedMotion {
                code_index,
                motion: motion_json(g, r.endpoint, true),
            })
            .collect();
        let mean_dist_e = motions.iter().filter_map(|m| m.motion.dist_e).sum::<f64>() / motions.len() as f64;
        Ok(CustomizeResponse {
            seed,
            category: req.category,
            codes: codes.into_iter().map(|z| z.0).collect(),
            motions,
            mean_dist_e,
        })
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
}
