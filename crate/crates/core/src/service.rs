//! HTTP render service over one immutable scene.
//!
//! - `GET /scene/meta`: counts, bounds and environment resolution.
//! - `POST /render`: JSON request, PNG response.
//! - `POST /env`: body is a `.hdr` or `.pfm` file; returns the new id.
//! - `GET /envs`: known environments.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::envlight::{EnvironmentMap, Lighting};
use crate::error::GirError;
use crate::io::pfm::Pfm;
use crate::io::{decode_hdr, fit_env, Checkpoint};
use crate::raster::{Camera, RenderMode};
use crate::session::{MaterialOverrides, RenderRequest, RenderSession};

/// Id of the environment produced by the trained generator.
pub const TRAINED_ENV: &str = "trained";
/// Uploaded maps are halved until at most this tall.
pub const MAX_ENV_HEIGHT: usize = 256;
/// Largest accepted render side in pixels.
pub const MAX_RENDER_SIDE: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnvInfo {
    pub id: String,
    pub width: usize,
    pub height: usize,
}

struct EnvEntry {
    info: EnvInfo,
    lighting: Arc<Lighting>,
}

/// Shared state: the render session, training cameras and the
/// environment table. Uploads swap in new entries between requests.
pub struct ServiceState {
    session: RenderSession,
    cameras: Vec<Camera>,
    envs: RwLock<Vec<EnvEntry>>,
    next_id: RwLock<usize>,
}

impl ServiceState {
    pub fn new(session: RenderSession, cameras: Vec<Camera>, trained_env: &EnvironmentMap) -> crate::Result<Self> {
        let lighting = session.prepare_lighting(trained_env)?;
        Ok(Self {
            session,
            cameras,
            envs: RwLock::new(vec![EnvEntry {
                info: EnvInfo {
                    id: TRAINED_ENV.into(),
                    width: trained_env.width(),
                    height: trained_env.height(),
                },
                lighting,
            }]),
            next_id: RwLock::new(1),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> crate::Result<Self> {
        Self::new(RenderSession::from_checkpoint(ck)?, ck.cameras.clone(), &ck.generator.generate())
    }

    pub fn session(&self) -> &RenderSession {
        &self.session
    }

    fn lighting(&self, id: &str) -> Option<Arc<Lighting>> {
        self.envs.read().unwrap().iter().find(|e| e.info.id == id).map(|e| e.lighting.clone())
    }

    pub fn env_list(&self) -> Vec<EnvInfo> {
        self.envs.read().unwrap().iter().map(|e| e.info.clone()).collect()
    }

    /// Prefilters and registers `env`, returning its id.
    pub fn add_env(&self, env: EnvironmentMap) -> crate::Result<EnvInfo> {
        let env = fit_env(env, MAX_ENV_HEIGHT);
        let lighting = self.session.prepare_lighting(&env)?;
        let id = {
            let mut n = self.next_id.write().unwrap();
            let id = format!("env-{n}");
            *n += 1;
            id
        };
        let info = EnvInfo {
            id,
            width: env.width(),
            height: env.height(),
        };
        self.envs.write().unwrap().push(EnvEntry {
            info: info.clone(),
            lighting,
        });
        Ok(info)
    }
}

/// Explicit pose: Blender/OpenGL camera-to-world matrix and intrinsics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pose {
    pub c2w: [[f64; 4]; 4],
    pub width: usize,
    pub height: usize,
    pub camera_angle_x: f64,
}

/// Body of `POST /render`. Exactly one of `view` and `pose` is required.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderBody {
    pub view: Option<usize>,
    pub pose: Option<Pose>,
    pub mode: Option<String>,
    pub env: Option<String>,
    pub overrides: Option<MaterialOverrides>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneMeta {
    pub gaussians: usize,
    pub views: usize,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub center: [f64; 3],
    pub radius: f64,
    pub env: EnvInfo,
    pub envs: usize,
    pub modes: Vec<String>,
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, e.to_string())
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

impl ServiceState {
    /// Resolves a request body to a render request and the lighting to use.
    pub fn resolve(&self, body: &RenderBody) -> Result<(RenderRequest, Arc<Lighting>), ApiError> {
        let invalid_pose = |m: String| ApiError(StatusCode::UNPROCESSABLE_ENTITY, m);
        let camera = match (&body.view, &body.pose) {
            (Some(i), None) => *self
                .cameras
                .get(*i)
                .ok_or_else(|| invalid_pose(format!("view {i} out of range (0..{})", self.cameras.len())))?,
            (None, Some(p)) => {
                if p.width == 0 || p.height == 0 || p.width > MAX_RENDER_SIDE || p.height > MAX_RENDER_SIDE {
                    return Err(invalid_pose(format!("image size {}x{} outside 1..={MAX_RENDER_SIDE}", p.width, p.height)));
                }
                Camera::from_opengl_c2w(&p.c2w, p.width, p.height, p.camera_angle_x).map_err(|e| invalid_pose(e.to_string()))?
            }
            _ => return Err(bad_request("exactly one of `view` and `pose` is required")),
        };
        let mode = match &body.mode {
            Some(m) => m.parse::<RenderMode>().map_err(bad_request)?,
            None => RenderMode::Shaded,
        };
        let overrides = body.overrides.unwrap_or_default();
        overrides.validate().map_err(bad_request)?;
        let env_id = body.env.as_deref().unwrap_or(TRAINED_ENV);
        let lighting = self
            .lighting(env_id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown environment `{env_id}`")))?;
        Ok((RenderRequest { camera, mode, overrides }, lighting))
    }

    pub fn meta(&self) -> crate::Result<SceneMeta> {
        let scene = self.session.scene();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for g in &scene.gaussians {
            for k in 0..3 {
                lo[k] = lo[k].min(g.position[k]);
                hi[k] = hi[k].max(g.position[k]);
            }
        }
        let sphere = scene.bounding_sphere()?;
        let envs = self.env_list();
        Ok(SceneMeta {
            gaussians: scene.len(),
            views: self.cameras.len(),
            bounds_min: lo,
            bounds_max: hi,
            center: sphere.center.into(),
            radius: sphere.radius,
            env: envs[0].clone(),
            envs: envs.len(),
            modes: RenderMode::ALL.iter().map(|m| m.name().to_string()).collect(),
        })
    }
}

async fn scene_meta(State(state): State<Arc<ServiceState>>) -> Result<Json<SceneMeta>, ApiError> {
    state.meta().map(Json).map_err(internal)
}

async fn render_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let body: RenderBody = serde_json::from_slice(&body).map_err(|e| bad_request(format!("malformed render request: {e}")))?;
    let (req, lighting) = state.resolve(&body)?;
    let png = tokio::task::spawn_blocking(move || state.session.render_png(&lighting, &req))
        .await
        .map_err(internal)?
        .map_err(|e| match e {
            GirError::InvalidArgument(_) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            e => internal(e),
        })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

/// Decodes an uploaded environment by its magic bytes.
pub fn decode_env(bytes: &[u8]) -> crate::Result<EnvironmentMap> {
    if bytes.starts_with(b"PF") || bytes.starts_with(b"Pf") {
        let env = Pfm::read(bytes)?.to_env()?;
        return Ok(env);
    }
    decode_hdr(bytes)
}

async fn upload_env(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Json<EnvInfo>, ApiError> {
    let env = decode_env(&body).map_err(|e| bad_request(format!("unreadable environment: {e}")))?;
    let info = tokio::task::spawn_blocking(move || state.add_env(env))
        .await
        .map_err(internal)?
        .map_err(bad_request)?;
    Ok(Json(info))
}

async fn list_envs(State(state): State<Arc<ServiceState>>) -> Json<Vec<EnvInfo>> {
    Json(state.env_list())
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/scene/meta", get(scene_meta))
        .route("/render", post(render_handler))
        .route("/env", post(upload_env))
        .route("/envs", get(list_envs))
        .layer(axum::extract::DefaultBodyLimit::max(256 << 20))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
