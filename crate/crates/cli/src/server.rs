//! HTTP/JSON query service over loaded scenes.
//!
//! Scenes are loaded once and shared read-only; every response is a pure
//! function of the loaded scenes and the request body. Large arrays travel
//! as base64 of little-endian values (see docs/FORMATS.md).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use fieldfuse::embed::{engineer_all, Embedder};
use fieldfuse::features::FeatureMatrix;
use fieldfuse::ply::read_ply;
use fieldfuse::query::quantize_score;
use fieldfuse::tensor::load_feat;
use fieldfuse::{heatmap, segment, Error, PointCloud};
use serde::{Deserialize, Serialize};

/// Label code on the wire for points without a label.
pub const NO_LABEL_U16: u16 = u16::MAX;

/// One queryable scene: positions plus row-aligned features.
#[derive(Debug)]
pub struct SceneIndex {
    id: String,
    cloud: PointCloud,
    features: FeatureMatrix,
    embedder: Embedder,
}

impl SceneIndex {
    pub fn new(
        id: impl Into<String>,
        cloud: PointCloud,
        features: FeatureMatrix,
        embedder: Embedder,
    ) -> fieldfuse::Result<Self> {
        if cloud.len() != features.rows() {
            return Err(Error::ShapeMismatch(format!(
                "cloud has {} points, features {} rows",
                cloud.len(),
                features.rows()
            )));
        }
        if embedder.dim() != features.dim() {
            return Err(Error::DimMismatch {
                expected: features.dim(),
                found: embedder.dim(),
            });
        }
        Ok(Self {
            id: id.into(),
            cloud,
            features,
            embedder,
        })
    }

    pub fn load(
        id: &str,
        cloud: &Path,
        features: &Path,
        embedder: Embedder,
    ) -> fieldfuse::Result<Self> {
        let cloud = read_ply(cloud)?;
        let features = FeatureMatrix::from_tensor(load_feat(features)?)?;
        Self::new(id, cloud, features, embedder)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }
}

type Scenes = Arc<BTreeMap<String, SceneIndex>>;

#[derive(Debug, Serialize)]
pub struct SceneInfo {
    pub id: String,
    pub num_points: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Deserialize)]
struct StrideParam {
    stride: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct CloudResponse {
    pub stride: usize,
    pub num_points: usize,
    pub positions_f32: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    text: Option<String>,
    embedding: Option<Vec<f32>>,
    stride: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct QueryResponse {
    pub scores_u8: String,
    pub min: f32,
    pub max: f32,
    pub stride: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRequest {
    labels: Vec<String>,
    #[serde(default)]
    engineer_prompts: bool,
    stride: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct SegmentResponse {
    pub labels_u16: String,
    pub legend: Vec<String>,
    pub stride: usize,
}

/// An error response: status plus `{"error": message}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::ZeroQuery => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message });
        (self.status, Json(body)).into_response()
    }
}

pub fn router(scenes: Vec<SceneIndex>) -> Result<Router, Error> {
    if scenes.is_empty() {
        return Err(Error::InvalidConfig(
            "serve needs at least one scene".into(),
        ));
    }
    let mut map = BTreeMap::new();
    for s in scenes {
        if map.contains_key(&s.id) {
            return Err(Error::InvalidConfig(format!(
                "duplicate scene id {:?}",
                s.id
            )));
        }
        map.insert(s.id.clone(), s);
    }
    let state: Scenes = Arc::new(map);
    Ok(Router::new()
        .route("/v1/scenes", get(list_scenes))
        .route("/v1/scenes/{id}/cloud", get(cloud))
        .route("/v1/scenes/{id}/query", post(query))
        .route("/v1/scenes/{id}/segment", post(segment_scene))
        .with_state(state))
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(scenes: Vec<SceneIndex>, addr: SocketAddr) -> anyhow::Result<()> {
    let app = router(scenes)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

fn scene<'a>(scenes: &'a Scenes, id: &str) -> Result<&'a SceneIndex, ApiError> {
    scenes
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene {id:?}")))
}

fn stride_of(s: Option<usize>) -> Result<usize, ApiError> {
    match s {
        None => Ok(1),
        Some(0) => Err(ApiError::bad_request("stride must be >= 1")),
        Some(k) => Ok(k),
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn list_scenes(State(scenes): State<Scenes>) -> Json<Vec<SceneInfo>> {
    let list = scenes
        .values()
        .map(|s| SceneInfo {
            id: s.id.clone(),
            num_points: s.cloud.len(),
            feature_dim: s.features.dim(),
        })
        .collect();
    Json(list)
}

async fn cloud(
    State(scenes): State<Scenes>,
    UrlPath(id): UrlPath<String>,
    Query(p): Query<StrideParam>,
) -> Result<Json<CloudResponse>, ApiError> {
    let s = scene(&scenes, &id)?;
    let stride = stride_of(p.stride)?;
    let mut bytes = Vec::new();
    let mut n = 0;
    for p in s.cloud.positions().iter().step_by(stride) {
        for v in p {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        n += 1;
    }
    Ok(Json(CloudResponse {
        stride,
        num_points: n,
        positions_f32: B64.encode(bytes),
    }))
}

async fn query(
    State(scenes): State<Scenes>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<QueryResponse>, ApiError> {
    let s = scene(&scenes, &id)?;
    let req: QueryRequest = parse_body(&body)?;
    let stride = stride_of(req.stride)?;
    let q = match (req.text, req.embedding) {
        (Some(text), None) => {
            let set = s.embedder.embed_for_dim(&[text], s.features.dim())?;
            set.embedding(0).to_vec()
        }
        (None, Some(e)) => {
            if e.len() != s.features.dim() {
                return Err(Error::DimMismatch {
                    expected: s.features.dim(),
                    found: e.len(),
                }
                .into());
            }
            e
        }
        _ => {
            return Err(ApiError::bad_request(
                "body must hold exactly one of \"text\" or \"embedding\"",
            ))
        }
    };
    let scores = heatmap(&s.features, &q)?;
    let bytes: Vec<u8> = scores
        .iter()
        .step_by(stride)
        .map(|&v| quantize_score(v))
        .collect();
    Ok(Json(QueryResponse {
        scores_u8: B64.encode(bytes),
        min: -1.0,
        max: 1.0,
        stride,
    }))
}

async fn segment_scene(
    State(scenes): State<Scenes>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<SegmentResponse>, ApiError> {
    let s = scene(&scenes, &id)?;
    let req: SegmentRequest = parse_body(&body)?;
    let stride = stride_of(req.stride)?;
    if req.labels.is_empty() {
        return Err(ApiError::bad_request("labels must not be empty"));
    }
    if req.labels.len() >= NO_LABEL_U16 as usize {
        return Err(ApiError::bad_request("too many labels for u16 codes"));
    }
    let texts = if req.engineer_prompts {
        engineer_all(&req.labels)?
    } else {
        req.labels.clone()
    };
    let prompts = s.embedder.embed_for_dim(&texts, s.features.dim())?;
    let seg = segment(&s.features, &prompts)?;
    let mut bytes = Vec::new();
    for &l in seg.labels.iter().step_by(stride) {
        let code = if l < 0 { NO_LABEL_U16 } else { l as u16 };
        bytes.extend_from_slice(&code.to_le_bytes());
    }
    Ok(Json(SegmentResponse {
        labels_u16: B64.encode(bytes),
        legend: req.labels,
        stride,
    }))
}
