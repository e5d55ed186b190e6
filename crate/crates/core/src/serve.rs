//! HTTP prediction service: per-case inference with attention traces, fact
//! certainty buckets, fact-probability overrides and model metadata.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{tokenize, Claim, EncodedCase, FactLabel, Judgment, Limits, Utterance, FACT_COUNT};
use crate::model::{Ablation, FactOverrides, ForwardTrace};
use crate::tensor::TensorError;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Certain,
    Uncertain,
    Other,
}

/// Certain above 0.7, uncertain on [0.45, 0.55], other elsewhere.
pub fn bucket(p: f64) -> Bucket {
    if p > 0.7 {
        Bucket::Certain
    } else if (0.45..=0.55).contains(&p) {
        Bucket::Uncertain
    } else {
        Bucket::Other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimText {
    pub text: String,
}

/// A case without gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePayload {
    #[serde(default)]
    pub case_id: Option<String>,
    pub claims: Vec<ClaimText>,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRequest {
    pub case: CasePayload,
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimPrediction {
    pub index: usize,
    pub text: String,
    /// Tokens the model read, after truncation.
    pub tokens: Vec<String>,
    /// Probabilities in `judgment_labels` order.
    pub distribution: Vec<f64>,
    pub label: Judgment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactPrediction {
    pub label: FactLabel,
    /// The probability that scaled the fact memory.
    pub probability: f64,
    pub model_probability: f64,
    pub bucket: Bucket,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceView {
    pub index: usize,
    pub role: crate::corpus::Role,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub schema_version: String,
    pub case_id: Option<String>,
    pub checkpoint_hash: String,
    pub judgment_labels: Vec<Judgment>,
    pub claims: Vec<ClaimPrediction>,
    /// Utterances the model read, after truncation; attention columns index these.
    pub utterances: Vec<UtteranceView>,
    /// Empty for models without a fact head.
    pub facts: Vec<FactPrediction>,
    pub trace: ForwardTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub word_dim: usize,
    pub role_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub schema_version: String,
    pub dims: Dims,
    pub hops: usize,
    pub vocab_size: usize,
    pub parameter_count: usize,
    pub checkpoint_hash: String,
    pub ablation: Ablation,
    pub limits: Limits,
    pub fact_labels: Vec<FactLabel>,
    pub judgment_labels: Vec<Judgment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: String,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION.into(),
            error: self.message,
            field: self.field,
        };
        (self.status, Json(body)).into_response()
    }
}

struct Loaded {
    checkpoint: Checkpoint,
    hash: String,
}

/// Shared service state. Requests take a snapshot of the loaded model, so a
/// reload never exposes a partially replaced model.
#[derive(Default)]
pub struct ServiceState {
    current: RwLock<Option<Arc<Loaded>>>,
}

impl ServiceState {
    pub fn empty() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn with_checkpoint(checkpoint: Checkpoint) -> Arc<Self> {
        let s = Self::empty();
        s.load(checkpoint);
        s
    }

    /// Swaps in a new model.
    pub fn load(&self, checkpoint: Checkpoint) {
        let hash = checkpoint.hash();
        let loaded = Arc::new(Loaded { checkpoint, hash });
        *self.current.write().expect("state lock") = Some(loaded);
    }

    pub fn unload(&self) {
        *self.current.write().expect("state lock") = None;
    }

    fn snapshot(&self) -> Result<Arc<Loaded>, ApiError> {
        self.current
            .read()
            .expect("state lock")
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/predict_with_overrides", post(predict_with_overrides))
        .route("/model/info", get(model_info))
        .with_state(state)
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let missing = inner.to_string();
        // A missing field is reported at its parent; name the field itself.
        let field = match missing
            .strip_prefix("missing field `")
            .and_then(|s| s.split('`').next())
        {
            Some(name) if path == "." => name.to_string(),
            Some(name) => format!("{path}.{name}"),
            None => path,
        };
        ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("invalid request at `{field}`: {inner}"),
        )
        .field(field)
    })
}

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, msg)
}

/// Encodes a payload with the checkpoint's vocabulary and limits.
pub fn encode_payload(ck: &Checkpoint, payload: &CasePayload) -> Result<EncodedCase, ApiError> {
    if payload.claims.is_empty() {
        return Err(unprocessable("case has no claims").field("claims"));
    }
    if payload.utterances.is_empty() {
        return Err(unprocessable("case has no utterances").field("utterances"));
    }
    if let Some(i) = payload.claims.iter().position(|c| tokenize(&c.text).is_empty()) {
        return Err(unprocessable(format!("claim {i} has no tokens")).field(format!("claims[{i}].text")));
    }
    if let Some(i) = payload.utterances.iter().position(|u| tokenize(&u.text).is_empty()) {
        return Err(unprocessable(format!("utterance {i} has no tokens")).field(format!("utterances[{i}].text")));
    }
    let claims: Vec<Claim> = payload
        .claims
        .iter()
        .map(|c| Claim {
            text: c.text.clone(),
            kind: None,
        })
        .collect();
    let id = payload.case_id.as_deref().unwrap_or("request");
    EncodedCase::from_parts(id, &claims, &payload.utterances, None, &ck.vocab, &ck.limits)
        .map_err(|e| unprocessable(e.to_string()))
}

fn parse_overrides(raw: &BTreeMap<String, f64>) -> Result<FactOverrides, ApiError> {
    let mut out = FactOverrides::none();
    for (name, &value) in raw {
        let field = format!("overrides.{name}");
        let label: FactLabel = name.parse().map_err(|_| {
            ApiError::new(StatusCode::BAD_REQUEST, format!("unknown fact label `{name}`")).field(&field)
        })?;
        out.set(label, value)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()).field(&field))?;
    }
    Ok(out)
}

/// Runs the model and assembles the wire response; shared by both
/// prediction endpoints and usable without HTTP.
pub fn respond(
    ck: &Checkpoint,
    hash: &str,
    payload: &CasePayload,
    overrides: &FactOverrides,
) -> Result<PredictionResponse, ApiError> {
    let encoded = encode_payload(ck, payload)?;
    let trace = ck.model.infer(&encoded, overrides).map_err(|e| match e {
        TensorError::Contract(msg) => unprocessable(msg),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    })?;
    let limits = ck.limits;
    let truncated = |text: &str, max: usize| {
        let mut t = tokenize(text);
        t.truncate(max);
        t
    };
    let claims = trace
        .predictions()
        .into_iter()
        .enumerate()
        .map(|(i, label)| ClaimPrediction {
            index: i,
            text: payload.claims[i].text.clone(),
            tokens: truncated(&payload.claims[i].text, limits.max_claim_len),
            distribution: trace.claim_probs[i].clone(),
            label,
        })
        .collect();
    let utterances = payload
        .utterances
        .iter()
        .take(encoded.num_utterances())
        .enumerate()
        .map(|(i, u)| UtteranceView {
            index: i,
            role: u.role,
            tokens: truncated(&u.text, limits.max_utterance_len),
        })
        .collect();
    let facts = match (&trace.fact_probs, &trace.model_fact_probs) {
        (Some(used), Some(model)) => (0..FACT_COUNT)
            .map(|p| FactPrediction {
                label: FactLabel::from_index(p).expect("fact index"),
                probability: used[p],
                model_probability: model[p],
                bucket: bucket(used[p]),
                overridden: overrides.0[p].is_some(),
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(PredictionResponse {
        schema_version: SCHEMA_VERSION.into(),
        case_id: payload.case_id.clone(),
        checkpoint_hash: hash.to_string(),
        judgment_labels: Judgment::ALL.to_vec(),
        claims,
        utterances,
        facts,
        trace,
    })
}

async fn run(state: Arc<ServiceState>, payload: CasePayload, overrides: FactOverrides) -> Result<Response, ApiError> {
    let loaded = state.snapshot()?;
    let result = tokio::task::spawn_blocking(move || respond(&loaded.checkpoint, &loaded.hash, &payload, &overrides))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(result).into_response())
}

async fn predict(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    state.snapshot()?;
    let payload: CasePayload = parse(&body)?;
    run(state, payload, FactOverrides::none()).await
}

async fn predict_with_overrides(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    state.snapshot()?;
    let req: OverrideRequest = parse(&body)?;
    let overrides = parse_overrides(&req.overrides)?;
    run(state, req.case, overrides).await
}

async fn model_info(State(state): State<Arc<ServiceState>>) -> Result<Json<ModelInfo>, ApiError> {
    let loaded = state.snapshot()?;
    Ok(Json(info(&loaded.checkpoint, &loaded.hash)))
}

pub fn info(ck: &Checkpoint, hash: &str) -> ModelInfo {
    let cfg = ck.model.config();
    ModelInfo {
        schema_version: SCHEMA_VERSION.into(),
        dims: Dims {
            word_dim: cfg.word_dim,
            role_dim: cfg.role_dim,
            hidden: cfg.hidden,
        },
        hops: cfg.hops,
        vocab_size: cfg.vocab_size,
        parameter_count: ck.model.parameter_count(),
        checkpoint_hash: hash.to_string(),
        ablation: cfg.ablation,
        limits: ck.limits,
        fact_labels: FactLabel::ALL.to_vec(),
        judgment_labels: Judgment::ALL.to_vec(),
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(checkpoint: Checkpoint, host: &str, port: u16) -> anyhow::Result<()> {
    let app = router(ServiceState::with_checkpoint(checkpoint));
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
