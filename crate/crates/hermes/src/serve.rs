//! HTTP inference service.
//!
//! `POST /api/v1/recommend`, `POST /api/v1/ddi-check` and `GET /healthz`.
//! The model and graphs are loaded once and shared read-only; a response
//! depends only on them and the request body.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hermes_core::ddi::{build_ddi_graph, check_interactions, check_interactions_by_code, DdiGraph, DdiRecord, Interaction};
use hermes_core::ehr::{CodeKind, CodeVocab, PatientRecord, Visit, Vocabs};
use hermes_core::model::{threshold_set, InferenceSession, Model};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::Result;

pub const DISCLAIMER: &str = "These suggestions are informational and do not replace a pharmacist or doctor. \
Every medicine can cause side effects; read the package leaflet and ask a pharmacist before combining medicines. \
Seek medical care if symptoms are severe, persist or worsen.";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryVisit {
    #[serde(default)]
    pub dx: Vec<String>,
    #[serde(default)]
    pub px: Vec<String>,
    #[serde(default)]
    pub rx: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub diagnoses: Vec<String>,
    #[serde(default)]
    pub procedures: Vec<String>,
    #[serde(default)]
    pub history: Vec<HistoryVisit>,
    #[serde(default)]
    pub current_medications: Vec<String>,
    #[serde(default)]
    pub red_flags: Vec<String>,
    /// Vocabulary identifier the client was built against.
    #[serde(default)]
    pub vocab_version: Option<String>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Triage {
    SelfCare,
    ConsultPharmacist,
    ReferToDoctor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub atc3: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdiWarning {
    pub drug_a: String,
    pub drug_b: String,
    pub interaction_type: String,
    pub severity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub recommendations: Vec<Recommendation>,
    pub ddi_warnings: Vec<DdiWarning>,
    pub triage: Triage,
    pub disclaimer: String,
    /// Dropped codes and unrecognized flags.
    pub warnings: Vec<String>,
    pub model_version: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdiCheckRequest {
    pub medications: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdiCheckResponse {
    pub warnings: Vec<DdiWarning>,
    pub unknown: Vec<String>,
    pub disclaimer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: Option<String>,
}

#[derive(Debug, PartialEq)]
pub enum ApiError {
    BadRequest(String),
    Conflict(String),
    Unavailable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

/// Normalizes a symptom tag: lowercase, spaces and dashes as underscores.
pub fn normalize_flag(s: &str) -> String {
    s.trim().to_lowercase().chars().map(|c| if c == ' ' || c == '-' { '_' } else { c }).collect()
}

/// Known codes as indices (first occurrence order); unknown codes are
/// noted in `warnings`.
fn resolve_codes(vocab: &CodeVocab, codes: &[String], warnings: &mut Vec<String>) -> Vec<usize> {
    let mut out = Vec::new();
    for c in codes {
        match vocab.get(c) {
            Some(i) if !out.contains(&i) => out.push(i),
            Some(_) => {}
            None => warnings.push(format!("unknown {} code {c:?} ignored", vocab.kind().name())),
        }
    }
    out
}

/// Interaction graph with the vocabulary it is indexed by.
#[derive(Clone, Debug)]
pub struct DdiIndex {
    pub vocab: CodeVocab,
    pub graph: DdiGraph,
}

impl DdiIndex {
    /// Vocabulary made of every code named in `records`.
    pub fn from_records(records: &[DdiRecord], top_k: usize) -> Result<Self> {
        let codes: BTreeSet<&str> = records.iter().flat_map(|r| [r.atc3_a.as_str(), r.atc3_b.as_str()]).collect();
        let vocab = CodeVocab::new(CodeKind::Medication, codes.into_iter().map(String::from).collect())?;
        let graph = build_ddi_graph(records, &vocab, top_k)?;
        Ok(DdiIndex { vocab, graph })
    }

    fn warning(&self, i: &Interaction) -> DdiWarning {
        DdiWarning {
            drug_a: self.vocab.code(i.a).unwrap_or_default().into(),
            drug_b: self.vocab.code(i.b).unwrap_or_default().into(),
            interaction_type: i.interaction_type.clone(),
            severity: i.severity,
        }
    }

    pub fn check(&self, req: &DdiCheckRequest) -> DdiCheckResponse {
        let report = check_interactions_by_code(&req.medications, &self.vocab, &self.graph);
        DdiCheckResponse {
            warnings: report.interactions.iter().map(|i| self.warning(i)).collect(),
            unknown: report.unknown,
            disclaimer: DISCLAIMER.into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServeSettings {
    pub top_k: usize,
    pub filter_ddi: bool,
    pub red_flags: Vec<String>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        let c = crate::config::ServeConfig::default();
        ServeSettings { top_k: c.top_k, filter_ddi: c.filter_ddi, red_flags: c.red_flags }
    }
}

pub struct Engine {
    model: Model<f32>,
    vocabs: Vocabs,
    ddi: Arc<DdiIndex>,
    vocab_version: String,
    model_version: String,
    settings: ServeSettings,
}

impl Engine {
    /// Warnings use `ddi_records` when given (graph rebuilt over the
    /// checkpoint's vocabulary), otherwise the checkpoint's own graph.
    pub fn new(ck: &Checkpoint, ddi_records: Option<(&[DdiRecord], usize)>, settings: ServeSettings) -> Result<Self> {
        let graph = match ddi_records {
            Some((records, top_k)) => build_ddi_graph(records, &ck.vocabs.medications, top_k)?,
            None => ck.ddi_graph()?,
        };
        Ok(Engine {
            model: ck.model()?,
            vocabs: ck.vocabs.clone(),
            ddi: Arc::new(DdiIndex { vocab: ck.vocabs.medications.clone(), graph }),
            vocab_version: ck.manifest.vocab_version.clone(),
            model_version: ck.model_version(),
            settings,
        })
    }

    pub fn ddi(&self) -> Arc<DdiIndex> {
        self.ddi.clone()
    }

    pub fn vocab_version(&self) -> &str {
        &self.vocab_version
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn recommend(&self, req: &RecommendRequest) -> Result<RecommendResponse, ApiError> {
        if let Some(v) = &req.vocab_version {
            if *v != self.vocab_version {
                return Err(ApiError::Conflict(format!(
                    "vocab_version {v} does not match the loaded model ({})",
                    self.vocab_version
                )));
            }
        }
        if req.diagnoses.is_empty() {
            return Err(ApiError::BadRequest("diagnoses must not be empty".into()));
        }
        let mut warnings = Vec::new();
        let dx = resolve_codes(&self.vocabs.diagnoses, &req.diagnoses, &mut warnings);
        let px = resolve_codes(&self.vocabs.procedures, &req.procedures, &mut warnings);
        let current = resolve_codes(&self.vocabs.medications, &req.current_medications, &mut warnings);
        let mut visits = Vec::new();
        for (k, h) in req.history.iter().enumerate() {
            let visit = Visit {
                diagnoses: resolve_codes(&self.vocabs.diagnoses, &h.dx, &mut warnings),
                procedures: resolve_codes(&self.vocabs.procedures, &h.px, &mut warnings),
                medications: {
                    let mut m = resolve_codes(&self.vocabs.medications, &h.rx, &mut warnings);
                    m.sort_unstable();
                    m
                },
            };
            if visit.diagnoses.is_empty() {
                warnings.push(format!("history visit {} has no known diagnoses and was skipped", k + 1));
            } else {
                visits.push(visit);
            }
        }
        if dx.is_empty() {
            return Err(ApiError::BadRequest("none of the diagnosis codes are known".into()));
        }

        let mut urgent = false;
        for flag in &req.red_flags {
            let f = normalize_flag(flag);
            if self.settings.red_flags.iter().any(|r| normalize_flag(r) == f) {
                urgent = true;
            } else {
                warnings.push(format!("unrecognized red flag {flag:?}"));
            }
        }
        if urgent {
            let ddi_warnings = check_interactions(&current, &self.ddi.graph).iter().map(|i| self.ddi.warning(i)).collect();
            return Ok(self.response(Vec::new(), ddi_warnings, Triage::ReferToDoctor, warnings));
        }

        visits.push(Visit { diagnoses: dx, procedures: px, medications: Vec::new() });
        let t = visits.len();
        let patient = PatientRecord { patient_id: "request".into(), visits };
        let session = InferenceSession::new(&self.model).map_err(|e| ApiError::Internal(e.to_string()))?;
        let scores = session
            .scores(&patient, t, t)
            .map_err(|e| ApiError::Internal(e.to_string()))?
            .pop()
            .expect("one visit scored");

        let mut ranked = threshold_set(&scores, self.model.config.decision_threshold);
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let top_k = req.top_k.unwrap_or(self.settings.top_k).max(1);
        let mut chosen: Vec<usize> = Vec::new();
        for d in ranked {
            if chosen.len() == top_k {
                break;
            }
            let conflicts = || current.iter().chain(&chosen).any(|&o| o != d && self.ddi.graph.adjacency.has_edge(d, o));
            if self.settings.filter_ddi && conflicts() {
                continue;
            }
            chosen.push(d);
        }

        // pairs among the recommendations and the user's own medicines
        let mut pool = chosen.clone();
        pool.extend(current.iter().filter(|m| !chosen.contains(m)));
        let ddi_warnings: Vec<DdiWarning> =
            check_interactions(&pool, &self.ddi.graph).iter().map(|i| self.ddi.warning(i)).collect();
        let triage = if ddi_warnings.is_empty() { Triage::SelfCare } else { Triage::ConsultPharmacist };
        let recommendations = chosen
            .iter()
            .enumerate()
            .map(|(k, &d)| Recommendation {
                atc3: self.vocabs.medications.code(d).unwrap_or_default().into(),
                score: scores[d],
                rank: k + 1,
            })
            .collect();
        Ok(self.response(recommendations, ddi_warnings, triage, warnings))
    }

    fn response(&self, recs: Vec<Recommendation>, ddi: Vec<DdiWarning>, triage: Triage, warnings: Vec<String>) -> RecommendResponse {
        RecommendResponse {
            recommendations: recs,
            ddi_warnings: ddi,
            triage,
            disclaimer: DISCLAIMER.into(),
            warnings,
            model_version: self.model_version.clone(),
        }
    }
}

/// Shared handler state. Either part may be missing, in which case the
/// endpoints needing it answer 503.
#[derive(Clone, Default)]
pub struct Service {
    pub engine: Option<Arc<Engine>>,
    pub ddi: Option<Arc<DdiIndex>>,
}

impl Service {
    pub fn unloaded() -> Self {
        Service::default()
    }

    pub fn with_engine(engine: Engine) -> Self {
        let ddi = Some(engine.ddi());
        Service { engine: Some(Arc::new(engine)), ddi }
    }

    pub fn ddi_only(index: DdiIndex) -> Self {
        Service { engine: None, ddi: Some(Arc::new(index)) }
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}

async fn recommend(State(s): State<Service>, body: Bytes) -> Result<Json<RecommendResponse>, ApiError> {
    let engine = s.engine.ok_or_else(|| ApiError::Unavailable("model not loaded".into()))?;
    let req: RecommendRequest = parse_body(&body)?;
    engine.recommend(&req).map(Json)
}

async fn ddi_check(State(s): State<Service>, body: Bytes) -> Result<Json<DdiCheckResponse>, ApiError> {
    let ddi = s.ddi.ok_or_else(|| ApiError::Unavailable("interaction graph not loaded".into()))?;
    let req: DdiCheckRequest = parse_body(&body)?;
    Ok(Json(ddi.check(&req)))
}

async fn healthz(State(s): State<Service>) -> (StatusCode, Json<Health>) {
    match &s.engine {
        Some(e) => (StatusCode::OK, Json(Health { status: "ok".into(), model_version: Some(e.model_version.clone()) })),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(Health { status: "unavailable".into(), model_version: None })),
    }
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/api/v1/recommend", post(recommend))
        .route("/api/v1/ddi-check", post(ddi_check))
        .route("/healthz", get(healthz))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn run(addr: SocketAddr, service: Service) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
