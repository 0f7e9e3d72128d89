//! HTTP service: design resolution, simulation, curves and reports, with
//! an in-memory job registry for long computations.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::design::{
    design_curves, resolve_design, runtime_warnings, simulate_design, Design, DesignReport, Warning,
};
use crate::error::{Error, FieldError};
use crate::opchar::{MAX_QUALITY, MIN_QUALITY};
use crate::report::{render, ReportFormat};
use crate::scenario::DesignScenario;

pub const DEFAULT_FAST_PATH_MAX_K: usize = 3;
pub const DEFAULT_REPLICATES: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Maximum number of computations running at once.
    pub workers: usize,
    /// Single-step designs with at most this many arms are answered
    /// synchronously. `None` disables the fast path.
    pub fast_path_max_k: Option<usize>,
    /// Job registry snapshot file, rewritten after every state change.
    pub persist_path: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            fast_path_max_k: Some(DEFAULT_FAST_PATH_MAX_K),
            persist_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub state: JobState,
    pub scenario: DesignScenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<DesignReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
    /// Milliseconds since the Unix epoch.
    pub created: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished: Option<u64>,
    pub warnings: Vec<Warning>,
}

#[derive(Default, Serialize, Deserialize)]
struct Registry {
    jobs: HashMap<String, JobRecord>,
    /// Canonical scenario text to the job that resolves it.
    #[serde(skip)]
    by_scenario: HashMap<String, String>,
}

pub struct AppState {
    config: ServiceConfig,
    registry: Mutex<Registry>,
    permits: Arc<Semaphore>,
    prefix: u32,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let mut registry = Registry::default();
        if let Some(path) = &config.persist_path {
            if let Ok(text) = std::fs::read_to_string(path) {
                if let Ok(saved) = serde_json::from_str::<Registry>(&text) {
                    registry = saved;
                }
            }
            for job in registry.jobs.values_mut() {
                if matches!(job.state, JobState::Queued | JobState::Running) {
                    job.state = JobState::Failed;
                    job.finished = Some(now_ms());
                    job.error = Some(JobError {
                        kind: "interrupted".into(),
                        message: "service restarted before the job finished".into(),
                        fields: Vec::new(),
                    });
                }
            }
            registry.by_scenario = registry
                .jobs
                .values()
                .filter(|j| j.state == JobState::Done)
                .map(|j| (canonical(&j.scenario), j.id.clone()))
                .collect();
        }
        Arc::new(Self {
            permits: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
            registry: Mutex::new(registry),
            prefix: rand::random(),
            counter: AtomicU64::new(0),
        })
    }

    pub fn job(&self, id: &str) -> Option<JobRecord> {
        self.registry.lock().unwrap().jobs.get(id).cloned()
    }

    fn next_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("{:08x}-{n:08x}", self.prefix)
    }

    fn fast_path(&self, s: &DesignScenario) -> bool {
        self.config
            .fast_path_max_k
            .is_some_and(|k| s.mcc.is_single_step() && s.k <= k)
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        let mut reg = self.registry.lock().unwrap();
        if let Some(job) = reg.jobs.get_mut(id) {
            f(job);
        }
        self.persist(&reg);
    }

    fn persist(&self, reg: &Registry) {
        let Some(path) = &self.config.persist_path else {
            return;
        };
        let text = serde_json::to_string(reg).expect("registry serialises");
        let tmp = path.with_extension("tmp");
        if std::fs::write(&tmp, text).is_ok() {
            let _ = std::fs::rename(&tmp, path);
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/designs", post(post_design))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/simulate", post(post_simulate))
        .route("/v1/curves", post(post_curves))
        .route("/v1/reports", post(post_report))
        .route("/v1/health", get(health))
        .route("/v1/defaults", get(defaults))
        .with_state(state)
}

/// Serves `router` on `addr` until interrupted.
pub async fn serve(addr: &str, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn canonical(s: &DesignScenario) -> String {
    serde_json::to_string(s).expect("scenario serialises")
}

fn job_error(e: &Error) -> JobError {
    JobError {
        kind: if e.is_validation() { "validation" } else { "numeric" }.into(),
        message: e.to_string(),
        fields: match e {
            Error::Validation(f) => f.clone(),
            _ => Vec::new(),
        },
    }
}

fn error_response(e: &Error) -> Response {
    let status = if e.is_validation() {
        StatusCode::BAD_REQUEST
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    (status, Json(job_error(e))).into_response()
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, Error> {
    let text = std::str::from_utf8(body).map_err(|e| Error::validation("$", format!("body is not UTF-8: {e}")))?;
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let field = match e.path().to_string() {
            p if p == "." || inner.is_syntax() || inner.is_eof() => "$".to_string(),
            p => p,
        };
        Error::validation(
            field,
            format!("{} (line {}, column {})", inner, inner.line(), inner.column()),
        )
    })
}

async fn compute<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce() -> Result<T, Error> + Send + 'static,
) -> Result<T, Error> {
    let _permit = state.permits.acquire().await.expect("semaphore open");
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(Error::Numeric(format!("worker failed: {e}"))))
}

async fn post_design(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let scenario = match std::str::from_utf8(&body)
        .map_err(|e| Error::validation("$", format!("body is not UTF-8: {e}")))
        .and_then(DesignScenario::from_json)
    {
        Ok(s) => s,
        Err(e) => return error_response(&e),
    };
    let warnings = runtime_warnings(&scenario);

    if state.fast_path(&scenario) {
        let s = scenario.clone();
        return match compute(&state, move || resolve_design(&s)).await {
            Ok(report) => (
                StatusCode::OK,
                Json(json!({ "state": JobState::Done, "warnings": warnings, "result": report })),
            )
                .into_response(),
            Err(e) => error_response(&e),
        };
    }

    let key = canonical(&scenario);
    let id = {
        let mut reg = state.registry.lock().unwrap();
        if let Some(id) = reg.by_scenario.get(&key).cloned() {
            let job = &reg.jobs[&id];
            if job.state != JobState::Failed {
                let code = if job.state == JobState::Done {
                    StatusCode::OK
                } else {
                    StatusCode::ACCEPTED
                };
                return (code, Json(job_view(job))).into_response();
            }
        }
        let id = state.next_id();
        reg.jobs.insert(
            id.clone(),
            JobRecord {
                id: id.clone(),
                state: JobState::Queued,
                scenario: scenario.clone(),
                result: None,
                error: None,
                created: now_ms(),
                finished: None,
                warnings: warnings.clone(),
            },
        );
        reg.by_scenario.insert(key, id.clone());
        state.persist(&reg);
        id
    };

    let worker = state.clone();
    let job_id = id.clone();
    tokio::spawn(async move {
        let permit = worker.permits.clone().acquire_owned().await.expect("semaphore open");
        worker.update(&job_id, |j| j.state = JobState::Running);
        let outcome = tokio::task::spawn_blocking(move || resolve_design(&scenario))
            .await
            .unwrap_or_else(|e| Err(Error::Numeric(format!("worker failed: {e}"))));
        drop(permit);
        worker.update(&job_id, |j| {
            j.finished = Some(now_ms());
            match outcome {
                Ok(report) => {
                    j.state = JobState::Done;
                    j.result = Some(report);
                }
                Err(e) => {
                    j.state = JobState::Failed;
                    j.error = Some(job_error(&e));
                }
            }
        });
    });

    let job = state.job(&id).expect("job just inserted");
    (StatusCode::ACCEPTED, Json(job_view(&job))).into_response()
}

fn job_view(job: &JobRecord) -> Value {
    let mut v = serde_json::to_value(job).expect("job serialises");
    v["job_id"] = Value::String(job.id.clone());
    v
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.job(&id) {
        Some(job) => Json(job_view(&job)).into_response(),
        None => (
            StatusCode::NOT_FOUND,
            Json(JobError {
                kind: "not_found".into(),
                message: format!("no job with id {id}"),
                fields: Vec::new(),
            }),
        )
            .into_response(),
    }
}

/// A design as returned by `/v1/designs` or stored in a design file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DesignInput {
    Report(Box<DesignReport>),
    Design(Box<Design>),
}

impl DesignInput {
    pub fn design(self) -> Design {
        match self {
            DesignInput::Report(r) => r.design,
            DesignInput::Design(d) => *d,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRequest {
    design: DesignInput,
    #[serde(default = "default_replicates")]
    replicates: u64,
    #[serde(default = "default_seed")]
    seed: u64,
}

fn default_replicates() -> u64 {
    DEFAULT_REPLICATES
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

async fn post_simulate(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: SimulateRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&e),
    };
    let design = req.design.design();
    if let Err(e) = design.scenario.validate() {
        return error_response(&e);
    }
    match compute(&state, move || simulate_design(&design, req.replicates, req.seed)).await {
        Ok(report) => Json(report).into_response(),
        Err(e) => error_response(&e),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurvesRequest {
    design: DesignInput,
    #[serde(default)]
    quality: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct FormatQuery {
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    name: Option<String>,
}

async fn post_curves(
    State(state): State<Arc<AppState>>,
    Query(q): Query<FormatQuery>,
    body: Bytes,
) -> Response {
    let req: CurvesRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&e),
    };
    let design = req.design.design();
    let quality = req.quality.unwrap_or(design.scenario.plot.quality);
    if !(MIN_QUALITY..=MAX_QUALITY).contains(&quality) {
        return error_response(&Error::validation(
            "quality",
            format!("must lie in [{MIN_QUALITY}, {MAX_QUALITY}], got {quality}"),
        ));
    }
    let csv = q.format.as_deref() == Some("csv");
    match compute(&state, move || design_curves(&design, quality)).await {
        Ok(c) if csv => ([(header::CONTENT_TYPE, "text/csv")], c.to_csv()).into_response(),
        Ok(c) => Json(c).into_response(),
        Err(e) => error_response(&e),
    }
}

async fn post_report(Query(q): Query<FormatQuery>, body: Bytes) -> Response {
    let format = match q.format.as_deref().unwrap_or("html").parse::<ReportFormat>() {
        Ok(f) => f,
        Err(e) => return error_response(&e),
    };
    let report: DesignReport = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&e),
    };
    let name = q.name.unwrap_or_else(|| "report".into());
    let file = format!("{}.{}", sanitize(&name), format.extension());
    let content_type = match format {
        ReportFormat::Md => "text/markdown; charset=utf-8",
        ReportFormat::Html => "text/html; charset=utf-8",
    };
    (
        [
            (header::CONTENT_TYPE, content_type.to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{file}\"")),
        ],
        render(&report, format, None),
    )
        .into_response()
}

fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() { "report".into() } else { s }
}

async fn health() -> Json<Value> {
    Json(json!({
        "status": "ok",
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

async fn defaults() -> Json<DesignScenario> {
    Json(DesignScenario::defaults())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitize_keeps_safe_names() {
        assert_eq!(sanitize("myeloma_design"), "myeloma_design");
        assert_eq!(sanitize("a/b c"), "a_b_c");
        assert_eq!(sanitize(""), "report");
    }

    #[test]
    fn ids_are_unique() {
        let s = AppState::new(ServiceConfig::default());
        let a = s.next_id();
        let b = s.next_id();
        assert_ne!(a, b);
    }

    #[test]
    fn parse_errors_carry_location() {
        let e = parse_body::<SimulateRequest>(b"{\"design\": ").unwrap_err();
        match e {
            Error::Validation(f) => {
                assert_eq!(f[0].field, "$");
                assert!(f[0].message.contains("line 1"));
            }
            e => panic!("unexpected {e}"),
        }
    }
}
