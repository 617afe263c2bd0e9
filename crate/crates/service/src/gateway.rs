//! HTTP front of the broker: job submission, status, result download,
//! worker registration and long-poll endpoints, the timeout reaper, and the
//! static web client under `/`.
//!
//! The broker is shared state behind its own lock; blocking broker calls
//! run on the blocking thread pool. Uploads are staged into a private
//! directory and moved to `staging_root/<job_id>/` while the id is
//! assigned, so handlers never write to the same files.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path as UrlPath, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures_util::StreamExt;
use p2b_core::broker::{Broker, BrokerError, Clock, JobState};
use p2b_core::vision::{parse_silhouette, ImageBuffer};
use serde::de::DeserializeOwned;
use tokio::sync::oneshot;
use tower_http::services::ServeDir;

use crate::api::{
    ErrorBody, Health, NextRequest, RegisterRequest, RegisterResponse, ReportRequest,
    SubmitResponse,
};
use crate::archive::zip_dir;
use crate::config::GatewayConfig;

pub const STAGED_SILHOUETTE: &str = "silhouette.txt";
const INCOMING_PREFIX: &str = ".incoming-";
/// Bytes of an oversize upload read and dropped past the limit before the
/// connection is cut.
const UPLOAD_DRAIN_BYTES: usize = 64 << 20;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        (
            self.status,
            Json(ErrorBody {
                error: self.message,
            }),
        )
            .into_response()
    }
}

impl From<BrokerError> for ApiError {
    fn from(e: BrokerError) -> Self {
        let status = match &e {
            BrokerError::Validation(_) => StatusCode::BAD_REQUEST,
            BrokerError::UnknownWorker(_) | BrokerError::NotFound(_) => StatusCode::NOT_FOUND,
            BrokerError::SlotTaken { .. } | BrokerError::WorkerRegistered { .. } => {
                StatusCode::CONFLICT
            }
            BrokerError::Transition { .. } | BrokerError::Progress { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            BrokerError::Closed => StatusCode::SERVICE_UNAVAILABLE,
        };
        ApiError::new(status, e.to_string())
    }
}

fn multipart_error(e: MultipartError) -> ApiError {
    ApiError::new(e.status(), format!("upload: {}", e.body_text()))
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::internal(format!("handler task failed: {e}"))
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    pub broker: Arc<Broker>,
    pub clock: Arc<dyn Clock>,
    pub config: Arc<GatewayConfig>,
    incoming: Arc<AtomicU64>,
}

impl AppState {
    /// Creates the data directories, clears per-job directories left by an
    /// earlier run (job ids restart at 1) and resolves the roots to
    /// absolute paths, since workers may run from another directory.
    pub fn prepare(mut config: GatewayConfig, clock: Arc<dyn Clock>) -> io::Result<Self> {
        config.validate().map_err(io::Error::other)?;
        for root in [&mut config.staging_root, &mut config.results_root] {
            std::fs::create_dir_all(&*root)?;
            *root = root.canonicalize()?;
            clear_job_dirs(root)?;
        }
        let broker = Arc::new(Broker::new(config.job_timeout(), clock.clone()));
        Ok(AppState {
            broker,
            clock,
            config: Arc::new(config),
            incoming: Arc::new(AtomicU64::new(0)),
        })
    }
}

fn clear_job_dirs(root: &Path) -> io::Result<()> {
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let is_job = !name.is_empty() && name.bytes().all(|b| b.is_ascii_digit());
        if entry.file_type()?.is_dir() && (is_job || name.starts_with(INCOMING_PREFIX)) {
            log::warn!("removing stale job directory {}", entry.path().display());
            std::fs::remove_dir_all(entry.path())?;
        }
    }
    Ok(())
}

pub fn router(state: AppState) -> Router {
    let static_root = state.config.static_root.clone();
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route(
            "/api/jobs",
            post(submit_job).layer(DefaultBodyLimit::disable()),
        )
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/jobs/{id}/result", get(job_result))
        .route("/api/worker/register", post(worker_register))
        .route("/api/worker/next", post(worker_next))
        .route("/api/worker/report", post(worker_report))
        .route("/api/health", get(health))
        .fallback_service(ServeDir::new(static_root))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Times out expired leases every `interval`, reading time from `clock`.
pub fn spawn_reaper(
    broker: Arc<Broker>,
    clock: Arc<dyn Clock>,
    interval: Duration,
) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(interval);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            for id in broker.reap_timeouts(clock.now()) {
                log::warn!("job {id} timed out");
            }
        }
    })
}

/// Serves until `shutdown` resolves. Blocked worker polls are released
/// when it does.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    let reaper = spawn_reaper(
        state.broker.clone(),
        state.clock.clone(),
        state.config.reap_interval(),
    );
    let broker = state.broker.clone();
    let app = router(state);
    log::info!("gateway listening on {}", listener.local_addr()?);
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            broker.close();
        })
        .await;
    reaper.abort();
    result
}

/// A gateway on its own runtime thread; stops when dropped.
pub struct GatewayHandle {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<io::Result<()>>>,
}

impl GatewayHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.shutdown_and_join()
    }

    fn shutdown_and_join(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .map_err(|_| io::Error::other("gateway thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        let _ = self.shutdown_and_join();
    }
}

/// Binds `config.listen` and serves on a background thread.
pub fn spawn(config: GatewayConfig, clock: Arc<dyn Clock>) -> io::Result<GatewayHandle> {
    let listener = std::net::TcpListener::bind(&config.listen)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let state = AppState::prepare(config, clock)?;
    let (tx, rx) = oneshot::channel();
    let thread_state = state.clone();
    let thread = std::thread::Builder::new()
        .name("p2b-gateway".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                serve(listener, thread_state, async move {
                    let _ = rx.await;
                })
                .await
            })
        })?;
    Ok(GatewayHandle {
        addr,
        state,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Reads the whole upload into memory. Past the limit the rest is read
/// and dropped (up to a cap) so the client is done sending and sees the
/// 413 instead of a reset connection.
async fn read_upload(body: Body, limit: usize) -> Result<Bytes, ApiError> {
    let drain_cap = limit.saturating_add(UPLOAD_DRAIN_BYTES);
    let mut stream = body.into_data_stream();
    let mut buf = Vec::new();
    let mut total = 0usize;
    while let Some(chunk) = stream.next().await {
        let chunk = chunk.map_err(|e| ApiError::bad_request(format!("upload: {e}")))?;
        total = total.saturating_add(chunk.len());
        if total <= limit {
            buf.extend_from_slice(&chunk);
        } else if total > drain_cap {
            break;
        }
    }
    if total > limit {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("upload exceeds {limit} bytes"),
        ));
    }
    Ok(buf.into())
}

async fn submit_job(
    State(s): State<AppState>,
    req: Request,
) -> Result<impl IntoResponse, ApiError> {
    let (parts, body) = req.into_parts();
    let body = read_upload(body, s.config.max_upload_bytes).await?;
    let mut form = Multipart::from_request(Request::from_parts(parts, Body::from(body)), &())
        .await
        .map_err(|e| ApiError::new(e.status(), format!("upload: {}", e.body_text())))?;
    let (mut image, mut silhouette) = (None, None);
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await.map_err(multipart_error)?),
            Some("silhouette") => silhouette = Some(field.bytes().await.map_err(multipart_error)?),
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing multipart field \"image\""))?;
    let silhouette = silhouette
        .ok_or_else(|| ApiError::bad_request("missing multipart field \"silhouette\""))?;
    let now = s.clock.now();
    let job_id = tokio::task::spawn_blocking(move || stage_job(&s, &image, &silhouette, now))
        .await
        .map_err(join_error)??;
    log::info!("job {job_id} queued");
    Ok((StatusCode::CREATED, Json(SubmitResponse { job_id })))
}

/// Checks the uploads the way the pipeline will read them, then stages and
/// enqueues them.
fn stage_job(
    s: &AppState,
    image: &Bytes,
    silhouette: &Bytes,
    now: DateTime<Utc>,
) -> Result<u64, ApiError> {
    let decoded = ImageBuffer::decode(image).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let text = std::str::from_utf8(silhouette).map_err(|e| {
        let line = silhouette[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1;
        ApiError::bad_request(format!(
            "silhouette format error at line {line}: not UTF-8 text"
        ))
    })?;
    let poly = parse_silhouette(text).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if (poly.image_w as usize, poly.image_h as usize) != (decoded.width, decoded.height) {
        return Err(ApiError::bad_request(format!(
            "silhouette format error at line 1: drawn on a {}x{} image but the photo is {}x{}",
            poly.image_w, poly.image_h, decoded.width, decoded.height
        )));
    }
    let image_name = if image.starts_with(b"\x89PNG") {
        "image.png"
    } else {
        "image.ppm"
    };

    let root = &s.config.staging_root;
    let tmp = root.join(format!(
        "{INCOMING_PREFIX}{}-{}",
        std::process::id(),
        s.incoming.fetch_add(1, Ordering::Relaxed)
    ));
    let write = || -> io::Result<()> {
        std::fs::create_dir_all(&tmp)?;
        std::fs::write(tmp.join(image_name), image)?;
        std::fs::write(tmp.join(STAGED_SILHOUETTE), silhouette)
    };
    if let Err(e) = write() {
        let _ = std::fs::remove_dir_all(&tmp);
        return Err(ApiError::internal(format!("staging upload: {e}")));
    }
    let staged = s.broker.enqueue_staged(now, |id| {
        let dir: PathBuf = root.join(id.to_string());
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::rename(&tmp, &dir)?;
        Ok((dir.join(image_name), dir.join(STAGED_SILHOUETTE)))
    });
    staged.map_err(|e| {
        let _ = std::fs::remove_dir_all(&tmp);
        match e {
            BrokerError::Validation(m) => ApiError::internal(m),
            e => e.into(),
        }
    })
}

async fn job_status(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<u64>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.broker.get_status(id)?))
}

async fn job_result(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<u64>,
) -> Result<Response, ApiError> {
    let status = s.broker.get_status(id)?;
    match status.state {
        JobState::Completed => {}
        JobState::Queued | JobState::Running => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("job {id} is {}; no result yet", status.state),
            ))
        }
        JobState::Failed | JobState::Timeout => {
            return Err(ApiError::new(
                StatusCode::GONE,
                format!("job {id} {}: {}", status.state, status.message),
            ))
        }
    }
    let dir = s.config.results_root.join(id.to_string());
    let bytes = tokio::task::spawn_blocking(move || {
        if !dir.join(p2b_core::grammar::OBJ_FILE).is_file() {
            return Err(ApiError::internal(format!(
                "job {id} completed but {} has no model",
                dir.display()
            )));
        }
        zip_dir(&dir).map_err(ApiError::internal)
    })
    .await
    .map_err(join_error)??;
    let disposition = format!("attachment; filename=\"job-{id}.zip\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

async fn worker_register(
    State(s): State<AppState>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let req: RegisterRequest = parse_body(&body)?;
    s.broker.register_worker(&req.worker_id, req.slot_id)?;
    log::info!(
        "worker {} registered on slot {}",
        req.worker_id,
        req.slot_id
    );
    Ok(Json(RegisterResponse {
        worker_id: req.worker_id,
        slot_id: req.slot_id,
        results_root: s.config.results_root.clone(),
        job_timeout_s: s.config.job_timeout_s,
    }))
}

async fn worker_next(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: NextRequest = parse_body(&body)?;
    let cap = s.config.max_poll_wait_s;
    let wait = req.max_wait_s.unwrap_or(cap);
    if !(wait >= 0.0 && wait.is_finite()) {
        return Err(ApiError::bad_request(
            "max_wait_s must be a non-negative number",
        ));
    }
    let wait = Duration::from_secs_f64(wait.min(cap));
    let broker = s.broker.clone();
    let msg = tokio::task::spawn_blocking(move || broker.dequeue_blocking(&req.worker_id, wait))
        .await
        .map_err(join_error)??;
    Ok(match msg {
        Some(m) => Json(m).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn worker_report(
    State(s): State<AppState>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let req: ReportRequest = parse_body(&body)?;
    let status = s.broker.set_status(
        req.job_id,
        req.state,
        req.progress,
        &req.message,
        s.clock.now(),
    )?;
    if status.state.is_terminal() {
        log::info!("job {} {}", status.job_id, status.state);
    }
    Ok(Json(status))
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health {
        workers: s.broker.worker_count(),
        queued: s.broker.queue_len(),
        running: s.broker.running_count(),
    })
}
