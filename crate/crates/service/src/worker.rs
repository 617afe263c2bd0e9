//! The slot-pinned worker: loads the style library once, registers its
//! slot, then long-polls the gateway and runs one job at a time.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use p2b_core::broker::{JobMessage, JobState};
use p2b_core::pipeline::{
    reconstruct, PipelineConfig, ReconstructionRequest, ReconstructionResult, StyleLibrary,
};
use p2b_core::vision::{parse_silhouette, ImageBuffer};
use reqwest::StatusCode;

use crate::api::RESULT_SUMMARY_FILE;
use crate::client::{ClientError, GatewayClient};
use crate::config::WorkerConfig;

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("style library: {0}")]
    Library(String),
    #[error("pipeline config: {0}")]
    Pipeline(String),
    #[error("registration rejected: {0}")]
    Registration(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("invalid worker config: {0}")]
    Config(String),
}

/// Loads the library the worker keeps for its whole life.
pub fn preload(library_path: &Path) -> Result<StyleLibrary, WorkerError> {
    StyleLibrary::load(library_path).map_err(|e| WorkerError::Library(e.to_string()))
}

/// What happened to one job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobOutcome {
    pub job_id: u64,
    pub state: JobState,
    pub message: String,
}

pub struct Worker {
    id: String,
    slot: u32,
    library: StyleLibrary,
    pipeline: PipelineConfig,
    client: GatewayClient,
    results_root: PathBuf,
    poll_wait: Duration,
}

impl Worker {
    /// Preloads the library, then claims the slot. A bad library stops the
    /// worker before it registers.
    pub fn start(cfg: &WorkerConfig) -> Result<Self, WorkerError> {
        cfg.validate()
            .map_err(|e| WorkerError::Config(e.to_string()))?;
        let library = preload(&cfg.library_path)?;
        let pipeline = match &cfg.pipeline_config {
            Some(p) => PipelineConfig::load(p).map_err(|e| WorkerError::Pipeline(e.to_string()))?,
            None => PipelineConfig::default(),
        };
        let client = GatewayClient::new(&cfg.gateway_endpoint)?;
        let id = cfg.worker_id();
        let reg = client.register(&id, cfg.slot_id).map_err(|e| match e {
            ClientError::Http {
                status: StatusCode::CONFLICT,
                message,
            } => WorkerError::Registration(message),
            e => e.into(),
        })?;
        log::info!(
            "worker {id} holds slot {}; results go to {}",
            cfg.slot_id,
            reg.results_root.display()
        );
        Ok(Worker {
            id,
            slot: cfg.slot_id,
            library,
            pipeline,
            client,
            results_root: reg.results_root,
            poll_wait: Duration::from_secs_f64(cfg.poll_wait_s),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Polls and processes jobs until `stop` is set or `max_jobs` jobs
    /// are done. Returns the outcomes.
    pub fn run(&self, stop: &AtomicBool, max_jobs: Option<usize>) -> Vec<JobOutcome> {
        let mut done = Vec::new();
        let mut backoff = Duration::from_millis(200);
        while !stop.load(Ordering::SeqCst) && max_jobs.is_none_or(|m| done.len() < m) {
            match self.run_once() {
                Ok(Some(outcome)) => {
                    done.push(outcome);
                    backoff = Duration::from_millis(200);
                }
                Ok(None) => {}
                Err(e) => {
                    log::warn!("worker {}: {e}; retrying in {backoff:?}", self.id);
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_secs(10));
                }
            }
        }
        done
    }

    /// One long-poll; runs the job if one arrives.
    pub fn run_once(&self) -> Result<Option<JobOutcome>, ClientError> {
        let raw = match self.client.next(&self.id, self.poll_wait) {
            Ok(raw) => raw,
            Err(e) if e.status() == Some(StatusCode::NOT_FOUND) => {
                // the gateway restarted and forgot us
                self.client.register(&self.id, self.slot)?;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        Ok(raw.map(|raw| self.process(&raw)))
    }

    fn process(&self, raw: &str) -> JobOutcome {
        let msg = match JobMessage::from_json(raw) {
            Ok(m) => m,
            Err(e) => {
                let job_id = serde_json::from_str::<serde_json::Value>(raw)
                    .ok()
                    .and_then(|v| v.get("job_id").and_then(|id| id.as_u64()))
                    .unwrap_or(0);
                let outcome = JobOutcome {
                    job_id,
                    state: JobState::Failed,
                    message: e.to_string(),
                };
                if job_id > 0 {
                    self.send_final(&outcome, 0);
                }
                return outcome;
            }
        };
        log::info!("worker {}: job {} started", self.id, msg.job_id);
        let mut progress = 0u8;
        let outcome = match self.execute(&msg, &mut progress) {
            Ok(r) => JobOutcome {
                job_id: msg.job_id,
                state: JobState::Completed,
                message: self.summary(&r),
            },
            Err(message) => JobOutcome {
                job_id: msg.job_id,
                state: JobState::Failed,
                message,
            },
        };
        self.send_final(&outcome, progress);
        outcome
    }

    fn send_final(&self, outcome: &JobOutcome, progress: u8) {
        if let Err(e) =
            self.client
                .report(outcome.job_id, outcome.state, progress, &outcome.message)
        {
            log::error!(
                "worker {}: final report for job {} failed: {e}",
                self.id,
                outcome.job_id
            );
        }
    }

    fn execute(&self, msg: &JobMessage, progress: &mut u8) -> Result<ReconstructionResult, String> {
        let text = std::fs::read(&msg.silhouette_path)
            .map_err(|e| format!("reading silhouette {}: {e}", msg.silhouette_path.display()))?;
        let text = String::from_utf8(text)
            .map_err(|_| "silhouette format error: not UTF-8 text".to_string())?;
        let silhouette = parse_silhouette(&text).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&msg.image_path)
            .map_err(|e| format!("reading image {}: {e}", msg.image_path.display()))?;
        let image = ImageBuffer::decode(&bytes).map_err(|e| e.to_string())?;

        let out_dir = self.results_root.join(msg.job_id.to_string());
        if out_dir.exists() {
            std::fs::remove_dir_all(&out_dir)
                .map_err(|e| format!("clearing {}: {e}", out_dir.display()))?;
        }
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| format!("creating {}: {e}", out_dir.display()))?;

        let req = ReconstructionRequest {
            image,
            silhouette,
            config: self.pipeline.clone(),
        };
        let result = reconstruct(&req, &self.library, &out_dir, &mut |p| {
            if p.percent > *progress {
                *progress = p.percent;
                if let Err(e) =
                    self.client
                        .report(msg.job_id, JobState::Running, p.percent, p.stage.as_str())
                {
                    log::warn!(
                        "worker {}: progress report for job {}: {e}",
                        self.id,
                        msg.job_id
                    );
                }
            }
        })
        .map_err(|e| e.to_string())?;

        let summary = serde_json::to_string_pretty(&result).map_err(|e| e.to_string())?;
        std::fs::write(out_dir.join(RESULT_SUMMARY_FILE), summary + "\n")
            .map_err(|e| format!("writing {RESULT_SUMMARY_FILE}: {e}"))?;
        Ok(result)
    }

    fn summary(&self, r: &ReconstructionResult) -> String {
        let style = self
            .library
            .catalog
            .mass_style(r.grammar.mass.style_id)
            .map(|s| s.name.as_str())
            .unwrap_or("?");
        let mut s = format!(
            "{style} mass, {} floors x {} columns, {} windows, residual {:.2} px",
            r.grammar.facade.floors, r.grammar.facade.columns, r.window_count, r.residual
        );
        for w in &r.warnings {
            s.push_str("; ");
            s.push_str(w);
        }
        s
    }
}
