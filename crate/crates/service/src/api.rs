//! Request and response bodies of the HTTP API.
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/api/jobs` (multipart `image`, `silhouette`) | 201 [`SubmitResponse`] |
//! | GET | `/api/jobs/{id}` | 200 `JobStatus` |
//! | GET | `/api/jobs/{id}/result` | 200 zip archive |
//! | POST | `/api/worker/register` | 200 [`RegisterResponse`] |
//! | POST | `/api/worker/next` | 200 `JobMessage`, or 204 when the wait ran out |
//! | POST | `/api/worker/report` | 200 `JobStatus` |
//! | GET | `/api/health` | 200 [`Health`] |
//!
//! Errors carry an [`ErrorBody`].

use std::path::PathBuf;

use p2b_core::broker::JobState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub job_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub worker_id: String,
    pub slot_id: u32,
}

/// Tells the worker where to write results, so the gateway and its
/// workers cannot disagree about the shared directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub worker_id: String,
    pub slot_id: u32,
    pub results_root: PathBuf,
    pub job_timeout_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextRequest {
    pub worker_id: String,
    /// Seconds to wait for a job; capped by the gateway.
    #[serde(default)]
    pub max_wait_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub job_id: u64,
    pub state: JobState,
    pub progress: u8,
    #[serde(default)]
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub workers: usize,
    pub queued: usize,
    pub running: usize,
}

/// Member names the worker writes into a job's result directory.
pub const RESULT_SUMMARY_FILE: &str = "result.json";
