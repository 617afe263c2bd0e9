//! Blocking HTTP client for the gateway API, used by the worker and the
//! `submit` command.

use std::time::Duration;

use p2b_core::broker::{JobState, JobStatus};
use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;

use crate::api::{
    ErrorBody, Health, NextRequest, RegisterRequest, RegisterResponse, ReportRequest,
    SubmitResponse,
};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);
/// Slack on top of the long-poll wait before the request itself gives up.
const POLL_SLACK: Duration = Duration::from_secs(15);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The gateway answered with an error status.
    #[error("HTTP {status}: {message}")]
    Http { status: StatusCode, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Http { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayClient {
    base: String,
    http: Client,
}

fn check(resp: Response) -> Result<Response, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().unwrap_or_default();
    let message = serde_json::from_str::<ErrorBody>(&text)
        .map(|b| b.error)
        .unwrap_or(text);
    Err(ClientError::Http { status, message })
}

fn json<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
    let text = check(resp)?.text()?;
    serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("{e}: {text}")))
}

impl GatewayClient {
    /// `base` is the gateway URL, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let http = Client::builder().timeout(REQUEST_TIMEOUT).build()?;
        Ok(GatewayClient {
            base: base.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn submit(&self, image: Vec<u8>, silhouette: Vec<u8>) -> Result<u64, ClientError> {
        let form = Form::new()
            .part("image", Part::bytes(image).file_name("image"))
            .part(
                "silhouette",
                Part::bytes(silhouette).file_name("silhouette.txt"),
            );
        let r: SubmitResponse = json(
            self.http
                .post(self.url("/api/jobs"))
                .multipart(form)
                .send()?,
        )?;
        Ok(r.job_id)
    }

    pub fn status(&self, job_id: u64) -> Result<JobStatus, ClientError> {
        json(
            self.http
                .get(self.url(&format!("/api/jobs/{job_id}")))
                .send()?,
        )
    }

    /// The zip archive of a completed job.
    pub fn result(&self, job_id: u64) -> Result<Vec<u8>, ClientError> {
        let resp = check(
            self.http
                .get(self.url(&format!("/api/jobs/{job_id}/result")))
                .send()?,
        )?;
        Ok(resp.bytes()?.to_vec())
    }

    /// Polls every `interval` until the job is terminal, calling `observe`
    /// with each status read.
    pub fn wait(
        &self,
        job_id: u64,
        interval: Duration,
        mut observe: impl FnMut(&JobStatus),
    ) -> Result<JobStatus, ClientError> {
        loop {
            let s = self.status(job_id)?;
            observe(&s);
            if s.state.is_terminal() {
                return Ok(s);
            }
            std::thread::sleep(interval);
        }
    }

    pub fn health(&self) -> Result<Health, ClientError> {
        json(self.http.get(self.url("/api/health")).send()?)
    }

    pub fn register(&self, worker_id: &str, slot_id: u32) -> Result<RegisterResponse, ClientError> {
        let body = RegisterRequest {
            worker_id: worker_id.into(),
            slot_id,
        };
        json(
            self.http
                .post(self.url("/api/worker/register"))
                .json(&body)
                .send()?,
        )
    }

    /// Long-polls for a job; returns the raw message text so a bad message
    /// can still be reported against its job.
    pub fn next(&self, worker_id: &str, max_wait: Duration) -> Result<Option<String>, ClientError> {
        let body = NextRequest {
            worker_id: worker_id.into(),
            max_wait_s: Some(max_wait.as_secs_f64()),
        };
        let resp = self
            .http
            .post(self.url("/api/worker/next"))
            .timeout(max_wait + POLL_SLACK)
            .json(&body)
            .send()?;
        let resp = check(resp)?;
        if resp.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        Ok(Some(resp.text()?))
    }

    pub fn report(
        &self,
        job_id: u64,
        state: JobState,
        progress: u8,
        message: &str,
    ) -> Result<JobStatus, ClientError> {
        let body = ReportRequest {
            job_id,
            state,
            progress,
            message: message.into(),
        };
        json(
            self.http
                .post(self.url("/api/worker/report"))
                .json(&body)
                .send()?,
        )
    }
}
