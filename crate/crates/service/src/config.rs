//! Gateway and worker settings: defaults, then an optional TOML file, then
//! `P2B_<FIELD>` environment variables. Command-line flags are applied by
//! the CLI on top.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("environment variable {var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
}

pub const ENV_PREFIX: &str = "P2B_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// `host:port` to bind.
    pub listen: String,
    /// Uploaded inputs, one directory per job.
    pub staging_root: PathBuf,
    /// Worker outputs, one directory per job.
    pub results_root: PathBuf,
    /// Web client assets served under `/`.
    pub static_root: PathBuf,
    pub job_timeout_s: u64,
    pub reap_interval_s: f64,
    pub max_upload_bytes: usize,
    /// Upper bound on a worker's long-poll wait.
    pub max_poll_wait_s: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen: "127.0.0.1:8080".into(),
            staging_root: "p2b-data/staging".into(),
            results_root: "p2b-data/results".into(),
            static_root: "web-ui/dist".into(),
            job_timeout_s: 120,
            reap_interval_s: 5.0,
            max_upload_bytes: 32 << 20,
            max_poll_wait_s: 30.0,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.job_timeout_s == 0 {
            return Err(ConfigError::Invalid(
                "job_timeout_s must be positive".into(),
            ));
        }
        for (name, v) in [
            ("reap_interval_s", self.reap_interval_s),
            ("max_poll_wait_s", self.max_poll_wait_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be a positive number of seconds"
                )));
            }
        }
        if self.max_upload_bytes == 0 {
            return Err(ConfigError::Invalid(
                "max_upload_bytes must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn job_timeout(&self) -> Duration {
        Duration::from_secs(self.job_timeout_s)
    }

    pub fn reap_interval(&self) -> Duration {
        Duration::from_secs_f64(self.reap_interval_s)
    }

    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        let cfg: Self = layered(file, &env_lookup, GATEWAY_FIELDS)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

const GATEWAY_FIELDS: &[&str] = &[
    "listen",
    "staging_root",
    "results_root",
    "static_root",
    "job_timeout_s",
    "reap_interval_s",
    "max_upload_bytes",
    "max_poll_wait_s",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    /// Defaults to `worker-<slot_id>` when empty.
    pub worker_id: String,
    /// Simulated accelerator slot; exclusive across workers.
    pub slot_id: u32,
    /// Base URL of the gateway.
    pub gateway_endpoint: String,
    /// Directory holding `library.toml` and the template bitmaps.
    pub library_path: PathBuf,
    pub poll_wait_s: f64,
    /// Optional pipeline config file; built-in defaults otherwise.
    pub pipeline_config: Option<PathBuf>,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            worker_id: String::new(),
            slot_id: 0,
            gateway_endpoint: "http://127.0.0.1:8080".into(),
            library_path: "p2b-data/library".into(),
            poll_wait_s: 10.0,
            pipeline_config: None,
        }
    }
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.poll_wait_s >= 0.0 && self.poll_wait_s.is_finite()) {
            return Err(ConfigError::Invalid(
                "poll_wait_s must be a non-negative number of seconds".into(),
            ));
        }
        if self.gateway_endpoint.is_empty() {
            return Err(ConfigError::Invalid(
                "gateway_endpoint must not be empty".into(),
            ));
        }
        Ok(())
    }

    pub fn worker_id(&self) -> String {
        if self.worker_id.is_empty() {
            format!("worker-{}", self.slot_id)
        } else {
            self.worker_id.clone()
        }
    }

    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        let cfg: Self = layered(file, &env_lookup, WORKER_FIELDS)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

const WORKER_FIELDS: &[&str] = &[
    "worker_id",
    "slot_id",
    "gateway_endpoint",
    "library_path",
    "poll_wait_s",
    "pipeline_config",
];

fn env_lookup(var: &str) -> Option<String> {
    std::env::var(var).ok()
}

/// Builds `T` from its defaults, the optional TOML file and `P2B_*`
/// variables for each of `fields`.
///
/// An environment value takes the type of the default it replaces; fields
/// without a default (unset options) read it as a TOML literal, falling
/// back to a plain string.
pub fn layered<T>(
    file: Option<&Path>,
    env: &dyn Fn(&str) -> Option<String>,
    fields: &[&str],
) -> Result<T, ConfigError>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut table =
        toml::Table::try_from(T::default()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if let Some(path) = file {
        let err = |message: String| ConfigError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let from_file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| err(e.to_string()))?;
        for (k, v) in from_file {
            table.insert(k, v);
        }
        // reject unknown keys and bad types with the file named
        table
            .clone()
            .try_into::<T>()
            .map_err(|e| err(e.to_string()))?;
    }
    for field in fields {
        let var = format!("{ENV_PREFIX}{}", field.to_uppercase());
        let Some(raw) = env(&var) else { continue };
        let value = env_value(table.get(*field), &raw).map_err(|message| ConfigError::Env {
            var: var.clone(),
            message,
        })?;
        table.insert(field.to_string(), value);
    }
    table
        .try_into::<T>()
        .map_err(|e| ConfigError::Invalid(e.to_string()))
}

fn env_value(current: Option<&toml::Value>, raw: &str) -> Result<toml::Value, String> {
    use toml::Value;
    let bad = |kind: &str| format!("{raw:?} is not {kind}");
    Ok(match current {
        Some(Value::Integer(_)) => {
            Value::Integer(raw.trim().parse().map_err(|_| bad("an integer"))?)
        }
        Some(Value::Float(_)) => Value::Float(raw.trim().parse().map_err(|_| bad("a number"))?),
        Some(Value::Boolean(_)) => {
            Value::Boolean(raw.trim().parse().map_err(|_| bad("true or false"))?)
        }
        Some(Value::String(_)) | None => Value::String(raw.to_string()),
        Some(_) => return Err("structured values cannot be set from the environment".into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn defaults_match_the_service_contract() {
        let g = GatewayConfig::default();
        assert_eq!(g.job_timeout(), Duration::from_secs(120));
        assert_eq!(g.reap_interval(), Duration::from_secs(5));
        g.validate().unwrap();
        let w = WorkerConfig {
            slot_id: 3,
            ..Default::default()
        };
        assert_eq!(w.worker_id(), "worker-3");
    }

    #[test]
    fn file_then_env_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gateway.toml");
        std::fs::write(&path, "listen = \"0.0.0.0:9000\"\njob_timeout_s = 60\n").unwrap();
        let g: GatewayConfig = layered(
            Some(&path),
            &env(&[("P2B_JOB_TIMEOUT_S", "30"), ("P2B_REAP_INTERVAL_S", "0.5")]),
            GATEWAY_FIELDS,
        )
        .unwrap();
        assert_eq!(g.listen, "0.0.0.0:9000");
        assert_eq!(g.job_timeout_s, 30);
        assert_eq!(g.reap_interval_s, 0.5);
        assert_eq!(g.results_root, PathBuf::from("p2b-data/results"));
    }

    #[test]
    fn optional_and_string_fields_from_env() {
        let w: WorkerConfig = layered(
            None,
            &env(&[
                ("P2B_PIPELINE_CONFIG", "/etc/p2b/pipeline.toml"),
                ("P2B_WORKER_ID", "12"),
                ("P2B_SLOT_ID", "2"),
            ]),
            WORKER_FIELDS,
        )
        .unwrap();
        assert_eq!(
            w.pipeline_config,
            Some(PathBuf::from("/etc/p2b/pipeline.toml"))
        );
        assert_eq!(w.worker_id, "12");
        assert_eq!(w.slot_id, 2);
    }

    #[test]
    fn bad_values_are_reported() {
        let e =
            layered::<GatewayConfig>(None, &env(&[("P2B_JOB_TIMEOUT_S", "soon")]), GATEWAY_FIELDS)
                .unwrap_err();
        assert!(e.to_string().contains("P2B_JOB_TIMEOUT_S"), "{e}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.toml");
        std::fs::write(&path, "listne = \"x\"\n").unwrap();
        let e = layered::<GatewayConfig>(Some(&path), &env(&[]), GATEWAY_FIELDS).unwrap_err();
        assert!(e.to_string().contains("g.toml"), "{e}");
        let g = GatewayConfig {
            job_timeout_s: 0,
            ..Default::default()
        };
        assert!(g.validate().is_err());
    }
}
