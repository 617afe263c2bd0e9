//! Service side of the photo-to-building system.
//!
//! - [`gateway`]: the HTTP API in front of the in-process broker, with the
//!   timeout reaper and the static web client.
//! - [`worker`]: a slot-pinned worker that keeps the style library loaded
//!   and long-polls the gateway for jobs.
//! - [`client`]: the blocking HTTP client both the worker and `p2b submit`
//!   use.
//! - [`archive`]: deterministic zip archives of job results.
//! - [`cost`]: throughput and cost arithmetic for a worker pool.
//! - [`config`]: layered settings (defaults, TOML file, `P2B_*` variables).

pub mod api;
pub mod archive;
pub mod client;
pub mod config;
pub mod cost;
pub mod gateway;
pub mod worker;
