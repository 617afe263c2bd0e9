//! In-process job queue: FIFO messages with exactly-once blocking dequeue,
//! a status map, leases, and timeout reaping.
//!
//! Every operation takes the broker's single lock, so any interleaving of
//! callers sees a consistent queue. `dequeue_blocking` parks on a condition
//! variable that `enqueue` signals. Timestamps are passed in by the caller
//! (or read from the injected [`Clock`] for leases) so tests can drive time.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_JOB_TIMEOUT: Duration = Duration::from_secs(120);

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        let mut t = self.0.lock().unwrap_or_else(|e| e.into_inner());
        *t += TimeDelta::from_std(by).unwrap_or(TimeDelta::MAX);
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = to;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Queue message; the JSON form is
/// `{"job_id": N, "image": "<path>", "silhouette": "<path>", "submitted_at": "<RFC3339>"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobMessage {
    pub job_id: u64,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    #[serde(rename = "silhouette")]
    pub silhouette_path: PathBuf,
    pub submitted_at: DateTime<Utc>,
}

impl JobMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("job message serializes")
    }

    /// Parses and checks the wire form.
    pub fn from_json(text: &str) -> Result<Self, BrokerError> {
        let m: JobMessage = serde_json::from_str(text)
            .map_err(|e| BrokerError::Validation(format!("job message: {e}")))?;
        if m.job_id == 0 {
            return Err(BrokerError::Validation(
                "job message: job_id must be positive".into(),
            ));
        }
        if m.image_path.as_os_str().is_empty() || m.silhouette_path.as_os_str().is_empty() {
            return Err(BrokerError::Validation("job message: empty path".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Failed,
    Timeout,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobState::Completed | JobState::Failed | JobState::Timeout
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Completed => "completed",
            JobState::Failed => "failed",
            JobState::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for JobState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for JobState {
    type Err = BrokerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "queued" => JobState::Queued,
            "running" => JobState::Running,
            "completed" => JobState::Completed,
            "failed" => JobState::Failed,
            "timeout" => JobState::Timeout,
            other => {
                return Err(BrokerError::Validation(format!(
                    "unknown job state {other:?}"
                )))
            }
        })
    }
}

/// Status document served to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: u64,
    pub state: JobState,
    pub progress: u8,
    pub worker_id: Option<String>,
    pub message: String,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub job_id: u64,
    pub worker_id: String,
    pub leased_at: DateTime<Utc>,
    pub deadline: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("worker {0:?} is not registered")]
    UnknownWorker(String),
    #[error("slot {slot} is already held by worker {holder:?}")]
    SlotTaken { slot: u32, holder: String },
    #[error("worker {worker:?} is already registered on slot {slot}")]
    WorkerRegistered { worker: String, slot: u32 },
    #[error("job {0} not found")]
    NotFound(u64),
    #[error("job {job_id}: illegal transition {from} -> {to}")]
    Transition {
        job_id: u64,
        from: JobState,
        to: JobState,
    },
    #[error("job {job_id}: progress may not go from {from} to {to}")]
    Progress { job_id: u64, from: u8, to: u8 },
    #[error("the queue is shut down")]
    Closed,
}

#[derive(Debug, Default)]
struct Inner {
    last_id: u64,
    queue: VecDeque<JobMessage>,
    status: HashMap<u64, JobStatus>,
    leases: HashMap<u64, Lease>,
    /// worker id -> slot
    workers: BTreeMap<String, u32>,
    /// slot -> worker id
    slots: BTreeMap<u32, String>,
    /// worker id -> leased job
    holding: HashMap<String, u64>,
    closed: bool,
}

impl Inner {
    fn clear_lease(&mut self, job_id: u64) {
        if let Some(lease) = self.leases.remove(&job_id) {
            self.holding.remove(&lease.worker_id);
        }
    }
}

pub struct Broker {
    inner: Mutex<Inner>,
    wake: Condvar,
    timeout: Duration,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker")
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl Broker {
    /// `clock` stamps leases taken by [`Broker::dequeue_blocking`].
    pub fn new(timeout: Duration, clock: Arc<dyn Clock>) -> Self {
        Broker {
            inner: Mutex::new(Inner::default()),
            wake: Condvar::new(),
            timeout,
            clock,
        }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // a panic elsewhere cannot leave the maps half-updated: every
        // mutation below completes before the guard drops
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Claims `slot` for `worker_id`. Registering the same pair again is a
    /// no-op.
    pub fn register_worker(&self, worker_id: &str, slot: u32) -> Result<(), BrokerError> {
        if worker_id.is_empty() {
            return Err(BrokerError::Validation(
                "worker id must not be empty".into(),
            ));
        }
        let mut g = self.lock();
        if let Some(holder) = g.slots.get(&slot) {
            if holder == worker_id {
                return Ok(());
            }
            return Err(BrokerError::SlotTaken {
                slot,
                holder: holder.clone(),
            });
        }
        if let Some(&other) = g.workers.get(worker_id) {
            return Err(BrokerError::WorkerRegistered {
                worker: worker_id.into(),
                slot: other,
            });
        }
        g.workers.insert(worker_id.into(), slot);
        g.slots.insert(slot, worker_id.into());
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        self.lock().workers.len()
    }

    /// Appends a job for staged files and returns its id (1, 2, ...).
    pub fn enqueue(
        &self,
        image_path: PathBuf,
        silhouette_path: PathBuf,
        now: DateTime<Utc>,
    ) -> Result<u64, BrokerError> {
        self.enqueue_staged(now, |_| Ok((image_path, silhouette_path)))
    }

    /// Like [`Broker::enqueue`], but `stage` learns the job id first and
    /// returns the staged paths. It runs under the broker lock, so it should
    /// only move files into place.
    pub fn enqueue_staged(
        &self,
        now: DateTime<Utc>,
        stage: impl FnOnce(u64) -> std::io::Result<(PathBuf, PathBuf)>,
    ) -> Result<u64, BrokerError> {
        let mut g = self.lock();
        if g.closed {
            return Err(BrokerError::Closed);
        }
        let job_id = g.last_id + 1;
        let (image_path, silhouette_path) = stage(job_id)
            .map_err(|e| BrokerError::Validation(format!("staging job {job_id}: {e}")))?;
        for p in [&image_path, &silhouette_path] {
            if !p.is_file() {
                return Err(BrokerError::Validation(format!(
                    "staged file {} does not exist",
                    p.display()
                )));
            }
        }
        g.last_id = job_id;
        g.queue.push_back(JobMessage {
            job_id,
            image_path,
            silhouette_path,
            submitted_at: now,
        });
        g.status.insert(
            job_id,
            JobStatus {
                job_id,
                state: JobState::Queued,
                progress: 0,
                worker_id: None,
                message: String::new(),
                updated_at: now,
            },
        );
        drop(g);
        self.wake.notify_one();
        Ok(job_id)
    }

    /// Stops accepting jobs and releases every blocked dequeue with `None`.
    pub fn close(&self) {
        self.lock().closed = true;
        self.wake.notify_all();
    }

    /// Pops the oldest message for `worker_id`, waiting up to `max_wait`
    /// for one to arrive. The job becomes running under a new lease.
    ///
    /// A worker asking for work while it still holds a lease has dropped
    /// that job; the old job is marked failed so it cannot linger.
    pub fn dequeue_blocking(
        &self,
        worker_id: &str,
        max_wait: Duration,
    ) -> Result<Option<JobMessage>, BrokerError> {
        let deadline = Instant::now() + max_wait;
        let mut g = self.lock();
        if !g.workers.contains_key(worker_id) {
            return Err(BrokerError::UnknownWorker(worker_id.into()));
        }
        if let Some(old) = g.holding.get(worker_id).copied() {
            let now = self.clock.now();
            g.clear_lease(old);
            if let Some(s) = g.status.get_mut(&old) {
                s.state = JobState::Failed;
                s.message = format!(
                    "abandoned: worker {worker_id} asked for new work while running this job"
                );
                s.updated_at = now;
            }
        }
        loop {
            if g.closed {
                return Ok(None);
            }
            if let Some(msg) = g.queue.pop_front() {
                let now = self.clock.now();
                let lease = Lease {
                    job_id: msg.job_id,
                    worker_id: worker_id.into(),
                    leased_at: now,
                    deadline: now + TimeDelta::from_std(self.timeout).unwrap_or(TimeDelta::MAX),
                };
                g.leases.insert(msg.job_id, lease);
                g.holding.insert(worker_id.into(), msg.job_id);
                if let Some(s) = g.status.get_mut(&msg.job_id) {
                    s.state = JobState::Running;
                    s.worker_id = Some(worker_id.into());
                    s.updated_at = now;
                }
                return Ok(Some(msg));
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            g = self
                .wake
                .wait_timeout(g, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Applies a worker's report. Running jobs may advance their progress
    /// or finish; queued and terminal jobs cannot be changed here.
    /// Completion sets progress to 100.
    pub fn set_status(
        &self,
        job_id: u64,
        state: JobState,
        progress: u8,
        message: &str,
        now: DateTime<Utc>,
    ) -> Result<JobStatus, BrokerError> {
        if progress > 100 {
            return Err(BrokerError::Validation(format!(
                "progress {progress} exceeds 100"
            )));
        }
        let mut g = self.lock();
        let cur = g.status.get(&job_id).ok_or(BrokerError::NotFound(job_id))?;
        if cur.state != JobState::Running || state == JobState::Queued {
            return Err(BrokerError::Transition {
                job_id,
                from: cur.state,
                to: state,
            });
        }
        if state == JobState::Running && progress < cur.progress {
            return Err(BrokerError::Progress {
                job_id,
                from: cur.progress,
                to: progress,
            });
        }
        let progress = match state {
            JobState::Completed => 100,
            JobState::Running => progress,
            _ => progress.max(cur.progress),
        };
        if state.is_terminal() {
            g.clear_lease(job_id);
        }
        let s = g.status.get_mut(&job_id).expect("checked above");
        s.state = state;
        s.progress = progress;
        s.message = message.into();
        s.updated_at = now;
        Ok(s.clone())
    }

    pub fn get_status(&self, job_id: u64) -> Result<JobStatus, BrokerError> {
        self.lock()
            .status
            .get(&job_id)
            .cloned()
            .ok_or(BrokerError::NotFound(job_id))
    }

    pub fn lease(&self, job_id: u64) -> Option<Lease> {
        self.lock().leases.get(&job_id).cloned()
    }

    /// Times out every running job whose lease deadline is before `now`.
    /// Timed-out jobs are not requeued.
    pub fn reap_timeouts(&self, now: DateTime<Utc>) -> Vec<u64> {
        let mut g = self.lock();
        let mut expired: Vec<u64> = g
            .leases
            .values()
            .filter(|l| l.deadline < now)
            .map(|l| l.job_id)
            .collect();
        expired.sort_unstable();
        let secs = self.timeout.as_secs_f64();
        let mut out = Vec::with_capacity(expired.len());
        for id in expired {
            g.clear_lease(id);
            if let Some(s) = g.status.get_mut(&id) {
                if !s.state.is_terminal() {
                    s.state = JobState::Timeout;
                    s.message = format!("timeout: no result within {secs} s");
                    s.updated_at = now;
                    out.push(id);
                }
            }
        }
        out
    }

    pub fn queue_len(&self) -> usize {
        self.lock().queue.len()
    }

    pub fn running_count(&self) -> usize {
        self.lock()
            .status
            .values()
            .filter(|s| s.state == JobState::Running)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(secs: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000 + secs, 0).unwrap()
    }

    struct Fixture {
        _dir: tempfile::TempDir,
        img: PathBuf,
        sil: PathBuf,
        clock: Arc<ManualClock>,
        broker: Broker,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("image.png");
        let sil = dir.path().join("silhouette.txt");
        std::fs::write(&img, b"x").unwrap();
        std::fs::write(&sil, b"x").unwrap();
        let clock = Arc::new(ManualClock::new(t(0)));
        let broker = Broker::new(DEFAULT_JOB_TIMEOUT, clock.clone());
        Fixture {
            _dir: dir,
            img,
            sil,
            clock,
            broker,
        }
    }

    impl Fixture {
        fn enqueue(&self) -> u64 {
            self.broker
                .enqueue(self.img.clone(), self.sil.clone(), self.clock.now())
                .unwrap()
        }
    }

    #[test]
    fn ids_count_up_and_start_queued() {
        let f = fixture();
        assert_eq!(f.enqueue(), 1);
        assert_eq!(f.enqueue(), 2);
        let s = f.broker.get_status(1).unwrap();
        assert_eq!(
            (s.state, s.progress, s.worker_id),
            (JobState::Queued, 0, None)
        );
        assert_eq!(f.broker.get_status(9999), Err(BrokerError::NotFound(9999)));
    }

    #[test]
    fn enqueue_requires_staged_files() {
        let f = fixture();
        let e = f
            .broker
            .enqueue(f.img.with_extension("missing"), f.sil.clone(), t(0));
        assert!(matches!(e, Err(BrokerError::Validation(_))));
    }

    #[test]
    fn dequeue_leases_and_runs() {
        let f = fixture();
        f.broker.register_worker("w0", 0).unwrap();
        let id = f.enqueue();
        f.clock.advance(Duration::from_secs(3));
        let m = f
            .broker
            .dequeue_blocking("w0", Duration::ZERO)
            .unwrap()
            .unwrap();
        assert_eq!(m.job_id, id);
        let s = f.broker.get_status(id).unwrap();
        assert_eq!(
            (s.state, s.worker_id.as_deref()),
            (JobState::Running, Some("w0"))
        );
        let lease = f.broker.lease(id).unwrap();
        assert_eq!(lease.leased_at, t(3));
        assert_eq!(lease.deadline, t(123));
        assert!(matches!(
            f.broker.dequeue_blocking("nobody", Duration::ZERO),
            Err(BrokerError::UnknownWorker(_))
        ));
    }

    #[test]
    fn empty_queue_waits_then_returns_none() {
        let f = fixture();
        f.broker.register_worker("w0", 0).unwrap();
        let start = Instant::now();
        assert_eq!(
            f.broker
                .dequeue_blocking("w0", Duration::from_millis(50))
                .unwrap(),
            None
        );
        assert!(start.elapsed() >= Duration::from_millis(50));
    }

    #[test]
    fn slots_are_exclusive() {
        let f = fixture();
        f.broker.register_worker("a", 0).unwrap();
        f.broker.register_worker("a", 0).unwrap();
        assert!(matches!(
            f.broker.register_worker("b", 0),
            Err(BrokerError::SlotTaken { slot: 0, .. })
        ));
        assert!(matches!(
            f.broker.register_worker("a", 1),
            Err(BrokerError::WorkerRegistered { .. })
        ));
        f.broker.register_worker("b", 1).unwrap();
        assert_eq!(f.broker.worker_count(), 2);
    }

    #[test]
    fn status_follows_the_state_machine() {
        let f = fixture();
        f.broker.register_worker("w0", 0).unwrap();
        let id = f.enqueue();
        // queued jobs only start through a dequeue
        assert!(matches!(
            f.broker.set_status(id, JobState::Running, 5, "", t(1)),
            Err(BrokerError::Transition { .. })
        ));
        f.broker.dequeue_blocking("w0", Duration::ZERO).unwrap();
        f.broker
            .set_status(id, JobState::Running, 80, "facade", t(2))
            .unwrap();
        assert_eq!(
            f.broker.set_status(id, JobState::Running, 60, "", t(3)),
            Err(BrokerError::Progress {
                job_id: id,
                from: 80,
                to: 60
            })
        );
        let s = f
            .broker
            .set_status(id, JobState::Completed, 100, "done", t(4))
            .unwrap();
        assert_eq!((s.state, s.progress), (JobState::Completed, 100));
        assert!(f.broker.lease(id).is_none());
        assert!(matches!(
            f.broker.set_status(id, JobState::Running, 100, "", t(5)),
            Err(BrokerError::Transition { .. })
        ));
        assert_eq!(
            f.broker.set_status(77, JobState::Failed, 0, "", t(5)),
            Err(BrokerError::NotFound(77))
        );
    }

    #[test]
    fn reaping_times_out_expired_leases_only() {
        let f = fixture();
        f.broker.register_worker("w0", 0).unwrap();
        f.broker.register_worker("w1", 1).unwrap();
        let a = f.enqueue();
        let b = f.enqueue();
        f.broker.dequeue_blocking("w0", Duration::ZERO).unwrap();
        f.broker.dequeue_blocking("w1", Duration::ZERO).unwrap();
        f.broker
            .set_status(b, JobState::Completed, 100, "", t(100))
            .unwrap();
        assert!(f.broker.reap_timeouts(t(119)).is_empty());
        assert!(f.broker.reap_timeouts(t(120)).is_empty());
        assert_eq!(f.broker.reap_timeouts(t(121)), vec![a]);
        assert!(f.broker.reap_timeouts(t(121)).is_empty());
        assert_eq!(f.broker.get_status(a).unwrap().state, JobState::Timeout);
        assert_eq!(f.broker.get_status(b).unwrap().state, JobState::Completed);
        assert!(f.broker.reap_timeouts(t(200)).is_empty());
        // a late report cannot revive the job
        assert!(f
            .broker
            .set_status(a, JobState::Completed, 100, "", t(130))
            .is_err());
    }

    #[test]
    fn abandoning_a_lease_fails_the_old_job() {
        let f = fixture();
        f.broker.register_worker("w0", 0).unwrap();
        let a = f.enqueue();
        let b = f.enqueue();
        f.broker.dequeue_blocking("w0", Duration::ZERO).unwrap();
        let m = f
            .broker
            .dequeue_blocking("w0", Duration::ZERO)
            .unwrap()
            .unwrap();
        assert_eq!(m.job_id, b);
        assert_eq!(f.broker.get_status(a).unwrap().state, JobState::Failed);
        assert_eq!(f.broker.running_count(), 1);
    }

    #[test]
    fn staging_sees_the_new_id_and_close_releases_waiters() {
        let f = fixture();
        let (img, sil) = (f.img.clone(), f.sil.clone());
        let id = f
            .broker
            .enqueue_staged(t(0), |id| {
                assert_eq!(id, 1);
                Ok((img, sil))
            })
            .unwrap();
        assert_eq!(id, 1);
        let failed = f
            .broker
            .enqueue_staged(t(0), |_| Err(std::io::Error::other("disk full")));
        assert!(matches!(failed, Err(BrokerError::Validation(_))));
        // a failed staging does not burn an id
        assert_eq!(f.enqueue(), 2);

        f.broker.register_worker("w0", 0).unwrap();
        let b = Arc::new(f.broker);
        b.dequeue_blocking("w0", Duration::ZERO).unwrap();
        b.set_status(1, JobState::Completed, 100, "", t(1)).unwrap();
        b.dequeue_blocking("w0", Duration::ZERO).unwrap();
        b.set_status(2, JobState::Completed, 100, "", t(1)).unwrap();
        let waiter = {
            let b = b.clone();
            std::thread::spawn(move || b.dequeue_blocking("w0", Duration::from_secs(30)))
        };
        std::thread::sleep(Duration::from_millis(20));
        b.close();
        assert_eq!(waiter.join().unwrap(), Ok(None));
        assert_eq!(
            b.enqueue(f.img.clone(), f.sil.clone(), t(2)),
            Err(BrokerError::Closed)
        );
    }

    #[test]
    fn message_wire_form() {
        let m = JobMessage {
            job_id: 3,
            image_path: "/s/3/image.png".into(),
            silhouette_path: "/s/3/sil.txt".into(),
            submitted_at: t(0),
        };
        let text = m.to_json();
        assert_eq!(
            text,
            r#"{"job_id":3,"image":"/s/3/image.png","silhouette":"/s/3/sil.txt","submitted_at":"2023-11-14T22:13:20Z"}"#
        );
        assert_eq!(JobMessage::from_json(&text).unwrap(), m);
        assert!(JobMessage::from_json(
            r#"{"job_id":0,"image":"a","silhouette":"b","submitted_at":"2023-11-14T22:13:20Z"}"#
        )
        .is_err());
        assert!(JobMessage::from_json(
            r#"{"job_id":1,"image":"","silhouette":"b","submitted_at":"2023-11-14T22:13:20Z"}"#
        )
        .is_err());
    }
}
