//! Job queue and worker scheduler.
//!
//! Pure and synchronous: the gateway feeds it connection events and worker
//! messages and carries out the [`Assignment`]s and [`CancelNotice`]s it
//! returns. Jobs wait in one FIFO queue per [`JobType`]. A job goes to an idle
//! worker that already has its model loaded when one exists, otherwise to any
//! idle capable worker; ties go to the worker assigned least recently.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{CardId, DocId, JobId, WorkerId};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobType {
    GenerateImage,
    GenerateAudio,
    GenerateText,
    InterpretData,
    ExpandPrompt,
}

impl JobType {
    pub const ALL: [JobType; 5] = [
        JobType::GenerateImage,
        JobType::GenerateAudio,
        JobType::GenerateText,
        JobType::InterpretData,
        JobType::ExpandPrompt,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobPayload {
    pub prompt: String,
    pub seed: u64,
    pub sample_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewJob {
    pub job_id: JobId,
    pub doc_id: DocId,
    pub job_type: JobType,
    pub required_model: String,
    pub target_card: CardId,
    pub payload: JobPayload,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub worker: WorkerId,
    pub job: NewJob,
    /// 1-based.
    pub attempt: u32,
}

/// Tell `worker` to abandon `job`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CancelNotice {
    pub worker: WorkerId,
    pub job: JobId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JobPhase {
    Queued,
    /// Handed to a worker that has not reported progress yet.
    Assigned(WorkerId),
    Running(WorkerId),
}

impl JobPhase {
    pub fn worker(self) -> Option<WorkerId> {
        match self {
            JobPhase::Queued => None,
            JobPhase::Assigned(w) | JobPhase::Running(w) => Some(w),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FailureOutcome {
    /// Requeued; `attempt` is the number of the next try.
    Retry { job: NewJob, attempt: u32 },
    /// Out of attempts; the target card should go to `error`.
    Failed { job: NewJob, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HubError {
    #[error("connection {conn} already registered as worker {worker}")]
    DuplicateRegistration { conn: u64, worker: WorkerId },
    #[error("worker has no capabilities")]
    NoCapabilities,
    #[error("unknown worker {0}")]
    UnknownWorker(WorkerId),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {job} is not assigned to worker {worker}")]
    NotAssigned { job: JobId, worker: WorkerId },
    #[error("job {job}: sequence {seq} is not after {last}")]
    OutOfOrder { job: JobId, seq: u64, last: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerInfo {
    pub id: WorkerId,
    pub conn: u64,
    pub capabilities: BTreeSet<JobType>,
    pub models_loaded: BTreeSet<String>,
    pub busy: Option<JobId>,
    /// Logical time of the last assignment; 0 means never.
    pub last_assigned: u64,
    pub completed: u64,
}

#[derive(Clone, Debug)]
struct JobRecord {
    job: NewJob,
    failures: u32,
    phase: JobPhase,
    last_seq: Option<u64>,
    enqueued: u64,
}

#[derive(Clone, Debug)]
pub struct Hub {
    max_attempts: u32,
    workers: BTreeMap<WorkerId, WorkerInfo>,
    by_conn: BTreeMap<u64, WorkerId>,
    next_worker: u64,
    queues: BTreeMap<JobType, VecDeque<JobId>>,
    jobs: BTreeMap<JobId, JobRecord>,
    clock: u64,
}

impl Default for Hub {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_ATTEMPTS)
    }
}

impl Hub {
    pub fn new(max_attempts: u32) -> Self {
        Self {
            max_attempts: max_attempts.max(1),
            workers: BTreeMap::new(),
            by_conn: BTreeMap::new(),
            next_worker: 1,
            queues: BTreeMap::new(),
            jobs: BTreeMap::new(),
            clock: 0,
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    // ---- workers --------------------------------------------------------

    pub fn register_worker(
        &mut self,
        conn: u64,
        capabilities: impl IntoIterator<Item = JobType>,
        models_loaded: impl IntoIterator<Item = String>,
    ) -> Result<WorkerId, HubError> {
        if let Some(&worker) = self.by_conn.get(&conn) {
            return Err(HubError::DuplicateRegistration { conn, worker });
        }
        let capabilities: BTreeSet<JobType> = capabilities.into_iter().collect();
        if capabilities.is_empty() {
            return Err(HubError::NoCapabilities);
        }
        let id = WorkerId(self.next_worker);
        self.next_worker += 1;
        self.workers.insert(
            id,
            WorkerInfo {
                id,
                conn,
                capabilities,
                models_loaded: models_loaded.into_iter().collect(),
                busy: None,
                last_assigned: 0,
                completed: 0,
            },
        );
        self.by_conn.insert(conn, id);
        Ok(id)
    }

    /// The worker disconnected or stopped heartbeating. Its running job goes
    /// back to the head of its queue without using up an attempt.
    pub fn deregister_worker(&mut self, worker: WorkerId) -> Option<JobId> {
        let info = self.workers.remove(&worker)?;
        self.by_conn.remove(&info.conn);
        let job = info.busy?;
        let rec = self.jobs.get_mut(&job).expect("busy job is tracked");
        rec.phase = JobPhase::Queued;
        rec.last_seq = None;
        let ty = rec.job.job_type;
        self.queues.entry(ty).or_default().push_front(job);
        Some(job)
    }

    /// Workers report their loaded models; the hub trusts the report.
    pub fn heartbeat(&mut self, worker: WorkerId, models_loaded: impl IntoIterator<Item = String>) -> Result<(), HubError> {
        let w = self.workers.get_mut(&worker).ok_or(HubError::UnknownWorker(worker))?;
        w.models_loaded = models_loaded.into_iter().collect();
        Ok(())
    }

    pub fn worker_for_conn(&self, conn: u64) -> Option<WorkerId> {
        self.by_conn.get(&conn).copied()
    }

    pub fn worker(&self, id: WorkerId) -> Option<&WorkerInfo> {
        self.workers.get(&id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerInfo> {
        self.workers.values()
    }

    // ---- jobs -----------------------------------------------------------

    pub fn enqueue(&mut self, job: NewJob) {
        let id = job.job_id;
        let ty = job.job_type;
        let enqueued = self.tick();
        self.jobs.insert(
            id,
            JobRecord {
                job,
                failures: 0,
                phase: JobPhase::Queued,
                last_seq: None,
                enqueued,
            },
        );
        self.queues.entry(ty).or_default().push_back(id);
    }

    pub fn phase(&self, job: JobId) -> Option<JobPhase> {
        self.jobs.get(&job).map(|r| r.phase)
    }

    pub fn job(&self, job: JobId) -> Option<&NewJob> {
        self.jobs.get(&job).map(|r| &r.job)
    }

    pub fn queued_len(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn live_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_idle(&self) -> bool {
        self.jobs.is_empty()
    }

    fn pick_worker(&self, job: &NewJob) -> Option<WorkerId> {
        let idle = self
            .workers
            .values()
            .filter(|w| w.busy.is_none() && w.capabilities.contains(&job.job_type));
        let key = |w: &&WorkerInfo| (!w.models_loaded.contains(&job.required_model), w.last_assigned, w.id);
        idle.min_by_key(key).map(|w| w.id)
    }

    /// Hand queued jobs to idle workers until no more pairs can be made.
    /// Queue heads are served oldest first across types.
    pub fn dispatch(&mut self) -> Vec<Assignment> {
        let mut out = Vec::new();
        loop {
            let mut heads: Vec<(u64, JobType, JobId)> = self
                .queues
                .iter()
                .filter_map(|(ty, q)| q.front().map(|&j| (self.jobs[&j].enqueued, *ty, j)))
                .collect();
            heads.sort();
            let mut progressed = false;
            for (_, ty, job_id) in heads {
                let Some(worker) = self.pick_worker(&self.jobs[&job_id].job) else { continue };
                self.queues.get_mut(&ty).expect("head").pop_front();
                let now = self.tick();
                let rec = self.jobs.get_mut(&job_id).expect("queued");
                rec.phase = JobPhase::Assigned(worker);
                rec.last_seq = None;
                let w = self.workers.get_mut(&worker).expect("picked");
                w.busy = Some(job_id);
                w.last_assigned = now;
                out.push(Assignment {
                    worker,
                    job: rec.job.clone(),
                    attempt: rec.failures + 1,
                });
                progressed = true;
                break;
            }
            if !progressed {
                return out;
            }
        }
    }

    fn check(&mut self, worker: WorkerId, job: JobId, seq: u64) -> Result<&mut JobRecord, HubError> {
        if !self.workers.contains_key(&worker) {
            return Err(HubError::UnknownWorker(worker));
        }
        let rec = self.jobs.get_mut(&job).ok_or(HubError::UnknownJob(job))?;
        if rec.phase.worker() != Some(worker) {
            return Err(HubError::NotAssigned { job, worker });
        }
        if let Some(last) = rec.last_seq {
            if seq <= last {
                return Err(HubError::OutOfOrder { job, seq, last });
            }
        }
        rec.last_seq = Some(seq);
        Ok(rec)
    }

    /// A progress update; returns the job it belongs to.
    pub fn on_status(&mut self, worker: WorkerId, job: JobId, seq: u64) -> Result<&NewJob, HubError> {
        let rec = self.check(worker, job, seq)?;
        rec.phase = JobPhase::Running(worker);
        Ok(&rec.job)
    }

    /// Validate a completion and release the worker. The caller applies the
    /// result to the document.
    pub fn on_complete(&mut self, worker: WorkerId, job: JobId, seq: u64) -> Result<NewJob, HubError> {
        self.check(worker, job, seq)?;
        let rec = self.jobs.remove(&job).expect("checked");
        let w = self.workers.get_mut(&worker).expect("checked");
        w.busy = None;
        w.completed += 1;
        // A cold worker has now loaded the model.
        w.models_loaded.insert(rec.job.required_model.clone());
        Ok(rec.job)
    }

    pub fn on_failure(
        &mut self,
        worker: WorkerId,
        job: JobId,
        seq: u64,
        message: &str,
    ) -> Result<FailureOutcome, HubError> {
        self.check(worker, job, seq)?;
        self.workers.get_mut(&worker).expect("checked").busy = None;
        let max = self.max_attempts;
        let rec = self.jobs.get_mut(&job).expect("checked");
        rec.failures += 1;
        if rec.failures >= max {
            let rec = self.jobs.remove(&job).expect("checked");
            return Ok(FailureOutcome::Failed {
                job: rec.job,
                message: message.to_string(),
            });
        }
        rec.phase = JobPhase::Queued;
        rec.last_seq = None;
        let out = FailureOutcome::Retry {
            job: rec.job.clone(),
            attempt: rec.failures + 1,
        };
        let ty = rec.job.job_type;
        self.queues.entry(ty).or_default().push_front(job);
        Ok(out)
    }

    /// Drop a job. Returns a notice when a worker is running it; the worker
    /// is free for new work immediately.
    pub fn cancel(&mut self, job: JobId) -> Option<CancelNotice> {
        let rec = self.jobs.remove(&job)?;
        match rec.phase {
            JobPhase::Queued => {
                if let Some(q) = self.queues.get_mut(&rec.job.job_type) {
                    q.retain(|j| *j != job);
                }
                None
            }
            JobPhase::Assigned(worker) | JobPhase::Running(worker) => {
                if let Some(w) = self.workers.get_mut(&worker) {
                    w.busy = None;
                }
                Some(CancelNotice { worker, job })
            }
        }
    }

    /// Cancel every job in `doc` targeting one of `cards`.
    pub fn cancel_for_cards(&mut self, doc: &DocId, cards: &[CardId]) -> (Vec<JobId>, Vec<CancelNotice>) {
        let hit: Vec<JobId> = self
            .jobs
            .values()
            .filter(|r| &r.job.doc_id == doc && cards.contains(&r.job.target_card))
            .map(|r| r.job.job_id)
            .collect();
        let mut notices = Vec::new();
        for j in &hit {
            notices.extend(self.cancel(*j));
        }
        (hit, notices)
    }

    /// Jobs of `doc`, for restart bookkeeping.
    pub fn jobs_for_doc<'a>(&'a self, doc: &'a DocId) -> impl Iterator<Item = &'a NewJob> + 'a {
        self.jobs.values().filter(move |r| &r.job.doc_id == doc).map(|r| &r.job)
    }
}
