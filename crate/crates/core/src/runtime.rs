//! Single-threaded glue between sessions, the hub and in-process mock
//! workers. Used by replay, examples and tests; the network server wires
//! the same pieces together with its own locking.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::adapters::mock::fnv1a64;
use crate::adapters::{AdapterError, AdapterSet, Artifact, GenRequest, TemplateKind, TextOutput, TextRequest};
use crate::assets::AssetStore;
use crate::canvas::{Canvas, Document};
use crate::composition::{GenerationConfig, DEFAULT_MAX_TOKENS};
use crate::hub::{Assignment, CancelNotice, FailureOutcome, Hub, HubError, JobType, NewJob};
use crate::ids::{DocId, IdGen, JobId, WorkerId};
use crate::lifecycle::Payload;
use crate::protocol::{ClientRequest, Envelope, JobOutcome};
use crate::session::{DocSession, Reply, Services, SessionError};
use crate::templates::Templates;

/// Connection id reserved for the in-process worker.
pub const INLINE_CONN: u64 = u64::MAX;

pub fn status_message(job_type: JobType) -> &'static str {
    match job_type {
        JobType::GenerateImage => "Generating Image",
        JobType::GenerateAudio => "Generating Audio",
        JobType::GenerateText => "Generating Text",
        JobType::InterpretData => "Interpret Data",
        JobType::ExpandPrompt => "Expanding Prompt",
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum JobOutput {
    Artifact(Artifact),
    Text(TextOutput),
}

/// Run a job's model call. Workers do this on their own adapters.
pub fn execute_job(job: &NewJob, adapters: &AdapterSet) -> Result<JobOutput, AdapterError> {
    let p = &job.payload;
    let gen = GenRequest {
        prompt: p.prompt.clone(),
        seed: p.seed,
        sample_index: p.sample_index,
    };
    let text = |template| TextRequest {
        template,
        inputs: vec![p.prompt.clone()],
        prompt: p.prompt.clone(),
        max_tokens: p.max_tokens.unwrap_or(DEFAULT_MAX_TOKENS),
    };
    Ok(match job.job_type {
        JobType::GenerateImage => JobOutput::Artifact(adapters.generate_image(&gen)?),
        JobType::GenerateAudio => JobOutput::Artifact(adapters.generate_audio(&gen)?),
        JobType::GenerateText | JobType::InterpretData => {
            JobOutput::Text(adapters.generate_text(&text(TemplateKind::Freeform))?)
        }
        JobType::ExpandPrompt => JobOutput::Text(adapters.expand_prompt(&text(TemplateKind::Expand))?),
    })
}

/// Documents, hub and an optional in-process worker, driven synchronously.
pub struct Coordinator {
    adapters: AdapterSet,
    assets: Arc<dyn AssetStore>,
    templates: Templates,
    gen: GenerationConfig,
    max_tokens: u32,
    deterministic: bool,
    docs: BTreeMap<DocId, DocSession>,
    hub: Hub,
    inline: Option<WorkerId>,
    /// Assignments for workers other than the inline one.
    external: Vec<Assignment>,
    cancels: Vec<CancelNotice>,
}

impl Coordinator {
    pub fn new(adapters: AdapterSet, assets: Arc<dyn AssetStore>) -> Self {
        let gen = GenerationConfig::from_adapters(&adapters);
        Self {
            adapters,
            assets,
            templates: Templates::default(),
            gen,
            max_tokens: DEFAULT_MAX_TOKENS,
            deterministic: false,
            docs: BTreeMap::new(),
            hub: Hub::default(),
            inline: None,
            external: Vec::new(),
            cancels: Vec::new(),
        }
    }

    /// Ids come from a per-document seeded generator and a clock that only
    /// moves when the caller sets it.
    pub fn deterministic(adapters: AdapterSet, assets: Arc<dyn AssetStore>) -> Self {
        let mut c = Self::new(adapters, assets);
        c.deterministic = true;
        c
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_hub(mut self, hub: Hub) -> Self {
        self.hub = hub;
        self
    }

    pub fn hub(&self) -> &Hub {
        &self.hub
    }

    pub fn hub_mut(&mut self) -> &mut Hub {
        &mut self.hub
    }

    pub fn assets(&self) -> &Arc<dyn AssetStore> {
        &self.assets
    }

    pub fn adapters(&self) -> &AdapterSet {
        &self.adapters
    }

    fn services(&self) -> Services<'_> {
        Services {
            adapters: &self.adapters,
            assets: self.assets.as_ref(),
            templates: &self.templates,
            gen: &self.gen,
            max_tokens: self.max_tokens,
        }
    }

    fn id_gen(&self, doc_id: &DocId, now_ms: u64) -> IdGen {
        if self.deterministic {
            IdGen::deterministic(fnv1a64(doc_id.as_str().as_bytes()), now_ms)
        } else {
            IdGen::system()
        }
    }

    /// The session for `doc_id`, created empty on first use.
    pub fn open(&mut self, doc_id: &DocId, now_ms: u64) -> &mut DocSession {
        if !self.docs.contains_key(doc_id) {
            let canvas = Canvas::new(doc_id.clone(), self.id_gen(doc_id, now_ms));
            self.docs.insert(doc_id.clone(), DocSession::new(canvas));
        }
        self.docs.get_mut(doc_id).expect("inserted")
    }

    /// Adopt a stored document and requeue its pending jobs.
    pub fn load(&mut self, doc: Document) {
        let doc_id = doc.doc_id.clone();
        let ids = self.id_gen(&doc_id, doc.modified_at);
        let session = DocSession::new(Canvas::from_document(doc, ids));
        for job in session.resumable_jobs(&self.gen) {
            self.hub.enqueue(job);
        }
        self.docs.insert(doc_id, session);
    }

    pub fn session(&self, doc_id: &DocId) -> Option<&DocSession> {
        self.docs.get(doc_id)
    }

    pub fn document(&self, doc_id: &DocId) -> Option<&Document> {
        self.docs.get(doc_id).map(DocSession::doc)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values().map(DocSession::doc)
    }

    /// Handle a client request. In deterministic mode `now_ms` pins the
    /// clock first.
    pub fn request(&mut self, doc_id: &DocId, req: &ClientRequest, now_ms: u64) -> Result<Reply, SessionError> {
        let deterministic = self.deterministic;
        self.open(doc_id, now_ms);
        let mut session = self.docs.remove(doc_id).expect("opened");
        if deterministic {
            session.set_now(now_ms);
        }
        let result = session.handle(req, &self.services());
        if let Ok(reply) = &result {
            for job in &reply.jobs {
                if session.check_target(job).is_ok() {
                    self.hub.enqueue(job.clone());
                }
            }
            let (_, notices) = self.hub.cancel_for_cards(doc_id, &reply.removed_cards);
            self.cancels.extend(notices);
        }
        self.docs.insert(doc_id.clone(), session);
        result
    }

    /// A dropped file becomes a card in `doc_id`.
    pub fn ingest_upload(
        &mut self,
        doc_id: &DocId,
        bytes: &[u8],
        file_name: &str,
        position: crate::canvas::Position,
        now_ms: u64,
    ) -> Result<(crate::ids::CardId, Vec<Envelope>), SessionError> {
        let deterministic = self.deterministic;
        self.open(doc_id, now_ms);
        let mut session = self.docs.remove(doc_id).expect("opened");
        if deterministic {
            session.set_now(now_ms);
        }
        let result = session.ingest_upload(bytes, file_name, position, &self.services());
        self.docs.insert(doc_id.clone(), session);
        result
    }

    /// Register the in-process mock worker for every job type.
    pub fn add_inline_worker(&mut self) -> WorkerId {
        if let Some(w) = self.inline {
            return w;
        }
        let w = self
            .hub
            .register_worker(INLINE_CONN, JobType::ALL, self.adapters.model_names())
            .expect("inline worker registers once");
        self.inline = Some(w);
        w
    }

    /// Dispatch and run inline work until nothing assignable remains.
    /// Returns the events produced, in order.
    pub fn drain(&mut self) -> Vec<Envelope> {
        let mut events = Vec::new();
        loop {
            let assignments = self.hub.dispatch();
            if assignments.is_empty() {
                return events;
            }
            for a in assignments {
                if Some(a.worker) == self.inline {
                    events.extend(self.run_inline(&a));
                } else {
                    self.external.push(a);
                }
            }
        }
    }

    fn run_inline(&mut self, a: &Assignment) -> Vec<Envelope> {
        let job = &a.job;
        let mut events = self
            .worker_status(a.worker, job.job_id, 1, status_message(job.job_type))
            .unwrap_or_default();
        let outcome = match execute_job(job, &self.adapters) {
            Ok(JobOutput::Artifact(art)) => match self.assets.put(&art.bytes, &art.media_type) {
                Ok(r) => JobOutcome::Asset(r),
                Err(e) => JobOutcome::Error(e.to_string()),
            },
            Ok(JobOutput::Text(t)) => JobOutcome::Text {
                text: t.text,
                truncated: t.truncated,
            },
            Err(e) => JobOutcome::Error(e.to_string()),
        };
        events.extend(self.worker_result(a.worker, job.job_id, 2, outcome).unwrap_or_default());
        events
    }

    /// Assignments handed to non-inline workers since the last call.
    pub fn take_assignments(&mut self) -> Vec<Assignment> {
        std::mem::take(&mut self.external)
    }

    pub fn take_cancels(&mut self) -> Vec<CancelNotice> {
        std::mem::take(&mut self.cancels)
    }

    pub fn worker_status(&mut self, worker: WorkerId, job: JobId, seq: u64, message: &str) -> Result<Vec<Envelope>, HubError> {
        let job = self.hub.on_status(worker, job, seq)?.clone();
        Ok(match self.docs.get_mut(&job.doc_id) {
            Some(s) => s.apply_status(&job, message),
            None => Vec::new(),
        })
    }

    pub fn worker_result(
        &mut self,
        worker: WorkerId,
        job_id: JobId,
        seq: u64,
        outcome: JobOutcome,
    ) -> Result<Vec<Envelope>, HubError> {
        let svc = Services {
            adapters: &self.adapters,
            assets: self.assets.as_ref(),
            templates: &self.templates,
            gen: &self.gen,
            max_tokens: self.max_tokens,
        };
        let payload = match outcome {
            JobOutcome::Asset(a) if self.assets.contains(&a.id) => Payload::Asset(a),
            JobOutcome::Asset(a) => return self.fail_job(worker, job_id, seq, &format!("asset {} was not uploaded", a.id)),
            JobOutcome::Text { text, truncated } => Payload::Text { text, truncated },
            JobOutcome::Error(message) => return self.fail_job(worker, job_id, seq, &message),
        };
        let job = self.hub.on_complete(worker, job_id, seq)?;
        Ok(match self.docs.get_mut(&job.doc_id) {
            Some(s) => match s.apply_result(&job, payload, &svc) {
                Ok(ev) => ev,
                Err(e) => s.apply_failure(&job, &e.to_string()),
            },
            None => Vec::new(),
        })
    }

    fn fail_job(&mut self, worker: WorkerId, job: JobId, seq: u64, message: &str) -> Result<Vec<Envelope>, HubError> {
        let outcome = self.hub.on_failure(worker, job, seq, message)?;
        let (job, retry) = match &outcome {
            FailureOutcome::Retry { job, .. } => (job, true),
            FailureOutcome::Failed { job, .. } => (job, false),
        };
        Ok(match self.docs.get_mut(&job.doc_id) {
            Some(s) if retry => s.apply_retry(job),
            Some(s) => s.apply_failure(job, message),
            None => Vec::new(),
        })
    }
}
