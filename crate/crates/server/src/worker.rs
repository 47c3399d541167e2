//! Worker process: connects to the gateway, registers its job types, runs
//! one job at a time on local adapters, and reconnects with capped backoff
//! when the connection drops.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use deckflow_core::adapters::{AdapterSet, Capability};
use deckflow_core::assets::AssetRef;
use deckflow_core::hub::{JobType, NewJob};
use deckflow_core::ids::JobId;
use deckflow_core::protocol::{Envelope, JobOutcome, WorkerCommand, WorkerRequest};
use deckflow_core::runtime::{execute_job, status_message, JobOutput};
use futures_util::{SinkExt, StreamExt};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("bad worker config: {0}")]
    BadConfig(String),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("rejected by server: {0}")]
    Rejected(String),
}

/// The adapter capability a job type runs on.
pub fn required_capability(t: JobType) -> Capability {
    match t {
        JobType::GenerateImage => Capability::ImageGen,
        JobType::GenerateAudio => Capability::AudioGen,
        JobType::GenerateText | JobType::InterpretData => Capability::TextGen,
        JobType::ExpandPrompt => Capability::PromptExpand,
    }
}

/// Parse a comma-separated job type list; accepts `generate_image` and
/// `GenerateImage` spellings.
pub fn parse_capabilities(list: &str) -> Result<Vec<JobType>, WorkerError> {
    let norm = |s: &str| s.to_ascii_lowercase().replace(['_', '-'], "");
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t = JobType::ALL
            .into_iter()
            .find(|t| norm(&format!("{t:?}")) == norm(item))
            .ok_or_else(|| WorkerError::BadConfig(format!("unknown capability {item:?}")))?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

pub struct WorkerOptions {
    /// Server base URL; `http://`, `ws://` or bare `host:port`.
    pub server: String,
    pub adapters: Arc<AdapterSet>,
    pub capabilities: Vec<JobType>,
    pub heartbeat: Duration,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl WorkerOptions {
    pub fn new(server: impl Into<String>, adapters: AdapterSet, capabilities: Vec<JobType>) -> Self {
        Self {
            server: server.into(),
            adapters: Arc::new(adapters),
            capabilities,
            heartbeat: Duration::from_secs(5),
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(5),
        }
    }

    /// Every job type this worker's adapters can run.
    pub fn all_capabilities(adapters: &AdapterSet) -> Vec<JobType> {
        JobType::ALL
            .into_iter()
            .filter(|t| adapters.provides(required_capability(*t)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), WorkerError> {
        if self.capabilities.is_empty() {
            return Err(WorkerError::BadConfig("capability list is empty".into()));
        }
        for t in &self.capabilities {
            let cap = required_capability(*t);
            if !self.adapters.provides(cap) {
                return Err(WorkerError::BadConfig(format!("{t:?} needs an adapter providing {cap}")));
            }
        }
        endpoints(&self.server).map(|_| ())
    }
}

/// (HTTP base, worker socket URL).
pub fn endpoints(server: &str) -> Result<(String, String), WorkerError> {
    let s = server.trim().trim_end_matches('/');
    let s = s.strip_suffix("/ws/worker").unwrap_or(s);
    let (http, ws) = if let Some(rest) = s.strip_prefix("ws://") {
        (format!("http://{rest}"), format!("ws://{rest}"))
    } else if let Some(rest) = s.strip_prefix("wss://") {
        (format!("https://{rest}"), format!("wss://{rest}"))
    } else if let Some(rest) = s.strip_prefix("http://") {
        (format!("http://{rest}"), format!("ws://{rest}"))
    } else if let Some(rest) = s.strip_prefix("https://") {
        (format!("https://{rest}"), format!("wss://{rest}"))
    } else if !s.is_empty() && !s.contains("://") {
        (format!("http://{s}"), format!("ws://{s}"))
    } else {
        return Err(WorkerError::BadConfig(format!("unusable server URL {server:?}")));
    };
    Ok((http, format!("{ws}/ws/worker")))
}

/// Run until `shutdown` resolves. Connection failures are retried forever.
pub async fn run(opts: WorkerOptions, shutdown: impl Future<Output = ()>) -> Result<(), WorkerError> {
    opts.validate()?;
    tokio::pin!(shutdown);
    let mut backoff = opts.initial_backoff;
    loop {
        let result = tokio::select! {
            _ = &mut shutdown => return Ok(()),
            r = session(&opts) => r,
        };
        match result {
            Ok(()) => backoff = opts.initial_backoff,
            Err(Fatal(e)) => return Err(e),
            Err(Retry { registered, message }) => {
                if registered {
                    backoff = opts.initial_backoff;
                }
                tracing::warn!("worker connection: {message}; retrying in {backoff:?}");
            }
        }
        tokio::select! {
            _ = &mut shutdown => return Ok(()),
            _ = tokio::time::sleep(backoff) => {}
        }
        backoff = (backoff * 2).min(opts.max_backoff);
    }
}

enum SessionEnd {
    Fatal(WorkerError),
    Retry { registered: bool, message: String },
}
use SessionEnd::{Fatal, Retry};

fn run_and_upload(job: &NewJob, adapters: &AdapterSet, http: &str) -> JobOutcome {
    match execute_job(job, adapters) {
        Ok(JobOutput::Text(t)) => JobOutcome::Text {
            text: t.text,
            truncated: t.truncated,
        },
        Ok(JobOutput::Artifact(a)) => {
            let put = ureq::put(&format!("{http}/assets"))
                .set("Content-Type", &a.media_type)
                .send_bytes(&a.bytes)
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_string().map_err(|e| e.to_string()))
                .and_then(|body| serde_json::from_str::<AssetRef>(&body).map_err(|e| e.to_string()));
            match put {
                Ok(r) => JobOutcome::Asset(r),
                Err(e) => JobOutcome::Error(format!("asset upload failed: {e}")),
            }
        }
        Err(e) => JobOutcome::Error(e.to_string()),
    }
}

async fn session(opts: &WorkerOptions) -> Result<(), SessionEnd> {
    let (http, ws_url) = endpoints(&opts.server).map_err(Fatal)?;
    let mut registered = false;
    let lost = |registered: bool, message: String| Retry { registered, message };
    let (ws, _) = tokio_tungstenite::connect_async(ws_url.as_str())
        .await
        .map_err(|e| lost(false, e.to_string()))?;
    let (mut sink, mut stream) = ws.split();
    let models: Vec<String> = opts.adapters.model_names().into_iter().collect();
    let register = WorkerRequest::Register {
        capabilities: opts.capabilities.clone(),
        models_loaded: models.clone(),
    };
    let mut outgoing = vec![register.to_envelope(Value::from(1))];
    let (done_tx, mut done_rx) = mpsc::unbounded_channel::<(JobId, JobOutcome)>();
    let mut current: Option<JobId> = None;
    let mut heartbeat = tokio::time::interval(opts.heartbeat);
    heartbeat.tick().await;
    loop {
        for env in outgoing.drain(..) {
            sink.send(Message::text(env.to_json()))
                .await
                .map_err(|e| lost(registered, e.to_string()))?;
        }
        tokio::select! {
            msg = stream.next() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Close(_))) | None => return Err(lost(registered, "closed by server".into())),
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => return Err(lost(registered, e.to_string())),
                };
                let Ok(env) = Envelope::parse(&text) else { continue };
                if env.kind == "error" {
                    let code = env.body["code"].as_str().unwrap_or("");
                    match code {
                        "no_capabilities" | "duplicate_registration" => {
                            return Err(Fatal(WorkerError::Rejected(env.body["message"].to_string())));
                        }
                        "unknown_job" => {
                            let job: Option<JobId> = serde_json::from_value(env.body["job_id"].clone()).ok();
                            if job.is_some() && job == current {
                                current = None;
                            }
                        }
                        _ => tracing::warn!("server error: {}", env.body),
                    }
                    continue;
                }
                match WorkerCommand::from_envelope(&env) {
                    Ok(WorkerCommand::Registered { worker_id }) => {
                        registered = true;
                        tracing::info!("registered as worker {worker_id}");
                    }
                    Ok(WorkerCommand::Cancel { job_id }) => {
                        if current == Some(job_id) {
                            current = None;
                        }
                    }
                    Ok(WorkerCommand::JobAssign { job, .. }) => {
                        current = Some(job.job_id);
                        outgoing.push(WorkerRequest::JobStatus {
                            job_id: job.job_id,
                            seq: 1,
                            message: status_message(job.job_type).to_string(),
                        }.to_envelope(Value::Null));
                        let (adapters, http, done) = (opts.adapters.clone(), http.clone(), done_tx.clone());
                        tokio::task::spawn_blocking(move || {
                            let outcome = run_and_upload(&job, &adapters, &http);
                            let _ = done.send((job.job_id, outcome));
                        });
                    }
                    Err(_) => {}
                }
            }
            Some((job_id, outcome)) = done_rx.recv() => {
                // Cancelled jobs finish silently.
                if current == Some(job_id) {
                    current = None;
                    outgoing.push(WorkerRequest::JobResult { job_id, seq: 2, outcome }.to_envelope(Value::Null));
                }
            }
            _ = heartbeat.tick() => {
                outgoing.push(WorkerRequest::Heartbeat { models_loaded: models.clone() }.to_envelope(Value::Null));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capability_lists() {
        assert_eq!(
            parse_capabilities("generate_image, GenerateText,generate-image").unwrap(),
            vec![JobType::GenerateImage, JobType::GenerateText]
        );
        assert!(parse_capabilities("").unwrap().is_empty());
        assert!(parse_capabilities("paint").is_err());
    }

    #[test]
    fn server_urls() {
        let want = ("http://h:1".to_string(), "ws://h:1/ws/worker".to_string());
        for s in ["ws://h:1", "http://h:1/", "h:1", "ws://h:1/ws/worker"] {
            assert_eq!(endpoints(s).unwrap(), want, "{s}");
        }
        assert_eq!(endpoints("wss://h").unwrap().1, "wss://h/ws/worker");
        assert!(endpoints("ftp://h").is_err());
    }

    #[test]
    fn empty_or_unsupported_capabilities_are_rejected() {
        let mut o = WorkerOptions::new("h:1", AdapterSet::walkthrough(), vec![]);
        assert!(o.validate().is_err());
        o.capabilities = WorkerOptions::all_capabilities(&o.adapters);
        assert_eq!(o.capabilities.len(), JobType::ALL.len());
        o.validate().unwrap();
        let mut only_text = AdapterSet::walkthrough();
        only_text.remove(Capability::ImageGen);
        let o = WorkerOptions::new("h:1", only_text, vec![JobType::GenerateImage]);
        assert!(matches!(o.validate(), Err(WorkerError::BadConfig(_))));
    }
}
