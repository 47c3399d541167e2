//! The network surface. All document and scheduling state sits behind one
//! lock around a [`Coordinator`]; socket tasks parse frames, take the lock
//! for the duration of one message, and fan the resulting envelopes out to
//! per-connection outboxes. Broadcasts happen after the revision has been
//! written to disk, so a client never sees a rev the server could lose.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, Query, State as AxState};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use deckflow_core::adapters::AdapterSet;
use deckflow_core::assets::{AssetError, AssetStore, DEFAULT_MAX_ASSET_BYTES};
use deckflow_core::hub::HubError;
use deckflow_core::protocol::{ClientRequest, Envelope, WorkerCommand, WorkerRequest};
use deckflow_core::runtime::Coordinator;
use deckflow_core::templates::Templates;
use deckflow_core::{DocId, Position, WorkerId};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};

use crate::storage::{DataDir, StorageError};

pub type Outbox = mpsc::UnboundedSender<String>;

pub struct GatewayConfig {
    pub adapters: AdapterSet,
    pub templates: Templates,
    pub max_tokens: u32,
    pub asset_cap: usize,
    /// Run jobs on the server's own adapters instead of waiting for workers.
    pub inline_worker: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            adapters: AdapterSet::walkthrough(),
            templates: Templates::default(),
            max_tokens: deckflow_core::composition::DEFAULT_MAX_TOKENS,
            asset_cap: DEFAULT_MAX_ASSET_BYTES,
            inline_worker: false,
        }
    }
}

struct State {
    coord: Coordinator,
    clients: BTreeMap<DocId, Vec<(u64, Outbox)>>,
    workers: BTreeMap<WorkerId, Outbox>,
    /// Stored documents that failed to load; never overwritten.
    broken: BTreeMap<DocId, String>,
    dirty: BTreeSet<DocId>,
    storage_error: Option<String>,
}

pub struct Gateway {
    state: Mutex<State>,
    data: Arc<DataDir>,
    next_conn: AtomicU64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn send(out: &Outbox, env: &Envelope) {
    let _ = out.send(env.to_json());
}

fn mutates(req: &ClientRequest) -> bool {
    !matches!(req, ClientRequest::Join {} | ClientRequest::Copy { .. } | ClientRequest::Info { .. })
}

/// Shares the data directory's asset store with the coordinator.
struct SharedAssets(Arc<DataDir>);

impl AssetStore for SharedAssets {
    fn put(&self, bytes: &[u8], media_type: &str) -> Result<deckflow_core::AssetRef, AssetError> {
        self.0.assets.put(bytes, media_type)
    }
    fn get(&self, id: &str) -> Result<Vec<u8>, AssetError> {
        self.0.assets.get(id)
    }
    fn meta(&self, id: &str) -> Result<deckflow_core::AssetRef, AssetError> {
        self.0.assets.meta(id)
    }
}

impl Gateway {
    /// Build a gateway over `data`, adopting every stored document and
    /// requeueing its unfinished jobs.
    pub fn new(config: GatewayConfig, data: DataDir) -> Arc<Self> {
        let data = Arc::new(data);
        let mut coord = Coordinator::new(config.adapters, Arc::new(SharedAssets(data.clone())))
            .with_templates(config.templates)
            .with_max_tokens(config.max_tokens);
        if config.inline_worker {
            coord.add_inline_worker();
        }
        let mut broken = BTreeMap::new();
        for id in data.docs.list().unwrap_or_default() {
            match data.docs.load(&id) {
                Ok(doc) => coord.load(doc),
                Err(e) => {
                    tracing::warn!("not loading {id}: {e}");
                    broken.insert(id, e.to_string());
                }
            }
        }
        let gw = Arc::new(Self {
            state: Mutex::new(State {
                coord,
                clients: BTreeMap::new(),
                workers: BTreeMap::new(),
                broken,
                dirty: BTreeSet::new(),
                storage_error: None,
            }),
            data,
            next_conn: AtomicU64::new(1),
        });
        let mut st = gw.lock();
        gw.pump(&mut st);
        drop(st);
        gw
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn data(&self) -> &DataDir {
        &self.data
    }

    pub fn connection_id(&self) -> u64 {
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }

    /// Ids and revisions of known documents.
    pub fn documents(&self) -> Vec<Value> {
        let st = self.lock();
        let mut out: Vec<Value> = st
            .coord
            .documents()
            .map(|d| json!({ "doc_id": d.doc_id, "rev": d.rev, "modified_at": d.modified_at }))
            .collect();
        out.extend(st.broken.iter().map(|(id, e)| json!({ "doc_id": id, "error": e })));
        out
    }

    pub fn document_hash(&self, doc_id: &DocId) -> Option<String> {
        self.lock().coord.document(doc_id).map(deckflow_core::canvas::doc_hash)
    }

    /// A copy of the current document.
    pub fn snapshot(&self, doc_id: &DocId) -> Option<deckflow_core::Document> {
        self.lock().coord.document(doc_id).cloned()
    }

    /// Number of live (queued or running) jobs.
    pub fn live_jobs(&self) -> usize {
        self.lock().coord.hub().live_jobs()
    }

    /// Write every document. Called on shutdown.
    pub fn persist_all(&self) -> Result<(), StorageError> {
        let st = self.lock();
        for doc in st.coord.documents() {
            self.data.docs.save(doc, &self.data.assets)?;
        }
        Ok(())
    }

    fn persist_dirty(&self, st: &mut State) -> Result<(), String> {
        while let Some(id) = st.dirty.first().cloned() {
            if let Some(doc) = st.coord.document(&id) {
                self.data.docs.save(doc, &self.data.assets).map_err(|e| e.to_string())?;
            }
            st.dirty.remove(&id);
        }
        Ok(())
    }

    fn notify_all(st: &State, env: &Envelope) {
        let mut seen = BTreeSet::new();
        for (conn, out) in st.clients.values().flatten() {
            if seen.insert(*conn) {
                send(out, env);
            }
        }
    }

    /// Persist then broadcast committed events.
    fn publish(&self, st: &mut State, events: Vec<Envelope>) {
        if events.is_empty() {
            return;
        }
        for e in &events {
            if let Some(d) = &e.doc_id {
                st.dirty.insert(d.clone());
            }
        }
        match self.persist_dirty(st) {
            Ok(()) => {}
            Err(message) => {
                if st.storage_error.is_none() {
                    tracing::error!("{message}");
                    Self::notify_all(st, &Envelope::server_status("storage_failure", &message));
                }
                st.storage_error = Some(message);
            }
        }
        for e in events {
            let Some(doc) = &e.doc_id else { continue };
            if let Some(subs) = st.clients.get_mut(doc) {
                let text = e.to_json();
                subs.retain(|(_, out)| out.send(text.clone()).is_ok());
            }
        }
    }

    /// Retry writing after a storage failure; true when storage is healthy.
    fn storage_ok(&self, st: &mut State) -> bool {
        if st.storage_error.is_none() {
            return true;
        }
        match self.persist_dirty(st) {
            Ok(()) => {
                st.storage_error = None;
                Self::notify_all(st, &Envelope::server_status("ok", "storage recovered"));
                true
            }
            Err(e) => {
                st.storage_error = Some(e);
                false
            }
        }
    }

    /// Dispatch queued jobs to connected workers and deliver cancellations.
    fn pump(&self, st: &mut State) {
        loop {
            let events = st.coord.drain();
            self.publish(st, events);
            let mut lost = Vec::new();
            for a in st.coord.take_assignments() {
                let cmd = WorkerCommand::JobAssign { job: a.job.clone(), attempt: a.attempt };
                let delivered = st
                    .workers
                    .get(&a.worker)
                    .is_some_and(|out| out.send(cmd.to_envelope().to_json()).is_ok());
                if !delivered {
                    lost.push(a.worker);
                }
            }
            for c in st.coord.take_cancels() {
                if let Some(out) = st.workers.get(&c.worker) {
                    send(out, &WorkerCommand::Cancel { job_id: c.job }.to_envelope());
                }
            }
            if lost.is_empty() {
                return;
            }
            for w in lost {
                st.workers.remove(&w);
                st.coord.hub_mut().deregister_worker(w);
            }
        }
    }

    // ---- clients --------------------------------------------------------

    pub fn client_message(&self, conn: u64, out: &Outbox, text: &str) {
        let env = match Envelope::parse(text) {
            Ok(e) => e,
            Err(e) => return send(out, &Envelope::error(&Value::Null, None, "bad_request", &e)),
        };
        let reply = |code: &str, msg: &str| send(out, &Envelope::error(&env.msg_id, env.doc_id.as_ref(), code, msg));
        let doc_id = match env.doc_id.clone() {
            Some(d) if d.is_valid() => d,
            _ => return reply("bad_request", "missing or invalid doc_id"),
        };
        let req = match ClientRequest::from_envelope(&env) {
            Ok(r) => r,
            Err(e) => return reply("bad_request", &e),
        };
        let mut st = self.lock();
        if let Some(e) = st.broken.get(&doc_id) {
            return reply("doc_load_failure", e);
        }
        if let ClientRequest::Join {} = req {
            let session = st.coord.open(&doc_id, now_ms());
            let snapshot = session.snapshot();
            let rev = session.doc().rev;
            let subs = st.clients.entry(doc_id.clone()).or_default();
            if !subs.iter().any(|(c, _)| *c == conn) {
                subs.push((conn, out.clone()));
            }
            send(out, &Envelope::ack(&env.msg_id, Some(&doc_id), json!({ "doc_id": doc_id, "rev": rev })));
            send(out, &snapshot);
            if let Some(e) = &st.storage_error {
                send(out, &Envelope::server_status("storage_failure", e));
            }
            return;
        }
        if mutates(&req) && !self.storage_ok(&mut st) {
            let msg = st.storage_error.clone().unwrap_or_default();
            return reply("storage_failure", &msg);
        }
        match st.coord.request(&doc_id, &req, now_ms()) {
            Ok(r) => {
                self.publish(&mut st, r.events);
                send(out, &Envelope::ack(&env.msg_id, Some(&doc_id), r.ack));
                self.pump(&mut st);
            }
            Err(e) => reply(e.code(), &e.to_string()),
        }
    }

    pub fn client_closed(&self, conn: u64) {
        let mut st = self.lock();
        for subs in st.clients.values_mut() {
            subs.retain(|(c, _)| *c != conn);
        }
        st.clients.retain(|_, subs| !subs.is_empty());
    }

    /// A dropped file becomes a card.
    pub fn upload(&self, doc_id: &DocId, bytes: &[u8], file_name: &str, position: Position) -> Result<Value, (String, String)> {
        let mut st = self.lock();
        if let Some(e) = st.broken.get(doc_id) {
            return Err(("doc_load_failure".into(), e.clone()));
        }
        if !self.storage_ok(&mut st) {
            return Err(("storage_failure".into(), st.storage_error.clone().unwrap_or_default()));
        }
        let (card, events) = st
            .coord
            .ingest_upload(doc_id, bytes, file_name, position, now_ms())
            .map_err(|e| (e.code().to_string(), e.to_string()))?;
        let rev = st.coord.document(doc_id).map_or(0, |d| d.rev);
        self.publish(&mut st, events);
        Ok(json!({ "card_id": card, "rev": rev }))
    }

    // ---- workers --------------------------------------------------------

    pub fn worker_message(&self, conn: u64, out: &Outbox, text: &str) {
        let env = match Envelope::parse(text) {
            Ok(e) => e,
            Err(e) => return send(out, &Envelope::error(&Value::Null, None, "bad_request", &e)),
        };
        let req = match WorkerRequest::from_envelope(&env) {
            Ok(r) => r,
            Err(e) => return send(out, &Envelope::error(&env.msg_id, None, "bad_request", &e)),
        };
        let mut st = self.lock();
        if let WorkerRequest::Register { capabilities, models_loaded } = req {
            match st.coord.hub_mut().register_worker(conn, capabilities, models_loaded) {
                Ok(w) => {
                    st.workers.insert(w, out.clone());
                    let mut ack = WorkerCommand::Registered { worker_id: w }.to_envelope();
                    ack.msg_id = env.msg_id.clone();
                    send(out, &ack);
                    tracing::info!("worker {w} registered");
                    self.pump(&mut st);
                }
                Err(e) => send(out, &Envelope::error(&env.msg_id, None, hub_code(&e), &e.to_string())),
            }
            return;
        }
        let Some(worker) = st.coord.hub().worker_for_conn(conn) else {
            return send(out, &Envelope::error(&env.msg_id, None, "not_registered", "register first"));
        };
        let result = match req {
            WorkerRequest::Register { .. } => unreachable!("handled above"),
            WorkerRequest::Heartbeat { models_loaded } => st.coord.hub_mut().heartbeat(worker, models_loaded).map(|_| Vec::new()),
            WorkerRequest::JobStatus { job_id, seq, message } => st.coord.worker_status(worker, job_id, seq, &message),
            WorkerRequest::JobResult { job_id, seq, outcome } => st.coord.worker_result(worker, job_id, seq, outcome),
        };
        match result {
            Ok(events) => self.publish(&mut st, events),
            // Stale progress; nothing to tell the worker.
            Err(HubError::OutOfOrder { .. }) => {}
            Err(e) => {
                let mut err = Envelope::error(&env.msg_id, None, hub_code(&e), &e.to_string());
                if let Some(job) = env.body.get("job_id") {
                    err.body["job_id"] = job.clone();
                }
                send(out, &err);
            }
        }
        self.pump(&mut st);
    }

    pub fn worker_closed(&self, conn: u64) {
        let mut st = self.lock();
        if let Some(w) = st.coord.hub().worker_for_conn(conn) {
            st.workers.remove(&w);
            if let Some(job) = st.coord.hub_mut().deregister_worker(w) {
                tracing::info!("worker {w} lost; job {job} requeued");
            }
            self.pump(&mut st);
        }
    }
}

fn hub_code(e: &HubError) -> &'static str {
    match e {
        HubError::DuplicateRegistration { .. } => "duplicate_registration",
        HubError::NoCapabilities => "no_capabilities",
        HubError::UnknownWorker(_) => "unknown_worker",
        HubError::UnknownJob(_) | HubError::NotAssigned { .. } => "unknown_job",
        HubError::OutOfOrder { .. } => "out_of_order",
    }
}

// ---- HTTP -----------------------------------------------------------------

fn http_error(status: StatusCode, code: &str, message: &str) -> Response {
    (status, Json(json!({ "code": code, "message": message }))).into_response()
}

fn asset_error(e: AssetError) -> Response {
    let (status, code) = match &e {
        AssetError::NotFound(_) => (StatusCode::NOT_FOUND, "asset_not_found"),
        AssetError::TooLarge { .. } => (StatusCode::PAYLOAD_TOO_LARGE, "asset_too_large"),
        AssetError::EmptyMediaType => (StatusCode::BAD_REQUEST, "bad_request"),
        AssetError::Corrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "asset_corrupt"),
        AssetError::Storage(_) => (StatusCode::SERVICE_UNAVAILABLE, "storage_failure"),
    };
    http_error(status, code, &e.to_string())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("handler task panicked")
}

async fn get_asset(AxState(gw): AxState<Arc<Gateway>>, Path(id): Path<String>) -> Response {
    let found = blocking(move || {
        let meta = gw.data.assets.meta(&id)?;
        Ok::<_, AssetError>((meta, gw.data.assets.get(&id)?))
    })
    .await;
    match found {
        Ok((meta, bytes)) => ([(header::CONTENT_TYPE, meta.media_type)], bytes).into_response(),
        Err(e) => asset_error(e),
    }
}

async fn put_asset(AxState(gw): AxState<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> Response {
    let media_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    match blocking(move || gw.data.assets.put(&body, &media_type)).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => asset_error(e),
    }
}

#[derive(Deserialize)]
struct UploadQuery {
    name: String,
    #[serde(default)]
    x: f64,
    #[serde(default)]
    y: f64,
}

async fn upload(
    AxState(gw): AxState<Arc<Gateway>>,
    Path(doc_id): Path<String>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Response {
    let doc_id = DocId::new(doc_id);
    if !doc_id.is_valid() {
        return http_error(StatusCode::BAD_REQUEST, "bad_request", "invalid doc_id");
    }
    match blocking(move || gw.upload(&doc_id, &body, &q.name, Position::new(q.x, q.y))).await {
        Ok(v) => Json(v).into_response(),
        Err((code, message)) => {
            let status = match code.as_str() {
                "unsupported_media_type" => StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "asset_too_large" => StatusCode::PAYLOAD_TOO_LARGE,
                "storage_failure" => StatusCode::SERVICE_UNAVAILABLE,
                _ => StatusCode::BAD_REQUEST,
            };
            http_error(status, &code, &message)
        }
    }
}

async fn list_docs(AxState(gw): AxState<Arc<Gateway>>) -> Response {
    Json(blocking(move || gw.documents()).await).into_response()
}

#[derive(Clone, Copy)]
enum Role {
    Client,
    Worker,
}

async fn ws_client(AxState(gw): AxState<Arc<Gateway>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| connection(gw, socket, Role::Client))
}

async fn ws_worker(AxState(gw): AxState<Arc<Gateway>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| connection(gw, socket, Role::Worker))
}

async fn connection(gw: Arc<Gateway>, socket: WebSocket, role: Role) {
    let conn = gw.connection_id();
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => match String::from_utf8(b.to_vec()) {
                Ok(t) => t,
                Err(_) => continue,
            },
            Message::Close(_) => break,
            _ => continue,
        };
        let (gw, tx) = (gw.clone(), tx.clone());
        blocking(move || match role {
            Role::Client => gw.client_message(conn, &tx, &text),
            Role::Worker => gw.worker_message(conn, &tx, &text),
        })
        .await;
    }
    let closing = gw.clone();
    blocking(move || match role {
        Role::Client => closing.client_closed(conn),
        Role::Worker => closing.worker_closed(conn),
    })
    .await;
    drop(tx);
    let _ = writer.await;
}

pub fn router(gw: Arc<Gateway>, asset_cap: usize) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/docs", get(list_docs))
        .route("/docs/{doc_id}/upload", post(upload))
        .route("/assets", put(put_asset))
        .route("/assets/{id}", get(get_asset))
        .route("/ws/client", get(ws_client))
        .route("/ws/worker", get(ws_worker))
        .layer(DefaultBodyLimit::max(asset_cap.saturating_add(1)))
        .with_state(gw)
}

/// A running server.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub gateway: Arc<Gateway>,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    /// Stop accepting, persist every document and wait for the listener.
    pub async fn shutdown(mut self) -> Result<(), StorageError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = self.task.await;
        let gw = self.gateway.clone();
        blocking(move || gw.persist_all()).await
    }

    /// Drop the server without the final persist, as a crash would.
    pub fn abort(self) {
        self.task.abort();
    }
}

/// Serve `gateway` on an already-bound listener.
pub fn spawn(gateway: Arc<Gateway>, listener: TcpListener, asset_cap: usize) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let app = router(gateway.clone(), asset_cap);
    let task = tokio::spawn(async move {
        // Upgraded sockets are not tracked by graceful shutdown, so stop by
        // dropping the accept loop outright.
        tokio::select! {
            r = axum::serve(listener, app) => r,
            _ = stopped => Ok(()),
        }
    });
    Ok(ServerHandle {
        addr,
        gateway,
        stop: Some(stop),
        task,
    })
}
