#![allow(dead_code)]

pub mod sha256;

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use deckflow_core::protocol::Envelope;
use deckflow_core::DocId;
use deckflow_server::gateway::{self, Gateway, GatewayConfig, ServerHandle};
use deckflow_server::storage::DataDir;
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub const WAIT: Duration = Duration::from_secs(20);

pub async fn start_in(dir: &Path, cfg: GatewayConfig) -> ServerHandle {
    let cap = cfg.asset_cap;
    let data = DataDir::open(dir, cap).unwrap();
    let gw = Gateway::new(cfg, data);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    gateway::spawn(gw, listener, cap).unwrap()
}

pub async fn start(cfg: GatewayConfig) -> (tempfile::TempDir, ServerHandle) {
    let dir = tempfile::tempdir().unwrap();
    let h = start_in(dir.path(), cfg).await;
    (dir, h)
}

pub fn http(addr: SocketAddr, path: &str) -> String {
    format!("http://{addr}{path}")
}

/// Blocking HTTP call off the async runtime: (status, body bytes).
pub async fn call(method: &'static str, url: String, content_type: Option<&'static str>, body: Vec<u8>) -> (u16, Vec<u8>) {
    tokio::task::spawn_blocking(move || {
        let mut req = ureq::request(method, &url);
        if let Some(ct) = content_type {
            req = req.set("Content-Type", ct);
        }
        let resp = if method == "GET" { req.call() } else { req.send_bytes(&body) };
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => panic!("{e}"),
        };
        let status = resp.status();
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut bytes).unwrap();
        (status, bytes)
    })
    .await
    .unwrap()
}

pub fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    next: u64,
    /// Envelopes received while waiting for something else.
    pub seen: Vec<Envelope>,
}

impl Client {
    pub async fn connect(addr: SocketAddr, path: &str) -> Self {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}{path}")).await.unwrap();
        Self { ws, next: 1, seen: Vec::new() }
    }

    pub async fn send_raw(&mut self, text: String) {
        self.ws.send(Message::text(text)).await.unwrap();
    }

    pub async fn send(&mut self, kind: &str, doc: Option<&str>, body: Value) -> Value {
        let msg_id = json!(self.next);
        self.next += 1;
        let mut env = Envelope::new(kind, body);
        env.msg_id = msg_id.clone();
        env.doc_id = doc.map(DocId::new);
        self.send_raw(env.to_json()).await;
        msg_id
    }

    pub async fn recv(&mut self) -> Envelope {
        loop {
            let msg = tokio::time::timeout(WAIT, self.ws.next()).await.expect("timed out waiting for a message");
            match msg.expect("socket closed").unwrap() {
                Message::Text(t) => return Envelope::parse(&t).unwrap(),
                _ => continue,
            }
        }
    }

    /// Receive until `pred` matches; everything before it lands in `seen`.
    pub async fn recv_until(&mut self, mut pred: impl FnMut(&Envelope) -> bool) -> Envelope {
        loop {
            let env = self.recv().await;
            if pred(&env) {
                return env;
            }
            self.seen.push(env);
        }
    }

    /// Like `recv_until`, but looks through `seen` first.
    pub async fn find(&mut self, mut pred: impl FnMut(&Envelope) -> bool) -> Envelope {
        if let Some(i) = self.seen.iter().position(&mut pred) {
            return self.seen.remove(i);
        }
        self.recv_until(pred).await
    }

    /// Send a request and return its ack or error.
    pub async fn request(&mut self, kind: &str, doc: &str, body: Value) -> Envelope {
        let id = self.send(kind, Some(doc), body).await;
        self.recv_until(|e| e.msg_id == id && (e.kind == "ack" || e.kind == "error")).await
    }

    pub async fn ok(&mut self, kind: &str, doc: &str, body: Value) -> Value {
        let r = self.request(kind, doc, body).await;
        assert_eq!(r.kind, "ack", "{kind}: {:?}", r.body);
        r.body
    }

    pub async fn join(&mut self, doc: &str) -> Envelope {
        self.ok("join", doc, json!({})).await;
        self.recv_until(|e| e.kind == "snapshot").await
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// Text card, image action wired to it; returns (text, action).
pub async fn wired_action(c: &mut Client, doc: &str, text: &str, modality: &str) -> (String, String) {
    let t = c.ok("create_card", doc, json!({ "kind": "text", "position": { "x": 0, "y": 0 }, "text": text })).await;
    let a = c
        .ok(
            "create_card",
            doc,
            json!({ "kind": "action", "position": { "x": 300, "y": 0 }, "target_modality": modality, "labels": ["Subject"] }),
        )
        .await;
    let (t, a) = (t["card_id"].as_str().unwrap().to_string(), a["card_id"].as_str().unwrap().to_string());
    c.ok("connect", doc, json!({ "source": t, "action": a, "slot_id": 0 })).await;
    (t, a)
}

/// Poll the server until `pred` holds for the document or time runs out.
pub async fn wait_for(h: &ServerHandle, doc: &str, mut pred: impl FnMut(&deckflow_core::Document) -> bool) -> deckflow_core::Document {
    let doc = DocId::new(doc);
    let deadline = tokio::time::Instant::now() + WAIT;
    loop {
        let d = h.gateway.snapshot(&doc);
        if let Some(d) = d {
            if pred(&d) {
                return d;
            }
        }
        assert!(tokio::time::Instant::now() < deadline, "condition not reached");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}
