//! End-to-end behavior over real sockets: sessions, broadcast, assets,
//! uploads, workers and persistence.

mod common;

use std::sync::Arc;
use std::time::Duration;

use common::sha256::sha256_oracle;
use common::*;
use deckflow_core::adapters::mock::{mock_png, mock_wav, FailingAdapter};
use deckflow_core::adapters::{AdapterSet, Capability};
use deckflow_core::hub::JobType;
use deckflow_core::protocol::{Envelope, EventBody, WorkerCommand};
use deckflow_core::{DocId, LifecycleState};
use deckflow_server::gateway::GatewayConfig;
use deckflow_server::worker::{self, WorkerOptions};
use serde_json::{json, Value};
use tokio::sync::oneshot;

fn spawn_worker(addr: std::net::SocketAddr, adapters: AdapterSet, caps: Vec<JobType>) -> oneshot::Sender<()> {
    let (stop, stopped) = oneshot::channel::<()>();
    let mut opts = WorkerOptions::new(format!("ws://{addr}"), adapters, caps);
    opts.heartbeat = Duration::from_millis(200);
    opts.initial_backoff = Duration::from_millis(20);
    opts.max_backoff = Duration::from_millis(200);
    tokio::spawn(async move {
        worker::run(opts, async {
            let _ = stopped.await;
        })
        .await
        .unwrap();
    });
    stop
}

fn all_settled(d: &deckflow_core::Document) -> bool {
    d.data_cards.len() >= 12 && d.data_cards.values().all(|c| c.gen_state.state.is_terminal())
}

#[tokio::test]
async fn health_and_empty_join() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    assert_eq!(call("GET", http(h.addr, "/healthz"), None, vec![]).await, (200, b"ok".to_vec()));
    assert_eq!(json_of(&call("GET", http(h.addr, "/docs"), None, vec![]).await.1), json!([]));
    let mut c = Client::connect(h.addr, "/ws/client").await;
    let snap = c.join("empty").await;
    assert_eq!(snap.rev, Some(0));
    for k in ["data_cards", "action_cards", "clusters"] {
        assert_eq!(snap.body[k], json!([]), "{k}");
    }
    let docs = json_of(&call("GET", http(h.addr, "/docs"), None, vec![]).await.1);
    assert_eq!(docs[0]["doc_id"], "empty");
}

#[tokio::test]
async fn mutations_reach_other_clients_and_errors_keep_the_socket() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let mut a = Client::connect(h.addr, "/ws/client").await;
    let mut b = Client::connect(h.addr, "/ws/client").await;
    a.join("d").await;
    b.join("d").await;
    let ack = a.ok("create_card", "d", json!({ "kind": "text", "position": { "x": 1, "y": 2 }, "text": "hi" })).await;
    assert_eq!(ack["rev"], 1);
    let ev = b.recv_until(|e| e.kind == "event").await;
    assert_eq!(ev.rev, Some(1));
    let body: EventBody = serde_json::from_value(ev.body).unwrap();
    assert_eq!(body.op, "create_card");
    assert_eq!(body.changes.data_cards[0].text(), Some("hi"));

    let err = a.request("update_text", "d", json!({ "card_id": "01ARZ3NDEKTSV4RRFFQ69G5FAV", "text": "x" })).await;
    assert_eq!(err.kind, "error");
    assert_eq!(err.body["code"], "missing_card");
    // Unknown kinds and garbage are answered too.
    assert_eq!(a.request("teleport", "d", json!({})).await.body["code"], "bad_request");
    a.send_raw("not json".into()).await;
    assert_eq!(a.recv_until(|e| e.kind == "error").await.body["code"], "bad_request");
    let ok = a.ok("update_text", "d", json!({ "card_id": ack["card_id"], "text": "still here" })).await;
    assert_eq!(ok["rev"], 2);
}

#[tokio::test]
async fn every_request_is_answered_once_and_events_arrive_in_rev_order() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let mut watcher = Client::connect(h.addr, "/ws/client").await;
    watcher.join("busy").await;
    let per_client = 25;
    let mut tasks = Vec::new();
    for k in 0..4 {
        let addr = h.addr;
        tasks.push(tokio::spawn(async move {
            let mut c = Client::connect(addr, "/ws/client").await;
            let mut ids = Vec::new();
            for i in 0..per_client {
                let body = json!({ "kind": "text", "position": { "x": i, "y": k }, "text": format!("{k}/{i}") });
                ids.push(c.send("create_card", Some("busy"), body).await);
            }
            let mut answered = Vec::new();
            while answered.len() < ids.len() {
                let e = c.recv().await;
                assert!(e.kind == "ack" || e.kind == "error");
                answered.push(e.msg_id);
            }
            assert_eq!(answered, ids);
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let mut revs = Vec::new();
    while revs.len() < 4 * per_client {
        let e = watcher.recv_until(|e| e.kind == "event").await;
        revs.push(e.rev.unwrap());
    }
    assert_eq!(revs, (1..=4 * per_client as u64).collect::<Vec<_>>());
}

#[tokio::test]
async fn asset_channel() {
    let cfg = GatewayConfig {
        asset_cap: 1024,
        ..GatewayConfig::default()
    };
    let (dir, h) = start(cfg).await;
    let (status, body) = call("PUT", http(h.addr, "/assets"), Some("text/plain"), vec![]).await;
    assert_eq!(status, 200);
    let r = json_of(&body);
    assert_eq!(r["id"], sha256_oracle(b""));
    assert_eq!(r["id"], "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    assert_eq!(r["byte_length"], 0);

    let png = mock_png("river");
    let first = json_of(&call("PUT", http(h.addr, "/assets"), Some("image/png"), png.clone()).await.1);
    let second = json_of(&call("PUT", http(h.addr, "/assets"), Some("image/png"), png.clone()).await.1);
    assert_eq!(first, second);
    assert_eq!(first["id"], sha256_oracle(&png));
    let stored = std::fs::read_dir(dir.path().join("assets")).unwrap().count();
    assert_eq!(stored, 4, "two assets, each with a type sidecar");
    let (status, bytes) = call("GET", http(h.addr, &format!("/assets/{}", first["id"].as_str().unwrap())), None, vec![]).await;
    assert_eq!((status, bytes), (200, png));

    let (status, body) = call("GET", http(h.addr, &format!("/assets/{}", "0".repeat(64))), None, vec![]).await;
    assert_eq!((status, json_of(&body)["code"].clone()), (404, json!("asset_not_found")));
    assert_eq!(call("GET", http(h.addr, "/assets/..%2Fdocs"), None, vec![]).await.0, 404);
    let (status, body) = call("PUT", http(h.addr, "/assets"), Some("image/png"), vec![0; 1025]).await;
    assert_eq!(status, 413, "{}", String::from_utf8_lossy(&body));
    assert_eq!(call("PUT", http(h.addr, "/assets"), None, vec![1]).await.0, 400);
}

#[tokio::test]
async fn dropped_files_become_cards() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let mut c = Client::connect(h.addr, "/ws/client").await;
    c.join("up").await;
    let wav = mock_wav("rain");
    let (status, body) = call("POST", http(h.addr, "/docs/up/upload?name=rain.wav&x=5&y=6"), None, wav.clone()).await;
    assert_eq!(status, 200);
    let id = json_of(&body)["card_id"].as_str().unwrap().to_string();
    let ev = c.recv_until(|e| e.kind == "event").await;
    let card = &serde_json::from_value::<EventBody>(ev.body).unwrap().changes.data_cards[0];
    assert_eq!(card.id.to_string(), id);
    assert_eq!(card.kind, deckflow_core::Modality::Audio);
    assert_eq!(card.annotation.as_deref(), Some("rain.wav"));
    assert_eq!(card.asset().unwrap().id, sha256_oracle(&wav));

    let (status, _) = call("POST", http(h.addr, "/docs/up/upload?name=notes.txt"), None, b"misty hills".to_vec()).await;
    assert_eq!(status, 200);
    let ev = c.recv_until(|e| e.kind == "event").await;
    assert_eq!(serde_json::from_value::<EventBody>(ev.body).unwrap().changes.data_cards[0].text(), Some("misty hills"));

    let (status, body) = call("POST", http(h.addr, "/docs/up/upload?name=blob.xyz"), None, vec![0, 159, 146, 150]).await;
    assert_eq!((status, json_of(&body)["code"].clone()), (415, json!("unsupported_media_type")));
}

#[tokio::test]
async fn worker_completes_a_grid() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let _w = spawn_worker(h.addr, AdapterSet::walkthrough(), vec![JobType::GenerateImage]);
    let mut c = Client::connect(h.addr, "/ws/client").await;
    c.join("grid").await;
    let (_, action) = wired_action(&mut c, "grid", "a lighthouse", "image").await;
    let ack = c.ok("trigger_action", "grid", json!({ "action": action })).await;
    assert_eq!(ack["prompt_cards"].as_array().unwrap().len(), 3);
    assert_eq!(ack["output_cards"].as_array().unwrap().len(), 9);
    let doc = wait_for(&h, "grid", all_settled).await;
    for d in doc.data_cards.values().filter(|d| d.kind == deckflow_core::Modality::Image) {
        assert_eq!(d.gen_state.state, LifecycleState::Success);
        let id = &d.asset().unwrap().id;
        let (_, bytes) = call("GET", http(h.addr, &format!("/assets/{id}")), None, vec![]).await;
        assert_eq!(bytes, mock_png(&d.provenance.as_ref().unwrap().prompt));
    }
    // The client saw each output go waiting → loading → success.
    let mut states = Vec::new();
    while states.iter().filter(|s| **s == "success").count() < 9 {
        let e = c.recv_until(|e| e.kind == "event").await;
        let body: EventBody = serde_json::from_value(e.body).unwrap();
        states.extend(body.changes.data_cards.iter().map(|d| format!("{:?}", d.gen_state.state).to_lowercase()));
    }
    assert_eq!(states.iter().filter(|s| *s == "loading").count(), 9);
}

#[tokio::test]
async fn failing_worker_retries_then_marks_errors() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let mut broken = AdapterSet::walkthrough();
    broken.route(Capability::ImageGen, Arc::new(FailingAdapter::new("mock-img", &[Capability::ImageGen], "CUDA out of memory")));
    let _w = spawn_worker(h.addr, broken, vec![JobType::GenerateImage]);
    let mut c = Client::connect(h.addr, "/ws/client").await;
    c.join("oom").await;
    let (_, action) = wired_action(&mut c, "oom", "a lighthouse", "image").await;
    c.ok("trigger_action", "oom", json!({ "action": action })).await;
    let doc = wait_for(&h, "oom", all_settled).await;
    let errors: Vec<_> = doc.data_cards.values().filter(|d| d.gen_state.state == LifecycleState::Error).collect();
    assert_eq!(errors.len(), 9);
    assert!(errors.iter().all(|d| d.gen_state.bubble.as_deref().unwrap().contains("CUDA out of memory")));
    let mut retries = 0;
    while retries < 9 {
        let e = c.recv_until(|e| e.kind == "event").await;
        let body: EventBody = serde_json::from_value(e.body).unwrap();
        retries += body.changes.data_cards.iter().filter(|d| d.gen_state.bubble.as_deref() == Some("retrying")).count();
    }
    assert_eq!(h.gateway.live_jobs(), 0);
}

/// A hand-driven worker connection.
async fn manual_worker(addr: std::net::SocketAddr, caps: Value) -> Client {
    let mut w = Client::connect(addr, "/ws/worker").await;
    w.send("register", None, json!({ "capabilities": caps, "models_loaded": ["mock-img"] })).await;
    let reg = w.recv().await;
    assert_eq!(reg.kind, "registered", "{:?}", reg.body);
    w
}

async fn next_assignment(w: &mut Client) -> (deckflow_core::hub::NewJob, Envelope) {
    let e = w.recv_until(|e| e.kind == "job_assign").await;
    match WorkerCommand::from_envelope(&e).unwrap() {
        WorkerCommand::JobAssign { job, .. } => (job, e),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn registration_rules() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let mut w = manual_worker(h.addr, json!(["generate_image"])).await;
    w.send("register", None, json!({ "capabilities": ["generate_image"] })).await;
    assert_eq!(w.recv().await.body["code"], "duplicate_registration");
    let mut empty = Client::connect(h.addr, "/ws/worker").await;
    empty.send("register", None, json!({ "capabilities": [] })).await;
    assert_eq!(empty.recv().await.body["code"], "no_capabilities");
    empty.send("heartbeat", None, json!({})).await;
    assert_eq!(empty.recv().await.body["code"], "not_registered");
}

#[tokio::test]
async fn deleting_outputs_cancels_running_jobs() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let mut w = manual_worker(h.addr, json!(["generate_image"])).await;
    let mut c = Client::connect(h.addr, "/ws/client").await;
    c.join("cx").await;
    let (_, action) = wired_action(&mut c, "cx", "a lighthouse", "image").await;
    let ack = c.ok("trigger_action", "cx", json!({ "action": action })).await;
    let (job, _) = next_assignment(&mut w).await;
    w.send("job_status", None, json!({ "job_id": job.job_id, "seq": 1, "message": "Generating Image" })).await;
    c.ok("delete", "cx", json!({ "ids": ack["output_cards"] })).await;
    let cancel = w.recv_until(|e| e.kind == "cancel").await;
    assert_eq!(cancel.body["job_id"], json!(job.job_id));
    assert_eq!(h.gateway.live_jobs(), 0);
    // Late results and progress are refused so the worker can abandon.
    let asset = json_of(&call("PUT", http(h.addr, "/assets"), Some("image/png"), mock_png("late")).await.1);
    w.send("job_result", None, json!({ "job_id": job.job_id, "seq": 2, "asset": asset })).await;
    let err = w.recv_until(|e| e.kind == "error").await;
    assert_eq!((err.body["code"].clone(), err.body["job_id"].clone()), (json!("unknown_job"), json!(job.job_id)));
    w.send("job_status", None, json!({ "job_id": job.job_id, "seq": 3, "message": "still going" })).await;
    assert_eq!(w.recv_until(|e| e.kind == "error").await.body["code"], "unknown_job");
    let doc = h.gateway.snapshot(&DocId::new("cx")).unwrap();
    assert_eq!(doc.data_cards.len(), 4);
}

#[tokio::test]
async fn a_killed_worker_hands_its_job_to_another() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let mut doomed = manual_worker(h.addr, json!(["generate_image"])).await;
    let mut c = Client::connect(h.addr, "/ws/client").await;
    c.join("kill").await;
    let (_, action) = wired_action(&mut c, "kill", "a lighthouse", "image").await;
    c.ok("trigger_action", "kill", json!({ "action": action })).await;
    let (job, _) = next_assignment(&mut doomed).await;
    doomed.send("job_status", None, json!({ "job_id": job.job_id, "seq": 1, "message": "Generating Image" })).await;
    drop(doomed);
    let _w = spawn_worker(h.addr, AdapterSet::walkthrough(), vec![JobType::GenerateImage]);
    let doc = wait_for(&h, "kill", all_settled).await;
    assert_eq!(doc.data_cards[&job.target_card].gen_state.state, LifecycleState::Success);
    assert!(doc.data_cards.values().all(|d| d.gen_state.state == LifecycleState::Success));
}

#[tokio::test]
async fn workers_keep_retrying_until_the_server_appears() {
    let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = probe.local_addr().unwrap();
    drop(probe);
    let _w = spawn_worker(addr, AdapterSet::walkthrough(), vec![JobType::GenerateImage]);
    tokio::time::sleep(Duration::from_millis(300)).await;
    let dir = tempfile::tempdir().unwrap();
    let data = deckflow_server::storage::DataDir::open(dir.path(), 1 << 20).unwrap();
    let gw = deckflow_server::gateway::Gateway::new(GatewayConfig::default(), data);
    let listener = tokio::net::TcpListener::bind(addr).await.unwrap();
    let h = deckflow_server::gateway::spawn(gw, listener, 1 << 20).unwrap();
    let mut c = Client::connect(h.addr, "/ws/client").await;
    c.join("late").await;
    let (_, action) = wired_action(&mut c, "late", "a lighthouse", "image").await;
    c.ok("trigger_action", "late", json!({ "action": action })).await;
    let doc = wait_for(&h, "late", all_settled).await;
    assert!(doc.data_cards.values().all(|d| d.gen_state.state == LifecycleState::Success));
}

#[tokio::test]
async fn restart_reproduces_documents_and_resumes_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let h = start_in(dir.path(), GatewayConfig::default()).await;
    let mut c = Client::connect(h.addr, "/ws/client").await;
    c.join("keep").await;
    let (_, action) = wired_action(&mut c, "keep", "a lighthouse", "image").await;
    c.ok("trigger_action", "keep", json!({ "action": action })).await;
    let before = h.gateway.document_hash(&DocId::new("keep")).unwrap();
    assert_eq!(h.gateway.live_jobs(), 9);
    // No final persist: write-through must already have stored everything.
    c.close().await;
    h.abort();

    let h = start_in(dir.path(), GatewayConfig::default()).await;
    assert_eq!(h.gateway.document_hash(&DocId::new("keep")).unwrap(), before);
    assert_eq!(h.gateway.live_jobs(), 9);
    let _w = spawn_worker(h.addr, AdapterSet::walkthrough(), vec![JobType::GenerateImage]);
    let done = wait_for(&h, "keep", all_settled).await;
    let after = deckflow_core::canvas::doc_hash(&done);
    h.shutdown().await.unwrap();

    let h = start_in(dir.path(), GatewayConfig::default()).await;
    assert_eq!(h.gateway.document_hash(&DocId::new("keep")).unwrap(), after);
    assert_eq!(h.gateway.live_jobs(), 0);
    for d in done.data_cards.values().filter_map(|d| d.asset()) {
        let (status, bytes) = call("GET", http(h.addr, &format!("/assets/{}", d.id)), None, vec![]).await;
        assert_eq!((status, sha256_oracle(&bytes)), (200, d.id.clone()));
    }
}

#[tokio::test]
async fn storage_failures_block_mutations_until_resolved() {
    let (_dir, h) = start(GatewayConfig::default()).await;
    let mut c = Client::connect(h.addr, "/ws/client").await;
    c.join("disk").await;
    let card = json!({ "kind": "text", "position": { "x": 0, "y": 0 }, "text": "a" });
    c.ok("create_card", "disk", card.clone()).await;
    h.gateway.data().docs.set_fail_writes(true);
    c.ok("create_card", "disk", card.clone()).await;
    let status = c.find(|e| e.kind == "server_status").await;
    assert_eq!(status.body["status"], "storage_failure");
    assert_eq!(c.request("create_card", "disk", card.clone()).await.body["code"], "storage_failure");
    // Reads still work.
    let ids: Vec<Value> = h.gateway.snapshot(&DocId::new("disk")).unwrap().data_cards.keys().map(|k| json!(k)).collect();
    c.ok("copy", "disk", json!({ "ids": ids })).await;
    h.gateway.data().docs.set_fail_writes(false);
    let ack = c.ok("create_card", "disk", card).await;
    assert_eq!(ack["rev"], 3);
    let status = c.find(|e| e.kind == "server_status").await;
    assert_eq!(status.body["status"], "ok");
    let stored = h.gateway.data().docs.load(&DocId::new("disk")).unwrap();
    assert_eq!(stored.rev, 3);
}

#[tokio::test]
async fn unreadable_documents_are_refused_not_replaced() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("docs")).unwrap();
    std::fs::write(dir.path().join("docs/bad.json"), "{ nope").unwrap();
    let h = start_in(dir.path(), GatewayConfig::default()).await;
    let mut c = Client::connect(h.addr, "/ws/client").await;
    assert_eq!(c.request("join", "bad", json!({})).await.body["code"], "doc_load_failure");
    assert_eq!(std::fs::read_to_string(dir.path().join("docs/bad.json")).unwrap(), "{ nope");
}
