use std::time::Instant;

use deckflow_core::canvas::{doc_hash, Modality};
use deckflow_core::lifecycle::LifecycleState;
use deckflow_core::replay::{parse_log, replay};
use deckflow_core::walkthrough::{self, LOG};

/// Final document hash of the shipped log. Regenerate with
/// `cargo run -p deckflow-core --example record_walkthrough`.
pub const WALKTHROUGH_HASH: &str = "b3ad7419dcf64eecf363b38d8c1cce7876d459ddf1327e48389f8aca5fcbfd75";

#[test]
fn shipped_log_replays_to_the_pinned_hash() {
    let start = Instant::now();
    let out = replay(LOG).unwrap();
    assert_eq!(out.errors, 0);
    assert_eq!(out.hash, WALKTHROUGH_HASH);
    assert!(start.elapsed().as_secs_f64() < 5.0);
    let again = replay(LOG).unwrap();
    assert_eq!(again.hash, out.hash);
}

#[test]
fn shipped_log_matches_a_fresh_recording() {
    let rec = walkthrough::record();
    assert_eq!(rec.log(), LOG);
    assert_eq!(doc_hash(rec.document().unwrap()), WALKTHROUGH_HASH);
}

#[test]
fn walkthrough_document_has_the_expected_shape() {
    let doc = replay(LOG).unwrap().document;
    let action = doc.action_cards.values().next().unwrap();
    let labels: Vec<&str> = action.slots.iter().map(|s| s.label.as_str()).collect();
    assert_eq!(labels, ["Style", "Subject", "Key Elements", "Lighting", "Natural Features", "sun", "trees"]);
    assert_eq!(action.trigger_count, 3);
    let images = doc.data_cards.values().filter(|d| d.kind == Modality::Image).count();
    assert_eq!(images, 27);
    assert!(doc.data_cards.values().all(|d| d.gen_state.state == LifecycleState::Success));
    let cluster = doc.clusters.values().next().unwrap();
    assert_eq!(cluster.label.as_deref(), Some("sun"));
    assert_eq!(
        cluster.cached_interpretation.as_deref(),
        Some("Pale yellow, gently peaking from behind mountains.")
    );
    let entries = parse_log(LOG).unwrap();
    let first_trigger = entries.iter().find(|(_, e)| e.kind == "trigger_action").unwrap();
    assert_eq!(
        first_trigger.1.ack.as_ref().unwrap()["prompts"][0],
        "Style: Chinese traditional, Subject: landscape, Key Elements: traditional pavilion, Lighting: soft and diffuse, Natural Features: water elements, mountains"
    );
}
