//! The scripted landscape session shipped as the golden log: a goal card is
//! decomposed, the open slot is filled, the action triggered, two suns from
//! the second row are clustered and interpreted, and two more slots are
//! added and triggered.

use serde_json::Value;

use crate::adapters::AdapterSet;
use crate::canvas::{Modality, Position};
use crate::ids::{CardId, DocId, SlotId};
use crate::protocol::{ClientRequest, CreateKind};
use crate::replay::Recorder;

pub const GOAL: &str = "Chinese style landscape, with traditional pavilion, soft and diffuse light.";
pub const DOC_ID: &str = "walkthrough";
pub const START_TS: u64 = 1_700_000_000_000;

/// The shipped log, embedded for tests and the CLI.
pub const LOG: &str = include_str!("../fixtures/walkthrough.jsonl");

fn id(v: &Value) -> CardId {
    serde_json::from_value(v.clone()).expect("ack carries an id")
}

fn text_card(text: &str, x: f64, y: f64) -> ClientRequest {
    ClientRequest::CreateCard {
        kind: CreateKind::Text,
        position: Position::new(x, y),
        text: Some(text.into()),
        asset: None,
        annotation: None,
        target_modality: None,
        labels: vec![],
    }
}

/// Drive a fresh recorder through the scripted session.
pub fn record() -> Recorder {
    let mut rec = Recorder::new(DocId::new(DOC_ID), AdapterSet::walkthrough());
    let mut ts = START_TS;
    let mut send = |rec: &mut Recorder, req: ClientRequest| {
        let ack = rec.send(ts, req).expect("scripted step succeeds").ack;
        ts += 1_000;
        ack
    };
    let goal = id(&send(&mut rec, text_card(GOAL, 0.0, 0.0))["card_id"]);
    let dec = send(
        &mut rec,
        ClientRequest::Decompose {
            card_id: Some(goal),
            text: None,
            position: None,
            target_modality: Modality::Image,
        },
    );
    let action = id(&dec["action"]);
    let water = id(&send(&mut rec, text_card("water elements, mountains", 0.0, 400.0))["card_id"]);
    send(&mut rec, ClientRequest::Connect { source: water, action, slot_id: SlotId(4) });
    let first = send(&mut rec, ClientRequest::TriggerAction { action });
    let outputs: Vec<CardId> = first["output_cards"].as_array().expect("outputs").iter().map(id).collect();

    let cluster = id(&send(
        &mut rec,
        ClientRequest::FormCluster {
            members: vec![outputs[3], outputs[4]],
            label: Some("sun".into()),
        },
    )["cluster"]);
    let sun_text = id(&send(&mut rec, ClientRequest::InterpretCluster { cluster })["card_id"]);
    let sun_slot: SlotId = serde_json::from_value(
        send(&mut rec, ClientRequest::AddSlot { action, label: "sun".into() })["slot_id"].clone(),
    )
    .expect("slot id");
    send(&mut rec, ClientRequest::Connect { source: sun_text, action, slot_id: sun_slot });
    send(&mut rec, ClientRequest::TriggerAction { action });

    let trees_slot: SlotId = serde_json::from_value(
        send(&mut rec, ClientRequest::AddSlot { action, label: "trees".into() })["slot_id"].clone(),
    )
    .expect("slot id");
    send(&mut rec, ClientRequest::Connect { source: outputs[0], action, slot_id: trees_slot });
    send(&mut rec, ClientRequest::TriggerAction { action });
    rec
}
