//! Seeded random documents for property tests and the acceptance suite.
//! Every document is built through public canvas operations, so whatever it
//! produces is reachable by a real session.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapters::mock::{mock_png, mock_wav};
use crate::assets::AssetStore;
use crate::canvas::{Canvas, Modality, NewContent, Position, Size};
use crate::ids::{CardId, DocId, IdGen, SlotId};
use crate::lifecycle::{LifecycleState, Payload, Provenance};

const WORDS: &[&str] = &[
    "sun", "mountain", "pavilion", "river", "fog", "ink", "\"quoted\"", "line\nbreak", "tab\there",
    "ünïcödé", "山水", "emoji 🌄", "", "  padded  ", "back\\slash",
];

fn phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..5);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn coord(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => 0.0,
        1 => rng.gen_range(-1e6..1e6),
        2 => f64::from(rng.gen_range(-2000i32..2000)),
        _ => rng.gen_range(-1.0..1.0) * 1e-3,
    }
}

fn position(rng: &mut ChaCha8Rng) -> Position {
    Position::new(coord(rng), coord(rng))
}

fn pick(rng: &mut ChaCha8Rng, ids: impl Iterator<Item = CardId>) -> Option<CardId> {
    let v: Vec<CardId> = ids.collect();
    v.choose(rng).copied()
}

/// Apply `ops` random operations to `canvas`. Failing operations roll back
/// and are simply skipped.
pub fn mutate(canvas: &mut Canvas, rng: &mut ChaCha8Rng, assets: &dyn AssetStore, ops: usize) {
    for _ in 0..ops {
        let doc = canvas.doc();
        let data = || doc.data_cards.keys().copied();
        let any_data = pick(rng, data());
        let any_action = pick(rng, doc.action_cards.keys().copied());
        let any_cluster = pick(rng, doc.clusters.keys().copied());
        let any_entity = pick(
            rng,
            data().chain(doc.action_cards.keys().copied()).chain(doc.clusters.keys().copied()),
        );
        let pending = pick(
            rng,
            doc.data_cards
                .values()
                .filter(|d| !d.gen_state.state.is_terminal())
                .map(|d| d.id),
        );
        match rng.gen_range(0..16) {
            0 | 1 => {
                let _ = canvas.create_card(Modality::Text, position(rng), NewContent::Text(phrase(rng)));
            }
            2 => {
                let bytes = mock_png(&phrase(rng));
                if let Ok(a) = assets.put(&bytes, "image/png") {
                    let _ = canvas.create_card_with(
                        Modality::Image,
                        position(rng),
                        NewContent::Asset(a),
                        Some(phrase(rng)).filter(|s| !s.is_empty()),
                        Some("photo.png".into()),
                    );
                }
            }
            3 => {
                let bytes = mock_wav(&phrase(rng));
                if let Ok(a) = assets.put(&bytes, "audio/wav") {
                    let _ = canvas.create_card(Modality::Audio, position(rng), NewContent::Asset(a));
                }
            }
            4 => {
                let labels: Vec<String> = (0..rng.gen_range(0..5)).map(|_| phrase(rng)).collect();
                let m = *[Modality::Text, Modality::Image, Modality::Audio].choose(rng).unwrap();
                let _ = canvas.create_action(position(rng), m, &labels);
            }
            5 => {
                if let Some(a) = any_action {
                    let _ = canvas.add_slot(a, &phrase(rng));
                }
            }
            6 | 7 => {
                let src = if rng.gen_bool(0.8) { any_data } else { any_cluster };
                if let (Some(s), Some(a)) = (src, any_action) {
                    let slots = canvas.doc().action_cards[&a].slots.len() as u32;
                    let _ = canvas.connect(s, a, SlotId(rng.gen_range(0..slots.max(1) + 1)));
                }
            }
            8 => {
                let all: Vec<CardId> = canvas.doc().data_cards.keys().copied().collect();
                let k = rng.gen_range(1..4).min(all.len());
                let ms: Vec<CardId> = all.choose_multiple(rng, k).copied().collect();
                let label = Some(phrase(rng)).filter(|s| !s.is_empty());
                let _ = canvas.form_cluster(&ms, label.as_deref());
            }
            9 => {
                if let Some(id) = any_entity {
                    let _ = canvas.move_by(&[id], coord(rng), coord(rng));
                }
            }
            10 => {
                if let Some(id) = any_data {
                    let _ = canvas.resize(id, Size::new(rng.gen_range(1.0..900.0), rng.gen_range(1.0..900.0)));
                }
            }
            11 => {
                if let Some(id) = any_entity {
                    let _ = canvas.duplicate(&[id]);
                }
            }
            12 => {
                if let Some(id) = any_entity {
                    let _ = canvas.delete(&[id]);
                }
            }
            13 => {
                if let Some(id) = any_data {
                    let _ = canvas.update_text(id, &phrase(rng));
                    let note = phrase(rng);
                    let _ = canvas.set_annotation(id, Some(note.as_str()).filter(|s| !s.is_empty()));
                }
            }
            14 => {
                let m = *[Modality::Text, Modality::Image, Modality::Audio].choose(rng).unwrap();
                let prov = Provenance {
                    influencers: any_data.into_iter().collect(),
                    method: "concat".into(),
                    prompt: phrase(rng),
                    sample_index: Some(rng.gen_range(0..3)),
                    ..Provenance::default()
                };
                let _ = canvas.spawn_pending(m, position(rng), prov);
            }
            _ => {
                if let Some(id) = pending {
                    let kind = canvas.doc().data_cards[&id].kind;
                    let to = *LifecycleState::ALL.choose(rng).unwrap();
                    let payload = match kind {
                        Modality::Text => Payload::Text {
                            text: phrase(rng),
                            truncated: rng.gen_bool(0.3),
                        },
                        Modality::Image => Payload::Asset(assets.put(&mock_png(&phrase(rng)), "image/png").unwrap()),
                        Modality::Audio => Payload::Asset(assets.put(&mock_wav(&phrase(rng)), "audio/wav").unwrap()),
                    };
                    let bubble = phrase(rng);
                    let _ = canvas.transition(id, to, Some(bubble.as_str()), Some(payload));
                }
            }
        }
    }
    canvas.take_commits();
}

/// A fresh document built from `ops` random operations.
pub fn random_canvas(seed: u64, ops: usize, assets: &dyn AssetStore) -> Canvas {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Canvas::new(DocId::new(format!("fuzz-{seed}")), IdGen::deterministic(seed, 1_000));
    for step in 0..ops.div_ceil(8) {
        canvas.ids_mut().set_now(1_000 + step as u64 * 10);
        mutate(&mut canvas, &mut rng, assets, 8.min(ops - step * 8));
    }
    canvas
}
