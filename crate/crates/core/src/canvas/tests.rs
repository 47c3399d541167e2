use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::assets::AssetStore;
use crate::assets::MemoryAssetStore;
use crate::fuzz::{mutate, random_canvas};
use crate::ids::IdGen;

fn canvas() -> Canvas {
    Canvas::new(DocId::new("t"), IdGen::deterministic(7, 1_000))
}

fn text(c: &mut Canvas, s: &str) -> CardId {
    c.create_card(Modality::Text, Position::ORIGIN, NewContent::Text(s.into()))
        .unwrap()
}

fn labels(ls: &[&str]) -> Vec<String> {
    ls.iter().map(|s| s.to_string()).collect()
}

#[test]
fn each_successful_edit_is_one_revision() {
    let mut c = canvas();
    assert_eq!(c.doc().rev, 0);
    let a = text(&mut c, "a");
    assert_eq!(c.doc().rev, 1);
    c.update_text(a, "b").unwrap();
    assert_eq!(c.doc().rev, 2);
    let commits = c.take_commits();
    assert_eq!(commits.iter().map(|c| c.rev).collect::<Vec<_>>(), vec![1, 2]);
    assert!(commits[1].upserted.contains(&a));
    // Deleting nothing is not a change.
    c.delete(&[]).unwrap();
    assert_eq!(c.doc().rev, 2);
    assert!(c.take_commits().is_empty());
}

#[test]
fn failed_edits_leave_the_document_untouched() {
    let mut c = canvas();
    let t = text(&mut c, "a");
    let act = c.create_action(Position::ORIGIN, Modality::Image, &labels(&["x"])).unwrap();
    let before = c.doc().clone();
    c.take_commits();
    assert_eq!(c.connect(t, act, SlotId(9)), Err(CanvasError::MissingSlot { action: act, slot: SlotId(9) }));
    assert_eq!(c.connect(act, act, SlotId(0)), Err(CanvasError::SelfConnection));
    assert!(c.connect(act, t, SlotId(0)).is_err());
    assert!(c.move_by(&[t], f64::NAN, 0.0).is_err());
    assert!(c.resize(t, Size::new(0.0, 10.0)).is_err());
    assert_eq!(c.doc(), &before);
    assert!(c.take_commits().is_empty());
}

#[test]
fn media_content_is_immutable() {
    let store = MemoryAssetStore::default();
    let mut c = canvas();
    let a = store.put(b"\x89PNG\r\n\x1a\nrest", "image/png").unwrap();
    let img = c.create_card(Modality::Image, Position::ORIGIN, NewContent::Asset(a.clone())).unwrap();
    assert_eq!(c.update_text(img, "x"), Err(CanvasError::MediaImmutable(img)));
    assert!(matches!(
        c.create_card(Modality::Audio, Position::ORIGIN, NewContent::Asset(a)),
        Err(CanvasError::ContentTypeMismatch(_))
    ));
}

#[test]
fn one_source_feeds_many_slots() {
    let mut c = canvas();
    let t = text(&mut c, "shared");
    let a1 = c.create_action(Position::ORIGIN, Modality::Image, &labels(&["x", "y"])).unwrap();
    let a2 = c.create_action(Position::ORIGIN, Modality::Text, &labels(&["z"])).unwrap();
    c.connect(t, a1, SlotId(0)).unwrap();
    c.connect(t, a1, SlotId(1)).unwrap();
    c.connect(t, a2, SlotId(0)).unwrap();
    c.delete(&[t]).unwrap();
    for a in c.doc().action_cards.values() {
        assert!(a.slots.iter().all(|s| s.connection.is_none()));
    }
}

#[test]
fn clusters_are_exclusive_and_caches_invalidate() {
    let mut c = canvas();
    let (x, y) = (text(&mut c, "x"), text(&mut c, "y"));
    let cl = c.form_cluster(&[x, y], Some("sun")).unwrap();
    assert!(matches!(c.form_cluster(&[x], None), Err(CanvasError::AlreadyClustered { .. })));
    c.cluster_mut(cl).unwrap().cached_interpretation = Some("cached".into());
    c.set_cluster_label(cl, Some("moon")).unwrap();
    assert_eq!(c.doc().clusters[&cl].cached_interpretation, None);
    c.cluster_mut(cl).unwrap().cached_interpretation = Some("cached".into());
    c.update_text(x, "changed").unwrap();
    assert_eq!(c.doc().clusters[&cl].cached_interpretation, None);
    // Deleting a cluster releases its members.
    c.delete(&[cl]).unwrap();
    assert!(c.doc().data_cards.contains_key(&x));
    assert_eq!(c.doc().cluster_of(x), None);
}

#[test]
fn duplicate_keeps_only_internal_connections() {
    let mut c = canvas();
    let inside = text(&mut c, "in");
    let outside = text(&mut c, "out");
    let act = c.create_action(Position::ORIGIN, Modality::Image, &labels(&["a", "b"])).unwrap();
    c.connect(inside, act, SlotId(0)).unwrap();
    c.connect(outside, act, SlotId(1)).unwrap();
    let map = c.duplicate(&[inside, act]).unwrap();
    assert_eq!(map.len(), 2);
    let new_act = map.iter().find(|(o, _)| *o == act).unwrap().1;
    let new_in = map.iter().find(|(o, _)| *o == inside).unwrap().1;
    let a = &c.doc().action_cards[&new_act];
    assert_eq!(a.slots[0].connection, Some(new_in));
    assert_eq!(a.slots[1].connection, None);
    assert_eq!(a.position, Position::new(DUPLICATE_OFFSET, DUPLICATE_OFFSET));
    assert!(c.doc().integrity_violations().is_empty());
}

#[test]
fn clipboard_carries_assets() {
    let store = MemoryAssetStore::default();
    let mut c = canvas();
    let a = store.put(b"\x89PNG\r\n\x1a\npixels", "image/png").unwrap();
    let img = c.create_card(Modality::Image, Position::new(10.0, 10.0), NewContent::Asset(a.clone())).unwrap();
    let clip = c.serialize_selection(&[img], &store).unwrap();

    let other = MemoryAssetStore::default();
    let mut d = Canvas::new(DocId::new("u"), IdGen::deterministic(8, 1_000));
    let map = d.deserialize_selection(&clip, Position::new(-5.0, 3.0), &other).unwrap();
    let pasted = &d.doc().data_cards[&map[0].1];
    assert_eq!(pasted.asset(), Some(&a));
    assert_eq!(pasted.position, Position::new(-5.0, 3.0));
    assert_eq!(other.get(&a.id).unwrap(), b"\x89PNG\r\n\x1a\npixels");

    let broken = clip.replacen("data_cards", "data_cardz", 1);
    assert!(matches!(
        d.deserialize_selection(&broken, Position::ORIGIN, &other),
        Err(CanvasError::MalformedClipboard { .. })
    ));
}

/// Strip ids and creation times so two copies of the same selection compare
/// equal up to renaming.
fn shape(doc: &Document) -> Vec<String> {
    let ids: Vec<CardId> = doc
        .data_cards
        .keys()
        .chain(doc.action_cards.keys())
        .chain(doc.clusters.keys())
        .copied()
        .collect();
    let rank = |id: &CardId| ids.iter().position(|x| x == id).map_or(usize::MAX, |i| i);
    let mut out = Vec::new();
    for d in doc.data_cards.values() {
        out.push(format!(
            "D{} {:?} {:?} {:?} {:?} {:?} {:?} {}",
            rank(&d.id), d.kind, d.size, d.content, d.annotation, d.gen_state, d.provenance.as_ref().map(|p| &p.prompt), d.truncated
        ));
    }
    for a in doc.action_cards.values() {
        let slots: Vec<_> = a.slots.iter().map(|s| (s.slot_id, s.label.clone(), s.connection.as_ref().map(rank))).collect();
        out.push(format!("A{} {:?} {:?} {}", rank(&a.id), a.target_modality, slots, a.trigger_count));
    }
    for cl in doc.clusters.values() {
        let members: Vec<usize> = cl.members.iter().map(rank).collect();
        out.push(format!("C{} {:?} {:?} {:?}", rank(&cl.id), cl.label, members, cl.cached_interpretation));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_edits_preserve_integrity_and_rev_order(seed in any::<u64>(), ops in 1usize..60) {
        let store = MemoryAssetStore::default();
        let mut c = random_canvas(seed, 0, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last = c.doc().rev;
        for _ in 0..ops {
            mutate(&mut c, &mut rng, &store, 1);
            // One random step issues at most two edits.
            prop_assert!(c.doc().rev >= last && c.doc().rev <= last + 2);
            last = c.doc().rev;
            prop_assert_eq!(c.doc().integrity_violations(), Vec::<String>::new());
        }
    }

    #[test]
    fn document_file_round_trip(seed in any::<u64>()) {
        let store = MemoryAssetStore::default();
        let c = random_canvas(seed, 40, &store);
        let json = c.doc().to_json();
        let back = Document::from_json(&json).unwrap();
        prop_assert_eq!(&back, c.doc());
        prop_assert_eq!(doc_hash(&back), doc_hash(c.doc()));
    }

    #[test]
    fn clipboard_round_trip_of_whole_document(seed in any::<u64>()) {
        let store = MemoryAssetStore::default();
        let c = random_canvas(seed, 40, &store);
        let all: Vec<CardId> = c.doc().data_cards.keys().chain(c.doc().action_cards.keys()).chain(c.doc().clusters.keys()).copied().collect();
        prop_assume!(!all.is_empty());
        let clip = c.serialize_selection(&all, &store).unwrap();
        let mut d = Canvas::new(DocId::new("paste"), IdGen::deterministic(seed ^ 1, 5_000));
        let corner = Clipboard::parse(&clip).unwrap();
        let min = Fragment { data_cards: corner.data_cards, action_cards: corner.action_cards, clusters: corner.clusters }.min_corner().unwrap();
        d.deserialize_selection(&clip, min, &MemoryAssetStore::default()).unwrap();
        // Pending cards become errors when copied.
        let settled = |s: &String| !s.contains("Waiting") && !s.contains("Loading") && !s.contains("copied before completion");
        let mut got: Vec<String> = shape(d.doc()).into_iter().filter(settled).collect();
        let mut want: Vec<String> = shape(c.doc()).into_iter().filter(settled).collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
    }
}
