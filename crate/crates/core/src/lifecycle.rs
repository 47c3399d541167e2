//! Generation lifecycle of a card: `waiting -> loading -> success | error`,
//! plus `waiting -> error` for cancellation before a worker picks the job up.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::AssetRef;
use crate::canvas::{Canvas, CanvasError, CardContent, DataCard, Modality, Position};
use crate::ids::{CardId, JobId};

pub const MAX_BUBBLE_CHARS: usize = 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LifecycleState {
    Waiting,
    Loading,
    Error,
    Success,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 4] = [
        LifecycleState::Waiting,
        LifecycleState::Loading,
        LifecycleState::Error,
        LifecycleState::Success,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, LifecycleState::Error | LifecycleState::Success)
    }

    pub fn can_transition_to(self, to: LifecycleState) -> bool {
        use LifecycleState::*;
        matches!(
            (self, to),
            (Waiting, Loading) | (Loading, Success) | (Loading, Error) | (Waiting, Error)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::Waiting => "waiting",
            LifecycleState::Loading => "loading",
            LifecycleState::Error => "error",
            LifecycleState::Success => "success",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenState {
    pub state: LifecycleState,
    pub bubble: Option<String>,
}

impl GenState {
    pub fn success() -> Self {
        Self {
            state: LifecycleState::Success,
            bubble: None,
        }
    }

    pub fn waiting(bubble: &str) -> Self {
        Self {
            state: LifecycleState::Waiting,
            bubble: Some(clip_bubble(bubble)),
        }
    }
}

pub fn clip_bubble(text: &str) -> String {
    text.chars().take(MAX_BUBBLE_CHARS).collect()
}

/// Where a system-generated card came from. Historical: it is never rewritten
/// when the influencers change or disappear.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub influencers: Vec<CardId>,
    pub method: String,
    pub prompt: String,
    pub job_id: Option<JobId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LifecycleError {
    #[error("illegal transition {from} -> {to}", from = .from.as_str(), to = .to.as_str())]
    IllegalTransition {
        from: LifecycleState,
        to: LifecycleState,
    },
    #[error("a {0} card needs a payload to succeed")]
    MissingPayload(&'static str),
    #[error("payload does not match a {0} card")]
    PayloadMismatch(&'static str),
    #[error("card content was already assigned")]
    ContentAlreadySet,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Text { text: String, truncated: bool },
    Asset(AssetRef),
}

/// Read-only projection for the Info View.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoView {
    pub influencers: Vec<InfluencerRef>,
    pub method: Option<String>,
    pub prompt: Option<String>,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfluencerRef {
    pub id: CardId,
    /// The card no longer exists; the reference is kept for history only.
    pub dangling: bool,
}

/// Apply a state change to a card in isolation. Content is assigned exactly
/// once, on the transition into `success`.
pub fn apply_transition(
    card: &mut DataCard,
    to: LifecycleState,
    bubble: Option<&str>,
    payload: Option<Payload>,
    now_ms: u64,
) -> Result<(), LifecycleError> {
    let from = card.gen_state.state;
    if !from.can_transition_to(to) {
        return Err(LifecycleError::IllegalTransition { from, to });
    }
    if to == LifecycleState::Success {
        let kind = card.kind.as_str();
        match (card.kind, payload) {
            (Modality::Text, Some(Payload::Text { text, truncated })) => {
                card.content = Some(CardContent::Text(text));
                card.truncated = truncated;
            }
            // Text cards keep whatever the user typed while waiting.
            (Modality::Text, None) => {}
            (Modality::Text, Some(_)) => return Err(LifecycleError::PayloadMismatch(kind)),
            (_, None) => return Err(LifecycleError::MissingPayload(kind)),
            (_, Some(Payload::Asset(asset))) => {
                if card.content.is_some() {
                    return Err(LifecycleError::ContentAlreadySet);
                }
                card.content = Some(CardContent::Asset(asset));
            }
            (_, Some(Payload::Text { .. })) => return Err(LifecycleError::PayloadMismatch(kind)),
        }
        if let Some(p) = card.provenance.as_mut() {
            p.completed_at.get_or_insert(now_ms);
        }
    }
    card.gen_state = GenState {
        state: to,
        bubble: bubble.map(clip_bubble),
    };
    Ok(())
}

impl Canvas {
    /// Placeholder for a card that a job will fill in.
    pub fn spawn_pending(
        &mut self,
        kind: Modality,
        position: Position,
        provenance: Provenance,
    ) -> Result<CardId, CanvasError> {
        self.transaction(|c| c.insert_pending(kind, position, kind.default_size(), provenance))
    }

    /// Move a card along its lifecycle.
    pub fn transition(
        &mut self,
        id: CardId,
        to: LifecycleState,
        bubble: Option<&str>,
        payload: Option<Payload>,
    ) -> Result<u64, CanvasError> {
        self.transaction(|c| {
            let now = c.now();
            let card = c.data_card_mut(id)?;
            apply_transition(card, to, bubble, payload, now)?;
            Ok(())
        })?;
        Ok(self.doc().rev)
    }

    /// Replace the status bubble without changing state; only while pending.
    pub fn set_bubble(&mut self, id: CardId, bubble: &str) -> Result<u64, CanvasError> {
        self.transaction(|c| {
            let card = c.data_card_mut(id)?;
            let state = card.gen_state.state;
            if state.is_terminal() {
                return Err(LifecycleError::IllegalTransition { from: state, to: state }.into());
            }
            card.gen_state.bubble = Some(clip_bubble(bubble));
            Ok(())
        })?;
        Ok(self.doc().rev)
    }

    /// Waiting card whose job was cancelled before pickup.
    pub fn cancel_pending(&mut self, id: CardId) -> Result<u64, CanvasError> {
        self.transition(id, LifecycleState::Error, Some("cancelled"), None)
    }

    pub fn info_view(&self, id: CardId) -> Result<InfoView, CanvasError> {
        let card = self
            .doc()
            .data_cards
            .get(&id)
            .ok_or(CanvasError::MissingCard(id))?;
        Ok(match &card.provenance {
            None => InfoView {
                influencers: Vec::new(),
                method: None,
                prompt: None,
                created_at: card.created_at,
            },
            Some(p) => InfoView {
                influencers: p
                    .influencers
                    .iter()
                    .map(|&i| InfluencerRef {
                        id: i,
                        dangling: !self.doc().contains(i),
                    })
                    .collect(),
                method: Some(p.method.clone()),
                prompt: Some(p.prompt.clone()),
                created_at: card.created_at,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::NewContent;
    use crate::ids::{DocId, IdGen};
    use LifecycleState::*;

    fn canvas() -> Canvas {
        Canvas::new(DocId::new("t"), IdGen::deterministic(1, 1))
    }

    fn stub() -> Provenance {
        Provenance {
            influencers: vec![],
            method: "concat".into(),
            prompt: "p".into(),
            job_id: None,
            sample_index: None,
            completed_at: None,
        }
    }

    fn asset(bytes: &[u8]) -> AssetRef {
        AssetRef {
            id: crate::assets::sha256_hex(bytes),
            media_type: "image/png".into(),
            byte_length: bytes.len() as u64,
        }
    }

    #[test]
    fn transition_table() {
        let legal = [(Waiting, Loading), (Loading, Success), (Loading, Error), (Waiting, Error)];
        for from in LifecycleState::ALL {
            for to in LifecycleState::ALL {
                assert_eq!(from.can_transition_to(to), legal.contains(&(from, to)));
            }
        }
    }

    #[test]
    fn spawn_pending_is_waiting_and_empty() {
        let mut c = canvas();
        let id = c.spawn_pending(Modality::Image, Position::ORIGIN, stub()).unwrap();
        let card = &c.doc().data_cards[&id];
        assert_eq!(card.gen_state.state, Waiting);
        assert_eq!(card.gen_state.bubble.as_deref(), Some("queued"));
        assert!(card.content.is_none());
    }

    #[test]
    fn cancel_before_pickup() {
        let mut c = canvas();
        let id = c.spawn_pending(Modality::Image, Position::ORIGIN, stub()).unwrap();
        c.cancel_pending(id).unwrap();
        let st = &c.doc().data_cards[&id].gen_state;
        assert_eq!(st.state, Error);
        assert_eq!(st.bubble.as_deref(), Some("cancelled"));
    }

    #[test]
    fn generating_image_bubble_then_success_with_payload() {
        let mut c = canvas();
        let id = c.spawn_pending(Modality::Image, Position::ORIGIN, stub()).unwrap();
        c.transition(id, Loading, Some("Generating Image"), None).unwrap();
        assert_eq!(
            c.doc().data_cards[&id].gen_state.bubble.as_deref(),
            Some("Generating Image")
        );
        let bytes = b"\x89PNG fake";
        c.transition(id, Success, Some("done"), Some(Payload::Asset(asset(bytes))))
            .unwrap();
        let card = &c.doc().data_cards[&id];
        assert_eq!(card.asset().unwrap().id, crate::assets::sha256_hex(bytes));
        assert!(card.provenance.as_ref().unwrap().completed_at.is_some());
    }

    #[test]
    fn success_is_terminal() {
        let mut c = canvas();
        let id = c.spawn_pending(Modality::Image, Position::ORIGIN, stub()).unwrap();
        c.transition(id, Loading, None, None).unwrap();
        c.transition(id, Success, None, Some(Payload::Asset(asset(b"x"))))
            .unwrap();
        let err = c.transition(id, Loading, None, None).unwrap_err();
        assert_eq!(
            err,
            CanvasError::Lifecycle(LifecycleError::IllegalTransition {
                from: Success,
                to: Loading
            })
        );
        assert_eq!(err.to_string(), "illegal transition success -> loading");
    }

    #[test]
    fn media_success_requires_payload() {
        let mut c = canvas();
        let id = c.spawn_pending(Modality::Audio, Position::ORIGIN, stub()).unwrap();
        c.transition(id, Loading, None, None).unwrap();
        let rev = c.doc().rev;
        assert!(matches!(
            c.transition(id, Success, None, None),
            Err(CanvasError::Lifecycle(LifecycleError::MissingPayload("audio")))
        ));
        assert_eq!(c.doc().rev, rev);
        assert_eq!(c.doc().data_cards[&id].gen_state.state, Loading);
    }

    #[test]
    fn bubbles_are_clipped() {
        let mut c = canvas();
        let id = c.spawn_pending(Modality::Image, Position::ORIGIN, stub()).unwrap();
        let long = "é".repeat(300);
        c.transition(id, Loading, Some(&long), None).unwrap();
        let b = c.doc().data_cards[&id].gen_state.bubble.clone().unwrap();
        assert_eq!(b.chars().count(), MAX_BUBBLE_CHARS);
    }

    #[test]
    fn info_view_for_user_card_is_empty() {
        let mut c = canvas();
        let id = c
            .create_card(Modality::Text, Position::ORIGIN, NewContent::Text("x".into()))
            .unwrap();
        let v = c.info_view(id).unwrap();
        assert!(v.influencers.is_empty());
        assert!(v.method.is_none());
    }

    #[test]
    fn info_view_flags_deleted_influencers() {
        let mut c = canvas();
        let src = c
            .create_card(Modality::Text, Position::ORIGIN, NewContent::Text("x".into()))
            .unwrap();
        let mut p = stub();
        p.influencers = vec![src];
        let out = c.spawn_pending(Modality::Image, Position::ORIGIN, p).unwrap();
        assert!(!c.info_view(out).unwrap().influencers[0].dangling);
        c.delete(&[src]).unwrap();
        let v = c.info_view(out).unwrap();
        assert_eq!(v.influencers, vec![InfluencerRef { id: src, dangling: true }]);
        assert_eq!(v.prompt.as_deref(), Some("p"));
    }

    #[test]
    fn info_view_missing_card() {
        let c = canvas();
        let mut g = IdGen::deterministic(9, 9);
        let id = g.card_id();
        assert_eq!(c.info_view(id), Err(CanvasError::MissingCard(id)));
    }
}
