//! One document's request handler. A [`DocSession`] turns client requests
//! and worker effects into canvas operations and reports the resulting
//! acks, events and jobs; the caller owns transport and scheduling.

use serde_json::{json, Value};
use thiserror::Error;

use crate::adapters::AdapterSet;
use crate::assets::AssetStore;
use crate::canvas::{
    Canvas, CanvasError, Commit, Document, Modality, NewContent, Position, Size,
};
use crate::composition::{
    decompose_goal, interpret_cluster, job_seed, CompositionError, GenerationConfig, Interpreter,
    DEFAULT_MAX_TOKENS,
};
use crate::hub::{JobPayload, JobType, NewJob};
use crate::ids::CardId;
use crate::lifecycle::{LifecycleState, Payload};
use crate::protocol::{event, Changes, ClientRequest, CreateKind, Envelope};
use crate::templates::Templates;

/// Shared, read-only collaborators of every session.
#[derive(Clone, Copy)]
pub struct Services<'a> {
    pub adapters: &'a AdapterSet,
    pub assets: &'a dyn AssetStore,
    pub templates: &'a Templates,
    pub gen: &'a GenerationConfig,
    pub max_tokens: u32,
}

impl<'a> Services<'a> {
    pub fn new(
        adapters: &'a AdapterSet,
        assets: &'a dyn AssetStore,
        templates: &'a Templates,
        gen: &'a GenerationConfig,
    ) -> Self {
        Self {
            adapters,
            assets,
            templates,
            gen,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn interpreter(&self) -> Interpreter<'a> {
        Interpreter::new(self.adapters, self.assets, self.templates).with_max_tokens(self.max_tokens)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error(transparent)]
    Canvas(#[from] CanvasError),
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("unsupported media type: {0}")]
    UnsupportedMediaType(String),
    #[error("job target {0} is missing or not pending")]
    TargetMissing(CardId),
    #[error("document not found: {0}")]
    DocNotFound(String),
}

impl SessionError {
    /// Stable machine-readable error code for the wire.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Canvas(e) => canvas_code(e),
            SessionError::Composition(e) => match e {
                CompositionError::NoInputs => "no_inputs",
                CompositionError::SourceNotReady(_) => "source_not_ready",
                CompositionError::InterpretationFailed { .. } => "interpretation_failed",
                CompositionError::AdapterFailure { .. } => "adapter_failure",
                CompositionError::EmptyGoal => "empty_goal",
                CompositionError::DecompositionParseError { .. } => "decomposition_parse_error",
                CompositionError::EmptyCluster(_) => "empty_cluster",
                CompositionError::Canvas(e) => canvas_code(e),
            },
            SessionError::BadRequest(_) => "bad_request",
            SessionError::Storage(_) => "storage_failure",
            SessionError::UnsupportedMediaType(_) => "unsupported_media_type",
            SessionError::TargetMissing(_) => "target_missing",
            SessionError::DocNotFound(_) => "doc_not_found",
        }
    }
}

fn canvas_code(e: &CanvasError) -> &'static str {
    match e {
        CanvasError::ContentTypeMismatch(_) => "content_type_mismatch",
        CanvasError::NonFinitePosition => "non_finite_position",
        CanvasError::InvalidSize => "invalid_size",
        CanvasError::MissingEndpoint(_) => "missing_endpoint",
        CanvasError::SelfConnection => "self_connection",
        CanvasError::NotASource(_) => "not_a_source",
        CanvasError::MissingSlot { .. } => "missing_slot",
        CanvasError::MissingAction(_) => "missing_action",
        CanvasError::MissingCard(_) => "missing_card",
        CanvasError::MissingCluster(_) => "missing_cluster",
        CanvasError::AlreadyClustered { .. } => "already_clustered",
        CanvasError::NonDataMember(_) => "non_data_member",
        CanvasError::EmptySelection => "empty_selection",
        CanvasError::MalformedClipboard { .. } => "malformed_clipboard",
        CanvasError::MediaImmutable(_) => "media_immutable",
        CanvasError::MalformedDocument(_) => "malformed_document",
        CanvasError::Lifecycle(_) => "illegal_transition",
        CanvasError::Asset(crate::assets::AssetError::NotFound(_)) => "asset_not_found",
        CanvasError::Asset(crate::assets::AssetError::TooLarge { .. }) => "asset_too_large",
        CanvasError::Asset(_) => "asset_error",
    }
}

/// Outcome of one client request.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Reply {
    pub ack: Value,
    /// One event per committed revision, in rev order.
    pub events: Vec<Envelope>,
    /// Generation jobs to enqueue.
    pub jobs: Vec<NewJob>,
    /// Data cards that were deleted; their jobs must be cancelled.
    pub removed_cards: Vec<CardId>,
}

fn ids_json(pairs: &[(CardId, CardId)]) -> Value {
    json!(pairs.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect::<Vec<_>>())
}

#[derive(Clone, Debug)]
pub struct DocSession {
    canvas: Canvas,
}

impl DocSession {
    pub fn new(canvas: Canvas) -> Self {
        Self { canvas }
    }

    pub fn canvas(&self) -> &Canvas {
        &self.canvas
    }

    pub fn canvas_mut(&mut self) -> &mut Canvas {
        &mut self.canvas
    }

    pub fn doc(&self) -> &Document {
        self.canvas.doc()
    }

    pub fn snapshot(&self) -> Envelope {
        Envelope::snapshot(self.doc())
    }

    /// Pin the logical clock (replay and tests).
    pub fn set_now(&mut self, now_ms: u64) {
        self.canvas.ids_mut().set_now(now_ms);
    }

    fn changes_for(&self, commit: &Commit) -> Changes {
        let doc = self.doc();
        let mut ch = Changes::default();
        for id in &commit.upserted {
            if let Some(d) = doc.data_cards.get(id) {
                ch.data_cards.push(d.clone());
            } else if let Some(a) = doc.action_cards.get(id) {
                ch.action_cards.push(a.clone());
            } else if let Some(c) = doc.clusters.get(id) {
                ch.clusters.push(c.clone());
            }
        }
        ch.removed = commit.removed.iter().copied().collect();
        ch
    }

    /// Turn pending commits into events.
    pub fn drain_events(&mut self, op: &str) -> Vec<Envelope> {
        let commits = self.canvas.take_commits();
        let doc_id = self.doc().doc_id.clone();
        commits
            .iter()
            .map(|c| event(&doc_id, c.rev, op, self.changes_for(c)))
            .collect()
    }

    /// Apply one client request. On error the document is unchanged.
    pub fn handle(&mut self, req: &ClientRequest, svc: &Services<'_>) -> Result<Reply, SessionError> {
        let result = self.dispatch(req, svc);
        let events = self.drain_events(req.kind());
        let (mut ack, jobs, removed_cards) = result?;
        if let Value::Object(m) = &mut ack {
            m.insert("rev".into(), json!(self.doc().rev));
        }
        Ok(Reply {
            ack,
            events,
            jobs,
            removed_cards,
        })
    }

    fn dispatch(
        &mut self,
        req: &ClientRequest,
        svc: &Services<'_>,
    ) -> Result<(Value, Vec<NewJob>, Vec<CardId>), SessionError> {
        let c = &mut self.canvas;
        let plain = |v: Value| Ok((v, Vec::new(), Vec::new()));
        match req {
            ClientRequest::Join {} => plain(json!({ "doc_id": c.doc().doc_id })),
            ClientRequest::CreateCard {
                kind,
                position,
                text,
                asset,
                annotation,
                target_modality,
                labels,
            } => {
                let id = match kind {
                    CreateKind::Action => {
                        c.create_action(*position, target_modality.unwrap_or(Modality::Image), labels)?
                    }
                    CreateKind::Text => {
                        if asset.is_some() {
                            return Err(CanvasError::ContentTypeMismatch("text").into());
                        }
                        c.create_card_with(
                            Modality::Text,
                            *position,
                            NewContent::Text(text.clone().unwrap_or_default()),
                            annotation.clone(),
                            None,
                        )?
                    }
                    CreateKind::Image | CreateKind::Audio => {
                        let modality = if *kind == CreateKind::Image { Modality::Image } else { Modality::Audio };
                        let Some(asset) = asset else {
                            return Err(CanvasError::ContentTypeMismatch(modality.as_str()).into());
                        };
                        let stored = svc.assets.meta(&asset.id).map_err(CanvasError::from)?;
                        c.create_card_with(modality, *position, NewContent::Asset(stored), annotation.clone(), None)?
                    }
                };
                plain(json!({ "card_id": id }))
            }
            ClientRequest::UpdateText { card_id, text } => {
                c.update_text(*card_id, text)?;
                plain(json!({}))
            }
            ClientRequest::SetAnnotation { card_id, annotation } => {
                c.set_annotation(*card_id, annotation.as_deref())?;
                plain(json!({}))
            }
            ClientRequest::Move { ids, dx, dy } => {
                c.move_by(ids, *dx, *dy)?;
                plain(json!({}))
            }
            ClientRequest::Resize { card_id, width, height } => {
                c.resize(*card_id, Size::new(*width, *height))?;
                plain(json!({}))
            }
            ClientRequest::Connect { source, action, slot_id } => {
                c.connect(*source, *action, *slot_id)?;
                plain(json!({}))
            }
            ClientRequest::Disconnect { action, slot_id } => {
                c.disconnect(*action, *slot_id)?;
                plain(json!({}))
            }
            ClientRequest::AddSlot { action, label } => {
                let slot = c.add_slot(*action, label)?;
                plain(json!({ "slot_id": slot }))
            }
            ClientRequest::RemoveSlot { action, slot_id } => {
                c.remove_slot(*action, *slot_id)?;
                plain(json!({}))
            }
            ClientRequest::RenameSlot { action, slot_id, label } => {
                c.rename_slot(*action, *slot_id, label)?;
                plain(json!({}))
            }
            ClientRequest::SetModality { action, target_modality } => {
                c.set_target_modality(*action, *target_modality)?;
                plain(json!({}))
            }
            ClientRequest::FormCluster { members, label } => {
                let id = c.form_cluster(members, label.as_deref())?;
                plain(json!({ "cluster": id }))
            }
            ClientRequest::SetClusterLabel { cluster, label } => {
                c.set_cluster_label(*cluster, label.as_deref())?;
                plain(json!({}))
            }
            ClientRequest::ClusterAdd { cluster, card_id } => {
                c.add_cluster_member(*cluster, *card_id)?;
                plain(json!({}))
            }
            ClientRequest::ClusterRemove { cluster, card_id } => {
                c.remove_cluster_member(*cluster, *card_id)?;
                plain(json!({}))
            }
            ClientRequest::TriggerAction { action } => {
                if !c.doc().action_cards.contains_key(action) {
                    return Err(CanvasError::MissingAction(*action).into());
                }
                let out = c.trigger_action(*action, &svc.interpreter(), svc.gen)?;
                let ack = json!({
                    "prompt_cards": out.prompt_cards,
                    "output_cards": out.output_cards,
                    "job_ids": out.jobs.iter().map(|j| j.job_id).collect::<Vec<_>>(),
                    "prompts": out.bundle.prompts(),
                });
                Ok((ack, out.jobs, Vec::new()))
            }
            ClientRequest::Decompose {
                card_id,
                text,
                position,
                target_modality,
            } => {
                let (goal, anchor) = match (card_id, text) {
                    (Some(id), _) => {
                        let card = c.doc().data_cards.get(id).ok_or(CanvasError::MissingCard(*id))?;
                        let goal = card
                            .text()
                            .ok_or(CanvasError::ContentTypeMismatch("text"))?
                            .to_string();
                        (goal, card.position)
                    }
                    (None, Some(t)) => (t.clone(), position.unwrap_or(Position::ORIGIN)),
                    (None, None) => {
                        return Err(SessionError::BadRequest("decompose needs card_id or text".into()))
                    }
                };
                let dec = decompose_goal(&goal, &svc.interpreter())?;
                let m = c.materialize_decomposition(&dec, *card_id, anchor, *target_modality)?;
                let ack = json!({
                    "action": m.action,
                    "value_cards": m.value_cards.iter().map(|(s, id)| json!([s, id])).collect::<Vec<_>>(),
                    "entries": dec.entries,
                });
                plain(ack)
            }
            ClientRequest::InterpretCluster { cluster } => {
                if !c.doc().clusters.contains_key(cluster) {
                    return Err(CanvasError::MissingCluster(*cluster).into());
                }
                let ci = interpret_cluster(c.doc(), *cluster, &svc.interpreter())?;
                let id = c.materialize_cluster_text(*cluster, &ci)?;
                plain(json!({ "card_id": id, "text": ci.text, "cache_hit": ci.cache_hit }))
            }
            ClientRequest::Duplicate { ids } => {
                let pairs = c.duplicate(ids)?;
                plain(json!({ "mapping": ids_json(&pairs) }))
            }
            ClientRequest::Delete { ids } => {
                let report = c.delete(ids)?;
                Ok((
                    json!({ "removed": report.removed_total }),
                    Vec::new(),
                    report.removed_data_cards,
                ))
            }
            ClientRequest::Copy { ids } => {
                let clip = c.serialize_selection(ids, svc.assets)?;
                plain(json!({ "clipboard": clip }))
            }
            ClientRequest::Paste { clipboard, position } => {
                let pairs = c.deserialize_selection(clipboard, *position, svc.assets)?;
                plain(json!({ "mapping": ids_json(&pairs) }))
            }
            ClientRequest::Info { card_id } => {
                let view = c.info_view(*card_id)?;
                plain(json!({ "info": view }))
            }
        }
    }

    /// A dropped file: media become image or audio cards, text files become
    /// editable text cards. The file name is kept as the annotation.
    pub fn ingest_upload(
        &mut self,
        bytes: &[u8],
        file_name: &str,
        position: Position,
        svc: &Services<'_>,
    ) -> Result<(CardId, Vec<Envelope>), SessionError> {
        let sniffed = crate::media::sniff(bytes, file_name)
            .ok_or_else(|| SessionError::UnsupportedMediaType(file_name.to_string()))?;
        let annotation = Some(file_name.to_string()).filter(|f| !f.is_empty());
        let (kind, content) = match sniffed {
            crate::media::Sniffed::Text(t) => (Modality::Text, NewContent::Text(t)),
            crate::media::Sniffed::Media { modality, media_type } => {
                let asset = svc.assets.put(bytes, media_type).map_err(CanvasError::from)?;
                (modality, NewContent::Asset(asset))
            }
        };
        let id = self
            .canvas
            .create_card_with(kind, position, content, annotation.clone(), annotation)?;
        Ok((id, self.drain_events("upload")))
    }

    fn pending(&self, card: CardId) -> Option<LifecycleState> {
        self.doc()
            .data_cards
            .get(&card)
            .map(|d| d.gen_state.state)
            .filter(|s| !s.is_terminal())
    }

    /// Fails unless `job` targets a pending card of this document.
    pub fn check_target(&self, job: &NewJob) -> Result<(), SessionError> {
        match self.pending(job.target_card) {
            Some(LifecycleState::Waiting) => Ok(()),
            _ => Err(SessionError::TargetMissing(job.target_card)),
        }
    }

    /// Worker progress: the first status moves the card to `loading`, later
    /// ones replace the bubble. Ignored for cards that are gone or finished.
    pub fn apply_status(&mut self, job: &NewJob, message: &str) -> Vec<Envelope> {
        let r = match self.pending(job.target_card) {
            Some(LifecycleState::Waiting) => {
                self.canvas
                    .transition(job.target_card, LifecycleState::Loading, Some(message), None)
            }
            Some(_) => self.canvas.set_bubble(job.target_card, message),
            None => return Vec::new(),
        };
        debug_assert!(r.is_ok(), "{r:?}");
        self.drain_events("job_status")
    }

    /// A finished job. Results for cards that are gone or finished are
    /// discarded.
    pub fn apply_result(&mut self, job: &NewJob, payload: Payload, svc: &Services<'_>) -> Result<Vec<Envelope>, SessionError> {
        if let Payload::Asset(a) = &payload {
            if !svc.assets.contains(&a.id) {
                return Err(CanvasError::Asset(crate::assets::AssetError::NotFound(a.id.clone())).into());
            }
        }
        let Some(state) = self.pending(job.target_card) else {
            return Ok(Vec::new());
        };
        let card = job.target_card;
        let r = self.canvas.transaction(|c| {
            if state == LifecycleState::Waiting {
                c.transition(card, LifecycleState::Loading, None, None)?;
            }
            c.transition(card, LifecycleState::Success, None, Some(payload))
        });
        let events = self.drain_events("job_result");
        r?;
        Ok(events)
    }

    /// The job failed and will be tried again.
    pub fn apply_retry(&mut self, job: &NewJob) -> Vec<Envelope> {
        if self.pending(job.target_card).is_some() {
            let _ = self.canvas.set_bubble(job.target_card, "retrying");
        }
        self.drain_events("job_status")
    }

    /// The job is out of attempts.
    pub fn apply_failure(&mut self, job: &NewJob, message: &str) -> Vec<Envelope> {
        if self.pending(job.target_card).is_some() {
            let _ = self
                .canvas
                .transition(job.target_card, LifecycleState::Error, Some(message), None);
        }
        self.drain_events("job_result")
    }

    /// Jobs for every pending generated card, rebuilt from provenance. Used
    /// when a document is loaded after a restart.
    pub fn resumable_jobs(&self, gen: &GenerationConfig) -> Vec<NewJob> {
        let doc = self.doc();
        let mut jobs: Vec<NewJob> = doc
            .data_cards
            .values()
            .filter(|d| !d.gen_state.state.is_terminal())
            .filter_map(|d| {
                let p = d.provenance.as_ref()?;
                let job_id = p.job_id?;
                let (job_type, model) = match d.kind {
                    Modality::Image => (JobType::GenerateImage, gen.image_model.clone()),
                    Modality::Audio => (JobType::GenerateAudio, gen.audio_model.clone()),
                    Modality::Text => return None,
                };
                let sample_index = p.sample_index.unwrap_or(0);
                Some(NewJob {
                    job_id,
                    doc_id: doc.doc_id.clone(),
                    job_type,
                    required_model: model,
                    target_card: d.id,
                    payload: JobPayload {
                        prompt: p.prompt.clone(),
                        seed: job_seed(&p.prompt, sample_index),
                        sample_index,
                        max_tokens: None,
                    },
                })
            })
            .collect();
        jobs.sort_by_key(|j| j.job_id);
        jobs
    }
}
