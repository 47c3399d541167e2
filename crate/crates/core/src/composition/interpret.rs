use crate::adapters::{Capability, TemplateKind, TextRequest, VisionRequest};
use crate::canvas::{CardContent, DataCard, Document, EntityKind, Modality};
use crate::ids::CardId;
use crate::lifecycle::LifecycleState;

use super::{CompositionError, Interpreter, SlotBinding, SourceKind};

/// Outcome of describing a cluster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterInterpretation {
    pub text: String,
    pub prompt: String,
    pub truncated: bool,
    /// True when the cached description was reused without a model call.
    pub cache_hit: bool,
}

fn ready(card: &DataCard) -> Result<(), CompositionError> {
    if card.gen_state.state == LifecycleState::Success && card.content.is_some() {
        Ok(())
    } else {
        Err(CompositionError::SourceNotReady(card.id))
    }
}

fn describe_data_card(card: &DataCard, label: &str, interp: &Interpreter<'_>) -> Result<String, CompositionError> {
    ready(card)?;
    let fail = |message: String| CompositionError::InterpretationFailed {
        source_id: card.id,
        message,
    };
    match (&card.kind, card.content.as_ref()) {
        (Modality::Text, Some(CardContent::Text(t))) => Ok(t.clone()),
        (Modality::Image, Some(CardContent::Asset(asset))) => {
            if interp.adapters.provides(Capability::VisionDescribe) {
                let bytes = interp.assets.get(&asset.id).map_err(|e| fail(e.to_string()))?;
                let out = interp
                    .adapters
                    .describe_image(&VisionRequest {
                        asset,
                        bytes: &bytes,
                        label,
                        max_tokens: interp.max_tokens,
                    })
                    .map_err(|e| fail(e.to_string()))?;
                Ok(out.text)
            } else {
                media_fallback(card).ok_or_else(|| fail("no vision adapter and no prompt or annotation".into()))
            }
        }
        (Modality::Audio, Some(CardContent::Asset(_))) => media_fallback(card)
            .or_else(|| card.file_name.clone())
            .ok_or_else(|| fail("audio card has no prompt, annotation or file name".into())),
        _ => Err(fail("content does not match card kind".into())),
    }
}

/// Generated media are described by the prompt that made them, uploads by
/// their annotation.
fn media_fallback(card: &DataCard) -> Option<String> {
    card.provenance
        .as_ref()
        .map(|p| p.prompt.clone())
        .filter(|p| !p.trim().is_empty())
        .or_else(|| card.annotation.clone().filter(|a| !a.trim().is_empty()))
}

/// Resolve one slot source to text.
pub fn interpret_input(
    doc: &Document,
    source: CardId,
    label: &str,
    interp: &Interpreter<'_>,
) -> Result<(SlotBinding, Option<ClusterInterpretation>), CompositionError> {
    match doc.entity_kind(source) {
        Some(EntityKind::Data) => {
            let card = &doc.data_cards[&source];
            let text = describe_data_card(card, label, interp)?;
            let source_kind = match card.kind {
                Modality::Text => SourceKind::Text,
                Modality::Image => SourceKind::Image,
                Modality::Audio => SourceKind::Audio,
            };
            Ok((
                SlotBinding {
                    label: label.to_string(),
                    source_kind,
                    resolved_text: text,
                    origin_id: source,
                },
                None,
            ))
        }
        Some(EntityKind::Cluster) => {
            let ci = interpret_cluster(doc, source, interp)?;
            Ok((
                SlotBinding {
                    label: label.to_string(),
                    source_kind: SourceKind::Cluster,
                    resolved_text: ci.text.clone(),
                    origin_id: source,
                },
                Some(ci),
            ))
        }
        Some(EntityKind::Action) | None => Err(CompositionError::SourceNotReady(source)),
    }
}

/// Shared features of every member, focused on the cluster label. Uses the
/// cached description when present.
pub fn interpret_cluster(
    doc: &Document,
    cluster: CardId,
    interp: &Interpreter<'_>,
) -> Result<ClusterInterpretation, CompositionError> {
    let cl = doc
        .clusters
        .get(&cluster)
        .ok_or(CompositionError::SourceNotReady(cluster))?;
    if cl.members.is_empty() {
        return Err(CompositionError::EmptyCluster(cluster));
    }
    for m in &cl.members {
        ready(&doc.data_cards[m])?;
    }
    if let Some(text) = &cl.cached_interpretation {
        return Ok(ClusterInterpretation {
            text: text.clone(),
            prompt: cl.cached_prompt.clone().unwrap_or_default(),
            truncated: false,
            cache_hit: true,
        });
    }
    let label = cl.label.clone().unwrap_or_default();
    let descriptions = cl
        .members
        .iter()
        .map(|m| describe_data_card(&doc.data_cards[m], &label, interp))
        .collect::<Result<Vec<_>, _>>()?;
    let prompt = interp.templates.render_shared_features(&label, &descriptions);
    let mut inputs = vec![label];
    inputs.extend(descriptions);
    let out = interp
        .adapters
        .generate_text(&TextRequest {
            template: TemplateKind::SharedFeatures,
            inputs,
            prompt: prompt.clone(),
            max_tokens: interp.max_tokens,
        })
        .map_err(|e| CompositionError::InterpretationFailed {
            source_id: cluster,
            message: e.to_string(),
        })?;
    Ok(ClusterInterpretation {
        text: out.text,
        prompt,
        truncated: out.truncated,
        cache_hit: false,
    })
}

impl crate::canvas::Canvas {
    /// Store a fresh cluster description and place it as a text card to the
    /// right of the cluster. One revision.
    pub fn materialize_cluster_text(
        &mut self,
        cluster: CardId,
        ci: &ClusterInterpretation,
    ) -> Result<CardId, crate::canvas::CanvasError> {
        use crate::canvas::{CanvasError, Position, GRID_GAP};
        use crate::lifecycle::Provenance;
        let cl = self
            .doc()
            .clusters
            .get(&cluster)
            .ok_or(CanvasError::MissingCluster(cluster))?
            .clone();
        let right = cl
            .members
            .iter()
            .map(|m| {
                let d = &self.doc().data_cards[m];
                d.position.x + d.size.width
            })
            .fold(cl.position.x, f64::max);
        let position = Position::new(right + GRID_GAP * 2.0, cl.position.y);
        self.transaction(|c| {
            if !ci.cache_hit {
                let stored = c.cluster_mut(cluster)?;
                stored.cached_interpretation = Some(ci.text.clone());
                stored.cached_prompt = Some(ci.prompt.clone());
            }
            Ok(c.insert_generated_text(
                position,
                Modality::Text.default_size(),
                ci.text.clone(),
                ci.truncated,
                Provenance {
                    influencers: cl.members.clone(),
                    method: "cluster-interpret".to_string(),
                    prompt: ci.prompt.clone(),
                    ..Provenance::default()
                },
            ))
        })
    }
}
