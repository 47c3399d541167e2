use crate::adapters::mock::fnv1a64;
use crate::adapters::{AdapterSet, Capability};
use crate::canvas::{Canvas, Document, Modality, Position, ACTION_WIDTH, GRID_GAP};
use crate::hub::{JobPayload, JobType, NewJob};
use crate::ids::CardId;
use crate::lifecycle::Provenance;

use super::{
    bundle_from_bindings, interpret_input, ClusterInterpretation, CompositionError, Interpreter,
    PromptBundle, SlotBinding,
};

/// Samples generated per prompt.
pub const SAMPLES_PER_PROMPT: u32 = 3;

/// Seed for sample `j` of a prompt.
pub fn job_seed(prompt: &str, sample_index: u32) -> u64 {
    fnv1a64(prompt.as_bytes()).wrapping_add(u64::from(sample_index))
}

/// Model names that generation jobs require of workers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationConfig {
    pub image_model: String,
    pub audio_model: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            image_model: "mock-img".into(),
            audio_model: "mock-audio".into(),
        }
    }
}

impl GenerationConfig {
    pub fn from_adapters(adapters: &AdapterSet) -> Self {
        let d = Self::default();
        Self {
            image_model: adapters
                .model_for(Capability::ImageGen)
                .map_or(d.image_model, str::to_string),
            audio_model: adapters
                .model_for(Capability::AudioGen)
                .map_or(d.audio_model, str::to_string),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComposedBundle {
    pub bundle: PromptBundle,
    pub bindings: Vec<SlotBinding>,
    /// Fresh cluster descriptions to cache.
    pub cluster_updates: Vec<(CardId, ClusterInterpretation)>,
}

impl ComposedBundle {
    pub fn influencers(&self) -> Vec<CardId> {
        let mut out: Vec<CardId> = Vec::new();
        for b in &self.bindings {
            if !out.contains(&b.origin_id) {
                out.push(b.origin_id);
            }
        }
        out
    }
}

/// Interpret every bound slot of `action` (each exactly once, in slot order)
/// and build the three prompts. Read-only.
pub fn compose_bundle(
    doc: &Document,
    action: CardId,
    interp: &Interpreter<'_>,
) -> Result<ComposedBundle, CompositionError> {
    let a = doc
        .action_cards
        .get(&action)
        .ok_or(CompositionError::Canvas(crate::canvas::CanvasError::MissingAction(action)))?;
    let mut bindings = Vec::new();
    let mut cluster_updates = Vec::new();
    for slot in &a.slots {
        let Some(source) = slot.connection else { continue };
        let (binding, ci) = interpret_input(doc, source, &slot.label, interp)?;
        if let Some(ci) = ci.filter(|ci| !ci.cache_hit) {
            if !cluster_updates.iter().any(|(id, _)| *id == source) {
                cluster_updates.push((source, ci));
            }
        }
        bindings.push(binding);
    }
    if bindings.is_empty() {
        return Err(CompositionError::NoInputs);
    }
    let bundle = bundle_from_bindings(&bindings, interp)?;
    Ok(ComposedBundle {
        bundle,
        bindings,
        cluster_updates,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerOutcome {
    pub bundle: PromptBundle,
    /// One prompt card per strategy, in bundle order.
    pub prompt_cards: [CardId; 3],
    /// Row-major: row `i` holds the samples of prompt `i`.
    pub output_cards: Vec<CardId>,
    pub jobs: Vec<NewJob>,
}

impl Canvas {
    /// Compose a bundle for `action` and lay out its results: three prompt
    /// cards in a column right of the action card, then for media targets a
    /// 3x3 grid of pending outputs with one generation job each. Nothing is
    /// written unless composition succeeds; the whole layout is one revision.
    pub fn trigger_action(
        &mut self,
        action: CardId,
        interp: &Interpreter<'_>,
        gen: &GenerationConfig,
    ) -> Result<TriggerOutcome, CompositionError> {
        let composed = compose_bundle(self.doc(), action, interp)?;
        let a = self.doc().action_cards[&action].clone();
        let influencers = composed.influencers();
        let target = a.target_modality;
        let text_size = Modality::Text.default_size();
        let out_size = target.default_size();
        let pitch = text_size.height.max(out_size.height) + GRID_GAP;
        let prompt_x = a.position.x + ACTION_WIDTH + GRID_GAP * 2.0;
        let batch_y = a.position.y + a.trigger_count as f64 * (pitch * 3.0 + GRID_GAP);
        let out_x = prompt_x + text_size.width + GRID_GAP;
        let doc_id = self.doc().doc_id.clone();
        let job_type = match target {
            Modality::Image => Some((JobType::GenerateImage, gen.image_model.clone())),
            Modality::Audio => Some((JobType::GenerateAudio, gen.audio_model.clone())),
            Modality::Text => None,
        };
        let result = self.transaction(|c| {
            for (cluster, ci) in &composed.cluster_updates {
                let stored = c.cluster_mut(*cluster)?;
                stored.cached_interpretation = Some(ci.text.clone());
                stored.cached_prompt = Some(ci.prompt.clone());
            }
            c.note_trigger(action)?;
            let mut prompt_cards = Vec::with_capacity(3);
            let mut output_cards = Vec::new();
            let mut jobs = Vec::new();
            for (i, entry) in composed.bundle.entries().iter().enumerate() {
                let y = batch_y + i as f64 * pitch;
                prompt_cards.push(c.insert_generated_text(
                    Position::new(prompt_x, y),
                    text_size,
                    entry.prompt.clone(),
                    entry.truncated,
                    Provenance {
                        influencers: influencers.clone(),
                        method: entry.method.as_str().to_string(),
                        prompt: entry.request.clone(),
                        ..Provenance::default()
                    },
                ));
                let Some((job_type, model)) = &job_type else { continue };
                for j in 0..SAMPLES_PER_PROMPT {
                    let job_id = c.next_job_id();
                    let pos = Position::new(out_x + f64::from(j) * (out_size.width + GRID_GAP), y);
                    let card = c.insert_pending(
                        target,
                        pos,
                        out_size,
                        Provenance {
                            influencers: influencers.clone(),
                            method: entry.method.as_str().to_string(),
                            prompt: entry.prompt.clone(),
                            job_id: Some(job_id),
                            sample_index: Some(j),
                            completed_at: None,
                        },
                    )?;
                    output_cards.push(card);
                    jobs.push(NewJob {
                        job_id,
                        doc_id: doc_id.clone(),
                        job_type: *job_type,
                        required_model: model.clone(),
                        target_card: card,
                        payload: JobPayload {
                            prompt: entry.prompt.clone(),
                            seed: job_seed(&entry.prompt, j),
                            sample_index: j,
                            max_tokens: None,
                        },
                    });
                }
            }
            Ok(TriggerOutcome {
                bundle: composed.bundle.clone(),
                prompt_cards: [prompt_cards[0], prompt_cards[1], prompt_cards[2]],
                output_cards,
                jobs,
            })
        })?;
        Ok(result)
    }
}
