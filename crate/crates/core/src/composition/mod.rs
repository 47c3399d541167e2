//! The interpretation engine: resolve slot inputs to text, combine them three
//! ways into a [`PromptBundle`], decompose goals into action cards and
//! describe clusters. Every model call goes through an [`AdapterSet`].

mod goal;
mod interpret;
mod trigger;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use goal::{decompose_goal, parse_decomposition, DecompositionEntry, GoalDecomposition, Materialized};
pub use interpret::{interpret_cluster, interpret_input, ClusterInterpretation};
pub use trigger::{compose_bundle, ComposedBundle, GenerationConfig, TriggerOutcome, job_seed, SAMPLES_PER_PROMPT};

use crate::adapters::{AdapterError, AdapterSet, TemplateKind, TextOutput, TextRequest};
use crate::assets::AssetStore;
use crate::canvas::CanvasError;
use crate::ids::CardId;
use crate::templates::Templates;

pub const DEFAULT_MAX_TOKENS: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Text,
    Image,
    Audio,
    Cluster,
}

/// One bound slot after interpretation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotBinding {
    pub label: String,
    pub source_kind: SourceKind,
    pub resolved_text: String,
    pub origin_id: CardId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Concat,
    Coherent,
    Creative,
}

impl Strategy {
    pub const ORDER: [Strategy; 3] = [Strategy::Concat, Strategy::Coherent, Strategy::Creative];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Concat => "concat",
            Strategy::Coherent => "coherent",
            Strategy::Creative => "creative",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub method: Strategy,
    pub prompt: String,
    pub truncated: bool,
    /// The exact text sent to the model to produce `prompt` (for concat, the
    /// prompt itself).
    pub request: String,
}

/// Exactly three prompts, in `concat, coherent, creative` order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    entries: [BundleEntry; 3],
}

impl PromptBundle {
    pub fn new(concat: BundleEntry, coherent: BundleEntry, creative: BundleEntry) -> Self {
        debug_assert_eq!(
            [concat.method, coherent.method, creative.method],
            Strategy::ORDER
        );
        Self {
            entries: [concat, coherent, creative],
        }
    }

    pub fn entries(&self) -> &[BundleEntry; 3] {
        &self.entries
    }

    pub fn prompts(&self) -> [&str; 3] {
        [
            self.entries[0].prompt.as_str(),
            self.entries[1].prompt.as_str(),
            self.entries[2].prompt.as_str(),
        ]
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositionError {
    #[error("no bound input has content")]
    NoInputs,
    #[error("source {0} is not ready")]
    SourceNotReady(CardId),
    #[error("interpreting {source_id} failed: {message}")]
    InterpretationFailed { source_id: CardId, message: String },
    #[error("{strategy} strategy failed: {message}")]
    AdapterFailure { strategy: String, message: String },
    #[error("goal text is empty")]
    EmptyGoal,
    #[error("could not parse decomposition ({reason}): {raw:?}")]
    DecompositionParseError { raw: String, reason: String },
    #[error("cluster {0} has no members")]
    EmptyCluster(CardId),
    #[error(transparent)]
    Canvas(#[from] CanvasError),
}

/// Everything the engine needs to call models.
#[derive(Clone, Copy)]
pub struct Interpreter<'a> {
    pub adapters: &'a AdapterSet,
    pub assets: &'a dyn AssetStore,
    pub templates: &'a Templates,
    pub max_tokens: u32,
}

impl<'a> Interpreter<'a> {
    pub fn new(adapters: &'a AdapterSet, assets: &'a dyn AssetStore, templates: &'a Templates) -> Self {
        Self {
            adapters,
            assets,
            templates,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

fn render_binding(b: &SlotBinding) -> String {
    if b.label.is_empty() {
        b.resolved_text.clone()
    } else {
        format!("{}: {}", b.label, b.resolved_text)
    }
}

/// `label: value` pairs joined by `", "` in slot order; empty values skipped,
/// empty labels render the bare value.
pub fn combine_concat(bindings: &[SlotBinding]) -> Result<String, CompositionError> {
    let parts: Vec<String> = bindings
        .iter()
        .filter(|b| !b.resolved_text.is_empty())
        .map(render_binding)
        .collect();
    if parts.is_empty() {
        return Err(CompositionError::NoInputs);
    }
    Ok(parts.join(", "))
}

fn strategy_failure(strategy: Strategy, e: AdapterError) -> CompositionError {
    CompositionError::AdapterFailure {
        strategy: strategy.as_str().to_string(),
        message: e.to_string(),
    }
}

/// Adapter rewrite of the labeled attributes into prose.
pub fn combine_coherent(bindings: &[SlotBinding], interp: &Interpreter<'_>) -> Result<BundleEntry, CompositionError> {
    let concat = combine_concat(bindings)?;
    coherent_from_concat(&concat, interp)
}

fn coherent_from_concat(concat: &str, interp: &Interpreter<'_>) -> Result<BundleEntry, CompositionError> {
    let prompt = interp.templates.render_coherent(concat);
    let out = interp
        .adapters
        .generate_text(&TextRequest {
            template: TemplateKind::Coherent,
            inputs: vec![concat.to_string()],
            prompt: prompt.clone(),
            max_tokens: interp.max_tokens,
        })
        .map_err(|e| strategy_failure(Strategy::Coherent, e))?;
    Ok(entry(Strategy::Coherent, out, prompt))
}

/// Expansion-model rewrite of the concatenated prompt.
pub fn combine_creative(concat: &str, interp: &Interpreter<'_>) -> Result<BundleEntry, CompositionError> {
    if concat.trim().is_empty() {
        return Err(CompositionError::NoInputs);
    }
    let out = interp
        .adapters
        .expand_prompt(&TextRequest {
            template: TemplateKind::Expand,
            inputs: vec![concat.to_string()],
            prompt: concat.to_string(),
            max_tokens: interp.max_tokens,
        })
        .map_err(|e| strategy_failure(Strategy::Creative, e))?;
    Ok(entry(Strategy::Creative, out, concat.to_string()))
}

fn entry(method: Strategy, out: TextOutput, request: String) -> BundleEntry {
    BundleEntry {
        method,
        prompt: out.text,
        truncated: out.truncated,
        request,
    }
}

/// The three strategies over already-interpreted bindings.
pub fn bundle_from_bindings(bindings: &[SlotBinding], interp: &Interpreter<'_>) -> Result<PromptBundle, CompositionError> {
    let concat = combine_concat(bindings)?;
    let coherent = coherent_from_concat(&concat, interp)?;
    let creative = combine_creative(&concat, interp)?;
    Ok(PromptBundle::new(
        BundleEntry {
            method: Strategy::Concat,
            prompt: concat.clone(),
            truncated: false,
            request: concat,
        },
        coherent,
        creative,
    ))
}
