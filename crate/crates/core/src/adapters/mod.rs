//! Generation and interpretation backends behind one interface.
//!
//! Three families implement [`ModelAdapter`]: pure mocks (optionally backed
//! by a scripted [`FixtureTable`]) and HTTP clients for external model
//! servers. An [`AdapterSet`] routes each capability to one adapter.

mod config;
mod external;
mod fixtures;
pub mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::AssetRef;

pub use config::{load_adapter_config, parse_adapter_config, AdapterKind, ConfigEntry};
pub use external::ExternalAdapter;
pub use fixtures::{canonicalize, FixtureEntry, FixtureTable};
pub use mock::MockAdapter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    TextGen,
    ImageGen,
    AudioGen,
    VisionDescribe,
    PromptExpand,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::TextGen,
        Capability::ImageGen,
        Capability::AudioGen,
        Capability::VisionDescribe,
        Capability::PromptExpand,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::TextGen => "text_gen",
            Capability::ImageGen => "image_gen",
            Capability::AudioGen => "audio_gen",
            Capability::VisionDescribe => "vision_describe",
            Capability::PromptExpand => "prompt_expand",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdapterSpec {
    pub name: String,
    pub provides: BTreeSet<Capability>,
    /// Advertised for worker model affinity.
    pub model_name: String,
}

/// Which prompt template produced a text request. Mocks key fixtures and
/// fallbacks on it; external adapters only see the rendered prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Coherent,
    Decompose,
    SharedFeatures,
    Expand,
    Freeform,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Coherent => "coherent",
            TemplateKind::Decompose => "decompose",
            TemplateKind::SharedFeatures => "shared_features",
            TemplateKind::Expand => "expand",
            TemplateKind::Freeform => "freeform",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextRequest {
    pub template: TemplateKind,
    /// The raw values the template was filled with.
    pub inputs: Vec<String>,
    pub prompt: String,
    pub max_tokens: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextOutput {
    pub text: String,
    pub truncated: bool,
}

pub struct VisionRequest<'a> {
    pub asset: &'a AssetRef,
    pub bytes: &'a [u8],
    pub label: &'a str,
    pub max_tokens: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenRequest {
    pub prompt: String,
    pub seed: u64,
    pub sample_index: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub bytes: Vec<u8>,
    pub media_type: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdapterError {
    #[error("no adapter provides {0}")]
    Unsupported(Capability),
    #[error("adapter {adapter} failed: {message}")]
    Failure { adapter: String, message: String },
    #[error("adapter {adapter}: missing configuration {field}")]
    ConfigMissing { adapter: String, field: String },
    #[error("bad adapter config: {message}")]
    BadConfig { message: String },
}

impl AdapterError {
    pub fn failure(adapter: &str, message: impl Into<String>) -> Self {
        AdapterError::Failure {
            adapter: adapter.to_string(),
            message: message.into(),
        }
    }
}

pub trait ModelAdapter: Send + Sync {
    fn spec(&self) -> &AdapterSpec;

    fn generate_text(&self, _req: &TextRequest) -> Result<TextOutput, AdapterError> {
        Err(AdapterError::Unsupported(Capability::TextGen))
    }

    fn expand_prompt(&self, _req: &TextRequest) -> Result<TextOutput, AdapterError> {
        Err(AdapterError::Unsupported(Capability::PromptExpand))
    }

    fn describe_image(&self, _req: &VisionRequest<'_>) -> Result<TextOutput, AdapterError> {
        Err(AdapterError::Unsupported(Capability::VisionDescribe))
    }

    fn generate_image(&self, _req: &GenRequest) -> Result<Artifact, AdapterError> {
        Err(AdapterError::Unsupported(Capability::ImageGen))
    }

    fn generate_audio(&self, _req: &GenRequest) -> Result<Artifact, AdapterError> {
        Err(AdapterError::Unsupported(Capability::AudioGen))
    }
}

/// Capability routing table; the first adapter providing a capability wins.
#[derive(Clone, Default)]
pub struct AdapterSet {
    routes: BTreeMap<Capability, Arc<dyn ModelAdapter>>,
}

impl fmt::Debug for AdapterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let routes: BTreeMap<_, _> = self
            .routes
            .iter()
            .map(|(c, a)| (c.as_str(), a.spec().name.clone()))
            .collect();
        f.debug_struct("AdapterSet").field("routes", &routes).finish()
    }
}

impl AdapterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mocks for every capability, scripted by `fixtures`.
    pub fn mock(fixtures: FixtureTable) -> Self {
        let fixtures = Arc::new(fixtures);
        let mut set = Self::new();
        for (name, cap, model) in mock::DEFAULT_MOCKS {
            set.add(Arc::new(MockAdapter::new(
                AdapterSpec {
                    name: name.to_string(),
                    provides: [cap].into_iter().collect(),
                    model_name: model.to_string(),
                },
                fixtures.clone(),
            )));
        }
        set
    }

    /// Mocks scripted with the shipped walkthrough fixtures.
    pub fn walkthrough() -> Self {
        Self::mock(FixtureTable::walkthrough())
    }

    pub fn add(&mut self, adapter: Arc<dyn ModelAdapter>) -> &mut Self {
        for cap in adapter.spec().provides.clone() {
            self.routes.entry(cap).or_insert_with(|| adapter.clone());
        }
        self
    }

    /// Replace the route for one capability.
    pub fn route(&mut self, cap: Capability, adapter: Arc<dyn ModelAdapter>) -> &mut Self {
        self.routes.insert(cap, adapter);
        self
    }

    pub fn remove(&mut self, cap: Capability) -> &mut Self {
        self.routes.remove(&cap);
        self
    }

    pub fn get(&self, cap: Capability) -> Option<&Arc<dyn ModelAdapter>> {
        self.routes.get(&cap)
    }

    pub fn provides(&self, cap: Capability) -> bool {
        self.routes.contains_key(&cap)
    }

    pub fn model_for(&self, cap: Capability) -> Option<&str> {
        self.routes.get(&cap).map(|a| a.spec().model_name.as_str())
    }

    pub fn model_names(&self) -> BTreeSet<String> {
        self.routes.values().map(|a| a.spec().model_name.clone()).collect()
    }

    fn adapter(&self, cap: Capability) -> Result<&Arc<dyn ModelAdapter>, AdapterError> {
        self.routes.get(&cap).ok_or(AdapterError::Unsupported(cap))
    }

    pub fn generate_text(&self, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.adapter(Capability::TextGen)?.generate_text(req)
    }

    pub fn expand_prompt(&self, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.adapter(Capability::PromptExpand)?.expand_prompt(req)
    }

    pub fn describe_image(&self, req: &VisionRequest<'_>) -> Result<TextOutput, AdapterError> {
        self.adapter(Capability::VisionDescribe)?.describe_image(req)
    }

    pub fn generate_image(&self, req: &GenRequest) -> Result<Artifact, AdapterError> {
        self.adapter(Capability::ImageGen)?.generate_image(req)
    }

    pub fn generate_audio(&self, req: &GenRequest) -> Result<Artifact, AdapterError> {
        self.adapter(Capability::AudioGen)?.generate_audio(req)
    }
}

/// Cut `text` after `max_tokens` whitespace-delimited tokens.
pub fn truncate_tokens(text: &str, max_tokens: u32) -> TextOutput {
    let max = max_tokens as usize;
    let mut count = 0usize;
    let mut in_token = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_token {
                in_token = false;
                count += 1;
                if count == max {
                    let rest_has_tokens = text[i..].split_whitespace().next().is_some();
                    return TextOutput {
                        text: text[..i].to_string(),
                        truncated: rest_has_tokens,
                    };
                }
            }
        } else if !in_token {
            if count == max {
                return TextOutput {
                    text: text[..i].trim_end().to_string(),
                    truncated: true,
                };
            }
            in_token = true;
        }
    }
    TextOutput {
        text: text.to_string(),
        truncated: false,
    }
}
