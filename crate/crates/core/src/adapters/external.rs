//! HTTP client for an external model server.
//!
//! Wire shape: `POST {endpoint}` with a JSON body
//! `{capability, model, prompt, max_tokens, template?, label?, image_base64?, media_type?, seed?, sample_index?}`.
//! Text capabilities answer `{"text": "...", "truncated": bool}`; image and
//! audio capabilities answer with raw bytes and a `Content-Type` header.

use std::io::Read;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    truncate_tokens, AdapterError, AdapterSpec, Artifact, Capability, ConfigEntry, GenRequest,
    ModelAdapter, TextOutput, TextRequest, VisionRequest,
};

pub const DEFAULT_TIMEOUT_MS: u64 = 120_000;
pub const DEFAULT_MAX_CONCURRENCY: usize = 4;
pub const DEFAULT_MAX_RESPONSE_BYTES: usize = 32 * 1024 * 1024;

struct Permits {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct ExternalAdapter {
    spec: AdapterSpec,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    permits: Permits,
    max_response_bytes: usize,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
    #[serde(default)]
    truncated: bool,
}

impl ExternalAdapter {
    pub fn new(spec: AdapterSpec, endpoint: impl Into<String>) -> Self {
        Self {
            spec,
            endpoint: endpoint.into(),
            api_key: None,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_millis(DEFAULT_TIMEOUT_MS))
                .build(),
            permits: Permits::new(DEFAULT_MAX_CONCURRENCY),
            max_response_bytes: DEFAULT_MAX_RESPONSE_BYTES,
        }
    }

    pub fn from_entry(spec: AdapterSpec, e: &ConfigEntry) -> Result<Self, AdapterError> {
        let missing = |field: String| AdapterError::ConfigMissing {
            adapter: e.name.clone(),
            field,
        };
        let endpoint = e
            .endpoint
            .clone()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| missing("endpoint".into()))?;
        let api_key = match &e.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| missing(format!("env {var}")))?),
            None => None,
        };
        let mut a = Self::new(spec, endpoint);
        a.api_key = api_key;
        if let Some(ms) = e.timeout_ms {
            a.agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(ms)).build();
        }
        if let Some(n) = e.max_concurrency {
            a.permits = Permits::new(n);
        }
        if let Some(n) = e.max_response_bytes {
            a.max_response_bytes = n;
        }
        Ok(a)
    }

    pub fn with_max_response_bytes(mut self, n: usize) -> Self {
        self.max_response_bytes = n;
        self
    }

    fn fail(&self, message: impl Into<String>) -> AdapterError {
        AdapterError::failure(&self.spec.name, format!("{}: {}", self.endpoint, message.into()))
    }

    fn call(&self, cap: Capability, body: Value) -> Result<(Vec<u8>, String), AdapterError> {
        if !self.spec.provides.contains(&cap) {
            return Err(AdapterError::Unsupported(cap));
        }
        let _permit = self.permits.acquire();
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = match req
            .set("Content-Type", "application/json")
            .send_string(&body.to_string())
        {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => return Err(self.fail(format!("status {code}"))),
            Err(ureq::Error::Transport(t)) => return Err(self.fail(t.to_string())),
        };
        let media_type = resp.content_type().to_string();
        let mut bytes = Vec::new();
        resp.into_reader()
            .take(self.max_response_bytes as u64 + 1)
            .read_to_end(&mut bytes)
            .map_err(|e| self.fail(e.to_string()))?;
        if bytes.len() > self.max_response_bytes {
            return Err(self.fail("response too large"));
        }
        Ok((bytes, media_type))
    }

    fn text_call(&self, cap: Capability, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        let body = json!({
            "capability": cap.as_str(),
            "model": self.spec.model_name,
            "template": req.template.as_str(),
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
        });
        self.parse_text(self.call(cap, body)?.0, req.max_tokens)
    }

    fn parse_text(&self, bytes: Vec<u8>, max_tokens: u32) -> Result<TextOutput, AdapterError> {
        let reply: TextReply =
            serde_json::from_slice(&bytes).map_err(|e| self.fail(format!("bad reply: {e}")))?;
        // Enforce the budget even if the server ignored it.
        let mut out = truncate_tokens(&reply.text, max_tokens);
        out.truncated |= reply.truncated;
        Ok(out)
    }

    fn media_call(&self, cap: Capability, req: &GenRequest, default_type: &str) -> Result<Artifact, AdapterError> {
        let body = json!({
            "capability": cap.as_str(),
            "model": self.spec.model_name,
            "prompt": req.prompt,
            "seed": req.seed,
            "sample_index": req.sample_index,
        });
        let (bytes, media_type) = self.call(cap, body)?;
        if bytes.is_empty() {
            return Err(self.fail("empty response"));
        }
        let media_type = if media_type.is_empty() || media_type == "text/plain" {
            default_type.to_string()
        } else {
            media_type
        };
        Ok(Artifact { bytes, media_type })
    }
}

impl ModelAdapter for ExternalAdapter {
    fn spec(&self) -> &AdapterSpec {
        &self.spec
    }

    fn generate_text(&self, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.text_call(Capability::TextGen, req)
    }

    fn expand_prompt(&self, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.text_call(Capability::PromptExpand, req)
    }

    fn describe_image(&self, req: &VisionRequest<'_>) -> Result<TextOutput, AdapterError> {
        let body = json!({
            "capability": Capability::VisionDescribe.as_str(),
            "model": self.spec.model_name,
            "label": req.label,
            "prompt": format!("Describe this image, focusing on: {}", req.label),
            "image_base64": B64.encode(req.bytes),
            "media_type": req.asset.media_type,
            "max_tokens": req.max_tokens,
        });
        self.parse_text(self.call(Capability::VisionDescribe, body)?.0, req.max_tokens)
    }

    fn generate_image(&self, req: &GenRequest) -> Result<Artifact, AdapterError> {
        self.media_call(Capability::ImageGen, req, "image/png")
    }

    fn generate_audio(&self, req: &GenRequest) -> Result<Artifact, AdapterError> {
        self.media_call(Capability::AudioGen, req, "audio/wav")
    }
}
