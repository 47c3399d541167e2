use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AdapterError;

/// Trim and collapse internal whitespace runs to a single space.
pub fn canonicalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn key(template: &str, inputs: &[String]) -> String {
    let mut k = canonicalize(template);
    for i in inputs {
        k.push('\u{1f}');
        k.push_str(&canonicalize(i));
    }
    k
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub template: String,
    pub inputs: Vec<String>,
    pub response: String,
}

#[derive(Debug, Deserialize)]
struct FixtureFile {
    entries: Vec<FixtureEntry>,
}

/// Scripted responses keyed by template name plus canonicalized inputs.
#[derive(Clone, Debug, Default)]
pub struct FixtureTable {
    entries: HashMap<String, String>,
}

const WALKTHROUGH: &str = include_str!("../../fixtures/walkthrough.json");

impl FixtureTable {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let entries = entries
            .into_iter()
            .map(|e| (key(&e.template, &e.inputs), e.response))
            .collect();
        Self { entries }
    }

    pub fn from_json(text: &str) -> Result<Self, AdapterError> {
        let file: FixtureFile = serde_json::from_str(text).map_err(|e| AdapterError::BadConfig {
            message: format!("fixtures: {e}"),
        })?;
        Ok(Self::from_entries(file.entries))
    }

    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        let text = std::fs::read_to_string(path).map_err(|e| AdapterError::BadConfig {
            message: format!("fixtures {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    /// The canonical scripted walkthrough shipped with the crate.
    pub fn walkthrough() -> Self {
        Self::from_json(WALKTHROUGH).expect("shipped fixtures parse")
    }

    pub fn insert(&mut self, template: &str, inputs: &[String], response: &str) {
        self.entries.insert(key(template, inputs), response.to_string());
    }

    pub fn lookup(&self, template: &str, inputs: &[String]) -> Option<&str> {
        self.entries.get(&key(template, inputs)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
