use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::{
    AdapterError, AdapterSet, AdapterSpec, Capability, ExternalAdapter, FixtureTable, MockAdapter,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Mock,
    #[default]
    Http,
}

/// One element of the adapter config file. Credentials are only ever named
/// by environment variable.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEntry {
    pub name: String,
    pub provides: Vec<Capability>,
    pub model_name: String,
    #[serde(default)]
    pub kind: AdapterKind,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    /// Fixture file for mock adapters, relative to the config file.
    pub fixtures: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_concurrency: Option<usize>,
    pub max_response_bytes: Option<usize>,
}

fn bad(message: String) -> AdapterError {
    AdapterError::BadConfig { message }
}

pub fn parse_adapter_config(text: &str) -> Result<Vec<ConfigEntry>, AdapterError> {
    let entries: Vec<ConfigEntry> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    for (i, e) in entries.iter().enumerate() {
        if e.name.trim().is_empty() {
            return Err(bad(format!("entry {i}: field `name` must not be empty")));
        }
        if e.provides.is_empty() {
            return Err(bad(format!(
                "entry {i} ({}): field `provides` must not be empty",
                e.name
            )));
        }
        if e.model_name.trim().is_empty() {
            return Err(bad(format!(
                "entry {i} ({}): field `model_name` must not be empty",
                e.name
            )));
        }
    }
    Ok(entries)
}

/// Read, validate and instantiate an adapter config file. External adapters
/// fail here, not at first call, when their endpoint or key is missing.
pub fn load_adapter_config(path: &Path) -> Result<AdapterSet, AdapterError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let entries = parse_adapter_config(&text)?;
    AdapterSet::from_entries(&entries, path.parent().unwrap_or(Path::new(".")))
}

impl AdapterSet {
    pub fn from_entries(entries: &[ConfigEntry], base_dir: &Path) -> Result<Self, AdapterError> {
        let mut set = AdapterSet::new();
        for e in entries {
            let spec = AdapterSpec {
                name: e.name.clone(),
                provides: e.provides.iter().copied().collect(),
                model_name: e.model_name.clone(),
            };
            match e.kind {
                AdapterKind::Mock => {
                    let fixtures = match &e.fixtures {
                        Some(p) => FixtureTable::load(&base_dir.join(p))?,
                        None => FixtureTable::walkthrough(),
                    };
                    set.add(Arc::new(MockAdapter::new(spec, Arc::new(fixtures))));
                }
                AdapterKind::Http => {
                    set.add(Arc::new(ExternalAdapter::from_entry(spec, e)?));
                }
            }
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_entry_builds() {
        let cfg = r#"[{"name":"m","provides":["image_gen"],"model_name":"mock-img","kind":"mock"}]"#;
        let set = AdapterSet::from_entries(&parse_adapter_config(cfg).unwrap(), Path::new(".")).unwrap();
        assert_eq!(set.model_for(Capability::ImageGen), Some("mock-img"));
        assert!(!set.provides(Capability::TextGen));
    }

    #[test]
    fn missing_endpoint_fails_at_startup() {
        let cfg = r#"[{"name":"sdxl","provides":["image_gen"],"model_name":"sdxl-lightning"}]"#;
        let err = AdapterSet::from_entries(&parse_adapter_config(cfg).unwrap(), Path::new("."))
            .unwrap_err();
        assert_eq!(
            err,
            AdapterError::ConfigMissing { adapter: "sdxl".into(), field: "endpoint".into() }
        );
    }

    #[test]
    fn missing_api_key_variable_fails_at_startup() {
        let cfg = r#"[{"name":"x","provides":["text_gen"],"model_name":"m","endpoint":"http://127.0.0.1:1/","api_key_env":"DECKFLOW_TEST_SURELY_UNSET_KEY"}]"#;
        let err = AdapterSet::from_entries(&parse_adapter_config(cfg).unwrap(), Path::new("."))
            .unwrap_err();
        assert!(matches!(err, AdapterError::ConfigMissing { ref field, .. } if field.contains("DECKFLOW_TEST_SURELY_UNSET_KEY")));
    }

    #[test]
    fn bad_config_names_the_field() {
        let err = parse_adapter_config(r#"[{"name":"m","provides":["image_gen"]}]"#).unwrap_err();
        assert!(err.to_string().contains("model_name"), "{err}");
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = parse_adapter_config(r#"[{"name":"m","provides":[],"model_name":"x"}]"#).unwrap_err();
        assert!(err.to_string().contains("provides"), "{err}");
        let err = parse_adapter_config("[{\"name\":\"m\",\n\"provides\":[\"telepathy\"],\"model_name\":\"x\"}]")
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_adapter_config(r#"[{"name":"m","provides":["text_gen"],"model_name":"x","api_key":"inline"}]"#)
            .unwrap_err();
        assert!(err.to_string().contains("api_key"), "{err}");
    }
}
