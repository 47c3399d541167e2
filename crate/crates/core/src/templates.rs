//! Prompt templates, shipped as text files and overridable from a directory.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {name}: {source}")]
    Io {
        name: String,
        source: std::io::Error,
    },
    #[error("template {name} lacks placeholder {placeholder}")]
    MissingPlaceholder { name: String, placeholder: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Templates {
    pub coherent: String,
    pub decompose: String,
    pub shared_features: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            coherent: include_str!("../templates/coherent.txt").to_string(),
            decompose: include_str!("../templates/decompose.txt").to_string(),
            shared_features: include_str!("../templates/shared_features.txt").to_string(),
        }
    }
}

const REQUIRED: [(&str, &[&str]); 3] = [
    ("coherent", &["{concat}"]),
    ("decompose", &["{goal}"]),
    ("shared_features", &["{focus}", "{descriptions}"]),
];

impl Templates {
    /// Defaults, with any `<name>.txt` present in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::default();
        for (name, placeholders) in REQUIRED {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                name: name.to_string(),
                source,
            })?;
            for p in placeholders {
                if !text.contains(p) {
                    return Err(TemplateError::MissingPlaceholder {
                        name: name.to_string(),
                        placeholder: p.to_string(),
                    });
                }
            }
            match name {
                "coherent" => t.coherent = text,
                "decompose" => t.decompose = text,
                _ => t.shared_features = text,
            }
        }
        Ok(t)
    }

    pub fn render_coherent(&self, concat: &str) -> String {
        self.coherent.replace("{concat}", concat)
    }

    pub fn render_decompose(&self, goal: &str) -> String {
        self.decompose.replace("{goal}", goal)
    }

    pub fn render_shared_features(&self, label: &str, descriptions: &[String]) -> String {
        let focus = if label.is_empty() {
            String::new()
        } else {
            format!(", focusing on {label}")
        };
        let numbered = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| format!("{}. {d}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        self.shared_features
            .replace("{focus}", &focus)
            .replace("{descriptions}", &numbered)
    }
}
