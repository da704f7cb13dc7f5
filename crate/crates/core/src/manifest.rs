//! The prompt/model manifest. Ids are opaque strings so new models or
//! tasks need no code change.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Family;

const DEFAULT_MANIFEST: &str = include_str!("../assets/manifest.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: String,
    pub family: Family,
    /// Task template name under `tasks/` in the template set.
    pub template: String,
    #[serde(default)]
    pub vars: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub models: Vec<String>,
    pub prompts: Vec<PromptSpec>,
}

impl Manifest {
    /// The reference manifest: 4 story, 5 AUT and 3 slogan conditions.
    pub fn reference() -> Self {
        Self::from_toml(DEFAULT_MANIFEST).expect("bundled manifest parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Manifest =
            toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.prompts {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Config(format!("duplicate prompt id `{}`", p.id)));
            }
        }
        Ok(())
    }

    pub fn prompt(&self, prompt_id: &str) -> Result<&PromptSpec> {
        self.prompts
            .iter()
            .find(|p| p.id == prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(prompt_id.to_string()))
    }

    pub fn family_of(&self, prompt_id: &str) -> Result<Family> {
        self.prompt(prompt_id).map(|p| p.family)
    }

    pub fn prompts_in(&self, family: Family) -> impl Iterator<Item = &PromptSpec> {
        self.prompts.iter().filter(move |p| p.family == family)
    }
}
