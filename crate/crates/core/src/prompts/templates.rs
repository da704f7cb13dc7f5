use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../assets/templates/", $name, ".txt")))),*]
    };
}

const BUNDLED: &[(&str, &str)] = bundled![
    "system",
    "planning_system",
    "planning_user",
    "tasks/story_jungle",
    "tasks/story_parachute",
    "tasks/story_horror",
    "tasks/story_life",
    "tasks/aut",
    "tasks/slogan_smartphone",
    "tasks/slogan_soda",
    "tasks/slogan_blood",
    "modifiers/neutral",
    "modifiers/diverge",
    "methods/strat",
    "methods/self",
    "methods/peer1",
    "methods/peer2",
    "methods/repr",
    "methods/final_neutral",
    "methods/final_diverge_anchored",
    "methods/final_diverge_strat",
    "judge/system",
    "judge/user",
];

/// Names every template set must provide. Task templates are open-ended.
const REQUIRED: &[&str] = &[
    "system",
    "planning_system",
    "planning_user",
    "modifiers/neutral",
    "modifiers/diverge",
    "methods/strat",
    "methods/self",
    "methods/peer1",
    "methods/peer2",
    "methods/repr",
    "methods/final_neutral",
    "methods/final_diverge_anchored",
    "methods/final_diverge_strat",
    "judge/system",
    "judge/user",
];

/// Named template texts, one per `.txt` asset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    texts: BTreeMap<String, String>,
}

impl Templates {
    /// The templates compiled into the crate.
    pub fn embedded() -> Self {
        let texts = BUNDLED
            .iter()
            .map(|(name, text)| (name.to_string(), strip_final_newline(text).to_string()))
            .collect();
        Templates { texts }
    }

    /// Loads every `*.txt` under `dir`, keyed by relative path without the
    /// extension (`methods/self.txt` -> `methods/self`).
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut texts = BTreeMap::new();
        load_dir(dir, dir, &mut texts)?;
        let missing: Vec<_> = REQUIRED.iter().filter(|n| !texts.contains_key(**n)).collect();
        if !missing.is_empty() {
            return Err(Error::Template(format!(
                "template directory {} is missing {:?}",
                dir.display(),
                missing
            )));
        }
        Ok(Templates { texts })
    }

    pub fn get(&self, name: &str) -> Result<&str> {
        self.texts
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::Template(format!("no template named `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.texts.keys().map(String::as_str)
    }
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

fn load_dir(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            load_dir(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "txt") {
            let rel = path.strip_prefix(root).expect("walked under root").with_extension("");
            let name = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let text = std::fs::read_to_string(&path)?;
            out.insert(name, strip_final_newline(&text).to_string());
        }
    }
    Ok(())
}

/// Substitutes `{{name}}` placeholders in one pass. Every placeholder must
/// have a value; substituted text is not re-scanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| Error::Template("unterminated `{{` placeholder".into()))?;
        let name = &after[..end];
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Template(format!("no value for placeholder `{name}`")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
