use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const STRATA_COUNT: usize = 5;

const FIELDS: [&str; 5] = [
    "name",
    "description",
    "generation_instruction",
    "why_broad",
    "why_distinct",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub stratum_id: u8,
    pub name: String,
    pub description: String,
    pub generation_instruction: String,
    pub why_broad: String,
    pub why_distinct: String,
}

/// Five validated semantic directions returned by the planning call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataPlan {
    pub task_id: String,
    pub strata: Vec<Stratum>,
}

impl StrataPlan {
    pub fn stratum(&self, id: u8) -> Option<&Stratum> {
        self.strata.iter().find(|s| s.stratum_id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// The reply must be bare JSON.
    #[default]
    Strict,
    /// Markdown code fences around the JSON are stripped first.
    Lenient,
}

/// Parses and validates a planning reply. On failure the error lists every
/// violated requirement.
pub fn parse_strata(raw: &str, mode: ParseMode) -> Result<StrataPlan> {
    let mut text = raw.trim();
    if mode == ParseMode::Lenient {
        text = strip_fences(text);
    }
    if !(text.starts_with('{') && text.ends_with('}')) {
        let mut problems = vec!["text outside JSON object".to_string()];
        if text.starts_with("```") {
            problems.push("markdown fences are not allowed in strict mode".into());
        }
        return Err(Error::Strata(problems));
    }
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Strata(vec![format!("not valid JSON: {e}")]))?;

    let mut problems = Vec::new();
    let task_id = match value.get("task_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::String(_)) => {
            problems.push("task_id is empty".to_string());
            String::new()
        }
        Some(_) => {
            problems.push("task_id is not a string".to_string());
            String::new()
        }
        None => {
            problems.push("missing task_id".to_string());
            String::new()
        }
    };

    let entries = match value.get("strata") {
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => {
            problems.push("strata is not an array".into());
            &[]
        }
        None => {
            problems.push("missing strata".into());
            &[]
        }
    };
    if value.get("strata").is_some_and(Value::is_array) && entries.len() != STRATA_COUNT {
        problems.push(format!("expected 5 strata, found {}", entries.len()));
    }

    let mut strata = Vec::with_capacity(entries.len());
    let mut ids = BTreeSet::new();
    for (pos, entry) in entries.iter().enumerate() {
        let Some(obj) = entry.as_object() else {
            problems.push(format!("strata[{pos}] is not an object"));
            continue;
        };
        let id = match obj.get("stratum_id").and_then(Value::as_u64) {
            Some(id) if (1..=STRATA_COUNT as u64).contains(&id) => {
                if !ids.insert(id) {
                    problems.push(format!("duplicate stratum_id {id}"));
                }
                id as u8
            }
            Some(id) => {
                problems.push(format!("strata[{pos}] stratum_id {id} outside 1..5"));
                0
            }
            None => {
                problems.push(format!("strata[{pos}] missing integer stratum_id"));
                0
            }
        };
        let mut fields: Vec<String> = Vec::with_capacity(FIELDS.len());
        for field in FIELDS {
            match obj.get(field) {
                Some(Value::String(s)) if !s.trim().is_empty() => fields.push(s.clone()),
                Some(Value::String(_)) => {
                    problems.push(format!("strata[{pos}] field {field} is empty"));
                    fields.push(String::new());
                }
                _ => {
                    problems.push(format!("strata[{pos}] missing field {field}"));
                    fields.push(String::new());
                }
            }
        }
        let mut it = fields.into_iter();
        strata.push(Stratum {
            stratum_id: id,
            name: it.next().unwrap_or_default(),
            description: it.next().unwrap_or_default(),
            generation_instruction: it.next().unwrap_or_default(),
            why_broad: it.next().unwrap_or_default(),
            why_distinct: it.next().unwrap_or_default(),
        });
    }
    if entries.len() == STRATA_COUNT {
        for id in 1..=STRATA_COUNT as u64 {
            if !ids.contains(&id) {
                problems.push(format!("missing stratum_id {id}"));
            }
        }
    }

    if problems.is_empty() {
        Ok(StrataPlan { task_id, strata })
    } else {
        Err(Error::Strata(problems))
    }
}

fn strip_fences(text: &str) -> &str {
    let Some(rest) = text.strip_prefix("```") else {
        return text;
    };
    // drop an info string such as ```json
    let rest = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => rest,
    };
    rest.trim_end()
        .strip_suffix("```")
        .unwrap_or(rest)
        .trim()
}

/// Cyclic slot-to-stratum assignment: slot i gets stratum (i mod k) + 1.
pub fn assign_strata(n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::PromptContext("stratum count must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::PromptContext("pool size must be at least 1".into()));
    }
    Ok((0..n).map(|i| i % k + 1).collect())
}
