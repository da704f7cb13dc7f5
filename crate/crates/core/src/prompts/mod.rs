//! Prompt payloads for every cell: task instructions, instruction-strategy
//! modifiers, method context blocks, the strat planning call and the
//! slogan judge prompts.
//!
//! Template text lives in `assets/templates/` as plain files so it can be
//! audited directly. Placeholders use `{{name}}` delimiters and are
//! substituted in a single pass, so substituted text (model outputs) is
//! never re-scanned for placeholders.

mod export;
mod strata;
mod templates;

pub use export::{export_judge_prompts, export_prompts, ExportSummary, CANONICAL_POOL_SIZE};
pub use strata::{assign_strata, parse_strata, ParseMode, StrataPlan, Stratum, STRATA_COUNT};
pub use templates::{render, Templates};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::{CellCoord, Method, Stage, Strategy};

/// Temperature for ordinary generation calls.
pub const GENERATION_TEMPERATURE: f64 = 1.0;
/// Temperature for the strat planning call.
pub const PLANNING_TEMPERATURE: f64 = 0.0;
/// Output-token ceiling for the strat planning call.
pub const PLANNING_MAX_OUTPUT_TOKENS: u32 = 1600;

const SEGMENT_SEP: &str = "\n\n";

/// One model call's request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl PromptPayload {
    /// Audit rendering used by the export and the goldens.
    pub fn to_audit_text(&self) -> String {
        format!(
            "=== SYSTEM ===\n{}\n=== USER ===\n{}\n=== PARAMS ===\ntemperature={:.1}\nmax_output_tokens={}\n",
            self.system_text, self.user_text, self.temperature, self.max_output_tokens
        )
    }
}

/// Method-specific context for one call.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodContext<'a> {
    /// indep, and stage 1 of the two-stage methods.
    Empty,
    Stratum(&'a Stratum),
    SelfAnchor { own: &'a str },
    Peer1 { own: &'a str, peer: &'a str },
    Peer2 { own: &'a str, peers: [&'a str; 2] },
    Representatives([&'a str; 3]),
}

impl MethodContext<'_> {
    fn name(&self) -> &'static str {
        match self {
            MethodContext::Empty => "empty",
            MethodContext::Stratum(_) => "stratum",
            MethodContext::SelfAnchor { .. } => "self",
            MethodContext::Peer1 { .. } => "peer1",
            MethodContext::Peer2 { .. } => "peer2",
            MethodContext::Representatives(_) => "repr",
        }
    }
}

/// Pure prompt builder over a manifest and a template set.
#[derive(Debug, Clone)]
pub struct PromptKit {
    manifest: Manifest,
    templates: Templates,
}

impl PromptKit {
    pub fn new(manifest: Manifest, templates: Templates) -> Self {
        PromptKit {
            manifest,
            templates,
        }
    }

    pub fn reference() -> Self {
        PromptKit::new(Manifest::reference(), Templates::embedded())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    /// Task-specific instructions for a prompt condition.
    pub fn task_text(&self, prompt_id: &str) -> Result<String> {
        let spec = self.manifest.prompt(prompt_id)?;
        let template = self.templates.get(&format!("tasks/{}", spec.template))?;
        let vars: Vec<(&str, &str)> = spec
            .vars
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        render(template, &vars)
    }

    pub fn modifier_text(&self, strategy: Strategy) -> Result<&str> {
        self.templates.get(&format!("modifiers/{strategy}"))
    }

    /// Payload for one ordinary generation call.
    pub fn build_prompt(
        &self,
        cell: &CellCoord,
        stage: Stage,
        context: &MethodContext<'_>,
    ) -> Result<PromptPayload> {
        let family = self.manifest.family_of(&cell.prompt_id)?;
        let mut user = self.task_text(&cell.prompt_id)?;
        user.push_str(SEGMENT_SEP);
        user.push_str(self.modifier_text(cell.strategy)?);

        if let Some(block) = self.method_block(cell, stage, context)? {
            user.push_str(SEGMENT_SEP);
            user.push_str(&block);
        }

        Ok(PromptPayload {
            system_text: self.templates.get("system")?.to_string(),
            user_text: user,
            temperature: GENERATION_TEMPERATURE,
            max_output_tokens: family.max_output_tokens(),
        })
    }

    fn method_block(
        &self,
        cell: &CellCoord,
        stage: Stage,
        context: &MethodContext<'_>,
    ) -> Result<Option<String>> {
        let mismatch = || {
            Error::PromptContext(format!(
                "{} {} call cannot use {} context",
                cell.method,
                stage,
                context.name()
            ))
        };
        if stage == Stage::Seed && !cell.method.is_two_stage() {
            return Err(Error::PromptContext(format!(
                "method {} has no seed stage",
                cell.method
            )));
        }
        if stage == Stage::Seed || cell.method == Method::Indep {
            return match context {
                MethodContext::Empty => Ok(None),
                _ => Err(mismatch()),
            };
        }

        let (template, vars): (&str, Vec<(&str, &str)>) = match (cell.method, context) {
            (Method::Strat, MethodContext::Stratum(s)) => (
                "methods/strat",
                vec![
                    ("stratum_name", s.name.as_str()),
                    ("stratum_description", s.description.as_str()),
                    ("stratum_generation_instruction", s.generation_instruction.as_str()),
                ],
            ),
            (Method::SelfAnchor, MethodContext::SelfAnchor { own }) => {
                ("methods/self", vec![("self_response", *own)])
            }
            (Method::Peer1, MethodContext::Peer1 { own, peer }) => (
                "methods/peer1",
                vec![("self_response", *own), ("peer_response", *peer)],
            ),
            (Method::Peer2, MethodContext::Peer2 { own, peers }) => (
                "methods/peer2",
                vec![
                    ("self_response", *own),
                    ("peer_response_1", peers[0]),
                    ("peer_response_2", peers[1]),
                ],
            ),
            (Method::Repr, MethodContext::Representatives(a)) => (
                "methods/repr",
                vec![
                    ("representative_response_1", a[0]),
                    ("representative_response_2", a[1]),
                    ("representative_response_3", a[2]),
                ],
            ),
            _ => return Err(mismatch()),
        };

        let closing = match (cell.strategy, cell.method) {
            (Strategy::Neutral, _) => "methods/final_neutral",
            (Strategy::Diverge, Method::Strat) => "methods/final_diverge_strat",
            (Strategy::Diverge, _) => "methods/final_diverge_anchored",
        };

        let mut block = render(self.templates.get(template)?, &vars)?;
        block.push_str(SEGMENT_SEP);
        block.push_str(self.templates.get(closing)?);
        Ok(Some(block))
    }

    /// The strat planning call. It uses its own system instruction, no
    /// strategy modifier, temperature 0 and a 1600-token ceiling.
    pub fn build_planning_prompt(&self, prompt_id: &str, pool_size: usize) -> Result<PromptPayload> {
        let task = self.task_text(prompt_id)?;
        let pool_size = pool_size.to_string();
        let user = render(
            self.templates.get("planning_user")?,
            &[("pool_size", pool_size.as_str()), ("task", task.as_str())],
        )?;
        Ok(PromptPayload {
            system_text: self.templates.get("planning_system")?.to_string(),
            user_text: user,
            temperature: PLANNING_TEMPERATURE,
            max_output_tokens: PLANNING_MAX_OUTPUT_TOKENS,
        })
    }

    pub fn is_planning_payload(&self, payload: &PromptPayload) -> bool {
        self.templates
            .get("planning_system")
            .is_ok_and(|s| s == payload.system_text)
    }

    /// Judge system instruction for slogan creativity scoring.
    pub fn judge_system(&self) -> Result<&str> {
        self.templates.get("judge/system")
    }

    /// Judge user prompt: the slogan task's instructions as context plus
    /// one candidate slogan.
    pub fn judge_user(&self, prompt_id: &str, candidate: &str) -> Result<String> {
        let context = self.task_text(prompt_id)?;
        self.judge_user_with_context(&context, candidate)
    }

    pub fn judge_user_with_context(&self, context: &str, candidate: &str) -> Result<String> {
        render(
            self.templates.get("judge/user")?,
            &[("task_context", context), ("candidate_slogan", candidate)],
        )
    }
}
