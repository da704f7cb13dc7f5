use std::path::Path;

use serde::Serialize;

use super::{MethodContext, PromptKit, Stratum};
use crate::error::Result;
use crate::model::{CellCoord, Family, Method, Stage, Strategy};

/// Pool size shown in exported planning prompts.
pub const CANONICAL_POOL_SIZE: usize = 150;

const CANON_SELF: &str = "<self response>";
const CANON_PEER: &str = "<peer response>";
const CANON_PEERS: [&str; 2] = ["<peer response 1>", "<peer response 2>"];
const CANON_REPR: [&str; 3] = [
    "<representative response 1>",
    "<representative response 2>",
    "<representative response 3>",
];
const CANON_MODEL: &str = "<model>";

fn canonical_stratum() -> Stratum {
    Stratum {
        stratum_id: 1,
        name: "<stratum name>".into(),
        description: "<stratum description>".into(),
        generation_instruction: "<stratum generation instruction>".into(),
        why_broad: "<why broad>".into(),
        why_distinct: "<why distinct>".into(),
    }
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct ExportSummary {
    pub task_prompts: usize,
    pub modifiers: usize,
    pub method_blocks: usize,
    pub rendered_cells: usize,
    pub planning_prompts: usize,
    pub judge_prompts: usize,
    pub files: Vec<String>,
}

struct Writer<'a> {
    root: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn write(&mut self, rel: &str, text: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut body = text.to_string();
        if !body.ends_with('\n') {
            body.push('\n');
        }
        std::fs::write(path, body)?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

/// Writes every template piece and every rendered prompt, with canonical
/// placeholder texts, under `dir` for audit. Output is byte-stable.
pub fn export_prompts(kit: &PromptKit, dir: &Path) -> Result<ExportSummary> {
    let mut w = Writer {
        root: dir,
        files: Vec::new(),
    };
    let mut summary = ExportSummary::default();
    let templates = kit.templates();

    w.write("pieces/system.txt", templates.get("system")?)?;
    w.write("pieces/planning_system.txt", templates.get("planning_system")?)?;
    for prompt in &kit.manifest().prompts {
        w.write(&format!("pieces/tasks/{}.txt", prompt.id), &kit.task_text(&prompt.id)?)?;
        summary.task_prompts += 1;
    }
    for strategy in Strategy::ALL {
        w.write(
            &format!("pieces/modifiers/{strategy}.txt"),
            kit.modifier_text(strategy)?,
        )?;
        summary.modifiers += 1;
    }
    for name in templates.names().filter(|n| n.starts_with("methods/")) {
        w.write(&format!("pieces/{name}.txt"), templates.get(name)?)?;
        summary.method_blocks += 1;
    }

    let stratum = canonical_stratum();
    for prompt in &kit.manifest().prompts {
        for method in Method::ALL {
            for strategy in Strategy::ALL {
                let cell = CellCoord::new(CANON_MODEL, &prompt.id, prompt.family, method, strategy);
                let ctx = match method {
                    Method::Indep => MethodContext::Empty,
                    Method::Strat => MethodContext::Stratum(&stratum),
                    Method::SelfAnchor => MethodContext::SelfAnchor { own: CANON_SELF },
                    Method::Peer1 => MethodContext::Peer1 {
                        own: CANON_SELF,
                        peer: CANON_PEER,
                    },
                    Method::Peer2 => MethodContext::Peer2 {
                        own: CANON_SELF,
                        peers: CANON_PEERS,
                    },
                    Method::Repr => MethodContext::Representatives(CANON_REPR),
                };
                let payload = kit.build_prompt(&cell, Stage::Evaluated, &ctx)?;
                w.write(
                    &format!("rendered/{}/{}-{}.txt", prompt.id, method, strategy),
                    &payload.to_audit_text(),
                )?;
                summary.rendered_cells += 1;
            }
        }
        let planning = kit.build_planning_prompt(&prompt.id, CANONICAL_POOL_SIZE)?;
        w.write(
            &format!("rendered/{}/planning.txt", prompt.id),
            &planning.to_audit_text(),
        )?;
        summary.planning_prompts += 1;
    }

    summary.judge_prompts = write_judge(kit, &mut w)?;

    summary.files = w.files;
    Ok(summary)
}

fn write_judge(kit: &PromptKit, w: &mut Writer<'_>) -> Result<usize> {
    w.write("judge/system.txt", kit.judge_system()?)?;
    w.write(
        "judge/user.txt",
        &kit.judge_user_with_context("[task context]", "[candidate slogan]")?,
    )?;
    let mut count = 2;
    for prompt in kit.manifest().prompts_in(Family::Slogans) {
        w.write(
            &format!("judge/user_{}.txt", prompt.id),
            &kit.judge_user(&prompt.id, "[candidate slogan]")?,
        )?;
        count += 1;
    }
    Ok(count)
}

/// Writes only the slogan judge prompts under `dir/judge/`.
pub fn export_judge_prompts(kit: &PromptKit, dir: &Path) -> Result<ExportSummary> {
    let mut w = Writer {
        root: dir,
        files: Vec::new(),
    };
    let judge_prompts = write_judge(kit, &mut w)?;
    Ok(ExportSummary {
        judge_prompts,
        files: w.files,
        ..Default::default()
    })
}
