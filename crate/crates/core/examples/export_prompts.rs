//! Writes every template piece, rendered prompt and judge prompt to a
//! directory for review.
//!
//! cargo run --example export_prompts -- out/prompts

use poolforge::prompts::{export_judge_prompts, export_prompts, PromptKit};

fn main() -> poolforge::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "prompts".into());
    let kit = PromptKit::reference();
    let s = export_prompts(&kit, out.as_ref())?;
    let j = export_judge_prompts(&kit, out.as_ref())?;
    println!(
        "{} task prompts, {} modifiers, {} rendered cells, {} planning prompts, {} judge prompts -> {out}",
        s.task_prompts, s.modifiers, s.rendered_cells, s.planning_prompts, j.judge_prompts
    );
    // one rendered prompt, as the model would see it
    let cell = poolforge::CellCoord::new(
        "gpt-5.4",
        "aut_shoe",
        poolforge::Family::Aut,
        poolforge::Method::Indep,
        poolforge::Strategy::Diverge,
    );
    let p = kit.build_prompt(&cell, poolforge::Stage::Evaluated, &poolforge::prompts::MethodContext::Empty)?;
    println!("\n{}", p.to_audit_text());
    Ok(())
}
