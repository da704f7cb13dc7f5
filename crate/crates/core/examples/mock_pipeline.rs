//! Runs every stage offline with the mock backend and embedder on a small
//! grid, then prints the cell summaries.
//!
//! cargo run --example mock_pipeline -- /tmp/poolforge-demo

use poolforge::config::RunConfig;
use poolforge::pipeline::{self, RunDir, StageOptions};

fn main() -> poolforge::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/mock-demo".into());
    let _ = std::fs::remove_dir_all(&out);
    let mut cfg = RunConfig {
        output_dir: out.clone().into(),
        n: 30,
        models: vec!["gpt-5.4".into()],
        prompts: vec!["story_jungle".into(), "aut_button".into(), "slogan_smartphone".into()],
        ..RunConfig::default()
    };
    cfg.analysis.rarefaction_repeats = 50;
    cfg.analysis.bootstrap_replicates = 200;

    let backend = pipeline::build_backend(&cfg)?;
    let embedder = pipeline::build_embedder(&cfg)?;
    let outcome = pipeline::run_all(&cfg, &StageOptions::default(), backend.as_ref(), embedder.as_ref())?;
    println!("{} cells generated, {} failed", outcome.executed.len(), outcome.failures.len());

    let report = RunDir::new(&out).report_dir();
    let mut rdr = csv::Reader::from_path(report.join("cell_summaries.csv"))?;
    let h = rdr.headers()?.clone();
    let col = |name: &str| h.iter().position(|c| c == name).expect("column");
    let (p, m, s, dp, de, rt) = (col("prompt"), col("method"), col("strategy"), col("d_pair"), col("d_ent"), col("r_tok"));
    for row in rdr.records() {
        let row = row?;
        println!("{:<18} {:<12} {:<8} d_pair {:<8.8} d_ent {:<8.8} r_tok {}", &row[p], &row[m], &row[s], &row[dp], &row[de], &row[rt]);
    }
    println!("reports in {}", report.display());
    Ok(())
}
