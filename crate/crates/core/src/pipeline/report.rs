use std::path::Path;

use serde::Serialize;

use super::{prepare, read_json, write_json, AnalysisBundle, FailureEntry, StageOptions, StageOutcome};
use crate::analysis::{ContrastEstimate, MIN_BOOTSTRAP_REPLICATES};
use crate::config::RunConfig;
use crate::diversity::{RareMetric, REGION_N_INIT, REGION_SEED};
use crate::error::{Error, Result};
use crate::model::{CellCoord, PROXY_TOKENS_PER_WORD};
use crate::quality::{BIGRAM_WEIGHT, TRIGRAM_WEIGHT};

pub const REPORT_FILES: [&str; 7] = [
    "cell_summaries.csv",
    "contrasts.csv",
    "design_averages.csv",
    "rarefaction_long.csv",
    "rarefaction_summary.csv",
    "efficiency.csv",
    "run_manifest.json",
];

pub(crate) const CELL_SUMMARY_COLUMNS: [&str; 21] = [
    "model", "prompt", "family", "method", "strategy", "n", "d_pair", "d_nn", "d_med", "d_mst", "d_ent", "quality",
    "auc_d_pair", "auc_d_ent", "first_hit_d_pair_mean", "first_hit_d_pair_not_reached", "first_hit_d_ent_mean",
    "first_hit_d_ent_not_reached", "pipeline_tokens", "r_tok", "proxy_tokens",
];

pub(crate) const CONTRAST_COLUMNS: [&str; 12] = [
    "model", "prompt", "family", "method", "strategy", "kind", "statistic", "value", "replicate_median", "ci_low",
    "ci_high", "replicates",
];

pub(crate) const DESIGN_COLUMNS: [&str; 12] = [
    "model", "scope", "method", "strategy", "kind", "statistic", "value", "replicate_median", "ci_low", "ci_high",
    "replicates", "prompts",
];

pub(crate) const RAREFACTION_LONG_COLUMNS: [&str; 10] =
    ["model", "prompt", "family", "method", "strategy", "metric", "q", "mean", "p2_5", "p97_5"];

pub(crate) const RAREFACTION_SUMMARY_COLUMNS: [&str; 14] = [
    "model", "prompt", "family", "method", "strategy", "metric", "auc", "target", "first_hit_mean",
    "first_hit_ci_low", "first_hit_ci_high", "reached", "not_reached", "repeats",
];

pub(crate) const EFFICIENCY_COLUMNS: [&str; 11] = [
    "model", "method", "strategy", "statistic", "delta", "ci_low", "ci_high", "mean_pipeline_tokens",
    "gain_per_100k", "gain_ci_low", "gain_ci_high",
];

/// Column names of each CSV report file.
pub fn report_schema(file: &str) -> Option<&'static [&'static str]> {
    Some(match file {
        "cell_summaries.csv" => &CELL_SUMMARY_COLUMNS,
        "contrasts.csv" => &CONTRAST_COLUMNS,
        "design_averages.csv" => &DESIGN_COLUMNS,
        "rarefaction_long.csv" => &RAREFACTION_LONG_COLUMNS,
        "rarefaction_summary.csv" => &RAREFACTION_SUMMARY_COLUMNS,
        "efficiency.csv" => &EFFICIENCY_COLUMNS,
        _ => return None,
    })
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn coord(c: &CellCoord) -> Vec<String> {
    vec![
        c.model_id.clone(),
        c.prompt_id.clone(),
        c.family.to_string(),
        c.method.to_string(),
        c.strategy.to_string(),
    ]
}

fn estimate(e: &ContrastEstimate) -> Vec<String> {
    vec![
        e.kind.as_str().to_string(),
        String::new(),
        f(e.value),
        f(e.replicate_median),
        f(e.ci_low),
        f(e.ci_high),
        e.replicates.to_string(),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Constants {
    bigram_weight: f64,
    trigram_weight: f64,
    region_seed: u64,
    region_n_init: usize,
    proxy_tokens_per_word: f64,
    min_bootstrap_replicates: usize,
    rarefaction_repeats: usize,
    bootstrap_replicates: usize,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    fingerprint: &'a str,
    config: &'a RunConfig,
    seeds: crate::config::Seeds,
    constants: Constants,
    cells: usize,
    failures: &'a [FailureEntry],
    files: Vec<&'static str>,
}

/// Writes the CSV tables and the run manifest from `analysis/analysis.json`.
pub fn report(cfg: &RunConfig, opts: &StageOptions) -> Result<StageOutcome> {
    let p = prepare(cfg, opts)?;
    let path = p.run.analysis_json();
    if !path.exists() {
        return Err(Error::MissingStage("analysis missing; run `poolforge analyze`".into()));
    }
    let bundle: AnalysisBundle = read_json(&path)?;
    if bundle.fingerprint != p.fingerprint {
        return Err(Error::artifact(path, "analysis belongs to a different configuration; rerun `poolforge analyze`"));
    }
    let dir = p.run.report_dir();
    std::fs::create_dir_all(&dir)?;

    write_csv(
        &dir.join("cell_summaries.csv"),
        &CELL_SUMMARY_COLUMNS,
        bundle.cells.iter().map(|a| {
            let s = &a.summary;
            let hit = |m: RareMetric| a.rarefaction.iter().find(|r| r.metric == m).and_then(|r| r.first_hit);
            let (hp, he) = (hit(RareMetric::DPair), hit(RareMetric::DEnt));
            let mut row = coord(&s.cell);
            row.extend([
                s.n.to_string(),
                f(s.diversity.d_pair),
                f(s.diversity.d_nn),
                f(s.diversity.d_med),
                f(s.diversity.d_mst),
                f(s.diversity.d_ent),
                opt(s.quality),
                f(s.auc_d_pair),
                f(s.auc_d_ent),
                opt(hp.and_then(|h| h.mean_q)),
                hp.map(|h| h.not_reached.to_string()).unwrap_or_default(),
                opt(he.and_then(|h| h.mean_q)),
                he.map(|h| h.not_reached.to_string()).unwrap_or_default(),
                s.pipeline_tokens.to_string(),
                opt(s.r_tok),
                s.proxy_tokens.to_string(),
            ]);
            row
        }),
    )?;

    write_csv(
        &dir.join("contrasts.csv"),
        &CONTRAST_COLUMNS,
        bundle.contrasts.iter().map(|c| {
            let mut row = coord(&c.cell);
            let mut est = estimate(&c.estimate);
            est[1] = c.statistic.as_str().to_string();
            row.extend(est);
            row
        }),
    )?;

    write_csv(
        &dir.join("design_averages.csv"),
        &DESIGN_COLUMNS,
        bundle.design.iter().map(|d| {
            let mut row = vec![d.model_id.clone(), d.scope.clone(), d.method.to_string(), d.strategy.to_string()];
            let mut est = estimate(&d.estimate);
            est[1] = d.statistic.as_str().to_string();
            row.extend(est);
            row.push(d.prompts.to_string());
            row
        }),
    )?;

    write_csv(
        &dir.join("rarefaction_long.csv"),
        &RAREFACTION_LONG_COLUMNS,
        bundle.cells.iter().flat_map(|a| {
            a.rarefaction.iter().flat_map(move |r| {
                r.curve.iter().map(move |pt| {
                    let mut row = coord(&a.summary.cell);
                    row.extend([r.metric.as_str().to_string(), pt.q.to_string(), f(pt.mean), f(pt.p2_5), f(pt.p97_5)]);
                    row
                })
            })
        }),
    )?;

    write_csv(
        &dir.join("rarefaction_summary.csv"),
        &RAREFACTION_SUMMARY_COLUMNS,
        bundle.cells.iter().flat_map(|a| {
            a.rarefaction.iter().map(move |r| {
                let h = r.first_hit;
                let mut row = coord(&a.summary.cell);
                row.extend([
                    r.metric.as_str().to_string(),
                    f(r.auc),
                    opt(r.target),
                    opt(h.and_then(|h| h.mean_q)),
                    opt(h.and_then(|h| h.ci_low)),
                    opt(h.and_then(|h| h.ci_high)),
                    h.map(|h| h.reached.to_string()).unwrap_or_default(),
                    h.map(|h| h.not_reached.to_string()).unwrap_or_default(),
                    bundle.rarefaction_repeats.to_string(),
                ]);
                row
            })
        }),
    )?;

    write_csv(
        &dir.join("efficiency.csv"),
        &EFFICIENCY_COLUMNS,
        bundle.efficiency.iter().map(|e| {
            vec![
                e.model_id.clone(),
                e.method.to_string(),
                e.strategy.to_string(),
                e.statistic.as_str().to_string(),
                f(e.delta.value),
                f(e.delta.ci_low),
                f(e.delta.ci_high),
                f(e.mean_pipeline_tokens),
                f(e.gain_per_100k),
                f(e.gain_ci_low),
                f(e.gain_ci_high),
            ]
        }),
    )?;

    write_json(
        &dir.join("run_manifest.json"),
        &RunManifest {
            fingerprint: &bundle.fingerprint,
            config: &p.cfg,
            seeds: p.cfg.seeds,
            constants: Constants {
                bigram_weight: BIGRAM_WEIGHT,
                trigram_weight: TRIGRAM_WEIGHT,
                region_seed: REGION_SEED,
                region_n_init: REGION_N_INIT,
                proxy_tokens_per_word: PROXY_TOKENS_PER_WORD,
                min_bootstrap_replicates: MIN_BOOTSTRAP_REPLICATES,
                rarefaction_repeats: bundle.rarefaction_repeats,
                bootstrap_replicates: bundle.bootstrap_replicates,
            },
            cells: bundle.cells.len(),
            failures: &bundle.failures,
            files: REPORT_FILES.to_vec(),
        },
    )?;

    Ok(StageOutcome {
        executed: REPORT_FILES.iter().map(|s| s.to_string()).collect(),
        skipped: Vec::new(),
        failures: bundle.failures,
    })
}
