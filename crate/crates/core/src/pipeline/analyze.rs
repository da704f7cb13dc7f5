use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cached_embeddings, load_cells, prepare, read_json, write_json, FailureEntry, LoadedCell, StageOptions, StageOutcome};
use crate::analysis::{
    bootstrap_cell, bootstrap_ci, delta_base_with, delta_div_with, design_average_with, efficiency, pipeline_tokens,
    r_tok, sub_replicates, CellInputs, CellSummary, ContrastEstimate, ContrastKind, Interval, Stat,
};
use crate::config::{RunConfig, Seeds};
use crate::diversity::{rarefaction_auc, rarefy, FirstHitSummary, RareMetric, RarefactionCurve, RegionModel};
use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, EmbeddingCache};
use crate::hashing::derive_seed;
use crate::model::{CellCoord, Family, Method, Strategy};
use crate::quality::ingest_scores;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: usize,
    pub mean: f64,
    pub p2_5: f64,
    pub p97_5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RarefactionSummary {
    pub metric: RareMetric,
    pub auc: f64,
    /// Full-pool value of the model/prompt baseline, when it was analyzed.
    pub target: Option<f64>,
    pub first_hit: Option<FirstHitSummary>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAnalysis {
    pub summary: CellSummary,
    pub point: BTreeMap<Stat, f64>,
    pub intervals: BTreeMap<Stat, Interval>,
    pub rarefaction: Vec<RarefactionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub cell: CellCoord,
    pub statistic: Stat,
    pub estimate: ContrastEstimate,
}

/// A contrast averaged over prompts, for one family or overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub model_id: String,
    pub scope: String,
    pub method: Method,
    pub strategy: Strategy,
    pub statistic: Stat,
    pub estimate: ContrastEstimate,
    pub prompts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub model_id: String,
    pub method: Method,
    pub strategy: Strategy,
    pub statistic: Stat,
    pub delta: ContrastEstimate,
    pub mean_pipeline_tokens: f64,
    pub gain_per_100k: f64,
    pub gain_ci_low: f64,
    pub gain_ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub fingerprint: String,
    pub seeds: Seeds,
    pub rarefaction_repeats: usize,
    pub bootstrap_replicates: usize,
    pub cells: Vec<CellAnalysis>,
    pub contrasts: Vec<ContrastRow>,
    pub design: Vec<DesignRow>,
    pub efficiency: Vec<EfficiencyRow>,
    pub failures: Vec<FailureEntry>,
}

impl AnalysisBundle {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        read_json(path)
    }
}

/// Per-cell work product before cross-cell quantities are known.
struct Partial {
    summary: CellSummary,
    tokens: u64,
    point: BTreeMap<Stat, f64>,
    replicates: BTreeMap<Stat, Vec<f64>>,
    curves: Vec<RarefactionCurve>,
}

struct Shared<'a> {
    cfg: &'a RunConfig,
    cache: &'a EmbeddingCache,
    regions: &'a BTreeMap<String, RegionModel>,
    quality: &'a BTreeMap<String, BTreeMap<String, f64>>,
}

fn analyze_cell(sh: &Shared<'_>, c: &LoadedCell) -> Result<Partial> {
    let cell = &c.meta.cell;
    let key = cell.key();
    let set = cached_embeddings(sh.cache, &c.evaluated)?;
    let distances = distance_matrix(&set);
    let keys: Vec<String> = c.evaluated.records.iter().map(|r| cell.output_key(r.slot)).collect();
    let region = sh
        .regions
        .get(&cell.prompt_id)
        .ok_or_else(|| Error::MissingStage(format!("regions missing for {}; run `poolforge embed`", cell.prompt_id)))?;
    let labels = region.labels_for(keys.iter().map(String::as_str))?;
    let qz = match sh.quality.get(&cell.prompt_id) {
        Some(z) => Some(
            keys.iter()
                .map(|k| z.get(k).copied().ok_or_else(|| Error::Scores(format!("unscored output {k}"))))
                .collect::<Result<Vec<f64>>>()?,
        ),
        None => None,
    };
    let inputs = CellInputs { distances: &distances, labels: &labels, k: region.k, quality: qz.as_deref() };
    let point = inputs.point()?;
    let boot = bootstrap_cell(&inputs, sh.cfg.analysis.bootstrap_replicates, sh.cfg.seeds.bootstrap, &key)?;
    let rare_seed = derive_seed(sh.cfg.seeds.rarefaction, &key);
    let curves = [RareMetric::DPair, RareMetric::DEnt]
        .into_iter()
        .map(|m| rarefy(&distances, &labels, region.k, m, sh.cfg.analysis.rarefaction_repeats, rare_seed))
        .collect::<Result<Vec<_>>>()?;
    let tokens = pipeline_tokens(cell.method, &c.meta.tokens)?;
    let summary = CellSummary {
        cell: cell.clone(),
        n: c.evaluated.n(),
        diversity: inputs.diversity()?,
        quality: point.get(&Stat::Quality).copied(),
        auc_d_pair: rarefaction_auc(&curves[0])?,
        auc_d_ent: rarefaction_auc(&curves[1])?,
        pipeline_tokens: tokens,
        r_tok: None,
        proxy_tokens: c.meta.tokens.is_proxy(),
    };
    Ok(Partial { summary, tokens, point, replicates: boot.replicates, curves })
}

fn curve_points(curve: &RarefactionCurve) -> Vec<CurvePoint> {
    (1..=curve.n)
        .map(|q| {
            let (lo, _, hi) = stats::central_interval(&curve.values[q - 1]);
            CurvePoint { q, mean: curve.mean_at(q), p2_5: lo, p97_5: hi }
        })
        .collect()
}

fn rare_stat(metric: RareMetric) -> Stat {
    match metric {
        RareMetric::DPair => Stat::DPair,
        RareMetric::DEnt => Stat::DEnt,
    }
}

type Est = (f64, Vec<f64>);

fn sub_est(a: &Est, b: &Est) -> Est {
    (a.0 - b.0, sub_replicates(&a.1, &b.1))
}

fn mean_est(vs: &[&Est]) -> Est {
    let k = vs.len() as f64;
    let b = vs[0].1.len();
    (
        vs.iter().map(|v| v.0).sum::<f64>() / k,
        (0..b).map(|r| vs.iter().map(|v| v.1[r]).sum::<f64>() / k).collect(),
    )
}

/// Planned contrasts for one statistic over the cells that have the
/// needed partner cell.
fn contrasts_for(stat: Stat, parts: &BTreeMap<CellCoord, Partial>) -> Result<Vec<(ContrastKind, BTreeMap<CellCoord, Est>)>> {
    let values: BTreeMap<CellCoord, Est> = parts
        .iter()
        .filter_map(|(c, p)| Some((c.clone(), (*p.point.get(&stat)?, p.replicates.get(&stat)?.clone()))))
        .collect();
    let with_base: BTreeMap<CellCoord, Est> = values
        .iter()
        .filter(|(c, _)| values.contains_key(&c.baseline()))
        .map(|(c, v)| (c.clone(), v.clone()))
        .collect();
    let with_pair: BTreeMap<CellCoord, Est> = values
        .iter()
        .filter(|(c, _)| {
            let other = match c.strategy {
                Strategy::Neutral => Strategy::Diverge,
                Strategy::Diverge => Strategy::Neutral,
            };
            values.contains_key(&c.with_strategy(other))
        })
        .map(|(c, v)| (c.clone(), v.clone()))
        .collect();
    Ok(vec![
        (ContrastKind::Base, delta_base_with(&with_base, sub_est)?),
        (ContrastKind::Diverge, delta_div_with(&with_pair, sub_est)?),
    ])
}

type GroupKey = (String, Method, Strategy);
type Grouped<V> = (BTreeMap<String, V>, BTreeMap<Family, Vec<String>>);

fn group_by_design<V: Clone>(values: &BTreeMap<CellCoord, V>) -> BTreeMap<GroupKey, Grouped<V>> {
    let mut out: BTreeMap<GroupKey, Grouped<V>> = BTreeMap::new();
    for (c, v) in values {
        let e = out.entry((c.model_id.clone(), c.method, c.strategy)).or_default();
        e.0.insert(c.prompt_id.clone(), v.clone());
        e.1.entry(c.family).or_default().push(c.prompt_id.clone());
    }
    out
}

/// Loads every configured quality table as standardized scores by prompt.
fn load_quality(p: &super::Prepared, cells: &[LoadedCell]) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let prompts: BTreeSet<&str> = cells.iter().map(|c| c.meta.cell.prompt_id.as_str()).collect();
    let mut out = BTreeMap::new();
    for prompt in prompts {
        let family = p.kit.manifest().family_of(prompt)?;
        let Some(scorer) = p.cfg.quality.source(family).scorer_id() else {
            continue;
        };
        let path = p.run.score_file(prompt, scorer);
        if !path.exists() {
            return Err(Error::MissingStage(format!(
                "scores missing: {} not found; run `poolforge score`",
                path.display()
            )));
        }
        let table = ingest_scores(&path, scorer, prompt, None)?;
        out.insert(prompt.to_string(), table.standardized()?);
    }
    Ok(out)
}

/// Computes every cell summary, contrast, design average and efficiency
/// row, and writes them to `analysis/analysis.json`.
pub fn analyze(cfg: &RunConfig, opts: &StageOptions) -> Result<StageOutcome> {
    let p = prepare(cfg, opts)?;
    let stage = p.run.embeddings_dir().join("stage.json");
    if !stage.exists() {
        return Err(Error::MissingStage("embeddings missing; run `poolforge embed`".into()));
    }
    let embed_stage: super::EmbedStage = read_json(&stage)?;
    if embed_stage.fingerprint != p.fingerprint {
        return Err(Error::artifact(stage, "embeddings belong to a different configuration; rerun `poolforge embed`"));
    }
    let (cells, mut failures) = load_cells(&p)?;
    let cache = EmbeddingCache::open(&p.run.cache_dir(), &embed_stage.embedder_id)?;
    let mut regions = BTreeMap::new();
    for c in &cells {
        let prompt = &c.meta.cell.prompt_id;
        if !regions.contains_key(prompt) {
            let path = p.run.regions_file(prompt);
            if !path.exists() {
                return Err(Error::MissingStage(format!("regions missing for {prompt}; run `poolforge embed`")));
            }
            regions.insert(prompt.clone(), read_json::<RegionModel>(&path)?);
        }
    }
    let quality = load_quality(&p, &cells)?;
    let sh = Shared { cfg: &p.cfg, cache: &cache, regions: &regions, quality: &quality };

    let results: Vec<(CellCoord, Result<Partial>)> =
        cells.par_iter().map(|c| (c.meta.cell.clone(), analyze_cell(&sh, c))).collect();
    let mut parts = BTreeMap::new();
    let mut outcome = StageOutcome::default();
    for (cell, r) in results {
        match r {
            Ok(part) => {
                outcome.executed.push(cell.key());
                parts.insert(cell, part);
            }
            Err(Error::MissingStage(m)) => return Err(Error::MissingStage(m)),
            Err(e) => failures.push(FailureEntry { cell: cell.key(), stage: "analyze".into(), message: e.to_string() }),
        }
    }
    if parts.is_empty() {
        return Err(Error::Analysis("no cell could be analyzed".into()));
    }

    let baseline_tokens: BTreeMap<CellCoord, u64> =
        parts.iter().filter(|(c, _)| c.is_baseline()).map(|(c, p)| (c.clone(), p.tokens)).collect();
    let mut analyses = Vec::with_capacity(parts.len());
    for (cell, part) in &parts {
        let base = parts.get(&cell.baseline());
        let mut summary = part.summary.clone();
        summary.r_tok = baseline_tokens.get(&cell.baseline()).map(|&b| r_tok(part.tokens, b)).transpose()?;
        let rarefaction = part
            .curves
            .iter()
            .map(|curve| {
                let target = base.and_then(|b| b.point.get(&rare_stat(curve.metric)).copied());
                Ok(RarefactionSummary {
                    metric: curve.metric,
                    auc: rarefaction_auc(curve)?,
                    target,
                    first_hit: target.map(|t| FirstHitSummary::from_hits(&curve.first_hits(t))),
                    curve: curve_points(curve),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let intervals = part.replicates.iter().map(|(s, r)| (*s, bootstrap_ci(r))).collect();
        analyses.push(CellAnalysis { summary, point: part.point.clone(), intervals, rarefaction });
    }

    let mut contrasts = Vec::new();
    let mut design = Vec::new();
    let mut efficiency_rows = Vec::new();
    let cell_tokens: BTreeMap<CellCoord, f64> = parts.iter().map(|(c, p)| (c.clone(), p.tokens as f64)).collect();
    let token_groups = group_by_design(&cell_tokens);
    for stat in Stat::ALL {
        for (kind, deltas) in contrasts_for(stat, &parts)? {
            for (cell, (v, reps)) in &deltas {
                contrasts.push(ContrastRow {
                    cell: cell.clone(),
                    statistic: stat,
                    estimate: ContrastEstimate::new(kind, *v, reps),
                });
            }
            for ((model, method, strategy), (values, prompts)) in group_by_design(&deltas) {
                let avg = design_average_with(&values, &prompts, mean_est)?;
                for (family, (v, reps)) in &avg.by_family {
                    design.push(DesignRow {
                        model_id: model.clone(),
                        scope: family.as_str().to_string(),
                        method,
                        strategy,
                        statistic: stat,
                        estimate: ContrastEstimate::new(kind, *v, reps),
                        prompts: prompts[family].len(),
                    });
                }
                let (v, reps) = &avg.overall;
                design.push(DesignRow {
                    model_id: model.clone(),
                    scope: "overall".into(),
                    method,
                    strategy,
                    statistic: stat,
                    estimate: ContrastEstimate::new(kind, *v, reps),
                    prompts: prompts.values().map(Vec::len).sum(),
                });
                if kind == ContrastKind::Base && matches!(stat, Stat::DPair | Stat::DEnt | Stat::Quality) {
                    let (tv, _) = &token_groups[&(model.clone(), method, strategy)];
                    let tokens = design_average_with(tv, &prompts, |vs| vs.iter().map(|t| **t).sum::<f64>() / vs.len() as f64)?.overall;
                    let gains: Vec<f64> = reps.iter().map(|d| efficiency(*d, tokens)).collect::<Result<_>>()?;
                    let iv = bootstrap_ci(&gains);
                    efficiency_rows.push(EfficiencyRow {
                        model_id: model.clone(),
                        method,
                        strategy,
                        statistic: stat,
                        delta: ContrastEstimate::new(kind, *v, reps),
                        mean_pipeline_tokens: tokens,
                        gain_per_100k: efficiency(*v, tokens)?,
                        gain_ci_low: iv.low,
                        gain_ci_high: iv.high,
                    });
                }
            }
        }
    }

    failures.sort_by(|a, b| a.cell.cmp(&b.cell));
    let bundle = AnalysisBundle {
        fingerprint: p.fingerprint.clone(),
        seeds: p.cfg.seeds,
        rarefaction_repeats: p.cfg.analysis.rarefaction_repeats,
        bootstrap_replicates: p.cfg.analysis.bootstrap_replicates,
        cells: analyses,
        contrasts,
        design,
        efficiency: efficiency_rows,
        failures: failures.clone(),
    };
    write_json(&p.run.analysis_json(), &bundle)?;
    outcome.failures = failures;
    Ok(outcome)
}
