//! Token accounting, planned contrasts, design averages and output-level
//! bootstrap intervals.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diversity::{d_ent, d_med, d_mst, d_nn, d_pair, DiversityReport};
use crate::error::{Error, Result};
use crate::geometry::DistanceMatrix;
use crate::hashing::stream_rng;
use crate::model::{CellCoord, Family, Method, Strategy, TokenUsage};
use crate::stats;

pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 1000;
pub const MIN_BOOTSTRAP_REPLICATES: usize = 100;

/// Usage records of one cell, split by pipeline step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellTokens {
    pub planning: Option<TokenUsage>,
    pub seed: Option<TokenUsage>,
    pub evaluated: Option<TokenUsage>,
}

impl CellTokens {
    pub fn is_proxy(&self) -> bool {
        [self.planning, self.seed, self.evaluated]
            .iter()
            .flatten()
            .any(TokenUsage::is_proxy)
    }
}

/// Prompt plus completion tokens along the method's full inference path:
/// generation for indep, planning plus generation for strat, seed plus
/// evaluated pools for two-stage methods.
pub fn pipeline_tokens(method: Method, tokens: &CellTokens) -> Result<u64> {
    let missing = |what: &str| Error::Analysis(format!("{method} cell has no {what} usage"));
    let evaluated = tokens.evaluated.ok_or_else(|| missing("evaluated-pool"))?.total();
    Ok(match method {
        Method::Indep => evaluated,
        Method::Strat => tokens.planning.ok_or_else(|| missing("planning"))?.total() + evaluated,
        _ => tokens.seed.ok_or_else(|| missing("seed-pool"))?.total() + evaluated,
    })
}

/// Token multiplier against the indep-neutral baseline.
pub fn r_tok(cell_tokens: u64, baseline_tokens: u64) -> Result<f64> {
    if baseline_tokens == 0 {
        return Err(Error::Analysis("baseline pipeline used zero tokens".into()));
    }
    Ok(cell_tokens as f64 / baseline_tokens as f64)
}

/// Gain per 100k pipeline tokens.
pub fn efficiency(delta: f64, pipeline_tokens: f64) -> Result<f64> {
    if pipeline_tokens <= 0.0 {
        return Err(Error::Analysis("efficiency needs positive pipeline tokens".into()));
    }
    Ok(delta / (pipeline_tokens / 100_000.0))
}

/// Pool statistics carried through contrasts and the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    DPair,
    DNn,
    DMed,
    DMst,
    DEnt,
    Quality,
}

impl Stat {
    pub const ALL: [Stat; 6] = [Stat::DPair, Stat::DNn, Stat::DMed, Stat::DMst, Stat::DEnt, Stat::Quality];

    pub fn as_str(self) -> &'static str {
        match self {
            Stat::DPair => "d_pair",
            Stat::DNn => "d_nn",
            Stat::DMed => "d_med",
            Stat::DMst => "d_mst",
            Stat::DEnt => "d_ent",
            Stat::Quality => "quality",
        }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything needed to evaluate a cell's statistics on any index multiset.
#[derive(Debug, Clone, Copy)]
pub struct CellInputs<'a> {
    pub distances: &'a DistanceMatrix,
    pub labels: &'a [usize],
    pub k: usize,
    /// Standardized quality per slot, when a scorer is configured.
    pub quality: Option<&'a [f64]>,
}

pub type StatValues = BTreeMap<Stat, f64>;

impl CellInputs<'_> {
    pub fn n(&self) -> usize {
        self.distances.n()
    }

    /// Statistics of the sub-multiset `idx`; duplicated indices sit at
    /// distance zero from each other.
    pub fn evaluate(&self, idx: &[usize]) -> Result<StatValues> {
        let view = self.distances.view(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let mut out = BTreeMap::from([
            (Stat::DPair, d_pair(&view)?),
            (Stat::DNn, d_nn(&view)?),
            (Stat::DMed, d_med(&view)),
            (Stat::DMst, d_mst(&view)?),
            (Stat::DEnt, d_ent(&labels, self.k)?),
        ]);
        if let Some(q) = self.quality {
            out.insert(Stat::Quality, stats::mean(&idx.iter().map(|&i| q[i]).collect::<Vec<_>>()));
        }
        Ok(out)
    }

    pub fn point(&self) -> Result<StatValues> {
        if self.labels.len() != self.n() || self.quality.is_some_and(|q| q.len() != self.n()) {
            return Err(Error::Analysis("cell inputs disagree on pool size".into()));
        }
        self.evaluate(&(0..self.n()).collect::<Vec<_>>())
    }

    pub fn diversity(&self) -> Result<DiversityReport> {
        DiversityReport::compute(self.distances, self.labels, self.k)
    }
}

/// Runs `f` on `b` with-replacement resamples of 0..n. Replicate `r` draws
/// from its own stream keyed by (seed, label, r), so results do not depend
/// on scheduling.
pub fn bootstrap_map<T, F>(n: usize, b: usize, seed: u64, label: &str, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[usize]) -> T + Sync,
{
    (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, label, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            f(&idx)
        })
        .collect()
}

/// Per-statistic replicate arrays for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBootstrap {
    pub replicates: BTreeMap<Stat, Vec<f64>>,
}

pub fn bootstrap_cell(inputs: &CellInputs<'_>, b: usize, seed: u64, cell_key: &str) -> Result<CellBootstrap> {
    if b < MIN_BOOTSTRAP_REPLICATES {
        return Err(Error::Analysis(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPLICATES} replicates, got {b}"
        )));
    }
    let reps = bootstrap_map(inputs.n(), b, seed, cell_key, |idx| inputs.evaluate(idx));
    let mut replicates: BTreeMap<Stat, Vec<f64>> = BTreeMap::new();
    for rep in reps {
        for (s, v) in rep? {
            replicates.entry(s).or_default().push(v);
        }
    }
    Ok(CellBootstrap { replicates })
}

/// 2.5th, 50th and 97.5th percentiles of a replicate distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub median: f64,
    pub high: f64,
}

pub fn bootstrap_ci(replicates: &[f64]) -> Interval {
    let (low, median, high) = stats::central_interval(replicates);
    Interval { low, median, high }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    Base,
    Diverge,
}

impl ContrastKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContrastKind::Base => "base",
            ContrastKind::Diverge => "diverge",
        }
    }
}

/// A contrast's full-data estimate with its bootstrap percentile interval.
/// The interval always brackets the replicate median; the full-data value
/// usually but not necessarily lies inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastEstimate {
    pub kind: ContrastKind,
    pub value: f64,
    pub replicate_median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: usize,
}

impl ContrastEstimate {
    pub fn new(kind: ContrastKind, value: f64, replicates: &[f64]) -> Self {
        let iv = bootstrap_ci(replicates);
        ContrastEstimate {
            kind,
            value,
            replicate_median: iv.median,
            ci_low: iv.low,
            ci_high: iv.high,
            replicates: replicates.len(),
        }
    }
}

/// Y(cell) - Y(baseline) for every cell, via a caller-supplied difference.
pub fn delta_base_with<V>(
    values: &BTreeMap<CellCoord, V>,
    sub: impl Fn(&V, &V) -> V,
) -> Result<BTreeMap<CellCoord, V>> {
    values
        .iter()
        .map(|(cell, v)| {
            let base = values
                .get(&cell.baseline())
                .ok_or_else(|| Error::Analysis(format!("no baseline cell for {cell}")))?;
            Ok((cell.clone(), sub(v, base)))
        })
        .collect()
}

/// Y(diverge) - Y(neutral) within each method, keyed by the diverge cell.
pub fn delta_div_with<V>(
    values: &BTreeMap<CellCoord, V>,
    sub: impl Fn(&V, &V) -> V,
) -> Result<BTreeMap<CellCoord, V>> {
    let mut out = BTreeMap::new();
    for (cell, v) in values {
        let other = cell.with_strategy(match cell.strategy {
            Strategy::Neutral => Strategy::Diverge,
            Strategy::Diverge => Strategy::Neutral,
        });
        let w = values
            .get(&other)
            .ok_or_else(|| Error::Analysis(format!("{cell} has no {} counterpart", other.strategy)))?;
        if cell.strategy == Strategy::Diverge {
            out.insert(cell.clone(), sub(v, w));
        }
    }
    Ok(out)
}

pub fn delta_base(values: &BTreeMap<CellCoord, f64>) -> Result<BTreeMap<CellCoord, f64>> {
    delta_base_with(values, |a, b| a - b)
}

pub fn delta_div(values: &BTreeMap<CellCoord, f64>) -> Result<BTreeMap<CellCoord, f64>> {
    delta_div_with(values, |a, b| a - b)
}

/// Elementwise difference of two replicate arrays.
pub fn sub_replicates(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Unweighted family means over prompt conditions, and their unweighted
/// mean over the families present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignAverage<V> {
    pub by_family: BTreeMap<Family, V>,
    pub overall: V,
}

pub fn design_average_with<V>(
    values: &BTreeMap<String, V>,
    prompts: &BTreeMap<Family, Vec<String>>,
    mean: impl Fn(&[&V]) -> V,
) -> Result<DesignAverage<V>> {
    let mut by_family = BTreeMap::new();
    for (family, ids) in prompts {
        if ids.is_empty() {
            continue;
        }
        let vs = ids
            .iter()
            .map(|p| {
                values
                    .get(p)
                    .ok_or_else(|| Error::Analysis(format!("design average is missing prompt {p}")))
            })
            .collect::<Result<Vec<_>>>()?;
        by_family.insert(*family, mean(&vs));
    }
    if by_family.is_empty() {
        return Err(Error::Analysis("design average over no prompts".into()));
    }
    let fams: Vec<&V> = by_family.values().collect();
    let overall = mean(&fams);
    Ok(DesignAverage { by_family, overall })
}

pub fn design_average(
    values: &BTreeMap<String, f64>,
    prompts: &BTreeMap<Family, Vec<String>>,
) -> Result<DesignAverage<f64>> {
    design_average_with(values, prompts, |vs| vs.iter().copied().sum::<f64>() / vs.len() as f64)
}

/// Design average applied replicate by replicate.
pub fn design_average_replicates(
    values: &BTreeMap<String, Vec<f64>>,
    prompts: &BTreeMap<Family, Vec<String>>,
) -> Result<DesignAverage<Vec<f64>>> {
    design_average_with(values, prompts, |vs| {
        let b = vs[0].len();
        (0..b)
            .map(|r| vs.iter().map(|v| v[r]).sum::<f64>() / vs.len() as f64)
            .collect()
    })
}

/// One row of the per-cell summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: CellCoord,
    pub n: usize,
    pub diversity: DiversityReport,
    pub quality: Option<f64>,
    pub auc_d_pair: f64,
    pub auc_d_ent: f64,
    pub pipeline_tokens: u64,
    /// Absent when the run has no baseline cell for this model and prompt.
    pub r_tok: Option<f64>,
    pub proxy_tokens: bool,
}
