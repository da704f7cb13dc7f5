use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{d_pair, entropy_of_counts};
use crate::error::{Error, Result};
use crate::geometry::DistanceMatrix;
use crate::hashing::stream_rng;
use crate::stats;

pub const DEFAULT_RAREFACTION_REPEATS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RareMetric {
    DPair,
    DEnt,
}

impl RareMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            RareMetric::DPair => "d_pair",
            RareMetric::DEnt => "d_ent",
        }
    }

    /// Smallest subpool size over which the metric is summarized.
    pub fn q_min(self) -> usize {
        match self {
            RareMetric::DPair => 2,
            RareMetric::DEnt => 1,
        }
    }
}

/// Per-size replicate values of a rarefied metric, q = 1..=n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RarefactionCurve {
    pub metric: RareMetric,
    pub n: usize,
    pub repeats: usize,
    /// `values[q - 1][r]`
    pub values: Vec<Vec<f64>>,
}

impl RarefactionCurve {
    pub fn mean_at(&self, q: usize) -> f64 {
        stats::mean(&self.values[q - 1])
    }

    pub fn means(&self) -> Vec<f64> {
        (1..=self.n).map(|q| self.mean_at(q)).collect()
    }

    /// One replicate's value at every size from q_min up.
    pub fn replicate(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.metric.q_min()..=self.n).map(move |q| (q, self.values[q - 1][r]))
    }

    pub fn first_hits(&self, target: f64) -> Vec<FirstHit> {
        (0..self.repeats)
            .map(|r| first_hit(self.replicate(r), target))
            .collect()
    }
}

/// Draws `repeats` subpools without replacement at every size q = 1..=n
/// and evaluates the metric on each. Indices are sorted before evaluation,
/// so the q = n subpool is the pool itself, bit for bit.
pub fn rarefy(
    distances: &DistanceMatrix,
    labels: &[usize],
    k: usize,
    metric: RareMetric,
    repeats: usize,
    seed: u64,
) -> Result<RarefactionCurve> {
    let n = distances.n();
    if repeats == 0 {
        return Err(Error::UndefinedMetric("rarefaction needs at least one repeat".into()));
    }
    if metric == RareMetric::DEnt {
        if labels.len() != n {
            return Err(Error::UndefinedMetric(format!(
                "{} labels for a pool of {n}",
                labels.len()
            )));
        }
        if k < 2 || labels.iter().any(|&l| l >= k) {
            return Err(Error::UndefinedMetric(format!("labels must lie in 0..{k}, K >= 2")));
        }
    }
    let mut values = Vec::with_capacity(n);
    let mut counts = vec![0usize; k];
    for q in 1..=n {
        let mut rng = stream_rng(seed, "rarefy", q as u64);
        let mut row = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let mut idx = sample(&mut rng, n, q).into_vec();
            idx.sort_unstable();
            let v = match metric {
                RareMetric::DPair if q < 2 => 0.0,
                RareMetric::DPair => d_pair(&distances.view(&idx))?,
                RareMetric::DEnt => {
                    counts.iter_mut().for_each(|c| *c = 0);
                    for &i in &idx {
                        counts[labels[i]] += 1;
                    }
                    entropy_of_counts(&counts, q)
                }
            };
            row.push(v);
        }
        values.push(row);
    }
    Ok(RarefactionCurve {
        metric,
        n,
        repeats,
        values,
    })
}

/// Mean of the per-size means over q_min..=n.
pub fn rarefaction_auc(curve: &RarefactionCurve) -> Result<f64> {
    let q_min = curve.metric.q_min();
    if curve.n < q_min {
        return Err(Error::UndefinedMetric(format!(
            "{} AUC needs pools of at least {q_min}",
            curve.metric.as_str()
        )));
    }
    let means: Vec<f64> = (q_min..=curve.n).map(|q| curve.mean_at(q)).collect();
    Ok(stats::mean(&means))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstHit {
    Reached(usize),
    NotReached,
}

/// Smallest q whose value is at least `target`.
pub fn first_hit(points: impl IntoIterator<Item = (usize, f64)>, target: f64) -> FirstHit {
    points
        .into_iter()
        .find(|&(_, v)| v >= target)
        .map_or(FirstHit::NotReached, |(q, _)| FirstHit::Reached(q))
}

/// Replicate summary: mean and 95% percentile interval over replicates
/// that reached the target, plus the count that did not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstHitSummary {
    pub reached: usize,
    pub not_reached: usize,
    pub mean_q: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl FirstHitSummary {
    pub fn from_hits(hits: &[FirstHit]) -> Self {
        let qs: Vec<f64> = hits
            .iter()
            .filter_map(|h| match h {
                FirstHit::Reached(q) => Some(*q as f64),
                FirstHit::NotReached => None,
            })
            .collect();
        let (lo, _, hi) = stats::central_interval(&qs);
        let some = |x: f64| (!qs.is_empty()).then_some(x);
        FirstHitSummary {
            reached: qs.len(),
            not_reached: hits.len() - qs.len(),
            mean_q: some(stats::mean(&qs)),
            ci_low: some(lo),
            ci_high: some(hi),
        }
    }
}
