//! Pool-level diversity metrics over distance matrices and region labels.

mod rarefaction;
mod regions;

pub use rarefaction::{
    first_hit, rarefaction_auc, rarefy, FirstHit, FirstHitSummary, RareMetric, RarefactionCurve,
    DEFAULT_RAREFACTION_REPEATS,
};
pub use regions::{fit_regions, fit_regions_with, KMeans, KMeansFit, RegionModel, REGION_N_INIT, REGION_SEED};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{medoid, Distances};

/// The five pool-level diversity summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub d_pair: f64,
    pub d_nn: f64,
    pub d_med: f64,
    pub d_mst: f64,
    pub d_ent: f64,
}

impl DiversityReport {
    /// Requires n >= 2 and K >= 2.
    pub fn compute<D: Distances + ?Sized>(d: &D, labels: &[usize], k: usize) -> Result<Self> {
        Ok(DiversityReport {
            d_pair: d_pair(d)?,
            d_nn: d_nn(d)?,
            d_med: d_med(d),
            d_mst: d_mst(d)?,
            d_ent: d_ent(labels, k)?,
        })
    }
}

fn need_pairs<D: Distances + ?Sized>(d: &D, name: &str) -> Result<()> {
    if d.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "{name} needs at least 2 outputs, pool has {}",
            d.len()
        )));
    }
    Ok(())
}

/// Mean pairwise distance, 2/(n(n-1)) * sum over i<j.
pub fn d_pair<D: Distances + ?Sized>(d: &D) -> Result<f64> {
    need_pairs(d, "d_pair")?;
    let n = d.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += d.get(i, j);
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Mean nearest-neighbor distance.
pub fn d_nn<D: Distances + ?Sized>(d: &D) -> Result<f64> {
    need_pairs(d, "d_nn")?;
    let n = d.len();
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| d.get(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean distance to the medoid, dividing by n (the medoid's own zero
/// term included).
pub fn d_med<D: Distances + ?Sized>(d: &D) -> f64 {
    let n = d.len();
    if n == 0 {
        return 0.0;
    }
    let r = medoid(d);
    (0..n).map(|i| d.get(i, r)).sum::<f64>() / n as f64
}

/// Total weight of a minimum spanning tree (dense Prim, ties to the lowest
/// index).
pub fn mst_weight<D: Distances + ?Sized>(d: &D) -> f64 {
    let n = d.len();
    if n < 2 {
        return 0.0;
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    in_tree[0] = true;
    for (j, b) in best.iter_mut().enumerate().skip(1) {
        *b = d.get(0, j);
    }
    let mut total = 0.0;
    for _ in 1..n {
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        total += best[next];
        in_tree[next] = true;
        for j in 0..n {
            if !in_tree[j] {
                let w = d.get(next, j);
                if w < best[j] {
                    best[j] = w;
                }
            }
        }
    }
    total
}

/// Mean MST edge length, 1/(n-1) * total MST weight.
pub fn d_mst<D: Distances + ?Sized>(d: &D) -> Result<f64> {
    need_pairs(d, "d_mst")?;
    Ok(mst_weight(d) / (d.len() - 1) as f64)
}

/// Normalized region entropy over the fixed prompt-level region count.
/// Empty regions contribute 0.
pub fn d_ent(labels: &[usize], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::UndefinedMetric(format!(
            "d_ent needs at least 2 regions, got {k}"
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::UndefinedMetric(format!("region label {l} outside 0..{k}")));
        }
        counts[l] += 1;
    }
    Ok(entropy_of_counts(&counts, labels.len()))
}

pub(crate) fn entropy_of_counts(counts: &[usize], total: usize) -> f64 {
    let k = counts.len();
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    // a single occupied region is exactly zero, not -0 or rounding noise
    if counts.iter().filter(|&&c| c > 0).count() <= 1 {
        return 0.0;
    }
    h / (k as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DistanceMatrix;
    use proptest::prelude::*;

    fn constant(n: usize, v: f64) -> DistanceMatrix {
        DistanceMatrix::from_upper(n, |_, _| v)
    }

    #[test]
    fn identical_pool_is_zero() {
        let d = constant(6, 0.0);
        let r = DiversityReport::compute(&d, &[0; 6], 12).unwrap();
        assert_eq!(r, DiversityReport { d_pair: 0.0, d_nn: 0.0, d_med: 0.0, d_mst: 0.0, d_ent: 0.0 });
    }

    #[test]
    fn small_examples() {
        assert_eq!(d_pair(&constant(2, 0.8)).unwrap(), 0.8);
        assert!((d_nn(&constant(3, 0.5)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(d_med(&constant(1, 0.0)), 0.0);
        // collinear at 0, 0.2, 0.5, 0.9: the path is the MST
        let pos = [0.0, 0.2, 0.5, 0.9];
        let d = DistanceMatrix::from_upper(4, |i, j| f64::abs(pos[i] - pos[j]));
        assert!((d_mst(&d).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn duplicate_contributes_zero_nn() {
        let pos = [0.0, 0.0, 1.0];
        let d = DistanceMatrix::from_upper(3, |i, j| f64::abs(pos[i] - pos[j]));
        assert!((d_nn(&d).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn undefined_below_two() {
        let d = constant(1, 0.0);
        assert!(d_pair(&d).is_err());
        assert!(d_nn(&d).is_err());
        assert!(d_mst(&d).is_err());
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(d_ent(&[3; 150], 12).unwrap(), 0.0);
        let uniform: Vec<usize> = (0..120).map(|i| i % 12).collect();
        assert!((d_ent(&uniform, 12).unwrap() - 1.0).abs() < 1e-12);
        let three: Vec<usize> = (0..150).map(|i| i % 3).collect();
        let expected = 3f64.ln() / 12f64.ln();
        assert!((d_ent(&three, 12).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.4421).abs() < 1e-4);
        assert!(d_ent(&[0, 1], 1).is_err());
        assert!(d_ent(&[0, 12], 12).is_err());
    }

    fn arb_matrix() -> impl Strategy<Value = DistanceMatrix> {
        (2usize..10).prop_flat_map(|n| {
            proptest::collection::vec(0.0f64..2.0, n * (n - 1) / 2).prop_map(move |v| {
                let mut it = v.into_iter();
                DistanceMatrix::from_upper(n, |_, _| it.next().unwrap())
            })
        })
    }

    proptest! {
        #[test]
        fn metrics_in_range_and_permutation_invariant(d in arb_matrix(), rot in 0usize..10) {
            let n = d.n();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let p = d.view(&perm);
            for (a, b) in [
                (d_pair(&d).unwrap(), d_pair(&p).unwrap()),
                (d_nn(&d).unwrap(), d_nn(&p).unwrap()),
                (d_med(&d), d_med(&p)),
                (d_mst(&d).unwrap(), d_mst(&p).unwrap()),
            ] {
                prop_assert!((0.0..=2.0).contains(&a));
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn entropy_bounds(labels in proptest::collection::vec(0usize..12, 1..200)) {
            let e = d_ent(&labels, 12).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&e));
        }
    }
}
