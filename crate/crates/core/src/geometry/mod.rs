//! Embedding-space primitives: unit-normalized embedding sets, cosine
//! distance matrices, the medoid, and medoid-start farthest-first anchor
//! selection.

mod embed;

pub use embed::{
    embed_pool, embed_texts, Embedder, EmbeddingCache, HttpEmbedder, MockEmbedder,
    DEFAULT_MOCK_DIM, REFERENCE_EMBEDDER,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-6;

/// n rows of dimension d, each with unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    source_id: String,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    /// Normalizes every row to unit length. Rows must share a dimension and
    /// have nonzero norm.
    pub fn from_rows(source_id: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Embedding(format!(
                    "row {i} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::Embedding(format!("row {i} has zero or non-finite norm")));
            }
            data.extend(row.iter().map(|x| x / norm));
        }
        Ok(EmbeddingSet {
            source_id: source_id.into(),
            dim,
            data,
        })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingSet {
            source_id: self.source_id.clone(),
            dim: self.dim,
            data,
        }
    }

    pub fn check_unit_norm(&self) -> bool {
        self.rows().all(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            (n - 1.0).abs() <= NORM_TOLERANCE
        })
    }
}

/// Read access to pairwise distances. Implemented by [`DistanceMatrix`]
/// and by index views over it, so subpools and bootstrap multisets share
/// the same metric code without copying.
pub trait Distances {
    fn len(&self) -> usize;
    fn get(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Symmetric n x n cosine-distance matrix, d_ij = 1 - cos(f_i, f_j).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from an explicit full matrix, checking symmetry, the zero
    /// diagonal and the [0, 2] range.
    pub fn from_full(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Embedding(format!(
                "expected {} entries, found {}",
                n * n,
                data.len()
            )));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::Embedding(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = data[i * n + j];
                if v != data[j * n + i] {
                    return Err(Error::Embedding(format!("asymmetric at ({i}, {j})")));
                }
                if !(0.0..=2.0).contains(&v) {
                    return Err(Error::Embedding(format!("entry ({i}, {j}) = {v} outside [0, 2]")));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    /// Builds a symmetric matrix from the upper triangle given by `f(i, j)`
    /// for i < j.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// View over a multiset of indices; repeated indices are at distance 0.
    pub fn view<'a>(&'a self, indices: &'a [usize]) -> IndexView<'a> {
        IndexView { base: self, indices }
    }
}

impl Distances for DistanceMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// A subpool or resampled multiset of a [`DistanceMatrix`].
#[derive(Debug, Clone, Copy)]
pub struct IndexView<'a> {
    base: &'a DistanceMatrix,
    indices: &'a [usize],
}

impl Distances for IndexView<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.base.get(self.indices[i], self.indices[j])
    }
}

/// Cosine distances over an embedding set. Each pair is computed once and
/// mirrored, so the result is exactly symmetric with a zero diagonal.
pub fn distance_matrix(e: &EmbeddingSet) -> DistanceMatrix {
    DistanceMatrix::from_upper(e.len(), |i, j| {
        let cos: f64 = e.row(i).iter().zip(e.row(j)).map(|(a, b)| a * b).sum();
        (1.0 - cos).clamp(0.0, 2.0)
    })
}

/// Index minimizing the row sum; ties go to the lowest index.
pub fn medoid<D: Distances + ?Sized>(d: &D) -> usize {
    let n = d.len();
    let mut best = 0;
    let mut best_sum = f64::INFINITY;
    for i in 0..n {
        let s: f64 = (0..n).map(|j| d.get(i, j)).sum();
        if s < best_sum {
            best_sum = s;
            best = i;
        }
    }
    best
}

/// How later anchors are scored against those already chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRule {
    /// Farthest-first: maximize the minimum distance to chosen anchors.
    #[default]
    MaxMin,
    /// Maximize the summed distance to chosen anchors.
    MaxSum,
}

/// Medoid first, then greedy farthest-first picks. Ties go to the lowest
/// index. Returns `m` distinct indices in selection order.
pub fn select_anchors<D: Distances + ?Sized>(d: &D, m: usize, rule: AnchorRule) -> Result<Vec<usize>> {
    let n = d.len();
    if m == 0 || m > n {
        return Err(Error::Embedding(format!(
            "cannot select {m} anchors from a pool of {n}"
        )));
    }
    let mut chosen = vec![medoid(d)];
    let mut score: Vec<f64> = (0..n).map(|i| d.get(i, chosen[0])).collect();
    while chosen.len() < m {
        let mut best: Option<usize> = None;
        for c in 0..n {
            if chosen.contains(&c) {
                continue;
            }
            if best.is_none_or(|b| score[c] > score[b]) {
                best = Some(c);
            }
        }
        let next = best.expect("m <= n leaves a candidate");
        chosen.push(next);
        for (i, s) in score.iter_mut().enumerate() {
            let dist = d.get(i, next);
            *s = match rule {
                AnchorRule::MaxMin => s.min(dist),
                AnchorRule::MaxSum => *s + dist,
            };
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(rows: Vec<Vec<f64>>) -> EmbeddingSet {
        EmbeddingSet::from_rows("test", rows).unwrap()
    }

    #[test]
    fn distance_examples() {
        let d = distance_matrix(&set(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]));
        assert_eq!(d.get(0, 1), 0.0);
        assert_eq!(d.get(0, 2), 1.0);
        assert_eq!(d.get(0, 3), 2.0);
        for i in 0..4 {
            assert_eq!(d.get(i, i), 0.0);
        }
    }

    #[test]
    fn normalizes_and_rejects() {
        let e = set(vec![vec![3.0, 4.0]]);
        assert!((e.row(0)[0] - 0.6).abs() < 1e-15);
        assert!(e.check_unit_norm());
        assert!(EmbeddingSet::from_rows("x", vec![vec![0.0, 0.0]]).is_err());
        assert!(EmbeddingSet::from_rows("x", vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn medoid_examples() {
        let one = DistanceMatrix::from_upper(1, |_, _| unreachable!());
        assert_eq!(medoid(&one), 0);
        let line = DistanceMatrix::from_upper(3, |i, j| (j - i) as f64 * 0.5);
        assert_eq!(medoid(&line), 1);
    }

    #[test]
    fn anchor_examples() {
        let flat = DistanceMatrix::from_upper(5, |_, _| 0.0);
        assert_eq!(select_anchors(&flat, 3, AnchorRule::MaxMin).unwrap(), vec![0, 1, 2]);
        let line = DistanceMatrix::from_upper(5, |i, j| (j - i) as f64 * 0.25);
        assert_eq!(select_anchors(&line, 1, AnchorRule::MaxMin).unwrap(), vec![2]);
        assert_eq!(select_anchors(&line, 3, AnchorRule::MaxMin).unwrap(), vec![2, 0, 4]);
        assert!(select_anchors(&line, 6, AnchorRule::MaxMin).is_err());
        assert!(select_anchors(&line, 0, AnchorRule::MaxMin).is_err());
    }

    #[test]
    fn max_sum_differs_from_max_min() {
        let pairs = [((0, 1), 1.2), ((0, 2), 1.0), ((0, 3), 0.5), ((1, 2), 0.1), ((1, 3), 0.5), ((2, 3), 0.9)];
        let d = DistanceMatrix::from_upper(4, |i, j| pairs.iter().find(|p| p.0 == (i, j)).unwrap().1);
        assert_eq!(select_anchors(&d, 3, AnchorRule::MaxMin).unwrap(), vec![1, 0, 3]);
        assert_eq!(select_anchors(&d, 3, AnchorRule::MaxSum).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn index_view_duplicates_are_zero() {
        let d = DistanceMatrix::from_upper(3, |_, _| 1.0);
        let idx = [0, 0, 2];
        let v = d.view(&idx);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(1, 2), 1.0);
    }

    fn arb_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..9, 2usize..6).prop_flat_map(|(n, d)| {
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d), n)
                .prop_filter("nonzero rows", |rows| {
                    rows.iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6)
                })
        })
    }

    proptest! {
        #[test]
        fn matrix_is_exactly_symmetric(rows in arb_rows()) {
            let d = distance_matrix(&set(rows));
            for i in 0..d.n() {
                prop_assert_eq!(d.get(i, i), 0.0);
                for j in 0..d.n() {
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                    prop_assert!((0.0..=2.0).contains(&d.get(i, j)));
                }
            }
        }

        #[test]
        fn anchors_follow_row_reordering(rows in arb_rows(), seed in any::<u64>()) {
            let n = rows.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let e = set(rows);
            let d = distance_matrix(&e);
            let dp = distance_matrix(&e.select(&perm));
            // ties would make the index mapping ambiguous
            let mut vals: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
            vals.sort_by(f64::total_cmp);
            let sums: Vec<f64> = (0..n).map(|i| d.row(i).iter().sum()).collect();
            let mut sorted_sums = sums.clone();
            sorted_sums.sort_by(f64::total_cmp);
            prop_assume!(vals.windows(2).all(|w| w[1] - w[0] > 1e-9));
            prop_assume!(sorted_sums.windows(2).all(|w| w[1] - w[0] > 1e-9));
            let m = n.min(3);
            let a = select_anchors(&d, m, AnchorRule::MaxMin).unwrap();
            let ap: Vec<usize> = select_anchors(&dp, m, AnchorRule::MaxMin).unwrap().into_iter().map(|i| perm[i]).collect();
            prop_assert_eq!(a, ap);
        }
    }
}
