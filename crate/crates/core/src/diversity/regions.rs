use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingSet;
use crate::model::Family;

pub const REGION_SEED: u64 = 20260523;
pub const REGION_N_INIT: usize = 20;

/// Lloyd's K-means with random-point initialization; the restart with the
/// lowest inertia wins (earliest restart on ties).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub k: usize,
    pub n_init: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl KMeans {
    pub fn new(k: usize) -> Self {
        KMeans {
            k,
            n_init: REGION_N_INIT,
            seed: REGION_SEED,
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

impl KMeans {
    pub fn fit(&self, data: &EmbeddingSet) -> Result<KMeansFit> {
        let n = data.len();
        if self.k == 0 || n < self.k {
            return Err(Error::Clustering(format!(
                "cannot fit {} clusters to {n} points",
                self.k
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut best: Option<KMeansFit> = None;
        for _ in 0..self.n_init.max(1) {
            let mut init = sample(&mut rng, n, self.k).into_vec();
            init.sort_unstable();
            let fit = self.lloyd(data, init.iter().map(|&i| data.row(i).to_vec()).collect());
            if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
                best = Some(fit);
            }
        }
        Ok(best.expect("at least one restart"))
    }

    fn lloyd(&self, data: &EmbeddingSet, mut centroids: Vec<Vec<f64>>) -> KMeansFit {
        let n = data.len();
        let dim = data.dim();
        let mut labels = vec![0usize; n];
        for _ in 0..self.max_iter {
            let mut dists = vec![0.0; n];
            for (i, row) in data.rows().enumerate() {
                let (c, d) = nearest(row, &centroids);
                labels[i] = c;
                dists[i] = d;
            }
            let mut sums = vec![vec![0.0; dim]; self.k];
            let mut counts = vec![0usize; self.k];
            for (i, row) in data.rows().enumerate() {
                counts[labels[i]] += 1;
                for (s, x) in sums[labels[i]].iter_mut().zip(row) {
                    *s += x;
                }
            }
            let mut taken = vec![false; n];
            let mut shift: f64 = 0.0;
            for c in 0..self.k {
                let new = if counts[c] > 0 {
                    sums[c].iter().map(|s| s / counts[c] as f64).collect()
                } else {
                    // empty cluster: move it to the point worst served by
                    // its centroid
                    let far = (0..n)
                        .filter(|&i| !taken[i])
                        .fold(None::<usize>, |b, i| match b {
                            Some(b) if dists[b] >= dists[i] => Some(b),
                            _ => Some(i),
                        })
                        .expect("n >= k");
                    taken[far] = true;
                    data.row(far).to_vec()
                };
                shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
                centroids[c] = new;
            }
            if shift <= self.tol {
                break;
            }
        }
        let mut inertia = 0.0;
        for (i, row) in data.rows().enumerate() {
            let (c, d) = nearest(row, &centroids);
            labels[i] = c;
            inertia += d;
        }
        KMeansFit {
            centroids,
            labels,
            inertia,
        }
    }
}

/// Prompt-level semantic regions shared by every pool of that prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub prompt_id: String,
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub inertia: f64,
    pub centroids: Vec<Vec<f64>>,
    /// Output key -> region index.
    pub labels: BTreeMap<String, usize>,
}

impl RegionModel {
    pub fn label(&self, key: &str) -> Option<usize> {
        self.labels.get(key).copied()
    }

    /// Labels for a list of output keys; every key must be in the model.
    pub fn labels_for<'a>(&self, keys: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        keys.into_iter()
            .map(|k| {
                self.label(k).ok_or_else(|| {
                    Error::Clustering(format!("output {k} has no region label for {}", self.prompt_id))
                })
            })
            .collect()
    }

    /// Nearest region for a new vector.
    pub fn assign(&self, row: &[f64]) -> usize {
        nearest(row, &self.centroids).0
    }
}

/// Fits the regions for one prompt over its pooled corpus, keyed by output
/// key. The cluster count comes from the family.
pub fn fit_regions(
    prompt_id: &str,
    family: Family,
    keys: &[String],
    corpus: &EmbeddingSet,
) -> Result<RegionModel> {
    fit_regions_with(prompt_id, KMeans::new(family.region_count()), keys, corpus)
}

pub fn fit_regions_with(
    prompt_id: &str,
    kmeans: KMeans,
    keys: &[String],
    corpus: &EmbeddingSet,
) -> Result<RegionModel> {
    if keys.len() != corpus.len() {
        return Err(Error::Clustering(format!(
            "{} keys for {} embeddings",
            keys.len(),
            corpus.len()
        )));
    }
    if corpus.len() < kmeans.k {
        return Err(Error::Clustering(format!(
            "corpus for {prompt_id} has {} outputs, fewer than K={}",
            corpus.len(),
            kmeans.k
        )));
    }
    let fit = kmeans.fit(corpus)?;
    Ok(RegionModel {
        prompt_id: prompt_id.to_string(),
        k: kmeans.k,
        seed: kmeans.seed,
        n_init: kmeans.n_init,
        inertia: fit.inertia,
        centroids: fit.centroids,
        labels: keys.iter().cloned().zip(fit.labels).collect(),
    })
}
