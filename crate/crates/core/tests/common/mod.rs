//! Independent reference implementations shared by the integration and
//! acceptance tests. Each oracle uses a different algorithm from the
//! library code it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use poolforge::backend::{CallKey, Generation, GenerationBackend, MockBackend};
use poolforge::geometry::{distance_matrix, DistanceMatrix, Distances, Embedder, MockEmbedder};
use poolforge::prompts::PromptPayload;
use poolforge::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mock-embedded pool of `n` random texts.
pub fn mock_pool(rng: &mut ChaCha8Rng, n: usize) -> DistanceMatrix {
    let texts: Vec<String> = (0..n).map(|_| format!("text {}", rng.random::<u64>())).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let rows = MockEmbedder::new(8, 0).embed(&refs).unwrap();
    distance_matrix(&poolforge::geometry::EmbeddingSet::from_rows("mock", rows).unwrap())
}

/// Full matrix as nested vectors.
pub fn dense<D: Distances>(d: &D) -> Vec<Vec<f64>> {
    (0..d.len()).map(|i| (0..d.len()).map(|j| d.get(i, j)).collect()).collect()
}

/// Random symmetric matrix with small integer entries, so ties are common.
pub fn tied_matrix(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> DistanceMatrix {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(1..=levels) as f64 / levels as f64;
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    DistanceMatrix::from_full(n, m).unwrap()
}

pub fn oracle_d_pair(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let mut pairs = Vec::new();
    for (i, row) in d.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                pairs.push(*v);
            }
        }
    }
    pairs.iter().sum::<f64>() / (n * (n - 1)) as f64
}

pub fn oracle_d_nn(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let mut total = 0.0;
    for (i, row) in d.iter().enumerate() {
        let mut others: Vec<f64> = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        others.sort_by(f64::total_cmp);
        total += others[0];
    }
    total / n as f64
}

pub fn oracle_medoid(d: &[Vec<f64>]) -> usize {
    let sums: Vec<f64> = d.iter().map(|r| r.iter().sum()).collect();
    let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    sums.iter().position(|&s| s == min).unwrap()
}

pub fn oracle_d_med(d: &[Vec<f64>]) -> f64 {
    let r = oracle_medoid(d);
    d.iter().map(|row| row[r]).sum::<f64>() / d.len() as f64
}

/// Kruskal with a union-find.
pub fn oracle_mst_weight(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let mut edges = Vec::new();
    for (i, row) in d.iter().enumerate() {
        for (j, w) in row.iter().enumerate().skip(i + 1) {
            edges.push((*w, i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    let mut total = 0.0;
    for (w, i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            total += w;
        }
    }
    total
}

/// Minimum over every spanning tree, by enumerating all (n-1)-edge subsets.
pub fn enumerate_mst_weight(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let k = n - 1;
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let mut comp: Vec<usize> = (0..n).collect();
        let mut ok = true;
        for &e in &pick {
            let (i, j) = edges[e];
            let (ci, cj) = (comp[i], comp[j]);
            if ci == cj {
                ok = false;
                break;
            }
            for c in comp.iter_mut() {
                if *c == cj {
                    *c = ci;
                }
            }
        }
        if ok {
            let w: f64 = pick.iter().map(|&e| d[edges[e].0][edges[e].1]).sum();
            best = best.min(w);
        }
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < edges.len() - k + i {
                pick[i] += 1;
                for j in i + 1..k {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Medoid, then at each step every remaining candidate scored by its
/// minimum distance to all chosen anchors, recomputed from scratch.
pub fn oracle_anchors(d: &[Vec<f64>], m: usize) -> Vec<usize> {
    let n = d.len();
    let mut chosen = vec![oracle_medoid(d)];
    while chosen.len() < m {
        let scores: Vec<Option<f64>> = (0..n)
            .map(|c| {
                if chosen.contains(&c) {
                    None
                } else {
                    Some(chosen.iter().map(|&a| d[c][a]).fold(f64::INFINITY, f64::min))
                }
            })
            .collect();
        let top = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        chosen.push(scores.iter().position(|s| *s == Some(top)).unwrap());
    }
    chosen
}

/// Entropy normalizer from the counting definition.
pub fn oracle_entropy(labels: &[usize], k: usize) -> f64 {
    let mut counts = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_insert(0usize) += 1;
    }
    let n = labels.len() as f64;
    let h: f64 = counts.values().map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum();
    h / (k as f64).ln()
}

/// Regex restatement of the slogan normalizer.
pub fn oracle_normalize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let single = Regex::new("[\u{2018}\u{2019}\u{201A}\u{201B}\u{2032}`\u{00B4}]").unwrap();
    let double = Regex::new("[\u{201C}\u{201D}\u{201E}\u{201F}\u{2033}\u{00AB}\u{00BB}]").unwrap();
    let s = single.replace_all(&lower, "'");
    let s = double.replace_all(&s, "\"");
    let mut s = s.trim().to_string();
    let wrapped = Regex::new(r#"^(["'])(.*)(["'])$"#).unwrap();
    loop {
        let next = match wrapped.captures(&s) {
            Some(c) if c[1] == c[3] => c[2].trim().to_string(),
            _ => break,
        };
        s = next;
    }
    // a word is a run of letters/digits, optionally joined by single internal ' or -
    let word = Regex::new(r"[\p{Alphabetic}\p{N}]+(?:['-][\p{Alphabetic}\p{N}]+)*").unwrap();
    word.find_iter(&s).map(|m| m.as_str().to_string()).collect()
}

/// Counts calls and can fail calls for matching cells.
pub struct CountingBackend {
    inner: MockBackend,
    pub calls: AtomicUsize,
    pub fail_cells: Mutex<Vec<String>>,
    /// Fail every call once this many calls have been made.
    pub budget: Option<usize>,
}

impl CountingBackend {
    pub fn new(seed: u64) -> Self {
        CountingBackend { inner: MockBackend::new(seed), calls: AtomicUsize::new(0), fail_cells: Mutex::new(Vec::new()), budget: None }
    }

    pub fn with_budget(seed: u64, budget: usize) -> Self {
        CountingBackend { budget: Some(budget), ..Self::new(seed) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl GenerationBackend for CountingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, key: &CallKey<'_>, payload: &PromptPayload) -> Result<Generation> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.budget.is_some_and(|b| k >= b) {
            return Err(Error::Backend("connection lost".into()));
        }
        let cell = key.cell.key();
        if self.fail_cells.lock().unwrap().contains(&cell) {
            return Err(Error::Backend(format!("injected failure for {cell}")));
        }
        self.inner.generate(key, payload)
    }
}

/// Every regular file under `dir`, relative path to bytes.
pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Twelve soda slogans with hand-counted leave-one-out B values.
pub fn slogan_fixture() -> (Vec<(String, &'static str)>, Vec<f64>) {
    let slogans = [
        "Taste the fizz today",
        "Taste the fizz tonight",
        "Taste the fizz forever",
        "Pop open the joy",
        "Pop open the fun",
        "Cold bubbles, warm smiles",
        "Just drink it",
        "Just drink it now",
        "Fizz that sings",
        "Open happiness again",
        "Refresh your world",
        "Taste the fizz",
    ];
    // "taste the fizz" appears 4 times, "pop open the" and "just drink it" twice
    let fizz = 0.45 * (6.0 / 3.0) + 0.55 * (3.0 / 2.0);
    let pop = 0.45 * (2.0 / 3.0) + 0.55 * (1.0 / 2.0);
    let drink = 0.45 * 1.0 + 0.55 * 1.0;
    let bare = 0.45 * (6.0 / 2.0) + 0.55 * (3.0 / 1.0);
    let want = vec![fizz, fizz, fizz, pop, pop, 0.0, drink, pop, 0.0, 0.0, 0.0, bare];
    let keyed = slogans.iter().enumerate().map(|(i, s)| (format!("s{:02}", i + 1), *s)).collect();
    (keyed, want)
}
