//! Quality proxies: the slogan phrase-boilerplate score, within-task
//! standardization, and score files from external scorers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::digest_parts;
use crate::stats;

/// Scorer id of the lexical slogan score. Files under this id hold raw B
/// values; ingestion turns them into Q = -z(B).
pub const BOILERPLATE_SCORER: &str = "slogan-boilerplate";
pub const BIGRAM_WEIGHT: f64 = 0.45;
pub const TRIGRAM_WEIGHT: f64 = 0.55;

fn canonical_quote(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' | '`' | '\u{00B4}' => '\'',
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' | '\u{00AB}' | '\u{00BB}' => '"',
        c => c,
    }
}

/// Lowercases, folds typographic quotes to ASCII, strips surrounding
/// quotes, drops punctuation other than apostrophes and hyphens flanked by
/// letters or digits, and splits on whitespace. Dropped punctuation acts
/// as a word break.
pub fn normalize_slogan(text: &str) -> Vec<String> {
    let folded: String = text.to_lowercase().chars().map(canonical_quote).collect();
    let mut s = folded.trim();
    loop {
        let mut cs = s.chars();
        match (cs.next(), cs.next_back()) {
            (Some(a), Some(b)) if a == b && (a == '"' || a == '\'') => {
                s = s[1..s.len() - 1].trim();
            }
            _ => break,
        }
    }
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        let keep = if c.is_alphanumeric() {
            true
        } else if c == '\'' || c == '-' {
            i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric()
        } else {
            false
        };
        out.push(if keep { c } else { ' ' });
    }
    out.split_whitespace().map(str::to_string).collect()
}

fn ngrams(tokens: &[String], order: usize) -> Vec<String> {
    if tokens.len() < order {
        return Vec::new();
    }
    tokens.windows(order).map(|w| w.join(" ")).collect()
}

/// How an n-gram's leave-one-out commonness is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Commonness {
    /// Occurrences elsewhere in the task corpus.
    #[default]
    Count,
    /// Occurrences elsewhere divided by all same-order n-grams elsewhere.
    Share,
}

/// Bigram and trigram counts over one slogan task's corpus.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    task_id: String,
    entries: BTreeMap<String, [Vec<String>; 2]>,
    counts: [HashMap<String, usize>; 2],
    totals: [usize; 2],
}

/// Per-slogan breakdown of B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boilerplate {
    pub f2: f64,
    pub f3: f64,
    pub score: f64,
}

impl NgramIndex {
    /// Index over (output key, slogan text) pairs. Keys must be unique.
    pub fn build<'a>(
        task_id: &str,
        slogans: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut idx = NgramIndex {
            task_id: task_id.to_string(),
            entries: BTreeMap::new(),
            counts: [HashMap::new(), HashMap::new()],
            totals: [0, 0],
        };
        for (key, text) in slogans {
            let tokens = normalize_slogan(text);
            let grams = [ngrams(&tokens, 2), ngrams(&tokens, 3)];
            for (o, list) in grams.iter().enumerate() {
                for g in list {
                    *idx.counts[o].entry(g.clone()).or_default() += 1;
                }
                idx.totals[o] += list.len();
            }
            if idx.entries.insert(key.to_string(), grams).is_some() {
                return Err(Error::Scores(format!("duplicate slogan key {key} in {task_id}")));
            }
        }
        Ok(idx)
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Corpus-wide occurrences of an n-gram (space-joined tokens).
    pub fn count(&self, gram: &str) -> usize {
        let order = gram.split(' ').count();
        match order {
            2 | 3 => self.counts[order - 2].get(gram).copied().unwrap_or(0),
            _ => 0,
        }
    }

    fn mean_loo(&self, own: &[String], o: usize, mode: Commonness) -> f64 {
        if own.is_empty() {
            return 0.0;
        }
        let mut own_counts: HashMap<&str, usize> = HashMap::new();
        for g in own {
            *own_counts.entry(g).or_default() += 1;
        }
        let rest_total = self.totals[o] - own.len();
        let sum: f64 = own
            .iter()
            .map(|g| {
                let rest = self.counts[o][g] - own_counts[g.as_str()];
                match mode {
                    Commonness::Count => rest as f64,
                    Commonness::Share if rest_total == 0 => 0.0,
                    Commonness::Share => rest as f64 / rest_total as f64,
                }
            })
            .sum();
        sum / own.len() as f64
    }

    pub fn boilerplate(&self, key: &str, mode: Commonness) -> Result<Boilerplate> {
        let grams = self.entries.get(key).ok_or_else(|| {
            Error::Scores(format!("slogan {key} is not in the {} corpus", self.task_id))
        })?;
        let f2 = self.mean_loo(&grams[0], 0, mode);
        let f3 = self.mean_loo(&grams[1], 1, mode);
        Ok(Boilerplate {
            f2,
            f3,
            score: BIGRAM_WEIGHT * f2 + TRIGRAM_WEIGHT * f3,
        })
    }
}

/// B for one indexed slogan. Means run over the slogan's n-gram
/// occurrences; an empty n-gram list has mean 0.
pub fn boilerplate_score(index: &NgramIndex, key: &str, mode: Commonness) -> Result<f64> {
    index.boilerplate(key, mode).map(|b| b.score)
}

/// B for every slogan in the index, keyed by output key.
pub fn boilerplate_table(index: &NgramIndex, mode: Commonness) -> ScoreTable {
    let scores = index
        .keys()
        .map(|k| (k.to_string(), boilerplate_score(index, k, mode).expect("indexed key")))
        .collect();
    ScoreTable {
        scorer_id: BOILERPLATE_SCORER.to_string(),
        task_id: index.task_id.clone(),
        scores,
    }
}

/// Within-task z-scores with population sigma. Zero spread gives all zeros.
pub fn standardize(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Scores("cannot standardize an empty task".into()));
    }
    if let Some(bad) = raw.iter().find(|x| !x.is_finite()) {
        return Err(Error::Scores(format!("non-finite score {bad}")));
    }
    let mu = stats::mean(raw);
    let sigma = stats::population_std(raw);
    if sigma == 0.0 || !sigma.is_normal() {
        return Ok(vec![0.0; raw.len()]);
    }
    Ok(raw.iter().map(|x| (x - mu) / sigma).collect())
}

/// Mean standardized score over a pool's outputs.
pub fn cell_quality<'a>(
    keys: impl IntoIterator<Item = &'a str>,
    qz: &BTreeMap<String, f64>,
) -> Result<f64> {
    let mut missing = Vec::new();
    let mut values = Vec::new();
    for k in keys {
        match qz.get(k) {
            Some(v) => values.push(*v),
            None => missing.push(k.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Scores(format!("unscored outputs: {}", missing.join(", "))));
    }
    if values.is_empty() {
        return Err(Error::Scores("cell quality of an empty pool".into()));
    }
    Ok(stats::mean(&values))
}

/// Raw scores from one scorer for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scorer_id: String,
    pub task_id: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    output_key: String,
    score: String,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Standardized scores keyed like the table.
    pub fn standardized(&self) -> Result<BTreeMap<String, f64>> {
        let raw: Vec<f64> = self.scores.values().copied().collect();
        let z = standardize(&raw)
            .map_err(|e| Error::Scores(format!("{} / {}: {e}", self.task_id, self.scorer_id)))?;
        Ok(self.scores.keys().cloned().zip(z).collect())
    }

    /// Writes `output_key,score` CSV rows in key order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (k, v) in &self.scores {
            w.serialize(ScoreRow {
                output_key: k.clone(),
                score: format!("{v}"),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads and validates an `output_key,score` CSV. With `known` set, every
/// key must be one of those outputs. Boilerplate files are turned into
/// Q = -z(B) so that higher is better for every scorer.
pub fn ingest_scores(
    path: &Path,
    scorer_id: &str,
    task_id: &str,
    known: Option<&BTreeSet<String>>,
) -> Result<ScoreTable> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["output_key", "score"] {
        return Err(Error::Scores(format!(
            "{}: expected columns output_key,score",
            path.display()
        )));
    }
    let mut scores = BTreeMap::new();
    for row in r.deserialize::<ScoreRow>() {
        let row = row?;
        let v: f64 = row.score.trim().parse().map_err(|_| {
            Error::Scores(format!("non-numeric score {:?} for {}", row.score, row.output_key))
        })?;
        if !v.is_finite() {
            return Err(Error::Scores(format!("non-finite score for {}", row.output_key)));
        }
        if let Some(known) = known {
            if !known.contains(&row.output_key) {
                return Err(Error::Scores(format!("unknown output key {}", row.output_key)));
            }
        }
        if scores.insert(row.output_key.clone(), v).is_some() {
            return Err(Error::Scores(format!("duplicate output key {}", row.output_key)));
        }
    }
    let mut table = ScoreTable {
        scorer_id: scorer_id.to_string(),
        task_id: task_id.to_string(),
        scores,
    };
    if scorer_id == BOILERPLATE_SCORER {
        table.scores = table
            .standardized()?
            .into_iter()
            .map(|(k, z)| (k, -z))
            .collect();
    }
    Ok(table)
}

/// Deterministic stand-in scorer for mock runs: an integer 1 to 5 derived
/// from the text.
pub fn mock_score(text: &str) -> f64 {
    let d = digest_parts([&b"mock-quality"[..], text.as_bytes()]);
    (1 + d[0] % 5) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        normalize_slogan(s)
    }

    #[test]
    fn normalizer_rules() {
        assert_eq!(toks("\u{201C}Don\u{2019}t Stop!\u{201D}"), ["don't", "stop"]);
        assert_eq!(toks("Life-saving gift."), ["life-saving", "gift"]);
        assert_eq!(toks("  'Quoted'  "), ["quoted"]);
        assert_eq!(toks("rock 'n' roll -- now"), ["rock", "n", "roll", "now"]);
        assert!(toks("!!!").is_empty());
        assert!(toks("").is_empty());
    }

    #[test]
    fn unique_phrases_score_zero() {
        let idx = NgramIndex::build("t", [("a", "red fast car"), ("b", "blue slow boat")]).unwrap();
        assert_eq!(boilerplate_score(&idx, "a", Commonness::Count).unwrap(), 0.0);
        assert!(boilerplate_score(&idx, "zzz", Commonness::Count).is_err());
    }

    #[test]
    fn short_slogans_use_empty_mean() {
        let idx = NgramIndex::build("t", [("a", "go"), ("b", "go now"), ("c", "go now")]).unwrap();
        assert_eq!(boilerplate_score(&idx, "a", Commonness::Count).unwrap(), 0.0);
        // one bigram seen once elsewhere, no trigrams
        assert_eq!(boilerplate_score(&idx, "b", Commonness::Count).unwrap(), 0.45);
    }

    #[test]
    fn repeated_trigram_hand_count() {
        let idx = NgramIndex::build(
            "t",
            [("a", "just drink it now"), ("b", "just drink it"), ("c", "cold fizz")],
        )
        .unwrap();
        // a: bigrams just-drink(1) drink-it(1) it-now(0) -> 2/3; trigrams just-drink-it(1) drink-it-now(0) -> 1/2
        let b = idx.boilerplate("a", Commonness::Count).unwrap();
        assert!((b.f2 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.f3, 0.5);
        assert!((b.score - (0.45 * 2.0 / 3.0 + 0.55 * 0.5)).abs() < 1e-15);
        // share: b's rest has 3+1+... bigrams: a(3)+c(1)=4, trigrams a(2)+c(0)=2
        let s = idx.boilerplate("b", Commonness::Share).unwrap();
        assert_eq!(s.f2, (1.0 / 4.0 + 1.0 / 4.0) / 2.0);
        assert_eq!(s.f3, 1.0 / 2.0);
    }

    #[test]
    fn standardize_cases() {
        assert_eq!(standardize(&[3.0; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(standardize(&[0.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(standardize(&[]).is_err());
    }

    #[test]
    fn cell_quality_cases() {
        let qz: BTreeMap<String, f64> = [("a", 1.0), ("b", -1.0), ("c", 0.5)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert_eq!(cell_quality(["a", "b"], &qz).unwrap(), 0.0);
        assert_eq!(cell_quality(["c"], &qz).unwrap(), 0.5);
        let err = cell_quality(["a", "x"], &qz).unwrap_err().to_string();
        assert!(err.contains('x'));
    }

    #[test]
    fn ingest_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "output_key,score\na,1\nb,5\nc,3\n").unwrap();
        let t = ingest_scores(&p, "judge", "slogan_soda", None).unwrap();
        assert_eq!(t.len(), 3);
        std::fs::write(&p, "output_key,score\na,1\na,2\n").unwrap();
        let e = ingest_scores(&p, "judge", "t", None).unwrap_err().to_string();
        assert!(e.contains("duplicate") && e.contains('a'));
        std::fs::write(&p, "output_key,score\na,high\n").unwrap();
        assert!(ingest_scores(&p, "judge", "t", None).is_err());
        std::fs::write(&p, "output_key,score\nq,1\n").unwrap();
        let known: BTreeSet<String> = ["a".to_string()].into();
        assert!(ingest_scores(&p, "judge", "t", Some(&known)).is_err());
    }

    #[test]
    fn boilerplate_ingest_flips_sign() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        std::fs::write(&p, "output_key,score\na,0\nb,2\n").unwrap();
        let t = ingest_scores(&p, BOILERPLATE_SCORER, "t", None).unwrap();
        assert_eq!(t.scores["a"], 1.0);
        assert_eq!(t.scores["b"], -1.0);
    }
}
