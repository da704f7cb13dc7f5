//! Experiment data model: cell coordinates, output records, pools and
//! token usage.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task family of a prompt condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Stories,
    Aut,
    Slogans,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Stories, Family::Aut, Family::Slogans];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Stories => "stories",
            Family::Aut => "aut",
            Family::Slogans => "slogans",
        }
    }

    /// Maximum output-token ceiling for ordinary generation calls.
    pub fn max_output_tokens(self) -> u32 {
        match self {
            Family::Stories => 2048,
            Family::Aut => 768,
            Family::Slogans => 512,
        }
    }

    /// Number of prompt-level semantic regions used for region entropy.
    pub fn region_count(self) -> usize {
        match self {
            Family::Stories => 12,
            Family::Aut => 15,
            Family::Slogans => 12,
        }
    }
}

/// Generation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "indep")]
    Indep,
    #[serde(rename = "strat")]
    Strat,
    #[serde(rename = "repr")]
    Repr,
    #[serde(rename = "self")]
    SelfAnchor,
    #[serde(rename = "peer1")]
    Peer1,
    #[serde(rename = "peer2")]
    Peer2,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Indep,
        Method::Strat,
        Method::Repr,
        Method::SelfAnchor,
        Method::Peer1,
        Method::Peer2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Indep => "indep",
            Method::Strat => "strat",
            Method::Repr => "repr",
            Method::SelfAnchor => "self",
            Method::Peer1 => "peer1",
            Method::Peer2 => "peer2",
        }
    }

    /// Seed-then-regenerate methods.
    pub fn is_two_stage(self) -> bool {
        matches!(
            self,
            Method::Repr | Method::SelfAnchor | Method::Peer1 | Method::Peer2
        )
    }

    /// Number of prior outputs shown to each stage-2 call (own seed included
    /// for the self/peer methods).
    pub fn anchor_count(self) -> Option<usize> {
        match self {
            Method::Repr => Some(3),
            Method::SelfAnchor => Some(1),
            Method::Peer1 => Some(2),
            Method::Peer2 => Some(3),
            Method::Indep | Method::Strat => None,
        }
    }
}

/// Instruction strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Neutral,
    Diverge,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Neutral, Strategy::Diverge];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Neutral => "neutral",
            Strategy::Diverge => "diverge",
        }
    }
}

/// Which pool of a cell a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Seed,
    Evaluated,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Seed => "seed",
            Stage::Evaluated => "evaluated",
        }
    }
}

macro_rules! impl_str_enum {
    ($ty:ty, $what:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                <$ty>::ALL_VALUES
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| Error::Config(format!("unknown {} `{}`", $what, s)))
            }
        }
    };
}

impl Family {
    const ALL_VALUES: &'static [Family] = &Family::ALL;
}
impl Method {
    const ALL_VALUES: &'static [Method] = &Method::ALL;
}
impl Strategy {
    const ALL_VALUES: &'static [Strategy] = &Strategy::ALL;
}
impl Stage {
    const ALL_VALUES: &'static [Stage] = &[Stage::Seed, Stage::Evaluated];
}

impl_str_enum!(Family, "family");
impl_str_enum!(Method, "method");
impl_str_enum!(Strategy, "strategy");
impl_str_enum!(Stage, "stage");

/// One experiment cell: (model, prompt condition, method, strategy).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellCoord {
    pub model_id: String,
    pub prompt_id: String,
    pub family: Family,
    pub method: Method,
    pub strategy: Strategy,
}

impl CellCoord {
    pub fn new(
        model_id: impl Into<String>,
        prompt_id: impl Into<String>,
        family: Family,
        method: Method,
        strategy: Strategy,
    ) -> Self {
        CellCoord {
            model_id: model_id.into(),
            prompt_id: prompt_id.into(),
            family,
            method,
            strategy,
        }
    }

    /// `model/prompt/method-strategy`, the canonical cell key.
    pub fn key(&self) -> String {
        format!(
            "{}/{}/{}-{}",
            self.model_id, self.prompt_id, self.method, self.strategy
        )
    }

    /// The indep-neutral cell for the same model and prompt.
    pub fn baseline(&self) -> CellCoord {
        CellCoord {
            method: Method::Indep,
            strategy: Strategy::Neutral,
            ..self.clone()
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.method == Method::Indep && self.strategy == Strategy::Neutral
    }

    pub fn with_strategy(&self, strategy: Strategy) -> CellCoord {
        CellCoord {
            strategy,
            ..self.clone()
        }
    }

    /// Key of one output of this cell, used by score files.
    pub fn output_key(&self, slot: usize) -> String {
        format!("{}/{}", self.key(), slot)
    }
}

impl fmt::Display for CellCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Where a token count came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageSource {
    #[default]
    BackendReported,
    ProxyEstimated,
}

/// Token usage of one call or an accumulated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub source: UsageSource,
}

/// Tokens per whitespace word used when a backend does not report usage.
pub const PROXY_TOKENS_PER_WORD: f64 = 1.3;

impl TokenUsage {
    pub fn reported(prompt_tokens: u64, completion_tokens: u64) -> Self {
        TokenUsage {
            prompt_tokens,
            completion_tokens,
            source: UsageSource::BackendReported,
        }
    }

    /// Whitespace-word proxy estimate, always flagged as such.
    pub fn estimate(prompt: &str, completion: &str) -> Self {
        let est = |s: &str| (s.split_whitespace().count() as f64 * PROXY_TOKENS_PER_WORD).ceil() as u64;
        TokenUsage {
            prompt_tokens: est(prompt),
            completion_tokens: est(completion),
            source: UsageSource::ProxyEstimated,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn is_proxy(&self) -> bool {
        self.source == UsageSource::ProxyEstimated
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        let source = if self.is_proxy() || rhs.is_proxy() {
            UsageSource::ProxyEstimated
        } else {
            UsageSource::BackendReported
        };
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
            source,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> TokenUsage {
        iter.fold(TokenUsage::default(), |a, b| a + b)
    }
}

/// One generated text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub cell: CellCoord,
    pub stage: Stage,
    pub slot: usize,
    pub text: String,
    pub stratum_id: Option<u8>,
    pub anchor_slots: Option<Vec<usize>>,
    pub usage: TokenUsage,
}

/// The n outputs of one cell stage, ordered by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub cell: CellCoord,
    pub stage: Stage,
    pub records: Vec<OutputRecord>,
}

impl Pool {
    /// Builds a pool, ordering records by slot.
    pub fn new(cell: CellCoord, stage: Stage, mut records: Vec<OutputRecord>) -> Self {
        records.sort_by_key(|r| r.slot);
        Pool {
            cell,
            stage,
            records,
        }
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.text.as_str()).collect()
    }

    pub fn usage(&self) -> TokenUsage {
        self.records.iter().map(|r| r.usage).sum()
    }

    /// Pairwise diversity metrics need at least two outputs.
    pub fn insufficient_for_pairwise(&self) -> bool {
        self.n() < 2
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        let header = PoolHeader {
            cell: self.cell.clone(),
            stage: self.stage,
            n: self.n(),
            config_hash: config_hash.to_string(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            let line = RecordLine {
                stage: r.stage,
                slot: r.slot,
                text: &r.text,
                stratum_id: r.stratum_id,
                anchor_slots: r.anchor_slots.as_deref(),
                usage: r.usage,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses the line-delimited record format; returns the pool and the
    /// config hash recorded in its header.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<(Pool, String)> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::artifact("<pool>", "empty record file"))??;
        let header: PoolHeader = serde_json::from_str(&header_line)?;
        let mut records = Vec::with_capacity(header.n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: OwnedRecordLine = serde_json::from_str(&line)?;
            records.push(OutputRecord {
                cell: header.cell.clone(),
                stage: rec.stage,
                slot: rec.slot,
                text: rec.text,
                stratum_id: rec.stratum_id,
                anchor_slots: rec.anchor_slots,
                usage: rec.usage,
            });
        }
        if records.len() != header.n {
            return Err(Error::artifact(
                "<pool>",
                format!("header says {} records, found {}", header.n, records.len()),
            ));
        }
        Ok((
            Pool {
                cell: header.cell,
                stage: header.stage,
                records,
            },
            header.config_hash,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolHeader {
    cell: CellCoord,
    stage: Stage,
    n: usize,
    config_hash: String,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    stage: Stage,
    slot: usize,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    stratum_id: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    anchor_slots: Option<&'a [usize]>,
    usage: TokenUsage,
}

#[derive(Deserialize)]
struct OwnedRecordLine {
    stage: Stage,
    slot: usize,
    text: String,
    #[serde(default)]
    stratum_id: Option<u8>,
    #[serde(default)]
    anchor_slots: Option<Vec<usize>>,
    usage: TokenUsage,
}

/// A broken pool invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub slot: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(s) => write!(f, "slot {s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks every pool and record invariant. Violations are data, one per
/// broken invariant.
pub fn validate_pool(pool: &Pool) -> Vec<Violation> {
    let mut out = Vec::new();
    let method = pool.cell.method;
    let n = pool.n();
    let mut push = |slot: Option<usize>, message: String| out.push(Violation { slot, message });

    if pool.stage == Stage::Seed && !method.is_two_stage() {
        push(None, format!("seed stage is not valid for method {method}"));
    }

    let mut seen = BTreeSet::new();
    for r in &pool.records {
        let slot = Some(r.slot);
        if r.cell != pool.cell {
            push(slot, format!("record cell {} differs from pool cell {}", r.cell, pool.cell));
        }
        if r.stage != pool.stage {
            push(slot, format!("record stage {} differs from pool stage {}", r.stage, pool.stage));
        }
        if r.slot >= n {
            push(slot, format!("slot index out of range 0..{n}"));
        }
        if !seen.insert(r.slot) {
            push(slot, "duplicate slot index".into());
        }

        match (method == Method::Strat, r.stratum_id) {
            (true, None) => push(slot, "strat record is missing stratum_id".into()),
            (true, Some(id)) if !(1..=5).contains(&id) => {
                push(slot, format!("stratum_id {id} outside 1..5"))
            }
            (false, Some(_)) => push(slot, format!("stratum_id present for method {method}")),
            _ => {}
        }

        let wants_anchors = method.is_two_stage() && pool.stage == Stage::Evaluated;
        match (&r.anchor_slots, wants_anchors) {
            (None, true) => push(slot, "evaluated record is missing anchor_slots".into()),
            (Some(_), false) => push(
                slot,
                format!("anchor_slots present for {method} {} record", pool.stage),
            ),
            (Some(anchors), true) => {
                let expected = method.anchor_count().unwrap_or(0);
                if anchors.len() != expected {
                    push(
                        slot,
                        format!(
                            "{method} requires {expected} anchor_slots, found {}",
                            anchors.len()
                        ),
                    );
                }
                if anchors.iter().any(|&a| a >= n) {
                    push(slot, "anchor slot index out of range".into());
                }
                if method != Method::Repr && anchors.first() != Some(&r.slot) {
                    push(slot, "first anchor slot must be the record's own slot".into());
                }
            }
            (None, false) => {}
        }
    }

    out
}
