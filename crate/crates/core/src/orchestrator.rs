//! Per-cell generation pipelines: single-stage fan-out for indep and strat,
//! seed-then-regenerate for repr, self, peer1 and peer2.

use serde::{Deserialize, Serialize};

use crate::backend::{fan_out, generate_with_retry, CallKey, CallKind, Generation, GenerationBackend, RetryPolicy};
use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, embed_pool, select_anchors, AnchorRule, Embedder};
use crate::hashing::stream_rng;
use crate::model::{validate_pool, CellCoord, Method, OutputRecord, Pool, Stage, TokenUsage};
use crate::prompts::{assign_strata, parse_strata, MethodContext, ParseMode, PromptKit, StrataPlan, STRATA_COUNT};

pub const DEFAULT_CONCURRENCY: usize = 8;
pub const DEFAULT_PLANNING_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionPolicy {
    /// Groups of consecutive slots: (0,1), (2,3), ...
    #[default]
    Consecutive,
    /// Slots permuted by the seeded RNG, then grouped consecutively.
    Shuffled,
}

/// Disjoint equal-size groups covering every slot once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub arity: usize,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    /// The other members of `slot`'s group, in group order.
    pub fn partners(&self, slot: usize) -> Vec<usize> {
        self.groups
            .iter()
            .find(|g| g.contains(&slot))
            .map(|g| g.iter().copied().filter(|&s| s != slot).collect())
            .unwrap_or_default()
    }
}

pub fn make_partition(n: usize, arity: usize, policy: PartitionPolicy, seed: u64) -> Result<Partition> {
    if !(2..=3).contains(&arity) {
        return Err(Error::Partition(format!("arity must be 2 or 3, got {arity}")));
    }
    if n == 0 || !n.is_multiple_of(arity) {
        return Err(Error::Partition(format!(
            "pool size {n} is not divisible into groups of {arity}; choose n as a multiple of {arity}"
        )));
    }
    let mut slots: Vec<usize> = (0..n).collect();
    if policy == PartitionPolicy::Shuffled {
        use rand::seq::SliceRandom;
        slots.shuffle(&mut stream_rng(seed, "partition", n as u64));
    }
    Ok(Partition {
        arity,
        groups: slots.chunks(arity).map(<[usize]>::to_vec).collect(),
    })
}

/// Knobs shared by every cell of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationSettings {
    pub n: usize,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub planning_retries: u32,
    pub parse_mode: ParseMode,
    pub partition_policy: PartitionPolicy,
    pub partition_seed: u64,
    pub anchor_rule: AnchorRule,
}

impl GenerationSettings {
    pub fn new(n: usize) -> Self {
        GenerationSettings {
            n,
            concurrency: DEFAULT_CONCURRENCY,
            retry: RetryPolicy::default(),
            planning_retries: DEFAULT_PLANNING_RETRIES,
            parse_mode: ParseMode::Strict,
            partition_policy: PartitionPolicy::Consecutive,
            partition_seed: 0,
            anchor_rule: AnchorRule::MaxMin,
        }
    }
}

/// One planning call's raw reply and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningAttempt {
    pub raw: String,
    pub usage: TokenUsage,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningRecord {
    pub attempts: Vec<PlanningAttempt>,
    pub plan: Option<StrataPlan>,
}

impl PlanningRecord {
    /// Every attempt's usage counts toward the cell.
    pub fn usage(&self) -> TokenUsage {
        self.attempts.iter().map(|a| a.usage).sum()
    }
}

/// A finished cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub cell: CellCoord,
    pub seed: Option<Pool>,
    pub evaluated: Pool,
    pub planning: Option<PlanningRecord>,
    pub partition: Option<Partition>,
    /// Shared anchors shown to every repr stage-2 call.
    pub anchors: Option<Vec<usize>>,
}

impl CellRun {
    /// Planning, seed and evaluated usage summed.
    pub fn total_usage(&self) -> TokenUsage {
        let mut u = self.evaluated.usage();
        if let Some(s) = &self.seed {
            u += s.usage();
        }
        if let Some(p) = &self.planning {
            u += p.usage();
        }
        u
    }
}

/// A failed cell with everything produced before the failure.
#[derive(Debug, Clone)]
pub struct CellFailure {
    pub cell: CellCoord,
    pub stage: String,
    pub message: String,
    pub planning: Option<PlanningRecord>,
    pub seed: Option<Pool>,
    /// Records of the stage that failed, by slot.
    pub partial: Vec<OutputRecord>,
}

/// Runs cells against one backend and prompt kit.
pub struct Orchestrator<'a> {
    pub kit: &'a PromptKit,
    pub backend: &'a dyn GenerationBackend,
    pub embedder: &'a dyn Embedder,
    pub settings: GenerationSettings,
}

struct StageFailure {
    message: String,
    partial: Vec<OutputRecord>,
}

impl Orchestrator<'_> {
    pub fn run_cell(&self, cell: &CellCoord) -> std::result::Result<CellRun, Box<CellFailure>> {
        match cell.method {
            Method::Indep => self.run_indep(cell),
            Method::Strat => self.run_strat(cell),
            _ => self.run_two_stage(cell),
        }
    }

    fn fail(cell: &CellCoord, stage: &str, f: StageFailure) -> Box<CellFailure> {
        Box::new(CellFailure {
            cell: cell.clone(),
            stage: stage.to_string(),
            message: f.message,
            planning: None,
            seed: None,
            partial: f.partial,
        })
    }

    /// Fans out one call per slot and assembles the records by slot.
    fn run_stage<'c>(
        &self,
        cell: &CellCoord,
        stage: Stage,
        context: impl Fn(usize) -> (MethodContext<'c>, Option<u8>, Option<Vec<usize>>) + Sync,
    ) -> std::result::Result<Pool, StageFailure> {
        let n = self.settings.n;
        let results = fan_out(n, self.settings.concurrency, |slot| {
            let (ctx, stratum_id, anchor_slots) = context(slot);
            let payload = self.kit.build_prompt(cell, stage, &ctx)?;
            let key = CallKey { cell, kind: CallKind::Output { stage, slot } };
            let Generation { text, usage } = generate_with_retry(self.backend, &key, &payload, self.settings.retry)?;
            Ok(OutputRecord { cell: cell.clone(), stage, slot, text, stratum_id, anchor_slots, usage })
        });
        let mut records = Vec::with_capacity(n);
        let mut first_error = None;
        for (slot, r) in results.into_iter().enumerate() {
            match r {
                Some(Ok(rec)) => records.push(rec),
                Some(Err(e)) if first_error.is_none() => first_error = Some(format!("slot {slot}: {e}")),
                _ => {}
            }
        }
        if let Some(message) = first_error {
            return Err(StageFailure { message, partial: records });
        }
        let pool = Pool::new(cell.clone(), stage, records);
        let violations = validate_pool(&pool);
        if let Some(v) = violations.first() {
            return Err(StageFailure {
                message: format!("invalid {stage} pool: {}", v.message),
                partial: pool.records,
            });
        }
        Ok(pool)
    }

    pub fn run_indep(&self, cell: &CellCoord) -> std::result::Result<CellRun, Box<CellFailure>> {
        let evaluated = self
            .run_stage(cell, Stage::Evaluated, |_| (MethodContext::Empty, None, None))
            .map_err(|f| Self::fail(cell, "evaluated", f))?;
        Ok(CellRun { cell: cell.clone(), seed: None, evaluated, planning: None, partition: None, anchors: None })
    }

    /// Plans with up to 1 + R attempts. Transport errors abort at once;
    /// unparseable plans trigger the next attempt.
    pub fn plan(&self, cell: &CellCoord) -> std::result::Result<PlanningRecord, (PlanningRecord, String)> {
        let mut record = PlanningRecord { attempts: Vec::new(), plan: None };
        let payload = match self.kit.build_planning_prompt(&cell.prompt_id, self.settings.n) {
            Ok(p) => p,
            Err(e) => return Err((record, e.to_string())),
        };
        for attempt in 0..=self.settings.planning_retries {
            let key = CallKey { cell, kind: CallKind::Planning { attempt } };
            let g = match generate_with_retry(self.backend, &key, &payload, self.settings.retry) {
                Ok(g) => g,
                Err(e) => return Err((record, format!("planning call failed: {e}"))),
            };
            match parse_strata(&g.text, self.settings.parse_mode) {
                Ok(plan) => {
                    record.attempts.push(PlanningAttempt { raw: g.text, usage: g.usage, error: None });
                    record.plan = Some(plan);
                    return Ok(record);
                }
                Err(e) => record.attempts.push(PlanningAttempt { raw: g.text, usage: g.usage, error: Some(e.to_string()) }),
            }
        }
        let last = record.attempts.last().and_then(|a| a.error.clone()).unwrap_or_default();
        let msg = format!("no valid plan after {} attempts: {last}", record.attempts.len());
        Err((record, msg))
    }

    pub fn run_strat(&self, cell: &CellCoord) -> std::result::Result<CellRun, Box<CellFailure>> {
        let planning = match self.plan(cell) {
            Ok(p) => p,
            Err((record, message)) => {
                return Err(Box::new(CellFailure {
                    cell: cell.clone(),
                    stage: "planning".into(),
                    message,
                    planning: Some(record),
                    seed: None,
                    partial: Vec::new(),
                }))
            }
        };
        let plan = planning.plan.as_ref().expect("successful planning has a plan");
        let with_planning = |mut f: Box<CellFailure>| {
            f.planning = Some(planning.clone());
            f
        };
        let assignment = assign_strata(self.settings.n, STRATA_COUNT)
            .map_err(|e| with_planning(Self::fail(cell, "evaluated", StageFailure { message: e.to_string(), partial: vec![] })))?;
        let evaluated = self
            .run_stage(cell, Stage::Evaluated, |slot| {
                let id = assignment[slot] as u8;
                let stratum = plan.stratum(id).expect("validated plan has ids 1..5");
                (MethodContext::Stratum(stratum), Some(id), None)
            })
            .map_err(|f| with_planning(Self::fail(cell, "evaluated", f)))?;
        Ok(CellRun {
            cell: cell.clone(),
            seed: None,
            evaluated,
            planning: Some(planning),
            partition: None,
            anchors: None,
        })
    }

    pub fn run_two_stage(&self, cell: &CellCoord) -> std::result::Result<CellRun, Box<CellFailure>> {
        let n = self.settings.n;
        // checked before any call so an indivisible n costs nothing
        let partition = match cell.method {
            Method::Peer1 | Method::Peer2 => Some(
                make_partition(
                    n,
                    cell.method.anchor_count().unwrap_or(0),
                    self.settings.partition_policy,
                    self.settings.partition_seed,
                )
                .map_err(|e| Self::fail(cell, "partition", StageFailure { message: e.to_string(), partial: vec![] }))?,
            ),
            _ => None,
        };
        let seed = self
            .run_stage(cell, Stage::Seed, |_| (MethodContext::Empty, None, None))
            .map_err(|f| Self::fail(cell, "seed", f))?;
        let with_seed = |mut f: Box<CellFailure>| {
            f.seed = Some(seed.clone());
            f
        };
        let anchors = if cell.method == Method::Repr {
            let found = embed_pool(&seed, self.embedder, None)
                .and_then(|e| select_anchors(&distance_matrix(&e), 3, self.settings.anchor_rule));
            Some(found.map_err(|e| {
                with_seed(Self::fail(cell, "anchors", StageFailure { message: e.to_string(), partial: vec![] }))
            })?)
        } else {
            None
        };
        let texts = seed.texts();
        let evaluated = self
            .run_stage(cell, Stage::Evaluated, |slot| {
                let own = texts[slot];
                match cell.method {
                    Method::SelfAnchor => (MethodContext::SelfAnchor { own }, None, Some(vec![slot])),
                    Method::Peer1 => {
                        let p = partition.as_ref().expect("peer partition").partners(slot);
                        (MethodContext::Peer1 { own, peer: texts[p[0]] }, None, Some(vec![slot, p[0]]))
                    }
                    Method::Peer2 => {
                        let p = partition.as_ref().expect("peer partition").partners(slot);
                        (
                            MethodContext::Peer2 { own, peers: [texts[p[0]], texts[p[1]]] },
                            None,
                            Some(vec![slot, p[0], p[1]]),
                        )
                    }
                    _ => {
                        let a = anchors.as_ref().expect("repr anchors");
                        (
                            MethodContext::Representatives([texts[a[0]], texts[a[1]], texts[a[2]]]),
                            None,
                            Some(a.clone()),
                        )
                    }
                }
            })
            .map_err(|f| with_seed(Self::fail(cell, "evaluated", f)))?;
        Ok(CellRun {
            cell: cell.clone(),
            seed: Some(seed),
            evaluated,
            planning: None,
            partition,
            anchors,
        })
    }
}
