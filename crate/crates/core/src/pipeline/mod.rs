//! Staged, resumable runs over a run directory:
//! generate -> embed -> score -> analyze -> report.
//!
//! Layout of a run directory:
//!
//! ```text
//! run.json                       config, generation fingerprint
//! failures.json                  cells that are not complete
//! cells/<model>/<prompt>/<method>-<strategy>/
//!     seed.jsonl evaluated.jsonl planning.json meta.json
//! embeddings/cache/              vectors.bin + index.json
//! embeddings/stage.json
//! regions/<prompt>.json
//! scores/<prompt>.<scorer>.csv   scores/stage.json
//! analysis/analysis.json
//! report/*.csv                   report/run_manifest.json
//! ```

mod analyze;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use analyze::{analyze, AnalysisBundle, CellAnalysis, ContrastRow, CurvePoint, DesignRow, EfficiencyRow, RarefactionSummary};
pub use report::{report, report_schema, REPORT_FILES};

use crate::analysis::CellTokens;
use crate::backend::{GenerationBackend, HttpBackend, MockBackend};
use crate::config::{filter_cells, BackendKind, EmbedderConfig, QualitySource, RunConfig};
use crate::diversity::fit_regions;
use crate::error::{Error, Result};
use crate::geometry::{embed_texts, Embedder, EmbeddingCache, EmbeddingSet, HttpEmbedder, MockEmbedder};
use crate::hashing::{hex_digest, text_hash};
use crate::model::{CellCoord, Pool};
use crate::orchestrator::{CellFailure, CellRun, GenerationSettings, Orchestrator, Partition, PartitionPolicy};
use crate::prompts::PromptKit;
use crate::quality::{boilerplate_table, mock_score, NgramIndex, ScoreTable};

/// Flags shared by every stage.
#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    /// Comma-separated wildcard patterns over cell keys.
    pub only_cells: Option<String>,
    /// Allow writing into an existing run directory.
    pub resume: bool,
}

/// A cell that is not available downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub cell: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageOutcome {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub failures: Vec<FailureEntry>,
}

impl StageOutcome {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn run_json(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn failures_json(&self) -> PathBuf {
        self.root.join("failures.json")
    }

    pub fn cell_dir(&self, cell: &CellCoord) -> PathBuf {
        self.root
            .join("cells")
            .join(&cell.model_id)
            .join(&cell.prompt_id)
            .join(format!("{}-{}", cell.method, cell.strategy))
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.embeddings_dir().join("cache")
    }

    pub fn regions_file(&self, prompt_id: &str) -> PathBuf {
        self.root.join("regions").join(format!("{prompt_id}.json"))
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn score_file(&self, prompt_id: &str, scorer_id: &str) -> PathBuf {
        self.scores_dir().join(format!("{prompt_id}.{scorer_id}.csv"))
    }

    pub fn analysis_json(&self) -> PathBuf {
        self.root.join("analysis").join("analysis.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Writes through a temporary sibling and a rename, so readers never see
/// a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::artifact(path, e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::artifact(path, e.to_string()))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub backend_id: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Complete,
    Failed,
}

/// Per-cell run metadata. Written last, so its presence with status
/// `complete` marks a finished cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellMeta {
    pub cell: CellCoord,
    pub status: CellStatus,
    pub fingerprint: String,
    pub content_hash: String,
    pub failed_stage: Option<String>,
    pub message: Option<String>,
    pub partition_policy: Option<PartitionPolicy>,
    pub partition: Option<Partition>,
    pub anchors: Option<Vec<usize>>,
    pub tokens: CellTokens,
    pub started_unix: u64,
    pub finished_unix: u64,
}

const CELL_FILES: [&str; 3] = ["seed.jsonl", "evaluated.jsonl", "planning.json"];

fn content_hash(dir: &Path) -> Result<String> {
    let mut all = Vec::new();
    for name in CELL_FILES {
        let p = dir.join(name);
        all.extend_from_slice(name.as_bytes());
        all.push(0);
        if p.exists() {
            let bytes = fs::read(&p)?;
            all.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            all.extend_from_slice(&bytes);
        }
    }
    Ok(hex_digest(&all))
}

/// The resolved config, prompt kit, fingerprint and selected cells.
pub struct Prepared {
    pub cfg: RunConfig,
    pub kit: PromptKit,
    pub fingerprint: String,
    pub cells: Vec<CellCoord>,
    pub run: RunDir,
}

pub fn prepare(cfg: &RunConfig, opts: &StageOptions) -> Result<Prepared> {
    let mut cfg = cfg.clone();
    let kit = cfg.prompt_kit()?;
    cfg.resolve(kit.manifest())?;
    let mut cells = cfg.cells(kit.manifest())?;
    if let Some(pats) = &opts.only_cells {
        cells = filter_cells(cells, pats);
        if cells.is_empty() {
            return Err(Error::Config(format!("--only-cells `{pats}` matches no cell")));
        }
    }
    let fingerprint = cfg.fingerprint(&kit);
    let run = RunDir::new(cfg.output_dir.clone());
    Ok(Prepared { cfg, kit, fingerprint, cells, run })
}

pub fn build_backend(cfg: &RunConfig) -> Result<Box<dyn GenerationBackend>> {
    Ok(match cfg.backend {
        BackendKind::Mock => Box::new(MockBackend::new(cfg.seeds.run)),
        BackendKind::Http => Box::new(HttpBackend::new(cfg.endpoints.clone())?),
    })
}

pub fn build_embedder(cfg: &RunConfig) -> Result<Box<dyn Embedder>> {
    Ok(match &cfg.embedder {
        EmbedderConfig::Mock { dim, seed } => Box::new(MockEmbedder::new(*dim, *seed)),
        EmbedderConfig::Http { url, model, api_key_env } => {
            let key = match api_key_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    Error::Config(format!("environment variable {var} for the embedder is not set"))
                })?),
                None => None,
            };
            Box::new(HttpEmbedder::new(url.clone(), model.clone(), key))
        }
    })
}

/// Reads a cell's meta if the cell is complete, unmodified and produced by
/// this fingerprint.
fn complete_meta(run: &RunDir, cell: &CellCoord, fingerprint: &str) -> Result<Option<CellMeta>> {
    let dir = run.cell_dir(cell);
    let path = dir.join("meta.json");
    if !path.exists() {
        return Ok(None);
    }
    // an unreadable meta is what an interrupted write leaves behind
    let Ok(meta) = read_json::<CellMeta>(&path) else {
        return Ok(None);
    };
    if meta.status != CellStatus::Complete || meta.fingerprint != fingerprint {
        return Ok(None);
    }
    Ok((content_hash(&dir)? == meta.content_hash).then_some(meta))
}

fn write_pool(path: &Path, pool: &Pool, fingerprint: &str) -> Result<()> {
    let mut buf = Vec::new();
    pool.write_jsonl(&mut buf, fingerprint)?;
    write_atomic(path, &buf)
}

fn read_pool(path: &Path, fingerprint: &str) -> Result<Pool> {
    let file = fs::File::open(path).map_err(|e| Error::artifact(path, e.to_string()))?;
    let (pool, hash) = Pool::read_jsonl(BufReader::new(file)).map_err(|e| Error::artifact(path, e.to_string()))?;
    if hash != fingerprint {
        return Err(Error::artifact(
            path,
            format!("written under configuration {hash}, current is {fingerprint}; artifacts from different configurations cannot be mixed"),
        ));
    }
    Ok(pool)
}

fn save_success(run: &RunDir, r: &CellRun, fingerprint: &str, policy: PartitionPolicy, started: u64) -> Result<()> {
    let dir = run.cell_dir(&r.cell);
    let _ = fs::remove_dir_all(&dir);
    if let Some(seed) = &r.seed {
        write_pool(&dir.join("seed.jsonl"), seed, fingerprint)?;
    }
    write_pool(&dir.join("evaluated.jsonl"), &r.evaluated, fingerprint)?;
    if let Some(p) = &r.planning {
        write_json(&dir.join("planning.json"), p)?;
    }
    let meta = CellMeta {
        cell: r.cell.clone(),
        status: CellStatus::Complete,
        fingerprint: fingerprint.to_string(),
        content_hash: content_hash(&dir)?,
        failed_stage: None,
        message: None,
        partition_policy: r.partition.as_ref().map(|_| policy),
        partition: r.partition.clone(),
        anchors: r.anchors.clone(),
        tokens: CellTokens {
            planning: r.planning.as_ref().map(|p| p.usage()),
            seed: r.seed.as_ref().map(Pool::usage),
            evaluated: Some(r.evaluated.usage()),
        },
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

fn save_failure(run: &RunDir, f: &CellFailure, fingerprint: &str, started: u64) -> Result<()> {
    let dir = run.cell_dir(&f.cell);
    let _ = fs::remove_dir_all(&dir);
    if let Some(seed) = &f.seed {
        write_pool(&dir.join("seed.jsonl"), seed, fingerprint)?;
    }
    if let Some(p) = &f.planning {
        write_json(&dir.join("planning.json"), p)?;
    }
    if !f.partial.is_empty() {
        let stage = f.partial[0].stage;
        let partial = Pool::new(f.cell.clone(), stage, f.partial.clone());
        write_pool(&dir.join(format!("{stage}.partial.jsonl")), &partial, fingerprint)?;
    }
    let meta = CellMeta {
        cell: f.cell.clone(),
        status: CellStatus::Failed,
        fingerprint: fingerprint.to_string(),
        content_hash: content_hash(&dir)?,
        failed_stage: Some(f.stage.clone()),
        message: Some(f.message.clone()),
        partition_policy: None,
        partition: None,
        anchors: None,
        tokens: CellTokens {
            planning: f.planning.as_ref().map(|p| p.usage()),
            seed: f.seed.as_ref().map(Pool::usage),
            evaluated: None,
        },
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

/// Cells of the selection that are not complete, for failures.json.
fn collect_failures(p: &Prepared) -> Result<Vec<FailureEntry>> {
    let mut out = Vec::new();
    for cell in &p.cells {
        if complete_meta(&p.run, cell, &p.fingerprint)?.is_some() {
            continue;
        }
        let path = p.run.cell_dir(cell).join("meta.json");
        let (stage, message) = match read_json::<CellMeta>(&path) {
            Ok(m) if m.status == CellStatus::Failed => (
                m.failed_stage.unwrap_or_default(),
                m.message.unwrap_or_default(),
            ),
            Ok(_) => ("generate".into(), "cell artifacts do not match this configuration".into()),
            Err(_) => ("generate".into(), "not generated".into()),
        };
        out.push(FailureEntry { cell: cell.key(), stage, message });
    }
    Ok(out)
}

fn check_run_record(p: &Prepared) -> Result<RunRecord> {
    let path = p.run.run_json();
    if !path.exists() {
        return Err(Error::MissingStage(format!(
            "generations missing: {} has no run.json; run `poolforge generate` first",
            p.run.root.display()
        )));
    }
    let rec: RunRecord = read_json(&path)?;
    if rec.fingerprint != p.fingerprint {
        return Err(Error::artifact(
            path,
            "run directory was generated with a different configuration; artifacts cannot be mixed",
        ));
    }
    Ok(rec)
}

/// Generates every selected cell. Complete cells with a matching
/// fingerprint and content hash are skipped.
pub fn generate(
    cfg: &RunConfig,
    opts: &StageOptions,
    backend: &dyn GenerationBackend,
    embedder: &dyn Embedder,
) -> Result<StageOutcome> {
    let p = prepare(cfg, opts)?;
    let run_json = p.run.run_json();
    if run_json.exists() {
        if !opts.resume {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --resume to continue it",
                p.run.root.display()
            )));
        }
        check_run_record(&p)?;
    } else {
        write_json(
            &run_json,
            &RunRecord {
                fingerprint: p.fingerprint.clone(),
                backend_id: backend.id().to_string(),
                config: p.cfg.clone(),
            },
        )?;
    }

    let settings = GenerationSettings {
        n: p.cfg.n,
        concurrency: p.cfg.concurrency,
        retry: p.cfg.retry,
        planning_retries: p.cfg.planning_retries,
        parse_mode: p.cfg.parse_mode,
        partition_policy: p.cfg.partition_policy,
        partition_seed: p.cfg.seeds.partition,
        anchor_rule: p.cfg.anchor_rule,
    };
    let orch = Orchestrator { kit: &p.kit, backend, embedder, settings };
    let mut outcome = StageOutcome::default();
    for cell in &p.cells {
        if complete_meta(&p.run, cell, &p.fingerprint)?.is_some() {
            outcome.skipped.push(cell.key());
            continue;
        }
        let started = unix_now();
        match orch.run_cell(cell) {
            Ok(r) => save_success(&p.run, &r, &p.fingerprint, settings.partition_policy, started)?,
            Err(f) => save_failure(&p.run, &f, &p.fingerprint, started)?,
        }
        outcome.executed.push(cell.key());
    }
    outcome.failures = collect_failures(&p)?;
    write_json(&p.run.failures_json(), &outcome.failures)?;
    Ok(outcome)
}

/// A complete cell loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedCell {
    pub meta: CellMeta,
    pub evaluated: Pool,
}

/// Loads the selection's complete cells; the rest become failures.
pub fn load_cells(p: &Prepared) -> Result<(Vec<LoadedCell>, Vec<FailureEntry>)> {
    check_run_record(p)?;
    let mut cells = Vec::new();
    for cell in &p.cells {
        if let Some(meta) = complete_meta(&p.run, cell, &p.fingerprint)? {
            let evaluated = read_pool(&p.run.cell_dir(cell).join("evaluated.jsonl"), &p.fingerprint)?;
            cells.push(LoadedCell { meta, evaluated });
        }
    }
    let failures = collect_failures(p)?;
    if cells.is_empty() {
        return Err(Error::MissingStage("generations missing: no complete cell in the selection".into()));
    }
    Ok((cells, failures))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedStage {
    pub fingerprint: String,
    pub embedder_id: String,
    pub dim: usize,
    pub cells: Vec<String>,
    pub prompts: Vec<String>,
}

/// Embeds evaluated pools into the cache and fits the prompt-level
/// regions over each prompt's evaluated outputs.
pub fn embed(cfg: &RunConfig, opts: &StageOptions, embedder: &dyn Embedder) -> Result<StageOutcome> {
    let p = prepare(cfg, opts)?;
    let (cells, failures) = load_cells(&p)?;
    let mut cache = EmbeddingCache::open(&p.run.cache_dir(), embedder.id())?;
    let mut by_prompt: BTreeMap<String, (Vec<String>, Vec<Vec<f64>>)> = BTreeMap::new();
    let mut outcome = StageOutcome { failures, ..Default::default() };
    for c in &cells {
        let set = embed_texts(&c.evaluated.texts(), embedder, Some(&mut cache))?;
        let entry = by_prompt.entry(c.meta.cell.prompt_id.clone()).or_default();
        for (r, row) in c.evaluated.records.iter().zip(set.rows()) {
            entry.0.push(c.meta.cell.output_key(r.slot));
            entry.1.push(row.to_vec());
        }
        outcome.executed.push(c.meta.cell.key());
    }
    cache.flush()?;
    for (prompt, (keys, rows)) in &by_prompt {
        let family = p.kit.manifest().family_of(prompt)?;
        let corpus = EmbeddingSet::from_rows(embedder.id(), rows.clone())?;
        let model = fit_regions(prompt, family, keys, &corpus)?;
        write_json(&p.run.regions_file(prompt), &model)?;
    }
    write_json(
        &p.run.embeddings_dir().join("stage.json"),
        &EmbedStage {
            fingerprint: p.fingerprint.clone(),
            embedder_id: embedder.id().to_string(),
            dim: cache.dim().unwrap_or(0),
            cells: outcome.executed.clone(),
            prompts: by_prompt.keys().cloned().collect(),
        },
    )?;
    Ok(outcome)
}

/// Rows of an embedded pool, read from the cache only.
pub(crate) fn cached_embeddings(cache: &EmbeddingCache, pool: &Pool) -> Result<EmbeddingSet> {
    let rows = pool
        .records
        .iter()
        .map(|r| {
            cache.get(&text_hash(&r.text)).map(<[f64]>::to_vec).ok_or_else(|| {
                Error::MissingStage(format!(
                    "embeddings missing for {}; run `poolforge embed`",
                    pool.cell.output_key(r.slot)
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::from_rows(cache.embedder_id(), rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub prompt_id: String,
    pub scorer_id: String,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreStage {
    pub fingerprint: String,
    pub tables: Vec<ScoreEntry>,
}

/// Writes built-in score files (slogan boilerplate, mock) and checks that
/// external score files are in place.
pub fn score(cfg: &RunConfig, opts: &StageOptions) -> Result<StageOutcome> {
    let p = prepare(cfg, opts)?;
    let (cells, failures) = load_cells(&p)?;
    let mut by_prompt: BTreeMap<&str, Vec<(String, &str)>> = BTreeMap::new();
    for c in &cells {
        let v = by_prompt.entry(c.meta.cell.prompt_id.as_str()).or_default();
        v.extend(c.evaluated.records.iter().map(|r| (c.meta.cell.output_key(r.slot), r.text.as_str())));
    }
    let mut tables = Vec::new();
    let mut missing = Vec::new();
    let mut outcome = StageOutcome { failures, ..Default::default() };
    for (prompt, outputs) in &by_prompt {
        let family = p.kit.manifest().family_of(prompt)?;
        let source = p.cfg.quality.source(family);
        let Some(scorer_id) = source.scorer_id() else {
            continue;
        };
        let path = p.run.score_file(prompt, scorer_id);
        let table = match source {
            QualitySource::Boilerplate => {
                let idx = NgramIndex::build(prompt, outputs.iter().map(|(k, t)| (k.as_str(), *t)))?;
                Some(boilerplate_table(&idx, p.cfg.quality.commonness))
            }
            QualitySource::Mock => Some(ScoreTable {
                scorer_id: scorer_id.to_string(),
                task_id: prompt.to_string(),
                scores: outputs.iter().map(|(k, t)| (k.clone(), mock_score(t))).collect(),
            }),
            _ => None,
        };
        let rows = match table {
            Some(t) => {
                fs::create_dir_all(p.run.scores_dir())?;
                t.write_csv(&path)?;
                t.len()
            }
            None if path.exists() => csv::Reader::from_path(&path)?.records().count(),
            None => {
                missing.push(path.display().to_string());
                continue;
            }
        };
        outcome.executed.push(format!("{prompt}.{scorer_id}"));
        tables.push(ScoreEntry {
            prompt_id: prompt.to_string(),
            scorer_id: scorer_id.to_string(),
            file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            rows,
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingStage(format!(
            "external score files missing (columns output_key,score): {}",
            missing.join(", ")
        )));
    }
    write_json(
        &p.run.scores_dir().join("stage.json"),
        &ScoreStage { fingerprint: p.fingerprint.clone(), tables },
    )?;
    Ok(outcome)
}

/// Runs every stage in order.
pub fn run_all(
    cfg: &RunConfig,
    opts: &StageOptions,
    backend: &dyn GenerationBackend,
    embedder: &dyn Embedder,
) -> Result<StageOutcome> {
    let generated = generate(cfg, opts, backend, embedder)?;
    embed(cfg, opts, embedder)?;
    score(cfg, opts)?;
    analyze(cfg, opts)?;
    let mut out = report(cfg, opts)?;
    out.executed = generated.executed;
    out.skipped = generated.skipped;
    Ok(out)
}
