//! Declarative run configuration (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::DEFAULT_BOOTSTRAP_REPLICATES;
use crate::backend::{Endpoint, RetryPolicy};
use crate::diversity::DEFAULT_RAREFACTION_REPEATS;
use crate::error::{Error, Result};
use crate::geometry::{AnchorRule, DEFAULT_MOCK_DIM};
use crate::hashing::hex_digest;
use crate::manifest::Manifest;
use crate::model::{CellCoord, Family, Method, Strategy};
use crate::orchestrator::{PartitionPolicy, DEFAULT_CONCURRENCY, DEFAULT_PLANNING_RETRIES};
use crate::prompts::{ParseMode, PromptKit, Templates};
use crate::quality::Commonness;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub run: u64,
    pub partition: u64,
    pub rarefaction: u64,
    pub bootstrap: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            run: 1,
            partition: 2,
            rarefaction: 3,
            bootstrap: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderConfig {
    Mock {
        #[serde(default = "default_mock_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Http {
        url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

fn default_mock_dim() -> usize {
    DEFAULT_MOCK_DIM
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Mock {
            dim: DEFAULT_MOCK_DIM,
            seed: 0,
        }
    }
}

/// Where a family's raw quality scores come from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum QualitySource {
    /// No quality analysis for the family.
    #[default]
    None,
    /// Lexical slogan score computed by `score`.
    Boilerplate,
    /// Deterministic integer 1 to 5 per text, for offline runs.
    Mock,
    /// `scores/<prompt>.<scorer_id>.csv` supplied by an external scorer.
    External { scorer_id: String },
}

impl QualitySource {
    pub fn scorer_id(&self) -> Option<&str> {
        match self {
            QualitySource::None => None,
            QualitySource::Boilerplate => Some(crate::quality::BOILERPLATE_SCORER),
            QualitySource::Mock => Some("mock"),
            QualitySource::External { scorer_id } => Some(scorer_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub stories: QualitySource,
    pub aut: QualitySource,
    pub slogans: QualitySource,
    pub commonness: Commonness,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            stories: QualitySource::None,
            aut: QualitySource::None,
            slogans: QualitySource::Boilerplate,
            commonness: Commonness::Count,
        }
    }
}

impl QualityConfig {
    pub fn source(&self, family: Family) -> &QualitySource {
        match family {
            Family::Stories => &self.stories,
            Family::Aut => &self.aut,
            Family::Slogans => &self.slogans,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub rarefaction_repeats: usize,
    pub bootstrap_replicates: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            rarefaction_repeats: DEFAULT_RAREFACTION_REPEATS,
            bootstrap_replicates: DEFAULT_BOOTSTRAP_REPLICATES,
        }
    }
}

/// A full run. Empty model/prompt/method/strategy lists mean "all".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub n: usize,
    pub models: Vec<String>,
    pub prompts: Vec<String>,
    pub methods: Vec<Method>,
    pub strategies: Vec<Strategy>,
    /// Manifest file; the built-in reference manifest when absent.
    pub manifest: Option<PathBuf>,
    /// Template directory; the built-in templates when absent.
    pub templates: Option<PathBuf>,
    pub backend: BackendKind,
    pub endpoints: BTreeMap<String, Endpoint>,
    pub embedder: EmbedderConfig,
    pub seeds: Seeds,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub planning_retries: u32,
    pub parse_mode: ParseMode,
    pub partition_policy: PartitionPolicy,
    pub anchor_rule: AnchorRule,
    pub quality: QualityConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            n: 150,
            models: Vec::new(),
            prompts: Vec::new(),
            methods: Vec::new(),
            strategies: Vec::new(),
            manifest: None,
            templates: None,
            backend: BackendKind::Mock,
            endpoints: BTreeMap::new(),
            embedder: EmbedderConfig::default(),
            seeds: Seeds::default(),
            concurrency: DEFAULT_CONCURRENCY,
            retry: RetryPolicy::default(),
            planning_retries: DEFAULT_PLANNING_RETRIES,
            parse_mode: ParseMode::Strict,
            partition_policy: PartitionPolicy::Consecutive,
            anchor_rule: AnchorRule::MaxMin,
            quality: QualityConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

/// The parts of a config that change generated text. Analysis settings and
/// the cell grid are left out so a run can be extended or reanalyzed.
#[derive(Serialize)]
struct Fingerprint<'a> {
    n: usize,
    backend: BackendKind,
    endpoints: &'a BTreeMap<String, Endpoint>,
    embedder: &'a EmbedderConfig,
    run_seed: u64,
    partition_seed: u64,
    planning_retries: u32,
    parse_mode: ParseMode,
    partition_policy: PartitionPolicy,
    anchor_rule: AnchorRule,
    prompt_assets: String,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config. Relative manifest and template paths are resolved
    /// against the config file's directory; `output_dir` against the
    /// working directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [cfg.manifest.as_mut(), cfg.templates.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets every seed to `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.seeds = Seeds {
            run: seed,
            partition: seed,
            rarefaction: seed,
            bootstrap: seed,
        };
    }

    pub fn prompt_kit(&self) -> Result<PromptKit> {
        let manifest = match &self.manifest {
            Some(p) => Manifest::load(p)?,
            None => Manifest::reference(),
        };
        let templates = match &self.templates {
            Some(d) => Templates::from_dir(d)?,
            None => Templates::embedded(),
        };
        Ok(PromptKit::new(manifest, templates))
    }

    /// Checks the config against the manifest and fills empty lists.
    pub fn resolve(&mut self, manifest: &Manifest) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("pool size n must be at least 2, got {}", self.n)));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if self.models.is_empty() {
            self.models = manifest.models.clone();
        }
        if self.prompts.is_empty() {
            self.prompts = manifest.prompts.iter().map(|p| p.id.clone()).collect();
        }
        if self.methods.is_empty() {
            self.methods = Method::ALL.to_vec();
        }
        if self.strategies.is_empty() {
            self.strategies = Strategy::ALL.to_vec();
        }
        for m in &self.models {
            if !manifest.models.contains(m) {
                return Err(Error::UnknownModel(m.clone()));
            }
        }
        for p in &self.prompts {
            manifest.prompt(p)?;
        }
        if self.backend == BackendKind::Http {
            for m in &self.models {
                if !self.endpoints.contains_key(m) {
                    return Err(Error::Config(format!("backend http needs an endpoint for {m}")));
                }
            }
        }
        Ok(())
    }

    /// Every requested cell in grid order.
    pub fn cells(&self, manifest: &Manifest) -> Result<Vec<CellCoord>> {
        let mut out = Vec::new();
        for model in &self.models {
            for prompt in &self.prompts {
                let family = manifest.family_of(prompt)?;
                for &method in &self.methods {
                    for &strategy in &self.strategies {
                        out.push(CellCoord::new(model, prompt, family, method, strategy));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Hash of everything that affects generated text, including the
    /// manifest and template contents.
    pub fn fingerprint(&self, kit: &PromptKit) -> String {
        let mut assets = String::new();
        for name in kit.templates().names() {
            assets.push_str(name);
            assets.push('\0');
            assets.push_str(kit.templates().get(name).unwrap_or_default());
            assets.push('\0');
        }
        assets.push_str(&serde_json::to_string(&kit.manifest().prompts).expect("manifest serializes"));
        let fp = Fingerprint {
            n: self.n,
            backend: self.backend,
            endpoints: &self.endpoints,
            embedder: &self.embedder,
            run_seed: self.seeds.run,
            partition_seed: self.seeds.partition,
            planning_retries: self.planning_retries,
            parse_mode: self.parse_mode,
            partition_policy: self.partition_policy,
            anchor_rule: self.anchor_rule,
            prompt_assets: hex_digest(assets.as_bytes()),
        };
        hex_digest(serde_json::to_string(&fp).expect("fingerprint serializes").as_bytes())
    }

    /// Hash of the whole config, recorded next to downstream artifacts.
    pub fn config_hash(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// `*` matches any run of characters, everything else is literal.
pub fn wildcard_match(pattern: &str, text: &str) -> bool {
    let (p, t): (Vec<char>, Vec<char>) = (pattern.chars().collect(), text.chars().collect());
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] != '*' && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Keeps cells whose key matches any comma-separated wildcard pattern.
pub fn filter_cells(cells: Vec<CellCoord>, patterns: &str) -> Vec<CellCoord> {
    let pats: Vec<&str> = patterns.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    cells
        .into_iter()
        .filter(|c| {
            let key = c.key();
            pats.iter().any(|p| wildcard_match(p, &key))
        })
        .collect()
}
