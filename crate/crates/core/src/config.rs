//! Experiment files.
//!
//! An experiment is one TOML document with a section per concern:
//!
//! ```toml
//! seed = 0
//!
//! [problem]
//! kind = "hetero_quadratic"
//! dimension = 10
//! workers = 8
//! noise_sigma = 1.0
//!
//! [byzantine]
//! delta = 0.25
//!
//! [attack]
//! kind = "sign_flip"
//!
//! [aggregation]
//! rule = "cwtm"
//! meta = "ctma"
//!
//! [estimator]
//! kind = "mu2"
//!
//! [training]
//! rounds = 400
//! ```
//!
//! Unknown keys are rejected. Command-line overrides address keys by dotted
//! path (`training.eta=0.01`); the value is read as a TOML literal and falls
//! back to a bare string. The config hash is the SHA-256 of the canonical
//! serialization after defaults and overrides are applied.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregators::{AggregatorKind, AggregatorSpec, DEFAULT_GM_MAX_ITERATIONS, DEFAULT_GM_TOLERANCE};
use crate::attacks::AttackSpec;
use crate::context::{check_delta, default_byzantine_set};
use crate::engine::{TrainConfig, WorkerOrder};
use crate::estimators::{AlphaSchedule, BetaSchedule, EstimatorConfig, EstimatorKind};
use crate::harness::robustness::Adversary;
use crate::harness::BenchMethod;
use crate::meta::{MetaKind, MetaSpec};
use crate::problems::{ProblemInstance, QuadraticParams, SoftmaxParams};
use crate::vector::WorkerVector;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(#[from] crate::Error),
    #[error("section [{0}] is required for this command")]
    MissingSection(&'static str),
}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSection {
    HeteroQuadratic(QuadraticParams),
    Softmax(SoftmaxParams),
    /// A problem saved with [`ProblemInstance::save`].
    File { path: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineSection {
    /// Byzantine fraction; the last `floor(delta m)` workers are Byzantine.
    #[serde(default)]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSection {
    #[serde(default = "default_rule")]
    pub rule: AggregatorKind,
    #[serde(default)]
    pub meta: MetaKind,
    #[serde(default = "default_bucket_size")]
    pub bucket_size: usize,
    #[serde(default = "default_gm_tolerance")]
    pub gm_tolerance: f64,
    #[serde(default = "default_gm_max_iterations")]
    pub gm_max_iterations: usize,
}

fn default_rule() -> AggregatorKind {
    AggregatorKind::Average
}
fn default_bucket_size() -> usize {
    2
}
fn default_gm_tolerance() -> f64 {
    DEFAULT_GM_TOLERANCE
}
fn default_gm_max_iterations() -> usize {
    DEFAULT_GM_MAX_ITERATIONS
}

impl Default for AggregationSection {
    fn default() -> Self {
        Self {
            rule: default_rule(),
            meta: MetaKind::None,
            bucket_size: default_bucket_size(),
            gm_tolerance: default_gm_tolerance(),
            gm_max_iterations: default_gm_max_iterations(),
        }
    }
}

impl AggregationSection {
    /// The pipeline, trimming at the run's Byzantine fraction.
    pub fn to_spec(&self, delta: f64) -> MetaSpec {
        let mut base = AggregatorSpec::new(self.rule, delta);
        base.gm_tolerance = self.gm_tolerance;
        base.gm_max_iterations = self.gm_max_iterations;
        MetaSpec::new(self.meta, base).with_bucket_size(self.bucket_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default = "default_estimator")]
    pub kind: EstimatorKind,
    /// Fixed momentum weight. mu2 defaults to `1/t`, momentum to 0.9.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Fixed Anytime weight for mu2; absent means `alpha_t = t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

fn default_estimator() -> EstimatorKind {
    EstimatorKind::Mu2
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            kind: default_estimator(),
            beta: None,
            gamma: None,
        }
    }
}

impl EstimatorSection {
    pub fn to_config(&self) -> EstimatorConfig {
        match self.kind {
            EstimatorKind::Sgd => EstimatorConfig::sgd(),
            EstimatorKind::Momentum => EstimatorConfig::momentum(self.beta.unwrap_or(0.9)),
            EstimatorKind::Mu2 => EstimatorConfig {
                kind: EstimatorKind::Mu2,
                alpha: self.gamma.map_or(AlphaSchedule::Linear, AlphaSchedule::FixedGamma),
                beta: self.beta.map_or(BetaSchedule::Reciprocal, BetaSchedule::Fixed),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// Learning rate; absent means `1 / (4 L T)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_point: Option<Vec<f64>>,
    #[serde(default)]
    pub reverse_worker_order: bool,
    /// Record wall-clock times in the trace.
    #[serde(default)]
    pub timing: bool,
    /// Reject learning rates above `1 / (4 L T)`.
    #[serde(default)]
    pub theory_mode: bool,
}

fn default_rounds() -> usize {
    100
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            eta: None,
            rounds: default_rounds(),
            initial_point: None,
            reverse_worker_order: false,
            timing: false,
            theory_mode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    pub m: usize,
    pub d: usize,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "one")]
    pub spread: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Draws for the brute-force `rho^2` cross-check.
    #[serde(default = "default_rho_draws")]
    pub rho_draws: usize,
    pub deltas: Vec<f64>,
    pub adversaries: Vec<Adversary>,
    pub rules: Vec<AggregatorKind>,
    #[serde(default = "default_metas")]
    pub metas: Vec<MetaKind>,
}

fn one() -> f64 {
    1.0
}
fn default_replications() -> usize {
    10_000
}
fn default_rho_draws() -> usize {
    100_000
}
fn default_metas() -> Vec<MetaKind> {
    vec![MetaKind::None, MetaKind::Ctma]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub eta_grid: Vec<f64>,
    #[serde(default = "default_sweep_estimators")]
    pub estimators: Vec<EstimatorSection>,
    /// Training seeds; empty means the top-level seed only.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn default_sweep_estimators() -> Vec<EstimatorSection> {
    vec![
        EstimatorSection::default(),
        EstimatorSection {
            kind: EstimatorKind::Momentum,
            beta: Some(0.9),
            gamma: None,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_bench_methods")]
    pub methods: Vec<BenchMethod>,
    pub m_grid: Vec<usize>,
    pub d: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

fn default_bench_methods() -> Vec<BenchMethod> {
    BenchMethod::ALL.to_vec()
}
fn default_repetitions() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_probe_points")]
    pub probe_points: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_probe_points() -> usize {
    32
}
fn default_samples() -> usize {
    1000
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            probe_points: default_probe_points(),
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training seed (problem generation has its own seed).
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSection,
    #[serde(default)]
    pub byzantine: ByzantineSection,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub aggregation: AggregationSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSection>,
}

/// Sets `path` (dotted) in `table` to `value`, creating tables as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> ConfigResult<()> {
    let bad = || ConfigError::Override(assignment.to_string());
    let (path, raw) = assignment.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("nonempty path");
    let mut node = table;
    for key in parents {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(bad)?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> ConfigResult<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> ConfigResult<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = table.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of [`Self::to_toml`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Checks everything that does not need the problem to be built.
    pub fn validate(&self) -> ConfigResult<()> {
        check_delta(self.byzantine.delta)?;
        self.attack.validate()?;
        self.aggregation.to_spec(self.byzantine.delta).validate()?;
        self.estimator.to_config().validate()?;
        Ok(())
    }

    pub fn build_problem(&self) -> ConfigResult<ProblemInstance> {
        let workers = |m: usize| default_byzantine_set(self.byzantine.delta, m);
        Ok(match &self.problem {
            ProblemSection::HeteroQuadratic(p) => ProblemInstance::generate_quadratic(p, &workers(p.workers))?,
            ProblemSection::Softmax(p) => ProblemInstance::generate_softmax(p, &workers(p.workers))?,
            ProblemSection::File { path } => ProblemInstance::load(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?,
        })
    }

    /// The training run described by this config, validated.
    pub fn train_config(&self, problem: Arc<ProblemInstance>) -> ConfigResult<TrainConfig> {
        let mut c = TrainConfig::new(
            problem,
            self.byzantine.delta,
            self.attack,
            self.aggregation.to_spec(self.byzantine.delta),
            self.estimator.to_config(),
            0.0,
            self.training.rounds,
            self.seed,
        );
        c.eta = self.training.eta.unwrap_or_else(|| c.theory_eta());
        c.initial_point = self.training.initial_point.clone().map(WorkerVector::new);
        c.worker_order = if self.training.reverse_worker_order {
            WorkerOrder::Reverse
        } else {
            WorkerOrder::Forward
        };
        c.timing = self.training.timing;
        c.theory_mode = self.training.theory_mode;
        c.validate()?;
        Ok(c)
    }

    /// Seeds for multi-seed commands.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        match &self.sweep {
            Some(s) if !s.seeds.is_empty() => s.seeds.clone(),
            _ => vec![self.seed],
        }
    }
}
