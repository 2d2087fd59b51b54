use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::classes::{FeatureMap, FunctionClassSpec};
use crate::mdp::{BehaviorSpec, TabularMdp};
use crate::solvers::SolverConfig;
use crate::table::SaTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Msqp,
    Mqp,
    Fqi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaRule {
    Fixed { alpha: f64 },
    /// `α = c · n^{-1/8}`.
    Schedule { c: f64 },
}

impl AlphaRule {
    pub fn alpha(&self, n: usize) -> f64 {
        match *self {
            AlphaRule::Fixed { alpha } => alpha,
            AlphaRule::Schedule { c } => c * (n as f64).powf(-0.125),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2Pb,
    L2Test,
    RegretSoft,
    RegretHard,
    Value,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::L2Pb, Metric::L2Test, Metric::RegretSoft, Metric::RegretHard, Metric::Value];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::L2Pb => "l2_pb",
            Metric::L2Test => "l2_test",
            Metric::RegretSoft => "regret_soft",
            Metric::RegretHard => "regret_hard",
            Metric::Value => "value",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    TabularBox,
    LinearBall,
    /// The class `{q_ref}` holding only the oracle target of the cell.
    OracleSingleton,
}

/// A class as written in a config file. Bounds left out fall back to
/// `R_max/(1−γ)` for Q and to the multiplier bound for L; features are
/// read from a JSON file of nested `[s][a][k]` arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub kind: ClassKind,
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub nonneg: bool,
}

impl ClassConfig {
    pub fn tabular(bound: Option<f64>) -> Self {
        Self { kind: ClassKind::TabularBox, bound, features: None, nonneg: false }
    }

    pub(crate) fn resolve(
        &self,
        features: Option<&FeatureMap>,
        default_bound: impl FnOnce() -> Result<f64, HarnessError>,
        singleton: impl FnOnce() -> SaTable,
    ) -> Result<FunctionClassSpec, HarnessError> {
        Ok(match self.kind {
            ClassKind::TabularBox => FunctionClassSpec::TabularBox { bound: self.bound.map_or_else(default_bound, Ok)? },
            ClassKind::LinearBall => FunctionClassSpec::LinearBall {
                features: features.cloned().ok_or_else(|| HarnessError::Config("linear_ball class needs features".into()))?,
                radius: self.bound.ok_or_else(|| HarnessError::Config("linear_ball class needs a bound (radius)".into()))?,
                nonneg: self.nonneg,
            },
            ClassKind::OracleSingleton => FunctionClassSpec::Singleton { member: singleton() },
        })
    }
}

fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

fn default_fqi_iterations() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: PathBuf,
    pub behavior: PathBuf,
    pub method: Method,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub alpha_rule: Option<AlphaRule>,
    pub q_class: ClassConfig,
    #[serde(default)]
    pub l_class: Option<ClassConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Record wall-clock time per cell; off gives byte-identical reports.
    #[serde(default = "default_true")]
    pub timing: bool,
    #[serde(default = "default_fqi_iterations")]
    pub fqi_iterations: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_grid must be nonempty, positive and strictly increasing");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct");
        }
        let mut metrics = self.metrics.clone();
        metrics.sort();
        if metrics.is_empty() || metrics.windows(2).any(|w| w[0] == w[1]) {
            return bad("metrics must be nonempty and distinct");
        }
        match (self.method, self.alpha_rule) {
            (Method::Msqp, None) => return bad("msqp needs an alpha_rule"),
            (Method::Msqp, Some(AlphaRule::Fixed { alpha })) if !(alpha >= crate::oracles::MIN_ALPHA) => {
                return bad("alpha must be at least 1e-8")
            }
            (Method::Msqp, Some(AlphaRule::Schedule { c })) if !(c > 0.0) => return bad("schedule constant must be positive"),
            _ => {}
        }
        if self.l_class.as_ref().is_some_and(|l| l.kind == ClassKind::OracleSingleton) {
            return bad("oracle_singleton is only available for the Q-class");
        }
        Ok(())
    }

    pub fn alpha(&self, n: usize) -> f64 {
        match (self.method, self.alpha_rule) {
            (Method::Msqp, Some(rule)) => rule.alpha(n),
            _ => 0.0,
        }
    }
}

/// A validated config together with the objects its paths point to.
#[derive(Clone, Debug)]
pub struct ExperimentSetup {
    pub mdp: TabularMdp,
    pub behavior: BehaviorSpec,
    pub config: ExperimentConfig,
    pub q_features: Option<FeatureMap>,
    pub l_features: Option<FeatureMap>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

impl ExperimentSetup {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut config: ExperimentConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut config.mdp);
        fix(&mut config.behavior);
        if let Some(f) = config.q_class.features.as_mut() {
            fix(f);
        }
        if let Some(f) = config.l_class.as_mut().and_then(|l| l.features.as_mut()) {
            fix(f);
        }
        if let Some(o) = config.output.as_mut() {
            fix(o);
        }
        let mdp: TabularMdp = read_json(&config.mdp)?;
        let behavior: BehaviorSpec = read_json(&config.behavior)?;
        let q_features = config.q_class.features.as_deref().map(read_json).transpose()?;
        let l_features = config.l_class.as_ref().and_then(|l| l.features.as_deref()).map(read_json).transpose()?;
        Self::new(mdp, behavior, config, q_features, l_features)
    }

    pub fn new(
        mdp: TabularMdp,
        behavior: BehaviorSpec,
        config: ExperimentConfig,
        q_features: Option<FeatureMap>,
        l_features: Option<FeatureMap>,
    ) -> Result<Self, HarnessError> {
        config.validate()?;
        behavior.validate_for(&mdp).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(Self { mdp, behavior, config, q_features, l_features })
    }
}
