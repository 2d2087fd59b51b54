//! Minimax estimators of soft (MSQP) and hard (MQP) optimal Q-functions,
//! plus a fitted-Q-iteration baseline.
//!
//! Both estimators solve `min_{q∈Q} max_{l∈L} L̂(q, l)` with
//! `L̂(q, l) = ½ E_n[q²] + E_n[l·(r + γ·env(q)(s′) − q)]`. For a box
//! L-class the inner max is closed form and the outer problem is the convex
//! program `min_q ½ Σ w q² + B_L Σ max(0, ḡ_q)`, solved by a barrier
//! interior-point method (default) or projected subgradient descent.

mod descent_ascent;
mod fqi;
mod interior_point;
pub mod residual;
mod subgradient;

pub use fqi::fqi_solve;
pub use residual::{
    empirical_lagrangian, inner_max_box, lagrangian_tuples, outer_objective, residual, residual_hard, residual_soft,
    residual_tuples,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{ClassError, FunctionClassSpec};
use crate::data::{OfflineDataset, SufficientStats};
use crate::mdp::{BehaviorSpec, Policy, TabularMdp};
use crate::oracles::{greedy_policy_on_support, soft_optimal_policy, Backup, OracleError, SoftConfig, MIN_ALPHA};
use crate::table::SaTable;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("temperature must be at least {MIN_ALPHA} for the soft estimator, got {0}")]
    InvalidAlpha(f64),
    #[error("discount must lie in [0, 1), got {0}")]
    InvalidGamma(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset is {0}×{1} but the behavior policy is {2}×{3}")]
    Shape(usize, usize, usize, usize),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMethod {
    InteriorPoint,
    Subgradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSize {
    Constant { c: f64 },
    InvSqrt { c: f64 },
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSize::Constant { c } => c,
            StepSize::InvSqrt { c } => c / (t as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Temperature; 0 selects the hard-max objective.
    pub alpha: f64,
    pub gamma: f64,
    pub method: OuterMethod,
    /// Iterations of the first-order methods.
    pub outer_steps: usize,
    pub step_size: StepSize,
    pub iterate_averaging: bool,
    /// Recorded for provenance; every solver here is deterministic.
    pub seed: u64,
    /// Target duality gap of the interior-point method.
    pub convergence_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            method: OuterMethod::InteriorPoint,
            outer_steps: 20_000,
            step_size: StepSize::InvSqrt { c: 1.0 },
            iterate_averaging: true,
            seed: 0,
            convergence_tolerance: 1e-9,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolveError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(SolveError::InvalidGamma(self.gamma));
        }
        let c = match self.step_size {
            StepSize::Constant { c } | StepSize::InvSqrt { c } => c,
        };
        if !(c > 0.0) || self.outer_steps == 0 || !(self.convergence_tolerance > 0.0) || !(self.alpha >= 0.0) {
            return Err(SolveError::Config("step size, steps and tolerance must be positive; alpha ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveResult {
    /// `q̂` as a table, and the class parameters that produce it.
    pub q_hat: SaTable,
    pub q_params: Vec<f64>,
    pub l_hat: SaTable,
    pub policy: Policy,
    pub objective_trace: Vec<f64>,
    pub final_saddle_gap_estimate: f64,
    pub warnings: Vec<String>,
}

/// Maps class parameters to tables and pulls table gradients back.
pub(crate) struct ParamMap<'a> {
    class: &'a FunctionClassSpec,
    ns: usize,
    na: usize,
}

impl<'a> ParamMap<'a> {
    pub(crate) fn new(class: &'a FunctionClassSpec, ns: usize, na: usize) -> Self {
        Self { class, ns, na }
    }

    pub(crate) fn q(&self, x: &[f64]) -> SaTable {
        self.class.evaluate(x, self.ns, self.na)
    }

    /// `∂/∂x` of a function whose gradient in table space is `g`.
    pub(crate) fn pullback(&self, x: &[f64], g: &SaTable) -> Vec<f64> {
        match self.class {
            FunctionClassSpec::TabularBox { .. } => g.as_slice().to_vec(),
            FunctionClassSpec::LinearBall { features, nonneg, .. } => {
                let mut out = vec![0.0; features.dim()];
                for s in 0..self.ns {
                    for a in 0..self.na {
                        let phi = features.features(s, a);
                        if *nonneg && phi.iter().zip(x).map(|(f, t)| f * t).sum::<f64>() <= 0.0 {
                            continue;
                        }
                        let gy = g.get(s, a);
                        for (o, f) in out.iter_mut().zip(phi) {
                            *o += gy * f;
                        }
                    }
                }
                out
            }
            FunctionClassSpec::Singleton { .. } => Vec::new(),
        }
    }

    /// `min_{x′ ∈ C} gᵀ(x′ − x)`, a certified lower bound on the change of
    /// any convex function with subgradient `g` at `x`.
    pub(crate) fn linear_lower_bound(&self, x: &[f64], g: &[f64]) -> f64 {
        let at_x: f64 = g.iter().zip(x).map(|(g, x)| g * x).sum();
        match self.class {
            FunctionClassSpec::TabularBox { bound } => g.iter().map(|&gi| if gi < 0.0 { gi * bound } else { 0.0 }).sum::<f64>() - at_x,
            FunctionClassSpec::LinearBall { radius, .. } => -radius * g.iter().map(|v| v * v).sum::<f64>().sqrt() - at_x,
            FunctionClassSpec::Singleton { .. } => 0.0,
        }
    }
}

/// Gradient in table space of `½ Σ w q² + Σ_y l_y ḡ_y(q)` for fixed `l`.
pub(crate) fn lagrangian_gradient(q: &SaTable, l: &SaTable, stats: &SufficientStats, backup: Backup<'_>) -> SaTable {
    let (ns, na) = (q.n_states(), q.n_actions());
    let mut grad = q.zip_map(&stats.weight, |q, w| w * q);
    // Weight each next state by how much multiplier mass flows into it.
    let mut flow = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            let coef = l.get(s, a) * stats.weight.get(s, a);
            if coef == 0.0 {
                continue;
            }
            let i = grad.index(s, a);
            grad.as_mut_slice()[i] -= coef;
            for (f, &p) in flow.iter_mut().zip(stats.next_probs(s, a)) {
                *f += coef * stats.gamma * p;
            }
        }
    }
    for (s, &f) in flow.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let dv = backup.envelope_gradient(q, s);
        for (gs, d) in grad.row_mut(s).iter_mut().zip(dv) {
            *gs += f * d;
        }
    }
    grad
}

fn extract_policy(q: &SaTable, alpha: f64, pi_b: &Policy) -> Result<Policy, SolveError> {
    if alpha > 0.0 {
        let cfg = SoftConfig::exact(alpha, pi_b.clone())?;
        Ok(soft_optimal_policy(q, &cfg))
    } else {
        Ok(greedy_policy_on_support(q, pi_b))
    }
}

/// `min_{q∈Q} max_{l∈L} L̂(q, l)` over the given sufficient statistics,
/// soft when `cfg.alpha > 0` and hard-max otherwise.
pub fn minimax_solve(
    stats: &SufficientStats,
    q_class: &FunctionClassSpec,
    l_class: &FunctionClassSpec,
    cfg: &SolverConfig,
    pi_b: &Policy,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    let (ns, na) = (stats.n_states(), stats.n_actions());
    if pi_b.n_states() != ns || pi_b.n_actions() != na {
        return Err(SolveError::Shape(ns, na, pi_b.n_states(), pi_b.n_actions()));
    }
    if cfg.alpha > 0.0 && cfg.alpha < MIN_ALPHA {
        return Err(SolveError::InvalidAlpha(cfg.alpha));
    }
    q_class.validate(ns, na)?;
    l_class.validate(ns, na)?;
    let backup = if cfg.alpha > 0.0 { Backup::Soft { alpha: cfg.alpha, pi_b } } else { Backup::Hard };
    let mut warnings = Vec::new();

    let mut out = match (q_class, l_class) {
        (FunctionClassSpec::Singleton { member }, FunctionClassSpec::TabularBox { bound }) => {
            let g = residual(member, stats, backup);
            let (l, value) = inner_max_box(&g, *bound);
            let objective = 0.5 * member.weighted_inner(member, &stats.weight) + value;
            Partial { q_params: Vec::new(), q: member.clone(), l, trace: vec![objective], gap: 0.0 }
        }
        (_, FunctionClassSpec::TabularBox { bound }) => {
            let nonneg_linear = matches!(q_class, FunctionClassSpec::LinearBall { nonneg: true, .. });
            if cfg.method == OuterMethod::InteriorPoint && !nonneg_linear {
                interior_point::solve(stats, backup, q_class, *bound, cfg.convergence_tolerance)
            } else {
                if nonneg_linear && cfg.method == OuterMethod::InteriorPoint {
                    warnings.push("clamped linear Q-class is nonsmooth; using projected subgradient".into());
                }
                subgradient::solve(stats, backup, q_class, *bound, cfg, &mut warnings)
            }
        }
        _ => {
            warnings.push("non-box L-class: generic descent-ascent, no convergence guarantee".into());
            descent_ascent::solve(stats, backup, q_class, l_class, cfg)
        }
    };
    if let FunctionClassSpec::LinearBall { radius, .. } = q_class {
        let norm = out.q_params.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius * (1.0 + 1e-9) {
            q_class.project(&mut out.q_params);
            out.q = q_class.evaluate(&out.q_params, ns, na);
        }
    }
    let policy = extract_policy(&out.q, cfg.alpha, pi_b)?;
    Ok(SolveResult {
        q_hat: out.q,
        q_params: out.q_params,
        l_hat: out.l,
        policy,
        objective_trace: out.trace,
        final_saddle_gap_estimate: out.gap,
        warnings,
    })
}

pub(crate) struct Partial {
    pub q_params: Vec<f64>,
    pub q: SaTable,
    pub l: SaTable,
    pub trace: Vec<f64>,
    pub gap: f64,
}

fn check_data(data: &OfflineDataset, pi_b: &Policy) -> Result<(), SolveError> {
    if data.is_empty() {
        return Err(SolveError::EmptyDataset);
    }
    if data.n_states != pi_b.n_states() || data.n_actions != pi_b.n_actions() {
        return Err(SolveError::Shape(data.n_states, data.n_actions, pi_b.n_states(), pi_b.n_actions()));
    }
    Ok(())
}

/// MSQP: soft minimax estimate `q̂_α`, with `π̂_α = softmax(q̂_α/α + log π_b)`.
pub fn msqp_solve(
    data: &OfflineDataset,
    q_class: &FunctionClassSpec,
    l_class: &FunctionClassSpec,
    cfg: &SolverConfig,
    pi_b: &Policy,
) -> Result<SolveResult, SolveError> {
    if !(cfg.alpha >= MIN_ALPHA) {
        return Err(SolveError::InvalidAlpha(cfg.alpha));
    }
    check_data(data, pi_b)?;
    minimax_solve(&SufficientStats::from_dataset(data, cfg.gamma), q_class, l_class, cfg, pi_b)
}

/// MQP: hard-max minimax estimate `q̂_0`, with `π̂_0` greedy over the
/// support of `π_b` (ties to the lowest index). `cfg.alpha` is ignored.
pub fn mqp_solve(
    data: &OfflineDataset,
    q_class: &FunctionClassSpec,
    l_class: &FunctionClassSpec,
    cfg: &SolverConfig,
    pi_b: &Policy,
) -> Result<SolveResult, SolveError> {
    check_data(data, pi_b)?;
    let cfg = SolverConfig { alpha: 0.0, ..cfg.clone() };
    minimax_solve(&SufficientStats::from_dataset(data, cfg.gamma), q_class, l_class, &cfg, pi_b)
}

/// The minimax problem with exact expectations in place of sample means.
/// `cfg.gamma` is taken from the MDP.
pub fn population_solve(
    mdp: &TabularMdp,
    b: &BehaviorSpec,
    q_class: &FunctionClassSpec,
    l_class: &FunctionClassSpec,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    b.validate_for(mdp).map_err(OracleError::from)?;
    let cfg = SolverConfig { gamma: mdp.gamma(), ..cfg.clone() };
    minimax_solve(&SufficientStats::population(mdp, b), q_class, l_class, &cfg, &b.behavior_policy)
}
