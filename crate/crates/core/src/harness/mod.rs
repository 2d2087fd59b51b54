//! Experiment sweeps over `(n, seed)` cells, with oracle-referenced metrics.

mod config;
mod demo;
mod report;

use std::time::Instant;

use rayon::prelude::*;

pub use config::{AlphaRule, ClassConfig, ClassKind, ExperimentConfig, ExperimentSetup, Method, Metric};
pub use demo::{partial_coverage_demo, DemoConfig, PartialCoverageReport};
pub use report::{
    count_inversions, rate_fit, read_report_csv, summarize_metric, write_report_csv, CellMessage, ExperimentReport,
    MetricSummary, RateFit, RateFitEntry, ReportRow, Summary, ERROR_METRIC,
};

use crate::classes::FunctionClassSpec;
use crate::data::sample_dataset;
use crate::mdp::{occupancy, policy_value, regularized_value, BehaviorSpec, Policy, TabularMdp};
use crate::oracles::{
    greedy_policy, lagrange_norm_bound, soft_optimal_policy, soft_value_iteration, test_measure, value_iteration,
    SoftConfig,
};
use crate::solvers::{fqi_solve, msqp_solve, mqp_solve, SolveResult, SolverConfig};
use crate::table::SaTable;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("rate fit: {0}")]
    RateFit(String),
    #[error(transparent)]
    Oracle(#[from] crate::oracles::OracleError),
    #[error(transparent)]
    Solve(#[from] crate::solvers::SolveError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Oracle quantities shared by every cell with the same `α`.
#[derive(Clone, Debug)]
pub struct References {
    pub alpha: f64,
    /// `q*_α` for MSQP, `q*` otherwise.
    pub q_ref: SaTable,
    pub pi_ref: Policy,
    pub pi_star: Policy,
    /// `J_α(π*_α)` for MSQP, `J(π*)` otherwise.
    pub j_ref: f64,
    pub j_star: f64,
    /// `d_{π_ref,μ0}(s) · π^◇_b(a|s)`.
    pub test_measure: SaTable,
    pub default_q_bound: f64,
    /// `B_Q/(1−γ) · ‖d̃/P_b‖_∞`; infinite when `π_ref` leaves the data.
    pub default_l_bound: f64,
}

const ORACLE_TOL: f64 = 1e-12;

pub fn references(mdp: &TabularMdp, b: &BehaviorSpec, alpha: f64) -> Result<References, HarnessError> {
    let pi_b = &b.behavior_policy;
    let q_star = value_iteration(mdp, ORACLE_TOL, crate::oracles::DEFAULT_MAX_ITERATIONS)?;
    let pi_star = greedy_policy(&q_star);
    let j_star = policy_value(mdp, &pi_star);
    let (q_ref, pi_ref, j_ref) = if alpha > 0.0 {
        let cfg = SoftConfig::exact(alpha, pi_b.clone())?;
        let q = soft_value_iteration(mdp, &cfg)?;
        let pi = soft_optimal_policy(&q, &cfg);
        let j = regularized_value(mdp, &pi, pi_b, alpha).map_err(crate::oracles::OracleError::from)?;
        (q, pi, j)
    } else {
        (q_star, pi_star.clone(), j_star)
    };
    let nu = test_measure(b, &occupancy(mdp, &pi_ref, mdp.mu0()))?;
    let default_q_bound = mdp.r_max().abs().max(mdp.r_min().abs()) / (1.0 - mdp.gamma());
    let filled = SaTable::filled(mdp.n_states(), mdp.n_actions(), default_q_bound);
    let default_l_bound = lagrange_norm_bound(mdp, b, &filled, &pi_ref);
    Ok(References {
        alpha,
        q_ref,
        pi_ref,
        pi_star,
        j_ref,
        j_star,
        test_measure: nu,
        default_q_bound,
        default_l_bound,
    })
}

/// Oracle-relative metrics of one solve. All expectations are exact.
pub fn metrics(
    mdp: &TabularMdp,
    b: &BehaviorSpec,
    refs: &References,
    result: &SolveResult,
    which: &[Metric],
) -> Result<Vec<(Metric, f64)>, HarnessError> {
    let pi_b = &b.behavior_policy;
    let pi_hat = &result.policy;
    let weights = b.joint();
    let mut out = Vec::with_capacity(which.len());
    for &m in which {
        let v = match m {
            Metric::L2Pb => result.q_hat.weighted_l2_distance(&refs.q_ref, &weights),
            Metric::L2Test => result.q_hat.weighted_l2_distance(&refs.q_ref, &refs.test_measure),
            Metric::RegretSoft => {
                let j = if refs.alpha > 0.0 {
                    regularized_value(mdp, pi_hat, pi_b, refs.alpha).map_err(crate::oracles::OracleError::from)?
                } else {
                    policy_value(mdp, pi_hat)
                };
                refs.j_ref - j
            }
            Metric::RegretHard => refs.j_star - policy_value(mdp, pi_hat),
            Metric::Value => policy_value(mdp, pi_hat),
        };
        out.push((m, v));
    }
    Ok(out)
}

struct CellOutcome {
    n: usize,
    seed: u64,
    alpha: f64,
    wall_ms: u64,
    result: Result<Vec<(Metric, f64)>, String>,
    warnings: Vec<String>,
}

fn run_cell(setup: &ExperimentSetup, refs: &References, n: usize, seed: u64) -> Result<(Vec<(Metric, f64)>, Vec<String>), HarnessError> {
    let cfg = &setup.config;
    let mdp = &setup.mdp;
    let pi_b = &setup.behavior.behavior_policy;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let data = sample_dataset(mdp, &setup.behavior, n, seed, n as u64)?;
    let q_class = cfg.q_class.resolve(setup.q_features.as_ref(), || Ok(refs.default_q_bound), || refs.q_ref.clone())?;
    let solver = SolverConfig { alpha: refs.alpha, gamma: mdp.gamma(), ..cfg.solver.clone() };
    let result = if cfg.method == Method::Fqi {
        fqi_solve(&data, &q_class, cfg.fqi_iterations, mdp.gamma(), pi_b)?
    } else {
        let l_cfg = cfg.l_class.clone().unwrap_or_else(|| ClassConfig::tabular(None));
        let b_q = q_class.sup_bound();
        let l_class = l_cfg.resolve(
            setup.l_features.as_ref(),
            || {
                // The default scales with the Q-class bound actually in use.
                let bound = refs.default_l_bound * b_q / refs.default_q_bound;
                if bound.is_finite() {
                    Ok(bound)
                } else {
                    Err(HarnessError::Config(
                        "default L-class bound is infinite (reference policy leaves the data support); set l_class.bound".into(),
                    ))
                }
            },
            || SaTable::zeros(ns, na),
        )?;
        if matches!(l_class, FunctionClassSpec::Singleton { .. }) {
            return Err(HarnessError::Config("oracle_singleton is only available for the Q-class".into()));
        }
        match cfg.method {
            Method::Msqp => msqp_solve(&data, &q_class, &l_class, &solver, pi_b)?,
            _ => mqp_solve(&data, &q_class, &l_class, &solver, pi_b)?,
        }
    };
    let out = metrics(mdp, &setup.behavior, refs, &result, &cfg.metrics)?;
    Ok((out, result.warnings))
}

/// Runs every `(n, seed)` cell in parallel. The dataset of a cell is drawn
/// with the cell's seed and stream `n`, so cells are independent of
/// scheduling and rows come back in grid order.
pub fn run_experiment(setup: &ExperimentSetup) -> Result<ExperimentReport, HarnessError> {
    let cfg = &setup.config;
    cfg.validate()?;
    let mut alphas: Vec<f64> = cfg.n_grid.iter().map(|&n| cfg.alpha(n)).collect();
    alphas.dedup();
    let refs: Vec<References> = alphas.iter().map(|&a| references(&setup.mdp, &setup.behavior, a)).collect::<Result<_, _>>()?;
    let cells: Vec<(usize, u64)> = cfg.n_grid.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let alpha = cfg.alpha(n);
            let r = refs.iter().find(|r| r.alpha == alpha).expect("references cover every alpha");
            let start = Instant::now();
            let res = run_cell(setup, r, n, seed);
            let wall_ms = if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
            let (result, warnings) = match res {
                Ok((m, w)) => (Ok(m), w),
                Err(e) => (Err(e.to_string()), Vec::new()),
            };
            CellOutcome { n, seed, alpha, wall_ms, result, warnings }
        })
        .collect();

    let mut report = ExperimentReport { rows: Vec::new(), errors: Vec::new(), warnings: Vec::new() };
    for c in outcomes {
        for w in c.warnings {
            report.warnings.push(CellMessage { n: c.n, seed: c.seed, message: w });
        }
        match c.result {
            Ok(metrics) => {
                for (m, value) in metrics {
                    report.rows.push(ReportRow {
                        n: c.n,
                        seed: c.seed,
                        alpha: c.alpha,
                        metric: m.name().into(),
                        value,
                        wall_ms: c.wall_ms,
                    });
                }
            }
            Err(message) => {
                report.rows.push(ReportRow {
                    n: c.n,
                    seed: c.seed,
                    alpha: c.alpha,
                    metric: ERROR_METRIC.into(),
                    value: f64::NAN,
                    wall_ms: c.wall_ms,
                });
                report.errors.push(CellMessage { n: c.n, seed: c.seed, message });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::benchmark_mdp;

    #[test]
    fn references_switch_on_temperature() {
        let (m, b) = benchmark_mdp();
        let hard = references(&m, &b, 0.0).unwrap();
        let soft = references(&m, &b, 0.1).unwrap();
        assert_eq!(hard.j_ref, hard.j_star);
        assert!(soft.j_ref < soft.j_star);
        assert!((hard.default_q_bound - 10.0).abs() < 1e-12);
        assert!(hard.default_l_bound.is_finite() && soft.default_l_bound.is_finite());
        assert!((hard.test_measure.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_oracle_scores_zero() {
        let (m, b) = benchmark_mdp();
        let refs = references(&m, &b, 0.1).unwrap();
        let result = SolveResult {
            q_hat: refs.q_ref.clone(),
            q_params: Vec::new(),
            l_hat: SaTable::zeros(10, 3),
            policy: refs.pi_ref.clone(),
            objective_trace: Vec::new(),
            final_saddle_gap_estimate: 0.0,
            warnings: Vec::new(),
        };
        for (metric, v) in metrics(&m, &b, &refs, &result, &Metric::ALL).unwrap() {
            match metric {
                Metric::L2Pb | Metric::L2Test | Metric::RegretSoft => assert!(v.abs() < 1e-12, "{metric:?} {v}"),
                Metric::RegretHard => assert!(v > 0.0),
                Metric::Value => assert!((refs.j_star - v - (refs.j_star - policy_value(&m, &refs.pi_ref))).abs() < 1e-12),
            }
        }
    }
}
