use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::benchmark::partial_coverage_instance;
use crate::classes::FunctionClassSpec;
use crate::data::{moments, sample_dataset};
use crate::mdp::{density_ratio, occupancy, policy_value, ratio_with_conventions, regularized_value, Policy};
use crate::oracles::{
    concentrability, greedy_policy, soft_optimal_policy, soft_value_iteration, value_iteration,
    OracleError, SoftConfig,
};
use crate::solvers::{msqp_solve, SolverConfig};
use crate::table::SaTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Radius of the linear Q-class.
    pub radius: f64,
    /// Replace `μ0` by the data's state marginal, so coverage holds.
    pub control: bool,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { n: 100_000, seed: 0, alpha: 0.1, radius: 2.0, control: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartialCoverageReport {
    pub config: DemoConfig,
    /// `μ0(s) / P_b(s)` per state, with `x/0 = ∞`.
    #[serde(serialize_with = "extended_vec")]
    pub state_density_ratio: Vec<f64>,
    #[serde(with = "crate::table::extended_f64")]
    pub occupancy_density_ratio: f64,
    #[serde(with = "crate::table::extended_f64")]
    pub tabular_concentrability: f64,
    #[serde(with = "crate::table::extended_f64")]
    pub linear_concentrability: f64,
    pub optimal_value: f64,
    pub soft_optimal_value: f64,
    pub msqp_value: f64,
    pub msqp_regret_soft: f64,
    pub msqp_regret_hard: f64,
    pub msqp_theta: Vec<f64>,
    pub msqp_policy: SaTable,
    /// Whether the importance weights `μ0/P_b` are finite wherever `μ0 > 0`.
    pub strawman_identified: bool,
    pub strawman_regret_soft: f64,
    pub strawman_regret_hard: f64,
    pub strawman_policy: SaTable,
    pub warnings: Vec<String>,
}

fn extended_vec<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    #[derive(Serialize)]
    struct E(#[serde(with = "crate::table::extended_f64")] f64);
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for &x in v {
        seq.serialize_element(&E(x))?;
    }
    seq.end()
}

/// Importance-weighted policy selection: per state, pick the action with
/// the largest weighted reward estimate. States without data, and every
/// state when some weight `μ0/P_b` is infinite, keep `π_b`.
fn importance_weighting_policy(
    data: &crate::data::OfflineDataset,
    weights: &[f64],
    pi_b: &Policy,
) -> (Policy, bool) {
    let (ns, na) = (pi_b.n_states(), pi_b.n_actions());
    let identified = weights.iter().all(|w| w.is_finite());
    let m = moments(data);
    let n = data.len() as f64;
    let mut t = pi_b.table().clone();
    if identified {
        for s in 0..ns {
            let est: Vec<f64> = (0..na)
                .map(|a| {
                    let c = m.count(s, a) as f64;
                    weights[s] * c / n * m.mean_reward.get(s, a) / pi_b.prob(s, a).max(f64::MIN_POSITIVE)
                })
                .collect();
            if (0..na).all(|a| m.count(s, a) == 0) {
                continue;
            }
            let best = crate::numeric::argmax_where(&est, |a| pi_b.supports(s, a)).expect("nonempty support");
            for a in 0..na {
                t.set(s, a, if a == best { 1.0 } else { 0.0 });
            }
        }
    }
    (Policy::new(t).expect("rows are distributions"), identified)
}

/// The one-step instance whose data never visit the state the initial
/// distribution sits on. MSQP with a linear class still recovers a good
/// policy there, while reweighting by `μ0/P_b` cannot.
pub fn partial_coverage_demo(cfg: &DemoConfig) -> Result<PartialCoverageReport, HarnessError> {
    let (mdp, b, features) = partial_coverage_instance();
    let mdp = if cfg.control {
        mdp.with_mu0(b.state_marginal.clone()).map_err(OracleError::from)?
    } else {
        mdp
    };
    let pi_b = &b.behavior_policy;
    let soft = SoftConfig::exact(cfg.alpha, pi_b.clone())?;
    let q_alpha = soft_value_iteration(&mdp, &soft)?;
    let pi_alpha = soft_optimal_policy(&q_alpha, &soft);
    let q_star = value_iteration(&mdp, 1e-12, crate::oracles::DEFAULT_MAX_ITERATIONS)?;
    let pi_star = greedy_policy(&q_star);
    let j_alpha = regularized_value(&mdp, &pi_alpha, pi_b, cfg.alpha).map_err(OracleError::from)?;
    let j_star = policy_value(&mdp, &pi_star);

    let state_density_ratio: Vec<f64> =
        mdp.mu0().iter().zip(&b.state_marginal).map(|(&m, &p)| ratio_with_conventions(m, p)).collect();
    let d_alpha = occupancy(&mdp, &pi_alpha, mdp.mu0());
    let occupancy_density_ratio = density_ratio(&d_alpha, &b).sup;
    let q_class = FunctionClassSpec::LinearBall { features, radius: cfg.radius, nonneg: false };
    let box_class = FunctionClassSpec::TabularBox { bound: 1.0 };
    let tabular_concentrability = concentrability(&mdp, &b, &d_alpha, &box_class, &q_alpha)?.value;
    let linear_concentrability = concentrability(&mdp, &b, &d_alpha, &q_class, &q_alpha)?.value;

    // With γ = 0 the multiplier is `q` itself on the data support.
    let b_l = q_class.sup_bound();
    let l_class = FunctionClassSpec::TabularBox { bound: b_l };
    let data = sample_dataset(&mdp, &b, cfg.n, cfg.seed, 0)?;
    let solver = SolverConfig { alpha: cfg.alpha, gamma: mdp.gamma(), ..SolverConfig::default() };
    let result = msqp_solve(&data, &q_class, &l_class, &solver, pi_b)?;
    let msqp_value = policy_value(&mdp, &result.policy);
    let msqp_soft = regularized_value(&mdp, &result.policy, pi_b, cfg.alpha).map_err(OracleError::from)?;

    let (straw, identified) = importance_weighting_policy(&data, &state_density_ratio, pi_b);
    let straw_soft = regularized_value(&mdp, &straw, pi_b, cfg.alpha).map_err(OracleError::from)?;

    Ok(PartialCoverageReport {
        config: cfg.clone(),
        state_density_ratio,
        occupancy_density_ratio,
        tabular_concentrability,
        linear_concentrability,
        optimal_value: j_star,
        soft_optimal_value: j_alpha,
        msqp_value,
        msqp_regret_soft: j_alpha - msqp_soft,
        msqp_regret_hard: j_star - msqp_value,
        msqp_theta: result.q_params,
        msqp_policy: result.policy.table().clone(),
        strawman_identified: identified,
        strawman_regret_soft: j_alpha - straw_soft,
        strawman_regret_hard: j_star - policy_value(&mdp, &straw),
        strawman_policy: straw.table().clone(),
        warnings: result.warnings,
    })
}
