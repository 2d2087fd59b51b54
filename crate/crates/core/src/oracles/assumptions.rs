use serde::Serialize;

use super::{soft_optimal_policy, soft_value_iteration, OracleError, SoftConfig};
use crate::mdp::{density_ratio, occupancy, ratio_with_conventions, BehaviorSpec, TabularMdp};

/// The reward-scale and coverage conditions, with their left-hand sides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub alpha: f64,
    pub r_min: f64,
    /// `‖π*_α / π_b‖_∞`.
    #[serde(with = "crate::table::extended_f64")]
    pub policy_ratio: f64,
    /// `α log ‖π*_α / π_b‖_∞`, to be compared with `R_min`.
    #[serde(with = "crate::table::extended_f64")]
    pub reward_scale_lhs: f64,
    pub reward_scale_holds: bool,
    /// `‖d_{π*_α, P_b} / P_b‖_∞`.
    #[serde(with = "crate::table::extended_f64")]
    pub coverage_ratio: f64,
    pub coverage_holds: bool,
}

pub fn check_assumptions(mdp: &TabularMdp, b: &BehaviorSpec, cfg: &SoftConfig) -> Result<AssumptionReport, OracleError> {
    b.validate_for(mdp)?;
    let q = soft_value_iteration(mdp, cfg)?;
    let pi = soft_optimal_policy(&q, cfg);
    let pi_b = cfg.pi_b();
    let mut policy_ratio = 0.0f64;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            policy_ratio = policy_ratio.max(ratio_with_conventions(pi.prob(s, a), pi_b.prob(s, a)));
        }
    }
    let reward_scale_lhs = cfg.alpha() * policy_ratio.ln();
    let coverage_ratio = density_ratio(&occupancy(mdp, &pi, &b.state_marginal), b).sup;
    Ok(AssumptionReport {
        alpha: cfg.alpha(),
        r_min: mdp.r_min(),
        policy_ratio,
        reward_scale_lhs,
        reward_scale_holds: reward_scale_lhs <= mdp.r_min(),
        coverage_ratio,
        coverage_holds: coverage_ratio.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Policy, RewardNoise};
    use crate::table::SaTable;

    #[test]
    fn constant_rewards_keep_behavior_policy() {
        let m = TabularMdp::new(1, 2, vec![1.0, 1.0], SaTable::filled(1, 2, 0.5), RewardNoise::Deterministic, 0.5, vec![1.0], 0.0, 1.0)
            .unwrap();
        let b = BehaviorSpec::new(vec![1.0], Policy::uniform(1, 2)).unwrap();
        let r = check_assumptions(&m, &b, &SoftConfig::exact(2.0, Policy::uniform(1, 2)).unwrap()).unwrap();
        assert!((r.policy_ratio - 1.0).abs() < 1e-14);
        assert!(r.reward_scale_lhs.abs() < 1e-13 && r.reward_scale_holds && r.coverage_holds);
    }

    #[test]
    fn distinct_rewards_break_scale_at_zero_r_min() {
        let m = TabularMdp::new(1, 2, vec![1.0, 1.0], SaTable::from_vec(1, 2, vec![0.0, 1.0]), RewardNoise::Deterministic, 0.5, vec![1.0], 0.0, 1.0)
            .unwrap();
        let b = BehaviorSpec::new(vec![1.0], Policy::uniform(1, 2)).unwrap();
        let r = check_assumptions(&m, &b, &SoftConfig::exact(0.5, Policy::uniform(1, 2)).unwrap()).unwrap();
        assert!(r.reward_scale_lhs > 0.0 && !r.reward_scale_holds);
    }
}
