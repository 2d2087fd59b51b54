//! Ground-truth oracles, all computed exactly on the tabular MDP.
//!
//! Soft and hard optimal Q-functions come from fixed-point iteration of the
//! corresponding Bellman backups. Lagrange multipliers, concentrability
//! coefficients, margin profiles and the perturbed fixed points are built
//! on top of those.

mod assumptions;
mod concentrability;
mod lagrange;
mod margin;

pub use assumptions::{check_assumptions, AssumptionReport};
pub use concentrability::{
    concentrability, concentrability_random_search, test_measure, ConcentrabilityMethod, ConcentrabilityReport,
};
pub use lagrange::{lagrange_hard, lagrange_multiplier, lagrange_norm_bound, lagrange_soft};
pub use margin::{margin_profile, MarginProfile};

use serde::Serialize;
use thiserror::Error;

use crate::classes::ClassError;
use crate::mdp::{MdpError, Policy, TabularMdp};
use crate::numeric::{argmax_where, softmax};
use crate::table::SaTable;

/// Smallest temperature accepted by [`SoftConfig`]; use the hard-max
/// oracles below this.
pub const MIN_ALPHA: f64 = 1e-8;
/// Iteration cap used by the convenience constructors.
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("behavior policy has empty support at state {0}")]
    EmptySupport(usize),
    #[error("temperature {0} below the minimum {MIN_ALPHA}; use the hard-max oracles")]
    InvalidAlpha(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("fixed point not reached after {iterations} iterations (last change {last_change})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("coverage violated: ‖d_(π,P_b)/P_b‖_∞ = {ratio}")]
    CoverageViolation { ratio: f64 },
    #[error("perturbation must be nonnegative, found {value} at (s={s}, a={a})")]
    NegativePerturbation { s: usize, a: usize, value: f64 },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Class(#[from] ClassError),
}

/// Temperature and reference policy of the KL-regularized problem, plus the
/// fixed-point stopping parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SoftConfig {
    alpha: f64,
    pi_b: Policy,
    tolerance: f64,
    max_iterations: usize,
}

impl SoftConfig {
    pub fn new(alpha: f64, pi_b: Policy, tolerance: f64, max_iterations: usize) -> Result<Self, OracleError> {
        if !(alpha >= MIN_ALPHA) || !alpha.is_finite() {
            return Err(OracleError::InvalidAlpha(alpha));
        }
        if !(tolerance > 0.0) {
            return Err(OracleError::InvalidTolerance(tolerance));
        }
        for s in 0..pi_b.n_states() {
            if !pi_b.row(s).iter().any(|&p| p > 0.0) {
                return Err(OracleError::EmptySupport(s));
            }
        }
        Ok(Self { alpha, pi_b, tolerance, max_iterations: max_iterations.max(1) })
    }

    /// Config with residual tolerance `1e-12` and a generous iteration cap.
    pub fn exact(alpha: f64, pi_b: Policy) -> Result<Self, OracleError> {
        Self::new(alpha, pi_b, 1e-12, DEFAULT_MAX_ITERATIONS)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn pi_b(&self) -> &Policy {
        &self.pi_b
    }
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }
    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn backup(&self) -> Backup<'_> {
        Backup::Soft { alpha: self.alpha, pi_b: &self.pi_b }
    }
}

/// The state-value envelope used inside a Bellman backup.
#[derive(Clone, Copy, Debug)]
pub enum Backup<'a> {
    /// `Ω_{α,π_b}(q)(s) = α log Σ_a π_b(a|s) exp(q(s,a)/α)`.
    Soft { alpha: f64, pi_b: &'a Policy },
    /// `max_a q(s, a)` over all actions.
    Hard,
}

impl Backup<'_> {
    /// Envelope value at state `s`.
    pub fn envelope(&self, q: &SaTable, s: usize) -> f64 {
        let row = q.row(s);
        match *self {
            Backup::Hard => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Backup::Soft { alpha, pi_b } => {
                let pb = pi_b.row(s);
                let m = row
                    .iter()
                    .zip(pb)
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return m;
                }
                let acc: f64 =
                    row.iter().zip(pb).filter(|(_, &p)| p > 0.0).map(|(&v, &p)| p * ((v - m) / alpha).exp()).sum();
                m + alpha * acc.ln()
            }
        }
    }

    /// Envelope at every state.
    pub fn envelopes(&self, q: &SaTable) -> Vec<f64> {
        (0..q.n_states()).map(|s| self.envelope(q, s)).collect()
    }

    /// A (sub)gradient of the envelope at `s` with respect to `q(s, ·)`:
    /// the soft-optimal action distribution for the soft envelope, the
    /// lowest-index argmax indicator for the hard one.
    pub fn envelope_gradient(&self, q: &SaTable, s: usize) -> Vec<f64> {
        let row = q.row(s);
        match *self {
            Backup::Hard => {
                let best = argmax_where(row, |_| true).expect("at least one action");
                (0..row.len()).map(|a| if a == best { 1.0 } else { 0.0 }).collect()
            }
            Backup::Soft { alpha, pi_b } => soft_policy_row(row, pi_b.row(s), alpha),
        }
    }

    pub fn is_soft(&self) -> bool {
        matches!(self, Backup::Soft { .. })
    }
}

fn soft_policy_row(q_row: &[f64], pb_row: &[f64], alpha: f64) -> Vec<f64> {
    let logits: Vec<f64> = q_row
        .iter()
        .zip(pb_row)
        .map(|(&v, &p)| if p > 0.0 { v / alpha + p.ln() } else { f64::NEG_INFINITY })
        .collect();
    softmax(&logits)
}

/// `Ω_{α,π_b}(q)(s)`, computed with a max-shift.
pub fn soft_envelope(q: &SaTable, cfg: &SoftConfig, s: usize) -> Result<f64, OracleError> {
    if !cfg.pi_b.row(s).iter().any(|&p| p > 0.0) {
        return Err(OracleError::EmptySupport(s));
    }
    Ok(cfg.backup().envelope(q, s))
}

/// One backup `r + γ E_{s′}[envelope(q)(s′)]` for an arbitrary reward table.
pub fn bellman_backup(mdp: &TabularMdp, reward: &SaTable, q: &SaTable, backup: Backup<'_>) -> SaTable {
    let v = backup.envelopes(q);
    let g = mdp.gamma();
    SaTable::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        let ev: f64 = mdp.next_state_probs(s, a).iter().zip(&v).filter(|(&p, _)| p > 0.0).map(|(p, v)| p * v).sum();
        reward.get(s, a) + g * ev
    })
}

/// Sup-norm Bellman residual `‖r + γ E[envelope(q)] − q‖_∞` under the
/// MDP's own mean reward.
pub fn bellman_residual(mdp: &TabularMdp, q: &SaTable, backup: Backup<'_>) -> f64 {
    bellman_backup(mdp, mdp.reward_mean(), q, backup).sup_distance(q)
}

/// Iterates the backup from `q = 0` until the sup-norm change is at most
/// `tolerance·(1−γ)/γ`, which bounds the residual of the returned iterate
/// by `tolerance`.
pub(crate) fn fixed_point(
    mdp: &TabularMdp,
    reward: &SaTable,
    backup: Backup<'_>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<SaTable, OracleError> {
    if !(tolerance > 0.0) {
        return Err(OracleError::InvalidTolerance(tolerance));
    }
    let g = mdp.gamma();
    if g == 0.0 {
        return Ok(reward.clone());
    }
    let step_tol = tolerance * (1.0 - g) / g;
    let mut q = SaTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut change = f64::INFINITY;
    for _ in 0..max_iterations {
        let next = bellman_backup(mdp, reward, &q, backup);
        change = next.sup_distance(&q);
        q = next;
        if change <= step_tol {
            return Ok(q);
        }
    }
    Err(OracleError::NotConverged { iterations: max_iterations, last_change: change })
}

/// `q*_α`, the fixed point of the soft Bellman equation.
pub fn soft_value_iteration(mdp: &TabularMdp, cfg: &SoftConfig) -> Result<SaTable, OracleError> {
    check_pi_b(mdp, cfg.pi_b())?;
    fixed_point(mdp, mdp.reward_mean(), cfg.backup(), cfg.tolerance, cfg.max_iterations)
}

/// `q*`, the fixed point of the hard-max Bellman optimality equation.
pub fn value_iteration(mdp: &TabularMdp, tolerance: f64, max_iterations: usize) -> Result<SaTable, OracleError> {
    fixed_point(mdp, mdp.reward_mean(), Backup::Hard, tolerance, max_iterations)
}

fn check_pi_b(mdp: &TabularMdp, pi_b: &Policy) -> Result<(), OracleError> {
    if pi_b.n_states() != mdp.n_states() || pi_b.n_actions() != mdp.n_actions() {
        return Err(MdpError::Shape("behavior policy does not match MDP dimensions".into()).into());
    }
    Ok(())
}

/// `softmax(q/α + log π_b)` per state, over the support of `π_b`.
pub fn soft_optimal_policy(q_alpha: &SaTable, cfg: &SoftConfig) -> Policy {
    let (ns, na) = (q_alpha.n_states(), q_alpha.n_actions());
    let mut t = SaTable::zeros(ns, na);
    for s in 0..ns {
        t.row_mut(s).copy_from_slice(&soft_policy_row(q_alpha.row(s), cfg.pi_b.row(s), cfg.alpha));
    }
    Policy::new(t).expect("softmax rows are stochastic")
}

/// Deterministic greedy policy over all actions, ties to the lowest index.
pub fn greedy_policy(q: &SaTable) -> Policy {
    let actions: Vec<usize> =
        (0..q.n_states()).map(|s| argmax_where(q.row(s), |_| true).expect("at least one action")).collect();
    Policy::deterministic(q.n_actions(), &actions)
}

/// Greedy policy restricted to `{a : π_b(a|s) > 0}`, ties to the lowest
/// index.
pub fn greedy_policy_on_support(q: &SaTable, pi_b: &Policy) -> Policy {
    let actions: Vec<usize> = (0..q.n_states())
        .map(|s| argmax_where(q.row(s), |a| pi_b.supports(s, a)).expect("behavior policy has nonempty support"))
        .collect();
    Policy::deterministic(q.n_actions(), &actions)
}

/// Nonnegative reward perturbation `c(s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationField {
    c: SaTable,
}

impl PerturbationField {
    pub fn new(c: SaTable) -> Result<Self, OracleError> {
        for s in 0..c.n_states() {
            for a in 0..c.n_actions() {
                let v = c.get(s, a);
                if !(v >= 0.0) {
                    return Err(OracleError::NegativePerturbation { s, a, value: v });
                }
            }
        }
        Ok(Self { c })
    }

    /// Zeroes the field outside the support of `P_b`.
    pub fn restricted_to(self, b: &crate::mdp::BehaviorSpec) -> Self {
        let c = SaTable::from_fn(self.c.n_states(), self.c.n_actions(), |s, a| {
            if b.in_support(s, a) {
                self.c.get(s, a)
            } else {
                0.0
            }
        });
        Self { c }
    }

    pub fn table(&self) -> &SaTable {
        &self.c
    }
}

fn perturbed(mdp: &TabularMdp, c: &PerturbationField, backup: Backup<'_>, tol: f64, max_it: usize) -> Result<SaTable, OracleError> {
    if !mdp.reward_mean().same_shape(&c.c) {
        return Err(MdpError::Shape("perturbation shape differs from MDP".into()).into());
    }
    let reward = mdp.reward_mean().zip_map(&c.c, |r, c| r + c);
    fixed_point(mdp, &reward, backup, tol, max_it)
}

/// Fixed point of `q = r + c + γ E[Ω_{α,π_b}(q)(s′)]`: the soft-optimal
/// Q-function for the shifted reward `r + c`.
pub fn perturbed_soft_q(mdp: &TabularMdp, cfg: &SoftConfig, c: &PerturbationField) -> Result<SaTable, OracleError> {
    check_pi_b(mdp, cfg.pi_b())?;
    perturbed(mdp, c, cfg.backup(), cfg.tolerance, cfg.max_iterations)
}

/// Hard-max analogue of [`perturbed_soft_q`].
pub fn perturbed_hard_q(mdp: &TabularMdp, c: &PerturbationField, tolerance: f64) -> Result<SaTable, OracleError> {
    perturbed(mdp, c, Backup::Hard, tolerance, DEFAULT_MAX_ITERATIONS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RewardNoise;

    fn one_state(rewards: &[f64], gamma: f64) -> TabularMdp {
        let na = rewards.len();
        TabularMdp::new(1, na, vec![1.0; na], SaTable::from_vec(1, na, rewards.to_vec()), RewardNoise::Deterministic, gamma, vec![1.0], 0.0, 1.0)
            .unwrap()
    }

    #[test]
    fn envelope_of_constant_is_constant() {
        let pi_b = Policy::new(SaTable::from_vec(1, 3, vec![0.2, 0.0, 0.8])).unwrap();
        let cfg = SoftConfig::exact(0.7, pi_b).unwrap();
        let q = SaTable::from_vec(1, 3, vec![3.5, -100.0, 3.5]);
        assert!((soft_envelope(&q, &cfg, 0).unwrap() - 3.5).abs() < 1e-14);
    }

    #[test]
    fn envelope_small_temperature_limit() {
        let cfg = SoftConfig::exact(1e-3, Policy::uniform(1, 2)).unwrap();
        let q = SaTable::from_vec(1, 2, vec![2.0, 1.0]);
        let v = soft_envelope(&q, &cfg, 0).unwrap();
        assert!(v <= 2.0 && (2.0 - v) <= 1e-3 * 2f64.ln() + 1e-12);
    }

    #[test]
    fn envelope_direct_evaluation() {
        let cfg = SoftConfig::exact(1.0, Policy::uniform(1, 2)).unwrap();
        let q = SaTable::zeros(1, 2);
        assert_eq!(soft_envelope(&q, &cfg, 0).unwrap(), 0.0);
    }

    #[test]
    fn config_rejects_tiny_alpha_and_bad_tolerance() {
        assert!(matches!(SoftConfig::exact(1e-9, Policy::uniform(1, 2)), Err(OracleError::InvalidAlpha(_))));
        assert!(matches!(SoftConfig::new(1.0, Policy::uniform(1, 2), 0.0, 10), Err(OracleError::InvalidTolerance(_))));
    }

    #[test]
    fn soft_fixed_point_of_constant_reward() {
        let m = one_state(&[1.0, 1.0], 0.5);
        for alpha in [0.01, 0.5, 3.0] {
            let cfg = SoftConfig::exact(alpha, Policy::uniform(1, 2)).unwrap();
            let q = soft_value_iteration(&m, &cfg).unwrap();
            assert!(q.as_slice().iter().all(|v| (v - 2.0).abs() < 1e-11), "{q:?}");
        }
    }

    #[test]
    fn zero_discount_fixed_points_are_rewards() {
        let m = one_state(&[0.3, 0.9], 0.0);
        let cfg = SoftConfig::exact(0.5, Policy::uniform(1, 2)).unwrap();
        assert_eq!(soft_value_iteration(&m, &cfg).unwrap().as_slice(), &[0.3, 0.9]);
        assert_eq!(value_iteration(&m, 1e-12, 10).unwrap().as_slice(), &[0.3, 0.9]);
    }

    #[test]
    fn hard_fixed_point_geometric_series() {
        let m = one_state(&[1.0, 0.0], 0.5);
        let q = value_iteration(&m, 1e-13, 10_000).unwrap();
        assert!((q.get(0, 0) - 2.0).abs() < 1e-12 && (q.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let m = one_state(&[1.0, 0.0], 0.99);
        assert!(matches!(value_iteration(&m, 1e-12, 3), Err(OracleError::NotConverged { iterations: 3, .. })));
    }

    #[test]
    fn soft_policy_of_constant_q_is_behavior() {
        let pi_b = Policy::new(SaTable::from_vec(2, 3, vec![0.2, 0.3, 0.5, 0.0, 0.6, 0.4])).unwrap();
        let cfg = SoftConfig::exact(0.3, pi_b.clone()).unwrap();
        let q = SaTable::from_fn(2, 3, |s, _| s as f64 + 4.0);
        let pi = soft_optimal_policy(&q, &cfg);
        assert!(pi.max_tv_distance(&pi_b) < 1e-15);
        let cfg_hot = SoftConfig::exact(1e6, pi_b.clone()).unwrap();
        let q = SaTable::from_fn(2, 3, |s, a| (s * 3 + a) as f64);
        assert!(soft_optimal_policy(&q, &cfg_hot).max_tv_distance(&pi_b) < 1e-5);
    }

    #[test]
    fn greedy_restricted_to_support() {
        let q = SaTable::from_vec(1, 3, vec![1.0, 1.0, 5.0]);
        let pi_b = Policy::new(SaTable::from_vec(1, 3, vec![0.5, 0.5, 0.0])).unwrap();
        assert_eq!(greedy_policy_on_support(&q, &pi_b).row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(greedy_policy(&q).row(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn perturbation_examples() {
        let m = one_state(&[0.4, 0.8], 0.5);
        let cfg = SoftConfig::exact(0.2, Policy::uniform(1, 2)).unwrap();
        let base = soft_value_iteration(&m, &cfg).unwrap();
        let zero = PerturbationField::new(SaTable::zeros(1, 2)).unwrap();
        assert!(perturbed_soft_q(&m, &cfg, &zero).unwrap().sup_distance(&base) < 1e-11);
        let delta = PerturbationField::new(SaTable::filled(1, 2, 0.3)).unwrap();
        let shifted = perturbed_soft_q(&m, &cfg, &delta).unwrap();
        assert!(shifted.sup_distance(&base.map(|v| v + 0.3 / 0.5)) < 1e-10);
        let hard = value_iteration(&m, 1e-12, 100_000).unwrap();
        let shifted = perturbed_hard_q(&m, &delta, 1e-12).unwrap();
        assert!(shifted.sup_distance(&hard.map(|v| v + 0.6)) < 1e-10);
        assert!(PerturbationField::new(SaTable::filled(1, 2, -0.1)).is_err());
    }
}
