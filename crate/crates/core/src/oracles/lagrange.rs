use nalgebra::DVector;

use super::{greedy_policy, soft_optimal_policy, soft_value_iteration, value_iteration, OracleError, SoftConfig, DEFAULT_MAX_ITERATIONS};
use crate::mdp::{density_ratio, occupancy, occupancy_from_pairs, policy_transition, BehaviorSpec, Policy, TabularMdp};
use crate::table::SaTable;

/// Multiplier `l` solving `P_b ⊙ l − γ Mᵀ(P_b ⊙ l) = P_b ⊙ q` for the
/// policy `pi`, set to zero off the support of `P_b`.
///
/// Characterized by `⟨l, (I − γM) f⟩_{P_b} = ⟨q, f⟩_{P_b}` for all `f`.
/// Errors if `d_{π,P_b}` puts mass where `P_b` does not.
pub fn lagrange_multiplier(mdp: &TabularMdp, b: &BehaviorSpec, q: &SaTable, pi: &Policy) -> Result<SaTable, OracleError> {
    b.validate_for(mdp)?;
    let d = occupancy(mdp, pi, &b.state_marginal);
    let ratio = density_ratio(&d, b);
    if !ratio.sup.is_finite() {
        return Err(OracleError::CoverageViolation { ratio: ratio.sup });
    }
    let pb = b.joint();
    let m = policy_transition(mdp, pi);
    let n = pb.len();
    let a = nalgebra::DMatrix::identity(n, n) - m.transpose() * mdp.gamma();
    let rhs = DVector::from_iterator(n, pb.as_slice().iter().zip(q.as_slice()).map(|(p, q)| p * q));
    let x = a.lu().solve(&rhs).expect("I − γMᵀ is nonsingular for γ < 1");
    let l = pb.as_slice().iter().zip(x.iter()).map(|(&p, &x)| if p > 0.0 { x / p } else { 0.0 }).collect();
    Ok(SaTable::from_vec(mdp.n_states(), mdp.n_actions(), l))
}

/// `l*_α`, the multiplier of the soft problem at its saddle point.
pub fn lagrange_soft(mdp: &TabularMdp, b: &BehaviorSpec, cfg: &SoftConfig) -> Result<SaTable, OracleError> {
    let q = soft_value_iteration(mdp, cfg)?;
    let pi = soft_optimal_policy(&q, cfg);
    lagrange_multiplier(mdp, b, &q, &pi)
}

/// `l*`, the multiplier of the hard-max problem, for the greedy policy of
/// `q*` (ties to the lowest action index).
pub fn lagrange_hard(mdp: &TabularMdp, b: &BehaviorSpec, tolerance: f64) -> Result<SaTable, OracleError> {
    let q = value_iteration(mdp, tolerance, DEFAULT_MAX_ITERATIONS)?;
    let pi = greedy_policy(&q);
    lagrange_multiplier(mdp, b, &q, &pi)
}

/// Upper bound `‖q‖_∞ (1−γ)^{-1} ‖d̃/P_b‖_∞` on `‖l‖_∞`, where `d̃` is the
/// occupancy of `pi` started from state-action pairs drawn from `P_b`.
///
/// Infinite when `d̃` leaves the support of `P_b`.
pub fn lagrange_norm_bound(mdp: &TabularMdp, b: &BehaviorSpec, q: &SaTable, pi: &Policy) -> f64 {
    let pb = b.joint();
    let d = occupancy_from_pairs(mdp, pi, &pb, b.state_marginal.clone());
    let ratio = crate::mdp::table_density_ratio(&d.dist, &pb);
    if q.sup_norm() == 0.0 {
        return 0.0;
    }
    q.sup_norm() / (1.0 - mdp.gamma()) * ratio.sup
}
