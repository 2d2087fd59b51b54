use nalgebra::{DMatrix, DVector};

use super::{SolveError, SolveResult};
use crate::classes::FunctionClassSpec;
use crate::data::{OfflineDataset, SufficientStats};
use crate::mdp::Policy;
use crate::oracles::{greedy_policy_on_support, Backup};
use crate::table::SaTable;

/// Fitted Q-iteration: `q_{k+1}` is the least-squares fit of
/// `r + γ max_{a′} q_k(s′, a′)` over the class, starting from `q_0 = 0`.
///
/// Tabular classes fit per-pair means and clamp to the box; unvisited pairs
/// are set to 0 and listed in the warnings. Linear classes solve the normal
/// equations (minimum-norm when singular) and project onto the ball.
pub fn fqi_solve(
    data: &OfflineDataset,
    q_class: &FunctionClassSpec,
    iterations: usize,
    gamma: f64,
    pi_b: &Policy,
) -> Result<SolveResult, SolveError> {
    if data.is_empty() {
        return Err(SolveError::EmptyDataset);
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(SolveError::InvalidGamma(gamma));
    }
    let (ns, na) = (data.n_states, data.n_actions);
    q_class.validate(ns, na)?;
    let stats = SufficientStats::from_dataset(data, gamma);
    let mut warnings = Vec::new();
    let unvisited: Vec<(usize, usize)> =
        (0..ns).flat_map(|s| (0..na).map(move |a| (s, a))).filter(|&(s, a)| stats.weight.get(s, a) == 0.0).collect();
    if !unvisited.is_empty() {
        warnings.push(format!("{} unvisited state-action pairs fixed at 0: {:?}", unvisited.len(), unvisited));
    }
    let bound = q_class.sup_bound();
    let mut params = match q_class {
        FunctionClassSpec::Singleton { .. } => Vec::new(),
        _ => vec![0.0; q_class.n_params(ns, na)],
    };
    let mut q = q_class.evaluate(&params, ns, na);
    let mut trace = Vec::with_capacity(iterations);
    let mut diverged = false;
    let mut last_change = 0.0;
    for _ in 0..iterations.max(1) {
        let v = Backup::Hard.envelopes(&q);
        let target = SaTable::from_fn(ns, na, |s, a| {
            if stats.weight.get(s, a) == 0.0 {
                return 0.0;
            }
            let ev: f64 = stats.next_probs(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            stats.mean_reward.get(s, a) + gamma * ev
        });
        params = match q_class {
            FunctionClassSpec::TabularBox { .. } => target.as_slice().to_vec(),
            FunctionClassSpec::LinearBall { features, .. } => {
                let phi = features.matrix();
                let w = DVector::from_column_slice(stats.weight.as_slice());
                let mut wphi = phi.clone();
                for (i, mut row) in wphi.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                let gram: DMatrix<f64> = phi.transpose() * &wphi;
                let rhs = wphi.transpose() * DVector::from_column_slice(target.as_slice());
                let svd = gram.svd(true, true);
                let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
                svd.solve(&rhs, eps).map(|t| t.as_slice().to_vec()).unwrap_or_else(|_| vec![0.0; features.dim()])
            }
            FunctionClassSpec::Singleton { .. } => Vec::new(),
        };
        let raw = q_class.evaluate(&params, ns, na);
        if raw.sup_norm() > 10.0 * bound {
            diverged = true;
        }
        q_class.project(&mut params);
        let next = q_class.evaluate(&params, ns, na);
        last_change = next.sup_distance(&q);
        trace.push(last_change);
        q = next;
        if gamma == 0.0 {
            break;
        }
    }
    if diverged {
        warnings.push(format!("iterates exceeded 10·B_Q = {} before projection", 10.0 * bound));
    }
    let policy = greedy_policy_on_support(&q, pi_b);
    Ok(SolveResult {
        l_hat: SaTable::zeros(ns, na),
        q_hat: q,
        q_params: params,
        policy,
        objective_trace: trace,
        final_saddle_gap_estimate: last_change,
        warnings,
    })
}
