//! Aggregated Bellman residuals and the empirical Lagrangian.
//!
//! For a table `l`, `Σ l(s,a) ḡ(s,a) = E_n[l(s,a)(r + γ·env(q)(s′) − q(s,a))]`
//! where `ḡ(s,a) = w(s,a)(r̄(s,a) + γ Σ p̂(s′|s,a) env(q)(s′) − q(s,a))`.
//! The `_tuples` variants evaluate the same quantities tuple by tuple.

use crate::data::{OfflineDataset, SufficientStats};
use crate::mdp::Policy;
use crate::numeric::pairwise_sum;
use crate::oracles::Backup;
use crate::table::SaTable;

/// `ḡ` from sufficient statistics; zero at pairs of zero weight.
pub fn residual(q: &SaTable, stats: &SufficientStats, backup: Backup<'_>) -> SaTable {
    let v = backup.envelopes(q);
    let g = stats.gamma;
    SaTable::from_fn(q.n_states(), q.n_actions(), |s, a| {
        let w = stats.weight.get(s, a);
        if w == 0.0 {
            return 0.0;
        }
        let ev: f64 = stats.next_probs(s, a).iter().zip(&v).filter(|(&p, _)| p > 0.0).map(|(p, v)| p * v).sum();
        w * (stats.mean_reward.get(s, a) + g * ev - q.get(s, a))
    })
}

/// `ḡ` for the soft backup, computed from the dataset's moments.
pub fn residual_soft(q: &SaTable, data: &OfflineDataset, gamma: f64, alpha: f64, pi_b: &Policy) -> SaTable {
    residual(q, &SufficientStats::from_dataset(data, gamma), Backup::Soft { alpha, pi_b })
}

/// `ḡ` for the hard-max backup, computed from the dataset's moments.
pub fn residual_hard(q: &SaTable, data: &OfflineDataset, gamma: f64) -> SaTable {
    residual(q, &SufficientStats::from_dataset(data, gamma), Backup::Hard)
}

/// `ḡ` accumulated tuple by tuple.
pub fn residual_tuples(q: &SaTable, data: &OfflineDataset, gamma: f64, backup: Backup<'_>) -> SaTable {
    let v = backup.envelopes(q);
    let n = data.len() as f64;
    let mut per_pair: Vec<Vec<f64>> = vec![Vec::new(); q.len()];
    for t in &data.tuples {
        let (s, a) = (t.s as usize, t.a as usize);
        per_pair[q.index(s, a)].push(t.r + gamma * v[t.s_next as usize] - q.get(s, a));
    }
    SaTable::from_vec(q.n_states(), q.n_actions(), per_pair.iter().map(|xs| pairwise_sum(xs) / n).collect())
}

/// Closed-form `max_{0 ≤ l ≤ B_L} Σ l ḡ`: `l̂ = B_L·1[ḡ > 0]`.
pub fn inner_max_box(residuals: &SaTable, b_l: f64) -> (SaTable, f64) {
    let l = residuals.map(|g| if g > 0.0 { b_l } else { 0.0 });
    let value = b_l * pairwise_sum(&residuals.as_slice().iter().map(|&g| g.max(0.0)).collect::<Vec<_>>());
    (l, value)
}

/// `L̂(q, l) = ½ Σ w q² + Σ l ḡ`.
pub fn empirical_lagrangian(q: &SaTable, l: &SaTable, stats: &SufficientStats, backup: Backup<'_>) -> f64 {
    let g = residual(q, stats, backup);
    let pairing: f64 = l.as_slice().iter().zip(g.as_slice()).map(|(l, g)| l * g).sum();
    0.5 * q.weighted_inner(q, &stats.weight) + pairing
}

/// `L̂(q, l)` as a sample average over tuples.
pub fn lagrangian_tuples(q: &SaTable, l: &SaTable, data: &OfflineDataset, gamma: f64, backup: Backup<'_>) -> f64 {
    let v = backup.envelopes(q);
    let terms: Vec<f64> = data
        .tuples
        .iter()
        .map(|t| {
            let (s, a) = (t.s as usize, t.a as usize);
            let qv = q.get(s, a);
            0.5 * qv * qv + l.get(s, a) * (t.r + gamma * v[t.s_next as usize] - qv)
        })
        .collect();
    pairwise_sum(&terms) / data.len() as f64
}

/// `J(q) = ½ Σ w q² + B_L Σ max(0, ḡ)`, the outer objective after the
/// inner maximization over the box.
pub fn outer_objective(q: &SaTable, stats: &SufficientStats, backup: Backup<'_>, b_l: f64) -> f64 {
    let g = residual(q, stats, backup);
    0.5 * q.weighted_inner(q, &stats.weight) + inner_max_box(&g, b_l).1
}
