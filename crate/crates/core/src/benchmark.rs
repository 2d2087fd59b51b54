//! Pinned benchmark instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classes::FeatureMap;
use crate::mdp::{BehaviorSpec, Policy, RewardNoise, TabularMdp};
use crate::table::SaTable;

pub const BENCHMARK_SEED: u64 = 20_240_611;
pub const GAP_SEED: u64 = 7_731;

/// Random transitions: each row puts random mass on three distinct next
/// states.
fn random_transitions(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Vec<f64> {
    let mut p = vec![0.0; ns * na * ns];
    let k = ns.min(3);
    for row in p.chunks_mut(ns) {
        let mut targets: Vec<usize> = Vec::with_capacity(k);
        while targets.len() < k {
            let s = rng.random_range(0..ns);
            if !targets.contains(&s) {
                targets.push(s);
            }
        }
        let w: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        for (s, wi) in targets.into_iter().zip(w) {
            row[s] = wi / total;
        }
    }
    p
}

/// Behavior with every state weighted at least `0.5/S` and every action
/// at least `0.1`.
fn random_behavior(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> BehaviorSpec {
    let raw: Vec<f64> = (0..ns).map(|_| 0.5 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let marginal: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let floor = 0.1;
    let pi = SaTable::from_fn(ns, na, |_, _| rng.random::<f64>());
    let pi = SaTable::from_fn(ns, na, |s, a| {
        let row_sum: f64 = pi.row(s).iter().sum();
        floor + (1.0 - floor * na as f64) * pi.get(s, a) / row_sum
    });
    BehaviorSpec::new(marginal, Policy::new(pi).expect("rows normalized")).expect("valid behavior")
}

/// A random MDP with Bernoulli rewards of random means in `[0, 1]`, uniform
/// `μ0`, and a full-support behavior distribution.
pub fn random_mdp(ns: usize, na: usize, gamma: f64, seed: u64) -> (TabularMdp, BehaviorSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_transitions(&mut rng, ns, na);
    let r = SaTable::from_fn(ns, na, |_, _| rng.random::<f64>());
    let mdp = TabularMdp::new(ns, na, p, r, RewardNoise::TwoPoint, gamma, vec![1.0 / ns as f64; ns], 0.0, 1.0)
        .expect("generated MDP is valid");
    let b = random_behavior(&mut rng, ns, na);
    (mdp, b)
}

/// The 10-state, 3-action benchmark with `γ = 0.9`.
pub fn benchmark_mdp() -> (TabularMdp, BehaviorSpec) {
    random_mdp(10, 3, 0.9, BENCHMARK_SEED)
}

/// An MDP whose optimal Q-function has the same gap `gap` between the best
/// action and every other action at every state.
///
/// Built backwards from `v*`: with `v*(s) = m + δ_s`, rewards
/// `r(s, a) = q*(s, a) − γ E[v*(s′)]` land in `[0, 1]` for `gap ≤ 0.5`.
pub fn gap_mdp(ns: usize, na: usize, gamma: f64, gap: f64, seed: u64) -> (TabularMdp, BehaviorSpec) {
    assert!(gap > 0.0 && gap <= 0.5, "gap must lie in (0, 0.5]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_transitions(&mut rng, ns, na);
    let m = 0.75 / (1.0 - gamma);
    let v: Vec<f64> = (0..ns).map(|_| m + 0.2 * rng.random::<f64>() - 0.1).collect();
    let best: Vec<usize> = (0..ns).map(|_| rng.random_range(0..na)).collect();
    let r = SaTable::from_fn(ns, na, |s, a| {
        let row = &p[(s * na + a) * ns..(s * na + a + 1) * ns];
        let ev: f64 = row.iter().zip(&v).map(|(p, v)| p * v).sum();
        let q = if a == best[s] { v[s] } else { v[s] - gap };
        (q - gamma * ev).clamp(0.0, 1.0)
    });
    let mdp = TabularMdp::new(ns, na, p, r, RewardNoise::TwoPoint, gamma, vec![1.0 / ns as f64; ns], 0.0, 1.0)
        .expect("generated MDP is valid");
    let b = random_behavior(&mut rng, ns, na);
    (mdp, b)
}

/// Context value of each state in the partial-coverage instance.
pub const PARTIAL_COVERAGE_CONTEXTS: [f64; 3] = [0.0, 1.0, 0.75];

/// A one-step (`γ = 0`) problem with three contexts. The data cover
/// contexts 0 and 1 only, while the initial distribution sits on context 2.
/// Rewards are linear in `(1, x)` per action, so a linear class with those
/// features still generalizes to the uncovered context.
pub fn partial_coverage_instance() -> (TabularMdp, BehaviorSpec, FeatureMap) {
    let x = PARTIAL_COVERAGE_CONTEXTS;
    let reward = SaTable::from_fn(3, 2, |s, a| if a == 0 { 0.2 + 0.7 * x[s] } else { 0.7 - 0.2 * x[s] });
    let p: Vec<f64> = (0..3).flat_map(|s| (0..2).flat_map(move |_| (0..3).map(move |sp| if sp == s { 1.0 } else { 0.0 }))).collect();
    let mdp = TabularMdp::new(3, 2, p, reward, RewardNoise::TwoPoint, 0.0, vec![0.0, 0.0, 1.0], 0.0, 1.0)
        .expect("valid instance");
    let b = BehaviorSpec::new(vec![0.5, 0.5, 0.0], Policy::uniform(3, 2)).expect("valid behavior");
    let features = FeatureMap::from_fn(3, 2, 4, |s, a| {
        let mut f = vec![0.0; 4];
        f[2 * a] = 1.0;
        f[2 * a + 1] = x[s];
        f
    })
    .expect("finite features");
    (mdp, b, features)
}
