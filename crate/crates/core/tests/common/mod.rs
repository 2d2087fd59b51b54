//! Independent reference computations for integration tests. Nothing here
//! calls the library's fixed-point or linear-solve code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softq::mdp::{Policy, TabularMdp};
use softq::SaTable;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_table(rng: &mut ChaCha8Rng, ns: usize, na: usize, lo: f64, hi: f64) -> SaTable {
    SaTable::from_fn(ns, na, |_, _| lo + (hi - lo) * rng.random::<f64>())
}

/// A random policy; with `full_support` every action gets mass, otherwise
/// roughly a third of entries are zeroed (keeping one per state).
pub fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize, full_support: bool) -> Policy {
    let mut t = SaTable::from_fn(ns, na, |_, _| 0.05 + rng.random::<f64>());
    if !full_support {
        for s in 0..ns {
            let keep = rng.random_range(0..na);
            for a in 0..na {
                if a != keep && rng.random::<f64>() < 0.33 {
                    t.set(s, a, 0.0);
                }
            }
        }
    }
    for s in 0..ns {
        let z: f64 = t.row(s).iter().sum();
        for a in 0..na {
            let v = t.get(s, a) / z;
            t.set(s, a, v);
        }
    }
    Policy::new(t).unwrap()
}

/// `E[q(s′, π) | s, a]` by explicit loops.
pub fn expected_next(mdp: &TabularMdp, v: &[f64], s: usize, a: usize) -> f64 {
    mdp.next_state_probs(s, a).iter().zip(v).map(|(p, v)| p * v).sum()
}

pub fn state_values(q: &SaTable, pi: &Policy) -> Vec<f64> {
    (0..q.n_states()).map(|s| (0..q.n_actions()).map(|a| pi.prob(s, a) * q.get(s, a)).sum()).collect()
}

/// `Q^π` by repeated application of `r + γ P_π q` from zero.
pub fn iterative_policy_q(mdp: &TabularMdp, pi: &Policy, iters: usize) -> SaTable {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = SaTable::zeros(ns, na);
    for _ in 0..iters {
        let v = state_values(&q, pi);
        q = SaTable::from_fn(ns, na, |s, a| mdp.reward_mean().get(s, a) + mdp.gamma() * expected_next(mdp, &v, s, a));
    }
    q
}

/// `J(π) = Σ μ0 π Q^π` with the iterative `Q^π`.
pub fn iterative_value(mdp: &TabularMdp, pi: &Policy, iters: usize) -> f64 {
    let q = iterative_policy_q(mdp, pi, iters);
    state_values(&q, pi).iter().zip(mdp.mu0()).map(|(v, m)| v * m).sum()
}

/// Discounted state-action occupancy by truncated power series
/// `(1−γ) Σ_t γ^t μ_t`.
pub fn series_occupancy(mdp: &TabularMdp, pi: &Policy, initial: &[f64], iters: usize) -> SaTable {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.gamma();
    let mut cur = SaTable::from_fn(ns, na, |s, a| initial[s] * pi.prob(s, a));
    let mut acc = SaTable::zeros(ns, na);
    let mut w = 1.0 - g;
    for _ in 0..iters {
        acc = acc.zip_map(&cur, |x, y| x + w * y);
        let mut next_state = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                for (sp, p) in mdp.next_state_probs(s, a).iter().enumerate() {
                    next_state[sp] += cur.get(s, a) * p;
                }
            }
        }
        cur = SaTable::from_fn(ns, na, |s, a| next_state[s] * pi.prob(s, a));
        w *= g;
    }
    acc
}

/// Soft envelope without max-shift: `α ln Σ π_b exp(q/α)`.
pub fn naive_envelope(q: &[f64], pi_b: &[f64], alpha: f64) -> f64 {
    alpha * q.iter().zip(pi_b).map(|(q, p)| p * (q / alpha).exp()).sum::<f64>().ln()
}

/// Damped soft value iteration `q ← (1−η) q + η T_α q`.
pub fn damped_soft_vi(mdp: &TabularMdp, pi_b: &Policy, alpha: f64, eta: f64, iters: usize) -> SaTable {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = SaTable::zeros(ns, na);
    for _ in 0..iters {
        let v: Vec<f64> = (0..ns).map(|s| naive_envelope(q.row(s), pi_b.row(s), alpha)).collect();
        q = SaTable::from_fn(ns, na, |s, a| {
            let t = mdp.reward_mean().get(s, a) + mdp.gamma() * expected_next(mdp, &v, s, a);
            (1.0 - eta) * q.get(s, a) + eta * t
        });
    }
    q
}

/// `(Mᵀ x)(s′, a′) = Σ_{s,a} x(s, a) P(s′|s,a) π(a′|s′)`.
pub fn push_forward(mdp: &TabularMdp, pi: &Policy, x: &SaTable) -> SaTable {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut next_state = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            for (sp, p) in mdp.next_state_probs(s, a).iter().enumerate() {
                next_state[sp] += x.get(s, a) * p;
            }
        }
    }
    SaTable::from_fn(ns, na, |s, a| next_state[s] * pi.prob(s, a))
}

/// `(M f)(s, a) = E[f(s′, a′)]` with `a′ ∼ π`.
pub fn one_step(mdp: &TabularMdp, pi: &Policy, f: &SaTable) -> SaTable {
    let v = state_values(f, pi);
    SaTable::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| expected_next(mdp, &v, s, a))
}

/// `⟨x, y⟩_w = Σ w x y` with an explicit loop.
pub fn inner(x: &SaTable, y: &SaTable, w: &SaTable) -> f64 {
    let mut acc = 0.0;
    for s in 0..x.n_states() {
        for a in 0..x.n_actions() {
            acc += w.get(s, a) * x.get(s, a) * y.get(s, a);
        }
    }
    acc
}
