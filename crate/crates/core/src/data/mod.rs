//! Offline datasets of i.i.d. transitions `(s, a, r, s′)` with
//! `(s, a) ∼ P_b`, and their empirical moments.

mod io;
pub mod rng;

pub use io::{read_dataset, write_csv, write_dataset};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mdp::{BehaviorSpec, MdpError, RewardNoise, TabularMdp};
use crate::numeric::pairwise_sum;
use crate::table::SaTable;

const CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empirical mean of an empty dataset")]
    Empty,
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: u32,
    pub a: u32,
    pub r: f64,
    pub s_next: u32,
}

/// Where a dataset came from: enough to regenerate it bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the MDP's canonical JSON.
    pub mdp_hash: String,
    pub behavior: BehaviorSpec,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub n_states: usize,
    pub n_actions: usize,
    pub tuples: Vec<Transition>,
    pub provenance: Provenance,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

pub fn mdp_hash(mdp: &TabularMdp) -> String {
    let bytes = serde_json::to_vec(mdp).expect("MDP serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Draws `n` tuples. Tuple `i` depends only on `(seed, stream, i)`.
pub fn sample_dataset(mdp: &TabularMdp, b: &BehaviorSpec, n: usize, seed: u64, stream: u64) -> Result<OfflineDataset, DataError> {
    b.validate_for(mdp)?;
    let mut tuples = vec![Transition { s: 0, a: 0, r: 0.0, s_next: 0 }; n];
    tuples.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut rng = rng::tuple_stream(seed, stream, (c * CHUNK) as u64);
        for t in chunk.iter_mut() {
            *t = draw_tuple(mdp, b, &mut rng);
        }
    });
    Ok(OfflineDataset {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        tuples,
        provenance: Provenance { mdp_hash: mdp_hash(mdp), behavior: b.clone(), seed, stream },
    })
}

fn draw_tuple(mdp: &TabularMdp, b: &BehaviorSpec, g: &mut rand_chacha::ChaCha8Rng) -> Transition {
    let (u_s, u_a, u_r, u_n) = (rng::uniform(g), rng::uniform(g), rng::uniform(g), rng::uniform(g));
    let s = rng::categorical(&b.state_marginal, u_s);
    let a = rng::categorical(b.behavior_policy.row(s), u_a);
    let r = match mdp.reward_noise() {
        RewardNoise::Deterministic => mdp.reward_mean().get(s, a),
        RewardNoise::TwoPoint => {
            if u_r < mdp.reward_high_probability(s, a) {
                mdp.r_max()
            } else {
                mdp.r_min()
            }
        }
    };
    let s_next = rng::categorical(mdp.next_state_probs(s, a), u_n);
    Transition { s: s as u32, a: a as u32, r, s_next: s_next as u32 }
}

/// `E_n[f]`, summed pairwise.
pub fn empirical_mean(data: &OfflineDataset, f: impl Fn(&Transition) -> f64 + Sync) -> Result<f64, DataError> {
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    let vals: Vec<f64> = data.tuples.par_iter().map(&f).collect();
    Ok(pairwise_sum(&vals) / data.len() as f64)
}

/// Per-pair counts, reward means and next-state histograms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMoments {
    pub n: usize,
    pub counts: Vec<u64>,
    /// Mean reward at visited pairs, 0 elsewhere.
    pub mean_reward: SaTable,
    /// Next-state counts, indexed `(s·A + a)·S + s′`.
    pub next_counts: Vec<u64>,
    n_states: usize,
    n_actions: usize,
}

impl EmpiricalMoments {
    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.n_actions + a]
    }

    /// Empirical `P̂(· | s, a)`; all zeros at unvisited pairs.
    pub fn next_distribution(&self, s: usize, a: usize) -> Vec<f64> {
        let i = s * self.n_actions + a;
        let c = self.counts[i];
        let row = &self.next_counts[i * self.n_states..(i + 1) * self.n_states];
        if c == 0 {
            return vec![0.0; self.n_states];
        }
        row.iter().map(|&k| k as f64 / c as f64).collect()
    }

    pub fn visited(&self, s: usize, a: usize) -> bool {
        self.count(s, a) > 0
    }
}

pub fn moments(data: &OfflineDataset) -> EmpiricalMoments {
    let (ns, na) = (data.n_states, data.n_actions);
    let mut counts = vec![0u64; ns * na];
    let mut next_counts = vec![0u64; ns * na * ns];
    let mut rewards: Vec<Vec<f64>> = vec![Vec::new(); ns * na];
    for t in &data.tuples {
        let i = t.s as usize * na + t.a as usize;
        counts[i] += 1;
        next_counts[i * ns + t.s_next as usize] += 1;
        rewards[i].push(t.r);
    }
    let mean_reward = SaTable::from_vec(
        ns,
        na,
        rewards.iter().map(|r| if r.is_empty() { 0.0 } else { pairwise_sum(r) / r.len() as f64 }).collect(),
    );
    EmpiricalMoments { n: data.len(), counts, mean_reward, next_counts, n_states: ns, n_actions: na }
}

/// The data the minimax objectives actually depend on: pair weights
/// `w(s, a)`, mean rewards `r̄(s, a)` and next-state distributions
/// `p̂(· | s, a)`. Either empirical (from moments) or exact (population).
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStats {
    pub weight: SaTable,
    pub mean_reward: SaTable,
    /// Indexed `(s·A + a)·S + s′`.
    pub next: Vec<f64>,
    pub gamma: f64,
}

impl SufficientStats {
    pub fn from_moments(m: &EmpiricalMoments, gamma: f64) -> Self {
        let (ns, na) = (m.n_states, m.n_actions);
        let n = m.n.max(1) as f64;
        let weight = SaTable::from_vec(ns, na, m.counts.iter().map(|&c| c as f64 / n).collect());
        let mut next = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let i = s * na + a;
                next[i * ns..(i + 1) * ns].copy_from_slice(&m.next_distribution(s, a));
            }
        }
        Self { weight, mean_reward: m.mean_reward.clone(), next, gamma }
    }

    pub fn from_dataset(data: &OfflineDataset, gamma: f64) -> Self {
        Self::from_moments(&moments(data), gamma)
    }

    /// Exact expectations under `(P_b, π_b, r, P)`.
    pub fn population(mdp: &TabularMdp, b: &BehaviorSpec) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut next = Vec::with_capacity(ns * na * ns);
        for s in 0..ns {
            for a in 0..na {
                next.extend_from_slice(mdp.next_state_probs(s, a));
            }
        }
        Self { weight: b.joint(), mean_reward: mdp.reward_mean().clone(), next, gamma: mdp.gamma() }
    }

    pub fn n_states(&self) -> usize {
        self.weight.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.weight.n_actions()
    }

    pub fn next_probs(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.n_states();
        let i = s * self.n_actions() + a;
        &self.next[i * ns..(i + 1) * ns]
    }
}
