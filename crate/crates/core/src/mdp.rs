//! Exact tabular MDP machinery: validation, policy-induced transition
//! operators, discounted occupancy measures, exact policy values, and the
//! behavior-policy derivatives (flattened policy, density ratios).
//!
//! Every quantity here is computed by dense linear solves, never by
//! sampling. Sizes are capped at `S·A ≤ 10_000`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::SaTable;

/// Input-validation tolerance for probability vectors.
pub const PROB_TOL: f64 = 1e-12;
/// Largest admissible `S·A`.
pub const MAX_STATE_ACTIONS: usize = 10_000;
/// Current version of the MDP JSON document.
pub const MDP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("row not stochastic: transition(s={s}, a={a}, ·) sums to {sum}")]
    RowNotStochastic { s: usize, a: usize, sum: f64 },
    #[error("negative probability {value} at {location}")]
    NegativeProbability { location: String, value: f64 },
    #[error("initial distribution sums to {sum}, expected 1")]
    InitialNotDistribution { sum: f64 },
    #[error("reward below r_min: reward_mean(s={s}, a={a}) = {value} < {r_min}")]
    RewardBelowMin { s: usize, a: usize, value: f64, r_min: f64 },
    #[error("reward above r_max: reward_mean(s={s}, a={a}) = {value} > {r_max}")]
    RewardAboveMax { s: usize, a: usize, value: f64, r_max: f64 },
    #[error("invalid reward range [{r_min}, {r_max}]: need 0 <= r_min <= r_max")]
    InvalidRewardRange { r_min: f64, r_max: f64 },
    #[error("discount factor {0} outside [0, 1)")]
    InvalidGamma(f64),
    #[error("MDP too large: S·A = {0} exceeds {MAX_STATE_ACTIONS}")]
    TooLarge(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported MDP document version {0}")]
    Version(u32),
    #[error("policy row {s} not stochastic: sums to {sum}")]
    PolicyNotStochastic { s: usize, sum: f64 },
    #[error("policy not absolutely continuous w.r.t. behavior at (s={s}, a={a})")]
    NotAbsolutelyContinuous { s: usize, a: usize },
    #[error("behavior policy has empty support at state {0}")]
    EmptySupport(usize),
}

/// Reward noise around `reward_mean`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardNoise {
    /// Realized reward equals its mean.
    Deterministic,
    /// Realized reward is `r_max` with probability
    /// `(mean − r_min)/(r_max − r_min)` and `r_min` otherwise.
    TwoPoint,
}

/// An infinite-horizon discounted MDP with finite state and action spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward_mean: SaTable,
    reward_noise: RewardNoise,
    gamma: f64,
    mu0: Vec<f64>,
    r_min: f64,
    r_max: f64,
}

/// On-disk layout of [`TabularMdp`]. `transition` is nested `s → a → s′`.
#[derive(Serialize, Deserialize)]
struct MdpDocument {
    version: u32,
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward_mean: Vec<Vec<f64>>,
    reward_noise: RewardNoise,
    gamma: f64,
    mu0: Vec<f64>,
    r_min: f64,
    r_max: f64,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = MdpError;

    fn try_from(doc: MdpDocument) -> Result<Self, MdpError> {
        if doc.version != MDP_FORMAT_VERSION {
            return Err(MdpError::Version(doc.version));
        }
        let (ns, na) = (doc.n_states, doc.n_actions);
        if doc.transition.len() != ns || doc.transition.iter().any(|r| r.len() != na || r.iter().any(|p| p.len() != ns)) {
            return Err(MdpError::Shape(format!("transition must be {ns}×{na}×{ns}")));
        }
        let reward_mean = SaTable::from_rows(&doc.reward_mean)
            .filter(|t| t.n_states() == ns && t.n_actions() == na)
            .ok_or_else(|| MdpError::Shape(format!("reward_mean must be {ns}×{na}")))?;
        let transition = doc.transition.into_iter().flatten().flatten().collect();
        TabularMdp::new(ns, na, transition, reward_mean, doc.reward_noise, doc.gamma, doc.mu0, doc.r_min, doc.r_max)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        let transition = (0..m.n_states)
            .map(|s| (0..m.n_actions).map(|a| m.next_state_probs(s, a).to_vec()).collect())
            .collect();
        MdpDocument {
            version: MDP_FORMAT_VERSION,
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition,
            reward_mean: m.reward_mean.to_rows(),
            reward_noise: m.reward_noise,
            gamma: m.gamma,
            mu0: m.mu0,
            r_min: m.r_min,
            r_max: m.r_max,
        }
    }
}

impl TabularMdp {
    /// Builds and validates an MDP. `transition` is flat, indexed
    /// `(s * A + a) * S + s′`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward_mean: SaTable,
        reward_noise: RewardNoise,
        gamma: f64,
        mu0: Vec<f64>,
        r_min: f64,
        r_max: f64,
    ) -> Result<Self, MdpError> {
        let mdp = Self { n_states, n_actions, transition, reward_mean, reward_noise, gamma, mu0, r_min, r_max };
        validate_mdp(&mdp)?;
        Ok(mdp)
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }
    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }
    pub fn reward_mean(&self) -> &SaTable {
        &self.reward_mean
    }
    pub fn reward_noise(&self) -> RewardNoise {
        self.reward_noise
    }
    pub fn r_min(&self) -> f64 {
        self.r_min
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `P(· | s, a)`.
    #[inline]
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// Copy of this MDP with a different initial distribution.
    pub fn with_mu0(&self, mu0: Vec<f64>) -> Result<Self, MdpError> {
        let mut m = self.clone();
        m.mu0 = mu0;
        validate_mdp(&m)?;
        Ok(m)
    }

    /// Copy of this MDP with a different mean-reward table (used for the
    /// perturbed fixed points, which shift rewards by a nonnegative field).
    /// The reward bounds are widened to contain the new table.
    pub fn with_reward_mean(&self, reward_mean: SaTable) -> Result<Self, MdpError> {
        let mut m = self.clone();
        let lo = reward_mean.as_slice().iter().copied().fold(m.r_min, f64::min);
        let hi = reward_mean.as_slice().iter().copied().fold(m.r_max, f64::max);
        m.r_min = lo.max(0.0);
        m.r_max = hi;
        m.reward_mean = reward_mean;
        validate_mdp(&m)?;
        Ok(m)
    }

    /// Probability that a two-point reward takes the value `r_max`.
    pub fn reward_high_probability(&self, s: usize, a: usize) -> f64 {
        let span = self.r_max - self.r_min;
        if span <= 0.0 {
            return 0.0;
        }
        ((self.reward_mean.get(s, a) - self.r_min) / span).clamp(0.0, 1.0)
    }
}

/// A stochastic policy `π(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SaTable", into = "SaTable")]
pub struct Policy {
    probs: SaTable,
}

impl TryFrom<SaTable> for Policy {
    type Error = MdpError;
    fn try_from(t: SaTable) -> Result<Self, MdpError> {
        Policy::new(t)
    }
}

impl From<Policy> for SaTable {
    fn from(p: Policy) -> SaTable {
        p.probs
    }
}

impl Policy {
    pub fn new(probs: SaTable) -> Result<Self, MdpError> {
        for s in 0..probs.n_states() {
            let row = probs.row(s);
            if let Some((a, &p)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
                return Err(MdpError::NegativeProbability { location: format!("policy(s={s}, a={a})"), value: p });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(MdpError::PolicyNotStochastic { s, sum });
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: SaTable::filled(n_states, n_actions, 1.0 / n_actions as f64) }
    }

    /// Deterministic policy choosing `actions[s]` at state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let probs = SaTable::from_fn(actions.len(), n_actions, |s, a| if actions[s] == a { 1.0 } else { 0.0 });
        Self { probs }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs.get(s, a)
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        self.probs.row(s)
    }

    pub fn table(&self) -> &SaTable {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }

    /// `true` iff `π(a|s) > 0`.
    #[inline]
    pub fn supports(&self, s: usize, a: usize) -> bool {
        self.probs.get(s, a) > 0.0
    }

    /// Total-variation distance `½ Σ_s Σ_a |π − π′|`, maximized over states.
    pub fn max_tv_distance(&self, other: &Policy) -> f64 {
        (0..self.n_states())
            .map(|s| 0.5 * self.row(s).iter().zip(other.row(s)).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Errors unless `π(a|s) > 0 ⇒ other(a|s) > 0` everywhere.
    pub fn check_absolutely_continuous(&self, other: &Policy) -> Result<(), MdpError> {
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                if self.supports(s, a) && !other.supports(s, a) {
                    return Err(MdpError::NotAbsolutelyContinuous { s, a });
                }
            }
        }
        Ok(())
    }
}

/// The data-generating distribution `P_b(s, a) = P_b(s) π_b(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub state_marginal: Vec<f64>,
    pub behavior_policy: Policy,
}

impl BehaviorSpec {
    pub fn new(state_marginal: Vec<f64>, behavior_policy: Policy) -> Result<Self, MdpError> {
        let b = Self { state_marginal, behavior_policy };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        if self.state_marginal.len() != self.behavior_policy.n_states() {
            return Err(MdpError::Shape("state_marginal length differs from behavior policy".into()));
        }
        check_distribution(&self.state_marginal, "state_marginal")?;
        for s in 0..self.behavior_policy.n_states() {
            if !self.behavior_policy.row(s).iter().any(|&p| p > 0.0) {
                return Err(MdpError::EmptySupport(s));
            }
        }
        Ok(())
    }

    /// Checks that this spec is shaped for `mdp`.
    pub fn validate_for(&self, mdp: &TabularMdp) -> Result<(), MdpError> {
        self.validate()?;
        if self.behavior_policy.n_states() != mdp.n_states() || self.behavior_policy.n_actions() != mdp.n_actions() {
            return Err(MdpError::Shape("behavior spec does not match MDP dimensions".into()));
        }
        Ok(())
    }

    /// The joint table `P_b(s, a)`.
    pub fn joint(&self) -> SaTable {
        let pi = &self.behavior_policy;
        SaTable::from_fn(pi.n_states(), pi.n_actions(), |s, a| self.state_marginal[s] * pi.prob(s, a))
    }

    /// Membership in `(S × A)_b`.
    #[inline]
    pub fn in_support(&self, s: usize, a: usize) -> bool {
        self.state_marginal[s] > 0.0 && self.behavior_policy.supports(s, a)
    }
}

/// Discounted state-action occupancy `d_{π, initial}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub dist: SaTable,
    pub generating_policy: Policy,
    pub initial: Vec<f64>,
}

impl OccupancyMeasure {
    /// State marginal `d(s) = Σ_a d(s, a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        (0..self.dist.n_states()).map(|s| self.dist.row(s).iter().sum()).collect()
    }
}

fn check_distribution(p: &[f64], name: &str) -> Result<(), MdpError> {
    if let Some((i, &v)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(MdpError::NegativeProbability { location: format!("{name}[{i}]"), value: v });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(MdpError::InitialNotDistribution { sum });
    }
    Ok(())
}

/// Returns `Ok(())` iff all structural invariants of `mdp` hold; otherwise
/// reports the first violation found, with indices.
pub fn validate_mdp(mdp: &TabularMdp) -> Result<(), MdpError> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if ns == 0 || na == 0 {
        return Err(MdpError::Shape("n_states and n_actions must be positive".into()));
    }
    if ns * na > MAX_STATE_ACTIONS {
        return Err(MdpError::TooLarge(ns * na));
    }
    if mdp.transition.len() != ns * na * ns {
        return Err(MdpError::Shape(format!("transition has {} entries, expected {}", mdp.transition.len(), ns * na * ns)));
    }
    if mdp.reward_mean.n_states() != ns || mdp.reward_mean.n_actions() != na {
        return Err(MdpError::Shape(format!("reward_mean must be {ns}×{na}")));
    }
    if mdp.mu0.len() != ns {
        return Err(MdpError::Shape(format!("mu0 must have {ns} entries")));
    }
    if !(0.0..1.0).contains(&mdp.gamma) {
        return Err(MdpError::InvalidGamma(mdp.gamma));
    }
    if !(mdp.r_min >= 0.0 && mdp.r_max >= mdp.r_min && mdp.r_max.is_finite()) {
        return Err(MdpError::InvalidRewardRange { r_min: mdp.r_min, r_max: mdp.r_max });
    }
    for s in 0..ns {
        for a in 0..na {
            let row = mdp.next_state_probs(s, a);
            if let Some((sp, &p)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
                return Err(MdpError::NegativeProbability { location: format!("transition(s={s}, a={a}, s'={sp})"), value: p });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(MdpError::RowNotStochastic { s, a, sum });
            }
            let r = mdp.reward_mean.get(s, a);
            if !(r >= mdp.r_min) {
                return Err(MdpError::RewardBelowMin { s, a, value: r, r_min: mdp.r_min });
            }
            if !(r <= mdp.r_max) {
                return Err(MdpError::RewardAboveMax { s, a, value: r, r_max: mdp.r_max });
            }
        }
    }
    check_distribution(&mdp.mu0, "mu0")
}

fn check_policy_shape(mdp: &TabularMdp, pi: &Policy) {
    assert!(
        pi.n_states() == mdp.n_states && pi.n_actions() == mdp.n_actions,
        "policy shape {}×{} does not match MDP {}×{}",
        pi.n_states(),
        pi.n_actions(),
        mdp.n_states,
        mdp.n_actions
    );
}

/// The `(S·A) × (S·A)` matrix `M[(s,a),(s′,a′)] = P(s′|s,a) π(a′|s′)`.
///
/// `M q` is the one-step expectation `E[q(s′, a′) | s, a]` under `π`;
/// `Mᵀ d` pushes a state-action distribution forward one step.
pub fn policy_transition(mdp: &TabularMdp, pi: &Policy) -> DMatrix<f64> {
    check_policy_shape(mdp, pi);
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n = ns * na;
    let mut m = DMatrix::zeros(n, n);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            for (sp, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for ap in 0..na {
                    m[(row, sp * na + ap)] = p * pi.prob(sp, ap);
                }
            }
        }
    }
    m
}

/// Solves `(I − γ·op) x = rhs` by dense LU.
fn resolvent_solve(op: DMatrix<f64>, gamma: f64, rhs: DVector<f64>) -> DVector<f64> {
    let n = op.nrows();
    let a = DMatrix::identity(n, n) - op * gamma;
    a.lu().solve(&rhs).expect("I − γM is nonsingular for γ < 1")
}

/// `μ̃(s, a) = initial(s) π(a | s)`.
pub fn initial_state_action(initial: &[f64], pi: &Policy) -> SaTable {
    SaTable::from_fn(pi.n_states(), pi.n_actions(), |s, a| initial[s] * pi.prob(s, a))
}

/// Discounted occupancy `d = (1−γ)(I − γMᵀ)^{-1} μ̃` started from the
/// state distribution `initial`.
pub fn occupancy(mdp: &TabularMdp, pi: &Policy, initial: &[f64]) -> OccupancyMeasure {
    assert_eq!(initial.len(), mdp.n_states, "initial distribution length");
    let mu = initial_state_action(initial, pi);
    occupancy_from_pairs(mdp, pi, &mu, initial.to_vec())
}

/// Occupancy started from an arbitrary state-action distribution `mu`
/// (the first action is drawn from `mu`, later ones from `pi`).
pub fn occupancy_from_pairs(mdp: &TabularMdp, pi: &Policy, mu: &SaTable, initial: Vec<f64>) -> OccupancyMeasure {
    let m = policy_transition(mdp, pi);
    let g = mdp.gamma;
    let rhs = DVector::from_iterator(mu.len(), mu.as_slice().iter().map(|v| (1.0 - g) * v));
    let reach = reachable_pairs(&m, mu.as_slice());
    let d = resolvent_solve(m.transpose(), g, rhs);
    let dist = d.iter().zip(&reach).map(|(v, &r)| if r { v.max(0.0) } else { 0.0 }).collect();
    OccupancyMeasure {
        dist: SaTable::from_vec(mdp.n_states, mdp.n_actions, dist),
        generating_policy: pi.clone(),
        initial,
    }
}

/// Pairs reachable from the support of `mu` along positive entries of `m`.
/// Used to keep exact zeros in occupancies despite round-off in the solve.
fn reachable_pairs(m: &DMatrix<f64>, mu: &[f64]) -> Vec<bool> {
    let n = mu.len();
    let mut seen: Vec<bool> = mu.iter().map(|&v| v > 0.0).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && m[(i, j)] > 0.0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// `Q^π`, the solution of `(I − γ P_π) Q = reward_mean`.
pub fn policy_q(mdp: &TabularMdp, pi: &Policy) -> SaTable {
    policy_q_for_reward(mdp, pi, mdp.reward_mean.as_slice())
}

pub(crate) fn policy_q_for_reward(mdp: &TabularMdp, pi: &Policy, reward: &[f64]) -> SaTable {
    let m = policy_transition(mdp, pi);
    let q = resolvent_solve(m, mdp.gamma, DVector::from_column_slice(reward));
    SaTable::from_vec(mdp.n_states, mdp.n_actions, q.as_slice().to_vec())
}

/// `J(π) = Σ_{s,a} μ0(s) π(a|s) Q^π(s,a)`.
pub fn policy_value(mdp: &TabularMdp, pi: &Policy) -> f64 {
    let q = policy_q(mdp, pi);
    let mut v = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            v += mdp.mu0[s] * pi.prob(s, a) * q.get(s, a);
        }
    }
    v
}

/// KL-regularized value
/// `J_α(π) = (1−γ)^{-1} E_{d_{π,μ0}}[r − α log(π/π_b)]`.
pub fn regularized_value(mdp: &TabularMdp, pi: &Policy, pi_b: &Policy, alpha: f64) -> Result<f64, MdpError> {
    pi.check_absolutely_continuous(pi_b)?;
    let d = occupancy(mdp, pi, &mdp.mu0);
    let mut total = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let w = d.dist.get(s, a);
            if w == 0.0 || !pi.supports(s, a) {
                continue;
            }
            let kl = if alpha == 0.0 { 0.0 } else { alpha * (pi.prob(s, a) / pi_b.prob(s, a)).ln() };
            total += w * (mdp.reward_mean.get(s, a) - kl);
        }
    }
    Ok(total / (1.0 - mdp.gamma))
}

/// `π^◇_b`: uniform over `{a : π_b(a|s) > 0}` at every state.
pub fn flattened_policy(pi_b: &Policy) -> Result<Policy, MdpError> {
    let (ns, na) = (pi_b.n_states(), pi_b.n_actions());
    let mut t = SaTable::zeros(ns, na);
    for s in 0..ns {
        let k = pi_b.row(s).iter().filter(|&&p| p > 0.0).count();
        if k == 0 {
            return Err(MdpError::EmptySupport(s));
        }
        for a in 0..na {
            if pi_b.supports(s, a) {
                t.set(s, a, 1.0 / k as f64);
            }
        }
    }
    Ok(Policy { probs: t })
}

/// Elementwise ratio `d / P_b` with the conventions `x/0 = ∞` for `x ≠ 0`
/// and `0/0 = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityRatio {
    pub ratio: SaTable,
    /// `‖w‖_∞` over all of `S × A` (may be infinite).
    #[serde(with = "crate::table::extended_f64")]
    pub sup: f64,
    /// `‖w‖_{∞,b}`, restricted to the support of `P_b`.
    #[serde(with = "crate::table::extended_f64")]
    pub sup_on_support: f64,
}

/// Ratio of two state-action tables under the `a/0` conventions.
pub fn ratio_with_conventions(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn density_ratio(d: &OccupancyMeasure, b: &BehaviorSpec) -> DensityRatio {
    table_density_ratio(&d.dist, &b.joint())
}

pub(crate) fn table_density_ratio(num: &SaTable, den: &SaTable) -> DensityRatio {
    let ratio = num.zip_map(den, ratio_with_conventions);
    let sup = ratio.as_slice().iter().copied().fold(0.0, f64::max);
    let sup_on_support = ratio
        .as_slice()
        .iter()
        .zip(den.as_slice())
        .filter(|(_, &p)| p > 0.0)
        .map(|(&w, _)| w)
        .fold(0.0, f64::max);
    DensityRatio { ratio, sup, sup_on_support }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state(rewards: &[f64], gamma: f64) -> TabularMdp {
        let na = rewards.len();
        TabularMdp::new(
            1,
            na,
            vec![1.0; na],
            SaTable::from_vec(1, na, rewards.to_vec()),
            RewardNoise::Deterministic,
            gamma,
            vec![1.0],
            0.0,
            rewards.iter().copied().fold(0.0, f64::max),
        )
        .unwrap()
    }

    fn two_state() -> TabularMdp {
        // a=0 stays, a=1 switches.
        let transition = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        TabularMdp::new(
            2,
            2,
            transition,
            SaTable::from_vec(2, 2, vec![0.0, 1.0, 0.5, 0.25]),
            RewardNoise::TwoPoint,
            0.9,
            vec![0.5, 0.5],
            0.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn validate_accepts_stochastic_rows() {
        assert!(validate_mdp(&two_state()).is_ok());
    }

    #[test]
    fn validate_reports_non_stochastic_row() {
        let mut m = two_state();
        m.transition[0] = 0.9;
        let err = validate_mdp(&m).unwrap_err();
        assert!(matches!(err, MdpError::RowNotStochastic { s: 0, a: 0, .. }));
        assert!(err.to_string().contains("row not stochastic"));
    }

    #[test]
    fn validate_reports_reward_below_min() {
        let mut m = two_state();
        m.reward_mean.set(1, 1, -0.1);
        let err = validate_mdp(&m).unwrap_err();
        assert!(matches!(err, MdpError::RewardBelowMin { s: 1, a: 1, .. }));
        assert!(err.to_string().contains("reward below r_min"));
    }

    #[test]
    fn validate_rejects_negative_r_min_and_bad_gamma() {
        let mut m = two_state();
        m.r_min = -1.0;
        assert!(matches!(validate_mdp(&m), Err(MdpError::InvalidRewardRange { .. })));
        let mut m = two_state();
        m.gamma = 1.0;
        assert!(matches!(validate_mdp(&m), Err(MdpError::InvalidGamma(_))));
    }

    #[test]
    fn json_document_round_trip_and_version_check() {
        let m = two_state();
        let js = serde_json::to_string(&m).unwrap();
        assert!(js.contains("\"version\":1"));
        assert!(js.contains("\"kind\":\"two_point\""));
        let back: TabularMdp = serde_json::from_str(&js).unwrap();
        assert_eq!(back, m);
        let bad = js.replace("\"version\":1", "\"version\":7");
        assert!(serde_json::from_str::<TabularMdp>(&bad).is_err());
    }

    #[test]
    fn one_state_transition_rows_are_the_policy() {
        let m = one_state(&[1.0, 0.0, 0.5], 0.5);
        let pi = Policy::new(SaTable::from_vec(1, 3, vec![0.2, 0.3, 0.5])).unwrap();
        let op = policy_transition(&m, &pi);
        for r in 0..3 {
            assert_eq!(op.row(r).iter().copied().collect::<Vec<_>>(), vec![0.2, 0.3, 0.5]);
        }
    }

    #[test]
    fn deterministic_chain_gives_zero_one_matrix() {
        let m = two_state();
        let pi = Policy::deterministic(2, &[1, 0]);
        let op = policy_transition(&m, &pi);
        for v in op.iter() {
            assert!(*v == 0.0 || *v == 1.0);
        }
        for r in 0..4 {
            assert_eq!(op.row(r).sum(), 1.0);
        }
    }

    #[test]
    fn single_state_occupancy_is_the_policy() {
        let m = one_state(&[1.0, 0.0], 0.7);
        let pi = Policy::new(SaTable::from_vec(1, 2, vec![0.3, 0.7])).unwrap();
        let d = occupancy(&m, &pi, &[1.0]);
        assert!((d.dist.get(0, 0) - 0.3).abs() < 1e-12);
        assert!((d.dist.get(0, 1) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_occupancy_is_initial_pairs() {
        let mut m = two_state();
        m.gamma = 0.0;
        let pi = Policy::uniform(2, 2);
        let d = occupancy(&m, &pi, &[0.25, 0.75]);
        assert_eq!(d.dist.as_slice(), &[0.125, 0.125, 0.375, 0.375]);
    }

    #[test]
    fn geometric_series_q_and_value() {
        let m = one_state(&[1.0], 0.5);
        let pi = Policy::uniform(1, 1);
        assert!((policy_q(&m, &pi).get(0, 0) - 2.0).abs() < 1e-12);
        assert!((policy_value(&m, &pi) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_q_is_reward() {
        let mut m = two_state();
        m.gamma = 0.0;
        let q = policy_q(&m, &Policy::uniform(2, 2));
        assert_eq!(q.as_slice(), m.reward_mean.as_slice());
    }

    #[test]
    fn zero_reward_zero_value() {
        let mut m = two_state();
        m.reward_mean = SaTable::zeros(2, 2);
        assert_eq!(policy_value(&m, &Policy::uniform(2, 2)), 0.0);
    }

    #[test]
    fn regularized_value_special_cases() {
        let m = two_state();
        let pi_b = Policy::uniform(2, 2);
        let pi = Policy::new(SaTable::from_vec(2, 2, vec![0.9, 0.1, 0.4, 0.6])).unwrap();
        let j = policy_value(&m, &pi);
        assert!((regularized_value(&m, &pi, &pi_b, 0.0).unwrap() - j).abs() < 1e-10);
        let jb = policy_value(&m, &pi_b);
        assert!((regularized_value(&m, &pi_b, &pi_b, 0.7).unwrap() - jb).abs() < 1e-10);
        assert!(regularized_value(&m, &pi, &pi_b, 0.3).unwrap() <= j);
    }

    #[test]
    fn regularized_value_rejects_support_violation() {
        let m = two_state();
        let pi_b = Policy::deterministic(2, &[0, 0]);
        let pi = Policy::uniform(2, 2);
        let err = regularized_value(&m, &pi, &pi_b, 0.1).unwrap_err();
        assert!(err.to_string().contains("not absolutely continuous"));
    }

    #[test]
    fn flattened_policy_examples() {
        let u = Policy::uniform(2, 3);
        assert_eq!(flattened_policy(&u).unwrap(), u);
        let p = Policy::new(SaTable::from_vec(1, 2, vec![0.9, 0.1])).unwrap();
        assert_eq!(flattened_policy(&p).unwrap().row(0), &[0.5, 0.5]);
        let p = Policy::new(SaTable::from_vec(1, 3, vec![0.7, 0.3, 0.0])).unwrap();
        assert_eq!(flattened_policy(&p).unwrap().row(0), &[0.5, 0.5, 0.0]);
        let bad = Policy { probs: SaTable::zeros(1, 2) };
        assert!(matches!(flattened_policy(&bad), Err(MdpError::EmptySupport(0))));
    }

    #[test]
    fn density_ratio_conventions() {
        let b = BehaviorSpec::new(vec![1.0, 0.0], Policy::uniform(2, 2)).unwrap();
        let d = OccupancyMeasure {
            dist: SaTable::from_vec(2, 2, vec![0.5, 0.3, 0.2, 0.0]),
            generating_policy: Policy::uniform(2, 2),
            initial: vec![1.0, 0.0],
        };
        let w = density_ratio(&d, &b);
        assert_eq!(w.ratio.as_slice(), &[1.0, 0.6, f64::INFINITY, 0.0]);
        assert_eq!(w.sup, f64::INFINITY);
        assert_eq!(w.sup_on_support, 1.0);
        let same = OccupancyMeasure { dist: b.joint(), ..d };
        assert!(density_ratio(&same, &b).ratio.as_slice().iter().zip(b.joint().as_slice()).all(|(&w, &p)| if p > 0.0 { w == 1.0 } else { w == 0.0 }));
    }
}
