//! Log-barrier interior-point method for the outer problem
//! `min_q ½ Σ w q² + B_L Σ max(0, ḡ_q)` with a box L-class.
//!
//! Epigraph form over `z = (x, v, t)`:
//!
//! ```text
//! min  ½ Σ_y w_y q_y² + B_L Σ_y t_y
//! s.t. w_y (r̄_y + γ Σ_{s′} p̂(s′|y) v_{s′} − q_y) ≤ t_y,   t_y ≥ 0
//!      env(q)(s) ≤ v_s                 (soft: one convex constraint per s;
//!                                        hard: q(s, a) ≤ v_s for every a)
//!      x in the class                  (box or Euclidean ball)
//! ```
//!
//! with `q = x` (tabular) or `q = Φx` (linear). The multipliers of the
//! residual constraints are the Lagrange multipliers `l̂` of the saddle
//! problem.

use nalgebra::{DMatrix, DVector};

use super::{outer_objective, Partial};
use crate::classes::FunctionClassSpec;
use crate::data::SufficientStats;
use crate::oracles::Backup;
use crate::table::SaTable;

const MU: f64 = 10.0;
const MAX_CENTERING_STEPS: usize = 200;
const MAX_ROUNDS: usize = 80;

struct Problem<'a> {
    stats: &'a SufficientStats,
    backup: Backup<'a>,
    class: &'a FunctionClassSpec,
    b_l: f64,
    ns: usize,
    na: usize,
    n_params: usize,
    /// Flat indices of pairs with positive weight.
    pairs: Vec<usize>,
    /// States reachable as `s′` from a weighted pair, with their slot in `v`.
    next_states: Vec<usize>,
    v_slot: Vec<usize>,
}

/// Accumulates `τ f0 − Σ log(−f_i)` and, optionally, its derivatives.
struct Acc {
    value: f64,
    derivs: bool,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
    feasible: bool,
}

impl Acc {
    fn new(n: usize, derivs: bool) -> Self {
        let hess = if derivs { DMatrix::zeros(n, n) } else { DMatrix::zeros(0, 0) };
        Self { value: 0.0, derivs, grad: vec![0.0; if derivs { n } else { 0 }], hess, feasible: true }
    }

    /// Barrier for `f ≤ 0` with sparse gradient `a`. Returns `1/(−f)`.
    fn barrier(&mut self, f: f64, a: &[(usize, f64)]) -> f64 {
        if !(f < 0.0) {
            self.feasible = false;
            return 0.0;
        }
        let inv = 1.0 / (-f);
        self.value -= (-f).ln();
        if self.derivs {
            for &(i, ai) in a {
                self.grad[i] += ai * inv;
            }
            let inv2 = inv * inv;
            for &(i, ai) in a {
                for &(j, aj) in a {
                    self.hess[(i, j)] += ai * aj * inv2;
                }
            }
        }
        inv
    }
}

impl<'a> Problem<'a> {
    fn new(stats: &'a SufficientStats, backup: Backup<'a>, class: &'a FunctionClassSpec, b_l: f64) -> Self {
        let (ns, na) = (stats.n_states(), stats.n_actions());
        let pairs: Vec<usize> = (0..ns * na).filter(|&y| stats.weight.as_slice()[y] > 0.0).collect();
        let mut reached = vec![false; ns];
        if stats.gamma > 0.0 {
            for &y in &pairs {
                for (sp, &p) in stats.next_probs(y / na, y % na).iter().enumerate() {
                    if p > 0.0 {
                        reached[sp] = true;
                    }
                }
            }
        }
        let next_states: Vec<usize> = (0..ns).filter(|&s| reached[s]).collect();
        let mut v_slot = vec![usize::MAX; ns];
        for (k, &s) in next_states.iter().enumerate() {
            v_slot[s] = k;
        }
        let n_params = class.n_params(ns, na);
        Self { stats, backup, class, b_l, ns, na, n_params, pairs, next_states, v_slot }
    }

    fn n_vars(&self) -> usize {
        self.n_params + self.next_states.len() + self.pairs.len()
    }

    fn v_off(&self) -> usize {
        self.n_params
    }

    fn t_off(&self) -> usize {
        self.n_params + self.next_states.len()
    }

    fn n_constraints(&self) -> usize {
        let env = match self.backup {
            Backup::Soft { .. } => self.next_states.len(),
            Backup::Hard => self.next_states.len() * self.na,
        };
        let class = match self.class {
            FunctionClassSpec::TabularBox { .. } => 2 * self.n_params,
            _ => 1,
        };
        2 * self.pairs.len() + env + class
    }

    fn q_of(&self, x: &[f64]) -> SaTable {
        match self.class {
            FunctionClassSpec::LinearBall { features, .. } => features.apply(x),
            _ => SaTable::from_vec(self.ns, self.na, x.to_vec()),
        }
    }

    /// Appends `coef · ∂q_y/∂x` to a sparse gradient.
    fn push_q(&self, out: &mut Vec<(usize, f64)>, y: usize, coef: f64) {
        match self.class {
            FunctionClassSpec::LinearBall { features, .. } => {
                for (k, &f) in features.features(y / self.na, y % self.na).iter().enumerate() {
                    if f != 0.0 {
                        out.push((k, coef * f));
                    }
                }
            }
            _ => out.push((y, coef)),
        }
    }

    /// Adds `coef · (∂q_y1/∂x)(∂q_y2/∂x)ᵀ` to the Hessian.
    fn add_qq(&self, hess: &mut DMatrix<f64>, y1: usize, y2: usize, coef: f64) {
        match self.class {
            FunctionClassSpec::LinearBall { features, .. } => {
                let f1 = features.features(y1 / self.na, y1 % self.na);
                let f2 = features.features(y2 / self.na, y2 % self.na);
                for (k, &a) in f1.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (l, &b) in f2.iter().enumerate() {
                        hess[(k, l)] += coef * a * b;
                    }
                }
            }
            _ => hess[(y1, y2)] += coef,
        }
    }

    fn eval(&self, z: &[f64], tau: f64, derivs: bool) -> Option<Acc> {
        let n = self.n_vars();
        let mut acc = Acc::new(n, derivs);
        let x = &z[..self.n_params];
        let v = &z[self.v_off()..self.t_off()];
        let t = &z[self.t_off()..];
        let q = self.q_of(x);
        let w = self.stats.weight.as_slice();
        let gamma = self.stats.gamma;

        // Objective.
        let mut f0 = 0.0;
        for (k, &y) in self.pairs.iter().enumerate() {
            let qy = q.as_slice()[y];
            f0 += 0.5 * w[y] * qy * qy + self.b_l * t[k];
            if derivs {
                let mut a = Vec::new();
                self.push_q(&mut a, y, tau * w[y] * qy);
                for (i, ai) in a {
                    acc.grad[i] += ai;
                }
                acc.grad[self.t_off() + k] += tau * self.b_l;
                self.add_qq(&mut acc.hess, y, y, tau * w[y]);
            }
        }
        acc.value += tau * f0;

        let mut a: Vec<(usize, f64)> = Vec::new();
        // Residual epigraph and t ≥ 0.
        for (k, &y) in self.pairs.iter().enumerate() {
            a.clear();
            let (s, act) = (y / self.na, y % self.na);
            let mut ev = 0.0;
            for (sp, &p) in self.stats.next_probs(s, act).iter().enumerate() {
                if p > 0.0 && gamma > 0.0 {
                    ev += p * v[self.v_slot[sp]];
                    a.push((self.v_off() + self.v_slot[sp], w[y] * gamma * p));
                }
            }
            let f = w[y] * (self.stats.mean_reward.as_slice()[y] + gamma * ev - q.as_slice()[y]) - t[k];
            self.push_q(&mut a, y, -w[y]);
            a.push((self.t_off() + k, -1.0));
            acc.barrier(f, &a);
            acc.barrier(-t[k], &[(self.t_off() + k, -1.0)]);
            if !acc.feasible {
                return None;
            }
        }

        // Envelope epigraph.
        for (slot, &s) in self.next_states.iter().enumerate() {
            let vi = self.v_off() + slot;
            match self.backup {
                Backup::Soft { alpha, pi_b } => {
                    let f = self.backup.envelope(&q, s) - v[slot];
                    let pi = self.backup.envelope_gradient(&q, s);
                    a.clear();
                    for (act, &p) in pi.iter().enumerate() {
                        if p > 0.0 {
                            self.push_q(&mut a, s * self.na + act, p);
                        }
                    }
                    a.push((vi, -1.0));
                    let inv = acc.barrier(f, &a);
                    if !acc.feasible {
                        return None;
                    }
                    if derivs {
                        // Curvature of the log-sum-exp: (diag π − ππᵀ)/α.
                        let c = inv / alpha;
                        for (a1, &p1) in pi.iter().enumerate() {
                            if !pi_b.supports(s, a1) || p1 == 0.0 {
                                continue;
                            }
                            let y1 = s * self.na + a1;
                            self.add_qq(&mut acc.hess, y1, y1, c * p1);
                            for (a2, &p2) in pi.iter().enumerate() {
                                if p2 != 0.0 {
                                    self.add_qq(&mut acc.hess, y1, s * self.na + a2, -c * p1 * p2);
                                }
                            }
                        }
                    }
                }
                Backup::Hard => {
                    for act in 0..self.na {
                        let y = s * self.na + act;
                        a.clear();
                        self.push_q(&mut a, y, 1.0);
                        a.push((vi, -1.0));
                        acc.barrier(q.as_slice()[y] - v[slot], &a);
                    }
                    if !acc.feasible {
                        return None;
                    }
                }
            }
        }

        // Class constraints.
        match self.class {
            FunctionClassSpec::TabularBox { bound } => {
                for (i, &xi) in x.iter().enumerate() {
                    acc.barrier(-xi, &[(i, -1.0)]);
                    acc.barrier(xi - bound, &[(i, 1.0)]);
                }
            }
            FunctionClassSpec::LinearBall { radius, .. } => {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                a.clear();
                a.extend(x.iter().enumerate().map(|(i, &xi)| (i, 2.0 * xi)));
                let inv = acc.barrier(sq - radius * radius, &a);
                if derivs && acc.feasible {
                    for i in 0..self.n_params {
                        acc.hess[(i, i)] += 2.0 * inv;
                    }
                }
            }
            FunctionClassSpec::Singleton { .. } => unreachable!("singleton classes are solved directly"),
        }
        acc.feasible.then_some(acc)
    }

    fn start(&self) -> Vec<f64> {
        let x = self.class.center(self.ns, self.na);
        let q = self.q_of(&x);
        let mut z = x;
        let v: Vec<f64> = self.next_states.iter().map(|&s| self.backup.envelope(&q, s) + 1.0).collect();
        let gamma = self.stats.gamma;
        let w = self.stats.weight.as_slice();
        let t: Vec<f64> = self
            .pairs
            .iter()
            .map(|&y| {
                let ev: f64 = self
                    .stats
                    .next_probs(y / self.na, y % self.na)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0 && gamma > 0.0)
                    .map(|(sp, p)| p * v[self.v_slot[sp]])
                    .sum();
                (w[y] * (self.stats.mean_reward.as_slice()[y] + gamma * ev - q.as_slice()[y])).max(0.0) + 1.0
            })
            .collect();
        z.extend(v);
        z.extend(t);
        z
    }
}

fn newton_direction(hess: DMatrix<f64>, grad: &[f64]) -> Option<DVector<f64>> {
    let g = DVector::from_column_slice(grad);
    let scale = hess.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut delta = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        if delta > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += delta;
            }
        }
        if let Some(ch) = h.cholesky() {
            return Some(-ch.solve(&g));
        }
        delta = if delta == 0.0 { 1e-14 * scale } else { delta * 100.0 };
    }
    None
}

/// Minimizes the barrier function at fixed `tau`, starting from `z`.
fn center(p: &Problem<'_>, z: &mut Vec<f64>, tau: f64) {
    for _ in 0..MAX_CENTERING_STEPS {
        let acc = p.eval(z, tau, true).expect("iterate stays strictly feasible");
        let Some(dir) = newton_direction(acc.hess, &acc.grad) else { return };
        let slope: f64 = acc.grad.iter().zip(dir.iter()).map(|(g, d)| g * d).sum();
        if -slope / 2.0 <= 1e-11 {
            return;
        }
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-14 {
            let trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(z, d)| z + step * d).collect();
            if let Some(t) = p.eval(&trial, tau, false) {
                if t.value <= acc.value + 0.25 * step * slope {
                    *z = trial;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            return;
        }
    }
}

pub(crate) fn solve(
    stats: &SufficientStats,
    backup: Backup<'_>,
    class: &FunctionClassSpec,
    b_l: f64,
    tolerance: f64,
) -> Partial {
    let p = Problem::new(stats, backup, class, b_l);
    let m = p.n_constraints() as f64;
    let mut z = p.start();
    let mut tau = 1.0;
    let mut trace = Vec::new();
    for _ in 0..MAX_ROUNDS {
        center(&p, &mut z, tau);
        let q = p.q_of(&z[..p.n_params]);
        trace.push(outer_objective(&q, stats, backup, b_l));
        if m / tau <= tolerance {
            break;
        }
        tau *= MU;
    }
    let x = z[..p.n_params].to_vec();
    let q = p.q_of(&x);
    let mut l = SaTable::zeros(p.ns, p.na);
    let acc_t = p.t_off();
    let gamma = stats.gamma;
    let w = stats.weight.as_slice();
    for (k, &y) in p.pairs.iter().enumerate() {
        let ev: f64 = stats
            .next_probs(y / p.na, y % p.na)
            .iter()
            .enumerate()
            .filter(|(_, &pr)| pr > 0.0 && gamma > 0.0)
            .map(|(sp, pr)| pr * z[p.v_off() + p.v_slot[sp]])
            .sum();
        let f = w[y] * (stats.mean_reward.as_slice()[y] + gamma * ev - q.as_slice()[y]) - z[acc_t + k];
        l.as_mut_slice()[y] = (1.0 / (tau * -f)).clamp(0.0, b_l);
    }
    Partial { q_params: x, q, l, trace, gap: m / tau }
}
