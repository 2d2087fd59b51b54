use super::{empirical_lagrangian, lagrangian_gradient, residual, Partial, ParamMap, SolverConfig};
use crate::classes::FunctionClassSpec;
use crate::data::SufficientStats;
use crate::oracles::Backup;

/// Simultaneous projected gradient descent (on `q`) and ascent (on `l`)
/// with equal steps and uniform averaging. Used when the L-class is not a
/// box, so the inner maximum has no closed form.
pub(crate) fn solve(
    stats: &SufficientStats,
    backup: Backup<'_>,
    q_class: &FunctionClassSpec,
    l_class: &FunctionClassSpec,
    cfg: &SolverConfig,
) -> Partial {
    let (ns, na) = (stats.n_states(), stats.n_actions());
    let qmap = ParamMap::new(q_class, ns, na);
    let lmap = ParamMap::new(l_class, ns, na);
    let mut x = q_class.center(ns, na);
    let mut lam = l_class.center(ns, na);
    let (mut x_avg, mut lam_avg) = (x.clone(), lam.clone());
    let mut trace = Vec::with_capacity(cfg.outer_steps);
    for t in 1..=cfg.outer_steps {
        let q = qmap.q(&x);
        let l = lmap.q(&lam);
        let gx = qmap.pullback(&x, &lagrangian_gradient(&q, &l, stats, backup));
        let gl = lmap.pullback(&lam, &residual(&q, stats, backup));
        let eta = cfg.step_size.at(t);
        for (xi, g) in x.iter_mut().zip(&gx) {
            *xi -= eta * g;
        }
        for (li, g) in lam.iter_mut().zip(&gl) {
            *li += eta * g;
        }
        q_class.project(&mut x);
        l_class.project(&mut lam);
        let k = t as f64;
        for (a, v) in x_avg.iter_mut().zip(&x) {
            *a += (v - *a) / k;
        }
        for (a, v) in lam_avg.iter_mut().zip(&lam) {
            *a += (v - *a) / k;
        }
        let (xs, ls) = if cfg.iterate_averaging { (&x_avg, &lam_avg) } else { (&x, &lam) };
        trace.push(empirical_lagrangian(&qmap.q(xs), &lmap.q(ls), stats, backup));
    }
    let (xf, lf) = if cfg.iterate_averaging { (x_avg, lam_avg) } else { (x, lam) };
    let q = qmap.q(&xf);
    let l = lmap.q(&lf);
    // Duality-gap proxy: how much the ascent player could still gain by a
    // linearized best response.
    let gl = lmap.pullback(&lf, &residual(&q, stats, backup));
    let gain = -lmap.linear_lower_bound(&lf, &gl.iter().map(|g| -g).collect::<Vec<_>>());
    Partial { q_params: xf, q, l, trace, gap: gain.max(0.0) }
}
