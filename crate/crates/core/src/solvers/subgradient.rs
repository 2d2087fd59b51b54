use super::{inner_max_box, lagrangian_gradient, outer_objective, residual, Partial, ParamMap, SolverConfig};
use crate::classes::FunctionClassSpec;
use crate::data::SufficientStats;
use crate::oracles::Backup;

/// Projected subgradient descent on `J(q) = ½ Σ w q² + B_L Σ max(0, ḡ_q)`.
///
/// The subgradient of the hinge part is `B_L Σ_{ḡ_y > 0} ∇ḡ_y`, i.e. the
/// Lagrangian gradient at the inner maximizer. Returns the best averaged
/// iterate; the gap estimate is `J(x̄) − min_{x∈C} [J(x̄) + gᵀ(x − x̄)]`.
pub(crate) fn solve(
    stats: &SufficientStats,
    backup: Backup<'_>,
    class: &FunctionClassSpec,
    b_l: f64,
    cfg: &SolverConfig,
    warnings: &mut Vec<String>,
) -> Partial {
    let (ns, na) = (stats.n_states(), stats.n_actions());
    let map = ParamMap::new(class, ns, na);
    let mut x = class.center(ns, na);
    let mut avg = x.clone();
    let mut trace = Vec::with_capacity(cfg.outer_steps);
    let mut best = (f64::INFINITY, x.clone());
    for t in 1..=cfg.outer_steps {
        let q = map.q(&x);
        let (l, _) = inner_max_box(&residual(&q, stats, backup), b_l);
        let g = map.pullback(&x, &lagrangian_gradient(&q, &l, stats, backup));
        let eta = cfg.step_size.at(t);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= eta * gi;
        }
        class.project(&mut x);
        let current = if cfg.iterate_averaging {
            let k = t as f64;
            for (a, xi) in avg.iter_mut().zip(&x) {
                *a += (xi - *a) / k;
            }
            &avg
        } else {
            &x
        };
        let j = outer_objective(&map.q(current), stats, backup, b_l);
        trace.push(j);
        if j < best.0 {
            best = (j, current.clone());
        }
    }
    let tail = trace.len() / 5;
    if tail >= 1 && trace[trace.len() - 1] >= trace[trace.len() - 1 - tail] {
        warnings.push("step size too large: objective did not decrease over the last 20% of steps".into());
    }
    let x = best.1;
    let q = map.q(&x);
    let (l, _) = inner_max_box(&residual(&q, stats, backup), b_l);
    let g = map.pullback(&x, &lagrangian_gradient(&q, &l, stats, backup));
    let gap = -map.linear_lower_bound(&x, &g);
    Partial { q_params: x, q, l, trace, gap: gap.max(0.0) }
}
