use serde::Serialize;

use crate::mdp::OccupancyMeasure;
use crate::numeric::{argmax_where, linear_fit};
use crate::table::SaTable;

/// One suboptimality gap `q*(s, π*(s)) − q*(s, a′)` with the state's
/// weight under the optimal occupancy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapSample {
    pub weight: f64,
    pub state: usize,
    pub action: usize,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginProfile {
    pub gap_samples: Vec<GapSample>,
    /// `(t, max_{a′} P_{s∼d}(0 < gap(s, a′) < t))`.
    pub cdf_points: Vec<(f64, f64)>,
    /// `P_{s∼d}(0 < gap(s, a′) < t)` per grid point and action.
    pub per_action: Vec<Vec<f64>>,
    /// Exponent and scale of a least-squares fit of `(t/t0)^β` on the
    /// positive cdf points. Descriptive only.
    pub fitted_beta: Option<f64>,
    pub fitted_t0: Option<f64>,
}

/// Exact soft-margin profile of `q_star` under the state marginal of
/// `d_star`, with the greedy action chosen at the lowest index on ties.
pub fn margin_profile(q_star: &SaTable, d_star: &OccupancyMeasure, t_grid: &[f64]) -> MarginProfile {
    let (ns, na) = (q_star.n_states(), q_star.n_actions());
    let d = d_star.state_marginal();
    let mut gap_samples = Vec::new();
    for s in 0..ns {
        let best = argmax_where(q_star.row(s), |_| true).expect("at least one action");
        for a in (0..na).filter(|&a| a != best) {
            gap_samples.push(GapSample { weight: d[s], state: s, action: a, gap: q_star.get(s, best) - q_star.get(s, a) });
        }
    }
    let mut per_action = Vec::with_capacity(t_grid.len());
    let mut sorted_grid: Vec<f64> = t_grid.to_vec();
    sorted_grid.sort_by(f64::total_cmp);
    for &t in &sorted_grid {
        let mut mass = vec![0.0; na];
        for g in &gap_samples {
            if g.gap > 0.0 && g.gap < t {
                mass[g.action] += g.weight;
            }
        }
        per_action.push(mass.into_iter().map(|m| m.min(1.0)).collect::<Vec<_>>());
    }
    let cdf_points: Vec<(f64, f64)> =
        sorted_grid.iter().zip(&per_action).map(|(&t, m)| (t, m.iter().copied().fold(0.0, f64::max))).collect();

    let (xs, ys): (Vec<f64>, Vec<f64>) =
        cdf_points.iter().filter(|(t, p)| *t > 0.0 && *p > 0.0).map(|(t, p)| (t.ln(), p.ln())).unzip();
    let distinct = xs.windows(2).any(|w| w[1] > w[0]);
    let (fitted_beta, fitted_t0) = if xs.len() >= 2 && distinct {
        let (beta, intercept, _) = linear_fit(&xs, &ys);
        let t0 = if beta > 0.0 { Some((-intercept / beta).exp()) } else { None };
        (Some(beta), t0)
    } else {
        (None, None)
    };
    MarginProfile { gap_samples, cdf_points, per_action, fitted_beta, fitted_t0 }
}
