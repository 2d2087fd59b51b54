use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::OracleError;
use crate::classes::{FeatureMap, FunctionClassSpec};
use crate::mdp::{flattened_policy, ratio_with_conventions, BehaviorSpec, OccupancyMeasure, TabularMdp};
use crate::table::SaTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConcentrabilityMethod {
    TabularExact,
    LinearGeneralizedEigen,
    RandomSearchLowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrabilityReport {
    #[serde(with = "crate::table::extended_f64")]
    pub value: f64,
    pub method: ConcentrabilityMethod,
    /// `ν(s, a) = target(s) · π^◇_b(a | s)`.
    pub test_distribution: SaTable,
}

/// `ν(s, a) = d(s) π^◇_b(a | s)` for the state marginal of `target`.
pub fn test_measure(b: &BehaviorSpec, target: &OccupancyMeasure) -> Result<SaTable, OracleError> {
    let flat = flattened_policy(&b.behavior_policy)?;
    let d = target.state_marginal();
    Ok(SaTable::from_fn(flat.n_states(), flat.n_actions(), |s, a| d[s] * flat.prob(s, a)))
}

/// `sup_{q∈Q} E_ν[(q − q_ref)²] / E_{P_b}[(q − q_ref)²]` with `ν` the test
/// measure of `target`.
///
/// Exact for the box class (the sup is attained along indicator
/// directions) and for linear classes (largest generalized eigenvalue of
/// the two feature covariances, `∞` if the test covariance has mass
/// outside the range of the behavior covariance). A singleton class has no
/// nonzero direction and reports 0.
pub fn concentrability(
    mdp: &TabularMdp,
    b: &BehaviorSpec,
    target: &OccupancyMeasure,
    class: &FunctionClassSpec,
    q_ref: &SaTable,
) -> Result<ConcentrabilityReport, OracleError> {
    b.validate_for(mdp)?;
    class.validate(mdp.n_states(), mdp.n_actions())?;
    let nu = test_measure(b, target)?;
    let pb = b.joint();
    let (value, method) = match class {
        FunctionClassSpec::TabularBox { .. } => {
            let v = nu.as_slice().iter().zip(pb.as_slice()).map(|(&n, &p)| ratio_with_conventions(n, p)).fold(0.0, f64::max);
            (v, ConcentrabilityMethod::TabularExact)
        }
        FunctionClassSpec::LinearBall { features, .. } => {
            (generalized_eigen_max(features, &nu, &pb), ConcentrabilityMethod::LinearGeneralizedEigen)
        }
        FunctionClassSpec::Singleton { member } => {
            let d2 = |w: &SaTable| {
                let diff = member.zip_map(q_ref, |x, y| x - y);
                diff.weighted_inner(&diff, w)
            };
            (ratio_with_conventions(d2(&nu), d2(&pb)), ConcentrabilityMethod::TabularExact)
        }
    };
    Ok(ConcentrabilityReport { value, method, test_distribution: nu })
}

fn covariance(features: &FeatureMap, w: &SaTable) -> DMatrix<f64> {
    let phi = features.matrix();
    let mut weighted = phi.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= w.as_slice()[i];
    }
    phi.transpose() * weighted
}

/// Largest `λ` with `Σ_test x = λ Σ_b x`, restricted to the range of `Σ_b`.
fn generalized_eigen_max(features: &FeatureMap, nu: &SaTable, pb: &SaTable) -> f64 {
    let sb = covariance(features, pb);
    let st = covariance(features, nu);
    let eig = SymmetricEigen::new(sb);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let (range, null): (Vec<usize>, Vec<usize>) = (0..eig.eigenvalues.len()).partition(|&i| eig.eigenvalues[i] > tol);
    let st_scale = st.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !null.is_empty() {
        let n = eig.eigenvectors.select_columns(&null);
        let leak = SymmetricEigen::new(n.transpose() * &st * &n).eigenvalues.max();
        if leak > 1e-10 * st_scale.max(scale) {
            return f64::INFINITY;
        }
    }
    if range.is_empty() {
        return if st_scale > 0.0 { f64::INFINITY } else { 0.0 };
    }
    let u = eig.eigenvectors.select_columns(&range);
    let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        range.len(),
        range.iter().map(|&i| 1.0 / eig.eigenvalues[i].sqrt()),
    ));
    let w = &inv_sqrt * u.transpose() * &st * &u * &inv_sqrt;
    SymmetricEigen::new(w).eigenvalues.max().max(0.0)
}

/// Lower bound on the coefficient from `samples` random members of the
/// class.
pub fn concentrability_random_search(
    mdp: &TabularMdp,
    b: &BehaviorSpec,
    target: &OccupancyMeasure,
    class: &FunctionClassSpec,
    q_ref: &SaTable,
    samples: usize,
    seed: u64,
) -> Result<ConcentrabilityReport, OracleError> {
    b.validate_for(mdp)?;
    class.validate(mdp.n_states(), mdp.n_actions())?;
    let nu = test_measure(b, target)?;
    let pb = b.joint();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = class.n_params(ns, na);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let mut params: Vec<f64> = match class {
            FunctionClassSpec::TabularBox { bound } => (0..p).map(|_| rng.random::<f64>() * bound).collect(),
            FunctionClassSpec::LinearBall { radius, .. } => {
                let raw: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>();
                raw.iter().map(|v| v / norm * r).collect()
            }
            FunctionClassSpec::Singleton { .. } => Vec::new(),
        };
        class.project(&mut params);
        let diff = class.evaluate(&params, ns, na).zip_map(q_ref, |x, y| x - y);
        let ratio = ratio_with_conventions(diff.weighted_inner(&diff, &nu), diff.weighted_inner(&diff, &pb));
        best = best.max(ratio);
    }
    Ok(ConcentrabilityReport { value: best, method: ConcentrabilityMethod::RandomSearchLowerBound, test_distribution: nu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{occupancy, Policy, RewardNoise};

    fn two_state() -> (TabularMdp, BehaviorSpec) {
        let p = vec![0.5, 0.5, 0.9, 0.1, 0.2, 0.8, 0.0, 1.0];
        let r = SaTable::from_vec(2, 2, vec![0.1, 0.5, 0.9, 0.2]);
        let m = TabularMdp::new(2, 2, p, r, RewardNoise::Deterministic, 0.7, vec![1.0, 0.0], 0.0, 1.0).unwrap();
        let b = BehaviorSpec::new(vec![0.3, 0.7], Policy::uniform(2, 2)).unwrap();
        (m, b)
    }

    #[test]
    fn identical_measures_give_one() {
        let (m, b) = two_state();
        let target = OccupancyMeasure { dist: b.joint(), generating_policy: Policy::uniform(2, 2), initial: b.state_marginal.clone() };
        let class = FunctionClassSpec::TabularBox { bound: 5.0 };
        let r = concentrability(&m, &b, &target, &class, &SaTable::zeros(2, 2)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-14);
        assert_eq!(r.method, ConcentrabilityMethod::TabularExact);
    }

    #[test]
    fn constant_feature_gives_one() {
        let (m, b) = two_state();
        let target = occupancy(&m, &Policy::uniform(2, 2), m.mu0());
        let f = FeatureMap::from_fn(2, 2, 1, |_, _| vec![1.0]).unwrap();
        let class = FunctionClassSpec::LinearBall { features: f, radius: 1.0, nonneg: false };
        let r = concentrability(&m, &b, &target, &class, &SaTable::zeros(2, 2)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn unsupported_test_mass_is_infinite() {
        let (m, _) = two_state();
        let b = BehaviorSpec::new(vec![1.0, 0.0], Policy::uniform(2, 2)).unwrap();
        let target = occupancy(&m, &Policy::uniform(2, 2), &[0.0, 1.0]);
        let tab = FunctionClassSpec::TabularBox { bound: 1.0 };
        assert_eq!(concentrability(&m, &b, &target, &tab, &SaTable::zeros(2, 2)).unwrap().value, f64::INFINITY);
        let one_hot = FunctionClassSpec::LinearBall { features: FeatureMap::one_hot(2, 2), radius: 1.0, nonneg: false };
        assert_eq!(concentrability(&m, &b, &target, &one_hot, &SaTable::zeros(2, 2)).unwrap().value, f64::INFINITY);
    }

    #[test]
    fn one_hot_eigen_matches_tabular() {
        let (m, b) = two_state();
        let target = occupancy(&m, &Policy::uniform(2, 2), m.mu0());
        let q0 = SaTable::zeros(2, 2);
        let tab = concentrability(&m, &b, &target, &FunctionClassSpec::TabularBox { bound: 1.0 }, &q0).unwrap();
        let lin = FunctionClassSpec::LinearBall { features: FeatureMap::one_hot(2, 2), radius: 1.0, nonneg: false };
        let eig = concentrability(&m, &b, &target, &lin, &q0).unwrap();
        assert!((tab.value - eig.value).abs() < 1e-10 * tab.value);
        let lower = concentrability_random_search(&m, &b, &target, &lin, &q0, 500, 3).unwrap();
        assert!(lower.value <= eig.value * (1.0 + 1e-12));
    }
}
