//! Function classes for the Q and Lagrange players.
//!
//! A class member is represented by a flat parameter vector: the table
//! itself for [`FunctionClassSpec::TabularBox`], the weight vector for
//! [`FunctionClassSpec::LinearBall`], nothing for a singleton.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::SaTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassError {
    #[error("feature map is {got_states}×{got_actions} but the MDP is {n_states}×{n_actions}")]
    FeatureShape { got_states: usize, got_actions: usize, n_states: usize, n_actions: usize },
    #[error("feature vectors must all have dimension {0}")]
    RaggedFeatures(usize),
    #[error("non-finite feature at (s={s}, a={a})")]
    NonFiniteFeature { s: usize, a: usize },
    #[error("class bound must be finite and positive, got {0}")]
    InvalidBound(f64),
    #[error("singleton member shape does not match the MDP")]
    SingletonShape,
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { got: usize, expected: usize },
}

/// Feature map `φ : S × A → R^d`, stored as an `(S·A) × d` row-major block.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    /// `rows[s][a]` is the feature vector of `(s, a)`.
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self, ClassError> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let dim = rows.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_states * n_actions * dim);
        for (s, row) in rows.iter().enumerate() {
            if row.len() != n_actions {
                return Err(ClassError::FeatureShape { got_states: n_states, got_actions: row.len(), n_states, n_actions });
            }
            for (a, phi) in row.iter().enumerate() {
                if phi.len() != dim || dim == 0 {
                    return Err(ClassError::RaggedFeatures(dim));
                }
                if phi.iter().any(|v| !v.is_finite()) {
                    return Err(ClassError::NonFiniteFeature { s, a });
                }
                values.extend_from_slice(phi);
            }
        }
        Ok(Self { n_states, n_actions, dim, values })
    }

    pub fn from_fn(n_states: usize, n_actions: usize, dim: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> Result<Self, ClassError> {
        let rows: Vec<Vec<Vec<f64>>> = (0..n_states).map(|s| (0..n_actions).map(|a| f(s, a)).collect()).collect();
        let fm = Self::from_nested(&rows)?;
        if fm.dim != dim {
            return Err(ClassError::RaggedFeatures(dim));
        }
        Ok(fm)
    }

    /// Indicator features; the linear class over them is the tabular class.
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self { n_states, n_actions, dim: n, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn features(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.dim;
        &self.values[i..i + self.dim]
    }

    /// `Φ`, with one row per state-action pair.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_states * self.n_actions, self.dim, &self.values)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states).map(|s| (0..self.n_actions).map(|a| self.features(s, a).to_vec()).collect()).collect()
    }

    /// `Φθ` as a table.
    pub fn apply(&self, theta: &[f64]) -> SaTable {
        SaTable::from_fn(self.n_states, self.n_actions, |s, a| {
            self.features(s, a).iter().zip(theta).map(|(f, t)| f * t).sum()
        })
    }
}

impl Serialize for FeatureMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        FeatureMap::from_nested(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionClassSpec {
    /// All tables with entries in `[0, bound]`.
    TabularBox { bound: f64 },
    /// `{Φθ : ‖θ‖₂ ≤ radius}`, optionally clamped at zero.
    LinearBall {
        features: FeatureMap,
        radius: f64,
        #[serde(default)]
        nonneg: bool,
    },
    /// A single fixed function.
    Singleton { member: SaTable },
}

impl FunctionClassSpec {
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<(), ClassError> {
        match self {
            FunctionClassSpec::TabularBox { bound } => check_bound(*bound),
            FunctionClassSpec::LinearBall { features, radius, .. } => {
                check_bound(*radius)?;
                if features.n_states != n_states || features.n_actions != n_actions {
                    return Err(ClassError::FeatureShape {
                        got_states: features.n_states,
                        got_actions: features.n_actions,
                        n_states,
                        n_actions,
                    });
                }
                Ok(())
            }
            FunctionClassSpec::Singleton { member } => {
                if member.n_states() != n_states || member.n_actions() != n_actions {
                    return Err(ClassError::SingletonShape);
                }
                Ok(())
            }
        }
    }

    pub fn n_params(&self, n_states: usize, n_actions: usize) -> usize {
        match self {
            FunctionClassSpec::TabularBox { .. } => n_states * n_actions,
            FunctionClassSpec::LinearBall { features, .. } => features.dim,
            FunctionClassSpec::Singleton { .. } => 0,
        }
    }

    /// The function represented by `params`.
    pub fn evaluate(&self, params: &[f64], n_states: usize, n_actions: usize) -> SaTable {
        match self {
            FunctionClassSpec::TabularBox { .. } => SaTable::from_vec(n_states, n_actions, params.to_vec()),
            FunctionClassSpec::LinearBall { features, nonneg, .. } => {
                let q = features.apply(params);
                if *nonneg {
                    q.map(|v| v.max(0.0))
                } else {
                    q
                }
            }
            FunctionClassSpec::Singleton { member } => member.clone(),
        }
    }

    /// Euclidean projection of `params` onto the parameter set.
    pub fn project(&self, params: &mut [f64]) {
        match self {
            FunctionClassSpec::TabularBox { bound } => {
                for p in params.iter_mut() {
                    *p = p.clamp(0.0, *bound);
                }
            }
            FunctionClassSpec::LinearBall { radius, .. } => {
                let norm = params.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > *radius {
                    let scale = radius / norm;
                    for p in params.iter_mut() {
                        *p *= scale;
                    }
                }
            }
            FunctionClassSpec::Singleton { .. } => {}
        }
    }

    /// A parameter vector at the center of the class.
    pub fn center(&self, n_states: usize, n_actions: usize) -> Vec<f64> {
        match self {
            FunctionClassSpec::TabularBox { bound } => vec![bound / 2.0; n_states * n_actions],
            FunctionClassSpec::LinearBall { features, .. } => vec![0.0; features.dim],
            FunctionClassSpec::Singleton { .. } => Vec::new(),
        }
    }

    /// Whether `q` belongs to the class, up to `tol` (sup-norm for the
    /// function, relative for the radius).
    pub fn contains(&self, q: &SaTable, tol: f64) -> bool {
        match self {
            FunctionClassSpec::TabularBox { bound } => q.as_slice().iter().all(|&v| v >= -tol && v <= bound + tol),
            FunctionClassSpec::LinearBall { features, radius, nonneg } => {
                if *nonneg && q.as_slice().iter().any(|&v| v < -tol) {
                    return false;
                }
                match least_squares_params(features, q) {
                    Some(theta) => {
                        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
                        features.apply(&theta).sup_distance(q) <= tol && norm <= radius * (1.0 + tol)
                    }
                    None => false,
                }
            }
            FunctionClassSpec::Singleton { member } => member.same_shape(q) && member.sup_distance(q) <= tol,
        }
    }

    /// Sup-norm bound on the members of the class.
    pub fn sup_bound(&self) -> f64 {
        match self {
            FunctionClassSpec::TabularBox { bound } => *bound,
            FunctionClassSpec::LinearBall { features, radius, .. } => {
                let max_norm = (0..features.n_states * features.n_actions)
                    .map(|i| features.values[i * features.dim..(i + 1) * features.dim].iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                radius * max_norm
            }
            FunctionClassSpec::Singleton { member } => member.sup_norm(),
        }
    }
}

fn check_bound(b: f64) -> Result<(), ClassError> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(ClassError::InvalidBound(b))
    }
}

/// Minimum-norm least-squares weights `θ` with `Φθ ≈ q`.
pub fn least_squares_params(features: &FeatureMap, q: &SaTable) -> Option<Vec<f64>> {
    let phi = features.matrix();
    let y = DVector::from_column_slice(q.as_slice());
    let svd = phi.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1.0);
    svd.solve(&y, eps).ok().map(|t| t.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_projection_and_membership() {
        let c = FunctionClassSpec::TabularBox { bound: 2.0 };
        let mut p = vec![-1.0, 0.5, 3.0];
        c.project(&mut p);
        assert_eq!(p, vec![0.0, 0.5, 2.0]);
        assert!(c.contains(&SaTable::from_vec(1, 3, p), 0.0));
        assert!(!c.contains(&SaTable::from_vec(1, 1, vec![2.1]), 1e-9));
    }

    #[test]
    fn ball_projection_scales_to_radius() {
        let c = FunctionClassSpec::LinearBall { features: FeatureMap::one_hot(1, 2), radius: 1.0, nonneg: false };
        let mut p = vec![3.0, 4.0];
        c.project(&mut p);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn linear_membership_via_least_squares() {
        let f = FeatureMap::from_fn(2, 2, 2, |s, a| vec![1.0, (s + a) as f64]).unwrap();
        let c = FunctionClassSpec::LinearBall { features: f.clone(), radius: 10.0, nonneg: false };
        let q = f.apply(&[0.5, 2.0]);
        assert!(c.contains(&q, 1e-9));
        let mut off = q.clone();
        off.set(0, 0, 9.0);
        assert!(!c.contains(&off, 1e-9));
        let small = FunctionClassSpec::LinearBall { features: f, radius: 1.0, nonneg: false };
        assert!(!small.contains(&q, 1e-9));
    }

    #[test]
    fn serde_round_trip() {
        let c = FunctionClassSpec::LinearBall { features: FeatureMap::one_hot(2, 1), radius: 1.5, nonneg: true };
        let js = serde_json::to_string(&c).unwrap();
        assert!(js.contains("\"kind\":\"linear_ball\""));
        let back: FunctionClassSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn ragged_features_rejected() {
        assert!(FeatureMap::from_nested(&[vec![vec![1.0], vec![1.0, 2.0]]]).is_err());
    }
}
