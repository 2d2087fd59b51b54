//! Dense tables indexed by state-action pairs.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A real-valued table over `S × A`, stored row-major (`s * A + a`).
///
/// Used for Q-functions, Lagrange multipliers, occupancy measures and
/// residual aggregates alike.
#[derive(Clone, Debug, PartialEq)]
pub struct SaTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

/// Q-functions and Lagrange multipliers in their exact, tabular form.
pub type QFunction = SaTable;
pub type LagrangeFunction = SaTable;

impl SaTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, v: f64) -> Self {
        Self { n_states, n_actions, values: vec![v; n_states * n_actions] }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_states * n_actions, "table size mismatch");
        Self { n_states, n_actions, values }
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                values.push(f(s, a));
            }
        }
        Self { n_states, n_actions, values }
    }

    /// Builds a table from nested rows; `None` if rows are ragged or empty.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n_actions = rows.first()?.len();
        if n_actions == 0 || rows.iter().any(|r| r.len() != n_actions) {
            return None;
        }
        Some(Self { n_states: rows.len(), n_actions, values: rows.concat() })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
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
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        let i = self.index(s, a);
        self.values[i] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape(&self, other: &SaTable) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SaTable {
        SaTable { values: self.values.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn zip_map(&self, other: &SaTable, f: impl Fn(f64, f64) -> f64) -> SaTable {
        assert!(self.same_shape(other), "table shape mismatch");
        SaTable {
            values: self.values.iter().zip(&other.values).map(|(&x, &y)| f(x, y)).collect(),
            ..*self
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self − other|`.
    pub fn sup_distance(&self, other: &SaTable) -> f64 {
        assert!(self.same_shape(other), "table shape mismatch");
        self.values.iter().zip(&other.values).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// `Σ w·self·other`, the inner product weighted by `weights`.
    pub fn weighted_inner(&self, other: &SaTable, weights: &SaTable) -> f64 {
        assert!(self.same_shape(other) && self.same_shape(weights), "table shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .zip(&weights.values)
            .map(|((x, y), w)| w * x * y)
            .sum()
    }

    /// `(Σ w·(self − other)²)^{1/2}`.
    pub fn weighted_l2_distance(&self, other: &SaTable, weights: &SaTable) -> f64 {
        let d = self.zip_map(other, |x, y| x - y);
        d.weighted_inner(&d, weights).sqrt()
    }

    pub fn sum(&self) -> f64 {
        crate::numeric::pairwise_sum(&self.values)
    }
}

impl Serialize for SaTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SaTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        SaTable::from_rows(&rows).ok_or_else(|| serde::de::Error::custom("ragged or empty table"))
    }
}

/// Serde adapter writing non-finite floats as the strings `"inf"`, `"-inf"`
/// and `"nan"`, since JSON has no literal for them.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_through_json() {
        let t = SaTable::from_fn(2, 3, |s, a| (s * 10 + a) as f64);
        let js = serde_json::to_string(&t).unwrap();
        assert_eq!(js, "[[0.0,1.0,2.0],[10.0,11.0,12.0]]");
        let back: SaTable = serde_json::from_str(&js).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<SaTable>("[[1.0],[1.0,2.0]]").is_err());
    }

    #[test]
    fn weighted_distance() {
        let a = SaTable::from_vec(1, 2, vec![1.0, 2.0]);
        let b = SaTable::from_vec(1, 2, vec![0.0, 0.0]);
        let w = SaTable::from_vec(1, 2, vec![0.5, 0.5]);
        assert!((a.weighted_l2_distance(&b, &w) - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.sup_distance(&b), 2.0);
    }
}
