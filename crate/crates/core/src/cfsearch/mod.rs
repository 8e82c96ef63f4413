//! Counterfactual generation.
//!
//! A counterfactual for `x` is a point `c` the model labels with the target
//! outcome while staying close to `x` under a weighted L1 distance. The
//! search minimizes `(score(c) - target)^2 + distance(x, c) / lambda` by
//! proximal gradient descent inside the feasible box, anneals `lambda`
//! downwards until the minimizer stops flipping the label, and keeps the
//! closest flipping minimizer.

mod feasibility;
mod search;

use serde::{Deserialize, Serialize};

pub use feasibility::{enforce_feasibility, Feasibility, Violation};
pub use search::{generate, sparsify, SearchConfig};

use crate::dataspec::{FeatureKind, FeatureSchema, Instance, LabeledDataset, Outcome};
use crate::error::{check_dim, Error, Result};

/// Per-feature weights of the L1 distance. Categorical features contribute
/// their weight on any mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceWeights {
    pub weights: Vec<f64>,
    pub categorical: Vec<bool>,
}

impl DistanceWeights {
    pub fn new(weights: Vec<f64>, categorical: Vec<bool>) -> Result<Self> {
        check_dim(weights.len(), categorical.len())?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("distance weights must be finite and nonnegative".into()));
        }
        Ok(Self { weights, categorical })
    }

    /// Plain weights over numeric features.
    pub fn numeric(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        Self::new(weights, vec![false; n])
    }

    pub fn for_schema(weights: Vec<f64>, schema: &FeatureSchema) -> Result<Self> {
        check_dim(schema.len(), weights.len())?;
        Self::new(weights, schema.features.iter().map(|f| f.is_categorical()).collect())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Contribution of feature `j` to the distance between `a` and `b`.
    pub fn term(&self, j: usize, a: f64, b: f64) -> f64 {
        if self.categorical[j] {
            if a != b {
                self.weights[j]
            } else {
                0.0
            }
        } else {
            self.weights[j] * (a - b).abs()
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Median absolute deviation about the median.
pub fn median_absolute_deviation(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let m = median(&sorted(values.to_vec()));
    Some(median(&sorted(values.iter().map(|v| (v - m).abs()).collect())))
}

/// Inverse-MAD weights. A feature with zero MAD falls back to the inverse
/// of its declared range width; a zero-width feature gets weight 0 and is
/// frozen by the search. Categorical features get unit mismatch weight
/// (0 when only one category exists).
pub fn mad_weights(data: &LabeledDataset) -> Result<DistanceWeights> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weights = data
        .schema
        .features
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let width = spec.width();
            if spec.kind == FeatureKind::Categorical {
                return if width > 0.0 { 1.0 } else { 0.0 };
            }
            let mad = median_absolute_deviation(&data.column(j)).unwrap_or(0.0);
            if mad > 0.0 {
                1.0 / mad
            } else if width > 0.0 {
                1.0 / width
            } else {
                0.0
            }
        })
        .collect();
    DistanceWeights::for_schema(weights, &data.schema)
}

pub fn distance(x: &[f64], c: &[f64], w: &DistanceWeights) -> Result<f64> {
    check_dim(x.len(), c.len())?;
    check_dim(w.len(), x.len())?;
    Ok((0..x.len()).map(|j| w.term(j, x[j], c[j])).sum())
}

/// Effort needed to move from `base` to `c`, weighted by each feature's
/// `effort_weight`. `c` must be feasible.
pub fn actionability_cost(base: &Instance, c: &[f64], schema: &FeatureSchema) -> Result<f64> {
    if let Feasibility::Rejected(v) = enforce_feasibility(c, base, schema)? {
        return Err(Error::Precondition(format!("infeasible counterfactual: {v:?}")));
    }
    Ok(schema
        .features
        .iter()
        .zip(base.values.iter().zip(c))
        .map(|(spec, (b, v))| {
            if spec.is_categorical() {
                if b != v {
                    spec.effort_weight
                } else {
                    0.0
                }
            } else {
                spec.effort_weight * (v - b).abs()
            }
        })
        .sum())
}

/// Probability that a subject carries out a scenario of the given cost,
/// `exp(-cost / scale)`.
pub fn implementation_probability(cost: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    if !(cost >= 0.0) {
        return Err(Error::InvalidArgument("cost must be nonnegative".into()));
    }
    Ok((-cost / scale).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub subject_id: u64,
    pub base_point: Instance,
    pub point: Vec<f64>,
    pub target_outcome: Outcome,
    pub distance: f64,
    pub changed_features: Vec<String>,
    pub certainty_at_issue: f64,
    pub actionability_cost: f64,
    pub implementation_probability: f64,
    pub model_version_at_issue: u64,
}

pub(crate) fn changed_indices(base: &[f64], point: &[f64]) -> Vec<usize> {
    (0..base.len()).filter(|&j| base[j] != point[j]).collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataspec::reference_schema;

    fn inst(values: Vec<f64>) -> Instance {
        Instance { subject_id: 0, values, observed_at: 0 }
    }

    #[test]
    fn mad_of_one_two_three() {
        assert_eq!(median_absolute_deviation(&[1.0, 2.0, 3.0]), Some(1.0));
        let schema = Arc::new(FeatureSchema::uniform_box(1, 0.0, 10.0).unwrap());
        let rows = [1.0, 2.0, 3.0].iter().map(|v| inst(vec![*v])).collect();
        let data = LabeledDataset::new(schema, rows, vec![Outcome::Positive; 3]).unwrap();
        assert_eq!(mad_weights(&data).unwrap().weights, vec![1.0]);
    }

    #[test]
    fn constant_feature_falls_back_to_range() {
        let schema = Arc::new(FeatureSchema::uniform_box(1, 0.0, 10.0).unwrap());
        let rows = (0..4).map(|_| inst(vec![3.0])).collect();
        let data = LabeledDataset::new(schema, rows, vec![Outcome::Negative; 4]).unwrap();
        assert!((mad_weights(&data).unwrap().weights[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_width_feature_is_frozen() {
        let schema = Arc::new(FeatureSchema::uniform_box(1, 0.0, 0.0).unwrap());
        let rows = (0..3).map(|_| inst(vec![0.0])).collect();
        let data = LabeledDataset::new(schema, rows, vec![Outcome::Negative; 3]).unwrap();
        assert_eq!(mad_weights(&data).unwrap().weights, vec![0.0]);
    }

    #[test]
    fn mad_rejects_empty() {
        let data = LabeledDataset::empty(Arc::new(reference_schema()));
        assert!(matches!(mad_weights(&data), Err(Error::EmptyDataset)));
    }

    #[test]
    fn distance_examples() {
        let w = DistanceWeights::numeric(vec![1.0, 1.0]).unwrap();
        assert_eq!(distance(&[1.0, 2.0], &[2.0, 4.0], &w).unwrap(), 3.0);
        assert_eq!(distance(&[1.0, 2.0], &[1.0, 2.0], &w).unwrap(), 0.0);
        let w2 = DistanceWeights::numeric(vec![2.0, 2.0]).unwrap();
        assert_eq!(distance(&[1.0, 2.0], &[2.0, 4.0], &w2).unwrap(), 6.0);
        assert!(distance(&[1.0], &[1.0, 2.0], &w).is_err());
    }

    #[test]
    fn categorical_distance_is_mismatch() {
        let w = DistanceWeights::new(vec![1.0, 0.7], vec![false, true]).unwrap();
        assert_eq!(distance(&[0.0, 2.0], &[0.0, 0.0], &w).unwrap(), 0.7);
        assert_eq!(distance(&[0.0, 2.0], &[0.5, 2.0], &w).unwrap(), 0.5);
    }

    #[test]
    fn income_raise_costs_its_effort() {
        let schema = reference_schema();
        let base = inst(vec![4.0, 3.0, 2.0, 1.0, 1.0, 0.0]);
        assert_eq!(actionability_cost(&base, &base.values, &schema).unwrap(), 0.0);
        let mut c = base.values.clone();
        c[1] += 1.0;
        assert_eq!(actionability_cost(&base, &c, &schema).unwrap(), 1.0);
        let mut further = c.clone();
        further[1] += 0.5;
        assert!(actionability_cost(&base, &further, &schema).unwrap() > 1.0);
        let mut younger = base.values.clone();
        younger[0] -= 0.5;
        assert!(matches!(actionability_cost(&base, &younger, &schema), Err(Error::Precondition(_))));
    }

    #[test]
    fn implementation_probability_examples() {
        assert_eq!(implementation_probability(0.0, 2.0).unwrap(), 1.0);
        assert!((implementation_probability(2.5, 2.5).unwrap() - 0.367879).abs() < 1e-6);
        assert!(implementation_probability(1.0, 1.0).unwrap() > implementation_probability(1.1, 1.0).unwrap());
        assert!(implementation_probability(1.0, 0.0).is_err());
        assert!(implementation_probability(1.0, -1.0).is_err());
    }
}
