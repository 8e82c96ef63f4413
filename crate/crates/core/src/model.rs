//! Versioned logistic scoring model.
//!
//! Training is full-batch gradient descent on the sample-weighted mean
//! cross-entropy plus an L2 penalty on the weights (not the bias). The
//! penalty is scaled by the mean sample weight, so multiplying every sample
//! weight by a constant scales the whole objective; halving the learning
//! rate while doubling all weights reproduces the unweighted trajectory
//! bit for bit.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataspec::{LabeledDataset, Outcome};
use crate::error::{check_dim, Error, Result};

/// Numerically stable logistic function.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub version_id: u64,
    pub trained_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Outcome,
    pub score: f64,
    pub certainty_of_label: f64,
}

impl Prediction {
    fn from_score(score: f64) -> Self {
        let label = if score >= 0.5 { Outcome::Positive } else { Outcome::Negative };
        Self {
            label,
            score,
            certainty_of_label: score.max(1.0 - score),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub l2_penalty: f64,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 300,
            l2_penalty: 1e-3,
            init_seed: 0,
            sample_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::InvalidConfig("l2_penalty must be nonnegative".into()));
        }
        if let Some(w) = &self.sample_weights {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidConfig("sample weights must be finite and nonnegative".into()));
            }
            if w.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidConfig("sample weights are all zero".into()));
            }
        }
        Ok(())
    }
}

impl ScoringModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self {
            weights,
            bias,
            version_id: 0,
            trained_at: 0,
        }
    }

    pub fn with_trained_at(mut self, step: u64) -> Self {
        self.trained_at = step;
        self
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.logit_unchecked(x))
    }

    fn logit_unchecked(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(logistic(self.logit(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(Prediction::from_score(self.score(x)?))
    }

    pub fn label(&self, x: &[f64]) -> Result<Outcome> {
        Ok(self.predict(x)?.label)
    }

    /// Degree of certainty the model assigns to `outcome` at `x`.
    pub fn certainty_of(&self, x: &[f64], outcome: Outcome) -> Result<f64> {
        let score = self.score(x)?;
        Ok(match outcome {
            Outcome::Positive => score,
            Outcome::Negative => 1.0 - score,
        })
    }

    /// Gradient of the positive-class score with respect to the input.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.score(x)?;
        let k = s * (1.0 - s);
        Ok(self.weights.iter().map(|w| k * w).collect())
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut hits = 0usize;
        for (inst, label) in data.rows() {
            if self.label(&inst.values)? == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }

    /// JSON with 17 significant digits per number.
    pub fn to_json(&self) -> Result<String> {
        let num = |v: f64| -> Result<String> {
            if v.is_finite() {
                Ok(format!("{v:.16e}"))
            } else {
                Err(Error::InvalidArgument("model parameters must be finite".into()))
            }
        };
        let weights = self.weights.iter().map(|w| num(*w)).collect::<Result<Vec<_>>>()?;
        Ok(format!(
            "{{\n  \"weights\": [{}],\n  \"bias\": {},\n  \"version_id\": {},\n  \"trained_at\": {}\n}}\n",
            weights.join(", "),
            num(self.bias)?,
            self.version_id,
            self.trained_at
        ))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Malformed(format!("model file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn resolve_sample_weights(data: &LabeledDataset, config: &TrainConfig) -> Result<Vec<f64>> {
    match &config.sample_weights {
        Some(w) => {
            check_dim(data.len(), w.len())?;
            Ok(w.clone())
        }
        None => Ok(vec![1.0; data.len()]),
    }
}

/// Weighted objective minimized by [`train`].
pub fn training_loss(model: &ScoringModel, data: &LabeledDataset, sample_weights: &[f64], l2_penalty: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(data.len(), sample_weights.len())?;
    let n = data.len() as f64;
    let mut total = 0.0;
    for ((inst, label), s) in data.rows().zip(sample_weights) {
        let z = model.logit(&inst.values)?;
        // log(1 + e^{-z}) for positives, log(1 + e^{z}) for negatives.
        let m = if label == Outcome::Positive { -z } else { z };
        let ce = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
        total += s * ce;
    }
    let mean_weight = sample_weights.iter().sum::<f64>() / n;
    let norm2: f64 = model.weights.iter().map(|w| w * w).sum();
    Ok(total / n + 0.5 * l2_penalty * mean_weight * norm2)
}

/// Learning rate below which gradient descent on [`training_loss`] cannot
/// increase the loss: `1 / L` for the curvature bound
/// `L = mean(s_i * (|x_i|^2 + 1)) / 4 + l2 * mean(s_i)`.
pub fn stable_learning_rate(data: &LabeledDataset, sample_weights: &[f64], l2_penalty: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(data.len(), sample_weights.len())?;
    let n = data.len() as f64;
    let curvature: f64 = data
        .instances
        .iter()
        .zip(sample_weights)
        .map(|(i, s)| s * (i.values.iter().map(|v| v * v).sum::<f64>() + 1.0))
        .sum::<f64>()
        / (4.0 * n);
    let mean_weight = sample_weights.iter().sum::<f64>() / n;
    Ok(1.0 / (curvature + l2_penalty * mean_weight))
}

fn initial_model(dim: usize, seed: u64) -> ScoringModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..dim).map(|_| rng.random_range(-0.01..0.01)).collect();
    let bias = rng.random_range(-0.01..0.01);
    ScoringModel::new(weights, bias)
}

/// Trains a fresh model for exactly `config.epochs` full-batch steps.
/// The returned model has `version_id = prior_version + 1`.
pub fn train(data: &LabeledDataset, config: &TrainConfig, prior_version: u64) -> Result<ScoringModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (neg, pos) = data.class_counts();
    if (neg == 0 || pos == 0) && config.sample_weights.is_none() {
        return Err(Error::DegenerateTraining("single-class dataset with unweighted training".into()));
    }
    let sw = resolve_sample_weights(data, config)?;
    let dim = data.schema.len();
    let mut model = initial_model(dim, config.init_seed);
    let n = data.len() as f64;
    let mean_weight = sw.iter().sum::<f64>() / n;
    let reg = config.l2_penalty * mean_weight;
    let lr = config.learning_rate;

    let mut grad_w = vec![0.0; dim];
    for _ in 0..config.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for ((inst, label), s) in data.rows().zip(&sw) {
            let residual = s * (logistic(model.logit_unchecked(&inst.values)) - label.as_f64());
            for (g, v) in grad_w.iter_mut().zip(&inst.values) {
                *g += residual * v;
            }
            grad_b += residual;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            let step = g / n + reg * *w;
            *w -= lr * step;
        }
        model.bias -= lr * (grad_b / n);
    }
    model.version_id = prior_version + 1;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataspec::{FeatureKind, FeatureRange, FeatureSchema, FeatureSpec, Instance, Mutability, MonotoneDirection, ChangeRate};

    fn toy_schema(dim: usize) -> Arc<FeatureSchema> {
        let features = (0..dim)
            .map(|j| FeatureSpec {
                name: format!("f{j}"),
                kind: FeatureKind::Continuous,
                range: FeatureRange::Interval { lower: -10.0, upper: 10.0 },
                mutability: Mutability::Actionable,
                monotone_direction: MonotoneDirection::Free,
                change_rate: ChangeRate::Fast,
                effort_weight: 1.0,
                couples_with: None,
            })
            .collect();
        Arc::new(FeatureSchema::new(features).unwrap())
    }

    /// 20 points on either side of x0 + x1 = 0 with margin >= 1.
    fn separable() -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut data = LabeledDataset::empty(toy_schema(2));
        for i in 0..20 {
            let positive = i % 2 == 0;
            let t: f64 = rng.random_range(-2.0..2.0);
            let offset: f64 = rng.random_range(1.5..3.0);
            let sign = if positive { 1.0 } else { -1.0 };
            // Point on the normal direction (1,1)/sqrt2 at signed distance offset.
            let base = sign * offset / 2f64.sqrt();
            let values = vec![base + t / 2f64.sqrt(), base - t / 2f64.sqrt()];
            data.push(
                Instance { subject_id: i, values, observed_at: 0 },
                if positive { Outcome::Positive } else { Outcome::Negative },
            );
        }
        data
    }

    #[test]
    fn zero_model_scores_half_and_predicts_positive() {
        let m = ScoringModel::new(vec![0.0; 3], 0.0);
        let p = m.predict(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(p.score, 0.5);
        assert_eq!(p.label, Outcome::Positive);
        assert_eq!(p.certainty_of_label, 0.5);
    }

    #[test]
    fn logistic_one() {
        let m = ScoringModel::new(vec![1.0, -1.0], 0.0);
        let p = m.predict(&[2.0, 1.0]).unwrap();
        assert!((p.score - 0.731059).abs() < 1e-6);
        let neg = m.certainty_of(&[2.0, 1.0], Outcome::Negative).unwrap();
        assert!((neg - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn certainty_complement() {
        let m = ScoringModel::new(vec![0.3, -1.7], 0.2);
        for x in [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]] {
            let sum = m.certainty_of(&x, Outcome::Positive).unwrap() + m.certainty_of(&x, Outcome::Negative).unwrap();
            assert!((sum - 1.0).abs() < 1e-15);
        }
        let m = ScoringModel::new(vec![0.0], (0.9f64 / 0.1).ln());
        assert!((m.certainty_of(&[0.0], Outcome::Positive).unwrap() - 0.9).abs() < 1e-12);
        assert!((m.certainty_of(&[0.0], Outcome::Negative).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let m = ScoringModel::new(vec![1.0, 2.0], 0.0);
        assert!(matches!(m.predict(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(m.input_gradient(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = separable();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let m = train(&data, &cfg, 4).unwrap();
        let init = initial_model(2, cfg.init_seed);
        assert_eq!(m.weights, init.weights);
        assert_eq!(m.bias, init.bias);
        assert_eq!(m.version_id, 5);
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let data = separable();
        let cfg = TrainConfig { learning_rate: 0.5, epochs: 500, l2_penalty: 0.0, ..Default::default() };
        let m = train(&data, &cfg, 0).unwrap();
        assert_eq!(m.accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn doubled_weights_halved_rate_same_trajectory() {
        let data = separable();
        for l2 in [0.0, 0.05] {
            let base = TrainConfig { learning_rate: 0.4, epochs: 137, l2_penalty: l2, init_seed: 3, sample_weights: None };
            let doubled = TrainConfig {
                learning_rate: 0.2,
                sample_weights: Some(vec![2.0; data.len()]),
                ..base.clone()
            };
            let a = train(&data, &base, 0).unwrap();
            let b = train(&data, &doubled, 0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_empty_and_single_class() {
        let schema = toy_schema(2);
        assert!(matches!(train(&LabeledDataset::empty(Arc::clone(&schema)), &TrainConfig::default(), 0), Err(Error::EmptyDataset)));
        let mut one = LabeledDataset::empty(schema);
        one.push(Instance { subject_id: 0, values: vec![1.0, 1.0], observed_at: 0 }, Outcome::Positive);
        assert!(matches!(train(&one, &TrainConfig::default(), 0), Err(Error::DegenerateTraining(_))));
        let weighted = TrainConfig { sample_weights: Some(vec![1.0]), ..Default::default() };
        assert!(train(&one, &weighted, 0).is_ok());
    }

    #[test]
    fn rejects_bad_sample_weights() {
        let data = separable();
        let zero = TrainConfig { sample_weights: Some(vec![0.0; data.len()]), ..Default::default() };
        assert!(matches!(train(&data, &zero, 0), Err(Error::InvalidConfig(_))));
        let short = TrainConfig { sample_weights: Some(vec![1.0; 3]), ..Default::default() };
        assert!(matches!(train(&data, &short, 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gradient_at_half_is_quarter_weights() {
        let m = ScoringModel::new(vec![2.0, -4.0, 0.5], -1.0);
        let g = m.input_gradient(&[0.5, 0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.5, -1.0, 0.125]);
        let zero = ScoringModel::new(vec![0.0; 3], 1.3);
        assert_eq!(zero.input_gradient(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn model_json_round_trip() {
        let m = ScoringModel {
            weights: vec![0.1, -1.0 / 3.0, 1e-300, 12345.678901234567],
            bias: -std::f64::consts::PI,
            version_id: 17,
            trained_at: 40,
        };
        let back = ScoringModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_model_file_is_malformed() {
        let text = ScoringModel::new(vec![1.0, 2.0], 0.5).to_json().unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(ScoringModel::from_json(cut), Err(Error::Malformed(_))));
    }

    #[test]
    fn descent_below_stability_bound() {
        let data = separable();
        let sw = vec![1.0; data.len()];
        let l2 = 0.01;
        let bound = stable_learning_rate(&data, &sw, l2).unwrap();
        let cfg = TrainConfig { learning_rate: 0.9 * bound, epochs: 50, l2_penalty: l2, init_seed: 8, sample_weights: None };
        let init = initial_model(2, 8);
        let trained = train(&data, &cfg, 0).unwrap();
        assert!(training_loss(&trained, &data, &sw, l2).unwrap() <= training_loss(&init, &data, &sw, l2).unwrap());
    }
}
