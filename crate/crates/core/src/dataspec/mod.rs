//! Feature schema, synthetic credit populations and ground-truth drift.
//!
//! Labels come from a latent linear score perturbed by logistic noise:
//! `label = 1` iff `coefficients · x + intercept + noise_scale · ε >= 0`
//! with `ε ~ Logistic(0, 1)`. Drift moves the ground truth only; the
//! feature distribution stays fixed.

mod io;
mod schema;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use io::{load_dataset, save_dataset, write_dataset};
pub use schema::{
    reference_schema, ChangeRate, FeatureKind, FeatureRange, FeatureSchema, FeatureSpec,
    MonotoneDirection, Mutability,
};

use crate::error::{check_dim, Error, Result};

/// Binary credit decision. `Positive` is creditworthy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Negative,
    Positive,
}

impl Outcome {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Outcome::Negative),
            1 => Some(Outcome::Positive),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Outcome::Negative => 0,
            Outcome::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.bit())
    }

    pub fn flipped(self) -> Self {
        match self {
            Outcome::Negative => Outcome::Positive,
            Outcome::Positive => Outcome::Negative,
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bit = u8::deserialize(d)?;
        Outcome::from_bit(bit).ok_or_else(|| serde::de::Error::custom("outcome must be 0 or 1"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub subject_id: u64,
    pub values: Vec<f64>,
    pub observed_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub schema: Arc<FeatureSchema>,
    pub instances: Vec<Instance>,
    pub labels: Vec<Outcome>,
}

impl LabeledDataset {
    pub fn empty(schema: Arc<FeatureSchema>) -> Self {
        Self {
            schema,
            instances: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn new(schema: Arc<FeatureSchema>, instances: Vec<Instance>, labels: Vec<Outcome>) -> Result<Self> {
        check_dim(instances.len(), labels.len())?;
        for (row, inst) in instances.iter().enumerate() {
            schema.check_values(&inst.values, row)?;
        }
        Ok(Self {
            schema,
            instances,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn push(&mut self, instance: Instance, label: Outcome) {
        self.instances.push(instance);
        self.labels.push(label);
    }

    /// `(negative, positive)` label counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == Outcome::Positive).count();
        (self.labels.len() - pos, pos)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Instance, Outcome)> {
        self.instances.iter().zip(self.labels.iter().copied())
    }

    /// Values of feature `j` across all rows.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.instances.iter().map(|i| i.values[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScorer {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub noise_scale: f64,
}

impl GroundTruthScorer {
    pub fn latent(&self, values: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(values)
            .map(|(c, v)| c * v)
            .sum::<f64>()
            + self.intercept
    }

    /// Probability that the sampled label is positive.
    pub fn positive_probability(&self, values: &[f64]) -> f64 {
        let z = self.latent(values);
        if self.noise_scale > 0.0 {
            crate::model::logistic(z / self.noise_scale)
        } else if z >= 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Noise-free label.
    pub fn expected_label(&self, values: &[f64]) -> Outcome {
        if self.latent(values) >= 0.0 {
            Outcome::Positive
        } else {
            Outcome::Negative
        }
    }

    pub fn sample_label<R: Rng + ?Sized>(&self, values: &[f64], rng: &mut R) -> Outcome {
        // Always consume one draw so label streams stay aligned across scorers.
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let noise = (u / (1.0 - u)).ln();
        if self.latent(values) + self.noise_scale * noise >= 0.0 {
            Outcome::Positive
        } else {
            Outcome::Negative
        }
    }

    fn check(&self, schema: &FeatureSchema) -> Result<()> {
        check_dim(schema.len(), self.coefficients.len())?;
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidArgument("noise_scale must be nonnegative".into()));
        }
        Ok(())
    }

    /// Returns a copy whose intercept is tuned by bisection so that the
    /// expected fraction of negative labels over a calibration sample of
    /// the schema's feature distribution equals `negative_fraction`.
    pub fn calibrated(&self, schema: &FeatureSchema, negative_fraction: f64, sample_size: usize, seed: u64) -> Result<Self> {
        self.check(schema)?;
        if !(0.0 < negative_fraction && negative_fraction < 1.0) || sample_size == 0 {
            return Err(Error::InvalidArgument("calibration needs a fraction in (0,1) and a sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = sample_feature_rows(schema, sample_size, &mut rng);
        let partial: Vec<f64> = sample
            .iter()
            .map(|x| self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum())
            .collect();
        let negative_rate = |b: f64| {
            let probe = GroundTruthScorer {
                intercept: b,
                ..self.clone()
            };
            partial
                .iter()
                .map(|p| {
                    let z = p + b;
                    if probe.noise_scale > 0.0 {
                        1.0 - crate::model::logistic(z / probe.noise_scale)
                    } else if z >= 0.0 {
                        0.0
                    } else {
                        1.0
                    }
                })
                .sum::<f64>()
                / partial.len() as f64
        };
        let spread = partial.iter().fold(0.0_f64, |m, p| m.max(p.abs())) + 50.0 * (1.0 + self.noise_scale);
        let (mut lo, mut hi) = (-spread, spread);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // Negative rate falls as the intercept grows.
            if negative_rate(mid) > negative_fraction {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(GroundTruthScorer {
            intercept: 0.5 * (lo + hi),
            ..self.clone()
        })
    }
}

/// Reference ground truth for [`reference_schema`]: nationality carries no
/// weight, the intercept is tuned so that 30% of the population is not
/// creditworthy.
pub fn reference_scorer() -> GroundTruthScorer {
    static REFERENCE: std::sync::OnceLock<GroundTruthScorer> = std::sync::OnceLock::new();
    REFERENCE.get_or_init(calibrate_reference).clone()
}

fn calibrate_reference() -> GroundTruthScorer {
    GroundTruthScorer {
        coefficients: vec![0.3, 0.35, 0.4, 0.35, 0.6, 0.0],
        intercept: 0.0,
        noise_scale: 0.5,
    }
    .calibrated(&reference_schema(), 0.30, 20_000, 0x5eed_ca1b)
    .expect("reference scorer calibrates")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub at_step: u64,
    pub intercept_shift: f64,
    pub coefficient_shifts: Vec<f64>,
}

impl DriftEvent {
    pub fn intercept_only(at_step: u64, intercept_shift: f64, dim: usize) -> Self {
        Self {
            at_step,
            intercept_shift,
            coefficient_shifts: vec![0.0; dim],
        }
    }

    /// The shift that undoes this one.
    pub fn inverse(&self) -> Self {
        Self {
            at_step: self.at_step,
            intercept_shift: -self.intercept_shift,
            coefficient_shifts: self.coefficient_shifts.iter().map(|s| -s).collect(),
        }
    }
}

pub fn apply_drift(scorer: &GroundTruthScorer, event: &DriftEvent) -> Result<GroundTruthScorer> {
    check_dim(scorer.coefficients.len(), event.coefficient_shifts.len())?;
    Ok(GroundTruthScorer {
        coefficients: scorer
            .coefficients
            .iter()
            .zip(&event.coefficient_shifts)
            .map(|(c, s)| c + s)
            .collect(),
        intercept: scorer.intercept + event.intercept_shift,
        noise_scale: scorer.noise_scale,
    })
}

/// Draws one feature vector from the schema's fixed distribution:
/// clamped normals centred in the interval (rounded for ordinals),
/// uniform indices for categoricals.
pub fn sample_feature_row<R: Rng + ?Sized>(schema: &FeatureSchema, rng: &mut R) -> Vec<f64> {
    schema
        .features
        .iter()
        .map(|f| {
            let (lo, hi) = f.bounds();
            match f.kind {
                FeatureKind::Categorical => rng.random_range(0..=hi as usize) as f64,
                FeatureKind::Continuous | FeatureKind::Ordinal => {
                    let v = if hi > lo {
                        let normal = Normal::new(0.5 * (lo + hi), (hi - lo) / 6.0).expect("finite normal");
                        normal.sample(rng).clamp(lo, hi)
                    } else {
                        lo
                    };
                    if f.kind == FeatureKind::Ordinal {
                        v.round().clamp(lo.ceil(), hi.floor())
                    } else {
                        v
                    }
                }
            }
        })
        .collect()
}

pub fn sample_feature_rows<R: Rng + ?Sized>(schema: &FeatureSchema, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| sample_feature_row(schema, rng)).collect()
}

/// Draws `n` subjects and labels them with `scorer`. Pure in its arguments.
pub fn generate_population(schema: &Arc<FeatureSchema>, scorer: &GroundTruthScorer, n: usize, seed: u64) -> Result<LabeledDataset> {
    scorer.check(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = LabeledDataset::empty(Arc::clone(schema));
    for id in 0..n {
        let values = sample_feature_row(schema, &mut rng);
        let label = scorer.sample_label(&values, &mut rng);
        data.push(
            Instance {
                subject_id: id as u64,
                values,
                observed_at: 0,
            },
            label,
        );
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Arc<FeatureSchema> {
        Arc::new(reference_schema())
    }

    #[test]
    fn empty_population() {
        let d = generate_population(&schema(), &reference_scorer(), 0, 1).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.class_counts(), (0, 0));
    }

    #[test]
    fn negative_class_near_thirty_percent() {
        let n = 10_000;
        let d = generate_population(&schema(), &reference_scorer(), n, 77).unwrap();
        let (neg, _) = d.class_counts();
        let frac = neg as f64 / n as f64;
        let sd = (0.3 * 0.7 / n as f64).sqrt();
        assert!((frac - 0.30).abs() <= 3.0 * sd, "negative fraction {frac}");
    }

    #[test]
    fn same_seed_same_population() {
        let a = generate_population(&schema(), &reference_scorer(), 300, 9).unwrap();
        let b = generate_population(&schema(), &reference_scorer(), 300, 9).unwrap();
        assert_eq!(a, b);
        let bits = |d: &LabeledDataset| -> Vec<u64> {
            d.instances.iter().flat_map(|i| i.values.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn generated_rows_respect_ranges() {
        let s = schema();
        let d = generate_population(&s, &reference_scorer(), 2_000, 3).unwrap();
        for (row, inst) in d.instances.iter().enumerate() {
            s.check_values(&inst.values, row).unwrap();
        }
    }

    #[test]
    fn scorer_dimension_mismatch() {
        let mut scorer = reference_scorer();
        scorer.coefficients.pop();
        assert!(matches!(
            generate_population(&schema(), &scorer, 10, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_drift_is_identity() {
        let s = reference_scorer();
        let d = apply_drift(&s, &DriftEvent::intercept_only(5, 0.0, 6)).unwrap();
        assert_eq!(d, s);
    }

    #[test]
    fn downturn_lowers_every_probability() {
        let s = reference_scorer();
        let drifted = apply_drift(&s, &DriftEvent::intercept_only(0, -0.8, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for x in sample_feature_rows(&reference_schema(), 1_000, &mut rng) {
            assert!(drifted.positive_probability(&x) <= s.positive_probability(&x));
        }
    }

    #[test]
    fn boundary_instance_flips_under_double_shift() {
        let s = reference_scorer();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = sample_feature_rows(&reference_schema(), 200, &mut rng)
            .into_iter()
            .find(|x| s.latent(x) > 0.0)
            .unwrap();
        let shift = -2.0 * s.latent(&x);
        let drifted = apply_drift(&s, &DriftEvent::intercept_only(0, shift, 6)).unwrap();
        assert_eq!(s.expected_label(&x), Outcome::Positive);
        assert_eq!(drifted.expected_label(&x), Outcome::Negative);
        assert!((drifted.latent(&x) + s.latent(&x)).abs() < 1e-12);
    }

    #[test]
    fn drift_dimension_mismatch() {
        let s = reference_scorer();
        assert!(apply_drift(&s, &DriftEvent::intercept_only(0, 1.0, 3)).is_err());
    }

    #[test]
    fn drift_does_not_touch_original() {
        let s = reference_scorer();
        let before = s.clone();
        let _ = apply_drift(&s, &DriftEvent::intercept_only(0, -1.0, 6)).unwrap();
        assert_eq!(s, before);
    }
}
