#![allow(dead_code)]

use cfcommit_core::cfsearch::DistanceWeights;
use cfcommit_core::dataspec::{FeatureSchema, Instance, Outcome};
use cfcommit_core::model::ScoringModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A two-feature problem on `[0, 2]^2` whose L1-optimal counterfactual sits
/// on a grid point of resolution 0.01, nudged 1e-9 into the target side.
pub struct GridProblem {
    pub schema: FeatureSchema,
    pub model: ScoringModel,
    pub weights: DistanceWeights,
    pub x: Instance,
    pub target: Outcome,
}

fn grid_value(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    f64::from(rng.random_range(lo..=hi)) / 100.0
}

pub fn grid_problem(seed: u64) -> GridProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let w = [rng.random_range(0.3..3.0) * sign(&mut rng), rng.random_range(0.3..3.0) * sign(&mut rng)];
        let dw = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
        let x = [grid_value(&mut rng, 0, 200), grid_value(&mut rng, 0, 200)];
        let best = if w[0].abs() / dw[0] >= w[1].abs() / dw[1] { 0 } else { 1 };
        // Target side: positive if moving `best` upward increases the logit.
        let target = if rng.random_bool(0.5) { Outcome::Positive } else { Outcome::Negative };
        let helpful_up = (w[best] > 0.0) == (target == Outcome::Positive);
        let end = if helpful_up {
            if x[best] >= 1.9 {
                continue;
            }
            grid_value(&mut rng, (x[best] * 100.0).round() as i32 + 10, 200)
        } else {
            if x[best] <= 0.1 {
                continue;
            }
            grid_value(&mut rng, 0, (x[best] * 100.0).round() as i32 - 10)
        };
        let mut c = x;
        c[best] = end;
        let nudge = if target == Outcome::Positive { 1e-9 } else { -1e-9 };
        let bias = -(w[0] * c[0] + w[1] * c[1]) + nudge;
        let model = ScoringModel::new(w.to_vec(), bias);
        if model.label(&c).unwrap() != target || model.label(&x).unwrap() == target {
            continue;
        }
        return GridProblem {
            schema: FeatureSchema::uniform_box(2, 0.0, 2.0).unwrap(),
            model,
            weights: DistanceWeights::numeric(dw.to_vec()).unwrap(),
            x: Instance { subject_id: seed, values: x.to_vec(), observed_at: 0 },
            target,
        };
    }
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// Exhaustive search over the 0.01 grid of `[0, 2]^2`: smallest weighted L1
/// distance among grid points the model labels `target`.
pub fn grid_oracle(model: &ScoringModel, x: &[f64], target: Outcome, w: &[f64]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..=200 {
        for k in 0..=200 {
            let c = [f64::from(i) / 100.0, f64::from(k) / 100.0];
            let z = model.weights[0] * c[0] + model.weights[1] * c[1] + model.bias;
            let score = 1.0 / (1.0 + (-z).exp());
            let label = if score >= 0.5 { Outcome::Positive } else { Outcome::Negative };
            if label == target {
                let d = w[0] * (c[0] - x[0]).abs() + w[1] * (c[1] - x[1]).abs();
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
    }
    best
}
