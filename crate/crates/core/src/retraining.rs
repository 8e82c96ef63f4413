//! Counterfactual-augmented retraining.
//!
//! Scenarios shared with subjects are added to the training pool as rows
//! labeled with their committed outcome, the pool is rebalanced, and
//! candidate models are ranked by a blend of holdout accuracy and how
//! confidently they honor the outstanding scenarios.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataspec::{Instance, LabeledDataset, Outcome};
use crate::error::{check_dim, Error, Result};
use crate::model::{train, ScoringModel, TrainConfig};

/// Subject id carried by scenario rows in an augmented dataset; they may
/// describe no real applicant.
pub const SCENARIO_SUBJECT: u64 = u64::MAX;

/// A committed scenario: the point shared with a subject and the outcome
/// promised there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub commitment_id: u64,
    pub point: Vec<f64>,
    pub target: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub negative: usize,
    pub positive: usize,
}

impl ClassCounts {
    fn of(data: &LabeledDataset) -> Self {
        let (negative, positive) = data.class_counts();
        Self { negative, positive }
    }

    fn total(self) -> usize {
        self.negative + self.positive
    }

    /// Distance of the positive share from an even split.
    pub fn imbalance(self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.positive as f64 / self.total() as f64 - 0.5).abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub base_size: usize,
    pub new_size: usize,
    pub scenario_count: usize,
    pub class_counts_before: ClassCounts,
    pub class_counts_after: ClassCounts,
    pub imbalance_delta: f64,
}

/// Concatenates `base`, `new_data` and one row per scenario labeled with
/// its committed outcome. Scenario rows are not deduplicated.
pub fn augment(base: &LabeledDataset, new_data: &LabeledDataset, scenarios: &[Scenario]) -> Result<(LabeledDataset, AugmentationReport)> {
    if base.schema != new_data.schema {
        return Err(Error::SchemaMismatch("base and new data use different schemas".into()));
    }
    let mut out = LabeledDataset::empty(Arc::clone(&base.schema));
    for (inst, label) in base.rows().chain(new_data.rows()) {
        out.push(inst.clone(), label);
    }
    let before = ClassCounts::of(&out);
    for (i, s) in scenarios.iter().enumerate() {
        base.schema
            .check_values(&s.point, out.len())
            .map_err(|e| Error::SchemaMismatch(format!("scenario {i}: {e}")))?;
        out.push(
            Instance {
                subject_id: SCENARIO_SUBJECT,
                values: s.point.clone(),
                observed_at: 0,
            },
            s.target,
        );
    }
    let after = ClassCounts::of(&out);
    let report = AugmentationReport {
        base_size: base.len(),
        new_size: new_data.len(),
        scenario_count: scenarios.len(),
        class_counts_before: before,
        class_counts_after: after,
        imbalance_delta: after.imbalance() - before.imbalance(),
    };
    Ok((out, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub negative: f64,
    pub positive: f64,
}

impl ClassWeights {
    pub fn of(&self, label: Outcome) -> f64 {
        match label {
            Outcome::Negative => self.negative,
            Outcome::Positive => self.positive,
        }
    }

    pub fn sample_weights(&self, data: &LabeledDataset) -> Vec<f64> {
        data.labels.iter().map(|l| self.of(*l)).collect()
    }
}

/// Inverse-frequency weights `N / (2 N_c)`.
pub fn class_weights(data: &LabeledDataset) -> Result<ClassWeights> {
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::DegenerateTraining("class weights need both classes".into()));
    }
    let n = data.len() as f64;
    Ok(ClassWeights {
        negative: n / (2.0 * neg as f64),
        positive: n / (2.0 * pos as f64),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceRemedy {
    #[default]
    ClassWeights,
    Oversample,
    Undersample,
    None,
}

/// Applies an imbalance remedy. Returns the dataset to train on and the
/// sample weights to use with it, if any.
pub fn rebalance(data: &LabeledDataset, remedy: ImbalanceRemedy, seed: u64) -> Result<(LabeledDataset, Option<Vec<f64>>)> {
    match remedy {
        ImbalanceRemedy::None => Ok((data.clone(), None)),
        ImbalanceRemedy::ClassWeights => {
            let w = class_weights(data)?;
            Ok((data.clone(), Some(w.sample_weights(data))))
        }
        ImbalanceRemedy::Oversample | ImbalanceRemedy::Undersample => {
            class_weights(data)?;
            let (neg, pos) = data.class_counts();
            let minority = if neg < pos { Outcome::Negative } else { Outcome::Positive };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut minority_rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == minority).collect();
            let mut majority_rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] != minority).collect();
            let mut out = LabeledDataset::empty(Arc::clone(&data.schema));
            if remedy == ImbalanceRemedy::Oversample {
                let need = majority_rows.len() - minority_rows.len();
                minority_rows.shuffle(&mut rng);
                let extra: Vec<usize> = minority_rows.iter().cycle().take(need).copied().collect();
                for i in (0..data.len()).chain(extra) {
                    out.push(data.instances[i].clone(), data.labels[i]);
                }
            } else {
                majority_rows.shuffle(&mut rng);
                majority_rows.truncate(minority_rows.len());
                let mut keep: Vec<usize> = minority_rows.into_iter().chain(majority_rows).collect();
                keep.sort_unstable();
                for i in keep {
                    out.push(data.instances[i].clone(), data.labels[i]);
                }
            }
            Ok((out, None))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonoringReport {
    pub certainties: Vec<(u64, f64)>,
    pub threshold: f64,
    pub honoring_rate: f64,
    pub weighted_honoring_rate: f64,
    /// No scenarios were outstanding; both rates are 1 by convention.
    pub empty_ledger: bool,
}

/// How confidently `model` predicts the committed outcome of each scenario.
/// `probabilities` are the scenarios' implementation probabilities.
pub fn honoring_report(model: &ScoringModel, scenarios: &[Scenario], probabilities: &[f64], tau: f64) -> Result<HonoringReport> {
    check_dim(scenarios.len(), probabilities.len())?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    let certainties = scenarios
        .iter()
        .map(|s| Ok((s.commitment_id, model.certainty_of(&s.point, s.target)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_certainties(certainties, probabilities, tau))
}

pub(crate) fn report_from_certainties(certainties: Vec<(u64, f64)>, probabilities: &[f64], tau: f64) -> HonoringReport {
    if certainties.is_empty() {
        return HonoringReport {
            certainties,
            threshold: tau,
            honoring_rate: 1.0,
            weighted_honoring_rate: 1.0,
            empty_ledger: true,
        };
    }
    let honored: Vec<bool> = certainties.iter().map(|(_, c)| *c >= tau).collect();
    let honoring_rate = honored.iter().filter(|h| **h).count() as f64 / honored.len() as f64;
    let mass: f64 = probabilities.iter().sum();
    let weighted_honoring_rate = if mass > 0.0 {
        honored.iter().zip(probabilities).filter(|(h, _)| **h).map(|(_, p)| p).sum::<f64>() / mass
    } else {
        honoring_rate
    };
    HonoringReport {
        certainties,
        threshold: tau,
        honoring_rate,
        weighted_honoring_rate,
        empty_ledger: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub holdout_accuracy: f64,
    pub weighted_honoring_rate: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub model: ScoringModel,
    pub report: HonoringReport,
    pub chosen: usize,
    pub candidates: Vec<CandidateScore>,
}

pub struct SelectionInputs<'a> {
    pub augmented: &'a LabeledDataset,
    pub holdout: &'a LabeledDataset,
    pub scenarios: &'a [Scenario],
    pub probabilities: &'a [f64],
    pub tau: f64,
    pub alpha: f64,
    pub remedy: ImbalanceRemedy,
}

/// Trains every candidate on the rebalanced augmented set and keeps the one
/// maximizing `alpha * holdout_accuracy + (1 - alpha) * weighted_honoring_rate`
/// (ties to the lowest index). The winner gets `base_version + 1`.
pub fn retrain_and_select(candidates: &[TrainConfig], base_version: u64, inputs: &SelectionInputs<'_>) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate configurations".into()));
    }
    if !(0.0..=1.0).contains(&inputs.alpha) {
        return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", inputs.alpha)));
    }
    check_dim(inputs.scenarios.len(), inputs.probabilities.len())?;

    let trained: Vec<Result<(ScoringModel, HonoringReport, CandidateScore)>> = candidates
        .par_iter()
        .map(|cfg| {
            let (data, weights) = rebalance(inputs.augmented, inputs.remedy, cfg.init_seed)?;
            let cfg = TrainConfig {
                sample_weights: weights,
                ..cfg.clone()
            };
            let model = train(&data, &cfg, base_version)?;
            let accuracy = model.accuracy(inputs.holdout)?;
            let report = honoring_report(&model, inputs.scenarios, inputs.probabilities, inputs.tau)?;
            let score = inputs.alpha * accuracy + (1.0 - inputs.alpha) * report.weighted_honoring_rate;
            Ok((
                model,
                report.clone(),
                CandidateScore {
                    holdout_accuracy: accuracy,
                    weighted_honoring_rate: report.weighted_honoring_rate,
                    score,
                },
            ))
        })
        .collect();
    let trained = trained.into_iter().collect::<Result<Vec<_>>>()?;

    let mut chosen = 0;
    for (i, (_, _, s)) in trained.iter().enumerate() {
        if s.score > trained[chosen].2.score {
            chosen = i;
        }
    }
    let scores = trained.iter().map(|t| t.2.clone()).collect();
    let (model, report, _) = trained.into_iter().nth(chosen).expect("chosen index in range");
    Ok(Selection {
        model,
        report,
        chosen,
        candidates: scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspec::FeatureSchema;

    fn dataset(pos: usize, neg: usize) -> LabeledDataset {
        let schema = Arc::new(FeatureSchema::uniform_box(1, -10.0, 10.0).unwrap());
        let mut d = LabeledDataset::empty(schema);
        for i in 0..pos {
            d.push(Instance { subject_id: i as u64, values: vec![1.0 + i as f64 % 3.0], observed_at: 0 }, Outcome::Positive);
        }
        for i in 0..neg {
            d.push(Instance { subject_id: (pos + i) as u64, values: vec![-1.0 - i as f64 % 3.0], observed_at: 0 }, Outcome::Negative);
        }
        d
    }

    fn scenario(id: u64, x: f64, target: Outcome) -> Scenario {
        Scenario { commitment_id: id, point: vec![x], target }
    }

    #[test]
    fn augmented_cardinality() {
        let base = dataset(70, 30);
        let new = dataset(14, 6);
        let s: Vec<Scenario> = (0..5).map(|i| scenario(i, 0.5, Outcome::Positive)).collect();
        let (aug, rep) = augment(&base, &new, &s).unwrap();
        assert_eq!(aug.len(), 125);
        assert_eq!(rep.base_size + rep.new_size + rep.scenario_count, 125);
        assert_eq!(rep.class_counts_before, ClassCounts { negative: 36, positive: 84 });
        assert_eq!(rep.class_counts_after, ClassCounts { negative: 36, positive: 89 });
        let expected = (89.0 / 125.0 - 0.5) - (84.0 / 120.0 - 0.5);
        assert!((rep.imbalance_delta - expected).abs() < 1e-15);
        assert!(rep.imbalance_delta > 0.0);
        for (i, (inst, label)) in base.rows().chain(new.rows()).enumerate() {
            assert_eq!(&aug.instances[i], inst);
            assert_eq!(aug.labels[i], label);
        }
        assert!(aug.labels[120..].iter().all(|l| *l == Outcome::Positive));
    }

    #[test]
    fn empty_scenarios_is_plain_union() {
        let (aug, rep) = augment(&dataset(3, 2), &dataset(1, 1), &[]).unwrap();
        assert_eq!(aug.len(), 7);
        assert_eq!(rep.imbalance_delta, 0.0);
    }

    #[test]
    fn augment_rejects_schema_mismatch() {
        let other = LabeledDataset::empty(Arc::new(FeatureSchema::uniform_box(2, 0.0, 1.0).unwrap()));
        assert!(matches!(augment(&dataset(2, 2), &other, &[]), Err(Error::SchemaMismatch(_))));
        assert!(augment(&dataset(2, 2), &dataset(1, 1), &[scenario(1, 50.0, Outcome::Positive)]).is_err());
    }

    #[test]
    fn class_weight_examples() {
        let w = class_weights(&dataset(50, 50)).unwrap();
        assert_eq!((w.negative, w.positive), (1.0, 1.0));
        let w = class_weights(&dataset(70, 30)).unwrap();
        assert!((w.negative - 1.6667).abs() < 1e-4);
        assert!((w.positive - 0.7143).abs() < 1e-4);
        assert!(class_weights(&dataset(5, 0)).is_err());
    }

    #[test]
    fn resampling_balances() {
        let d = dataset(70, 30);
        let (over, w) = rebalance(&d, ImbalanceRemedy::Oversample, 1).unwrap();
        assert!(w.is_none());
        assert_eq!(over.class_counts(), (70, 70));
        let (under, _) = rebalance(&d, ImbalanceRemedy::Undersample, 1).unwrap();
        assert_eq!(under.class_counts(), (30, 30));
        let (_, w) = rebalance(&d, ImbalanceRemedy::ClassWeights, 1).unwrap();
        assert_eq!(w.unwrap().len(), 100);
    }

    fn certainty_model(certainties: &[f64]) -> (ScoringModel, Vec<Scenario>) {
        // Identity-logit model: score = logistic(x), so x = logit(certainty).
        let m = ScoringModel::new(vec![1.0], 0.0);
        let s = certainties
            .iter()
            .enumerate()
            .map(|(i, c)| scenario(i as u64, (c / (1.0 - c)).ln(), Outcome::Positive))
            .collect();
        (m, s)
    }

    #[test]
    fn honoring_rate_three_of_four() {
        let (m, s) = certainty_model(&[0.9, 0.6, 0.55, 0.2]);
        let r = honoring_report(&m, &s, &[1.0; 4], 0.5).unwrap();
        assert_eq!(r.honoring_rate, 0.75);
        assert_eq!(r.weighted_honoring_rate, 0.75);
        let r = honoring_report(&m, &s, &[0.1, 0.1, 0.1, 0.7], 0.5).unwrap();
        assert!((r.weighted_honoring_rate - 0.3).abs() < 1e-12);
    }

    #[test]
    fn honoring_edge_cases() {
        let m = ScoringModel::new(vec![0.0], 50.0);
        let s = vec![scenario(1, 0.0, Outcome::Positive), scenario(2, 3.0, Outcome::Positive)];
        assert_eq!(honoring_report(&m, &s, &[0.3, 0.4], 0.99).unwrap().honoring_rate, 1.0);
        let empty = honoring_report(&m, &[], &[], 0.5).unwrap();
        assert!(empty.empty_ledger);
        assert_eq!(empty.honoring_rate, 1.0);
        assert!(matches!(honoring_report(&m, &s, &[1.0], 0.5), Err(Error::DimensionMismatch { .. })));
    }

    fn inputs<'a>(aug: &'a LabeledDataset, hold: &'a LabeledDataset, s: &'a [Scenario], p: &'a [f64], alpha: f64) -> SelectionInputs<'a> {
        SelectionInputs { augmented: aug, holdout: hold, scenarios: s, probabilities: p, tau: 0.5, alpha, remedy: ImbalanceRemedy::ClassWeights }
    }

    #[test]
    fn selection_follows_alpha() {
        let data = dataset(30, 20);
        let hold = dataset(10, 10);
        // A scenario the short-trained candidate honors but the long one does not.
        let s = vec![scenario(1, -0.05, Outcome::Positive)];
        let p = vec![1.0];
        let candidates = vec![
            TrainConfig { learning_rate: 0.5, epochs: 200, l2_penalty: 0.0, init_seed: 1, sample_weights: None },
            TrainConfig { learning_rate: 0.5, epochs: 0, l2_penalty: 0.0, init_seed: 2, sample_weights: None },
        ];
        let acc = retrain_and_select(&candidates, 3, &inputs(&data, &hold, &s, &p, 1.0)).unwrap();
        let best_acc = acc.candidates.iter().map(|c| c.holdout_accuracy).fold(f64::MIN, f64::max);
        assert_eq!(acc.candidates[acc.chosen].holdout_accuracy, best_acc);
        assert_eq!(acc.model.version_id, 4);
        let hon = retrain_and_select(&candidates, 3, &inputs(&data, &hold, &s, &p, 0.0)).unwrap();
        let best_hon = hon.candidates.iter().map(|c| c.weighted_honoring_rate).fold(f64::MIN, f64::max);
        assert_eq!(hon.candidates[hon.chosen].weighted_honoring_rate, best_hon);
        for c in &hon.candidates {
            assert!((c.score - c.weighted_honoring_rate).abs() < 1e-15);
        }
    }

    #[test]
    fn selection_is_deterministic_and_validates() {
        let data = dataset(30, 20);
        let hold = dataset(10, 10);
        let cands = vec![TrainConfig::default(), TrainConfig { l2_penalty: 0.5, ..Default::default() }];
        let a = retrain_and_select(&cands, 0, &inputs(&data, &hold, &[], &[], 0.5)).unwrap();
        let b = retrain_and_select(&cands, 0, &inputs(&data, &hold, &[], &[], 0.5)).unwrap();
        assert_eq!(a.model, b.model);
        assert!(retrain_and_select(&[], 0, &inputs(&data, &hold, &[], &[], 0.5)).is_err());
        assert!(retrain_and_select(&cands, 0, &inputs(&data, &hold, &[], &[], 1.5)).is_err());
    }
}
