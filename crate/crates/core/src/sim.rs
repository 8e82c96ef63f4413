//! Discrete-time simulation of a lending institution that issues
//! counterfactual explanations, retrains its model and later meets the
//! subjects who acted on them.
//!
//! Each step runs, in order: drift, retraining, resolutions, implementations,
//! expiry, then new applications with explanations and issuance.
//! Resolutions happen one step after implementation, so a commitment
//! implemented at `t1` resolves at `t1 + 1`.
//!
//! Every random draw comes from a ChaCha stream keyed by purpose, step and
//! subject, and every subject consumes its draws whether or not it uses
//! them. Two runs that differ only in the augmentation switch therefore see
//! the same applicants, labels and implementation decisions until their
//! models diverge.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfsearch::{generate, mad_weights, DistanceWeights, SearchConfig};
use crate::chronicle::detect;
use crate::commitments::{CommitmentStatus, Ledger};
use crate::dataspec::{
    apply_drift, generate_population, reference_schema, reference_scorer, sample_feature_rows, DriftEvent,
    FeatureSchema, GroundTruthScorer, Instance, LabeledDataset, Outcome,
};
use crate::error::{Error, Result};
use crate::model::{train, ScoringModel, TrainConfig};
use crate::policy::{evaluate_cohort, regime_at, CommitmentPolicy, CoverageOutcome, EconomicIndexSeries, Regime};
use crate::retraining::{augment, rebalance, retrain_and_select, ImbalanceRemedy, Scenario, SelectionInputs};

pub const REFERENCE_SEED: u64 = 0x00c0_ffee;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicIndexConfig {
    pub base: f64,
    /// Index change per unit of intercept shift.
    pub sensitivity: f64,
    pub stress_threshold: f64,
    pub crisis_threshold: f64,
}

impl Default for EconomicIndexConfig {
    fn default() -> Self {
        Self {
            base: 1.0,
            sensitivity: 0.25,
            stress_threshold: 0.9,
            crisis_threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub steps: u64,
    pub population: usize,
    pub application_rate: f64,
    pub explanation_request_rate: f64,
    /// Inclusive range of steps between issuance and implementation.
    pub implementation_delay: (u64, u64),
    pub implementation_probability_scale: f64,
    /// Steps after issuance at which a never-implemented commitment expires.
    pub expiry_after: u64,
    pub drift_events: Vec<DriftEvent>,
    pub retrain_every: u64,
    /// Steps of application history kept for retraining; 0 keeps everything.
    pub data_window: u64,
    pub holdout_size: usize,
    pub evaluation_size: usize,
    pub augmentation_enabled: bool,
    pub remedy: ImbalanceRemedy,
    pub policy: CommitmentPolicy,
    pub index: EconomicIndexConfig,
    pub override_unit_cost: f64,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub tau: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl SimConfig {
    /// The pinned reference scenario: 500 subjects over 60 steps, a downturn
    /// at step 30, retraining every 10 steps without augmentation, and an
    /// unconditional policy.
    pub fn reference() -> Self {
        let dim = reference_schema().len();
        Self {
            steps: 60,
            population: 500,
            application_rate: 0.1,
            explanation_request_rate: 0.3,
            implementation_delay: (1, 4),
            implementation_probability_scale: 2.0,
            expiry_after: 8,
            drift_events: vec![DriftEvent::intercept_only(30, -1.0, dim)],
            retrain_every: 10,
            data_window: 20,
            holdout_size: 500,
            evaluation_size: 2000,
            augmentation_enabled: false,
            remedy: ImbalanceRemedy::ClassWeights,
            policy: CommitmentPolicy::unconditional("unconditional"),
            index: EconomicIndexConfig::default(),
            override_unit_cost: 1.0,
            search: SearchConfig {
                restarts: 1,
                ..SearchConfig::default()
            },
            train: TrainConfig {
                learning_rate: 0.02,
                epochs: 1500,
                l2_penalty: 1e-3,
                init_seed: 0,
                sample_weights: None,
            },
            tau: 0.5,
            alpha: 0.5,
            seed: REFERENCE_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("sim: {m}")));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.application_rate) || !unit(self.explanation_request_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if !unit(self.tau) || !unit(self.alpha) {
            return bad("tau and alpha must lie in [0, 1]");
        }
        if self.retrain_every == 0 {
            return bad("retrain_every must be at least 1");
        }
        let (lo, hi) = self.implementation_delay;
        if lo == 0 || lo > hi {
            return bad("implementation_delay must be a range of positive steps");
        }
        if self.expiry_after <= hi {
            return bad("expiry_after must exceed the longest implementation delay");
        }
        if !(self.implementation_probability_scale > 0.0) || !(self.override_unit_cost >= 0.0) {
            return bad("implementation_probability_scale must be positive and override_unit_cost nonnegative");
        }
        if self.population == 0 || self.population >= 1 << 28 || self.steps >= 1 << 28 {
            return bad("population must be positive and both population and steps below 2^28");
        }
        if self.holdout_size == 0 || self.evaluation_size == 0 {
            return bad("holdout and evaluation samples must be nonempty");
        }
        let dim = reference_schema().len();
        if self.drift_events.iter().any(|d| d.coefficient_shifts.len() != dim) {
            return bad("drift coefficient shifts must match the schema dimension");
        }
        self.policy.validate()?;
        self.search.validate()?;
        self.train.validate()
    }

    fn index_series(&self) -> EconomicIndexSeries {
        let values = (0..=self.steps + 1)
            .map(|t| {
                let shift: f64 = self
                    .drift_events
                    .iter()
                    .filter(|d| d.at_step <= t)
                    .map(|d| d.intercept_shift)
                    .sum();
                self.index.base + shift * self.index.sensitivity
            })
            .collect();
        EconomicIndexSeries {
            values,
            stress_threshold: self.index.stress_threshold,
            crisis_threshold: self.index.crisis_threshold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub applications: usize,
    pub denials: usize,
    pub explanations_issued: usize,
    pub search_failures: usize,
    pub implementations: usize,
    pub expirations: usize,
    pub resolutions: usize,
    pub honored: usize,
    pub broken: usize,
    pub void: usize,
    pub uce_count: usize,
    pub paradigmatic_count: usize,
    pub honoring_rate_running: f64,
    pub override_cost_running: f64,
    pub model_accuracy_vs_ground_truth: f64,
    pub model_version: u64,
    pub regime: Option<Regime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRecord {
    pub commitment_id: u64,
    pub t0: u64,
    pub t1: u64,
    pub t2: u64,
    pub status: CommitmentStatus,
    pub case_number: u8,
    pub case_name: String,
    pub certainty: f64,
    pub covered: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainRecord {
    pub step: u64,
    pub model_version: u64,
    pub training_rows: usize,
    pub scenario_count: usize,
    pub holdout_accuracy: f64,
    pub honoring_rate: f64,
    pub weighted_honoring_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub steps: u64,
    pub applications: usize,
    pub denials: usize,
    pub explanations_issued: usize,
    pub search_failures: usize,
    pub implementations: usize,
    pub expirations: usize,
    pub resolutions: usize,
    pub honored: usize,
    pub broken: usize,
    pub void: usize,
    pub uce_count: usize,
    pub paradigmatic_count: usize,
    pub overrides: usize,
    pub override_cost: f64,
    /// Share of resolutions whose committed outcome the model then in force
    /// predicted with certainty at least `tau`; 1 when nothing resolved.
    pub final_honoring_rate: f64,
    pub final_accuracy: f64,
    pub open_commitments: usize,
    pub void_by_reason: BTreeMap<String, usize>,
    pub case_counts: BTreeMap<u8, usize>,
    pub retrainings: Vec<RetrainRecord>,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub metrics: Vec<StepMetrics>,
    pub summary: SimSummary,
    pub resolutions: Vec<ResolutionRecord>,
    pub ledger: Ledger,
}

impl SimReport {
    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &self.metrics, METRICS_HEADER)
    }

    pub fn write_resolutions_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &self.resolutions, RESOLUTIONS_HEADER)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)? + "\n")
    }
}

pub const METRICS_HEADER: &[&str] = &[
    "step",
    "applications",
    "denials",
    "explanations_issued",
    "search_failures",
    "implementations",
    "expirations",
    "resolutions",
    "honored",
    "broken",
    "void",
    "uce_count",
    "paradigmatic_count",
    "honoring_rate_running",
    "override_cost_running",
    "model_accuracy_vs_ground_truth",
    "model_version",
    "regime",
];

pub const RESOLUTIONS_HEADER: &[&str] = &[
    "commitment_id",
    "t0",
    "t1",
    "t2",
    "status",
    "case_number",
    "case_name",
    "certainty",
    "covered",
    "reason",
];

// Header written explicitly so an empty table still has one.
fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy)]
enum Purpose {
    Apply = 1,
    Label = 2,
    Explain = 3,
    Implement = 4,
    Holdout = 5,
    Evaluation = 6,
    Population = 7,
    Search = 8,
}

/// Stream for one purpose at one step (and optionally one subject).
fn stream(seed: u64, purpose: Purpose, step: u64, subject: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | (step << 28) | subject);
    rng
}

fn stream_key(purpose: Purpose, step: u64, subject: u64) -> u64 {
    ((purpose as u64) << 56) | (step << 28) | subject
}

struct State<'a> {
    cfg: &'a SimConfig,
    schema: Arc<FeatureSchema>,
    scorer: GroundTruthScorer,
    model: ScoringModel,
    weights: DistanceWeights,
    history: LabeledDataset,
    subjects: Vec<Vec<f64>>,
    ledger: Ledger,
    series: EconomicIndexSeries,
    evaluation: Vec<Vec<f64>>,
    /// Scheduled implementation step per commitment id.
    schedule: BTreeMap<u64, u64>,
    /// Subjects already explained under the current model version.
    explained: BTreeSet<u64>,
    last_retrain: u64,
    honored_by_model: usize,
    resolved: usize,
    override_cost: f64,
    summary: SimSummary,
    resolutions: Vec<ResolutionRecord>,
}

pub fn run(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let schema = Arc::new(reference_schema());
    let scorer = reference_scorer();
    let population = generate_population(&schema, &scorer, config.population, stream_key(Purpose::Population, 0, 0) ^ config.seed)?;
    let subjects = population.instances.iter().map(|i| i.values.clone()).collect();
    let evaluation = sample_feature_rows(&schema, config.evaluation_size, &mut stream(config.seed, Purpose::Evaluation, 0, 0));

    let (data, sw) = rebalance(&population, config.remedy, config.train.init_seed)?;
    let model = train(
        &data,
        &TrainConfig {
            sample_weights: sw,
            ..config.train.clone()
        },
        0,
    )?
    .with_trained_at(0);
    let weights = mad_weights(&population)?;

    let mut st = State {
        cfg: config,
        schema,
        scorer,
        model,
        weights,
        history: population,
        subjects,
        ledger: Ledger::new(),
        series: config.index_series(),
        evaluation,
        schedule: BTreeMap::new(),
        explained: BTreeSet::new(),
        last_retrain: 0,
        honored_by_model: 0,
        resolved: 0,
        override_cost: 0.0,
        summary: SimSummary {
            steps: config.steps,
            final_honoring_rate: 1.0,
            ..SimSummary::default()
        },
        resolutions: Vec::new(),
    };

    let mut metrics = Vec::with_capacity(config.steps as usize);
    for t in 1..=config.steps {
        let mut m = StepMetrics {
            step: t,
            ..StepMetrics::default()
        };
        st.drift(t)?;
        st.retrain(t)?;
        st.resolve(t, &mut m)?;
        st.implement(t, &mut m)?;
        st.expire(t, &mut m)?;
        st.applications(t, &mut m)?;
        m.honoring_rate_running = st.honoring_rate();
        m.override_cost_running = st.override_cost;
        m.model_accuracy_vs_ground_truth = st.accuracy()?;
        m.model_version = st.model.version_id;
        m.regime = Some(regime_at(&st.series, t)?);
        metrics.push(m);
    }

    let mut summary = st.summary;
    for m in &metrics {
        summary.applications += m.applications;
        summary.denials += m.denials;
        summary.explanations_issued += m.explanations_issued;
        summary.search_failures += m.search_failures;
        summary.implementations += m.implementations;
        summary.expirations += m.expirations;
        summary.resolutions += m.resolutions;
        summary.honored += m.honored;
        summary.broken += m.broken;
        summary.void += m.void;
        summary.uce_count += m.uce_count;
        summary.paradigmatic_count += m.paradigmatic_count;
    }
    summary.override_cost = st.override_cost;
    summary.final_honoring_rate = if st.resolved == 0 {
        1.0
    } else {
        st.honored_by_model as f64 / st.resolved as f64
    };
    summary.final_accuracy = metrics.last().map_or(0.0, |m| m.model_accuracy_vs_ground_truth);
    summary.open_commitments = st.ledger.open_commitments(u64::MAX).count();
    Ok(SimReport {
        metrics,
        summary,
        resolutions: st.resolutions,
        ledger: st.ledger,
    })
}

impl State<'_> {
    fn honoring_rate(&self) -> f64 {
        if self.resolved == 0 {
            1.0
        } else {
            self.honored_by_model as f64 / self.resolved as f64
        }
    }

    fn accuracy(&self) -> Result<f64> {
        let mut hits = 0usize;
        for x in &self.evaluation {
            if self.model.label(x)? == self.scorer.expected_label(x) {
                hits += 1;
            }
        }
        Ok(hits as f64 / self.evaluation.len() as f64)
    }

    fn drift(&mut self, t: u64) -> Result<()> {
        for d in self.cfg.drift_events.iter().filter(|d| d.at_step == t) {
            self.scorer = apply_drift(&self.scorer, d)?;
        }
        Ok(())
    }

    fn window(&self, from: u64, to: u64) -> LabeledDataset {
        let mut out = LabeledDataset::empty(Arc::clone(&self.schema));
        for (inst, label) in self.history.rows() {
            if inst.observed_at >= from && inst.observed_at < to {
                out.push(inst.clone(), label);
            }
        }
        out
    }

    fn retrain(&mut self, t: u64) -> Result<()> {
        if !t.is_multiple_of(self.cfg.retrain_every) {
            return Ok(());
        }
        let start = if self.cfg.data_window == 0 {
            0
        } else {
            t.saturating_sub(self.cfg.data_window)
        };
        let base = self.window(start, self.last_retrain.max(start));
        let new_data = self.window(self.last_retrain.max(start), t);
        let open: Vec<_> = self.ledger.open_commitments(t).collect();
        let scenarios: Vec<Scenario> = open
            .iter()
            .map(|c| Scenario {
                commitment_id: c.commitment_id,
                point: c.counterfactual.point.clone(),
                target: c.target(),
            })
            .collect();
        let probabilities: Vec<f64> = open.iter().map(|c| c.counterfactual.implementation_probability).collect();
        let pool_scenarios: &[Scenario] = if self.cfg.augmentation_enabled { &scenarios } else { &[] };
        let (augmented, _) = augment(&base, &new_data, pool_scenarios)?;

        let mut hrng = stream(self.cfg.seed, Purpose::Holdout, t, 0);
        let mut holdout = LabeledDataset::empty(Arc::clone(&self.schema));
        for x in sample_feature_rows(&self.schema, self.cfg.holdout_size, &mut hrng) {
            let y = self.scorer.sample_label(&x, &mut hrng);
            holdout.push(Instance { subject_id: 0, values: x, observed_at: t }, y);
        }

        let selection = retrain_and_select(
            std::slice::from_ref(&self.cfg.train),
            self.model.version_id,
            &SelectionInputs {
                augmented: &augmented,
                holdout: &holdout,
                scenarios: &scenarios,
                probabilities: &probabilities,
                tau: self.cfg.tau,
                alpha: self.cfg.alpha,
                remedy: self.cfg.remedy,
            },
        )?;
        self.model = selection.model.with_trained_at(t);
        let observed = self.window(start, t);
        self.weights = mad_weights(&observed)?;
        self.last_retrain = t;
        self.explained.clear();
        self.summary.retrainings.push(RetrainRecord {
            step: t,
            model_version: self.model.version_id,
            training_rows: augmented.len(),
            scenario_count: pool_scenarios.len(),
            holdout_accuracy: selection.candidates[selection.chosen].holdout_accuracy,
            honoring_rate: selection.report.honoring_rate,
            weighted_honoring_rate: selection.report.weighted_honoring_rate,
        });
        Ok(())
    }

    fn resolve(&mut self, t: u64, m: &mut StepMetrics) -> Result<()> {
        let due: Vec<u64> = self
            .ledger
            .commitments()
            .iter()
            .filter(|c| c.status == CommitmentStatus::Implemented && c.implemented_at.map(|t1| t1 + 1) == Some(t))
            .map(|c| c.commitment_id)
            .collect();
        if due.is_empty() {
            return Ok(());
        }
        let mut certainties = Vec::with_capacity(due.len());
        for id in &due {
            let c = self.ledger.get(*id).expect("due commitment exists");
            certainties.push(self.model.certainty_of(&c.counterfactual.point, c.target())?);
        }
        let decisions = {
            let cohort: Vec<_> = due
                .iter()
                .zip(&certainties)
                .map(|(id, p)| (self.ledger.get(*id).expect("due commitment exists"), *p))
                .collect();
            evaluate_cohort(&self.cfg.policy, &cohort, Some(&self.series), t, self.override_cost)?
        };
        for ((id, certainty), decision) in due.iter().zip(&certainties).zip(&decisions) {
            let c = self.ledger.resolve(*id, &self.model, decision, t)?.clone();
            let issued_version = c.counterfactual.model_version_at_issue;
            let (_, case) = detect(&c, issued_version, &self.model, c.target().flipped())?;
            m.resolutions += 1;
            match c.status {
                CommitmentStatus::Honored => m.honored += 1,
                CommitmentStatus::Broken => m.broken += 1,
                _ => {
                    m.void += 1;
                    let reason = c.resolution_reason.clone().unwrap_or_default();
                    *self.summary.void_by_reason.entry(reason).or_default() += 1;
                }
            }
            if c.overridden {
                self.summary.overrides += 1;
                self.override_cost += self.cfg.override_unit_cost;
            }
            m.uce_count += usize::from(case.is_uce);
            m.paradigmatic_count += usize::from(case.is_paradigmatic);
            *self.summary.case_counts.entry(case.case_number).or_default() += 1;
            self.resolved += 1;
            self.honored_by_model += usize::from(*certainty >= self.cfg.tau);
            self.resolutions.push(ResolutionRecord {
                commitment_id: c.commitment_id,
                t0: c.issued_at,
                t1: c.implemented_at.expect("resolved commitments were implemented"),
                t2: t,
                status: c.status,
                case_number: case.case_number,
                case_name: case.name.to_string(),
                certainty: *certainty,
                covered: decision.outcome == CoverageOutcome::Covered,
                reason: c.resolution_reason.clone().unwrap_or_default(),
            });
        }
        Ok(())
    }

    fn implement(&mut self, t: u64, m: &mut StepMetrics) -> Result<()> {
        let due: Vec<u64> = self.schedule.iter().filter(|(_, t1)| **t1 == t).map(|(id, _)| *id).collect();
        for id in due {
            self.schedule.remove(&id);
            let c = self.ledger.mark_implemented(id, t)?;
            let subject = c.counterfactual.subject_id as usize;
            self.subjects[subject] = c.counterfactual.point.clone();
            m.implementations += 1;
        }
        Ok(())
    }

    fn expire(&mut self, t: u64, m: &mut StepMetrics) -> Result<()> {
        let stale: Vec<u64> = self
            .ledger
            .open_commitments(t)
            .filter(|c| c.status == CommitmentStatus::Outstanding && t - c.issued_at >= self.cfg.expiry_after)
            .map(|c| c.commitment_id)
            .collect();
        for id in stale {
            self.ledger.expire(id, t, "not_implemented")?;
            m.expirations += 1;
        }
        Ok(())
    }

    fn applications(&mut self, t: u64, m: &mut StepMetrics) -> Result<()> {
        let seed = self.cfg.seed;
        let mut apply = stream(seed, Purpose::Apply, t, 0);
        let mut label = stream(seed, Purpose::Label, t, 0);
        let mut explain = stream(seed, Purpose::Explain, t, 0);
        let busy: BTreeSet<u64> =
            self.ledger.open_commitments(t).map(|c| c.counterfactual.subject_id).collect();
        for s in 0..self.subjects.len() {
            let u_apply: f64 = apply.random();
            let y = self.scorer.sample_label(&self.subjects[s], &mut label);
            let u_explain: f64 = explain.random();
            let sid = s as u64;
            if busy.contains(&sid) || u_apply >= self.cfg.application_rate {
                continue;
            }
            let values = self.subjects[s].clone();
            m.applications += 1;
            self.history.push(
                Instance {
                    subject_id: sid,
                    values: values.clone(),
                    observed_at: t,
                },
                y,
            );
            if self.model.label(&values)? == Outcome::Positive {
                continue;
            }
            m.denials += 1;
            // An explanation already given under this model would repeat itself.
            if u_explain >= self.cfg.explanation_request_rate || self.explained.contains(&sid) {
                continue;
            }
            self.explain(t, sid, values, m)?;
        }
        Ok(())
    }

    fn explain(&mut self, t: u64, sid: u64, values: Vec<f64>, m: &mut StepMetrics) -> Result<()> {
        let instance = Instance {
            subject_id: sid,
            values,
            observed_at: t,
        };
        let search = SearchConfig {
            rng_seed: self.cfg.search.rng_seed ^ stream_key(Purpose::Search, t, sid),
            implementation_scale: self.cfg.implementation_probability_scale,
            ..self.cfg.search.clone()
        };
        let cf = match generate(&self.model, &instance, Outcome::Positive, &self.schema, &self.weights, &search) {
            Ok(cf) => cf,
            Err(Error::NotFound) => {
                m.search_failures += 1;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        self.explained.insert(sid);
        let p = cf.implementation_probability;
        let id = self.ledger.issue(cf, &self.cfg.policy.policy_id, t)?.commitment_id;
        m.explanations_issued += 1;
        let mut rng = stream(self.cfg.seed, Purpose::Implement, t, sid);
        let u: f64 = rng.random();
        let (lo, hi) = self.cfg.implementation_delay;
        let delay = rng.random_range(lo..=hi);
        if u < p {
            self.schedule.insert(id, t + delay);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub seed: u64,
    pub augmentation_enabled: bool,
    pub honoring_rate: f64,
    pub uce_count: usize,
    pub accuracy: f64,
    pub override_cost: f64,
    pub resolutions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub metric: String,
    pub mean_augmented: f64,
    pub mean_baseline: f64,
    /// Mean of augmented minus baseline over seeds.
    pub mean_difference: f64,
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub records: Vec<ArmRecord>,
    pub differences: Vec<PairedDifference>,
}

impl Comparison {
    pub fn difference(&self, metric: &str) -> Option<&PairedDifference> {
        self.differences.iter().find(|d| d.metric == metric)
    }
}

/// Runs every seed with augmentation on and off, everything else equal.
pub fn compare(config: &SimConfig, seeds: &[u64]) -> Result<Comparison> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("comparison needs at least two seeds".into()));
    }
    config.validate()?;
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|s| [(*s, true), (*s, false)]).collect();
    let records = jobs
        .par_iter()
        .map(|(seed, aug)| {
            let cfg = SimConfig {
                seed: *seed,
                augmentation_enabled: *aug,
                ..config.clone()
            };
            let r = run(&cfg)?;
            Ok(ArmRecord {
                seed: *seed,
                augmentation_enabled: *aug,
                honoring_rate: r.summary.final_honoring_rate,
                uce_count: r.summary.uce_count,
                accuracy: r.summary.final_accuracy,
                override_cost: r.summary.override_cost,
                resolutions: r.summary.resolutions,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    type Metric = fn(&ArmRecord) -> f64;
    let metrics: [(&str, Metric); 4] = [
        ("honoring_rate", |r| r.honoring_rate),
        ("uce_count", |r| r.uce_count as f64),
        ("accuracy", |r| r.accuracy),
        ("override_cost", |r| r.override_cost),
    ];
    let differences = metrics
        .iter()
        .map(|(name, f)| {
            let on: Vec<f64> = records.chunks(2).map(|p| f(&p[0])).collect();
            let off: Vec<f64> = records.chunks(2).map(|p| f(&p[1])).collect();
            let per_seed: Vec<f64> = on.iter().zip(&off).map(|(a, b)| a - b).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            PairedDifference {
                metric: name.to_string(),
                mean_augmented: mean(&on),
                mean_baseline: mean(&off),
                mean_difference: mean(&per_seed),
                positive: per_seed.iter().filter(|d| **d > 0.0).count(),
                negative: per_seed.iter().filter(|d| **d < 0.0).count(),
                ties: per_seed.iter().filter(|d| **d == 0.0).count(),
                per_seed,
            }
        })
        .collect();
    Ok(Comparison {
        seeds: seeds.to_vec(),
        records,
        differences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            steps: 12,
            population: 120,
            application_rate: 0.2,
            explanation_request_rate: 0.5,
            retrain_every: 4,
            drift_events: vec![DriftEvent::intercept_only(6, -1.0, 6)],
            holdout_size: 100,
            evaluation_size: 200,
            train: TrainConfig {
                epochs: 300,
                ..SimConfig::reference().train
            },
            ..SimConfig::reference()
        }
    }

    #[test]
    fn zero_steps_is_empty() {
        let r = run(&SimConfig { steps: 0, ..small() }).unwrap();
        assert!(r.metrics.is_empty());
        assert_eq!(r.summary.resolutions, 0);
        assert_eq!(r.summary.final_honoring_rate, 1.0);
        let mut buf = Vec::new();
        r.write_metrics_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn deterministic_and_conserving() {
        let a = run(&small()).unwrap();
        let b = run(&small()).unwrap();
        let (mut ma, mut mb) = (Vec::new(), Vec::new());
        a.write_metrics_csv(&mut ma).unwrap();
        b.write_metrics_csv(&mut mb).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a.summary_json().unwrap(), b.summary_json().unwrap());

        let s = &a.summary;
        assert!(s.explanations_issued > 0);
        assert_eq!(s.explanations_issued, a.ledger.len());
        let terminal = a.ledger.commitments().iter().filter(|c| c.status.is_terminal()).count();
        assert_eq!(terminal + s.open_commitments, s.explanations_issued);
        assert_eq!(s.honored + s.broken + s.void, s.resolutions);
        assert_eq!(s.resolutions + s.expirations, terminal);
        for m in &a.metrics {
            assert_eq!(m.honored + m.broken + m.void, m.resolutions);
        }
    }

    #[test]
    fn no_uce_before_first_retraining() {
        let r = run(&SimConfig { retrain_every: 100, ..small() }).unwrap();
        assert_eq!(r.summary.uce_count, 0);
        assert!(r.resolutions.iter().all(|x| x.case_number == 6));
    }

    #[test]
    fn augmentation_is_inert_without_retraining() {
        let base = SimConfig { retrain_every: 100, drift_events: vec![], ..small() };
        let on = run(&SimConfig { augmentation_enabled: true, ..base.clone() }).unwrap();
        let off = run(&base).unwrap();
        assert_eq!(on.ledger.events(), off.ledger.events());
        assert_eq!(on.summary.uce_count, off.summary.uce_count);
    }

    #[test]
    fn index_follows_drift() {
        let s = SimConfig::reference().index_series();
        assert_eq!(s.value_at(29).unwrap(), 1.0);
        assert_eq!(s.value_at(30).unwrap(), 0.75);
        assert_eq!(regime_at(&s, 30).unwrap(), Regime::Stress);
    }

    #[test]
    fn invalid_configs() {
        assert!(run(&SimConfig { retrain_every: 0, ..small() }).is_err());
        assert!(run(&SimConfig { application_rate: 1.5, ..small() }).is_err());
        assert!(run(&SimConfig { implementation_delay: (3, 2), ..small() }).is_err());
        assert!(compare(&small(), &[1]).is_err());
    }
}
