use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use cfcommit_core::cfsearch::{generate, mad_weights, SearchConfig};
use cfcommit_core::commitments::Ledger;
use cfcommit_core::dataspec::{
    generate_population, load_dataset, reference_schema, reference_scorer, write_dataset, FeatureSchema,
    GroundTruthScorer, LabeledDataset, Outcome,
};
use cfcommit_core::model::{stable_learning_rate, train as fit, ScoringModel, TrainConfig};
use cfcommit_core::retraining::{augment, honoring_report, rebalance, ImbalanceRemedy, Scenario};
use cfcommit_core::sim::{self, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::chart::{LineChart, Series, FAMILIES};
use crate::output::{manifest_beside, sibling, Artifacts};
use crate::{CompareArgs, ExplainArgs, GenDataArgs, ReportArgs, SimulateArgs, TrainArgs};

/// Bad invocation; exit status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Training diverged; exit status 3.
#[derive(Debug)]
pub struct NonConvergence(pub String);

impl std::fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NonConvergence {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if cause.is::<NonConvergence>() {
            return 3;
        }
        if let Some(cfcommit_core::Error::NotFound) = cause.downcast_ref::<cfcommit_core::Error>() {
            return 3;
        }
    }
    2
}

fn verbose(msg: impl FnOnce() -> String) {
    if std::env::var_os("CFCOMMIT_VERBOSE").is_some_and(|v| v != "0") {
        eprintln!("{}", msg());
    }
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn load_schema(path: Option<&Path>) -> Result<Arc<FeatureSchema>> {
    Ok(Arc::new(match path {
        Some(p) => FeatureSchema::load(p).with_context(|| format!("loading schema {}", p.display()))?,
        None => reference_schema(),
    }))
}

fn load_data(path: &Path, schema: &Arc<FeatureSchema>) -> Result<LabeledDataset> {
    load_dataset(path, schema).with_context(|| format!("loading data {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    /// Required when the schema is not the reference schema.
    pub scorer: Option<GroundTruthScorer>,
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: GenDataConfig = load_toml(a.config.as_deref())?;
    cfg.n = a.n.or(cfg.n);
    cfg.seed = Some(a.seed.or(cfg.seed).unwrap_or(0));
    let n = cfg.n.ok_or_else(|| Usage("gen-data needs --n or `n` in the config".into()))?;
    let schema = load_schema(a.schema.as_deref())?;
    let scorer = match &cfg.scorer {
        Some(s) => s.clone(),
        None if *schema == reference_schema() => reference_scorer(),
        None => bail!("a custom schema needs a `scorer` table in the config"),
    };
    let data = generate_population(&schema, &scorer, n, cfg.seed.unwrap_or(0))?;
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf)?;
    let mut out = Artifacts::new("gen-data");
    out.write(&a.out, &buf)?;
    verbose(|| format!("wrote {n} rows to {}", a.out.display()));
    out.finish(&manifest_beside(&a.out), &cfg, cfg.seed)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    /// Defaults to the stability bound of the training data.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub l2_penalty: f64,
    pub init_seed: u64,
    pub remedy: ImbalanceRemedy,
    pub prior_version: u64,
    pub trained_at: u64,
    pub tau: f64,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        Self {
            learning_rate: None,
            epochs: 1000,
            l2_penalty: TrainConfig::default().l2_penalty,
            init_seed: 0,
            remedy: ImbalanceRemedy::ClassWeights,
            prior_version: 0,
            trained_at: 0,
            tau: 0.5,
        }
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainFileConfig = load_toml(a.config.as_deref())?;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = a.learning_rate.or(cfg.learning_rate);
    cfg.init_seed = a.seed.unwrap_or(cfg.init_seed);
    let schema = load_schema(a.schema.as_deref())?;
    let base = load_data(&a.data, &schema)?;

    let scenarios = match &a.augment {
        Some(p) => {
            let ledger = Ledger::load_log(p).with_context(|| format!("loading ledger {}", p.display()))?;
            Some(
                ledger
                    .open_commitments(u64::MAX)
                    .map(|c| (Scenario { commitment_id: c.commitment_id, point: c.counterfactual.point.clone(), target: c.target() }, c.counterfactual.implementation_probability))
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };
    let pool: Vec<Scenario> = scenarios.iter().flatten().map(|(s, _)| s.clone()).collect();
    let (data, aug_report) = augment(&base, &LabeledDataset::empty(Arc::clone(&schema)), &pool)?;
    let (data, weights) = rebalance(&data, cfg.remedy, cfg.init_seed)?;
    let uniform;
    let sw = match &weights {
        Some(w) => w.as_slice(),
        None => {
            uniform = vec![1.0; data.len()];
            &uniform
        }
    };
    let learning_rate = match cfg.learning_rate {
        Some(lr) => lr,
        None => stable_learning_rate(&data, sw, cfg.l2_penalty)?,
    };
    let tc = TrainConfig {
        learning_rate,
        epochs: cfg.epochs,
        l2_penalty: cfg.l2_penalty,
        init_seed: cfg.init_seed,
        sample_weights: weights,
    };
    let model = fit(&data, &tc, cfg.prior_version)?.with_trained_at(cfg.trained_at);
    if !(model.bias.is_finite() && model.weights.iter().all(|w| w.is_finite())) {
        return Err(NonConvergence(format!("training diverged at learning rate {learning_rate}")).into());
    }
    verbose(|| format!("trained version {} on {} rows", model.version_id, data.len()));

    let mut out = Artifacts::new("train");
    out.write(&a.out, model.to_json()?.as_bytes())?;
    if let Some(sc) = &scenarios {
        let probs: Vec<f64> = sc.iter().map(|(_, p)| *p).collect();
        let honoring = honoring_report(&model, &pool, &probs, cfg.tau)?;
        out.write(&sibling(&a.out, "augmentation.json"), (serde_json::to_string_pretty(&aug_report)? + "\n").as_bytes())?;
        out.write(&sibling(&a.out, "honoring.json"), (serde_json::to_string_pretty(&honoring)? + "\n").as_bytes())?;
    }
    out.finish(&manifest_beside(&a.out), &cfg, Some(cfg.init_seed))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub target: Option<Outcome>,
    pub search: SearchConfig,
}

pub fn explain(a: ExplainArgs) -> Result<()> {
    let mut cfg: ExplainConfig = load_toml(a.config.as_deref())?;
    if let Some(t) = a.target {
        cfg.target = Some(Outcome::from_bit(t).ok_or_else(|| Usage(format!("--target must be 0 or 1, got {t}")))?);
    }
    cfg.search.rng_seed = a.seed.unwrap_or(cfg.search.rng_seed);
    let target = cfg.target.unwrap_or(Outcome::Positive);
    let schema = load_schema(a.schema.as_deref())?;
    let model = ScoringModel::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let data = load_data(&a.data, &schema)?;
    let subject = data
        .instances
        .get(a.subject as usize)
        .ok_or_else(|| anyhow!("subject {} not in {} ({} rows)", a.subject, a.data.display(), data.len()))?;
    let weights = mad_weights(&data)?;
    let cf = generate(&model, subject, target, &schema, &weights, &cfg.search)
        .with_context(|| format!("no counterfactual for subject {}", a.subject))?;
    let mut out = Artifacts::new("explain");
    out.write(&a.out, (serde_json::to_string_pretty(&cf)? + "\n").as_bytes())?;
    out.finish(&manifest_beside(&a.out), &cfg, Some(cfg.search.rng_seed))
}

pub fn load_sim_config(path: Option<&Path>) -> Result<SimConfig> {
    let cfg: SimConfig = load_toml(path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = load_sim_config(a.config.as_deref())?;
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.augmentation_enabled = a.augmentation.unwrap_or(cfg.augmentation_enabled);
    let report = sim::run(&cfg)?;
    verbose(|| format!("{} resolutions, {} UCEs", report.summary.resolutions, report.summary.uce_count));

    ensure_dir(&a.out)?;
    let mut out = Artifacts::new("simulate");
    let mut buf = Vec::new();
    report.write_metrics_csv(&mut buf)?;
    out.write(&a.out.join("metrics.csv"), &buf)?;
    buf.clear();
    report.write_resolutions_csv(&mut buf)?;
    out.write(&a.out.join("resolutions.csv"), &buf)?;
    out.write(&a.out.join("summary.json"), report.summary_json()?.as_bytes())?;
    buf.clear();
    report.ledger.write_log(&mut buf)?;
    out.write(&a.out.join("ledger.jsonl"), &buf)?;
    out.finish(&a.out.join("manifest.json"), &cfg, Some(cfg.seed))
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Usage(format!("cannot parse seeds `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad().into())).collect()
}

#[derive(Serialize)]
struct CompareManifestConfig<'a> {
    config: &'a SimConfig,
    seeds: &'a [u64],
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let cfg = load_sim_config(a.config.as_deref())?;
    let seeds = parse_seeds(&a.seeds)?;
    if seeds.len() < 2 {
        return Err(Usage("compare needs at least two seeds".into()).into());
    }
    let cmp = sim::compare(&cfg, &seeds)?;
    ensure_dir(&a.out)?;
    let mut out = Artifacts::new("compare");
    out.write(&a.out.join("comparison.json"), (serde_json::to_string_pretty(&cmp)? + "\n").as_bytes())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &cmp.records {
        w.serialize(r)?;
    }
    out.write(&a.out.join("records.csv"), &w.into_inner()?)?;
    out.finish(&a.out.join("manifest.json"), &CompareManifestConfig { config: &cfg, seeds: &seeds }, None)
}

/// Numeric columns of a metrics CSV, keyed by header; non-numeric columns
/// are dropped.
fn read_metrics(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading metrics {}", path.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut columns: Vec<Option<Vec<f64>>> = vec![Some(Vec::new()); headers.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("metrics row {}", row + 1))?;
        for (col, field) in columns.iter_mut().zip(rec.iter()) {
            if let Some(values) = col {
                match field.parse::<f64>() {
                    Ok(v) => values.push(v),
                    Err(_) => *col = None,
                }
            }
        }
    }
    Ok(headers.into_iter().zip(columns).filter_map(|(h, c)| c.map(|c| (h, c))).collect())
}

#[derive(Serialize)]
struct ReportManifestConfig<'a> {
    metrics: &'a Path,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let columns = read_metrics(&a.metrics)?;
    let column = |name: &str| columns.iter().find(|(h, _)| h == name).map(|(_, v)| v);
    let steps = column("step").ok_or_else(|| anyhow!("{} has no numeric `step` column", a.metrics.display()))?;
    ensure_dir(&a.out)?;
    let mut out = Artifacts::new("report");
    for family in FAMILIES {
        let series: Vec<Series> = family
            .columns
            .iter()
            .filter_map(|c| {
                column(c).map(|v| Series {
                    name: c.to_string(),
                    points: steps.iter().copied().zip(v.iter().copied()).collect(),
                })
            })
            .collect();
        if series.is_empty() {
            continue;
        }
        let chart = LineChart {
            title: family.name.replace('_', " "),
            x_label: "step".into(),
            y_label: family.unit.into(),
            series,
        };
        out.write(&a.out.join(format!("{}.svg", family.name)), chart.to_svg().as_bytes())?;
    }
    out.finish(&a.out.join("manifest.json"), &ReportManifestConfig { metrics: &a.metrics }, None)
}
