use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    actionability_cost, changed_indices, distance, enforce_feasibility, implementation_probability, Counterfactual,
    DistanceWeights,
};
use crate::dataspec::{FeatureKind, FeatureSchema, Instance, MonotoneDirection, Outcome};
use crate::error::{check_dim, Error, Result};
use crate::model::{logistic, ScoringModel};

/// Minimum increase of a coupled partner, as a fraction of its range width.
const COUPLING_MIN_STEP: f64 = 0.05;
/// Bisection steps when pulling a candidate back onto the decision boundary.
const PULLBACK_STEPS: usize = 64;

fn default_max_levels() -> usize {
    80
}

fn default_refine_steps() -> usize {
    40
}

fn default_implementation_scale() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub lambda_max: f64,
    pub lambda_decay: f64,
    pub restarts: usize,
    /// Initial proximal step; adapted by backtracking.
    pub step_size: f64,
    pub max_iters_per_lambda: usize,
    pub convergence_tol: f64,
    pub rng_seed: u64,
    /// Upper bound on annealing levels before giving up on a bracket.
    #[serde(default = "default_max_levels")]
    pub max_levels: usize,
    /// Bisection steps on lambda inside the final bracket.
    #[serde(default = "default_refine_steps")]
    pub refine_steps: usize,
    /// Scale of `implementation_probability` for the issued counterfactual.
    #[serde(default = "default_implementation_scale")]
    pub implementation_scale: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lambda_max: 1e4,
            lambda_decay: 0.5,
            restarts: 3,
            step_size: 1.0,
            max_iters_per_lambda: 300,
            convergence_tol: 1e-10,
            rng_seed: 0,
            max_levels: default_max_levels(),
            refine_steps: default_refine_steps(),
            implementation_scale: default_implementation_scale(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("search: {m}")));
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            return bad("lambda_max must be positive");
        }
        if !(self.lambda_decay > 0.0 && self.lambda_decay < 1.0) {
            return bad("lambda_decay must lie in (0, 1)");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.step_size > 0.0) || !(self.convergence_tol > 0.0) {
            return bad("step_size and convergence_tol must be positive");
        }
        if !(self.implementation_scale > 0.0) {
            return bad("implementation_scale must be positive");
        }
        Ok(())
    }
}

/// One continuous sub-problem: categorical features are pinned to the
/// values in `pinned`, every other coordinate moves inside `[lo, hi]`.
struct Problem<'a> {
    model: &'a ScoringModel,
    schema: &'a FeatureSchema,
    base: &'a Instance,
    weights: &'a DistanceWeights,
    target: Outcome,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cfg: &'a SearchConfig,
}

impl<'a> Problem<'a> {
    fn new(
        model: &'a ScoringModel,
        schema: &'a FeatureSchema,
        base: &'a Instance,
        weights: &'a DistanceWeights,
        target: Outcome,
        pinned: &[f64],
        cfg: &'a SearchConfig,
    ) -> Self {
        let mut lo = Vec::with_capacity(schema.len());
        let mut hi = Vec::with_capacity(schema.len());
        for (j, spec) in schema.features.iter().enumerate() {
            let x = base.values[j];
            let (mut l, mut h) = spec.bounds();
            if spec.is_categorical() {
                l = pinned[j];
                h = pinned[j];
            } else if spec.is_immutable() || weights.weights[j] == 0.0 {
                l = x;
                h = x;
            } else {
                match spec.monotone_direction {
                    MonotoneDirection::IncreaseOnly => l = l.max(x),
                    MonotoneDirection::DecreaseOnly => h = h.min(x),
                    MonotoneDirection::Free => {}
                }
            }
            lo.push(l);
            hi.push(h);
        }
        Self {
            model,
            schema,
            base,
            weights,
            target,
            lo,
            hi,
            cfg,
        }
    }

    fn anchor(&self, j: usize) -> f64 {
        self.base.values[j]
    }

    fn flips(&self, c: &[f64]) -> bool {
        self.model.label(c).map(|l| l == self.target).unwrap_or(false)
    }

    fn logit(&self, c: &[f64]) -> f64 {
        self.model.weights.iter().zip(c).map(|(w, v)| w * v).sum::<f64>() + self.model.bias
    }

    fn smooth_loss(&self, c: &[f64]) -> f64 {
        let r = logistic(self.logit(c)) - self.target.as_f64();
        r * r
    }

    /// Proximal operator of `mu * w_j |c_j - x_j|` plus the box indicator.
    fn prox(&self, j: usize, v: f64, threshold: f64) -> f64 {
        if self.lo[j] == self.hi[j] {
            return self.lo[j];
        }
        let a = self.anchor(j);
        let d = v - a;
        let shrunk = d.signum() * (d.abs() - threshold * self.weights.weights[j]).max(0.0);
        (a + shrunk).clamp(self.lo[j], self.hi[j])
    }

    /// Proximal gradient descent with backtracking at a fixed penalty
    /// `mu = 1 / lambda`, warm-started at `start`.
    fn minimize(&self, mu: f64, start: &[f64]) -> Vec<f64> {
        let dim = start.len();
        let mut c = start.to_vec();
        let mut next = vec![0.0; dim];
        let mut eta = self.cfg.step_size;
        for _ in 0..self.cfg.max_iters_per_lambda {
            let s = logistic(self.logit(&c));
            let t = self.target.as_f64();
            let f = (s - t) * (s - t);
            let k = 2.0 * (s - t) * s * (1.0 - s);
            loop {
                let mut lin = 0.0;
                let mut sq = 0.0;
                for j in 0..dim {
                    let g = k * self.model.weights[j];
                    next[j] = self.prox(j, c[j] - eta * g, eta * mu);
                    let d = next[j] - c[j];
                    lin += g * d;
                    sq += d * d;
                }
                if self.smooth_loss(&next) <= f + lin + sq / (2.0 * eta) + 1e-15 || eta < 1e-14 {
                    break;
                }
                eta *= 0.5;
            }
            let moved = c.iter().zip(&next).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            std::mem::swap(&mut c, &mut next);
            if moved < self.cfg.convergence_tol {
                break;
            }
            eta = (eta * 2.0).min(1e8);
        }
        c
    }

    /// Anneals lambda downwards from `lambda_max` while the warm-started
    /// minimizer keeps flipping the label, then bisects the bracket.
    fn anneal(&self, start: &[f64]) -> Option<Vec<f64>> {
        let mut lambda_hi = self.cfg.lambda_max;
        let mut best = self.minimize(1.0 / lambda_hi, start);
        if !self.flips(&best) {
            return None;
        }
        let mut lambda_lo = None;
        for _ in 0..self.cfg.max_levels {
            let lambda = lambda_hi * self.cfg.lambda_decay;
            let c = self.minimize(1.0 / lambda, &best);
            if self.flips(&c) {
                best = c;
                lambda_hi = lambda;
            } else {
                lambda_lo = Some(lambda);
                break;
            }
        }
        if let Some(mut lo) = lambda_lo {
            for _ in 0..self.cfg.refine_steps {
                let mid = (lambda_hi * lo).sqrt();
                let c = self.minimize(1.0 / mid, &best);
                if self.flips(&c) {
                    best = c;
                    lambda_hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        Some(best)
    }

    /// Shrinks the coordinates selected by `movable` towards the anchor
    /// along a straight segment, stopping at the last point that still
    /// flips the label.
    fn pullback(&self, c: &[f64], movable: &dyn Fn(usize) -> bool) -> Vec<f64> {
        let at = |t: f64| -> Vec<f64> {
            (0..c.len())
                .map(|j| {
                    if movable(j) {
                        let a = self.anchor(j);
                        (a + t * (c[j] - a)).clamp(self.lo[j].min(a), self.hi[j].max(a))
                    } else {
                        c[j]
                    }
                })
                .collect()
        };
        let start = at(0.0);
        if self.flips(&start) {
            return start;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..PULLBACK_STEPS {
            let mid = 0.5 * (lo + hi);
            if self.flips(&at(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let p = at(hi);
        if self.flips(&p) {
            p
        } else {
            c.to_vec()
        }
    }

    fn round_ordinals(&self, c: &mut [f64], away_from_base: bool) {
        for (j, spec) in self.schema.features.iter().enumerate() {
            if spec.kind != FeatureKind::Ordinal || c[j] == self.anchor(j) {
                continue;
            }
            let a = self.anchor(j);
            let v = if away_from_base {
                if c[j] > a {
                    c[j].ceil()
                } else {
                    c[j].floor()
                }
            } else {
                c[j].round()
            };
            c[j] = v.clamp(self.lo[j].ceil(), self.hi[j].floor());
        }
    }

    fn repair_couplings(&self, c: &mut [f64]) {
        for j in 0..c.len() {
            let Some(p) = self.schema.coupling(j) else { continue };
            if c[j] > self.anchor(j) && !(c[p] > self.anchor(p)) {
                let step = COUPLING_MIN_STEP * self.schema.features[p].width();
                let raised = (self.anchor(p) + step).min(self.hi[p]);
                if raised > self.anchor(p) {
                    c[p] = raised;
                } else {
                    c[j] = self.anchor(j);
                }
            }
        }
    }

    fn feasible(&self, c: &[f64]) -> bool {
        enforce_feasibility(c, self.base, self.schema).map(|f| f.is_accepted()).unwrap_or(false)
    }

    /// Turns a flipping continuous optimum into an admissible, sparse,
    /// feasible counterfactual, or `None` if that is impossible.
    fn finalize(&self, raw: &[f64]) -> Option<Vec<f64>> {
        let is_continuous = |j: usize| self.schema.features[j].kind == FeatureKind::Continuous;
        let is_numeric = |j: usize| !self.schema.features[j].is_categorical();

        let mut c = self.pullback(raw, &is_numeric);
        let has_ordinal_change = self
            .schema
            .features
            .iter()
            .enumerate()
            .any(|(j, f)| f.kind == FeatureKind::Ordinal && c[j] != self.anchor(j));
        if has_ordinal_change {
            let mut nearest = c.clone();
            self.round_ordinals(&mut nearest, false);
            c = if self.flips(&nearest) {
                nearest
            } else {
                let mut away = c.clone();
                self.round_ordinals(&mut away, true);
                away
            };
            if !self.flips(&c) {
                return None;
            }
            c = self.pullback(&c, &is_continuous);
        }

        self.repair_couplings(&mut c);
        if !self.flips(&c) {
            return None;
        }
        let c = sparsify_where(self.model, &self.base.values, &c, self.target, self.weights, &|v| self.feasible(v));
        (self.flips(&c) && self.feasible(&c)).then_some(c)
    }

    fn restart_start(&self, restart: usize, pinned: &[f64]) -> Vec<f64> {
        if restart == 0 {
            return pinned.to_vec();
        }
        let seed = self.cfg.rng_seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..pinned.len())
            .map(|j| {
                if self.lo[j] == self.hi[j] {
                    self.lo[j]
                } else {
                    let target: f64 = rng.random_range(self.lo[j]..=self.hi[j]);
                    let a = self.anchor(j);
                    a + 0.3 * (target - a)
                }
            })
            .collect()
    }
}

/// Greedy restoration: visits changed features by descending weighted
/// contribution and reverts each to its base value while the label stays
/// at `target` and `keep` accepts the result.
pub(crate) fn sparsify_where(
    model: &ScoringModel,
    base: &[f64],
    candidate: &[f64],
    target: Outcome,
    weights: &DistanceWeights,
    keep: &dyn Fn(&[f64]) -> bool,
) -> Vec<f64> {
    let mut order = changed_indices(base, candidate);
    order.sort_by(|&a, &b| {
        let ta = weights.term(a, base[a], candidate[a]);
        let tb = weights.term(b, base[b], candidate[b]);
        tb.total_cmp(&ta).then(a.cmp(&b))
    });
    let mut c = candidate.to_vec();
    for j in order {
        let saved = c[j];
        c[j] = base[j];
        let ok = model.label(&c).map(|l| l == target).unwrap_or(false) && keep(&c);
        if !ok {
            c[j] = saved;
        }
    }
    c
}

/// Reverts changed features to their base values, largest weighted change
/// first, as long as the prediction stays at `target`.
pub fn sparsify(
    model: &ScoringModel,
    base: &Instance,
    candidate: &[f64],
    target: Outcome,
    weights: &DistanceWeights,
) -> Result<Vec<f64>> {
    check_dim(model.dim(), candidate.len())?;
    check_dim(candidate.len(), base.values.len())?;
    check_dim(candidate.len(), weights.len())?;
    if model.label(candidate)? != target {
        return Err(Error::Precondition("candidate is not classified as the target".into()));
    }
    Ok(sparsify_where(model, &base.values, candidate, target, weights, &|_| true))
}

/// Searches for the closest feasible point the model labels `target`.
///
/// Returns `x` itself when it is already classified as `target`, and
/// [`Error::NotFound`] when no restart and no categorical substitution
/// produces a feasible flipping point.
pub fn generate(
    model: &ScoringModel,
    x: &Instance,
    target: Outcome,
    schema: &FeatureSchema,
    weights: &DistanceWeights,
    cfg: &SearchConfig,
) -> Result<Counterfactual> {
    cfg.validate()?;
    check_dim(schema.len(), x.values.len())?;
    check_dim(schema.len(), model.dim())?;
    check_dim(schema.len(), weights.len())?;

    let point = if model.label(&x.values)? == target {
        x.values.clone()
    } else {
        search(model, x, target, schema, weights, cfg)?.ok_or(Error::NotFound)?
    };
    build_counterfactual(model, x, point, target, schema, weights, cfg)
}

fn search(
    model: &ScoringModel,
    x: &Instance,
    target: Outcome,
    schema: &FeatureSchema,
    weights: &DistanceWeights,
    cfg: &SearchConfig,
) -> Result<Option<Vec<f64>>> {
    // Categorical branches: no substitution, then every single-category swap.
    let mut branches = vec![x.values.clone()];
    for (j, spec) in schema.features.iter().enumerate() {
        if !spec.is_categorical() || spec.is_immutable() || weights.weights[j] == 0.0 {
            continue;
        }
        let (_, hi) = spec.bounds();
        for k in 0..=hi as usize {
            if k as f64 != x.values[j] {
                let mut pinned = x.values.clone();
                pinned[j] = k as f64;
                branches.push(pinned);
            }
        }
    }

    let jobs: Vec<(usize, usize)> = (0..branches.len())
        .flat_map(|b| (0..cfg.restarts).map(move |r| (b, r)))
        .collect();
    let results: Vec<Option<(f64, usize, Vec<f64>)>> = jobs
        .par_iter()
        .enumerate()
        .map(|(order, &(b, r))| {
            let problem = Problem::new(model, schema, x, weights, target, &branches[b], cfg);
            let start = problem.restart_start(r, &branches[b]);
            let raw = problem.anneal(&start)?;
            let c = problem.finalize(&raw)?;
            let d = distance(&x.values, &c, weights).ok()?;
            Some((d, order, c))
        })
        .collect();
    Ok(results
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, _, c)| c))
}

fn build_counterfactual(
    model: &ScoringModel,
    x: &Instance,
    point: Vec<f64>,
    target: Outcome,
    schema: &FeatureSchema,
    weights: &DistanceWeights,
    cfg: &SearchConfig,
) -> Result<Counterfactual> {
    let cost = actionability_cost(x, &point, schema)?;
    Ok(Counterfactual {
        subject_id: x.subject_id,
        base_point: x.clone(),
        distance: distance(&x.values, &point, weights)?,
        changed_features: changed_indices(&x.values, &point)
            .into_iter()
            .map(|j| schema.features[j].name.clone())
            .collect(),
        certainty_at_issue: model.certainty_of(&point, target)?,
        actionability_cost: cost,
        implementation_probability: implementation_probability(cost, cfg.implementation_scale)?,
        model_version_at_issue: model.version_id,
        target_outcome: target,
        point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspec::{reference_schema, FeatureSchema, Mutability};

    fn inst(values: Vec<f64>) -> Instance {
        Instance { subject_id: 7, values, observed_at: 0 }
    }

    fn box2() -> FeatureSchema {
        FeatureSchema::uniform_box(2, 0.0, 2.0).unwrap()
    }

    #[test]
    fn already_at_target_returns_input() {
        let m = ScoringModel::new(vec![1.0, 0.0], 0.0);
        let x = inst(vec![1.0, 1.0]);
        let w = DistanceWeights::numeric(vec![1.0, 1.0]).unwrap();
        let cf = generate(&m, &x, Outcome::Positive, &box2(), &w, &SearchConfig::default()).unwrap();
        assert_eq!(cf.point, x.values);
        assert_eq!(cf.distance, 0.0);
        assert!(cf.changed_features.is_empty());
    }

    #[test]
    fn single_feature_boundary() {
        let m = ScoringModel::new(vec![1.0, 0.0], -1.0);
        let x = inst(vec![0.0, 0.0]);
        let w = DistanceWeights::numeric(vec![1.0, 1.0]).unwrap();
        let cf = generate(&m, &x, Outcome::Positive, &box2(), &w, &SearchConfig::default()).unwrap();
        assert!((cf.point[0] - 1.0).abs() < 1e-6, "{:?}", cf.point);
        assert_eq!(cf.point[1], 0.0);
        assert!((cf.distance - 1.0).abs() < 1e-6);
        assert_eq!(cf.changed_features, vec!["x0"]);
        assert_eq!(m.label(&cf.point).unwrap(), Outcome::Positive);
    }

    #[test]
    fn frozen_influential_feature_is_not_found() {
        let mut schema = box2();
        schema.features[1].mutability = Mutability::Immutable;
        let m = ScoringModel::new(vec![0.0, 1.0], -1.0);
        let w = DistanceWeights::numeric(vec![1.0, 1.0]).unwrap();
        let r = generate(&m, &inst(vec![0.0, 0.0]), Outcome::Positive, &schema, &w, &SearchConfig::default());
        assert!(matches!(r, Err(Error::NotFound)));
    }

    #[test]
    fn negative_target_is_supported() {
        let m = ScoringModel::new(vec![-1.0, -2.0], 2.5);
        let x = inst(vec![0.0, 0.0]);
        let w = DistanceWeights::numeric(vec![1.0, 1.0]).unwrap();
        let cf = generate(&m, &x, Outcome::Negative, &box2(), &w, &SearchConfig::default()).unwrap();
        assert_eq!(m.label(&cf.point).unwrap(), Outcome::Negative);
        // Feature 1 is twice as efficient: optimum moves it alone to 1.25.
        assert!((cf.distance - 1.25).abs() < 1e-4, "{:?}", cf.point);
        assert_eq!(cf.point[0], 0.0);
    }

    #[test]
    fn sparsify_restores_irrelevant_feature() {
        let m = ScoringModel::new(vec![1.0, 0.0], -1.0);
        let base = inst(vec![0.0, 0.0]);
        let w = DistanceWeights::numeric(vec![1.0, 1.0]).unwrap();
        let out = sparsify(&m, &base, &[1.5, 0.7], Outcome::Positive, &w).unwrap();
        assert_eq!(out, vec![1.5, 0.0]);
        let same = sparsify(&m, &inst(vec![1.5, 0.0]), &[1.5, 0.0], Outcome::Positive, &w).unwrap();
        assert_eq!(same, vec![1.5, 0.0]);
        assert!(matches!(sparsify(&m, &base, &[0.0, 0.0], Outcome::Positive, &w), Err(Error::Precondition(_))));
    }

    #[test]
    fn reference_schema_counterfactual_is_feasible() {
        let schema = reference_schema();
        let m = ScoringModel::new(vec![0.2, 0.3, 0.3, 0.6, 0.5, 0.1], -5.0);
        let x = inst(vec![3.0, 4.0, 2.0, 1.0, 1.0, 1.0]);
        let w = DistanceWeights::for_schema(vec![1.0, 0.4, 0.6, 1.0, 1.5, 1.0], &schema).unwrap();
        let cf = generate(&m, &x, Outcome::Positive, &schema, &w, &SearchConfig::default()).unwrap();
        assert!(enforce_feasibility(&cf.point, &x, &schema).unwrap().is_accepted());
        assert_eq!(m.label(&cf.point).unwrap(), Outcome::Positive);
        assert_eq!(cf.point[5], 1.0);
        assert!(cf.implementation_probability > 0.0 && cf.implementation_probability <= 1.0);
    }

    #[test]
    fn rejects_invalid_config() {
        let m = ScoringModel::new(vec![1.0, 0.0], -1.0);
        let w = DistanceWeights::numeric(vec![1.0, 1.0]).unwrap();
        let cfg = SearchConfig { lambda_decay: 1.0, ..Default::default() };
        assert!(generate(&m, &inst(vec![0.0, 0.0]), Outcome::Positive, &box2(), &w, &cfg).is_err());
        let cfg = SearchConfig { restarts: 0, ..Default::default() };
        assert!(generate(&m, &inst(vec![0.0, 0.0]), Outcome::Positive, &box2(), &w, &cfg).is_err());
    }
}
