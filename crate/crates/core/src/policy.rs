//! Commitment policies: when does the institution stand by a counterfactual
//! whose subject came back after implementing it?
//!
//! * `Unconditional` always covers.
//! * `Boundary` covers unless a declared boundary condition is hit: an
//!   expiry horizon, an economic index leaving its bounds, or the running
//!   cost of honoring overrides exceeding a cap.
//! * `Probabilistic` covers by a certainty threshold or a guaranteed
//!   fraction of each resolution cohort.
//! * `Combined` declares a guaranteed fraction per economic regime; a zero
//!   fraction voids the commitment.
//!
//! Fraction-based guarantees are allocated by rank, never by lottery: see
//! [`select_guaranteed`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::commitments::{Commitment, CommitmentStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Normal,
    Stress,
    Crisis,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Normal, Regime::Stress, Regime::Crisis];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Normal => "normal",
            Regime::Stress => "stress",
            Regime::Crisis => "crisis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicIndexSeries {
    pub values: Vec<f64>,
    pub stress_threshold: f64,
    pub crisis_threshold: f64,
}

impl EconomicIndexSeries {
    pub fn value_at(&self, t: u64) -> Result<f64> {
        self.values
            .get(t as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("step {t} outside index series of length {}", self.values.len())))
    }
}

pub fn regime_at(series: &EconomicIndexSeries, t: u64) -> Result<Regime> {
    let v = series.value_at(t)?;
    Ok(if v >= series.stress_threshold {
        Regime::Normal
    } else if v >= series.crisis_threshold {
        Regime::Stress
    } else {
        Regime::Crisis
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Unconditional,
    Boundary,
    Probabilistic,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitmentPolicy {
    pub policy_id: String,
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expiry_horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_bounds: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certainty_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guaranteed_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<BTreeMap<Regime, f64>>,
}

fn unit_interval(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl CommitmentPolicy {
    fn bare(policy_id: &str, kind: PolicyKind) -> Self {
        Self {
            policy_id: policy_id.into(),
            kind,
            expiry_horizon: None,
            index_bounds: None,
            loss_cap: None,
            certainty_threshold: None,
            guaranteed_fraction: None,
            schedule: None,
        }
    }

    pub fn unconditional(policy_id: &str) -> Self {
        Self::bare(policy_id, PolicyKind::Unconditional)
    }

    pub fn boundary(policy_id: &str, expiry_horizon: Option<u64>, index_bounds: Option<(f64, f64)>, loss_cap: Option<f64>) -> Self {
        Self {
            expiry_horizon,
            index_bounds,
            loss_cap,
            ..Self::bare(policy_id, PolicyKind::Boundary)
        }
    }

    pub fn certainty_threshold(policy_id: &str, tau: f64) -> Self {
        Self {
            certainty_threshold: Some(tau),
            ..Self::bare(policy_id, PolicyKind::Probabilistic)
        }
    }

    pub fn guaranteed_fraction(policy_id: &str, fraction: f64) -> Self {
        Self {
            guaranteed_fraction: Some(fraction),
            ..Self::bare(policy_id, PolicyKind::Probabilistic)
        }
    }

    pub fn combined(policy_id: &str, normal: f64, stress: f64, crisis: f64) -> Self {
        let schedule = [(Regime::Normal, normal), (Regime::Stress, stress), (Regime::Crisis, crisis)]
            .into_iter()
            .collect();
        Self {
            schedule: Some(schedule),
            ..Self::bare(policy_id, PolicyKind::Combined)
        }
    }

    /// The 90% / 70% / no-guarantee schedule.
    pub fn declared_schedule(policy_id: &str) -> Self {
        Self::combined(policy_id, 0.90, 0.70, 0.0)
    }

    pub fn has_boundary_conditions(&self) -> bool {
        self.expiry_horizon.is_some() || self.index_bounds.is_some() || self.loss_cap.is_some()
    }

    /// Whether evaluation needs an economic index series.
    pub fn needs_index(&self) -> bool {
        self.index_bounds.is_some() || self.kind == PolicyKind::Combined
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("policy `{}`: {m}", self.policy_id)));
        if let Some((lo, hi)) = self.index_bounds {
            if !(lo <= hi) {
                return bad("index_bounds must satisfy lower <= upper");
            }
        }
        if let Some(cap) = self.loss_cap {
            if !(cap >= 0.0) {
                return bad("loss_cap must be nonnegative");
            }
        }
        match self.kind {
            PolicyKind::Unconditional => {}
            PolicyKind::Boundary => {
                if !self.has_boundary_conditions() {
                    return bad("boundary policy needs expiry_horizon, index_bounds or loss_cap");
                }
            }
            PolicyKind::Probabilistic => match (self.certainty_threshold, self.guaranteed_fraction) {
                (Some(t), None) | (None, Some(t)) if unit_interval(t) => {}
                (Some(_), None) | (None, Some(_)) => return bad("threshold or fraction must lie in [0, 1]"),
                _ => return bad("probabilistic policy needs exactly one of certainty_threshold, guaranteed_fraction"),
            },
            PolicyKind::Combined => {
                let Some(schedule) = &self.schedule else {
                    return bad("combined policy needs a schedule");
                };
                if Regime::ALL.iter().any(|r| !schedule.get(r).copied().is_some_and(unit_interval)) {
                    return bad("schedule must give a proportion in [0, 1] for normal, stress and crisis");
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageOutcome {
    Covered,
    NotCovered,
    VoidByBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageDecision {
    pub outcome: CoverageOutcome,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_probability: Option<f64>,
}

impl CoverageDecision {
    fn new(outcome: CoverageOutcome, reason: &str, declared_probability: Option<f64>) -> Self {
        Self {
            outcome,
            reason: reason.into(),
            declared_probability,
        }
    }

    pub fn covered(reason: &str) -> Self {
        Self::new(CoverageOutcome::Covered, reason, None)
    }

    pub fn not_covered(reason: &str) -> Self {
        Self::new(CoverageOutcome::NotCovered, reason, None)
    }

    pub fn void(reason: &str) -> Self {
        Self::new(CoverageOutcome::VoidByBoundary, reason, None)
    }
}

/// Position of a commitment in its resolution cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankContext {
    pub guaranteed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    /// Certainty the resolution model assigns to the committed outcome.
    pub certainty: f64,
    pub rank_context: Option<RankContext>,
    /// Running cost of honoring against the model so far.
    pub cumulative_override_cost: f64,
}

impl Assessment {
    pub fn new(certainty: f64) -> Self {
        Self {
            certainty,
            rank_context: None,
            cumulative_override_cost: 0.0,
        }
    }
}

/// Sorts the cohort by certainty (descending, ties by id ascending) and
/// returns the first `ceil(fraction * n)` ids.
///
/// Products within `1e-9` relative of an integer count as that integer, so
/// decimal fractions such as 0.7 of 10 give exactly 7.
pub fn select_guaranteed(cohort: &[(u64, f64)], fraction: f64) -> Result<BTreeSet<u64>> {
    if !unit_interval(fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let ids: BTreeSet<u64> = cohort.iter().map(|(id, _)| *id).collect();
    if ids.len() != cohort.len() {
        return Err(Error::InvalidArgument("cohort ids must be unique".into()));
    }
    let count = guaranteed_count(cohort.len(), fraction);
    let mut ranked = cohort.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(count).map(|(id, _)| id).collect())
}

fn guaranteed_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let nearest = exact.round();
    let count = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    (count as usize).min(n)
}

fn boundary_violation(
    policy: &CommitmentPolicy,
    commitment: &Commitment,
    series: Option<&EconomicIndexSeries>,
    t2: u64,
    assessment: &Assessment,
) -> Result<Option<&'static str>> {
    if let Some(h) = policy.expiry_horizon {
        if t2.saturating_sub(commitment.issued_at) > h {
            return Ok(Some("expired"));
        }
    }
    if let Some((lo, hi)) = policy.index_bounds {
        let series = series.ok_or_else(|| Error::Precondition("index-conditioned policy needs an index series".into()))?;
        let v = series.value_at(t2)?;
        if v < lo || v > hi {
            return Ok(Some("index_out_of_bounds"));
        }
    }
    if let Some(cap) = policy.loss_cap {
        if assessment.cumulative_override_cost > cap {
            return Ok(Some("loss_cap_exceeded"));
        }
    }
    Ok(None)
}

fn ranked(assessment: &Assessment, declared: Option<f64>) -> Result<CoverageDecision> {
    let ctx = assessment
        .rank_context
        .ok_or_else(|| Error::Precondition("fraction-based policy needs a cohort rank".into()))?;
    Ok(if ctx.guaranteed {
        CoverageDecision::new(CoverageOutcome::Covered, "guaranteed_rank", declared)
    } else {
        CoverageDecision::new(CoverageOutcome::NotCovered, "outside_guaranteed_rank", declared)
    })
}

/// Guaranteed fraction applying to a cohort resolved at `t2`, for
/// fraction-based policies.
pub fn cohort_fraction(policy: &CommitmentPolicy, series: Option<&EconomicIndexSeries>, t2: u64) -> Result<Option<f64>> {
    Ok(match policy.kind {
        PolicyKind::Probabilistic => policy.guaranteed_fraction,
        PolicyKind::Combined => {
            let series = series.ok_or_else(|| Error::Precondition("combined policy needs an index series".into()))?;
            let regime = regime_at(series, t2)?;
            policy.schedule.as_ref().and_then(|s| s.get(&regime).copied())
        }
        _ => None,
    })
}

/// Decides whether the institution stands by an implemented commitment.
/// Pure in its arguments.
pub fn evaluate(
    policy: &CommitmentPolicy,
    commitment: &Commitment,
    series: Option<&EconomicIndexSeries>,
    t2: u64,
    assessment: &Assessment,
) -> Result<CoverageDecision> {
    policy.validate()?;
    if commitment.status != CommitmentStatus::Implemented {
        return Err(Error::Precondition(format!(
            "commitment {} is {:?}, not implemented",
            commitment.commitment_id, commitment.status
        )));
    }
    if !unit_interval(assessment.certainty) {
        return Err(Error::Precondition("certainty must lie in [0, 1]".into()));
    }
    match policy.kind {
        PolicyKind::Unconditional => Ok(CoverageDecision::covered("unconditional")),
        PolicyKind::Boundary => Ok(match boundary_violation(policy, commitment, series, t2, assessment)? {
            Some(reason) => CoverageDecision::void(reason),
            None => CoverageDecision::covered("within_boundary"),
        }),
        PolicyKind::Probabilistic => {
            if let Some(tau) = policy.certainty_threshold {
                Ok(if assessment.certainty >= tau {
                    CoverageDecision::covered("certainty_at_threshold")
                } else {
                    CoverageDecision::not_covered("certainty_below_threshold")
                })
            } else {
                ranked(assessment, None)
            }
        }
        PolicyKind::Combined => {
            let series = series.ok_or_else(|| Error::Precondition("combined policy needs an index series".into()))?;
            let declared = cohort_fraction(policy, Some(series), t2)?.unwrap_or(0.0);
            if let Some(reason) = boundary_violation(policy, commitment, Some(series), t2, assessment)? {
                return Ok(CoverageDecision::new(CoverageOutcome::VoidByBoundary, reason, Some(declared)));
            }
            if declared == 0.0 {
                return Ok(CoverageDecision::new(CoverageOutcome::VoidByBoundary, "no_guarantee", Some(declared)));
            }
            ranked(assessment, Some(declared))
        }
    }
}

/// Evaluates one resolution cohort: every commitment resolved at `t2`.
/// Fraction-based guarantees are allocated among the cohort members not
/// voided by a boundary condition.
pub fn evaluate_cohort(
    policy: &CommitmentPolicy,
    cohort: &[(&Commitment, f64)],
    series: Option<&EconomicIndexSeries>,
    t2: u64,
    cumulative_override_cost: f64,
) -> Result<Vec<CoverageDecision>> {
    let base = |certainty| Assessment {
        certainty,
        rank_context: None,
        cumulative_override_cost,
    };
    let Some(fraction) = cohort_fraction(policy, series, t2)? else {
        return cohort.iter().map(|(c, p)| evaluate(policy, c, series, t2, &base(*p))).collect();
    };
    let mut eligible = Vec::new();
    for (c, p) in cohort {
        if boundary_violation(policy, c, series, t2, &base(*p))?.is_none() {
            eligible.push((c.commitment_id, *p));
        }
    }
    let selected = select_guaranteed(&eligible, fraction)?;
    cohort
        .iter()
        .map(|(c, p)| {
            let assessment = Assessment {
                rank_context: Some(RankContext {
                    guaranteed: selected.contains(&c.commitment_id),
                }),
                ..base(*p)
            };
            evaluate(policy, c, series, t2, &assessment)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commitments::tests::implemented_commitment;

    fn series() -> EconomicIndexSeries {
        EconomicIndexSeries {
            values: vec![1.0, 0.9, 0.75, 0.5],
            stress_threshold: 0.9,
            crisis_threshold: 0.6,
        }
    }

    #[test]
    fn regimes() {
        let s = series();
        assert_eq!(regime_at(&s, 0).unwrap(), Regime::Normal);
        assert_eq!(regime_at(&s, 1).unwrap(), Regime::Normal);
        assert_eq!(regime_at(&s, 2).unwrap(), Regime::Stress);
        assert_eq!(regime_at(&s, 3).unwrap(), Regime::Crisis);
        assert!(regime_at(&s, 4).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(CommitmentPolicy::boundary("b", None, None, None).validate().is_err());
        assert!(CommitmentPolicy::boundary("b", Some(10), None, None).validate().is_ok());
        let mut both = CommitmentPolicy::certainty_threshold("p", 0.7);
        both.guaranteed_fraction = Some(0.5);
        assert!(both.validate().is_err());
        assert!(CommitmentPolicy::guaranteed_fraction("p", 1.5).validate().is_err());
        let mut partial = CommitmentPolicy::declared_schedule("c");
        partial.schedule.as_mut().unwrap().remove(&Regime::Stress);
        assert!(partial.validate().is_err());
        assert!(CommitmentPolicy::declared_schedule("c").validate().is_ok());
    }

    #[test]
    fn policy_json_round_trip() {
        for p in [
            CommitmentPolicy::declared_schedule("c"),
            CommitmentPolicy::boundary("b", Some(3), Some((0.5, 2.0)), Some(4.0)),
        ] {
            let text = serde_json::to_string(&p).unwrap();
            assert_eq!(CommitmentPolicy::from_json(&text).unwrap(), p);
        }
        assert!(CommitmentPolicy::from_json(r#"{"policy_id":"x","kind":"boundary"}"#).is_err());
    }

    #[test]
    fn boundary_expiry_voids() {
        let c = implemented_commitment(1, 0, 5);
        let p = CommitmentPolicy::boundary("b", Some(10), None, None);
        let d = evaluate(&p, &c, None, 15, &Assessment::new(0.4)).unwrap();
        assert_eq!(d.outcome, CoverageOutcome::VoidByBoundary);
        assert_eq!(d.reason, "expired");
        assert_eq!(d.declared_probability, None);
        let d = evaluate(&p, &c, None, 10, &Assessment::new(0.4)).unwrap();
        assert_eq!(d.outcome, CoverageOutcome::Covered);
    }

    #[test]
    fn boundary_index_and_loss_cap() {
        let c = implemented_commitment(1, 0, 1);
        let p = CommitmentPolicy::boundary("b", None, Some((0.6, 2.0)), None);
        assert!(evaluate(&p, &c, None, 3, &Assessment::new(0.5)).is_err());
        assert_eq!(evaluate(&p, &c, Some(&series()), 3, &Assessment::new(0.5)).unwrap().reason, "index_out_of_bounds");
        assert_eq!(evaluate(&p, &c, Some(&series()), 2, &Assessment::new(0.5)).unwrap().outcome, CoverageOutcome::Covered);
        let capped = CommitmentPolicy::boundary("b", None, None, Some(3.0));
        let mut a = Assessment::new(0.2);
        a.cumulative_override_cost = 3.0;
        assert_eq!(evaluate(&capped, &c, None, 2, &a).unwrap().outcome, CoverageOutcome::Covered);
        a.cumulative_override_cost = 4.0;
        assert_eq!(evaluate(&capped, &c, None, 2, &a).unwrap().reason, "loss_cap_exceeded");
    }

    #[test]
    fn certainty_threshold() {
        let c = implemented_commitment(1, 0, 1);
        let p = CommitmentPolicy::certainty_threshold("p", 0.7);
        assert_eq!(evaluate(&p, &c, None, 2, &Assessment::new(0.8)).unwrap().outcome, CoverageOutcome::Covered);
        assert_eq!(evaluate(&p, &c, None, 2, &Assessment::new(0.7)).unwrap().outcome, CoverageOutcome::Covered);
        assert_eq!(evaluate(&p, &c, None, 2, &Assessment::new(0.6)).unwrap().outcome, CoverageOutcome::NotCovered);
    }

    #[test]
    fn combined_crisis_offers_no_guarantee() {
        let c = implemented_commitment(1, 0, 1);
        let p = CommitmentPolicy::declared_schedule("c");
        let d = evaluate(&p, &c, Some(&series()), 3, &Assessment::new(0.9)).unwrap();
        assert_eq!(d.outcome, CoverageOutcome::VoidByBoundary);
        assert_eq!(d.declared_probability, Some(0.0));
        let mut a = Assessment::new(0.9);
        a.rank_context = Some(RankContext { guaranteed: true });
        let d = evaluate(&p, &c, Some(&series()), 2, &a).unwrap();
        assert_eq!(d.outcome, CoverageOutcome::Covered);
        assert_eq!(d.declared_probability, Some(0.7));
        assert!(evaluate(&p, &c, None, 2, &a).is_err());
        assert!(evaluate(&p, &c, Some(&series()), 2, &Assessment::new(0.9)).is_err());
    }

    #[test]
    fn evaluate_requires_implemented() {
        let mut c = implemented_commitment(1, 0, 1);
        c.status = CommitmentStatus::Outstanding;
        assert!(evaluate(&CommitmentPolicy::unconditional("u"), &c, None, 2, &Assessment::new(0.5)).is_err());
    }

    #[test]
    fn select_examples() {
        let cohort: Vec<(u64, f64)> = (0..10).map(|i| (i, [0.3, 0.9, 0.5, 0.7, 0.1, 0.95, 0.6, 0.2, 0.8, 0.4][i as usize])).collect();
        assert_eq!(select_guaranteed(&cohort, 1.0).unwrap().len(), 10);
        assert!(select_guaranteed(&cohort, 0.0).unwrap().is_empty());
        // Hand-sorted: 0.95(5) 0.9(1) 0.8(8) 0.7(3) 0.6(6) 0.5(2) 0.4(9)
        let top7: BTreeSet<u64> = [5, 1, 8, 3, 6, 2, 9].into_iter().collect();
        assert_eq!(select_guaranteed(&cohort, 0.7).unwrap(), top7);
        assert!(select_guaranteed(&cohort, -0.1).is_err());
        assert!(select_guaranteed(&[(1, 0.5), (1, 0.6)], 0.5).is_err());
    }

    #[test]
    fn select_breaks_ties_by_id() {
        let cohort = [(9, 0.5), (3, 0.5), (4, 0.5)];
        assert_eq!(select_guaranteed(&cohort, 0.5).unwrap(), [3, 4].into_iter().collect());
    }

    #[test]
    fn cohort_respects_declared_fraction() {
        let cs: Vec<Commitment> = (1..=10).map(|i| implemented_commitment(i, 0, 1)).collect();
        let cohort: Vec<(&Commitment, f64)> = cs.iter().enumerate().map(|(i, c)| (c, i as f64 / 10.0)).collect();
        let p = CommitmentPolicy::declared_schedule("c");
        let d = evaluate_cohort(&p, &cohort, Some(&series()), 2, 0.0).unwrap();
        assert_eq!(d.iter().filter(|d| d.outcome == CoverageOutcome::Covered).count(), 7);
        let d = evaluate_cohort(&p, &cohort, Some(&series()), 0, 0.0).unwrap();
        assert_eq!(d.iter().filter(|d| d.outcome == CoverageOutcome::Covered).count(), 9);
    }
}
