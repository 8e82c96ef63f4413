use serde::{Deserialize, Serialize};

use crate::dataspec::{FeatureSchema, Instance, MonotoneDirection};
use crate::error::{check_dim, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    ImmutableChanged { feature: String },
    MonotoneViolated { feature: String, direction: MonotoneDirection },
    OutOfRange { feature: String, value: f64 },
    CouplingViolated { feature: String, partner: String },
}

impl Violation {
    pub fn feature(&self) -> &str {
        match self {
            Violation::ImmutableChanged { feature }
            | Violation::MonotoneViolated { feature, .. }
            | Violation::OutOfRange { feature, .. }
            | Violation::CouplingViolated { feature, .. } => feature,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Accepted,
    Rejected(Vec<Violation>),
}

impl Feasibility {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Feasibility::Accepted)
    }
}

/// Checks a candidate against the causal constraints declared in the
/// schema, relative to the subject's base point. Collects every violation.
pub fn enforce_feasibility(candidate: &[f64], base: &Instance, schema: &FeatureSchema) -> Result<Feasibility> {
    check_dim(schema.len(), candidate.len())?;
    check_dim(schema.len(), base.values.len())?;
    let mut violations = Vec::new();
    for (j, spec) in schema.features.iter().enumerate() {
        let (b, c) = (base.values[j], candidate[j]);
        if spec.is_immutable() && c != b {
            violations.push(Violation::ImmutableChanged { feature: spec.name.clone() });
        }
        let monotone_broken = match spec.monotone_direction {
            MonotoneDirection::IncreaseOnly => c < b,
            MonotoneDirection::DecreaseOnly => c > b,
            MonotoneDirection::Free => false,
        };
        if monotone_broken {
            violations.push(Violation::MonotoneViolated {
                feature: spec.name.clone(),
                direction: spec.monotone_direction,
            });
        }
        if !spec.admits(c) {
            violations.push(Violation::OutOfRange { feature: spec.name.clone(), value: c });
        }
        if let Some(p) = schema.coupling(j) {
            if c > b && !(candidate[p] > base.values[p]) {
                violations.push(Violation::CouplingViolated {
                    feature: spec.name.clone(),
                    partner: schema.features[p].name.clone(),
                });
            }
        }
    }
    Ok(if violations.is_empty() {
        Feasibility::Accepted
    } else {
        Feasibility::Rejected(violations)
    })
}
