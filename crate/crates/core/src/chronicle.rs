//! Taxonomy of what changed between issuing a counterfactual and asking the
//! model again: the data point `x`, the model `h`, the outcome `y`.

use serde::{Deserialize, Serialize};

use crate::commitments::Commitment;
use crate::dataspec::Outcome;
use crate::error::{Error, Result};
use crate::model::ScoringModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChangeTriple {
    pub x_changed: bool,
    pub h_changed: bool,
    pub y_changed: bool,
}

impl ChangeTriple {
    pub fn new(x_changed: bool, h_changed: bool, y_changed: bool) -> Self {
        Self {
            x_changed,
            h_changed,
            y_changed,
        }
    }

    /// `+` for unchanged, `-` for changed, in `x h y` order.
    pub fn notation(&self) -> String {
        [self.x_changed, self.h_changed, self.y_changed]
            .iter()
            .map(|c| if *c { '-' } else { '+' })
            .collect()
    }

    pub fn all() -> impl Iterator<Item = ChangeTriple> {
        (0..8u8).map(|b| ChangeTriple::new(b & 4 != 0, b & 2 != 0, b & 1 != 0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventCase {
    pub case_number: u8,
    pub name: &'static str,
    pub is_uce: bool,
    pub is_paradigmatic: bool,
    pub is_impossible: bool,
}

const fn case(case_number: u8, name: &'static str) -> EventCase {
    EventCase {
        case_number,
        name,
        is_uce: case_number == 4,
        is_paradigmatic: case_number == 6,
        is_impossible: case_number == 7,
    }
}

pub const CASES: [EventCase; 8] = [
    case(1, "no_change"),
    case(2, "input_change_without_outcome_change"),
    case(3, "model_change_without_outcome_change"),
    case(4, "unfortunate_counterfactual_event"),
    case(5, "model_driven_outcome_change"),
    case(6, "paradigmatic_counterfactual_event"),
    case(7, "not_applicable"),
    case(8, "compatible_retraining"),
];

pub fn classify(t: ChangeTriple) -> EventCase {
    let n = match (t.x_changed, t.h_changed, t.y_changed) {
        (false, false, false) => 1,
        (true, false, false) => 2,
        (false, true, false) => 3,
        (true, true, false) => 4,
        (false, true, true) => 5,
        (true, false, true) => 6,
        (false, false, true) => 7,
        (true, true, true) => 8,
    };
    CASES[n as usize - 1]
}

/// Classifies a resolved commitment. `y0` is the outcome the subject got
/// when the counterfactual was issued.
pub fn detect(commitment: &Commitment, model_at_issue_version: u64, model_at_resolution: &ScoringModel, y0: Outcome) -> Result<(ChangeTriple, EventCase)> {
    if !commitment.status.is_terminal() {
        return Err(Error::Precondition(format!(
            "commitment {} is not resolved",
            commitment.commitment_id
        )));
    }
    let x_changed = commitment.implemented_at.is_some();
    let point = if x_changed {
        &commitment.counterfactual.point
    } else {
        &commitment.counterfactual.base_point.values
    };
    let triple = ChangeTriple {
        x_changed,
        h_changed: model_at_resolution.version_id != model_at_issue_version,
        y_changed: model_at_resolution.label(point)? != y0,
    };
    Ok((triple, classify(triple)))
}

/// Parameter-level equality, reported next to the version-based `h_changed`.
pub fn parameters_equal(a: &ScoringModel, b: &ScoringModel) -> bool {
    a.weights == b.weights && a.bias == b.bias
}
