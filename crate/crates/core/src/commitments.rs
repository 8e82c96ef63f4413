//! Append-only ledger of counterfactual commitments.
//!
//! A commitment is issued at `t0`, implemented by the subject at `t1 > t0`
//! and resolved at `t2 >= t1`, when the current model is asked again.
//! Every mutation is recorded as an event; replaying the event log from an
//! empty ledger rebuilds the same state.
//!
//! Status transitions:
//!
//! ```text
//! Outstanding -> Implemented | Expired | Void
//! Implemented -> Honored | Broken | Void | Expired
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cfsearch::Counterfactual;
use crate::dataspec::Outcome;
use crate::error::{Error, Result};
use crate::model::ScoringModel;
use crate::policy::{CoverageDecision, CoverageOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommitmentStatus {
    Outstanding,
    Implemented,
    Honored,
    Broken,
    Void,
    Expired,
}

impl CommitmentStatus {
    pub const ALL: [CommitmentStatus; 6] = [
        CommitmentStatus::Outstanding,
        CommitmentStatus::Implemented,
        CommitmentStatus::Honored,
        CommitmentStatus::Broken,
        CommitmentStatus::Void,
        CommitmentStatus::Expired,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            CommitmentStatus::Honored | CommitmentStatus::Broken | CommitmentStatus::Void | CommitmentStatus::Expired
        )
    }

    pub fn can_move_to(self, to: CommitmentStatus) -> bool {
        use CommitmentStatus::*;
        matches!(
            (self, to),
            (Outstanding, Implemented | Expired | Void) | (Implemented, Honored | Broken | Void | Expired)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CommitmentStatus::Outstanding => "Outstanding",
            CommitmentStatus::Implemented => "Implemented",
            CommitmentStatus::Honored => "Honored",
            CommitmentStatus::Broken => "Broken",
            CommitmentStatus::Void => "Void",
            CommitmentStatus::Expired => "Expired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commitment {
    pub commitment_id: u64,
    pub counterfactual: Counterfactual,
    pub policy_id: String,
    pub issued_at: u64,
    pub implemented_at: Option<u64>,
    pub resolved_at: Option<u64>,
    pub status: CommitmentStatus,
    pub resolution_reason: Option<String>,
    /// Certainty of the committed outcome under the resolution model.
    pub resolution_certainty: Option<f64>,
    pub resolution_model_version: Option<u64>,
    /// Honored although the resolution model disagreed.
    pub overridden: bool,
}

impl Commitment {
    pub fn target(&self) -> Outcome {
        self.counterfactual.target_outcome
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Issued,
    Implemented,
    Resolved,
    Expired,
    Voided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventPayload {
    Issued {
        policy_id: String,
        counterfactual: Box<Counterfactual>,
    },
    Resolved {
        status: CommitmentStatus,
        reason: String,
        certainty: f64,
        model_version: u64,
        overridden: bool,
    },
    Closed {
        reason: String,
    },
    Empty {},
}

/// One line of the JSON Lines event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub event_type: EventType,
    pub commitment_id: u64,
    pub step: u64,
    pub payload: EventPayload,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    commitments: Vec<Commitment>,
    events: Vec<LedgerEvent>,
    subject_states: BTreeMap<u64, Vec<f64>>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn commitments(&self) -> &[Commitment] {
        &self.commitments
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.commitments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commitments.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Commitment> {
        self.position(id).ok().map(|i| &self.commitments[i])
    }

    /// The instance a subject holds after implementing a scenario.
    pub fn subject_state(&self, subject_id: u64) -> Option<&[f64]> {
        self.subject_states.get(&subject_id).map(Vec::as_slice)
    }

    fn position(&self, id: u64) -> std::result::Result<usize, usize> {
        self.commitments.binary_search_by_key(&id, |c| c.commitment_id)
    }

    fn next_id(&self) -> u64 {
        self.commitments.last().map_or(1, |c| c.commitment_id + 1)
    }

    fn last_step(&self) -> u64 {
        self.events.last().map_or(0, |e| e.step)
    }

    pub fn issue(&mut self, counterfactual: Counterfactual, policy_id: &str, now: u64) -> Result<&Commitment> {
        let event = LedgerEvent {
            event_type: EventType::Issued,
            commitment_id: self.next_id(),
            step: now,
            payload: EventPayload::Issued {
                policy_id: policy_id.to_string(),
                counterfactual: Box::new(counterfactual),
            },
        };
        let id = self.apply(event)?;
        Ok(self.get(id).expect("just issued"))
    }

    pub fn mark_implemented(&mut self, id: u64, t1: u64) -> Result<&Commitment> {
        self.apply(LedgerEvent {
            event_type: EventType::Implemented,
            commitment_id: id,
            step: t1,
            payload: EventPayload::Empty {},
        })?;
        Ok(self.get(id).expect("exists"))
    }

    /// Resolves an implemented commitment against the current model and
    /// the policy's coverage decision.
    pub fn resolve(&mut self, id: u64, model_now: &ScoringModel, coverage: &CoverageDecision, t2: u64) -> Result<&Commitment> {
        let c = self.get(id).ok_or(Error::UnknownCommitment(id))?;
        let certainty = model_now.certainty_of(&c.counterfactual.point, c.target())?;
        let agrees = model_now.label(&c.counterfactual.point)? == c.target();
        let (status, reason, overridden) = match coverage.outcome {
            CoverageOutcome::VoidByBoundary => (CommitmentStatus::Void, coverage.reason.clone(), false),
            _ if agrees => (CommitmentStatus::Honored, "agreement".to_string(), false),
            CoverageOutcome::Covered => (CommitmentStatus::Honored, "policy_override".to_string(), true),
            CoverageOutcome::NotCovered => (CommitmentStatus::Broken, coverage.reason.clone(), false),
        };
        self.apply(LedgerEvent {
            event_type: EventType::Resolved,
            commitment_id: id,
            step: t2,
            payload: EventPayload::Resolved {
                status,
                reason,
                certainty,
                model_version: model_now.version_id,
                overridden,
            },
        })?;
        Ok(self.get(id).expect("exists"))
    }

    pub fn expire(&mut self, id: u64, now: u64, reason: &str) -> Result<&Commitment> {
        self.close(EventType::Expired, id, now, reason)
    }

    pub fn void(&mut self, id: u64, now: u64, reason: &str) -> Result<&Commitment> {
        self.close(EventType::Voided, id, now, reason)
    }

    fn close(&mut self, event_type: EventType, id: u64, now: u64, reason: &str) -> Result<&Commitment> {
        self.apply(LedgerEvent {
            event_type,
            commitment_id: id,
            step: now,
            payload: EventPayload::Closed { reason: reason.into() },
        })?;
        Ok(self.get(id).expect("exists"))
    }

    /// `(point, target)` of every non-terminal commitment, in issuance order.
    pub fn outstanding_scenarios(&self, now: u64) -> Vec<(Vec<f64>, Outcome)> {
        self.open_commitments(now)
            .map(|c| (c.counterfactual.point.clone(), c.target()))
            .collect()
    }

    pub fn open_commitments(&self, now: u64) -> impl Iterator<Item = &Commitment> {
        self.commitments
            .iter()
            .filter(move |c| !c.status.is_terminal() && c.issued_at <= now)
    }

    fn transition(&mut self, id: u64, to: CommitmentStatus) -> Result<&mut Commitment> {
        let i = self.position(id).map_err(|_| Error::UnknownCommitment(id))?;
        let c = &mut self.commitments[i];
        if !c.status.can_move_to(to) {
            return Err(Error::InvalidTransition {
                id,
                from: c.status.as_str().into(),
                to: to.as_str().into(),
            });
        }
        Ok(c)
    }

    /// Validates `event` against the current state, applies it and appends
    /// it to the log. Live operations and replay share this path.
    fn apply(&mut self, event: LedgerEvent) -> Result<u64> {
        if event.step < self.last_step() {
            return Err(Error::TemporalOrder(format!(
                "event at step {} after step {}",
                event.step,
                self.last_step()
            )));
        }
        let id = event.commitment_id;
        match (&event.event_type, &event.payload) {
            (EventType::Issued, EventPayload::Issued { policy_id, counterfactual }) => {
                if id != self.next_id() {
                    return Err(Error::TemporalOrder(format!("expected commitment id {}, found {id}", self.next_id())));
                }
                let cf = counterfactual.as_ref();
                if self.commitments.iter().any(|c| {
                    c.counterfactual.subject_id == cf.subject_id
                        && c.counterfactual.model_version_at_issue == cf.model_version_at_issue
                }) {
                    return Err(Error::DuplicateIssuance {
                        subject_id: cf.subject_id,
                        model_version: cf.model_version_at_issue,
                    });
                }
                self.commitments.push(Commitment {
                    commitment_id: id,
                    counterfactual: cf.clone(),
                    policy_id: policy_id.clone(),
                    issued_at: event.step,
                    implemented_at: None,
                    resolved_at: None,
                    status: CommitmentStatus::Outstanding,
                    resolution_reason: None,
                    resolution_certainty: None,
                    resolution_model_version: None,
                    overridden: false,
                });
            }
            (EventType::Implemented, EventPayload::Empty {}) => {
                let t1 = event.step;
                let issued_at = self.get(id).ok_or(Error::UnknownCommitment(id))?.issued_at;
                let c = self.transition(id, CommitmentStatus::Implemented)?;
                if t1 <= issued_at {
                    return Err(Error::TemporalOrder(format!("t1 = {t1} must exceed t0 = {issued_at}")));
                }
                c.status = CommitmentStatus::Implemented;
                c.implemented_at = Some(t1);
                let (subject, point) = (c.counterfactual.subject_id, c.counterfactual.point.clone());
                self.subject_states.insert(subject, point);
            }
            (
                EventType::Resolved,
                EventPayload::Resolved {
                    status,
                    reason,
                    certainty,
                    model_version,
                    overridden,
                },
            ) => {
                if !matches!(status, CommitmentStatus::Honored | CommitmentStatus::Broken | CommitmentStatus::Void) {
                    return Err(Error::Malformed(format!("resolution cannot end in {status:?}")));
                }
                let t2 = event.step;
                let c = self.transition(id, *status)?;
                let t1 = c.implemented_at.expect("implemented commitments carry t1");
                if t2 < t1 {
                    return Err(Error::TemporalOrder(format!("t2 = {t2} precedes t1 = {t1}")));
                }
                c.status = *status;
                c.resolved_at = Some(t2);
                c.resolution_reason = Some(reason.clone());
                c.resolution_certainty = Some(*certainty);
                c.resolution_model_version = Some(*model_version);
                c.overridden = *overridden;
            }
            (EventType::Expired | EventType::Voided, EventPayload::Closed { reason }) => {
                let to = if event.event_type == EventType::Expired {
                    CommitmentStatus::Expired
                } else {
                    CommitmentStatus::Void
                };
                let c = self.transition(id, to)?;
                c.status = to;
                c.resolved_at = Some(event.step);
                c.resolution_reason = Some(reason.clone());
            }
            (t, _) => return Err(Error::Malformed(format!("payload does not match event type {t:?}"))),
        }
        self.events.push(event);
        Ok(id)
    }

    /// Rebuilds a ledger from its event log.
    pub fn replay(events: &[LedgerEvent]) -> Result<Ledger> {
        let mut ledger = Ledger::new();
        for (line, event) in events.iter().enumerate() {
            ledger.apply(event.clone()).map_err(|e| Error::EventLog {
                line: line + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(ledger)
    }

    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_log(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_log<R: BufRead>(input: R) -> Result<Vec<LedgerEvent>> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| Error::EventLog {
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(events)
    }

    pub fn load_log(path: impl AsRef<Path>) -> Result<Ledger> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ledger::replay(&Ledger::read_log(file)?)
    }
}

/// Appends events to a JSON Lines log without rewriting earlier lines.
pub fn append_events(path: impl AsRef<Path>, events: &[LedgerEvent]) -> Result<()> {
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = std::io::BufWriter::new(file);
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
