//! Counterfactual explanations over time.
//!
//! The crate covers the whole lifecycle of a counterfactual explanation
//! issued by a credit-scoring model: generation, the commitment it implies,
//! the subject implementing it, the model being retrained in between, and
//! the classification of what happened when the subject comes back.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cfsearch;
pub mod chronicle;
pub mod commitments;
pub mod dataspec;
pub mod error;
pub mod model;
pub mod policy;
pub mod retraining;
pub mod sim;

pub use error::{Error, Result};
