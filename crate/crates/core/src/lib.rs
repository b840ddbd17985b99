//! Multi-granularity entailment and evidence retrieval over clinical-trial
//! style reports.

pub mod consistency;
pub mod container;
pub mod corpus;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod generative;
pub mod mgnet;
pub mod nn;
pub mod objectives;
pub mod training;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// The two subtasks: A is hypothesis-level entailment, B is per-sentence
/// evidence retrieval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    A,
    B,
}
