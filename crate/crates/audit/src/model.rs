//! Audit workflow records and wire types.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use vtg_core::ErrorKind;

/// Version stamped on every request and response body.
pub const API_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_QC_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    InReview,
    Reviewed,
    InValidation,
    Validated,
    /// The validator judged the submission incorrect.
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Review,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    NoError,
    Errors(BTreeSet<ErrorKind>),
}

impl Diagnosis {
    pub fn is_no_error(&self) -> bool {
        match self {
            Diagnosis::NoError => true,
            Diagnosis::Errors(kinds) => kinds.is_empty(),
        }
    }

    pub fn kinds(&self) -> BTreeSet<ErrorKind> {
        match self {
            Diagnosis::NoError => BTreeSet::new(),
            Diagnosis::Errors(kinds) => kinds.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_span: Option<[f64; 2]>,
    #[serde(default)]
    pub discarded: bool,
}

impl Correction {
    pub fn is_empty(&self) -> bool {
        self.new_query.is_none() && self.new_span.is_none() && !self.discarded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

/// A review and its validation, kept when a batch rejection resets the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedSubmission {
    pub reviewer_id: Option<String>,
    pub validator_id: Option<String>,
    pub diagnosis: Option<Diagnosis>,
    pub correction: Option<Correction>,
    pub verdict: Option<Verdict>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTask {
    pub task_id: String,
    pub batch_id: String,
    pub dataset: String,
    pub annotation_id: String,
    pub video_id: String,
    pub state: TaskState,
    pub reviewer_id: Option<String>,
    pub validator_id: Option<String>,
    pub diagnosis: Option<Diagnosis>,
    pub correction: Option<Correction>,
    pub verdict: Option<Verdict>,
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub archived: Vec<ArchivedSubmission>,
}

impl AuditTask {
    pub(crate) fn archive_and_reset(&mut self) {
        self.archived.push(ArchivedSubmission {
            reviewer_id: self.reviewer_id.take(),
            validator_id: self.validator_id.take(),
            diagnosis: self.diagnosis.take(),
            correction: self.correction.take(),
            verdict: self.verdict.take(),
            note: self.note.take(),
        });
        self.state = TaskState::Pending;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    Open,
    /// Every task has been reviewed; validation is under way.
    Validating,
    Accepted,
    /// Failed QC; its tasks are back to pending for another round.
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcResult {
    pub flagged: usize,
    pub size: usize,
    pub rate: f64,
    pub threshold: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: String,
    pub dataset: String,
    pub task_ids: Vec<String>,
    pub qc_threshold: f64,
    pub status: BatchStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qc_history: Vec<QcResult>,
}

/// Counts mirroring the "rewritten queries / refined segments" columns of a
/// refined benchmark.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceLedger {
    /// Query text changed (span may also have changed).
    pub rewritten: usize,
    /// Only the span changed.
    pub refined: usize,
    pub discarded: usize,
    /// Reviewed with no error and left as is.
    pub confirmed: usize,
    /// Flagged incorrect by the validator inside an accepted batch; exported
    /// without the rejected correction.
    pub flagged_unrefined: usize,
    /// Never enrolled in a batch.
    pub unaudited: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub dataset: String,
    /// Canonical JSONL of the refined dataset.
    pub jsonl: String,
    pub ledger: ProvenanceLedger,
}
