//! Human audit workflow for grounding annotations.
//!
//! Annotations are enrolled into batches. Each task is reviewed by one
//! worker and validated by a different one; a batch whose flagged rate
//! exceeds its QC threshold goes back for another round. Accepted batches
//! export a refined dataset with a provenance ledger.

pub mod config;
pub mod http;
pub mod model;
pub mod store;

pub use config::{Role, ServiceConfig};
pub use model::{
    AuditTask, Batch, BatchStatus, Correction, Diagnosis, Export, Phase, ProvenanceLedger, QcResult, TaskState,
    Verdict, API_SCHEMA_VERSION, DEFAULT_QC_THRESHOLD,
};
pub use store::{AuditError, AuditStore, Event};
