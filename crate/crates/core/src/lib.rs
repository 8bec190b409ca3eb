//! Data-quality, evaluation and training-recipe tooling for video temporal
//! grounding.
//!
//! Everything here operates on annotation and prediction files: spans and
//! datasets ([`span`], [`dataset`]), output parsing ([`parse`]), metrics
//! ([`metrics`]), dataset linting ([`lint`]), difficulty-aware subset
//! sampling ([`sampler`]), GRPO reward accounting with plateau detection
//! ([`rlvr`]) and timestamp-encoding plans ([`encode`]).

pub mod dataset;
pub mod encode;
pub mod lint;
pub mod metrics;
pub mod parse;
pub mod rlvr;
pub mod sampler;
pub mod span;

pub use dataset::{
    AnnotationRecord, Dataset, DatasetError, ErrorKind, Provenance, Schema, SourceDataset,
    VideoMeta,
};
pub use span::{temporal_iou, SpanError, TimeSpan};
