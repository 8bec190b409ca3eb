//! Automated re-annotation at desk scale.
//!
//! Videos are sampled so their durations spread evenly over 0 to 240 s, an
//! annotator backend proposes events for each, and only candidates that
//! pass the linter become dataset records.

pub mod backend;
pub mod events;
pub mod pipeline;
pub mod sampling;

pub use backend::{AnnotateRequest, AnnotatorBackend, BackendError, HttpBackend, MockBackend, RetryPolicy, ScriptedBackend};
pub use events::{build_prompt, parse_events, CandidateAnnotation, ParsedEvents, VerificationStatus};
pub use pipeline::{accept_candidates, annotate_all, annotate_video, Acceptance, AnnotateError, VideoOutcome};
pub use sampling::{sample_videos_uniform_duration, BinPlan, SamplingConfig, SamplingError, Selection};
