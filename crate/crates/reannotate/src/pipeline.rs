//! Backend calls, parallel fan-out and lint-gated acceptance.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;
use vtg_core::lint::{lint_items, FindingKind, LintConfig, LintItem, LintReport};
use vtg_core::{AnnotationRecord, Dataset, DatasetError, ErrorKind, Provenance, TimeSpan, VideoMeta};

use crate::backend::{AnnotateRequest, AnnotatorBackend, BackendError, RetryPolicy, API_SCHEMA_VERSION};
use crate::events::{build_prompt, parse_events, CandidateAnnotation, VerificationStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotateError {
    #[error("backend failed for video '{video_id}' after {attempts} attempt(s): {source}")]
    Backend {
        video_id: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoOutcome {
    pub video_id: String,
    pub candidates: Vec<CandidateAnnotation>,
    pub concentrated: bool,
    pub warnings: Vec<String>,
    pub attempts: u32,
}

pub fn annotate_video(
    video: &VideoMeta,
    backend: &dyn AnnotatorBackend,
    retry: &RetryPolicy,
) -> Result<VideoOutcome, AnnotateError> {
    let request = AnnotateRequest {
        schema_version: API_SCHEMA_VERSION,
        video_id: video.video_id.clone(),
        duration: video.duration,
        prompt: build_prompt(video),
    };
    let (result, attempts) = retry.run(|| backend.annotate(&request));
    let text = result.map_err(|source| AnnotateError::Backend {
        video_id: video.video_id.clone(),
        attempts,
        source,
    })?;
    let parsed = parse_events(video, &text);
    let mut warnings = Vec::new();
    if text.trim().is_empty() {
        warnings.push(format!("{}: empty response", video.video_id));
    } else if parsed.candidates.is_empty() {
        warnings.push(format!("{}: no events could be parsed", video.video_id));
    }
    for line in &parsed.skipped_lines {
        warnings.push(format!("{}: skipped line {line:?}", video.video_id));
    }
    if parsed.concentrated {
        warnings.push(format!(
            "{}: all events fall within one quarter of the video",
            video.video_id
        ));
    }
    Ok(VideoOutcome {
        video_id: video.video_id.clone(),
        candidates: parsed.candidates,
        concentrated: parsed.concentrated,
        warnings,
        attempts,
    })
}

/// Annotates every video with at most `concurrency` requests in flight.
/// Results come back sorted by video id regardless of completion order.
pub fn annotate_all(
    videos: &[VideoMeta],
    backend: &dyn AnnotatorBackend,
    retry: &RetryPolicy,
    concurrency: usize,
) -> Vec<Result<VideoOutcome, AnnotateError>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<VideoOutcome, AnnotateError>)>> = Mutex::new(Vec::new());
    let workers = concurrency.clamp(1, videos.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(video) = videos.get(i) else { break };
                let r = annotate_video(video, backend, retry);
                results.lock().expect("results lock").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by(|a, b| videos[a.0].video_id.cmp(&videos[b.0].video_id).then(a.0.cmp(&b.0)));
    results.into_iter().map(|(_, r)| r).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acceptance {
    /// Accepted records, provenance `auto_annotated`.
    pub dataset: Dataset,
    /// Every candidate with its final status, sorted by video then start.
    pub candidates: Vec<CandidateAnnotation>,
    pub lint: LintReport,
}

impl Acceptance {
    pub fn accepted(&self) -> usize {
        self.dataset.num_annotations()
    }

    pub fn rejected(&self) -> usize {
        self.candidates.len() - self.accepted()
    }

    pub fn error_rates(&self) -> &BTreeMap<ErrorKind, f64> {
        &self.lint.error_rates
    }
}

fn auto_id(video_id: &str, k: usize) -> String {
    format!("{video_id}#auto{k:03}")
}

/// Lints the candidates and keeps only the clean ones. Review flags do not
/// block acceptance; any error finding does.
pub fn accept_candidates(
    name: &str,
    mut candidates: Vec<CandidateAnnotation>,
    videos: &[VideoMeta],
    cfg: &LintConfig,
) -> Result<Acceptance, DatasetError> {
    candidates.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.start.total_cmp(&b.start))
            .then(a.end.total_cmp(&b.end))
            .then(a.query.cmp(&b.query))
    });
    let durations: BTreeMap<&str, &VideoMeta> = videos.iter().map(|v| (v.video_id.as_str(), v)).collect();

    let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
    let ids: Vec<String> = candidates
        .iter()
        .map(|c| {
            let k = counters.entry(c.video_id.as_str()).or_insert(0);
            *k += 1;
            auto_id(&c.video_id, *k)
        })
        .collect();
    let items: Vec<LintItem> = candidates
        .iter()
        .zip(&ids)
        .map(|(c, id)| LintItem {
            annotation_id: id.clone(),
            video_id: c.video_id.clone(),
            query: c.query.clone(),
            start: c.start,
            end: c.end,
            duration: durations.get(c.video_id.as_str()).map(|v| v.duration),
        })
        .collect();
    let lint = lint_items(&items, cfg);

    let mut records = Vec::new();
    let mut used_videos: BTreeMap<String, VideoMeta> = BTreeMap::new();
    for (c, id) in candidates.iter_mut().zip(&ids) {
        let failed = lint
            .findings
            .iter()
            .any(|f| &f.annotation_id == id && matches!(f.kind, FindingKind::Error(_)));
        let video = durations.get(c.video_id.as_str());
        let span = video.and_then(|v| {
            TimeSpan::new(c.start, c.end)
                .and_then(|s| if s.end() > v.duration { s.clamp_end(v.duration) } else { Ok(s) })
                .ok()
        });
        match (failed, video, span) {
            (false, Some(v), Some(span)) => {
                c.verification_status = VerificationStatus::LintPassed;
                used_videos.insert(v.video_id.clone(), (*v).clone());
                records.push(AnnotationRecord {
                    annotation_id: id.clone(),
                    video_id: c.video_id.clone(),
                    query: c.query.clone(),
                    span,
                    provenance: Provenance::AutoAnnotated,
                    error_flags: Default::default(),
                    extra: Default::default(),
                });
            }
            _ => c.verification_status = VerificationStatus::LintFailed,
        }
    }
    let dataset = Dataset::new(name, used_videos.into_values(), records)?;
    Ok(Acceptance {
        dataset,
        candidates,
        lint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, ScriptedBackend};
    use vtg_core::SourceDataset;

    fn video(id: &str, duration: f64) -> VideoMeta {
        VideoMeta {
            video_id: id.into(),
            duration,
            native_fps: None,
            source_dataset: SourceDataset::Other,
        }
    }

    fn cand(video: &str, query: &str, start: f64, end: f64) -> CandidateAnnotation {
        CandidateAnnotation {
            video_id: video.into(),
            query: query.into(),
            start,
            end,
            model_confidence: None,
            verification_status: VerificationStatus::Unverified,
        }
    }

    #[test]
    fn mock_two_events() {
        let backend = MockBackend {
            seed: 1,
            events_per_video: 2,
        };
        let out = annotate_video(&video("v", 80.0), &backend, &RetryPolicy::no_wait(1)).unwrap();
        assert_eq!(out.candidates.len(), 2);
        assert!(out
            .candidates
            .iter()
            .all(|c| c.verification_status == VerificationStatus::Unverified));
        assert!(!out.concentrated);
    }

    #[test]
    fn empty_response_warns() {
        let backend = ScriptedBackend::new();
        let out = annotate_video(&video("v", 80.0), &backend, &RetryPolicy::no_wait(1)).unwrap();
        assert!(out.candidates.is_empty());
        assert_eq!(out.warnings, vec!["v: empty response"]);
    }

    #[test]
    fn timeout_is_retried_then_surfaced() {
        let backend = ScriptedBackend::new().with("v", vec![Err(BackendError::Timeout)]);
        let err = annotate_video(&video("v", 80.0), &backend, &RetryPolicy::no_wait(3)).unwrap_err();
        assert_eq!(
            err,
            AnnotateError::Backend {
                video_id: "v".into(),
                attempts: 3,
                source: BackendError::Timeout
            }
        );
        assert_eq!(backend.calls("v"), 3);
    }

    #[test]
    fn overlapping_duplicate_events_fail_lint() {
        let backend = ScriptedBackend::new().with(
            "v",
            vec![Ok("10.0-20.0: a man opens the door\n12.0-21.0: A man opens the door.".into())],
        );
        let v = video("v", 60.0);
        let out = annotate_video(&v, &backend, &RetryPolicy::no_wait(1)).unwrap();
        let acc = accept_candidates("auto", out.candidates, &[v], &LintConfig::default()).unwrap();
        assert_eq!(acc.accepted(), 1);
        assert_eq!(acc.error_rates()[&ErrorKind::DuplicateQuery], 0.5);
    }

    #[test]
    fn clean_candidates_all_accepted() {
        let vids = [video("a", 60.0), video("b", 90.0)];
        let cands = vec![
            cand("b", "a dog chases a red ball", 5.0, 12.0),
            cand("a", "a woman pours coffee into a mug", 1.0, 6.0),
            cand("a", "the woman sits down at the table", 30.0, 41.0),
        ];
        let acc = accept_candidates("auto", cands, &vids, &LintConfig::default()).unwrap();
        assert_eq!(acc.accepted(), 3);
        assert!(acc
            .dataset
            .annotations()
            .iter()
            .all(|a| a.provenance == Provenance::AutoAnnotated));
        assert_eq!(acc.dataset.annotations()[0].annotation_id, "a#auto001");
        assert!(acc
            .candidates
            .iter()
            .all(|c| c.verification_status == VerificationStatus::LintPassed));
    }

    #[test]
    fn leakage_query_rejected() {
        let vids = [video("a", 60.0)];
        let cands = vec![cand("a", "the ending credits roll", 50.0, 59.0)];
        let acc = accept_candidates("auto", cands, &vids, &LintConfig::default()).unwrap();
        assert_eq!(acc.accepted(), 0);
        assert_eq!(acc.candidates[0].verification_status, VerificationStatus::LintFailed);
    }

    #[test]
    fn unknown_video_is_not_accepted() {
        let acc = accept_candidates("auto", vec![cand("zz", "a cat jumps", 1.0, 2.0)], &[], &LintConfig::default()).unwrap();
        assert_eq!(acc.accepted(), 0);
    }

    #[test]
    fn fan_out_is_sorted_and_complete() {
        let vids: Vec<_> = (0..25).rev().map(|i| video(&format!("v{i:02}"), 60.0 + i as f64)).collect();
        let backend = MockBackend::new(3);
        let serial = annotate_all(&vids, &backend, &RetryPolicy::no_wait(1), 1);
        let parallel = annotate_all(&vids, &backend, &RetryPolicy::no_wait(1), 6);
        assert_eq!(serial, parallel);
        let ids: Vec<_> = parallel.iter().map(|r| r.as_ref().unwrap().video_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(ids.len(), 25);
    }
}
