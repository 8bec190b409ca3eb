//! Prompt text and multi-event response parsing.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use vtg_core::parse::parse_clock;
use vtg_core::VideoMeta;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStatus {
    #[default]
    Unverified,
    LintPassed,
    LintFailed,
}

/// An event proposed by a backend. The span is kept as raw numbers so the
/// linter can judge it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnnotation {
    pub video_id: String,
    pub query: String,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_confidence: Option<f64>,
    #[serde(default)]
    pub verification_status: VerificationStatus,
}

/// Instruction sent to the backend for one video.
pub fn build_prompt(video: &VideoMeta) -> String {
    format!(
        "You are given a video that is {duration:.1} seconds long.\n\
         Identify distinct events in the video and make sure they are spread across \
         different parts of the video rather than clustered in one period.\n\
         For each event write one line in the form\n\
         start-end: description\n\
         where start and end are seconds with one decimal place (for example \
         \"12.5-18.0: a man opens the fridge\").\n\
         Each description must refer to exactly one moment in the video, must be \
         specific enough to tell it apart from other moments, and must not mention \
         where in the video it happens (no \"at the beginning\", \"ending credits\", etc.).\n\
         Output only the event lines.",
        duration = video.duration
    )
}

fn event_line_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = r"(\d{1,2}:\d{2}(?::\d{2})?(?:\.\d+)?|\d+(?:\.\d+)?)";
        Regex::new(&format!(
            r"(?i)^\s*(?:[-*•]\s*|\d+[.)]\s+)?\[?{t}\s*(?:s|sec|seconds)?\s*(?:-|–|—|to)\s*{t}\s*(?:s|sec|seconds)?\]?\s*[:|]\s*(.+?)\s*$"
        ))
        .expect("static regex compiles")
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedEvents {
    pub candidates: Vec<CandidateAnnotation>,
    /// Non-blank lines that did not look like events.
    pub skipped_lines: Vec<String>,
    /// All event midpoints sit within one quarter of the duration.
    pub concentrated: bool,
}

/// Reads `start-end: description` lines. Reversed endpoints are put in
/// order; everything else about the span is left for the linter.
pub fn parse_events(video: &VideoMeta, response: &str) -> ParsedEvents {
    let mut out = ParsedEvents::default();
    for line in response.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = event_line_re().captures(line).and_then(|c| {
            let a = parse_clock(&c[1])?;
            let b = parse_clock(&c[2])?;
            Some((a.min(b), a.max(b), c[3].trim().to_string()))
        });
        match parsed {
            Some((start, end, query)) if !query.is_empty() => out.candidates.push(CandidateAnnotation {
                video_id: video.video_id.clone(),
                query,
                start,
                end,
                model_confidence: None,
                verification_status: VerificationStatus::Unverified,
            }),
            _ => out.skipped_lines.push(line.trim().to_string()),
        }
    }
    out.concentrated = is_concentrated(&out.candidates, video.duration);
    out
}

/// True when there are at least two events and all of their midpoints fit
/// inside a window a quarter of the video long.
pub fn is_concentrated(candidates: &[CandidateAnnotation], duration: f64) -> bool {
    if candidates.len() < 2 {
        return false;
    }
    let mids = candidates.iter().map(|c| 0.5 * (c.start + c.end));
    let (lo, hi) = mids.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m), hi.max(m)));
    hi - lo <= duration / 4.0
}
