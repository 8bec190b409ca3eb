//! Mechanical dataset quality checks.
//!
//! Only criteria that can be decided from the annotation file are asserted
//! as [`ErrorKind`]s: duplicate queries within a video, lexicon-based
//! temporal leakage, and malformed or out-of-bounds segments. Criteria that
//! need someone to watch the video (event existence, query clarity,
//! boundary precision, exhaustiveness) are raised as [`ReviewFlag`]s for
//! the audit queue and never counted as errors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, ErrorKind, Loaded, DEFAULT_BOUNDS_TOLERANCE};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_LEAKAGE_LEXICON: [&str; 5] = [
    "ending credits",
    "beginning of the video",
    "end of the video",
    "intro",
    "outro",
];

/// Tokens dropped before comparing queries.
const ARTICLES: [&str; 3] = ["a", "an", "the"];

const FUNCTION_WORDS: [&str; 24] = [
    "a", "an", "the", "of", "in", "on", "at", "to", "and", "or", "is", "are", "was", "were",
    "it", "its", "this", "that", "with", "for", "by", "from", "up", "then",
];

const NEGATIONS: [&str; 6] = ["not", "no", "never", "without", "nobody", "nothing"];

const REPETITION_CUES: [&str; 8] = [
    "again",
    "another",
    "repeatedly",
    "continues",
    "continue",
    "keeps",
    "repeat",
    "repeats",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LintConfig {
    pub near_dup_threshold: f64,
    pub leakage_lexicon: Vec<String>,
    pub bounds_tolerance: f64,
}

impl Default for LintConfig {
    fn default() -> Self {
        Self {
            near_dup_threshold: 0.9,
            leakage_lexicon: DEFAULT_LEAKAGE_LEXICON.iter().map(|s| s.to_string()).collect(),
            bounds_tolerance: DEFAULT_BOUNDS_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LintConfigError {
    #[error("near_dup_threshold must lie in [0, 1] (got {0})")]
    Threshold(f64),
    #[error("bounds_tolerance must be a non-negative number (got {0})")]
    Tolerance(f64),
    #[error("leakage_lexicon must contain at least one phrase")]
    EmptyLexicon,
    #[error("invalid lint config: {0}")]
    Syntax(String),
}

impl LintConfig {
    pub fn validate(&self) -> Result<(), LintConfigError> {
        if !(0.0..=1.0).contains(&self.near_dup_threshold) {
            return Err(LintConfigError::Threshold(self.near_dup_threshold));
        }
        if !(self.bounds_tolerance.is_finite() && self.bounds_tolerance >= 0.0) {
            return Err(LintConfigError::Tolerance(self.bounds_tolerance));
        }
        if self.leakage_lexicon.iter().all(|p| tokens(p).is_empty()) {
            return Err(LintConfigError::EmptyLexicon);
        }
        Ok(())
    }

    /// Parses `key = value` config text. Missing keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, LintConfigError> {
        let cfg: LintConfig =
            toml::from_str(text).map_err(|e| LintConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewFlag {
    Existence,
    Clarity,
    Precision,
    Exhaustiveness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Error(ErrorKind),
    Review(ReviewFlag),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Finding {
    pub annotation_id: String,
    pub video_id: String,
    pub kind: FindingKind,
    pub rule_id: String,
    pub detail: String,
}

/// An annotation as seen by the linter. Fields are unvalidated so rejected
/// loader lines and model candidates can be checked too.
#[derive(Debug, Clone, PartialEq)]
pub struct LintItem {
    pub annotation_id: String,
    pub video_id: String,
    pub query: String,
    pub start: f64,
    pub end: f64,
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub video_id: String,
    pub records: usize,
    pub findings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LintReport {
    pub schema_version: u32,
    pub total: usize,
    pub findings: Vec<Finding>,
    pub error_rates: BTreeMap<ErrorKind, f64>,
    pub review_counts: BTreeMap<ReviewFlag, usize>,
    pub groups: Vec<GroupSummary>,
}

impl LintReport {
    pub fn errors_for<'a>(&'a self, annotation_id: &'a str) -> impl Iterator<Item = ErrorKind> + 'a {
        self.findings.iter().filter_map(move |f| match f.kind {
            FindingKind::Error(k) if f.annotation_id == annotation_id => Some(k),
            _ => None,
        })
    }

    pub fn has_errors(&self, annotation_id: &str) -> bool {
        self.errors_for(annotation_id).next().is_some()
    }
}

/// Lower-cased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Tokens used for duplicate detection: case-folded, punctuation stripped,
/// articles removed.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !ARTICLES.contains(&t.as_str()))
        .collect()
}

/// Multiset Jaccard similarity of two token lists.
pub fn multiset_jaccard(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for t in a {
        counts.entry(t).or_default().0 += 1;
    }
    for t in b {
        counts.entry(t).or_default().1 += 1;
    }
    let (inter, union) = counts
        .values()
        .fold((0, 0), |(i, u), &(x, y)| (i + x.min(y), u + x.max(y)));
    inter as f64 / union as f64
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

fn finding(item: &LintItem, kind: FindingKind, rule_id: &str, detail: String) -> Finding {
    Finding {
        annotation_id: item.annotation_id.clone(),
        video_id: item.video_id.clone(),
        kind,
        rule_id: rule_id.to_string(),
        detail,
    }
}

fn segment_findings(item: &LintItem, cfg: &LintConfig, out: &mut Vec<Finding>) {
    let err = FindingKind::Error(ErrorKind::InaccurateSegment);
    let (s, e) = (item.start, item.end);
    if !s.is_finite() || !e.is_finite() {
        out.push(finding(item, err, "seg-non-finite", format!("span ({s}, {e})")));
        return;
    }
    if s < 0.0 {
        out.push(finding(item, err, "seg-negative", format!("start {s} < 0")));
    }
    if s == e {
        out.push(finding(item, err, "seg-zero-length", format!("span ({s}, {e}) has zero length")));
    } else if s > e {
        out.push(finding(item, err, "seg-reversed", format!("start {s} > end {e}")));
    }
    if let Some(d) = item.duration {
        if e.max(s) > d + cfg.bounds_tolerance {
            out.push(finding(
                item,
                err,
                "seg-out-of-bounds",
                format!("span ends at {} beyond duration {d}", e.max(s)),
            ));
        } else if e > d {
            out.push(finding(
                item,
                FindingKind::Review(ReviewFlag::Precision),
                "review-overshoot",
                format!("end {e} overshoots duration {d} within tolerance"),
            ));
        } else if s < e && (e - s) >= 0.9 * d {
            out.push(finding(
                item,
                FindingKind::Review(ReviewFlag::Precision),
                "review-whole-video",
                format!("span covers {:.0}% of the video", 100.0 * (e - s) / d),
            ));
        }
    }
}

fn query_findings(item: &LintItem, lexicon: &[(String, Vec<String>)], out: &mut Vec<Finding>) {
    let toks = tokens(&item.query);
    let content = toks
        .iter()
        .filter(|t| !FUNCTION_WORDS.contains(&t.as_str()))
        .count();
    for (phrase, ptoks) in lexicon {
        if contains_phrase(&toks, ptoks) {
            out.push(finding(
                item,
                FindingKind::Error(ErrorKind::InfoLeakage),
                "leak-lexicon",
                format!("query contains leakage phrase '{phrase}'"),
            ));
        }
    }
    if content < 3 {
        out.push(finding(
            item,
            FindingKind::Review(ReviewFlag::Clarity),
            "review-short-query",
            format!("query has {content} content words"),
        ));
    }
    if let Some(neg) = toks.iter().find(|t| NEGATIONS.contains(&t.as_str())) {
        out.push(finding(
            item,
            FindingKind::Review(ReviewFlag::Existence),
            "review-negation",
            format!("negated event ('{neg}') needs visual confirmation"),
        ));
    }
    if let Some(cue) = toks.iter().find(|t| REPETITION_CUES.contains(&t.as_str())) {
        out.push(finding(
            item,
            FindingKind::Review(ReviewFlag::Exhaustiveness),
            "review-repetition-cue",
            format!("repetition cue '{cue}' suggests other matching segments"),
        ));
    }
}

/// For every record, the duplicates among records of the same video whose
/// annotation id sorts before it. The smallest id of each duplicate group is
/// never flagged.
fn duplicate_findings(group: &[&LintItem], threshold: f64, out: &mut Vec<Finding>) {
    let mut sorted: Vec<&LintItem> = group.to_vec();
    sorted.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));
    let normalized: Vec<Vec<String>> = sorted.iter().map(|i| normalized_tokens(&i.query)).collect();
    for j in 0..sorted.len() {
        let mut exact = Vec::new();
        let mut near = Vec::new();
        for i in 0..j {
            if sorted[i].annotation_id == sorted[j].annotation_id {
                continue;
            }
            if normalized[i] == normalized[j] {
                exact.push(sorted[i].annotation_id.as_str());
            } else {
                let sim = multiset_jaccard(&normalized[i], &normalized[j]);
                if sim >= threshold {
                    near.push((sorted[i].annotation_id.as_str(), sim));
                }
            }
        }
        if !exact.is_empty() {
            out.push(finding(
                sorted[j],
                FindingKind::Error(ErrorKind::DuplicateQuery),
                "dup-exact",
                format!("same query as {}", exact.join(", ")),
            ));
        } else if !near.is_empty() {
            let detail = near
                .iter()
                .map(|(id, s)| format!("{id} ({s:.3})"))
                .collect::<Vec<_>>()
                .join(", ");
            out.push(finding(
                sorted[j],
                FindingKind::Error(ErrorKind::DuplicateQuery),
                "dup-near",
                format!("near-duplicate of {detail}"),
            ));
        }
    }
}

/// Lints arbitrary items; the report's `total` is `items.len()`.
pub fn lint_items(items: &[LintItem], cfg: &LintConfig) -> LintReport {
    let lexicon: Vec<(String, Vec<String>)> = cfg
        .leakage_lexicon
        .iter()
        .map(|p| (p.clone(), tokens(p)))
        .filter(|(_, t)| !t.is_empty())
        .collect();

    let mut groups: BTreeMap<&str, Vec<&LintItem>> = BTreeMap::new();
    for item in items {
        groups.entry(item.video_id.as_str()).or_default().push(item);
    }

    let mut findings = Vec::new();
    let mut summaries = Vec::with_capacity(groups.len());
    for (video_id, group) in &groups {
        let before = findings.len();
        for item in group {
            segment_findings(item, cfg, &mut findings);
            query_findings(item, &lexicon, &mut findings);
        }
        duplicate_findings(group, cfg.near_dup_threshold, &mut findings);
        summaries.push(GroupSummary {
            video_id: video_id.to_string(),
            records: group.len(),
            findings: findings.len() - before,
        });
    }
    findings.sort();

    let mut review_counts = BTreeMap::new();
    for f in &findings {
        if let FindingKind::Review(r) = f.kind {
            *review_counts.entry(r).or_insert(0) += 1;
        }
    }
    let error_rates = error_rates_from(
        items.len(),
        findings.iter().filter_map(|f| match f.kind {
            FindingKind::Error(k) => Some((f.annotation_id.as_str(), k)),
            FindingKind::Review(_) => None,
        }),
    );
    LintReport {
        schema_version: REPORT_SCHEMA_VERSION,
        total: items.len(),
        findings,
        error_rates,
        review_counts,
        groups: summaries,
    }
}

pub fn dataset_items(d: &Dataset) -> Vec<LintItem> {
    d.annotations()
        .iter()
        .map(|a| LintItem {
            annotation_id: a.annotation_id.clone(),
            video_id: a.video_id.clone(),
            query: a.query.clone(),
            start: a.span.start(),
            end: a.span.end(),
            duration: d.video(&a.video_id).map(|v| v.duration),
        })
        .collect()
}

pub fn lint_dataset(d: &Dataset, cfg: &LintConfig) -> LintReport {
    lint_items(&dataset_items(d), cfg)
}

/// Lints a loaded file, including the lines the loader rejected.
pub fn lint_loaded(loaded: &Loaded, cfg: &LintConfig) -> LintReport {
    let mut items = dataset_items(&loaded.dataset);
    items.extend(loaded.report.rejections.iter().map(|r| LintItem {
        annotation_id: r.record.annotation_id.clone(),
        video_id: r.record.video_id.clone(),
        query: r.record.query.clone(),
        start: r.record.start,
        end: r.record.end,
        duration: Some(r.record.duration),
    }));
    lint_items(&items, cfg)
}

/// Rate of each error kind over `total` annotations. An annotation counts at
/// most once per kind.
pub fn error_rates_from<'a>(
    total: usize,
    flags: impl IntoIterator<Item = (&'a str, ErrorKind)>,
) -> BTreeMap<ErrorKind, f64> {
    let mut flagged: BTreeMap<ErrorKind, BTreeSet<&str>> = BTreeMap::new();
    for (id, kind) in flags {
        flagged.entry(kind).or_default().insert(id);
    }
    ErrorKind::ALL
        .iter()
        .map(|&k| {
            let n = flagged.get(&k).map_or(0, |s| s.len());
            let rate = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            (k, rate)
        })
        .collect()
}

pub fn error_rates(report: &LintReport) -> BTreeMap<ErrorKind, f64> {
    report.error_rates.clone()
}
