//! Extraction of a predicted [`TimeSpan`] from free-form model output.
//!
//! Pattern rules are tried in a fixed priority order. Within the first rule
//! that produces a valid pair, the last valid candidate in the text wins,
//! since models tend to restate their final answer last. When answer-tag
//! scoping is enabled and the text contains an `<answer>` region, only the
//! last such region is searched.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::{SpanError, TimeSpan};

pub const DEFAULT_FPS: f64 = 2.0;

/// Pattern rules, listed in default priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `12.5 to 30.0`, `12.5s - 30.0s`, `starts at 3 and ends at 7 seconds`.
    DecimalSeconds,
    /// `01:05 to 01:30`, `1:02:03 - 1:02:45`.
    Clock,
    /// `[12.5, 30.0]`, `(01:05, 01:30)`, `{"start": 12.5, "end": 30.0}`.
    Bracketed,
    /// `frames 10 to 25`, converted via the configured fps.
    FrameIndex,
}

impl Rule {
    pub const DEFAULT_ORDER: [Rule; 4] = [
        Rule::DecimalSeconds,
        Rule::Clock,
        Rule::Bracketed,
        Rule::FrameIndex,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Rule::DecimalSeconds => "decimal_seconds",
            Rule::Clock => "clock",
            Rule::Bracketed => "bracketed",
            Rule::FrameIndex => "frame_index",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseConfigError {
    #[error("fps must be a positive finite number (got {0})")]
    InvalidFps(f64),
    #[error("rule list must not be empty")]
    NoRules,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseConfig {
    fps: f64,
    rules: Vec<Rule>,
    answer_tag: bool,
}

impl ParseConfig {
    pub fn new(fps: f64, rules: Vec<Rule>, answer_tag: bool) -> Result<Self, ParseConfigError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(ParseConfigError::InvalidFps(fps));
        }
        if rules.is_empty() {
            return Err(ParseConfigError::NoRules);
        }
        Ok(Self {
            fps,
            rules,
            answer_tag,
        })
    }

    pub fn with_fps(fps: f64) -> Result<Self, ParseConfigError> {
        Self::new(fps, Rule::DEFAULT_ORDER.to_vec(), true)
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn answer_tag(&self) -> bool {
        self.answer_tag
    }
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self::with_fps(DEFAULT_FPS).expect("default fps is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    #[error("no rule matched")]
    NoRuleMatched,
    #[error("matched a pair with start equal to end")]
    ZeroLength,
    #[error("matched a pair with a negative endpoint")]
    Negative,
    #[error("malformed prediction record")]
    MalformedRecord,
}

impl ParseFailure {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParseFailure::NoRuleMatched => "no_rule_matched",
            ParseFailure::ZeroLength => "zero_length",
            ParseFailure::Negative => "negative",
            ParseFailure::MalformedRecord => "malformed_record",
        }
    }

    /// Specificity used to pick which failure to report when several rules
    /// matched without producing a valid pair.
    fn rank(&self) -> u8 {
        match self {
            ParseFailure::NoRuleMatched => 0,
            ParseFailure::ZeroLength => 1,
            ParseFailure::Negative => 2,
            ParseFailure::MalformedRecord => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSpan {
    pub span: TimeSpan,
    /// Names of the steps that produced the span, e.g.
    /// `["answer_tag", "clock", "last_of_2"]`.
    pub trace: Vec<String>,
}

struct Candidate {
    start: f64,
    end: f64,
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex compiles"))
}

const NUM: &str = r"\d+(?:\.\d+)?";
const UNIT: &str = r"(?:seconds|second|secs|sec|s)\b";
const SEP: &str = r"(?:-{1,2}|–|—|~|(?:to|and|until|till|through)\b)";
const CLOCK: &str = r"(?:\d{1,2}:)?\d{1,2}:\d{2}(?:\.\d+)?";

fn decimal_pair_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        &format!(r"(?i)({NUM})\s*(?:{UNIT})?\s*{SEP}\s*({NUM})(?:\s*{UNIT})?"),
    )
}

fn decimal_keyed_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        &format!(
            r"(?i)\b(?:start|begin)\w*\s+(?:at\s+|from\s+)?({NUM})(?:\s*{UNIT})?[^0-9:\n]{{0,40}}?\b(?:end|finish|stop)\w*\s+(?:at\s+)?({NUM})"
        ),
    )
}

fn clock_pair_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        &format!(r"(?i)({CLOCK})\s*(?:{SEP}|,)\s*({CLOCK})"),
    )
}

fn clock_keyed_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        &format!(
            r"(?i)\b(?:start|begin)\w*\s+(?:at\s+|from\s+)?({CLOCK})[^0-9\n]{{0,40}}?\b(?:end|finish|stop)\w*\s+(?:at\s+)?({CLOCK})"
        ),
    )
}

fn bracket_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        &format!(
            r#"(?i)[\[(]\s*"?(-?{CLOCK}|-?{NUM})"?\s*(?:{UNIT})?\s*,\s*"?(-?{CLOCK}|-?{NUM})"?\s*(?:{UNIT})?\s*[\])]"#
        ),
    )
}

fn json_keyed_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        &format!(
            r#"(?i)"?(?:start|start_time|begin)"?\s*[:=]\s*"?(-?{CLOCK}|-?{NUM})"?\s*[,;]\s*"?(?:end|end_time)"?\s*[:=]\s*"?(-?{CLOCK}|-?{NUM})"?"#
        ),
    )
}

fn frame_pair_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        &format!(
            r"(?i)\bframes?\s*(?:#|no\.?|index\s+)?\s*(\d+)\s*{SEP}\s*(?:frames?\s*(?:#|no\.?|index\s+)?\s*)?(\d+)\b"
        ),
    )
}

fn answer_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, r"(?is)<answer>(.*?)</answer>")
}

fn open_answer_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, r"(?is)<answer>(.*)$")
}

/// Content of the last `<answer>` region, if any. An unclosed tag extends to
/// the end of the text.
pub fn answer_region(text: &str) -> Option<&str> {
    if let Some(c) = answer_re().captures_iter(text).last() {
        return c.get(1).map(|m| m.as_str());
    }
    open_answer_re()
        .captures(text)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
}

/// Seconds value of `SS`, `MM:SS` or `HH:MM:SS` (fractional seconds allowed).
pub fn parse_clock(s: &str) -> Option<f64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let parts: Vec<&str> = body.split(':').collect();
    let value = match parts.as_slice() {
        [sec] => sec.parse::<f64>().ok()?,
        [min, sec] => {
            let sec: f64 = sec.parse().ok()?;
            if sec >= 60.0 {
                return None;
            }
            min.parse::<u32>().ok()? as f64 * 60.0 + sec
        }
        [hour, min, sec] => {
            let min: u32 = min.parse().ok()?;
            let sec: f64 = sec.parse().ok()?;
            if min >= 60 || sec >= 60.0 {
                return None;
            }
            hour.parse::<u32>().ok()? as f64 * 3600.0 + min as f64 * 60.0 + sec
        }
        _ => return None,
    };
    Some(if neg { -value } else { value })
}

/// A match must not sit inside a longer number or clock string.
fn boundary_ok(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    if matches!(before, Some(c) if c.is_ascii_alphanumeric() || c == ':' || c == '.') {
        return false;
    }
    let mut after = text[end..].chars();
    match after.next() {
        Some(':') => false,
        Some(c) if c.is_ascii_digit() => false,
        Some('.') => !matches!(after.next(), Some(c) if c.is_ascii_digit()),
        _ => true,
    }
}

fn preceded_by_frame_word(text: &str, start: usize) -> bool {
    let head = text[..start].trim_end_matches(|c: char| c.is_whitespace() || c == '#');
    let word: String = head
        .chars()
        .rev()
        .take_while(|c| c.is_alphabetic())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    matches!(
        word.to_ascii_lowercase().as_str(),
        "frame" | "frames" | "index" | "indices" | "no"
    )
}

fn pairs_from(
    regex: &Regex,
    text: &str,
    accept: impl Fn(&Captures<'_>) -> bool,
    value: impl Fn(&str) -> Option<f64>,
    out: &mut Vec<(usize, Candidate)>,
) {
    for caps in regex.captures_iter(text) {
        let whole = caps.get(0).expect("group 0 always present");
        if !accept(&caps) {
            continue;
        }
        let (Some(a), Some(b)) = (
            caps.get(1).and_then(|m| value(m.as_str())),
            caps.get(2).and_then(|m| value(m.as_str())),
        ) else {
            continue;
        };
        out.push((whole.start(), Candidate { start: a, end: b }));
    }
}

fn candidates(rule: Rule, text: &str, fps: f64) -> Vec<Candidate> {
    let mut found: Vec<(usize, Candidate)> = Vec::new();
    match rule {
        Rule::DecimalSeconds => {
            pairs_from(
                decimal_pair_re(),
                text,
                |c| {
                    let m = c.get(0).unwrap();
                    boundary_ok(text, m.start(), m.end())
                        && !preceded_by_frame_word(text, m.start())
                },
                |s| s.parse().ok(),
                &mut found,
            );
            pairs_from(
                decimal_keyed_re(),
                text,
                |c| {
                    let m = c.get(0).unwrap();
                    boundary_ok(text, m.start(), m.end())
                },
                |s| s.parse().ok(),
                &mut found,
            );
        }
        Rule::Clock => {
            for regex in [clock_pair_re(), clock_keyed_re()] {
                pairs_from(
                    regex,
                    text,
                    |c| {
                        let m = c.get(0).unwrap();
                        boundary_ok(text, m.start(), m.end())
                    },
                    parse_clock,
                    &mut found,
                );
            }
        }
        Rule::Bracketed => {
            for regex in [bracket_re(), json_keyed_re()] {
                pairs_from(regex, text, |_| true, parse_clock, &mut found);
            }
        }
        Rule::FrameIndex => {
            pairs_from(
                frame_pair_re(),
                text,
                |_| true,
                |s| s.parse::<u64>().ok().map(|i| i as f64 / fps),
                &mut found,
            );
        }
    }
    found.sort_by_key(|(pos, _)| *pos);
    found.into_iter().map(|(_, c)| c).collect()
}

fn validate(c: &Candidate) -> Result<(TimeSpan, bool), ParseFailure> {
    if c.start < 0.0 || c.end < 0.0 {
        return Err(ParseFailure::Negative);
    }
    TimeSpan::from_unordered(c.start, c.end).map_err(|e| match e {
        SpanError::ZeroLength(_) => ParseFailure::ZeroLength,
        SpanError::Negative(_) => ParseFailure::Negative,
        _ => ParseFailure::NoRuleMatched,
    })
}

/// Extracts a span from `raw_text` using the configured rules.
pub fn parse_prediction(raw_text: &str, cfg: &ParseConfig) -> Result<ParsedSpan, ParseFailure> {
    let mut trace = Vec::new();
    let mut scope = raw_text;
    if cfg.answer_tag {
        if let Some(region) = answer_region(raw_text) {
            scope = region;
            trace.push("answer_tag".to_string());
        }
    }

    let mut failure = ParseFailure::NoRuleMatched;
    for &rule in &cfg.rules {
        let cands = candidates(rule, scope, cfg.fps);
        if cands.is_empty() {
            continue;
        }
        let total = cands.len();
        for (rev_idx, c) in cands.iter().rev().enumerate() {
            match validate(c) {
                Ok((span, swapped)) => {
                    trace.push(rule.name().to_string());
                    if total > 1 {
                        trace.push(format!("last_of_{total}"));
                    }
                    if rev_idx > 0 {
                        trace.push(format!("skipped_{rev_idx}_invalid"));
                    }
                    if swapped {
                        trace.push("swapped".to_string());
                    }
                    return Ok(ParsedSpan { span, trace });
                }
                Err(f) => {
                    if f.rank() > failure.rank() {
                        failure = f;
                    }
                }
            }
        }
    }
    Err(failure)
}

/// One prediction line, with its parse outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    /// 1-based line in the source file.
    pub line: usize,
    pub annotation_id: String,
    pub raw_text: String,
    pub parsed: Result<TimeSpan, ParseFailure>,
    pub parser_trace: Vec<String>,
}

impl PredictionRecord {
    pub fn span(&self) -> Option<TimeSpan> {
        self.parsed.ok()
    }

    pub fn to_wire(&self) -> PredictionWire {
        PredictionWire {
            annotation_id: self.annotation_id.clone(),
            raw_text: self.raw_text.clone(),
            span: self.parsed.ok().map(|s| [s.start(), s.end()]),
            failure: self.parsed.err(),
            trace: self.parser_trace.clone(),
        }
    }
}

/// JSONL form of a prediction. Input files need `annotation_id` and
/// `raw_text`; `span` short-circuits parsing when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionWire {
    pub annotation_id: String,
    #[serde(default)]
    pub raw_text: String,
    #[serde(default)]
    pub span: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<ParseFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<String>,
}

/// Turns one prediction line into a record. Blank lines parse as empty text.
pub fn parse_line(line_no: usize, line: &str, cfg: &ParseConfig) -> PredictionRecord {
    if line.trim().is_empty() {
        let parsed = parse_prediction("", cfg);
        return PredictionRecord {
            line: line_no,
            annotation_id: String::new(),
            raw_text: String::new(),
            parsed: parsed.as_ref().map(|p| p.span).map_err(|e| *e),
            parser_trace: parsed.map(|p| p.trace).unwrap_or_default(),
        };
    }
    let wire: PredictionWire = match serde_json::from_str(line) {
        Ok(w) => w,
        Err(_) => {
            return PredictionRecord {
                line: line_no,
                annotation_id: String::new(),
                raw_text: line.to_string(),
                parsed: Err(ParseFailure::MalformedRecord),
                parser_trace: Vec::new(),
            }
        }
    };
    if let Some([s, e]) = wire.span {
        let parsed = TimeSpan::from_unordered(s, e);
        if let Ok((span, swapped)) = parsed {
            let mut trace = vec!["provided".to_string()];
            if swapped {
                trace.push("swapped".to_string());
            }
            return PredictionRecord {
                line: line_no,
                annotation_id: wire.annotation_id,
                raw_text: wire.raw_text,
                parsed: Ok(span),
                parser_trace: trace,
            };
        }
    }
    let parsed = parse_prediction(&wire.raw_text, cfg);
    PredictionRecord {
        line: line_no,
        annotation_id: wire.annotation_id,
        raw_text: wire.raw_text,
        parsed: parsed.as_ref().map(|p| p.span).map_err(|e| *e),
        parser_trace: parsed.map(|p| p.trace).unwrap_or_default(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutput {
    pub records: Vec<PredictionRecord>,
    /// Failure counts keyed by reason name.
    pub failures: BTreeMap<String, usize>,
}

impl BatchOutput {
    pub fn failed(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.records.iter().filter(|r| r.parsed.is_err())
    }
}

/// Parses prediction lines in order.
pub fn parse_batch<'a>(lines: impl IntoIterator<Item = &'a str>, cfg: &ParseConfig) -> BatchOutput {
    let mut out = BatchOutput::default();
    for (i, line) in lines.into_iter().enumerate() {
        let rec = parse_line(i + 1, line, cfg);
        if let Err(f) = rec.parsed {
            *out.failures.entry(f.as_str().to_string()).or_insert(0) += 1;
        }
        out.records.push(rec);
    }
    out
}

pub fn parse_reader(reader: impl BufRead, cfg: &ParseConfig) -> std::io::Result<BatchOutput> {
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    Ok(parse_batch(lines.iter().map(String::as_str), cfg))
}

/// Textual layouts a span can be rendered in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanFormat {
    DecimalSeconds,
    Clock,
    Bracketed,
    FrameIndex,
}

impl SpanFormat {
    pub const ALL: [SpanFormat; 4] = [
        SpanFormat::DecimalSeconds,
        SpanFormat::Clock,
        SpanFormat::Bracketed,
        SpanFormat::FrameIndex,
    ];
}

/// `MM:SS`, or `HH:MM:SS` from one hour on. Rounds to whole seconds.
pub fn format_clock(seconds: f64) -> String {
    let total = seconds.round().max(0.0) as u64;
    let (h, m, s) = (total / 3600, (total / 60) % 60, total % 60);
    if h > 0 {
        format!("{h:02}:{m:02}:{s:02}")
    } else {
        format!("{m:02}:{s:02}")
    }
}

pub fn render_span(span: &TimeSpan, format: SpanFormat, fps: f64) -> String {
    match format {
        SpanFormat::DecimalSeconds => format!("{:.1}s - {:.1}s", span.start(), span.end()),
        SpanFormat::Clock => format!(
            "From {} to {}.",
            format_clock(span.start()),
            format_clock(span.end())
        ),
        SpanFormat::Bracketed => format!("[{:.1}, {:.1}]", span.start(), span.end()),
        SpanFormat::FrameIndex => format!(
            "frames {} to {}",
            (span.start() * fps).round() as u64,
            (span.end() * fps).round() as u64
        ),
    }
}

impl fmt::Display for ParsedSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} via {}", self.span, self.trace.join(">"))
    }
}
