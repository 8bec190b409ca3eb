//! Annotation datasets: domain records, JSONL loading with a rejection
//! report, canonical serialization and summary statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::span::{SpanError, TimeSpan};

/// Default amount by which a span may overshoot the video duration before it
/// is rejected rather than clamped.
pub const DEFAULT_BOUNDS_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceDataset {
    Charades,
    Activitynet,
    Qvhighlights,
    Other,
}

impl SourceDataset {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceDataset::Charades => "charades",
            SourceDataset::Activitynet => "activitynet",
            SourceDataset::Qvhighlights => "qvhighlights",
            SourceDataset::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Original,
    HumanRefined,
    AutoAnnotated,
}

/// Annotation error taxonomy. Each flag instance carries exactly one kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    MultipleOccurrences,
    NoOccurrence,
    DuplicateQuery,
    UnclearQuery,
    InaccurateSegment,
    InfoLeakage,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 6] = [
        ErrorKind::MultipleOccurrences,
        ErrorKind::NoOccurrence,
        ErrorKind::DuplicateQuery,
        ErrorKind::UnclearQuery,
        ErrorKind::InaccurateSegment,
        ErrorKind::InfoLeakage,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorKind::MultipleOccurrences => "multiple_occurrences",
            ErrorKind::NoOccurrence => "no_occurrence",
            ErrorKind::DuplicateQuery => "duplicate_query",
            ErrorKind::UnclearQuery => "unclear_query",
            ErrorKind::InaccurateSegment => "inaccurate_segment",
            ErrorKind::InfoLeakage => "info_leakage",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_fps: Option<f64>,
    #[serde(default = "default_source")]
    pub source_dataset: SourceDataset,
}

fn default_source() -> SourceDataset {
    SourceDataset::Other
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub annotation_id: String,
    pub video_id: String,
    pub query: String,
    pub span: TimeSpan,
    pub provenance: Provenance,
    pub error_flags: BTreeSet<ErrorKind>,
    /// Fields not understood by the loader, written back verbatim.
    pub extra: Map<String, Value>,
}

/// Collapses runs of whitespace and trims.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown schema '{0}' (expected native, charades, activitynet or qvhighlights)")]
    UnknownSchema(String),
    #[error("line {line}: duplicate annotation_id '{annotation_id}'")]
    DuplicateAnnotationId { line: usize, annotation_id: String },
    #[error("annotation '{annotation_id}' references unknown video '{video_id}'")]
    UnknownVideo { annotation_id: String, video_id: String },
    #[error("duplicate video_id '{0}'")]
    DuplicateVideo(String),
    #[error("invalid video '{video_id}': {reason}")]
    InvalidVideo { video_id: String, reason: String },
    #[error("annotation '{annotation_id}': {reason}")]
    InvalidAnnotation { annotation_id: String, reason: String },
}

/// A named collection of videos and their annotations.
///
/// Construction enforces the cross-record invariants: every annotation
/// resolves to a video and annotation ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    videos: BTreeMap<String, VideoMeta>,
    annotations: Vec<AnnotationRecord>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        videos: impl IntoIterator<Item = VideoMeta>,
        annotations: Vec<AnnotationRecord>,
    ) -> Result<Self, DatasetError> {
        let mut video_map = BTreeMap::new();
        for v in videos {
            if v.video_id.is_empty() {
                return Err(DatasetError::InvalidVideo {
                    video_id: v.video_id,
                    reason: "empty video_id".into(),
                });
            }
            if !(v.duration.is_finite() && v.duration > 0.0) {
                return Err(DatasetError::InvalidVideo {
                    reason: format!("duration {} is not a positive finite number", v.duration),
                    video_id: v.video_id,
                });
            }
            if video_map.contains_key(&v.video_id) {
                return Err(DatasetError::DuplicateVideo(v.video_id));
            }
            video_map.insert(v.video_id.clone(), v);
        }
        let mut index = HashMap::with_capacity(annotations.len());
        for (i, a) in annotations.iter().enumerate() {
            let Some(video) = video_map.get(&a.video_id) else {
                return Err(DatasetError::UnknownVideo {
                    annotation_id: a.annotation_id.clone(),
                    video_id: a.video_id.clone(),
                });
            };
            if a.span.end() > video.duration + DEFAULT_BOUNDS_TOLERANCE {
                return Err(DatasetError::InvalidAnnotation {
                    annotation_id: a.annotation_id.clone(),
                    reason: format!(
                        "span end {} exceeds video duration {}",
                        a.span.end(),
                        video.duration
                    ),
                });
            }
            if normalize_whitespace(&a.query).is_empty() {
                return Err(DatasetError::InvalidAnnotation {
                    annotation_id: a.annotation_id.clone(),
                    reason: "empty query".into(),
                });
            }
            if index.insert(a.annotation_id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateAnnotationId {
                    line: i + 1,
                    annotation_id: a.annotation_id.clone(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            videos: video_map,
            annotations,
            index,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self::new(name, Vec::new(), Vec::new()).expect("empty dataset is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn videos(&self) -> impl Iterator<Item = &VideoMeta> {
        self.videos.values()
    }

    pub fn video(&self, video_id: &str) -> Option<&VideoMeta> {
        self.videos.get(video_id)
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.annotations
    }

    pub fn annotation(&self, annotation_id: &str) -> Option<&AnnotationRecord> {
        self.index.get(annotation_id).map(|&i| &self.annotations[i])
    }

    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn num_annotations(&self) -> usize {
        self.annotations.len()
    }

    /// Annotations grouped per video, in dataset order within each group.
    pub fn by_video(&self) -> BTreeMap<&str, Vec<&AnnotationRecord>> {
        let mut groups: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
        for a in &self.annotations {
            groups.entry(a.video_id.as_str()).or_default().push(a);
        }
        groups
    }

    pub fn into_parts(self) -> (String, Vec<VideoMeta>, Vec<AnnotationRecord>) {
        (
            self.name,
            self.videos.into_values().collect(),
            self.annotations,
        )
    }
}

/// Input layout of an annotation file. All schemas share the JSONL line
/// format; the source-specific ones tag videos with their benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Native,
    Charades,
    Activitynet,
    Qvhighlights,
}

impl Schema {
    fn default_source(self) -> SourceDataset {
        match self {
            Schema::Native => SourceDataset::Other,
            Schema::Charades => SourceDataset::Charades,
            Schema::Activitynet => SourceDataset::Activitynet,
            Schema::Qvhighlights => SourceDataset::Qvhighlights,
        }
    }
}

impl FromStr for Schema {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "native" | "jsonl" => Ok(Schema::Native),
            "charades" => Ok(Schema::Charades),
            "activitynet" => Ok(Schema::Activitynet),
            "qvhighlights" => Ok(Schema::Qvhighlights),
            _ => Err(DatasetError::UnknownSchema(s.to_string())),
        }
    }
}

/// One line of an annotation file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireRecord {
    video_id: String,
    duration: f64,
    query: String,
    span: [f64; 2],
    annotation_id: String,
    #[serde(default)]
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<SourceDataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    native_fps: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    error_flags: BTreeSet<ErrorKind>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Unvalidated annotation fields, kept for rejected lines so downstream
/// linting can still report on them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawAnnotation {
    pub annotation_id: String,
    pub video_id: String,
    pub query: String,
    pub start: f64,
    pub end: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    InvalidSpan { message: String },
    OutOfBounds { end: f64, duration: f64 },
    EmptyQuery,
    EmptyVideoId,
    InvalidDuration { duration: f64 },
    DurationConflict { existing: f64, found: f64 },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::InvalidSpan { message } => write!(f, "invalid span: {message}"),
            RejectReason::OutOfBounds { end, duration } => {
                write!(f, "span end {end} exceeds duration {duration} beyond tolerance")
            }
            RejectReason::EmptyQuery => f.write_str("empty query"),
            RejectReason::EmptyVideoId => f.write_str("empty video_id"),
            RejectReason::InvalidDuration { duration } => write!(f, "invalid duration {duration}"),
            RejectReason::DurationConflict { existing, found } => {
                write!(f, "duration {found} conflicts with earlier {existing}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub line: usize,
    #[serde(flatten)]
    pub reason: RejectReason,
    pub record: RawAnnotation,
}

/// A span end clamped back onto the video duration during loading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClampNote {
    pub line: usize,
    pub annotation_id: String,
    pub original_end: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub rejections: Vec<Rejection>,
    pub clamped: Vec<ClampNote>,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub report: LoadReport,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub schema: Schema,
    pub bounds_tolerance: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            schema: Schema::Native,
            bounds_tolerance: DEFAULT_BOUNDS_TOLERANCE,
        }
    }
}

/// Loads an annotation file. The dataset is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>, schema: Schema) -> Result<Loaded, DatasetError> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = fs::File::open(path)?;
    read_dataset(
        name,
        BufReader::new(file),
        LoadOptions {
            schema,
            ..LoadOptions::default()
        },
    )
}

pub fn read_dataset(
    name: impl Into<String>,
    reader: impl BufRead,
    opts: LoadOptions,
) -> Result<Loaded, DatasetError> {
    let mut videos: BTreeMap<String, VideoMeta> = BTreeMap::new();
    let mut annotations = Vec::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    let mut report = LoadReport::default();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if seen_ids.insert(wire.annotation_id.clone(), line_no).is_some() {
            return Err(DatasetError::DuplicateAnnotationId {
                line: line_no,
                annotation_id: wire.annotation_id,
            });
        }
        let raw = RawAnnotation {
            annotation_id: wire.annotation_id.clone(),
            video_id: wire.video_id.clone(),
            query: wire.query.clone(),
            start: wire.span[0],
            end: wire.span[1],
            duration: wire.duration,
        };
        let reject = |reason| Rejection {
            line: line_no,
            reason,
            record: raw.clone(),
        };

        if wire.video_id.is_empty() {
            report.rejections.push(reject(RejectReason::EmptyVideoId));
            continue;
        }
        if !(wire.duration.is_finite() && wire.duration > 0.0) {
            report.rejections.push(reject(RejectReason::InvalidDuration {
                duration: wire.duration,
            }));
            continue;
        }
        if let Some(existing) = videos.get(&wire.video_id) {
            if (existing.duration - wire.duration).abs() > 1e-6 {
                report.rejections.push(reject(RejectReason::DurationConflict {
                    existing: existing.duration,
                    found: wire.duration,
                }));
                continue;
            }
        }
        if normalize_whitespace(&wire.query).is_empty() {
            report.rejections.push(reject(RejectReason::EmptyQuery));
            continue;
        }
        let mut span = match TimeSpan::new(wire.span[0], wire.span[1]) {
            Ok(s) => s,
            Err(e) => {
                report.rejections.push(reject(RejectReason::InvalidSpan {
                    message: e.to_string(),
                }));
                continue;
            }
        };
        if span.end() > wire.duration {
            if span.end() > wire.duration + opts.bounds_tolerance {
                report.rejections.push(reject(RejectReason::OutOfBounds {
                    end: span.end(),
                    duration: wire.duration,
                }));
                continue;
            }
            match span.clamp_end(wire.duration) {
                Ok(clamped) => {
                    report.clamped.push(ClampNote {
                        line: line_no,
                        annotation_id: wire.annotation_id.clone(),
                        original_end: span.end(),
                        duration: wire.duration,
                    });
                    span = clamped;
                }
                Err(e) => {
                    let message = match e {
                        SpanError::ZeroLength(_) | SpanError::Reversed { .. } => {
                            "span starts at or after the end of the video".to_string()
                        }
                        other => other.to_string(),
                    };
                    report
                        .rejections
                        .push(reject(RejectReason::InvalidSpan { message }));
                    continue;
                }
            }
        }

        videos
            .entry(wire.video_id.clone())
            .or_insert_with(|| VideoMeta {
                video_id: wire.video_id.clone(),
                duration: wire.duration,
                native_fps: wire.native_fps,
                source_dataset: wire.source.unwrap_or_else(|| opts.schema.default_source()),
            });
        annotations.push(AnnotationRecord {
            annotation_id: wire.annotation_id,
            video_id: wire.video_id,
            query: wire.query,
            span,
            provenance: wire.provenance,
            error_flags: wire.error_flags,
            extra: wire.extra,
        });
    }

    let dataset = Dataset::new(name, videos.into_values(), annotations)?;
    Ok(Loaded { dataset, report })
}

/// Serializes one annotation in canonical form (spans at one decimal).
pub fn annotation_to_json_line(video: &VideoMeta, a: &AnnotationRecord) -> String {
    let span = a.span.canonical();
    let wire = WireRecord {
        video_id: a.video_id.clone(),
        duration: video.duration,
        query: a.query.clone(),
        span: [span.start(), span.end()],
        annotation_id: a.annotation_id.clone(),
        provenance: a.provenance,
        source: (video.source_dataset != SourceDataset::Other).then_some(video.source_dataset),
        native_fps: video.native_fps,
        error_flags: a.error_flags.clone(),
        extra: a.extra.clone(),
    };
    serde_json::to_string(&wire).expect("annotation records always serialize")
}

/// Writes the dataset as JSONL in annotation order.
pub fn write_dataset(d: &Dataset, mut out: impl Write) -> io::Result<()> {
    for a in d.annotations() {
        let video = d.video(&a.video_id).expect("dataset invariant: video exists");
        writeln!(out, "{}", annotation_to_json_line(video, a))?;
    }
    Ok(())
}

pub fn dataset_to_string(d: &Dataset) -> String {
    let mut buf = Vec::new();
    write_dataset(d, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    /// `None` for the open-ended last bin.
    pub hi: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub num_videos: usize,
    pub num_annotations: usize,
    /// Arithmetic mean over videos; `None` for an empty dataset.
    pub mean_duration: Option<f64>,
    pub duration_histogram: Vec<HistogramBin>,
    pub provenance_counts: BTreeMap<Provenance, usize>,
}

/// Bin edges (seconds) of the duration histogram; the last bin is open.
pub const DURATION_EDGES: [f64; 9] = [0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0, 210.0, 240.0];

fn summarize<'a>(
    name: &str,
    durations: impl Iterator<Item = f64>,
    annotations: impl Iterator<Item = &'a AnnotationRecord>,
) -> DatasetStats {
    let mut hist: Vec<HistogramBin> = DURATION_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| HistogramBin {
            lo,
            hi: DURATION_EDGES.get(i + 1).copied(),
            count: 0,
        })
        .collect();
    let mut n_videos = 0usize;
    let mut total = 0.0;
    for d in durations {
        n_videos += 1;
        total += d;
        let bin = DURATION_EDGES
            .iter()
            .rposition(|&lo| d >= lo)
            .unwrap_or(0);
        hist[bin].count += 1;
    }
    let mut provenance_counts = BTreeMap::new();
    let mut n_ann = 0;
    for a in annotations {
        n_ann += 1;
        *provenance_counts.entry(a.provenance).or_insert(0) += 1;
    }
    DatasetStats {
        name: name.to_string(),
        num_videos: n_videos,
        num_annotations: n_ann,
        mean_duration: (n_videos > 0).then(|| total / n_videos as f64),
        duration_histogram: hist,
        provenance_counts,
    }
}

pub fn dataset_stats(d: &Dataset) -> DatasetStats {
    summarize(d.name(), d.videos().map(|v| v.duration), d.annotations().iter())
}

/// Statistics over several datasets taken together. Videos are counted per
/// dataset, so a video id reused across benchmarks counts once in each.
pub fn combined_stats(name: &str, datasets: &[Dataset]) -> DatasetStats {
    summarize(
        name,
        datasets.iter().flat_map(|d| d.videos().map(|v| v.duration)),
        datasets.iter().flat_map(|d| d.annotations().iter()),
    )
}
