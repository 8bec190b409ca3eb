//! Audit state machine with an append-only event log.
//!
//! Every mutation is an [`Event`]. Commands pick the event, check it with
//! the same validation used during replay, append it to the log and then
//! apply it, so replaying a log rebuilds the exact state.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vtg_core::dataset::dataset_to_string;
use vtg_core::{Dataset, DatasetError, Provenance, TimeSpan};

use crate::model::{
    AuditTask, Batch, BatchStatus, Correction, Diagnosis, Export, Phase, ProvenanceLedger, QcResult, TaskState,
    Verdict,
};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("unknown dataset '{0}'")]
    UnknownDataset(String),
    #[error("unknown batch '{0}'")]
    UnknownBatch(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("unknown worker '{0}'")]
    UnknownWorker(String),
    #[error("annotation '{0}' does not exist in the dataset")]
    UnknownAnnotation(String),
    #[error("a batch needs at least one annotation")]
    EmptyBatch,
    #[error("annotation '{annotation_id}' is already enrolled in batch '{batch_id}'")]
    DuplicateEnrollment { annotation_id: String, batch_id: String },
    #[error("qc threshold {0} is outside [0, 1]")]
    BadThreshold(f64),
    #[error("task '{task_id}' is {state:?}, expected {expected:?}")]
    WrongState {
        task_id: String,
        state: TaskState,
        expected: TaskState,
    },
    #[error("task '{task_id}' is held by another worker")]
    WrongWorker { task_id: String },
    #[error("a worker cannot validate their own review")]
    SelfValidation,
    #[error("a diagnosis naming errors needs a correction or a discard")]
    MissingCorrection,
    #[error("a no_error diagnosis cannot carry a correction")]
    UnexpectedCorrection,
    #[error("a discarded record cannot also carry edits")]
    ConflictingCorrection,
    #[error("corrected query is empty")]
    EmptyQuery,
    #[error("corrected span is invalid: {0}")]
    InvalidSpan(String),
    #[error("corrected span ends at {end} past the video duration {duration}")]
    SpanOutOfBounds { end: f64, duration: f64 },
    #[error("batch '{batch_id}' has {open} task(s) not yet validated")]
    BatchNotReady { batch_id: String, open: usize },
    #[error("batch '{0}' is already accepted")]
    BatchClosed(String),
    #[error("dataset '{dataset}' has batches awaiting acceptance: {batches:?}")]
    ExportNotReady { dataset: String, batches: Vec<String> },
    #[error("event log line {line}: {message}")]
    Replay { line: usize, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    BatchCreated {
        batch_id: String,
        dataset: String,
        annotation_ids: Vec<String>,
        qc_threshold: f64,
    },
    Assigned {
        task_id: String,
        worker_id: String,
        phase: Phase,
    },
    ReviewSubmitted {
        task_id: String,
        worker_id: String,
        diagnosis: Diagnosis,
        correction: Option<Correction>,
    },
    ValidationSubmitted {
        task_id: String,
        worker_id: String,
        verdict: Verdict,
        note: Option<String>,
    },
    QcApplied {
        batch_id: String,
        result: QcResult,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogEntry {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

pub struct AuditStore {
    datasets: BTreeMap<String, Dataset>,
    workers: BTreeSet<String>,
    batches: Vec<Batch>,
    batch_index: HashMap<String, usize>,
    tasks: Vec<AuditTask>,
    task_index: HashMap<String, usize>,
    /// (dataset, annotation_id) -> batch_id
    enrolled: HashMap<(String, String), String>,
    seq: u64,
    log: Option<BufWriter<File>>,
}

impl AuditStore {
    /// In-memory store with no event log.
    pub fn new(datasets: impl IntoIterator<Item = Dataset>, workers: impl IntoIterator<Item = String>) -> Self {
        Self {
            datasets: datasets.into_iter().map(|d| (d.name().to_string(), d)).collect(),
            workers: workers.into_iter().collect(),
            batches: Vec::new(),
            batch_index: HashMap::new(),
            tasks: Vec::new(),
            task_index: HashMap::new(),
            enrolled: HashMap::new(),
            seq: 0,
            log: None,
        }
    }

    /// Store backed by the event log at `path`. An existing log is replayed
    /// first; new events are appended to it.
    pub fn open(
        datasets: impl IntoIterator<Item = Dataset>,
        workers: impl IntoIterator<Item = String>,
        path: &Path,
    ) -> Result<Self, AuditError> {
        let mut store = Self::new(datasets, workers);
        if path.exists() {
            store.replay(BufReader::new(File::open(path)?))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        store.log = Some(BufWriter::new(file));
        Ok(store)
    }

    /// Read-only view of the state recorded in an event log; nothing is
    /// written back.
    pub fn from_log(
        datasets: impl IntoIterator<Item = Dataset>,
        workers: impl IntoIterator<Item = String>,
        path: &Path,
    ) -> Result<Self, AuditError> {
        let mut store = Self::new(datasets, workers);
        store.replay(BufReader::new(File::open(path)?))?;
        Ok(store)
    }

    /// Applies every event of a log, validating each as if it were new.
    pub fn replay(&mut self, reader: impl BufRead) -> Result<(), AuditError> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(&line).map_err(|e| AuditError::Replay {
                line: i + 1,
                message: e.to_string(),
            })?;
            self.check(&entry.event).map_err(|e| AuditError::Replay {
                line: i + 1,
                message: e.to_string(),
            })?;
            self.apply(&entry.event);
            self.seq = entry.seq;
        }
        Ok(())
    }

    fn commit(&mut self, event: Event) -> Result<(), AuditError> {
        self.check(&event)?;
        let entry = LogEntry {
            seq: self.seq + 1,
            event,
        };
        if let Some(log) = &mut self.log {
            serde_json::to_writer(&mut *log, &entry).map_err(io::Error::from)?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        self.seq = entry.seq;
        self.apply(&entry.event);
        Ok(())
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.datasets.values()
    }

    pub fn workers(&self) -> &BTreeSet<String> {
        &self.workers
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn tasks(&self) -> &[AuditTask] {
        &self.tasks
    }

    pub fn batch(&self, batch_id: &str) -> Result<&Batch, AuditError> {
        self.batch_index
            .get(batch_id)
            .map(|&i| &self.batches[i])
            .ok_or_else(|| AuditError::UnknownBatch(batch_id.to_string()))
    }

    pub fn task(&self, task_id: &str) -> Result<&AuditTask, AuditError> {
        self.task_index
            .get(task_id)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| AuditError::UnknownTask(task_id.to_string()))
    }

    /// Events applied so far.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Tasks of the same batch on the same video, for side-by-side review.
    pub fn video_group(&self, task_id: &str) -> Result<Vec<&AuditTask>, AuditError> {
        let task = self.task(task_id)?;
        let batch = self.batch(&task.batch_id)?;
        Ok(batch
            .task_ids
            .iter()
            .map(|id| &self.tasks[self.task_index[id]])
            .filter(|t| t.video_id == task.video_id)
            .collect())
    }

    /// Annotation and video duration behind a task.
    pub fn annotation_of(&self, task: &AuditTask) -> Option<(&vtg_core::AnnotationRecord, f64)> {
        let d = self.datasets.get(&task.dataset)?;
        let a = d.annotation(&task.annotation_id)?;
        Some((a, d.video(&a.video_id)?.duration))
    }

    pub fn create_batch(
        &mut self,
        dataset: &str,
        annotation_ids: Vec<String>,
        qc_threshold: f64,
    ) -> Result<&Batch, AuditError> {
        let batch_id = format!("b{:04}", self.batches.len() + 1);
        self.commit(Event::BatchCreated {
            batch_id: batch_id.clone(),
            dataset: dataset.to_string(),
            annotation_ids,
            qc_threshold,
        })?;
        self.batch(&batch_id)
    }

    /// Hands the worker a task for the phase, or `None` when nothing is
    /// eligible. A worker already holding a task in that phase gets it back.
    pub fn assign_next(&mut self, worker_id: &str, phase: Phase) -> Result<Option<AuditTask>, AuditError> {
        if !self.workers.contains(worker_id) {
            return Err(AuditError::UnknownWorker(worker_id.to_string()));
        }
        let (held_state, free_state) = match phase {
            Phase::Review => (TaskState::InReview, TaskState::Pending),
            Phase::Validate => (TaskState::InValidation, TaskState::Reviewed),
        };
        fn holder(t: &AuditTask, phase: Phase) -> Option<&str> {
            match phase {
                Phase::Review => t.reviewer_id.as_deref(),
                Phase::Validate => t.validator_id.as_deref(),
            }
        }
        if let Some(t) = self
            .tasks
            .iter()
            .find(|t| t.state == held_state && holder(t, phase) == Some(worker_id))
        {
            return Ok(Some(t.clone()));
        }
        let candidate = self.tasks.iter().find(|t| {
            t.state == free_state && (phase == Phase::Review || t.reviewer_id.as_deref() != Some(worker_id))
        });
        let Some(task_id) = candidate.map(|t| t.task_id.clone()) else {
            return Ok(None);
        };
        self.commit(Event::Assigned {
            task_id: task_id.clone(),
            worker_id: worker_id.to_string(),
            phase,
        })?;
        Ok(Some(self.task(&task_id)?.clone()))
    }

    pub fn submit_review(
        &mut self,
        task_id: &str,
        worker_id: &str,
        diagnosis: Diagnosis,
        correction: Option<Correction>,
    ) -> Result<&AuditTask, AuditError> {
        self.commit(Event::ReviewSubmitted {
            task_id: task_id.to_string(),
            worker_id: worker_id.to_string(),
            diagnosis,
            correction,
        })?;
        self.task(task_id)
    }

    pub fn submit_validation(
        &mut self,
        task_id: &str,
        worker_id: &str,
        verdict: Verdict,
        note: Option<String>,
    ) -> Result<&AuditTask, AuditError> {
        self.commit(Event::ValidationSubmitted {
            task_id: task_id.to_string(),
            worker_id: worker_id.to_string(),
            verdict,
            note,
        })?;
        self.task(task_id)
    }

    fn qc_result(&self, batch: &Batch) -> Result<QcResult, AuditError> {
        let states = batch.task_ids.iter().map(|id| self.tasks[self.task_index[id]].state);
        let open = states
            .clone()
            .filter(|s| !matches!(s, TaskState::Validated | TaskState::Rejected))
            .count();
        if open > 0 {
            return Err(AuditError::BatchNotReady {
                batch_id: batch.batch_id.clone(),
                open,
            });
        }
        let flagged = states.filter(|s| *s == TaskState::Rejected).count();
        let size = batch.task_ids.len();
        let rate = flagged as f64 / size as f64;
        Ok(QcResult {
            flagged,
            size,
            rate,
            threshold: batch.qc_threshold,
            accepted: rate <= batch.qc_threshold,
        })
    }

    /// Accepts the batch unless its flagged rate strictly exceeds the
    /// threshold; a rejection sends every task back to pending.
    pub fn batch_qc(&mut self, batch_id: &str) -> Result<QcResult, AuditError> {
        let result = self.qc_result(self.batch(batch_id)?)?;
        self.commit(Event::QcApplied {
            batch_id: batch_id.to_string(),
            result,
        })?;
        Ok(result)
    }

    /// Refined dataset: corrections applied, discards dropped, audited
    /// records marked `human_refined`. Pure in the store state.
    pub fn export(&self, dataset: &str) -> Result<Export, AuditError> {
        let d = self
            .datasets
            .get(dataset)
            .ok_or_else(|| AuditError::UnknownDataset(dataset.to_string()))?;
        let waiting: Vec<String> = self
            .batches
            .iter()
            .filter(|b| b.dataset == dataset && b.status != BatchStatus::Accepted)
            .map(|b| b.batch_id.clone())
            .collect();
        if !waiting.is_empty() {
            return Err(AuditError::ExportNotReady {
                dataset: dataset.to_string(),
                batches: waiting,
            });
        }
        let by_annotation: HashMap<&str, &AuditTask> = self
            .tasks
            .iter()
            .filter(|t| t.dataset == dataset)
            .map(|t| (t.annotation_id.as_str(), t))
            .collect();

        let mut ledger = ProvenanceLedger::default();
        let mut records = Vec::with_capacity(d.num_annotations());
        for a in d.annotations() {
            let Some(task) = by_annotation.get(a.annotation_id.as_str()) else {
                ledger.unaudited += 1;
                records.push(a.clone());
                continue;
            };
            if task.state == TaskState::Rejected {
                ledger.flagged_unrefined += 1;
                records.push(a.clone());
                continue;
            }
            let mut r = a.clone();
            r.provenance = Provenance::HumanRefined;
            let diagnosis = task.diagnosis.clone().unwrap_or(Diagnosis::NoError);
            r.error_flags = diagnosis.kinds();
            match &task.correction {
                None => ledger.confirmed += 1,
                Some(c) if c.discarded => {
                    ledger.discarded += 1;
                    continue;
                }
                Some(c) => {
                    let query_changed = c
                        .new_query
                        .as_deref()
                        .is_some_and(|q| q.trim() != a.query.trim());
                    if let Some(q) = &c.new_query {
                        r.query = q.trim().to_string();
                    }
                    if let Some([s, e]) = c.new_span {
                        r.span = TimeSpan::new(s, e).expect("validated on submission");
                    }
                    if query_changed {
                        ledger.rewritten += 1;
                    } else if r.span != a.span {
                        ledger.refined += 1;
                    } else {
                        ledger.confirmed += 1;
                    }
                }
            }
            records.push(r);
        }
        let refined = Dataset::new(dataset, d.videos().cloned(), records)?;
        Ok(Export {
            dataset: dataset.to_string(),
            jsonl: dataset_to_string(&refined),
            ledger,
        })
    }

    fn task_mut(&mut self, task_id: &str) -> &mut AuditTask {
        let i = self.task_index[task_id];
        &mut self.tasks[i]
    }

    fn check(&self, event: &Event) -> Result<(), AuditError> {
        match event {
            Event::BatchCreated {
                batch_id,
                dataset,
                annotation_ids,
                qc_threshold,
            } => {
                let d = self
                    .datasets
                    .get(dataset)
                    .ok_or_else(|| AuditError::UnknownDataset(dataset.clone()))?;
                if !(0.0..=1.0).contains(qc_threshold) {
                    return Err(AuditError::BadThreshold(*qc_threshold));
                }
                if annotation_ids.is_empty() {
                    return Err(AuditError::EmptyBatch);
                }
                if self.batch_index.contains_key(batch_id) {
                    return Err(AuditError::Replay {
                        line: 0,
                        message: format!("batch id '{batch_id}' reused"),
                    });
                }
                let mut seen = HashSet::new();
                for id in annotation_ids {
                    if d.annotation(id).is_none() {
                        return Err(AuditError::UnknownAnnotation(id.clone()));
                    }
                    if let Some(b) = self.enrolled.get(&(dataset.clone(), id.clone())) {
                        return Err(AuditError::DuplicateEnrollment {
                            annotation_id: id.clone(),
                            batch_id: b.clone(),
                        });
                    }
                    if !seen.insert(id) {
                        return Err(AuditError::DuplicateEnrollment {
                            annotation_id: id.clone(),
                            batch_id: batch_id.clone(),
                        });
                    }
                }
                Ok(())
            }
            Event::Assigned {
                task_id,
                worker_id,
                phase,
            } => {
                if !self.workers.contains(worker_id) {
                    return Err(AuditError::UnknownWorker(worker_id.clone()));
                }
                let t = self.task(task_id)?;
                let expected = match phase {
                    Phase::Review => TaskState::Pending,
                    Phase::Validate => TaskState::Reviewed,
                };
                if t.state != expected {
                    return Err(AuditError::WrongState {
                        task_id: task_id.clone(),
                        state: t.state,
                        expected,
                    });
                }
                if *phase == Phase::Validate && t.reviewer_id.as_deref() == Some(worker_id.as_str()) {
                    return Err(AuditError::SelfValidation);
                }
                Ok(())
            }
            Event::ReviewSubmitted {
                task_id,
                worker_id,
                diagnosis,
                correction,
            } => {
                let t = self.task(task_id)?;
                if t.state != TaskState::InReview {
                    return Err(AuditError::WrongState {
                        task_id: task_id.clone(),
                        state: t.state,
                        expected: TaskState::InReview,
                    });
                }
                if t.reviewer_id.as_deref() != Some(worker_id.as_str()) {
                    return Err(AuditError::WrongWorker {
                        task_id: task_id.clone(),
                    });
                }
                let correction = correction.as_ref().filter(|c| !c.is_empty());
                if diagnosis.is_no_error() {
                    return match correction {
                        Some(_) => Err(AuditError::UnexpectedCorrection),
                        None => Ok(()),
                    };
                }
                let Some(c) = correction else {
                    return Err(AuditError::MissingCorrection);
                };
                if c.discarded {
                    if c.new_query.is_some() || c.new_span.is_some() {
                        return Err(AuditError::ConflictingCorrection);
                    }
                    return Ok(());
                }
                if let Some(q) = &c.new_query {
                    if q.trim().is_empty() {
                        return Err(AuditError::EmptyQuery);
                    }
                }
                if let Some([s, e]) = c.new_span {
                    let span = TimeSpan::new(s, e).map_err(|e| AuditError::InvalidSpan(e.to_string()))?;
                    let (_, duration) = self
                        .annotation_of(t)
                        .ok_or_else(|| AuditError::UnknownAnnotation(t.annotation_id.clone()))?;
                    if span.end() > duration {
                        return Err(AuditError::SpanOutOfBounds {
                            end: span.end(),
                            duration,
                        });
                    }
                }
                Ok(())
            }
            Event::ValidationSubmitted { task_id, worker_id, .. } => {
                let t = self.task(task_id)?;
                if t.state != TaskState::InValidation {
                    return Err(AuditError::WrongState {
                        task_id: task_id.clone(),
                        state: t.state,
                        expected: TaskState::InValidation,
                    });
                }
                if t.validator_id.as_deref() != Some(worker_id.as_str()) {
                    return Err(AuditError::WrongWorker {
                        task_id: task_id.clone(),
                    });
                }
                Ok(())
            }
            Event::QcApplied { batch_id, result } => {
                let b = self.batch(batch_id)?;
                if b.status == BatchStatus::Accepted {
                    return Err(AuditError::BatchClosed(batch_id.clone()));
                }
                let expected = self.qc_result(b)?;
                if expected != *result {
                    return Err(AuditError::Replay {
                        line: 0,
                        message: format!("qc result for '{batch_id}' does not match the task states"),
                    });
                }
                Ok(())
            }
        }
    }

    fn apply(&mut self, event: &Event) {
        match event {
            Event::BatchCreated {
                batch_id,
                dataset,
                annotation_ids,
                qc_threshold,
            } => {
                let d = &self.datasets[dataset];
                let mut task_ids = Vec::with_capacity(annotation_ids.len());
                for id in annotation_ids {
                    let task_id = format!("t{:06}", self.tasks.len() + 1);
                    let video_id = d.annotation(id).map(|a| a.video_id.clone()).unwrap_or_default();
                    self.task_index.insert(task_id.clone(), self.tasks.len());
                    self.tasks.push(AuditTask {
                        task_id: task_id.clone(),
                        batch_id: batch_id.clone(),
                        dataset: dataset.clone(),
                        annotation_id: id.clone(),
                        video_id,
                        state: TaskState::Pending,
                        reviewer_id: None,
                        validator_id: None,
                        diagnosis: None,
                        correction: None,
                        verdict: None,
                        note: None,
                        archived: Vec::new(),
                    });
                    self.enrolled.insert((dataset.clone(), id.clone()), batch_id.clone());
                    task_ids.push(task_id);
                }
                self.batch_index.insert(batch_id.clone(), self.batches.len());
                self.batches.push(Batch {
                    batch_id: batch_id.clone(),
                    dataset: dataset.clone(),
                    task_ids,
                    qc_threshold: *qc_threshold,
                    status: BatchStatus::Open,
                    qc_history: Vec::new(),
                });
            }
            Event::Assigned {
                task_id,
                worker_id,
                phase,
            } => {
                let t = self.task_mut(task_id);
                match phase {
                    Phase::Review => {
                        t.state = TaskState::InReview;
                        t.reviewer_id = Some(worker_id.clone());
                    }
                    Phase::Validate => {
                        t.state = TaskState::InValidation;
                        t.validator_id = Some(worker_id.clone());
                    }
                }
            }
            Event::ReviewSubmitted {
                task_id,
                diagnosis,
                correction,
                ..
            } => {
                let t = self.task_mut(task_id);
                t.state = TaskState::Reviewed;
                t.diagnosis = Some(diagnosis.clone());
                t.correction = correction.clone().filter(|c| !c.is_empty());
                let batch_id = t.batch_id.clone();
                let bi = self.batch_index[&batch_id];
                let all_reviewed = self.batches[bi].task_ids.iter().all(|id| {
                    !matches!(
                        self.tasks[self.task_index[id]].state,
                        TaskState::Pending | TaskState::InReview
                    )
                });
                if all_reviewed {
                    self.batches[bi].status = BatchStatus::Validating;
                }
            }
            Event::ValidationSubmitted {
                task_id, verdict, note, ..
            } => {
                let t = self.task_mut(task_id);
                t.state = match verdict {
                    Verdict::Correct => TaskState::Validated,
                    Verdict::Incorrect => TaskState::Rejected,
                };
                t.verdict = Some(*verdict);
                t.note = note.clone();
            }
            Event::QcApplied { batch_id, result } => {
                let bi = self.batch_index[batch_id];
                self.batches[bi].qc_history.push(*result);
                if result.accepted {
                    self.batches[bi].status = BatchStatus::Accepted;
                } else {
                    self.batches[bi].status = BatchStatus::Rejected;
                    for id in self.batches[bi].task_ids.clone() {
                        self.task_mut(&id).archive_and_reset();
                    }
                }
            }
        }
    }
}
