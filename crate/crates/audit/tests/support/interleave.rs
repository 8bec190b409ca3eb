//! Seeded random interleaving of audit operations with invariant checks.
//!
//! The checks only look at what the store hands back and its public task
//! snapshots, tracked against a model kept here.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtg_audit::{AuditStore, AuditTask, BatchStatus, Correction, Diagnosis, Phase, TaskState, Verdict};
use vtg_core::dataset::{read_dataset, LoadOptions};
use vtg_core::{Dataset, ErrorKind};

pub const WORKERS: [&str; 4] = ["w1", "w2", "w3", "w4"];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct InterleaveReport {
    pub ops: usize,
    pub successful_ops: usize,
    pub double_assignments: usize,
    pub self_validations: usize,
    pub incomplete_resets: usize,
    pub rejections: usize,
    pub accepted: bool,
    pub export: Option<String>,
}

impl InterleaveReport {
    pub fn safe(&self) -> bool {
        self.double_assignments == 0 && self.self_validations == 0 && self.incomplete_resets == 0
    }
}

pub fn dataset(n: usize) -> Dataset {
    let mut text = String::new();
    for i in 0..n {
        text.push_str(&format!(
            "{{\"video_id\":\"v{:02}\",\"duration\":90.0,\"query\":\"someone does activity number {i}\",\"span\":[{}.0,{}.5],\"annotation_id\":\"a{i:03}\"}}\n",
            i / 4,
            (i * 7) % 60,
            (i * 7) % 60 + 12
        ));
    }
    read_dataset("bench", text.as_bytes(), LoadOptions::default())
        .expect("synthetic dataset loads")
        .dataset
}

fn random_review(rng: &mut ChaCha8Rng) -> (Diagnosis, Option<Correction>) {
    match rng.random_range(0..6) {
        0..=2 => (Diagnosis::NoError, None),
        3 => (
            Diagnosis::Errors([ErrorKind::UnclearQuery].into()),
            Some(Correction {
                new_query: Some(format!("a clearer description {}", rng.random_range(0..1000))),
                ..Default::default()
            }),
        ),
        4 => {
            let s = rng.random_range(0..80) as f64;
            (
                Diagnosis::Errors([ErrorKind::InaccurateSegment].into()),
                Some(Correction {
                    new_span: Some([s, s + rng.random_range(1..10) as f64]),
                    ..Default::default()
                }),
            )
        }
        _ => (
            Diagnosis::Errors([ErrorKind::NoOccurrence].into()),
            Some(Correction {
                discarded: true,
                ..Default::default()
            }),
        ),
    }
}

fn pick(
    rng: &mut ChaCha8Rng,
    store: &AuditStore,
    held: &BTreeMap<String, (Phase, String)>,
    phase: Phase,
    n_tasks: usize,
) -> AuditTask {
    let mine: Vec<&String> = held.iter().filter(|(_, (p, _))| *p == phase).map(|(t, _)| t).collect();
    if !mine.is_empty() && rng.random_bool(0.85) {
        store.task(mine[rng.random_range(0..mine.len())]).unwrap().clone()
    } else {
        store.tasks()[rng.random_range(0..n_tasks)].clone()
    }
}

/// Runs `ops` random operations against a fresh `n_tasks` batch, then (if
/// `finish`) drives the batch to acceptance and exports it.
pub fn run(seed: u64, n_tasks: usize, ops: usize, finish: bool) -> InterleaveReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = AuditStore::new([dataset(n_tasks)], WORKERS.iter().map(|w| w.to_string()));
    let ids: Vec<String> = (0..n_tasks).map(|i| format!("a{i:03}")).collect();
    let batch_id = store.create_batch("bench", ids, 0.1).expect("batch").batch_id.clone();
    let mut report = InterleaveReport::default();
    // task -> (phase, worker) for every assignment currently outstanding
    let mut held: BTreeMap<String, (Phase, String)> = BTreeMap::new();

    let record_assign = |report: &mut InterleaveReport,
                         held: &mut BTreeMap<String, (Phase, String)>,
                             task_id: &str,
                             phase: Phase,
                             worker: &str| {
        if let Some((p, w)) = held.get(task_id) {
            if *p == phase && w != worker {
                report.double_assignments += 1;
            }
        }
        held.insert(task_id.to_string(), (phase, worker.to_string()));
    };

    for _ in 0..ops {
        report.ops += 1;
        let worker = WORKERS[rng.random_range(0..WORKERS.len())];
        let ok = match rng.random_range(0..10) {
            0..=2 => match store.assign_next(worker, Phase::Review) {
                Ok(Some(t)) => {
                    record_assign(&mut report, &mut held, &t.task_id, Phase::Review, worker);
                    true
                }
                Ok(None) => true,
                Err(_) => false,
            },
            3..=4 => match store.assign_next(worker, Phase::Validate) {
                Ok(Some(t)) => {
                    if t.reviewer_id.as_deref() == Some(worker) {
                        report.self_validations += 1;
                    }
                    record_assign(&mut report, &mut held, &t.task_id, Phase::Validate, worker);
                    true
                }
                Ok(None) => true,
                Err(_) => false,
            },
            5..=6 => {
                // mostly a held review task, sometimes any task or the wrong worker
                let task = pick(&mut rng, &store, &held, Phase::Review, n_tasks);
                let (diag, corr) = random_review(&mut rng);
                let submitter = if rng.random_bool(0.8) {
                    task.reviewer_id.clone().unwrap_or_else(|| worker.to_string())
                } else {
                    worker.to_string()
                };
                let r = store.submit_review(&task.task_id, &submitter, diag, corr).is_ok();
                if r {
                    held.remove(&task.task_id);
                }
                r
            }
            7..=8 => {
                let task = pick(&mut rng, &store, &held, Phase::Validate, n_tasks);
                let verdict = if rng.random_bool(0.2) {
                    Verdict::Incorrect
                } else {
                    Verdict::Correct
                };
                let submitter = if rng.random_bool(0.8) {
                    task.validator_id.clone().unwrap_or_else(|| worker.to_string())
                } else {
                    worker.to_string()
                };
                let r = store.submit_validation(&task.task_id, &submitter, verdict, None).is_ok();
                if r {
                    held.remove(&task.task_id);
                }
                r
            }
            _ => {
                let before: Vec<usize> = store.tasks().iter().map(|t| t.archived.len()).collect();
                match store.batch_qc(&batch_id) {
                    Ok(qc) => {
                        if !qc.accepted {
                            report.rejections += 1;
                            held.clear();
                            let reset = store.tasks().iter().zip(&before).all(|(t, n)| {
                                t.state == TaskState::Pending
                                    && t.reviewer_id.is_none()
                                    && t.validator_id.is_none()
                                    && t.diagnosis.is_none()
                                    && t.archived.len() == n + 1
                            });
                            if !reset {
                                report.incomplete_resets += 1;
                            }
                        }
                        true
                    }
                    Err(_) => false,
                }
            }
        };
        if ok {
            report.successful_ops += 1;
        }
        report.self_validations += store
            .tasks()
            .iter()
            .filter(|t| t.validator_id.is_some() && t.validator_id == t.reviewer_id)
            .count();
    }

    if finish {
        drive_to_acceptance(&mut store, &batch_id, &mut report);
        report.accepted = store.batch(&batch_id).unwrap().status == BatchStatus::Accepted;
        report.export = store.export("bench").ok().map(|e| e.jsonl);
    }
    report
}

fn drive_to_acceptance(store: &mut AuditStore, batch_id: &str, report: &mut InterleaveReport) {
    for _ in 0..4 {
        if store.batch(batch_id).unwrap().status == BatchStatus::Accepted {
            return;
        }
        // finish any review still held, then review whatever is pending
        for w in WORKERS {
            while let Some(t) = store.assign_next(w, Phase::Review).unwrap() {
                store.submit_review(&t.task_id, w, Diagnosis::NoError, None).unwrap();
            }
        }
        for w in WORKERS {
            while let Some(t) = store.assign_next(w, Phase::Validate).unwrap() {
                if t.reviewer_id.as_deref() == Some(w) {
                    report.self_validations += 1;
                }
                store.submit_validation(&t.task_id, w, Verdict::Correct, None).unwrap();
            }
        }
        store.batch_qc(batch_id).unwrap();
    }
}
