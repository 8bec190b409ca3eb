//! Shared workspace fixtures loaded through the public API.

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::Value;
use vtg_core::dataset::{combined_stats, dataset_stats, load_dataset, Schema};
use vtg_core::lint::{lint_dataset, lint_items, FindingKind, LintConfig, LintItem};
use vtg_core::metrics::{evaluate, UnparsedPolicy};
use vtg_core::parse::{parse_reader, ParseConfig};
use vtg_core::{Dataset, ErrorKind};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn json(rel: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture(rel)).unwrap()).unwrap()
}

const BENCHES: [(&str, Schema); 3] = [
    ("charades_synth", Schema::Charades),
    ("activitynet_synth", Schema::Activitynet),
    ("qvhighlights_synth", Schema::Qvhighlights),
];

#[test]
fn synthetic_benchmarks_match_construction() {
    let manifest = json("bench/manifest.json");
    let mut all = Vec::new();
    let (mut videos, mut anns, mut dur) = (0u64, 0u64, 0.0);
    for (name, schema) in BENCHES {
        let loaded = load_dataset(fixture(&format!("bench/{name}.jsonl")), schema).unwrap();
        assert!(loaded.report.rejections.is_empty());
        let stats = dataset_stats(&loaded.dataset);
        let m = &manifest[name];
        assert_eq!(stats.num_videos as u64, m["videos"].as_u64().unwrap());
        assert_eq!(stats.num_annotations as u64, m["annotations"].as_u64().unwrap());
        let mean = m["duration_sum"].as_f64().unwrap() / m["videos"].as_f64().unwrap();
        assert!((stats.mean_duration.unwrap() - mean).abs() < 1e-9);
        videos += m["videos"].as_u64().unwrap();
        anns += m["annotations"].as_u64().unwrap();
        dur += m["duration_sum"].as_f64().unwrap();
        all.push(loaded.dataset);
    }
    let total = combined_stats("total", &all);
    assert_eq!(total.num_videos as u64, videos);
    assert_eq!(total.num_annotations as u64, anns);
    assert!((total.mean_duration.unwrap() - dur / videos as f64).abs() < 1e-9);
    assert_eq!(total.duration_histogram.iter().map(|b| b.count as u64).sum::<u64>(), videos);
}

fn eval_inputs() -> (Dataset, Vec<vtg_core::parse::PredictionRecord>) {
    let gt = load_dataset(fixture("eval/gt.jsonl"), Schema::Native).unwrap().dataset;
    let file = std::fs::File::open(fixture("eval/preds.jsonl")).unwrap();
    let preds = parse_reader(std::io::BufReader::new(file), &ParseConfig::default()).unwrap();
    (gt, preds.records)
}

#[test]
fn ten_item_fixture_matches_hand_table() {
    let expected = json("eval/expected.json");
    let (gt, preds) = eval_inputs();
    let ious: Vec<f64> = expected["ious"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (p, want) in preds.iter().zip(&ious) {
        let got = p.span().map_or(0.0, |s| vtg_core::temporal_iou(&s, &gt.annotation(&p.annotation_id).unwrap().span));
        assert!((got - want).abs() < 1e-9, "{}: {got} vs {want}", p.annotation_id);
    }
    for (policy, key) in [(UnparsedPolicy::ScoreZero, "score_zero"), (UnparsedPolicy::Exclude, "exclude")] {
        let report = evaluate(std::slice::from_ref(&gt), &preds, policy).unwrap();
        let s = report.per_benchmark["gt"].scores.unwrap();
        let e = &expected[key];
        for (got, field) in [(s.r1_03, "r1_03"), (s.r1_05, "r1_05"), (s.r1_07, "r1_07"), (s.miou, "miou")] {
            assert!((got - e[field].as_f64().unwrap()).abs() < 1e-9, "{key}.{field}: {got}");
        }
        assert_eq!(report.n_unparsed, 1);
    }
}

#[test]
fn perfect_and_unparsable_predictions() {
    let (gt, preds) = eval_inputs();
    let perfect: Vec<_> = preds
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.parsed = Ok(gt.annotation(&p.annotation_id).unwrap().span);
            p
        })
        .collect();
    let s = evaluate(std::slice::from_ref(&gt), &perfect, UnparsedPolicy::ScoreZero).unwrap().per_benchmark["gt"]
        .scores
        .unwrap();
    assert_eq!([s.r1_03, s.r1_05, s.r1_07, s.miou], [100.0; 4]);

    let junk: Vec<_> = preds
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.parsed = Err(vtg_core::parse::ParseFailure::NoRuleMatched);
            p
        })
        .collect();
    let r = evaluate(std::slice::from_ref(&gt), &junk, UnparsedPolicy::ScoreZero).unwrap();
    assert_eq!(r.per_benchmark["gt"].scores.unwrap().miou, 0.0);
    assert_eq!(r.n_unparsed, 10);
}

#[test]
fn evaluating_together_equals_evaluating_apart() {
    let (gt, preds) = eval_inputs();
    let (_, videos, anns) = gt.into_parts();
    let (left_anns, right_anns): (Vec<_>, Vec<_>) = anns.into_iter().partition(|a| a.annotation_id.as_str() < "e5");
    let left = Dataset::new("left", videos.clone(), left_anns).unwrap();
    let right = Dataset::new("right", videos, right_anns).unwrap();
    let in_left = |id: &str| left.annotation(id).is_some();
    let lp: Vec<_> = preds.iter().filter(|p| in_left(&p.annotation_id)).cloned().collect();
    let rp: Vec<_> = preds.iter().filter(|p| !in_left(&p.annotation_id)).cloned().collect();
    let both = evaluate(&[left.clone(), right.clone()], &preds, UnparsedPolicy::ScoreZero).unwrap();
    let l = evaluate(&[left], &lp, UnparsedPolicy::ScoreZero).unwrap();
    let r = evaluate(&[right], &rp, UnparsedPolicy::ScoreZero).unwrap();
    assert_eq!(both.per_benchmark["left"], l.per_benchmark["left"]);
    assert_eq!(both.per_benchmark["right"], r.per_benchmark["right"]);
}

#[test]
fn planted_duplicates_give_seven_percent() {
    let d = load_dataset(fixture("lint/planted_duplicates.jsonl"), Schema::Native).unwrap().dataset;
    assert_eq!(d.num_annotations(), 100);
    let report = lint_dataset(&d, &LintConfig::default());
    assert_eq!(report.error_rates[&ErrorKind::DuplicateQuery], 0.07);
    let flagged: BTreeSet<_> = report
        .findings
        .iter()
        .filter(|f| f.kind == FindingKind::Error(ErrorKind::DuplicateQuery))
        .map(|f| f.annotation_id.as_str())
        .collect();
    let want: BTreeSet<_> = (93..100).map(|i| format!("r{i:03}")).collect();
    assert_eq!(flagged, want.iter().map(String::as_str).collect());
}

fn lint_fixture_items() -> Vec<LintItem> {
    let d = load_dataset(fixture("lint/planted_duplicates.jsonl"), Schema::Native).unwrap().dataset;
    vtg_core::lint::dataset_items(&d)
}

fn finding_set(items: &[LintItem], threshold: f64) -> BTreeSet<(String, String)> {
    let cfg = LintConfig {
        near_dup_threshold: threshold,
        ..LintConfig::default()
    };
    lint_items(items, &cfg)
        .findings
        .into_iter()
        .filter(|f| f.kind == FindingKind::Error(ErrorKind::DuplicateQuery))
        .map(|f| (f.annotation_id, f.rule_id))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lint_findings_ignore_record_order(seed in any::<u64>()) {
        let items = lint_fixture_items();
        let mut shuffled = items.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = lint_items(&items, &LintConfig::default());
        let b = lint_items(&shuffled, &LintConfig::default());
        prop_assert_eq!(a.findings, b.findings);
        prop_assert_eq!(a.error_rates, b.error_rates);
    }

    #[test]
    fn lowering_threshold_keeps_duplicates(hi in 0.05f64..1.0, gap in 0.0f64..0.5) {
        let items = lint_fixture_items();
        let lo = (hi - gap).max(0.0);
        let strict: BTreeSet<String> = finding_set(&items, hi).into_iter().map(|(id, _)| id).collect();
        let loose: BTreeSet<String> = finding_set(&items, lo).into_iter().map(|(id, _)| id).collect();
        prop_assert!(strict.is_subset(&loose));
    }
}
