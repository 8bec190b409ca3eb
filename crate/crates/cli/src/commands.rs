//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use vtg_core::dataset::{combined_stats, dataset_stats, dataset_to_string, load_dataset, DatasetStats, Loaded};
use vtg_core::encode::{build_artifact, plan_frames, FrameConfig, PatchGeometry, PlanDocument, Scheme, TimestampFormat};
use vtg_core::lint::{lint_loaded, LintConfig, LintReport};
use vtg_core::metrics::{evaluate, UnparsedPolicy};
use vtg_core::parse::{parse_reader, ParseConfig, PredictionRecord};
use vtg_core::rlvr::{
    detect_plateau, simulate_rollouts, MockPolicy, PlateauRule, RewardConfig, RewardMode, RewardTrace,
    RolloutSimConfig, SimPrompt,
};
use vtg_core::sampler::{
    compute_difficulties, estimate_density, gaussian_weights, sample_subset, DifficultyRecord, GaussianTarget,
    SampleMode,
};
use vtg_core::{Dataset, Schema, VideoMeta};
use vtg_reannotate::{
    accept_candidates, annotate_all, sample_videos_uniform_duration, AnnotatorBackend, HttpBackend, MockBackend,
    RetryPolicy, SamplingConfig,
};

use crate::config::{layer, GlobalConfig};
use crate::{Cli, Command};

/// Bad invocation: exit code 2 rather than 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(flag: &str, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{flag} {}: no such file", path.display())));
    }
    Ok(())
}

fn parse_enum<T: serde::de::DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(json!(value)).map_err(|_| usage(format!("{flag} {value}: unrecognized value")))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn load(flag: &str, path: &Path, schema: &str) -> Result<Loaded> {
    require_file(flag, path)?;
    let schema: Schema = schema.parse().map_err(|_| usage(format!("--schema {schema}: unknown schema")))?;
    let loaded = load_dataset(path, schema).with_context(|| format!("loading {}", path.display()))?;
    for r in &loaded.report.rejections {
        log::warn!("{}: line {} rejected: {:?}", path.display(), r.line, r.reason);
    }
    Ok(loaded)
}

fn lint_config(path: Option<&Path>) -> Result<LintConfig> {
    match path {
        None => Ok(LintConfig::default()),
        Some(p) => {
            require_file("--lint-config", p)?;
            let text = fs::read_to_string(p)?;
            LintConfig::from_toml_str(&text).with_context(|| format!("lint config {}", p.display()))
        }
    }
}

fn read_predictions(path: &Path, fps: f64) -> Result<Vec<PredictionRecord>> {
    require_file("--pred", path)?;
    let cfg = ParseConfig::with_fps(fps).map_err(|e| usage(format!("--fps {fps}: {e}")))?;
    let file = fs::File::open(path)?;
    Ok(parse_reader(BufReader::new(file), &cfg)?.records)
}

#[derive(Serialize)]
struct Effective<'a> {
    command: &'a Command,
    config: &'a GlobalConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = GlobalConfig::load(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    apply_layers(&cli.command, &mut cfg)?;
    if cli.print_config {
        print_json(&Effective {
            command: &cli.command,
            config: &cfg,
        });
        return Ok(());
    }
    let json = cli.json;
    match &cli.command {
        Command::Stats(a) => stats(a, &cfg, json),
        Command::Lint(a) => lint(a, &cfg, json),
        Command::Parse(a) => parse(a, &cfg, json),
        Command::Eval(a) => eval(a, &cfg, json),
        Command::Sample(a) => sample(a, &cfg, json),
        Command::Monitor(a) => monitor(a, &cfg, json),
        Command::RolloutSim(a) => rollout(a, &cfg, json),
        Command::Encode(a) => encode(a, &cfg, json),
        Command::Annotate(a) => annotate(a, &cfg, json),
        Command::AuditServe(_) => serve(&cfg),
        Command::Export(a) => export(a, &cfg, json),
    }
}

/// Folds flag/env values into the file+default config so `--print-config`
/// shows exactly what a run would use.
fn apply_layers(command: &Command, cfg: &mut GlobalConfig) -> Result<()> {
    match command {
        Command::Stats(a) => layer(&mut cfg.schema, a.schema.clone()),
        Command::Lint(a) => {
            layer(&mut cfg.schema, a.schema.clone());
            layer(&mut cfg.lint_config, a.lint_config.clone().map(Some));
        }
        Command::Parse(a) => layer(&mut cfg.fps, a.fps),
        Command::Eval(a) => {
            layer(&mut cfg.schema, a.schema.clone());
            layer(&mut cfg.fps, a.fps);
            if let Some(p) = &a.policy {
                cfg.unparsed_policy = parse_enum::<UnparsedPolicy>("--policy", p)?;
            }
        }
        Command::Sample(a) => {
            layer(&mut cfg.sampler.mu, a.mu);
            layer(&mut cfg.sampler.sigma, a.sigma);
            layer(&mut cfg.sampler.bins, a.bins);
            layer(&mut cfg.seed, a.seed);
            if a.with_replacement {
                cfg.sampler.mode = SampleMode::WithReplacement;
            }
        }
        Command::Monitor(a) => {
            layer(&mut cfg.plateau.window, a.window);
            layer(&mut cfg.plateau.tolerance, a.tol);
            layer(&mut cfg.plateau.mean_floor, a.floor);
        }
        Command::RolloutSim(a) => {
            layer(&mut cfg.schema, a.schema.clone());
            layer(&mut cfg.seed, a.seed);
            let r = &mut cfg.rollout;
            layer(&mut r.steps, a.steps);
            layer(&mut r.group_size, a.group_size);
            layer(&mut r.prompts_per_step, a.prompts_per_step);
            layer(&mut r.initial_jitter, a.initial_jitter);
            layer(&mut r.final_jitter, a.final_jitter);
            layer(&mut r.halt_step, a.halt_step);
            if let Some(m) = &a.mode {
                r.mode = parse_enum::<RewardMode>("--mode", m)?;
            }
        }
        Command::Encode(a) => {
            layer(&mut cfg.fps, a.fps);
            let e = &mut cfg.encode;
            layer(&mut e.min_tokens, a.min_tokens);
            layer(&mut e.total_tokens, a.total_tokens);
            layer(&mut e.group_size, a.group_size);
            layer(&mut e.scheme, a.scheme.clone());
            layer(&mut e.format, a.format.clone());
            if let Some(n) = &a.native {
                let (w, h) = n
                    .split_once(['x', 'X'])
                    .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)))
                    .ok_or_else(|| usage(format!("--native {n}: expected WIDTHxHEIGHT")))?;
                e.native_width = w;
                e.native_height = h;
            }
        }
        Command::Annotate(a) => {
            layer(&mut cfg.seed, a.seed);
            layer(&mut cfg.lint_config, a.lint_config.clone().map(Some));
            let an = &mut cfg.annotate;
            layer(&mut an.backend, a.backend.clone());
            layer(&mut an.endpoint, a.endpoint.clone().map(Some));
            layer(&mut an.concurrency, a.concurrency);
        }
        Command::AuditServe(a) => {
            layer(&mut cfg.service.config, a.service_config.clone().map(Some));
            layer(&mut cfg.service.bind, a.bind.clone().map(Some));
        }
        Command::Export(a) => layer(&mut cfg.service.config, a.service_config.clone().map(Some)),
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsReport {
    schema_version: u32,
    datasets: Vec<DatasetStats>,
    total: DatasetStats,
}

fn stats_table(r: &StatsReport) -> String {
    let width = r.datasets.iter().map(|d| d.name.len()).max().unwrap_or(0).max("dataset".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>11}  {:>12}", "dataset", "videos", "annotations", "mean_dur_s");
    for d in r.datasets.iter().chain([&r.total]) {
        let mean = d.mean_duration.map(|m| format!("{m:.1}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>11}  {:>12}",
            d.name, d.num_videos, d.num_annotations, mean
        );
    }
    out
}

fn stats(a: &crate::StatsArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let datasets: Vec<Dataset> = a
        .data
        .iter()
        .map(|p| load("--data", p, &cfg.schema).map(|l| l.dataset))
        .collect::<Result<_>>()?;
    let report = StatsReport {
        schema_version: 1,
        datasets: datasets.iter().map(dataset_stats).collect(),
        total: combined_stats("total", &datasets),
    };
    if json {
        print_json(&report);
    } else {
        print!("{}", stats_table(&report));
    }
    Ok(())
}

fn lint_summary(r: &LintReport) -> String {
    let mut out = format!("{} annotations, {} findings\n", r.total, r.findings.len());
    for (k, rate) in &r.error_rates {
        let _ = writeln!(out, "  {:<22} {:>6.2}%", k.as_str(), rate * 100.0);
    }
    for (k, n) in &r.review_counts {
        let _ = writeln!(out, "  review:{:<15} {:>6}", format!("{k:?}").to_lowercase(), n);
    }
    out
}

fn lint(a: &crate::LintArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let loaded = load("--data", &a.data, &cfg.schema)?;
    let rules = lint_config(cfg.lint_config.as_deref())?;
    let report = lint_loaded(&loaded, &rules);
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.report {
        write_file(p, &(text.clone() + "\n"))?;
    }
    if json {
        println!("{text}");
    } else {
        print!("{}", lint_summary(&report));
    }
    Ok(())
}

fn parse(a: &crate::ParseArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let records = read_predictions(&a.pred, cfg.fps)?;
    write_file(&a.out, &to_jsonl(records.iter().map(|r| r.to_wire())))?;
    if let Some(p) = &a.failures {
        write_file(p, &to_jsonl(records.iter().filter(|r| r.parsed.is_err()).map(|r| r.to_wire())))?;
    }
    let mut failures = std::collections::BTreeMap::new();
    for r in &records {
        if let Err(f) = r.parsed {
            *failures.entry(f.as_str()).or_insert(0usize) += 1;
        }
    }
    let parsed = records.len() - failures.values().sum::<usize>();
    if json {
        print_json(&json!({"total": records.len(), "parsed": parsed, "failures": failures}));
    } else {
        println!("{parsed} of {} parsed", records.len());
        for (k, n) in &failures {
            println!("  {k}: {n}");
        }
    }
    Ok(())
}

fn eval(a: &crate::EvalArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let datasets: Vec<Dataset> = a
        .gt
        .iter()
        .map(|p| load("--gt", p, &cfg.schema).map(|l| l.dataset))
        .collect::<Result<_>>()?;
    let preds = read_predictions(&a.pred, cfg.fps)?;
    let report = evaluate(&datasets, &preds, cfg.unparsed_policy)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.out {
        write_file(p, &(text.clone() + "\n"))?;
    }
    if json {
        println!("{text}");
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn read_difficulties(path: &Path) -> Result<Vec<DifficultyRecord>> {
    require_file("--difficulties", path)?;
    let file = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DifficultyRecord = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(r);
    }
    Ok(out)
}

fn sample(a: &crate::SampleArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let mut records = match (&a.difficulties, &a.gt, &a.pred) {
        (Some(d), _, _) => read_difficulties(d)?,
        (None, Some(gt), Some(pred)) => {
            let gt = load("--gt", gt, &cfg.schema)?.dataset;
            compute_difficulties(&gt, &read_predictions(pred, cfg.fps)?)?
        }
        _ => return Err(usage("either --difficulties or --gt with --pred is required")),
    };
    let s = &cfg.sampler;
    let difficulties: Vec<f64> = records.iter().map(|r| r.difficulty).collect();
    let source = estimate_density(&difficulties, s.bins)?;
    let target = GaussianTarget::new(s.mu, s.sigma)?;
    gaussian_weights(&mut records, &target, &source)?;
    let selection = sample_subset(&records, a.n, cfg.seed, s.mode, s.bins)?;
    let by_id: std::collections::HashMap<&str, &DifficultyRecord> =
        records.iter().map(|r| (r.annotation_id.as_str(), r)).collect();
    write_file(&a.out, &to_jsonl(selection.ids.iter().map(|id| by_id[id.as_str()])))?;
    let hist = json!({
        "schema_version": 1,
        "mu": s.mu,
        "sigma": s.sigma,
        "bins": s.bins,
        "source": source,
        "selected": selection.histogram,
    });
    if let Some(p) = &a.hist {
        write_file(p, &(serde_json::to_string_pretty(&hist)? + "\n"))?;
    }
    let mean = selection.ids.iter().map(|id| by_id[id.as_str()].difficulty).sum::<f64>() / a.n.max(1) as f64;
    if json {
        print_json(&json!({"population": records.len(), "selected": selection.ids.len(), "mean_difficulty": mean}));
    } else {
        println!(
            "selected {} of {} (mean difficulty {mean:.4})",
            selection.ids.len(),
            records.len()
        );
    }
    Ok(())
}

fn plateau_rule(cfg: &GlobalConfig) -> PlateauRule {
    PlateauRule {
        window: cfg.plateau.window,
        tolerance: cfg.plateau.tolerance,
        mean_floor: cfg.plateau.mean_floor,
    }
}

fn monitor(a: &crate::MonitorArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    require_file("--trace", &a.trace)?;
    let text = fs::read_to_string(&a.trace)?;
    let trace = RewardTrace::from_jsonl(&text).with_context(|| format!("reading {}", a.trace.display()))?;
    let stop = detect_plateau(&trace, &plateau_rule(cfg))?;
    if json {
        print_json(&json!({"steps": trace.len(), "stop_step": stop}));
    } else {
        match stop {
            Some(s) => println!("stop at step {s}"),
            None => println!("no plateau"),
        }
    }
    Ok(())
}

fn rollout(a: &crate::RolloutArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let gt = load("--gt", &a.gt, &cfg.schema)?.dataset;
    let prompts: Vec<SimPrompt> = gt
        .annotations()
        .iter()
        .map(|ann| SimPrompt {
            prompt_id: ann.annotation_id.clone(),
            gt: ann.span,
            duration: gt.video(&ann.video_id).map(|v| v.duration).unwrap_or(ann.span.end()),
        })
        .collect();
    let r = &cfg.rollout;
    let policy = MockPolicy {
        initial_jitter: r.initial_jitter,
        final_jitter: r.final_jitter,
        halt_step: r.halt_step,
    };
    let sim = RolloutSimConfig {
        group_size: r.group_size,
        prompts_per_step: r.prompts_per_step,
        steps: r.steps,
        seed: cfg.seed,
    };
    let reward = RewardConfig {
        mode: r.mode,
        format_reward_value: r.format_reward,
    };
    let (trace, groups) = simulate_rollouts(&prompts, &policy, &sim, &reward)?;
    write_file(&a.trace, &trace.to_jsonl())?;
    if let Some(p) = &a.groups {
        write_file(p, &to_jsonl(&groups))?;
    }
    let stop = detect_plateau(&trace, &plateau_rule(cfg))?;
    if json {
        print_json(&json!({"steps": trace.len(), "groups": groups.len(), "stop_step": stop}));
    } else {
        println!("{} steps, {} groups", trace.len(), groups.len());
        match stop {
            Some(s) => println!("plateau: stop at step {s}"),
            None => println!("plateau: none"),
        }
    }
    Ok(())
}

fn encode(a: &crate::EncodeArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let e = &cfg.encode;
    let scheme: Scheme = e.scheme.parse().map_err(|m: String| usage(format!("--scheme: {m}")))?;
    let format: TimestampFormat = e.format.parse().map_err(|m: String| usage(format!("--format: {m}")))?;
    let frame_cfg = FrameConfig {
        fps: cfg.fps,
        group_size: e.group_size,
        min_tokens: e.min_tokens,
        total_tokens: e.total_tokens,
        native_resolution: (e.native_width, e.native_height),
        patch: PatchGeometry {
            patch_px: e.patch_px,
            spatial_merge: e.spatial_merge,
        },
    };
    let plan = plan_frames(a.duration, &frame_cfg)?;
    let artifact = build_artifact(&plan, scheme, format)?;
    let doc = PlanDocument::new(frame_cfg, plan, artifact);
    let text = doc.to_json() + "\n";
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None if !json => print!("{text}"),
        None => {}
    }
    let (w, h) = doc.plan.effective_resolution;
    if json {
        print!("{text}");
    } else if a.out.is_some() {
        println!(
            "{} frames in {} groups, {} tokens per group, effective {w}x{h}",
            doc.plan.n_frames(),
            doc.plan.n_groups(),
            doc.plan.per_group_tokens
        );
    }
    Ok(())
}

/// Video records from a JSONL file; annotation lines work too.
fn read_videos(path: &Path) -> Result<Vec<VideoMeta>> {
    require_file("--videos", path)?;
    let file = BufReader::new(fs::File::open(path)?);
    let mut seen = std::collections::BTreeMap::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: VideoMeta =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if !(v.duration.is_finite() && v.duration > 0.0) {
            bail!("{} line {}: video '{}' has invalid duration {}", path.display(), i + 1, v.video_id, v.duration);
        }
        seen.entry(v.video_id.clone()).or_insert(v);
    }
    Ok(seen.into_values().collect())
}

fn annotate(a: &crate::AnnotateArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let videos = read_videos(&a.videos)?;
    let an = &cfg.annotate;
    let sampling = SamplingConfig {
        bins: an.duration_bins,
        max_duration: an.max_duration,
        overflow_fraction: an.overflow_fraction,
    };
    let selection = sample_videos_uniform_duration(&videos, a.n, &sampling, cfg.seed)?;
    let backend: Box<dyn AnnotatorBackend> = match an.backend.as_str() {
        "mock" => Box::new(MockBackend {
            seed: cfg.seed,
            events_per_video: an.events_per_video,
        }),
        "http" => {
            let endpoint = an
                .endpoint
                .clone()
                .ok_or_else(|| usage("--backend http needs --endpoint (or VTG_BACKEND_ENDPOINT)"))?;
            Box::new(HttpBackend::new(endpoint, an.token.clone(), Duration::from_millis(an.timeout_ms)))
        }
        other => return Err(usage(format!("--backend {other}: expected mock or http"))),
    };
    log::info!("annotating {} videos with the {} backend", selection.videos.len(), backend.name());
    let retry = RetryPolicy {
        max_attempts: an.max_attempts,
        ..RetryPolicy::default()
    };
    let outcomes = annotate_all(&selection.videos, backend.as_ref(), &retry, an.concurrency);
    let mut candidates = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(o) => {
                for w in &o.warnings {
                    log::warn!("{w}");
                }
                candidates.extend(o.candidates);
            }
            Err(e) => {
                log::error!("{e}");
                failed.push(e.to_string());
            }
        }
    }
    let rules = lint_config(cfg.lint_config.as_deref())?;
    let acc = accept_candidates("auto_annotated", candidates, &selection.videos, &rules)?;
    write_file(&a.out, &to_jsonl(&acc.candidates))?;
    if let Some(p) = &a.accepted {
        write_file(p, &dataset_to_string(&acc.dataset))?;
    }
    let report = json!({
        "videos": selection.videos.len(),
        "failed_videos": failed.len(),
        "candidates": acc.candidates.len(),
        "accepted": acc.accepted(),
        "rejected": acc.rejected(),
        "error_rates": acc.error_rates(),
    });
    if json {
        print_json(&report);
    } else {
        println!(
            "{} videos, {} candidates, {} accepted, {} rejected",
            selection.videos.len(),
            acc.candidates.len(),
            acc.accepted(),
            acc.rejected()
        );
    }
    if !failed.is_empty() {
        bail!("{} video(s) failed at the backend", failed.len());
    }
    Ok(())
}

fn service_config(cfg: &GlobalConfig) -> Result<(PathBuf, vtg_audit::ServiceConfig)> {
    let path = cfg
        .service
        .config
        .clone()
        .ok_or_else(|| usage("--service-config (or VTG_SERVICE_CONFIG) is required"))?;
    require_file("--service-config", &path)?;
    let svc = vtg_audit::ServiceConfig::load(&path)?;
    Ok((path, svc))
}

fn serve(cfg: &GlobalConfig) -> Result<()> {
    let (_, mut svc) = service_config(cfg)?;
    if let Some(b) = &cfg.service.bind {
        svc.bind = b.clone();
    }
    log::warn!("audit service listening on {}", svc.bind);
    vtg_audit::http::run(&svc)?;
    Ok(())
}

fn export(a: &crate::ExportArgs, cfg: &GlobalConfig, json: bool) -> Result<()> {
    let (path, svc) = service_config(cfg)?;
    let log_path = svc
        .event_log
        .clone()
        .ok_or_else(|| anyhow!("{} has no event_log; nothing to export", path.display()))?;
    let store = vtg_audit::AuditStore::from_log(svc.load_datasets()?, svc.worker_ids(), &log_path)
        .with_context(|| format!("replaying {}", log_path.display()))?;
    let e = store.export(&a.dataset)?;
    write_file(&a.out, &e.jsonl)?;
    if let Some(p) = &a.ledger {
        write_file(p, &(serde_json::to_string_pretty(&e.ledger)? + "\n"))?;
    }
    if json {
        print_json(&json!({"dataset": e.dataset, "ledger": e.ledger}));
    } else {
        let l = e.ledger;
        println!(
            "{}: {} rewritten, {} refined, {} discarded, {} confirmed, {} flagged, {} unaudited",
            e.dataset, l.rewritten, l.refined, l.discarded, l.confirmed, l.flagged_unrefined, l.unaudited
        );
    }
    Ok(())
}
