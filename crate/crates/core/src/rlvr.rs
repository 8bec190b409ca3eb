//! GRPO reward accounting for temporal grounding.
//!
//! Covers the model-free half of RLVR training: splitting responses into
//! thinking and answer regions, IoU rewards with an optional format bonus,
//! group-relative advantages, reward-plateau early-stop detection, and a
//! seeded rollout simulator that produces reward traces without a model.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{parse_prediction, ParseConfig};
use crate::span::{temporal_iou, TimeSpan};

pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_TOLERANCE: f64 = 0.02;
pub const DEFAULT_MEAN_FLOOR: f64 = 1e-6;
/// Rollouts per prompt.
pub const DEFAULT_GROUP_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlvrError {
    #[error("a group needs at least 2 responses (got {0})")]
    GroupTooSmall(usize),
    #[error("group lengths disagree: {responses} responses, {rewards} rewards")]
    LengthMismatch { responses: usize, rewards: usize },
    #[error("response lacks a <think> block followed by an <answer> block")]
    MissingStructure,
    #[error("trace of {len} steps is too short for window {window} (need at least {need})")]
    TraceTooShort { len: usize, window: usize, need: usize },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("trace steps must be strictly increasing (step {0} repeats or goes back)")]
    NonMonotoneSteps(u64),
    #[error("trace value at step {0} is not finite")]
    NonFinite(u64),
    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
    #[error("rollout simulation needs at least one ground-truth span")]
    NoPrompts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    ThinkingFree,
    ThinkingBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub mode: RewardMode,
    /// Bonus for a well-formed think-then-answer response.
    pub format_reward_value: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            mode: RewardMode::ThinkingFree,
            format_reward_value: 1.0,
        }
    }
}

fn think_answer_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    CELL.get_or_init(|| {
        Regex::new(r"(?s)^\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*$")
            .expect("static regex compiles")
    })
}

fn answer_only_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    CELL.get_or_init(|| Regex::new(r"(?s)<answer>(.*?)</answer>").expect("static regex compiles"))
}

/// Splits a response into `(thinking, answer)`.
///
/// Thinking-based mode requires exactly a `<think>` block followed by an
/// `<answer>` block. Thinking-free mode returns an empty thinking region and
/// either the tagged answer or the whole text.
pub fn split_think_answer(raw_text: &str, mode: RewardMode) -> Result<(String, String), RlvrError> {
    match mode {
        RewardMode::ThinkingBased => {
            let caps = think_answer_re()
                .captures(raw_text)
                .ok_or(RlvrError::MissingStructure)?;
            Ok((caps[1].trim().to_string(), caps[2].trim().to_string()))
        }
        RewardMode::ThinkingFree => {
            let answer = answer_only_re()
                .captures(raw_text)
                .map(|c| c[1].trim().to_string())
                .unwrap_or_else(|| raw_text.trim().to_string());
            Ok((String::new(), answer))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub raw_text: String,
    pub thinking: String,
    pub answer: String,
    pub parsed_span: Option<TimeSpan>,
    /// Whether the response follows the think-then-answer layout.
    pub well_formed: bool,
}

impl Response {
    pub fn from_text(raw_text: &str, mode: RewardMode, parse_cfg: &ParseConfig) -> Self {
        let structured = split_think_answer(raw_text, RewardMode::ThinkingBased);
        let well_formed = structured.is_ok();
        let (thinking, answer) = match mode {
            RewardMode::ThinkingBased => structured.unwrap_or_else(|_| {
                let answer = answer_only_re()
                    .captures(raw_text)
                    .map(|c| c[1].trim().to_string())
                    .unwrap_or_default();
                (String::new(), answer)
            }),
            RewardMode::ThinkingFree => split_think_answer(raw_text, mode)
                .expect("thinking-free split never fails"),
        };
        let parsed_span = parse_prediction(&answer, parse_cfg).ok().map(|p| p.span);
        Self {
            raw_text: raw_text.to_string(),
            thinking,
            answer,
            parsed_span,
            well_formed,
        }
    }

    /// Response carrying an already-parsed span.
    pub fn from_span(span: Option<TimeSpan>) -> Self {
        Self {
            raw_text: String::new(),
            thinking: String::new(),
            answer: String::new(),
            parsed_span: span,
            well_formed: false,
        }
    }
}

/// IoU accuracy reward; 0 when the answer has no parsable span.
pub fn accuracy_reward(resp: &Response, gt: &TimeSpan) -> f64 {
    resp.parsed_span.map_or(0.0, |s| temporal_iou(&s, gt))
}

pub fn compute_reward(resp: &Response, gt: &TimeSpan, cfg: &RewardConfig) -> f64 {
    let acc = accuracy_reward(resp, gt);
    match cfg.mode {
        RewardMode::ThinkingFree => acc,
        RewardMode::ThinkingBased => {
            acc + if resp.well_formed {
                cfg.format_reward_value
            } else {
                0.0
            }
        }
    }
}

/// Rewards centered on the group mean.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RlvrError> {
    if rewards.len() < 2 {
        return Err(RlvrError::GroupTooSmall(rewards.len()));
    }
    if let Some(&bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(RlvrError::NonFiniteReward(bad));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Population standard deviation of a group's rewards.
pub fn group_std(rewards: &[f64]) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub responses: Vec<Response>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(
        prompt_id: impl Into<String>,
        responses: Vec<Response>,
        rewards: Vec<f64>,
    ) -> Result<Self, RlvrError> {
        if responses.len() != rewards.len() {
            return Err(RlvrError::LengthMismatch {
                responses: responses.len(),
                rewards: rewards.len(),
            });
        }
        let advantages = group_advantages(&rewards)?;
        Ok(Self {
            prompt_id: prompt_id.into(),
            responses,
            rewards,
            advantages,
        })
    }

    /// Scores every response against `gt` and builds the group.
    pub fn score(
        prompt_id: impl Into<String>,
        responses: Vec<Response>,
        gt: &TimeSpan,
        cfg: &RewardConfig,
    ) -> Result<Self, RlvrError> {
        let rewards = responses.iter().map(|r| compute_reward(r, gt, cfg)).collect();
        Self::new(prompt_id, responses, rewards)
    }

    pub fn size(&self) -> usize {
        self.responses.len()
    }

    pub fn reward_std(&self) -> f64 {
        group_std(&self.rewards)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: u64,
    pub mean_reward: f64,
    /// Within-group reward standard deviation, averaged over the step's groups.
    pub group_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    steps: Vec<TracePoint>,
}

impl RewardTrace {
    pub fn new(steps: Vec<TracePoint>) -> Result<Self, RlvrError> {
        let mut trace = Self::default();
        for p in steps {
            trace.push(p)?;
        }
        Ok(trace)
    }

    /// Appends a step; steps must strictly increase.
    pub fn push(&mut self, p: TracePoint) -> Result<(), RlvrError> {
        if !(p.mean_reward.is_finite() && p.group_std.is_finite()) {
            return Err(RlvrError::NonFinite(p.step));
        }
        if let Some(last) = self.steps.last() {
            if p.step <= last.step {
                return Err(RlvrError::NonMonotoneSteps(p.step));
            }
        }
        self.steps.push(p);
        Ok(())
    }

    pub fn steps(&self) -> &[TracePoint] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceFileError> {
        let mut trace = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: TracePoint = serde_json::from_str(line).map_err(|e| TraceFileError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            trace.push(p)?;
        }
        Ok(trace)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.steps {
            out.push_str(&serde_json::to_string(p).expect("trace points serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] RlvrError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauRule {
    pub window: usize,
    pub tolerance: f64,
    pub mean_floor: f64,
}

impl Default for PlateauRule {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            tolerance: DEFAULT_TOLERANCE,
            mean_floor: DEFAULT_MEAN_FLOOR,
        }
    }
}

/// `(max - min) / max(|mean|, floor)` of a window.
pub fn relative_range(values: &[f64], floor: f64) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (hi - lo) / mean.abs().max(floor)
}

/// First step at which both the mean reward and the within-group std have
/// flattened out.
///
/// For trace position `s >= 2W`, the window is positions `s-W..=s`; the
/// first `W` positions only ever serve as warm-up. Returns the `step` value
/// of the first position where both series' relative range is at most the
/// tolerance.
pub fn detect_plateau(trace: &RewardTrace, rule: &PlateauRule) -> Result<Option<u64>, RlvrError> {
    let w = rule.window;
    if w == 0 {
        return Err(RlvrError::ZeroWindow);
    }
    let steps = trace.steps();
    if steps.len() < 2 * w {
        return Err(RlvrError::TraceTooShort {
            len: steps.len(),
            window: w,
            need: 2 * w,
        });
    }
    let rewards: Vec<f64> = steps.iter().map(|p| p.mean_reward).collect();
    let stds: Vec<f64> = steps.iter().map(|p| p.group_std).collect();
    for s in 2 * w..steps.len() {
        let flat = |series: &[f64]| relative_range(&series[s - w..=s], rule.mean_floor) <= rule.tolerance;
        if flat(&rewards) && flat(&stds) {
            return Ok(Some(steps[s].step));
        }
    }
    Ok(None)
}

/// Seeded stand-in for a policy: predictions are the ground truth with
/// Gaussian jitter on both endpoints, shrinking linearly to `final_jitter`
/// at `halt_step` and constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockPolicy {
    pub initial_jitter: f64,
    pub final_jitter: f64,
    pub halt_step: u64,
}

impl MockPolicy {
    pub fn jitter_at(&self, step: u64) -> f64 {
        if self.halt_step == 0 || step >= self.halt_step {
            return self.final_jitter;
        }
        let frac = step as f64 / self.halt_step as f64;
        self.initial_jitter + (self.final_jitter - self.initial_jitter) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSimConfig {
    pub group_size: usize,
    pub prompts_per_step: usize,
    pub steps: u64,
    pub seed: u64,
}

impl Default for RolloutSimConfig {
    fn default() -> Self {
        Self {
            group_size: DEFAULT_GROUP_SIZE,
            prompts_per_step: 8,
            steps: 310,
            seed: 0,
        }
    }
}

/// A prompt for simulation: ground-truth span and video duration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPrompt {
    pub prompt_id: String,
    pub gt: TimeSpan,
    pub duration: f64,
}

/// One simulated group as written to the groups file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub step: u64,
    pub prompt_id: String,
    pub spans: Vec<Option<[f64; 2]>>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Runs the mock policy over the prompts and returns the per-step trace
/// and every scored group. Prompts are visited round-robin.
pub fn simulate_rollouts(
    prompts: &[SimPrompt],
    policy: &MockPolicy,
    cfg: &RolloutSimConfig,
    reward_cfg: &RewardConfig,
) -> Result<(RewardTrace, Vec<GroupRecord>), RlvrError> {
    if prompts.is_empty() {
        return Err(RlvrError::NoPrompts);
    }
    if cfg.group_size < 2 {
        return Err(RlvrError::GroupTooSmall(cfg.group_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = RewardTrace::default();
    let mut groups = Vec::new();
    let mut cursor = 0usize;
    for step in 0..cfg.steps {
        let jitter = policy.jitter_at(step);
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        let mut std_sum = 0.0;
        for _ in 0..cfg.prompts_per_step {
            let prompt = &prompts[cursor % prompts.len()];
            cursor += 1;
            let mut responses = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let mut s = prompt.gt.start() + jitter * sample_normal(&mut rng);
                let mut e = prompt.gt.end() + jitter * sample_normal(&mut rng);
                s = s.clamp(0.0, prompt.duration);
                e = e.clamp(0.0, prompt.duration);
                let span = TimeSpan::from_unordered(s, e).ok().map(|(span, _)| span);
                responses.push(Response::from_span(span));
            }
            let group = RolloutGroup::score(prompt.prompt_id.clone(), responses, &prompt.gt, reward_cfg)?;
            reward_sum += group.rewards.iter().sum::<f64>();
            reward_count += group.size();
            std_sum += group.reward_std();
            groups.push(GroupRecord {
                step,
                prompt_id: group.prompt_id.clone(),
                spans: group
                    .responses
                    .iter()
                    .map(|r| r.parsed_span.map(|s| [s.start(), s.end()]))
                    .collect(),
                rewards: group.rewards.clone(),
                advantages: group.advantages.clone(),
            });
        }
        trace.push(TracePoint {
            step,
            mean_reward: reward_sum / reward_count.max(1) as f64,
            group_std: std_sum / cfg.prompts_per_step.max(1) as f64,
        })?;
    }
    Ok((trace, groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn span(a: f64, b: f64) -> TimeSpan {
        TimeSpan::new(a, b).unwrap()
    }

    #[test]
    fn split_modes() {
        let text = "<think>look around 10s</think><answer>10.0 to 20.0</answer>";
        assert_eq!(
            split_think_answer(text, RewardMode::ThinkingBased).unwrap(),
            ("look around 10s".to_string(), "10.0 to 20.0".to_string())
        );
        assert_eq!(
            split_think_answer("10.0 to 20.0", RewardMode::ThinkingFree).unwrap(),
            (String::new(), "10.0 to 20.0".to_string())
        );
        assert_eq!(
            split_think_answer("<answer>1 to 2</answer>", RewardMode::ThinkingBased),
            Err(RlvrError::MissingStructure)
        );
        assert_eq!(
            split_think_answer("<answer>1 to 2</answer><think>x</think>", RewardMode::ThinkingBased),
            Err(RlvrError::MissingStructure)
        );
    }

    #[test]
    fn rewards() {
        let cfg_free = RewardConfig::default();
        let cfg_think = RewardConfig {
            mode: RewardMode::ThinkingBased,
            format_reward_value: 1.0,
        };
        let pc = ParseConfig::default();
        let gt = span(10.0, 20.0);

        let exact = Response::from_text("10.0 to 20.0", RewardMode::ThinkingFree, &pc);
        assert_eq!(compute_reward(&exact, &gt, &cfg_free), 1.0);

        let junk = Response::from_text("I cannot tell", RewardMode::ThinkingFree, &pc);
        assert_eq!(compute_reward(&junk, &gt, &cfg_free), 0.0);

        // (0,10) vs gt (5,15): IoU 1/3, plus the format bonus
        let gt2 = span(5.0, 15.0);
        let think = Response::from_text(
            "<think>the door opens early</think><answer>0.0 to 10.0</answer>",
            RewardMode::ThinkingBased,
            &pc,
        );
        let r = compute_reward(&think, &gt2, &cfg_think);
        assert!((r - (1.0 + 1.0 / 3.0)).abs() < 1e-12);

        let no_think = Response::from_text("<answer>0.0 to 10.0</answer>", RewardMode::ThinkingBased, &pc);
        assert!((compute_reward(&no_think, &gt2, &cfg_think) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn thinking_free_matches_accuracy_term() {
        let pc = ParseConfig::default();
        let gt = span(3.0, 9.0);
        let based = Response::from_text(
            "<think>hmm</think><answer>4.0 to 8.0</answer>",
            RewardMode::ThinkingBased,
            &pc,
        );
        let free = Response::from_text("4.0 to 8.0", RewardMode::ThinkingFree, &pc);
        let think_cfg = RewardConfig {
            mode: RewardMode::ThinkingBased,
            format_reward_value: 0.5,
        };
        assert_eq!(
            compute_reward(&free, &gt, &RewardConfig::default()),
            accuracy_reward(&based, &gt)
        );
        assert!((compute_reward(&based, &gt, &think_cfg) - accuracy_reward(&based, &gt) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantages(&[1.0, 0.0]).unwrap(), vec![0.5, -0.5]);
        assert_eq!(group_advantages(&[1.0]), Err(RlvrError::GroupTooSmall(1)));
    }

    #[test]
    fn group_construction_checks_lengths() {
        let rs = vec![Response::from_span(None); 3];
        assert!(matches!(
            RolloutGroup::new("p", rs, vec![1.0, 0.0]),
            Err(RlvrError::LengthMismatch { .. })
        ));
    }

    fn flat_trace(n: u64, reward: f64) -> RewardTrace {
        RewardTrace::new(
            (0..n)
                .map(|step| TracePoint {
                    step,
                    mean_reward: reward,
                    group_std: 0.1,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_trace_stops_at_first_evaluable_step() {
        let rule = PlateauRule {
            window: 10,
            ..PlateauRule::default()
        };
        assert_eq!(detect_plateau(&flat_trace(50, 0.6), &rule).unwrap(), Some(20));
    }

    #[test]
    fn increasing_trace_never_stops() {
        let trace = RewardTrace::new(
            (0..200)
                .map(|step| TracePoint {
                    step,
                    mean_reward: 0.1 + 0.004 * step as f64,
                    group_std: 0.2,
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(detect_plateau(&trace, &PlateauRule::default()).unwrap(), None);
    }

    #[test]
    fn short_trace_is_an_error() {
        assert!(matches!(
            detect_plateau(&flat_trace(59, 0.5), &PlateauRule::default()),
            Err(RlvrError::TraceTooShort { need: 60, .. })
        ));
    }

    #[test]
    fn trace_validation_and_jsonl() {
        let bad = vec![
            TracePoint { step: 1, mean_reward: 0.1, group_std: 0.1 },
            TracePoint { step: 1, mean_reward: 0.1, group_std: 0.1 },
        ];
        assert_eq!(RewardTrace::new(bad), Err(RlvrError::NonMonotoneSteps(1)));
        let t = flat_trace(3, 0.25);
        let text = t.to_jsonl();
        assert!(text.starts_with("{\"step\":0,\"mean_reward\":0.25,\"group_std\":0.1}\n"));
        assert_eq!(RewardTrace::from_jsonl(&text).unwrap(), t);
    }

    fn prompts() -> Vec<SimPrompt> {
        (0..100)
            .map(|i| SimPrompt {
                prompt_id: format!("p{i}"),
                gt: span(5.0 + (i % 7) as f64, 20.0 + (i % 11) as f64),
                duration: 40.0,
            })
            .collect()
    }

    #[test]
    fn zero_jitter_gives_perfect_flat_trace() {
        let policy = MockPolicy {
            initial_jitter: 0.0,
            final_jitter: 0.0,
            halt_step: 0,
        };
        let cfg = RolloutSimConfig {
            steps: 20,
            ..Default::default()
        };
        let (trace, groups) = simulate_rollouts(&prompts(), &policy, &cfg, &RewardConfig::default()).unwrap();
        assert!(trace.steps().iter().all(|p| p.mean_reward == 1.0 && p.group_std == 0.0));
        assert!(groups.iter().all(|g| g.advantages.iter().all(|&a| a == 0.0)));
    }

    #[test]
    fn halting_schedule_plateaus_after_halt() {
        let halt = 120;
        let policy = MockPolicy {
            initial_jitter: 6.0,
            final_jitter: 0.0,
            halt_step: halt,
        };
        let cfg = RolloutSimConfig {
            steps: 300,
            seed: 11,
            ..Default::default()
        };
        let (trace, _) = simulate_rollouts(&prompts(), &policy, &cfg, &RewardConfig::default()).unwrap();
        let rule = PlateauRule::default();
        let stop = detect_plateau(&trace, &rule).unwrap().expect("plateau");
        assert!(stop >= halt && stop <= halt + rule.window as u64, "stop {stop}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let policy = MockPolicy {
            initial_jitter: 3.0,
            final_jitter: 0.5,
            halt_step: 50,
        };
        let cfg = RolloutSimConfig {
            steps: 60,
            seed: 5,
            ..Default::default()
        };
        let a = simulate_rollouts(&prompts(), &policy, &cfg, &RewardConfig::default()).unwrap();
        let b = simulate_rollouts(&prompts(), &policy, &cfg, &RewardConfig::default()).unwrap();
        assert_eq!(a.0.to_jsonl(), b.0.to_jsonl());
        assert_eq!(a.1, b.1);
    }

    proptest! {
        #[test]
        fn advantages_center_and_shift(rewards in prop::collection::vec(-5.0f64..5.0, 2..16), c in -10.0f64..10.0) {
            let adv = group_advantages(&rewards).unwrap();
            prop_assert!(adv.iter().sum::<f64>().abs() <= 1e-9);
            let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
            let adv2 = group_advantages(&shifted).unwrap();
            for (a, b) in adv.iter().zip(&adv2) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn plateau_monotone_in_tolerance(
            seed in any::<u64>(),
            eps in 0.001f64..0.1,
            bump in 0.0f64..0.1,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let trace = RewardTrace::new((0..120).map(|step| TracePoint {
                step,
                mean_reward: 0.5 + 0.3 * (1.0 - (-(step as f64) / 30.0).exp()) + 0.01 * rng.random::<f64>(),
                group_std: 0.2 + 0.01 * rng.random::<f64>(),
            }).collect()).unwrap();
            let tight = PlateauRule { window: 10, tolerance: eps, mean_floor: 1e-6 };
            let loose = PlateauRule { tolerance: eps + bump, ..tight };
            if let Some(s) = detect_plateau(&trace, &tight).unwrap() {
                let l = detect_plateau(&trace, &loose).unwrap();
                prop_assert!(l.is_some() && l.unwrap() <= s);
            }
        }
    }
}
