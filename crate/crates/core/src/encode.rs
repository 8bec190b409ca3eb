//! Frame schedules, token budgets and timestamp-encoding artifacts.
//!
//! Everything here is data: the planner decides which frames to sample, how
//! many visual tokens each merged group of frames may use, and how
//! timestamps should be presented to the model. Nothing is rasterized or
//! tokenized.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PLAN_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FPS: f64 = 2.0;
pub const DEFAULT_GROUP_SIZE: usize = 2;
pub const DEFAULT_MIN_TOKENS: u32 = 16;
pub const DEFAULT_TOTAL_TOKENS: u32 = 3584;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("duration must be positive and finite (got {0})")]
    BadDuration(f64),
    #[error("fps must be positive and finite (got {0})")]
    BadFps(f64),
    #[error("group size must be at least 1")]
    BadGroupSize,
    #[error("min_tokens must be at least 1")]
    BadMinTokens,
    #[error("native resolution must be positive (got {0}x{1})")]
    BadResolution(u32, u32),
    #[error("patch geometry must be positive")]
    BadPatch,
    #[error(
        "token budget infeasible: {n_groups} groups x {min_tokens} min tokens > {total_tokens}; \
         longest feasible duration is {max_duration:.1}s"
    )]
    Infeasible {
        n_groups: usize,
        min_tokens: u32,
        total_tokens: u32,
        max_duration: f64,
    },
    #[error("plan has no frames")]
    EmptyPlan,
    #[error("scheme {0:?} has no payload to render")]
    NoPayload(Scheme),
}

/// How pixels map to visual tokens.
///
/// The defaults describe a ViT with 14-pixel patches whose 2x2 neighbours
/// are merged into one token, so one token covers a 28x28 pixel square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub patch_px: u32,
    pub spatial_merge: u32,
}

impl Default for PatchGeometry {
    fn default() -> Self {
        Self {
            patch_px: 14,
            spatial_merge: 2,
        }
    }
}

impl PatchGeometry {
    /// Side length in pixels of the square covered by one token.
    pub fn token_side_px(&self) -> u32 {
        self.patch_px * self.spatial_merge
    }

    /// Tokens for one group at the given resolution.
    pub fn tokens_for(&self, (w, h): (u32, u32)) -> u32 {
        let side = self.token_side_px() as f64;
        let cols = (w as f64 / side).round().max(1.0);
        let rows = (h as f64 / side).round().max(1.0);
        (cols * rows) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub fps: f64,
    pub group_size: usize,
    pub min_tokens: u32,
    pub total_tokens: u32,
    pub native_resolution: (u32, u32),
    pub patch: PatchGeometry,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS,
            group_size: DEFAULT_GROUP_SIZE,
            min_tokens: DEFAULT_MIN_TOKENS,
            total_tokens: DEFAULT_TOTAL_TOKENS,
            native_resolution: (1280, 720),
            patch: PatchGeometry::default(),
        }
    }
}

impl FrameConfig {
    fn validate(&self) -> Result<(), EncodeError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(EncodeError::BadFps(self.fps));
        }
        if self.group_size == 0 {
            return Err(EncodeError::BadGroupSize);
        }
        if self.min_tokens == 0 {
            return Err(EncodeError::BadMinTokens);
        }
        let (w, h) = self.native_resolution;
        if w == 0 || h == 0 {
            return Err(EncodeError::BadResolution(w, h));
        }
        if self.patch.patch_px == 0 || self.patch.spatial_merge == 0 {
            return Err(EncodeError::BadPatch);
        }
        Ok(())
    }

    /// Longest duration whose groups all fit at `min_tokens`.
    pub fn max_feasible_duration(&self) -> f64 {
        let groups = (self.total_tokens / self.min_tokens) as usize;
        (groups * self.group_size) as f64 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub duration: f64,
    pub fps: f64,
    pub frame_times: Vec<f64>,
    pub group_size: usize,
    pub per_group_tokens: u32,
    pub effective_resolution: (u32, u32),
}

impl FramePlan {
    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn n_groups(&self) -> usize {
        self.frame_times.len().div_ceil(self.group_size)
    }

    pub fn total_tokens_used(&self) -> u64 {
        self.n_groups() as u64 * self.per_group_tokens as u64
    }

    /// Time of the first frame in each group.
    pub fn group_start_times(&self) -> Vec<f64> {
        self.frame_times.iter().step_by(self.group_size).copied().collect()
    }
}

/// Number of frames `k/fps` strictly before `duration`.
fn frame_count(duration: f64, fps: f64) -> usize {
    let raw = duration * fps;
    let mut n = raw.ceil() as usize;
    // guard against k/fps landing on the duration through rounding
    while n > 0 && (n - 1) as f64 / fps >= duration {
        n -= 1;
    }
    n.max(1)
}

pub fn plan_frames(duration: f64, cfg: &FrameConfig) -> Result<FramePlan, EncodeError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(EncodeError::BadDuration(duration));
    }
    cfg.validate()?;
    let n_frames = frame_count(duration, cfg.fps);
    let frame_times: Vec<f64> = (0..n_frames).map(|k| k as f64 / cfg.fps).collect();
    let n_groups = n_frames.div_ceil(cfg.group_size);

    if cfg.min_tokens as u64 * n_groups as u64 > cfg.total_tokens as u64 {
        return Err(EncodeError::Infeasible {
            n_groups,
            min_tokens: cfg.min_tokens,
            total_tokens: cfg.total_tokens,
            max_duration: cfg.max_feasible_duration(),
        });
    }

    let native_tokens = cfg.patch.tokens_for(cfg.native_resolution);
    let share = cfg.total_tokens / n_groups as u32;
    let per_group_tokens = share.min(native_tokens).max(cfg.min_tokens);
    let effective_resolution = scale_to_tokens(cfg.native_resolution, per_group_tokens, &cfg.patch);

    Ok(FramePlan {
        duration,
        fps: cfg.fps,
        frame_times,
        group_size: cfg.group_size,
        per_group_tokens,
        effective_resolution,
    })
}

/// Isotropically scales `native` so its area matches `tokens` token squares,
/// never upscaling.
pub fn scale_to_tokens(native: (u32, u32), tokens: u32, patch: &PatchGeometry) -> (u32, u32) {
    let (w, h) = (native.0 as f64, native.1 as f64);
    let side = patch.token_side_px() as f64;
    let target_area = tokens as f64 * side * side;
    let scale = (target_area / (w * h)).sqrt().min(1.0);
    (
        ((w * scale).round() as u32).max(1),
        ((h * scale).round() as u32).max(1),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    InterleavedPrefix,
    NoninterleavedInstruction,
    VisualOverlay,
    /// Handled inside the model's position embeddings; carries no payload.
    PositionEmbeddingPassthrough,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interleaved" | "interleaved_prefix" => Ok(Self::InterleavedPrefix),
            "noninterleaved" | "noninterleaved_instruction" => Ok(Self::NoninterleavedInstruction),
            "overlay" | "visual_overlay" => Ok(Self::VisualOverlay),
            "passthrough" | "position_embedding_passthrough" => Ok(Self::PositionEmbeddingPassthrough),
            other => Err(format!("unknown scheme '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    #[default]
    RawSeconds,
    FrameIndex,
}

impl std::str::FromStr for TimestampFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" | "raw_seconds" => Ok(Self::RawSeconds),
            "frame" | "frame_index" => Ok(Self::FrameIndex),
            other => Err(format!("unknown timestamp format '{other}'")),
        }
    }
}

fn seconds_label(t: f64) -> String {
    format!("{t:.1}s")
}

/// One prefix per group, placed before that group's visual tokens.
pub fn render_interleaved(plan: &FramePlan, format: TimestampFormat) -> Result<Vec<String>, EncodeError> {
    if plan.frame_times.is_empty() {
        return Err(EncodeError::EmptyPlan);
    }
    Ok(match format {
        TimestampFormat::RawSeconds => plan.group_start_times().into_iter().map(seconds_label).collect(),
        TimestampFormat::FrameIndex => (1..=plan.n_groups()).map(|i| i.to_string()).collect(),
    })
}

pub fn render_noninterleaved(plan: &FramePlan) -> Result<String, EncodeError> {
    if plan.frame_times.is_empty() {
        return Err(EncodeError::EmptyPlan);
    }
    let mut times = String::new();
    for (i, t) in plan.frame_times.iter().enumerate() {
        if i > 0 {
            times.push_str(", ");
        }
        let _ = write!(times, "{t:.1}");
    }
    Ok(format!(
        "This video samples {} frames of a {:.1}-second video at {} seconds.",
        plan.n_frames(),
        plan.duration,
        times
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    BottomLeft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub frame_index: usize,
    pub text: String,
    pub color: String,
    pub size_pt: u32,
    pub anchor: Anchor,
}

/// Per-frame overlay descriptors: red 40 pt text in the bottom-left corner.
pub fn overlay_spec(plan: &FramePlan, format: TimestampFormat) -> Vec<Overlay> {
    plan.frame_times
        .iter()
        .enumerate()
        .map(|(i, &t)| Overlay {
            frame_index: i,
            text: match format {
                TimestampFormat::RawSeconds => seconds_label(t),
                TimestampFormat::FrameIndex => (i + 1).to_string(),
            },
            color: "red".to_string(),
            size_pt: 40,
            anchor: Anchor::BottomLeft,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Prefixes(Vec<String>),
    Instruction(String),
    Overlays(Vec<Overlay>),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingArtifact {
    pub scheme: Scheme,
    pub timestamp_format: TimestampFormat,
    pub payload: Payload,
}

pub fn build_artifact(
    plan: &FramePlan,
    scheme: Scheme,
    format: TimestampFormat,
) -> Result<EncodingArtifact, EncodeError> {
    let payload = match scheme {
        Scheme::InterleavedPrefix => Payload::Prefixes(render_interleaved(plan, format)?),
        Scheme::NoninterleavedInstruction => Payload::Instruction(render_noninterleaved(plan)?),
        Scheme::VisualOverlay => Payload::Overlays(overlay_spec(plan, format)),
        Scheme::PositionEmbeddingPassthrough => Payload::None,
    };
    Ok(EncodingArtifact {
        scheme,
        timestamp_format: format,
        payload,
    })
}

/// The document written by `vtg encode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub schema_version: u32,
    pub config: FrameConfig,
    pub plan: FramePlan,
    pub artifact: EncodingArtifact,
}

impl PlanDocument {
    pub fn new(config: FrameConfig, plan: FramePlan, artifact: EncodingArtifact) -> Self {
        Self {
            schema_version: PLAN_SCHEMA_VERSION,
            config,
            plan,
            artifact,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}
