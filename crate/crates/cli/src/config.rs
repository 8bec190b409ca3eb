//! Layered configuration: flags > `VTG_*` environment > config file > defaults.
//!
//! Flags and their environment variables are declared together on the clap
//! arguments, so by the time a command runs each `Option` already holds the
//! flag or env value. [`GlobalConfig`] supplies the file and default layers.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vtg_core::metrics::UnparsedPolicy;
use vtg_core::rlvr::RewardMode;
use vtg_core::sampler::SampleMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: u64,
    pub fps: f64,
    /// Input schema for annotation files.
    pub schema: String,
    pub unparsed_policy: UnparsedPolicy,
    pub lint_config: Option<PathBuf>,
    pub sampler: SamplerSection,
    pub plateau: PlateauSection,
    pub encode: EncodeSection,
    pub rollout: RolloutSection,
    pub annotate: AnnotateSection,
    pub service: ServiceSection,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fps: vtg_core::parse::DEFAULT_FPS,
            schema: "native".into(),
            unparsed_policy: UnparsedPolicy::ScoreZero,
            lint_config: None,
            sampler: SamplerSection::default(),
            plateau: PlateauSection::default(),
            encode: EncodeSection::default(),
            rollout: RolloutSection::default(),
            annotate: AnnotateSection::default(),
            service: ServiceSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub mu: f64,
    pub sigma: f64,
    pub bins: usize,
    pub mode: SampleMode,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            mu: vtg_core::sampler::DEFAULT_MU,
            sigma: vtg_core::sampler::DEFAULT_SIGMA,
            bins: vtg_core::sampler::DEFAULT_BINS,
            mode: SampleMode::WithoutReplacement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauSection {
    pub window: usize,
    pub tolerance: f64,
    pub mean_floor: f64,
}

impl Default for PlateauSection {
    fn default() -> Self {
        Self {
            window: vtg_core::rlvr::DEFAULT_WINDOW,
            tolerance: vtg_core::rlvr::DEFAULT_TOLERANCE,
            mean_floor: vtg_core::rlvr::DEFAULT_MEAN_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeSection {
    pub group_size: usize,
    pub min_tokens: u32,
    pub total_tokens: u32,
    pub native_width: u32,
    pub native_height: u32,
    pub patch_px: u32,
    pub spatial_merge: u32,
    pub scheme: String,
    pub format: String,
}

impl Default for EncodeSection {
    fn default() -> Self {
        let f = vtg_core::encode::FrameConfig::default();
        Self {
            group_size: f.group_size,
            min_tokens: f.min_tokens,
            total_tokens: f.total_tokens,
            native_width: f.native_resolution.0,
            native_height: f.native_resolution.1,
            patch_px: f.patch.patch_px,
            spatial_merge: f.patch.spatial_merge,
            scheme: "interleaved".into(),
            format: "raw".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub group_size: usize,
    pub prompts_per_step: usize,
    pub steps: u64,
    pub initial_jitter: f64,
    pub final_jitter: f64,
    pub halt_step: u64,
    pub mode: RewardMode,
    pub format_reward: f64,
}

impl Default for RolloutSection {
    fn default() -> Self {
        let sim = vtg_core::rlvr::RolloutSimConfig::default();
        Self {
            group_size: sim.group_size,
            prompts_per_step: sim.prompts_per_step,
            steps: sim.steps,
            initial_jitter: 10.0,
            final_jitter: 1.0,
            halt_step: 200,
            mode: RewardMode::ThinkingFree,
            format_reward: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub backend: String,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub concurrency: usize,
    pub max_attempts: u32,
    pub events_per_video: usize,
    pub duration_bins: usize,
    pub max_duration: f64,
    pub overflow_fraction: f64,
    /// Read from `VTG_BACKEND_TOKEN` only; never from a file, never printed.
    #[serde(skip_deserializing, serialize_with = "redact")]
    pub token: Option<String>,
}

fn redact<S: serde::Serializer>(token: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
    match token {
        Some(_) => s.serialize_some("<set>"),
        None => s.serialize_none(),
    }
}

impl Default for AnnotateSection {
    fn default() -> Self {
        let sampling = vtg_reannotate::SamplingConfig::default();
        Self {
            backend: "mock".into(),
            endpoint: None,
            timeout_ms: 30_000,
            concurrency: 4,
            max_attempts: 3,
            events_per_video: 3,
            duration_bins: sampling.bins,
            max_duration: sampling.max_duration,
            overflow_fraction: sampling.overflow_fraction,
            token: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    /// Audit service TOML (workers, datasets, event log).
    pub config: Option<PathBuf>,
    pub bind: Option<String>,
}

impl GlobalConfig {
    /// Reads the config file if one is given; relative paths inside it
    /// resolve against its directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            None => GlobalConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut cfg: GlobalConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new("."));
                for slot in [&mut cfg.lint_config, &mut cfg.service.config] {
                    if let Some(rel) = slot.as_mut().filter(|x| x.is_relative()) {
                        *rel = base.join(&*rel);
                    }
                }
                cfg
            }
        };
        cfg.annotate.token = std::env::var("VTG_BACKEND_TOKEN").ok().filter(|t| !t.is_empty());
        Ok(cfg)
    }
}

/// Overwrites `slot` when a flag or env value is present.
pub fn layer<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: GlobalConfig = toml::from_str("seed = 9\n[encode]\nmin_tokens = 64\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.encode.min_tokens, 64);
        assert_eq!(cfg.encode.total_tokens, 3584);
        assert_eq!(cfg.sampler, SamplerSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<GlobalConfig>("sed = 9").is_err());
        assert!(toml::from_str::<GlobalConfig>("[annotate]\ntoken = \"x\"").is_err() || {
            // a token in a file is ignored rather than trusted
            toml::from_str::<GlobalConfig>("[annotate]\ntoken = \"x\"").unwrap().annotate.token.is_none()
        });
    }

    #[test]
    fn token_is_redacted() {
        let mut cfg = GlobalConfig::default();
        cfg.annotate.token = Some("secret".into());
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("secret"));
        assert!(json.contains("<set>"));
    }

    #[test]
    fn layering() {
        let mut v = 1;
        layer(&mut v, None);
        assert_eq!(v, 1);
        layer(&mut v, Some(5));
        assert_eq!(v, 5);
    }
}
