//! Duration-balanced video sampling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vtg_core::VideoMeta;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("asked for {n} videos but only {available} are available")]
    NotEnough { n: usize, available: usize },
    #[error("need at least one duration bin")]
    NoBins,
    #[error("max_duration must be positive (got {0})")]
    BadMaxDuration(f64),
    #[error("overflow_fraction must lie in [0, 1] (got {0})")]
    BadOverflowFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Equal-width bins over `[0, max_duration]`.
    pub bins: usize,
    pub max_duration: f64,
    /// Share of the sample drawn from videos longer than `max_duration`.
    pub overflow_fraction: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            bins: 8,
            max_duration: 240.0,
            overflow_fraction: 0.05,
        }
    }
}

impl SamplingConfig {
    fn validate(&self) -> Result<(), SamplingError> {
        if self.bins == 0 {
            return Err(SamplingError::NoBins);
        }
        if !(self.max_duration.is_finite() && self.max_duration > 0.0) {
            return Err(SamplingError::BadMaxDuration(self.max_duration));
        }
        if !(0.0..=1.0).contains(&self.overflow_fraction) {
            return Err(SamplingError::BadOverflowFraction(self.overflow_fraction));
        }
        Ok(())
    }

    /// Bin of a duration; index `bins` is the overflow bin.
    pub fn bin_of(&self, duration: f64) -> usize {
        if duration > self.max_duration {
            return self.bins;
        }
        let width = self.max_duration / self.bins as f64;
        ((duration / width) as usize).min(self.bins - 1)
    }
}

/// Per-bin supply and allocation; the last entry is the overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPlan {
    pub supply: Vec<usize>,
    pub allocated: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Chosen videos sorted by id.
    pub videos: Vec<VideoMeta>,
    pub plan: BinPlan,
}

/// Spreads `total` over bins as evenly as their supply allows. Bins that
/// run out are filled completely and the rest is shared among the others;
/// leftover units go to the lowest-index open bins.
fn water_fill(supply: &[usize], total: usize) -> Vec<usize> {
    let mut alloc = vec![0usize; supply.len()];
    let mut open: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0).collect();
    let mut remaining = total;
    while remaining > 0 && !open.is_empty() {
        let share = remaining / open.len();
        let short: Vec<usize> = open.iter().copied().filter(|&i| supply[i] <= share).collect();
        if short.is_empty() {
            let extra = remaining % open.len();
            for (k, &i) in open.iter().enumerate() {
                alloc[i] = share + usize::from(k < extra);
            }
            break;
        }
        for &i in &short {
            alloc[i] = supply[i];
            remaining -= supply[i];
        }
        open.retain(|i| !short.contains(i));
    }
    alloc
}

/// Picks `n` videos with durations spread evenly over the configured bins,
/// plus a small share of longer videos. Deterministic in `seed`.
pub fn sample_videos_uniform_duration(
    videos: &[VideoMeta],
    n: usize,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Selection, SamplingError> {
    cfg.validate()?;
    if n > videos.len() {
        return Err(SamplingError::NotEnough {
            n,
            available: videos.len(),
        });
    }
    let mut by_bin: Vec<Vec<&VideoMeta>> = vec![Vec::new(); cfg.bins + 1];
    for v in videos {
        by_bin[cfg.bin_of(v.duration)].push(v);
    }
    for bin in &mut by_bin {
        bin.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    }
    let supply: Vec<usize> = by_bin.iter().map(Vec::len).collect();
    let overflow_supply = supply[cfg.bins];

    let overflow_target = ((n as f64 * cfg.overflow_fraction).round() as usize).min(overflow_supply);
    let mut allocated = water_fill(&supply[..cfg.bins], n - overflow_target);
    let regular: usize = allocated.iter().sum();
    // regular bins ran dry: top up from the long videos
    let overflow = (n - regular).min(overflow_supply);
    allocated.push(overflow);
    debug_assert_eq!(allocated.iter().sum::<usize>(), n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<VideoMeta> = Vec::with_capacity(n);
    for (bin, &k) in by_bin.iter().zip(&allocated) {
        for i in index::sample(&mut rng, bin.len(), k) {
            chosen.push(bin[i].clone());
        }
    }
    chosen.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(Selection {
        videos: chosen,
        plan: BinPlan { supply, allocated },
    })
}
