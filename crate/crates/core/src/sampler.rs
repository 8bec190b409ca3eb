//! Difficulty-aware training subset selection.
//!
//! Each sample's difficulty is `1 - IoU` of an offline prediction. Samples
//! are weighted by `g(d) / p(d)`, a Gaussian target over the empirical
//! difficulty density, so the selected subset's difficulty distribution
//! follows the target rather than the source distribution.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::parse::PredictionRecord;
use crate::span::temporal_iou;

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_MU: f64 = 0.05;
pub const DEFAULT_SIGMA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("prediction on line {line} references unknown annotation '{annotation_id}'")]
    UnknownAnnotation { line: usize, annotation_id: String },
    #[error("duplicate prediction for annotation '{0}'")]
    DuplicatePrediction(String),
    #[error("density estimation needs at least one sample")]
    Empty,
    #[error("density estimation needs at least 2 bins (got {0})")]
    TooFewBins(usize),
    #[error("difficulty {0} is outside [0, 1]")]
    BadDifficulty(f64),
    #[error("sigma must be positive and finite (got {0})")]
    BadSigma(f64),
    #[error("difficulty {difficulty} falls in a bin with zero density")]
    ZeroDensity { difficulty: f64 },
    #[error("cannot draw {n} items without replacement from {available}")]
    NotEnough { n: usize, available: usize },
    #[error("all sampling weights are zero")]
    AllZeroWeights,
    #[error("weight {0} is negative or not finite")]
    BadWeight(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub annotation_id: String,
    pub difficulty: f64,
    #[serde(default)]
    pub weight: f64,
    /// Set when the offline prediction could not be parsed; the record then
    /// carries maximal difficulty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsed: bool,
}

/// Difficulty `1 - IoU` for each offline prediction. Unparsable predictions
/// get difficulty 1.
pub fn compute_difficulties(
    gt: &Dataset,
    offline_preds: &[PredictionRecord],
) -> Result<Vec<DifficultyRecord>, SamplerError> {
    let mut seen = HashSet::new();
    offline_preds
        .iter()
        .map(|p| {
            let Some(a) = gt.annotation(&p.annotation_id) else {
                return Err(SamplerError::UnknownAnnotation {
                    line: p.line,
                    annotation_id: p.annotation_id.clone(),
                });
            };
            if !seen.insert(p.annotation_id.as_str()) {
                return Err(SamplerError::DuplicatePrediction(p.annotation_id.clone()));
            }
            let (difficulty, unparsed) = match p.parsed {
                Ok(span) => (1.0 - temporal_iou(&span, &a.span), false),
                Err(_) => (1.0, true),
            };
            Ok(DifficultyRecord {
                annotation_id: p.annotation_id.clone(),
                difficulty,
                weight: 0.0,
                unparsed,
            })
        })
        .collect()
}

/// A density on difficulty values in `[0, 1]`.
pub trait Density {
    fn density_at(&self, d: f64) -> f64;
}

/// The uniform density on `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformDensity;

impl Density for UniformDensity {
    fn density_at(&self, _d: f64) -> f64 {
        1.0
    }
}

/// Piecewise-constant histogram density over `[0, 1]` with equal-width bins.
/// The top edge belongs to the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramDensity {
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
}

pub fn bin_index(d: f64, bins: usize) -> usize {
    ((d * bins as f64).floor() as usize).min(bins - 1)
}

impl HistogramDensity {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        1.0 / self.bins() as f64
    }

    /// Integral of the density over `[0, 1]`.
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }
}

impl Density for HistogramDensity {
    fn density_at(&self, d: f64) -> f64 {
        self.density[bin_index(d, self.bins())]
    }
}

pub fn estimate_density(difficulties: &[f64], bins: usize) -> Result<HistogramDensity, SamplerError> {
    if bins < 2 {
        return Err(SamplerError::TooFewBins(bins));
    }
    if difficulties.is_empty() {
        return Err(SamplerError::Empty);
    }
    let mut counts = vec![0usize; bins];
    for &d in difficulties {
        if !(0.0..=1.0).contains(&d) {
            return Err(SamplerError::BadDifficulty(d));
        }
        counts[bin_index(d, bins)] += 1;
    }
    let scale = bins as f64 / difficulties.len() as f64;
    let density = counts.iter().map(|&c| c as f64 * scale).collect();
    Ok(HistogramDensity { counts, density })
}

/// Gaussian target `g(d; mu, sigma^2)` on the difficulty axis, conceptually
/// truncated to `[0, 1]`. Truncation is handled by renormalizing weights over
/// the candidate set rather than analytically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTarget {
    mu: f64,
    sigma: f64,
}

impl GaussianTarget {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, SamplerError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(SamplerError::BadSigma(sigma));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn pdf(&self, d: f64) -> f64 {
        let z = (d - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }
}

impl Default for GaussianTarget {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            sigma: DEFAULT_SIGMA,
        }
    }
}

/// Sets `weight = g(d) / p(d)` on every record, renormalized to sum to 1.
pub fn gaussian_weights(
    records: &mut [DifficultyRecord],
    target: &GaussianTarget,
    density: &dyn Density,
) -> Result<(), SamplerError> {
    let mut total = 0.0;
    for r in records.iter_mut() {
        if !(0.0..=1.0).contains(&r.difficulty) {
            return Err(SamplerError::BadDifficulty(r.difficulty));
        }
        let p = density.density_at(r.difficulty);
        if p <= 0.0 {
            return Err(SamplerError::ZeroDensity {
                difficulty: r.difficulty,
            });
        }
        r.weight = target.pdf(r.difficulty) / p;
        total += r.weight;
    }
    if records.is_empty() {
        return Ok(());
    }
    if total <= 0.0 || !total.is_finite() {
        return Err(SamplerError::AllZeroWeights);
    }
    for r in records.iter_mut() {
        r.weight /= total;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected annotation ids in draw order.
    pub ids: Vec<String>,
    /// Realized difficulty histogram of the selection.
    pub histogram: HistogramDensity,
}

/// Fenwick tree over non-negative weights, supporting point updates and
/// prefix-sum search.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        Self { tree }
    }

    fn add(&mut self, index: usize, delta: f64) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Draws `n` records with probability proportional to their weights.
///
/// Without replacement this is a sequence of weighted draws, each removing
/// the chosen item. The output depends only on the inputs and `seed`.
pub fn sample_subset(
    records: &[DifficultyRecord],
    n: usize,
    seed: u64,
    mode: SampleMode,
    bins: usize,
) -> Result<Selection, SamplerError> {
    if bins < 2 {
        return Err(SamplerError::TooFewBins(bins));
    }
    if let Some(bad) = records.iter().find(|r| !(r.weight.is_finite() && r.weight >= 0.0)) {
        return Err(SamplerError::BadWeight(bad.weight));
    }
    if mode == SampleMode::WithoutReplacement && n > records.len() {
        return Err(SamplerError::NotEnough {
            n,
            available: records.len(),
        });
    }
    let weights: Vec<f64> = records.iter().map(|r| r.weight).collect();
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if n > 0 && positive == 0 {
        return Err(SamplerError::AllZeroWeights);
    }
    if mode == SampleMode::WithoutReplacement && n > positive {
        return Err(SamplerError::NotEnough {
            n,
            available: positive,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = Fenwick::new(&weights);
    let mut remaining: f64 = weights.iter().sum();
    let mut taken = vec![false; records.len()];
    let mut chosen = Vec::with_capacity(n);
    while chosen.len() < n {
        let u: f64 = rng.random();
        let mut idx = tree.find(u * remaining);
        // Rounding can land on an exhausted or zero-weight slot; step to the
        // nearest live one.
        if taken[idx] || weights[idx] == 0.0 {
            match (idx..records.len())
                .chain((0..idx).rev())
                .find(|&j| !taken[j] && weights[j] > 0.0)
            {
                Some(j) => idx = j,
                None => return Err(SamplerError::AllZeroWeights),
            }
        }
        chosen.push(idx);
        if mode == SampleMode::WithoutReplacement {
            taken[idx] = true;
            tree.add(idx, -weights[idx]);
            remaining = (remaining - weights[idx]).max(0.0);
            if chosen.len() % 1024 == 0 {
                // keep accumulated subtraction error from drifting
                let live: Vec<f64> = weights
                    .iter()
                    .zip(&taken)
                    .map(|(&w, &t)| if t { 0.0 } else { w })
                    .collect();
                remaining = live.iter().sum();
                tree = Fenwick::new(&live);
            }
        }
    }

    let difficulties: Vec<f64> = chosen.iter().map(|&i| records[i].difficulty).collect();
    let histogram = if difficulties.is_empty() {
        HistogramDensity {
            counts: vec![0; bins],
            density: vec![0.0; bins],
        }
    } else {
        estimate_density(&difficulties, bins)?
    };
    Ok(Selection {
        ids: chosen.iter().map(|&i| records[i].annotation_id.clone()).collect(),
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: usize, d: f64) -> DifficultyRecord {
        DifficultyRecord {
            annotation_id: format!("a{id}"),
            difficulty: d,
            weight: 0.0,
            unparsed: false,
        }
    }

    #[test]
    fn concentrated_density() {
        let h = estimate_density(&[0.5; 7], 10).unwrap();
        assert_eq!(h.density[5], 10.0);
        assert!(h.density.iter().enumerate().all(|(i, &x)| i == 5 || x == 0.0));
        assert!((h.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_samples_two_bins() {
        let h = estimate_density(&[0.1, 0.9], 2).unwrap();
        assert_eq!(h.density, vec![1.0, 1.0]);
    }

    #[test]
    fn density_edges_and_errors() {
        let h = estimate_density(&[0.0, 1.0], 4).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 1]);
        assert_eq!(estimate_density(&[], 4), Err(SamplerError::Empty));
        assert_eq!(estimate_density(&[0.5], 1), Err(SamplerError::TooFewBins(1)));
        assert_eq!(estimate_density(&[1.5], 4), Err(SamplerError::BadDifficulty(1.5)));
    }

    #[test]
    fn single_record_weight_is_one() {
        let mut rs = vec![rec(0, 0.83)];
        gaussian_weights(&mut rs, &GaussianTarget::new(0.1, 0.05).unwrap(), &UniformDensity).unwrap();
        assert!((rs[0].weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_sigma_ratio() {
        let t = GaussianTarget::new(0.3, 0.1).unwrap();
        let mut rs = vec![rec(0, 0.3), rec(1, 0.4)];
        gaussian_weights(&mut rs, &t, &UniformDensity).unwrap();
        assert!((rs[0].weight / rs[1].weight - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_offsets_equal_weight() {
        let t = GaussianTarget::new(0.5, 0.2).unwrap();
        let mut rs = vec![rec(0, 0.35), rec(1, 0.65)];
        gaussian_weights(&mut rs, &t, &UniformDensity).unwrap();
        assert!((rs[0].weight - rs[1].weight).abs() < 1e-12);
    }

    #[test]
    fn zero_density_guard() {
        let h = estimate_density(&[0.1], 2).unwrap();
        let mut rs = vec![rec(0, 0.9)];
        assert!(matches!(
            gaussian_weights(&mut rs, &GaussianTarget::default(), &h),
            Err(SamplerError::ZeroDensity { .. })
        ));
        assert!(GaussianTarget::new(0.5, 0.0).is_err());
    }

    #[test]
    fn full_population_without_replacement_is_identity_set() {
        let mut rs: Vec<_> = (0..50).map(|i| rec(i, i as f64 / 50.0)).collect();
        gaussian_weights(&mut rs, &GaussianTarget::default(), &UniformDensity).unwrap();
        let sel = sample_subset(&rs, 50, 3, SampleMode::WithoutReplacement, 10).unwrap();
        let mut ids = sel.ids.clone();
        ids.sort();
        let mut expected: Vec<_> = rs.iter().map(|r| r.annotation_id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
        assert_eq!(sel.histogram.counts.iter().sum::<usize>(), 50);
    }

    #[test]
    fn sampling_errors() {
        let mut rs: Vec<_> = (0..5).map(|i| rec(i, 0.5)).collect();
        assert_eq!(
            sample_subset(&rs, 1, 0, SampleMode::WithReplacement, 10),
            Err(SamplerError::AllZeroWeights)
        );
        for r in &mut rs {
            r.weight = 1.0;
        }
        assert_eq!(
            sample_subset(&rs, 6, 0, SampleMode::WithoutReplacement, 10),
            Err(SamplerError::NotEnough { n: 6, available: 5 })
        );
        assert_eq!(sample_subset(&rs, 12, 0, SampleMode::WithReplacement, 10).unwrap().ids.len(), 12);
    }

    #[test]
    fn fenwick_search() {
        let t = Fenwick::new(&[1.0, 0.0, 2.0, 3.0]);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.9), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(5.99), 3);
    }

    proptest! {
        #[test]
        fn scale_invariance(
            ws in prop::collection::vec(0.01f64..10.0, 5..60),
            c in 0.001f64..1000.0,
            seed in any::<u64>(),
            replace in any::<bool>(),
        ) {
            let mode = if replace { SampleMode::WithReplacement } else { SampleMode::WithoutReplacement };
            let base: Vec<_> = ws.iter().enumerate().map(|(i, &w)| DifficultyRecord {
                weight: w,
                ..rec(i, (i as f64 / ws.len() as f64).min(1.0))
            }).collect();
            let scaled: Vec<_> = base.iter().map(|r| DifficultyRecord { weight: r.weight * c, ..r.clone() }).collect();
            let n = ws.len() / 2;
            let a = sample_subset(&base, n, seed, mode, 10).unwrap();
            let b = sample_subset(&scaled, n, seed, mode, 10).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn without_replacement_never_repeats(
            ws in prop::collection::vec(0.0f64..5.0, 1..80),
            seed in any::<u64>(),
        ) {
            let rs: Vec<_> = ws.iter().enumerate().map(|(i, &w)| DifficultyRecord { weight: w, ..rec(i, 0.5) }).collect();
            let positive = ws.iter().filter(|&&w| w > 0.0).count();
            let sel = sample_subset(&rs, positive, seed, SampleMode::WithoutReplacement, 4).unwrap();
            let unique: HashSet<_> = sel.ids.iter().collect();
            prop_assert_eq!(unique.len(), positive);
        }
    }
}
