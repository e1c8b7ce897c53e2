//! Multiplicative-weights frame-importance bandit.
//!
//! Each of a video's T frames is an arm. A learnable distribution p over
//! frames drives subset sampling; after each reward pass the weights move by
//!
//! ```text
//! w_t ← w_t · exp( η_fs · Σ_k (r̄_k − r̄_baseline) · 1[t ∈ S_k] )
//! p_t = w_t / Σ_j w_j
//! ```
//!
//! so frames that appeared in above-baseline subsets gain mass. Weights are
//! kept strictly positive by a floor, and exponents are clamped so adversarial
//! reward sequences cannot overflow. Probabilities are invariant to any
//! positive rescaling of the weights, which lets the update renormalize
//! weights freely for numeric stability.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Applied after each update, before renormalization; keeps every frame alive.
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Exponent clamp; never binds for |e| ≤ 30 under benign rewards.
pub const EXPONENT_CLAMP: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("invalid frame grid: {0}")]
    InvalidGrid(String),
    #[error("invalid clip scores: {0}")]
    InvalidScores(String),
    #[error("invalid update input: {0}")]
    InvalidUpdate(String),
    #[error("subset size {requested} exceeds frame count {available}")]
    SubsetTooLarge { requested: usize, available: usize },
}

/// How the weights were seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Uniform,
    #[serde(rename = "clip")]
    ClipScores,
}

/// The bandit's state for one video: weights w, probabilities p and a step
/// counter over a T-frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDistribution {
    weights: Vec<f64>,
    probs: Vec<f64>,
    init_kind: InitKind,
    step_count: u64,
}

impl FrameDistribution {
    /// Uniform weights over `num_frames` frames.
    pub fn uniform(num_frames: usize) -> Result<Self, BanditError> {
        if num_frames == 0 {
            return Err(BanditError::InvalidGrid("frame count must be at least 1".into()));
        }
        let w = 1.0 / num_frames as f64;
        Ok(Self {
            weights: vec![w; num_frames],
            probs: vec![w; num_frames],
            init_kind: InitKind::Uniform,
            step_count: 0,
        })
    }

    /// Weights proportional to per-frame similarity scores.
    pub fn from_clip_scores(scores: &[f64]) -> Result<Self, BanditError> {
        if scores.is_empty() {
            return Err(BanditError::InvalidGrid("frame count must be at least 1".into()));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(BanditError::InvalidScores(
                "scores must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(BanditError::InvalidScores("scores must not all be zero".into()));
        }
        let weights: Vec<f64> = scores.iter().map(|s| s / total).collect();
        let probs = weights.clone();
        Ok(Self {
            weights,
            probs,
            init_kind: InitKind::ClipScores,
            step_count: 0,
        })
    }

    /// CLIP initialization when scores are available, uniform otherwise.
    pub fn init(num_frames: usize, clip_scores: Option<&[f64]>) -> Result<Self, BanditError> {
        match clip_scores {
            Some(scores) => {
                if scores.len() != num_frames {
                    return Err(BanditError::InvalidScores(format!(
                        "expected {num_frames} scores, got {}",
                        scores.len()
                    )));
                }
                Self::from_clip_scores(scores)
            }
            None => Self::uniform(num_frames),
        }
    }

    /// Reassembles a distribution from persisted state, revalidating it.
    pub fn from_parts(
        weights: Vec<f64>,
        init_kind: InitKind,
        step_count: u64,
    ) -> Result<Self, BanditError> {
        if weights.is_empty() {
            return Err(BanditError::InvalidGrid("frame count must be at least 1".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(BanditError::InvalidScores(
                "persisted weights must be finite and strictly positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let probs = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            weights,
            probs,
            init_kind,
            step_count,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn init_kind(&self) -> InitKind {
        self.init_kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Total probability mass on the given frame indices.
    pub fn mass_on(&self, frames: &[usize]) -> f64 {
        frames.iter().map(|&t| self.probs[t]).sum()
    }

    /// One multiplicative-weights step. Deterministic; returns the advanced
    /// distribution.
    pub fn update(&self, input: &BanditUpdateInput) -> Result<Self, BanditError> {
        input.validate(self.num_frames())?;
        let k = input.per_subset_rewards.len() as f64;
        // Mean of identical values is the value itself; computing it that way
        // keeps the equal-reward update an exact identity.
        let first = input.per_subset_rewards[0];
        let baseline = if input.per_subset_rewards.iter().all(|&r| r == first) {
            first
        } else {
            input.per_subset_rewards.iter().sum::<f64>() / k
        };

        let mut exponents = vec![0.0; self.num_frames()];
        for (subset, &reward) in input.subsets.iter().zip(&input.per_subset_rewards) {
            let advantage = reward - baseline;
            for &t in subset {
                exponents[t] += input.eta_fs * advantage;
            }
        }

        // No signal (equal rewards, or K = 1): the update is an exact
        // identity on weights and probabilities.
        if exponents.iter().all(|&e| e == 0.0) {
            return Ok(Self {
                weights: self.weights.clone(),
                probs: self.probs.clone(),
                init_kind: self.init_kind,
                step_count: self.step_count + 1,
            });
        }

        let mut weights: Vec<f64> = self
            .weights
            .iter()
            .zip(&exponents)
            .map(|(w, e)| w * e.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp())
            .collect();
        // Rescale before flooring so the floor is meaningful at any weight
        // magnitude; scale invariance makes this invisible to probabilities.
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(BanditError::InvalidUpdate(format!(
                "weight sum became non-positive or non-finite ({total})"
            )));
        }
        for w in &mut weights {
            *w = (*w / total).max(WEIGHT_FLOOR);
        }
        let floored_total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / floored_total).collect();

        Ok(Self {
            weights,
            probs,
            init_kind: self.init_kind,
            step_count: self.step_count + 1,
        })
    }

    /// Draws `size` distinct frame indices according to the current
    /// probabilities, sorted ascending.
    pub fn sample_subset<R: Rng + ?Sized>(
        &self,
        size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, BanditError> {
        sample_without_replacement(&self.probs, size, rng)
    }
}

/// One bandit step's evidence: the K sampled subsets, their average rewards,
/// and the frame-selection learning rate.
#[derive(Debug, Clone)]
pub struct BanditUpdateInput {
    pub subsets: Vec<Vec<usize>>,
    pub per_subset_rewards: Vec<f64>,
    pub eta_fs: f64,
}

impl BanditUpdateInput {
    pub fn new(
        subsets: Vec<Vec<usize>>,
        per_subset_rewards: Vec<f64>,
        eta_fs: f64,
    ) -> Self {
        Self {
            subsets,
            per_subset_rewards,
            eta_fs,
        }
    }

    fn validate(&self, num_frames: usize) -> Result<(), BanditError> {
        if self.subsets.is_empty() {
            return Err(BanditError::InvalidUpdate("at least one subset required".into()));
        }
        if self.subsets.len() != self.per_subset_rewards.len() {
            return Err(BanditError::InvalidUpdate(format!(
                "{} subsets but {} rewards",
                self.subsets.len(),
                self.per_subset_rewards.len()
            )));
        }
        if !self.eta_fs.is_finite() {
            return Err(BanditError::InvalidUpdate("eta_fs must be finite".into()));
        }
        if self.per_subset_rewards.iter().any(|r| !r.is_finite()) {
            return Err(BanditError::InvalidUpdate("rewards must be finite".into()));
        }
        for (k, subset) in self.subsets.iter().enumerate() {
            let mut seen = vec![false; num_frames];
            for &t in subset {
                if t >= num_frames {
                    return Err(BanditError::InvalidUpdate(format!(
                        "subset {k} references frame {t} outside grid of {num_frames}"
                    )));
                }
                if seen[t] {
                    return Err(BanditError::InvalidUpdate(format!(
                        "subset {k} repeats frame {t}"
                    )));
                }
                seen[t] = true;
            }
        }
        Ok(())
    }
}

/// Sequential weighted draw without replacement: each pick is proportional to
/// the remaining probabilities, renormalized over unchosen indices. Returns
/// indices sorted ascending. Shared by the bandit and by inference-time frame
/// selection.
pub fn sample_without_replacement<R: Rng + ?Sized>(
    probs: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>, BanditError> {
    if count > probs.len() {
        return Err(BanditError::SubsetTooLarge {
            requested: count,
            available: probs.len(),
        });
    }
    let mut remaining = probs.to_vec();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().filter(|m| **m > 0.0).sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut last_alive = None;
            let mut hit = None;
            for (index, &mass) in remaining.iter().enumerate() {
                if mass <= 0.0 {
                    continue;
                }
                last_alive = Some(index);
                acc += mass;
                if target < acc {
                    hit = Some(index);
                    break;
                }
            }
            // Rounding can leave target marginally above the accumulated sum;
            // fall back to the last index with mass.
            hit.or(last_alive)
                .expect("positive total implies an index with mass")
        } else {
            // All remaining mass is zero (possible when count exceeds the
            // support); take the smallest unchosen index deterministically.
            remaining
                .iter()
                .position(|&m| m >= 0.0)
                .expect("count was validated against the grid size")
        };
        remaining[pick] = f64::NEG_INFINITY;
        chosen.push(pick);
    }
    chosen.sort_unstable();
    Ok(chosen)
}
