//! Batch-wide frequency reward over the K×N rollout pool of one question.
//!
//! All rollouts answering the same question — across every frame subset — form
//! one pool. Each rollout is rewarded by the empirical frequency of its
//! extracted answer within that pool, minus an entropy penalty that punishes
//! scattered pools:
//!
//! ```text
//! c(a)   = #{(k,n) : h(y_kn) = a}          p(a) = c(a) / Σ c(a')
//! H(p)   = −Σ p(a) ln p(a)                 H_norm = H / ln|A|   (0 when |A| = 1)
//! r(y)   = p(h(y)) − α·H_norm(p)
//! r̄_k    = mean over subset k's N rollouts (invalid rewards included)
//! r̄_base = mean over k of r̄_k
//! ```
//!
//! Invalid outputs are excluded from the frequency denominator (they are not
//! answers) but receive a fixed `invalid_reward` that still drags down their
//! subset's average. Pools with zero valid answers are degenerate: the report
//! carries a skip flag and downstream updates must not consume it.

use crate::extract::ExtractedAnswer;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("malformed pool: {0}")]
    MalformedPool(String),
    #[error("degenerate pool: no valid answers to vote over")]
    DegeneratePool,
}

/// Reward shaping knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardParams {
    /// Entropy-penalty strength α (≥ 0).
    pub alpha: f64,
    /// Fixed reward assigned to unparseable outputs.
    pub invalid_reward: f64,
    /// When set, invalid outputs also count in the frequency denominator
    /// (they still never form an answer of their own). Off by default.
    pub count_invalid_in_frequencies: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            invalid_reward: -1.0,
            count_invalid_in_frequencies: false,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(RewardError::MalformedPool(format!(
                "alpha must be a finite nonnegative value, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One extracted rollout answer, addressed by (subset, rollout) indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub subset_index: usize,
    pub rollout_index: usize,
    pub answer: ExtractedAnswer,
}

/// The K×N answers for one question. Construction enforces that every
/// (subset, rollout) slot appears exactly once.
#[derive(Debug, Clone)]
pub struct AnswerPool {
    entries: Vec<PoolEntry>,
    subsets: usize,
    rollouts_per_subset: usize,
}

impl AnswerPool {
    pub fn from_entries(
        subsets: usize,
        rollouts_per_subset: usize,
        entries: Vec<PoolEntry>,
    ) -> Result<Self, RewardError> {
        if subsets == 0 || rollouts_per_subset == 0 {
            return Err(RewardError::MalformedPool(
                "subset and rollout counts must be at least 1".into(),
            ));
        }
        if entries.len() != subsets * rollouts_per_subset {
            return Err(RewardError::MalformedPool(format!(
                "expected {} entries for K={subsets}, N={rollouts_per_subset}, got {}",
                subsets * rollouts_per_subset,
                entries.len()
            )));
        }
        let mut seen = vec![false; subsets * rollouts_per_subset];
        for entry in &entries {
            if entry.subset_index >= subsets || entry.rollout_index >= rollouts_per_subset {
                return Err(RewardError::MalformedPool(format!(
                    "slot ({}, {}) out of range",
                    entry.subset_index, entry.rollout_index
                )));
            }
            let slot = entry.subset_index * rollouts_per_subset + entry.rollout_index;
            if seen[slot] {
                return Err(RewardError::MalformedPool(format!(
                    "slot ({}, {}) appears more than once",
                    entry.subset_index, entry.rollout_index
                )));
            }
            seen[slot] = true;
        }
        Ok(Self {
            entries,
            subsets,
            rollouts_per_subset,
        })
    }

    /// Convenience constructor: answers laid out subset-major.
    pub fn from_answers(
        subsets: usize,
        rollouts_per_subset: usize,
        answers: Vec<ExtractedAnswer>,
    ) -> Result<Self, RewardError> {
        let entries = answers
            .into_iter()
            .enumerate()
            .map(|(i, answer)| PoolEntry {
                subset_index: i / rollouts_per_subset,
                rollout_index: i % rollouts_per_subset,
                answer,
            })
            .collect();
        Self::from_entries(subsets, rollouts_per_subset, entries)
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn subsets(&self) -> usize {
        self.subsets
    }

    pub fn rollouts_per_subset(&self) -> usize {
        self.rollouts_per_subset
    }
}

/// Everything the rest of the loop needs from one pool evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardReport {
    /// c(a) over valid answers.
    pub counts: BTreeMap<String, usize>,
    /// p(a) over valid answers; sums to 1 when any valid answer exists.
    pub freqs: BTreeMap<String, f64>,
    /// H_norm(p) ∈ [0, 1].
    pub entropy_norm: f64,
    /// r(y_kn), aligned with the pool's entry order.
    pub per_rollout: Vec<f64>,
    /// r̄_k for k = 0..K−1.
    pub per_subset: Vec<f64>,
    /// r̄_baseline = mean over k of r̄_k.
    pub baseline: f64,
    /// Modal answer, ties broken toward the lexicographically smallest token.
    pub majority: Option<String>,
    /// Zero valid answers: skip both the policy and the bandit update.
    pub degenerate: bool,
}

/// Eq-style counts and frequencies over the pool's valid answers.
pub fn compute_frequencies(
    pool: &AnswerPool,
) -> (BTreeMap<String, usize>, BTreeMap<String, f64>) {
    frequencies_with(pool, false)
}

fn frequencies_with(
    pool: &AnswerPool,
    count_invalid: bool,
) -> (BTreeMap<String, usize>, BTreeMap<String, f64>) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut denominator = 0usize;
    for entry in pool.entries() {
        if entry.answer.is_valid() {
            *counts.entry(entry.answer.as_str().to_string()).or_insert(0) += 1;
            denominator += 1;
        } else if count_invalid {
            denominator += 1;
        }
    }
    let mut freqs = BTreeMap::new();
    if denominator > 0 {
        for (answer, &count) in &counts {
            freqs.insert(answer.clone(), count as f64 / denominator as f64);
        }
    }
    (counts, freqs)
}

/// Normalized Shannon entropy of an answer distribution. Defined as 0 for a
/// single-answer distribution (the `ln|A| = 0` limit); `0·ln 0` is treated
/// as 0.
pub fn normalized_entropy(freqs: &BTreeMap<String, f64>) -> f64 {
    if freqs.len() <= 1 {
        return 0.0;
    }
    let entropy: f64 = freqs
        .values()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    (entropy / (freqs.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Full reward pass over one pool.
pub fn compute_rewards(pool: &AnswerPool, params: &RewardParams) -> Result<RewardReport, RewardError> {
    params.validate()?;
    let (counts, freqs) = frequencies_with(pool, params.count_invalid_in_frequencies);
    let degenerate = counts.is_empty();
    let entropy_norm = normalized_entropy(&freqs);

    let majority = counts
        .iter()
        .fold(None::<(&String, usize)>, |best, (answer, &count)| match best {
            Some((_, best_count)) if count <= best_count => best,
            _ => Some((answer, count)),
        })
        .map(|(answer, _)| answer.clone());

    let per_rollout: Vec<f64> = pool
        .entries()
        .iter()
        .map(|entry| {
            if entry.answer.is_valid() && !degenerate {
                freqs[entry.answer.as_str()] - params.alpha * entropy_norm
            } else {
                params.invalid_reward
            }
        })
        .collect();

    let mut per_subset = vec![0.0; pool.subsets()];
    for (entry, &reward) in pool.entries().iter().zip(&per_rollout) {
        per_subset[entry.subset_index] += reward;
    }
    for sum in &mut per_subset {
        *sum /= pool.rollouts_per_subset() as f64;
    }
    let baseline = per_subset.iter().sum::<f64>() / per_subset.len() as f64;

    Ok(RewardReport {
        counts,
        freqs,
        entropy_norm,
        per_rollout,
        per_subset,
        baseline,
        majority,
        degenerate,
    })
}

/// Majority vote over the pool, same tie-break as the reward pass. This is the
/// self-consistency baseline: no rewards, just the modal answer.
pub fn self_consistency_answer(pool: &AnswerPool) -> Result<String, RewardError> {
    let (counts, _) = compute_frequencies(pool);
    counts
        .iter()
        .fold(None::<(&String, usize)>, |best, (answer, &count)| match best {
            Some((_, best_count)) if count <= best_count => best,
            _ => Some((answer, count)),
        })
        .map(|(answer, _)| answer.clone())
        .ok_or(RewardError::DegeneratePool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{canonicalize, AnswerFormat};

    fn letter(token: &str) -> ExtractedAnswer {
        canonicalize(token, &AnswerFormat::MultipleChoiceLetter { options: 26 })
    }

    fn pool_of(subsets: usize, rollouts: usize, answers: &[&str]) -> AnswerPool {
        let answers = answers
            .iter()
            .map(|a| {
                if *a == "INVALID" {
                    ExtractedAnswer::invalid()
                } else {
                    letter(a)
                }
            })
            .collect();
        AnswerPool::from_answers(subsets, rollouts, answers).unwrap()
    }

    #[test]
    fn unanimous_pool_has_unit_frequency() {
        let pool = pool_of(2, 4, &["A"; 8]);
        let (counts, freqs) = compute_frequencies(&pool);
        assert_eq!(counts["A"], 8);
        assert_eq!(freqs["A"], 1.0);
        assert_eq!(freqs.len(), 1);
    }

    #[test]
    fn six_two_split_frequencies() {
        let pool = pool_of(2, 4, &["A", "A", "A", "A", "A", "A", "B", "B"]);
        let (_, freqs) = compute_frequencies(&pool);
        assert_eq!(freqs["A"], 0.75);
        assert_eq!(freqs["B"], 0.25);
    }

    #[test]
    fn invalids_are_excluded_from_frequencies() {
        let pool = pool_of(2, 4, &["A", "A", "A", "A", "INVALID", "INVALID", "INVALID", "INVALID"]);
        let (counts, freqs) = compute_frequencies(&pool);
        assert_eq!(counts.len(), 1);
        assert_eq!(counts["A"], 4);
        assert_eq!(freqs["A"], 1.0);
    }

    #[test]
    fn invalids_can_join_the_denominator_when_flagged() {
        let pool = pool_of(2, 4, &["A", "A", "A", "A", "INVALID", "INVALID", "INVALID", "INVALID"]);
        let (_, freqs) = frequencies_with(&pool, true);
        assert_eq!(freqs["A"], 0.5);
    }

    #[test]
    fn entropy_limits() {
        let mut single = BTreeMap::new();
        single.insert("A".to_string(), 1.0);
        assert_eq!(normalized_entropy(&single), 0.0);

        let mut uniform = BTreeMap::new();
        uniform.insert("A".to_string(), 0.5);
        uniform.insert("B".to_string(), 0.5);
        assert!((normalized_entropy(&uniform) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_three_quarters_split() {
        // By hand: H = −(0.75 ln 0.75 + 0.25 ln 0.25) = 0.562335 nats,
        // ln 2 = 0.693147, ratio = 0.811278.
        let mut freqs = BTreeMap::new();
        freqs.insert("A".to_string(), 0.75);
        freqs.insert("B".to_string(), 0.25);
        assert!((normalized_entropy(&freqs) - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn reward_worked_example() {
        let pool = pool_of(2, 4, &["A", "A", "A", "A", "A", "A", "B", "B"]);
        let report = compute_rewards(&pool, &RewardParams::default()).unwrap();
        assert!((report.per_rollout[0] - 0.141541).abs() < 1e-6);
        assert!((report.per_rollout[7] - (-0.358459)).abs() < 1e-6);
        assert_eq!(report.majority.as_deref(), Some("A"));
        assert!(!report.degenerate);
    }

    #[test]
    fn unanimous_pool_rewards_are_exactly_one() {
        let pool = pool_of(2, 4, &["A"; 8]);
        let report = compute_rewards(&pool, &RewardParams::default()).unwrap();
        assert!(report.per_rollout.iter().all(|&r| r == 1.0));
        assert_eq!(report.baseline, 1.0);
    }

    #[test]
    fn per_subset_and_baseline_with_zero_alpha() {
        let pool = pool_of(2, 2, &["A", "A", "A", "B"]);
        let params = RewardParams {
            alpha: 0.0,
            ..RewardParams::default()
        };
        let report = compute_rewards(&pool, &params).unwrap();
        assert!((report.per_subset[0] - 0.75).abs() < 1e-12);
        assert!((report.per_subset[1] - 0.5).abs() < 1e-12);
        assert!((report.baseline - 0.625).abs() < 1e-12);
    }

    #[test]
    fn degenerate_pool_carries_skip_flag() {
        let pool = pool_of(2, 2, &["INVALID"; 4]);
        let report = compute_rewards(&pool, &RewardParams::default()).unwrap();
        assert!(report.degenerate);
        assert!(report.majority.is_none());
        assert!(report.per_rollout.iter().all(|&r| r == -1.0));
        assert!(report.counts.is_empty());
    }

    #[test]
    fn baseline_equals_grand_mean_for_equal_subsets() {
        let pool = pool_of(4, 2, &["A", "B", "A", "A", "C", "A", "B", "B"]);
        let report = compute_rewards(&pool, &RewardParams::default()).unwrap();
        let grand_mean = report.per_rollout.iter().sum::<f64>() / report.per_rollout.len() as f64;
        assert!((report.baseline - grand_mean).abs() < 1e-12);
    }

    #[test]
    fn higher_frequency_means_strictly_higher_reward() {
        // Same pool, same entropy term: reward order follows frequency order.
        let pool = pool_of(2, 4, &["A", "A", "A", "A", "A", "B", "B", "C"]);
        let report = compute_rewards(&pool, &RewardParams::default()).unwrap();
        let reward_of = |answer: &str| {
            pool.entries()
                .iter()
                .zip(&report.per_rollout)
                .find(|(e, _)| e.answer.as_str() == answer)
                .map(|(_, &r)| r)
                .unwrap()
        };
        assert!(reward_of("A") > reward_of("B"));
        assert!(reward_of("B") > reward_of("C"));
    }

    #[test]
    fn majority_tie_breaks_lexicographically() {
        let pool = pool_of(2, 4, &["B", "B", "B", "B", "A", "A", "A", "A"]);
        assert_eq!(self_consistency_answer(&pool).unwrap(), "A");
    }

    #[test]
    fn self_consistency_clear_majority() {
        let pool = pool_of(2, 4, &["A", "A", "A", "A", "A", "A", "B", "B"]);
        assert_eq!(self_consistency_answer(&pool).unwrap(), "A");
    }

    #[test]
    fn self_consistency_errors_on_degenerate_pool() {
        let pool = pool_of(2, 4, &["INVALID"; 8]);
        assert_eq!(self_consistency_answer(&pool), Err(RewardError::DegeneratePool));
    }

    #[test]
    fn pool_construction_rejects_bad_shapes() {
        let short = AnswerPool::from_answers(2, 4, vec![letter("A"); 7]);
        assert!(short.is_err());

        let duplicate = AnswerPool::from_entries(
            1,
            2,
            vec![
                PoolEntry { subset_index: 0, rollout_index: 0, answer: letter("A") },
                PoolEntry { subset_index: 0, rollout_index: 0, answer: letter("B") },
            ],
        );
        assert!(duplicate.is_err());
    }

    #[test]
    fn permutation_leaves_aggregates_unchanged() {
        let answers = ["A", "B", "A", "C", "A", "B", "A", "A"];
        let pool = pool_of(2, 4, &answers);
        let report = compute_rewards(&pool, &RewardParams::default()).unwrap();

        let mut entries = pool.entries().to_vec();
        entries.reverse();
        let shuffled = AnswerPool::from_entries(2, 4, entries).unwrap();
        let shuffled_report = compute_rewards(&shuffled, &RewardParams::default()).unwrap();

        assert_eq!(report.counts, shuffled_report.counts);
        assert_eq!(report.entropy_norm, shuffled_report.entropy_norm);
        assert_eq!(report.per_subset, shuffled_report.per_subset);
        assert_eq!(report.baseline, shuffled_report.baseline);
        assert_eq!(report.majority, shuffled_report.majority);
    }
}
