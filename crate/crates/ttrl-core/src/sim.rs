//! Synthetic video-QA environment with hidden informative frames.
//!
//! Each environment hides an informative frame set I inside a T-frame grid
//! and answers questions through a stochastic oracle whose accuracy rises
//! with informative coverage:
//!
//! ```text
//! p_correct(S) = p_base + gain · min(1, |S ∩ I| / m)
//! ```
//!
//! The wrong-answer mass is split uniformly over the other options. Because
//! the whole environment is closed-form, it doubles as ground truth for the
//! bandit and the toy policy loop, and this module also hosts the
//! independent reward oracles: an exhaustive recomputation of the frequency
//! reward for a fixed pool, and exact/Monte-Carlo expected per-subset rewards
//! under the oracle's answer distribution.

use crate::bandit::sample_without_replacement;
use crate::reward::RewardParams;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const SIMENV_VERSION: &str = "simenv-v1";

/// Leaf-state cap for exact enumeration.
const MAX_ENUMERATION_STATES: u128 = 1 << 22;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("invalid subset: {0}")]
    InvalidSubset(String),
    #[error("exact enumeration infeasible ({0}); use the Monte Carlo mode")]
    EnumerationTooLarge(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Environment shape: grid size, option count, informative-set size, and the
/// oracle's accuracy curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub num_frames: usize,
    pub answer_count: usize,
    pub informative_count: usize,
    /// Correct-answer probability with zero informative coverage.
    pub p_base: f64,
    /// Accuracy gained at full coverage.
    pub gain: f64,
    /// Informative frames needed for full signal.
    pub full_signal_count: usize,
}

impl SimSpec {
    /// Defaults: chance-level base accuracy, 0.9 at full coverage, full
    /// signal at |I| frames.
    pub fn new(num_frames: usize, answer_count: usize, informative_count: usize) -> Self {
        let p_base = 1.0 / answer_count as f64;
        Self {
            num_frames,
            answer_count,
            informative_count,
            p_base,
            gain: 0.9 - p_base,
            full_signal_count: informative_count.max(1),
        }
    }

    pub fn with_accuracy(mut self, p_base: f64, gain: f64) -> Self {
        self.p_base = p_base;
        self.gain = gain;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(2..=26).contains(&self.answer_count) {
            return Err(SimError::InvalidEnvironment(format!(
                "answer count {} outside 2..=26",
                self.answer_count
            )));
        }
        if self.informative_count == 0 || self.informative_count > self.num_frames {
            return Err(SimError::InvalidEnvironment(format!(
                "informative count {} outside 1..={}",
                self.informative_count, self.num_frames
            )));
        }
        if self.full_signal_count == 0 {
            return Err(SimError::InvalidEnvironment("full_signal_count must be positive".into()));
        }
        if !self.p_base.is_finite() || !self.gain.is_finite() || self.p_base < 0.0 || self.gain < 0.0
        {
            return Err(SimError::InvalidEnvironment(
                "p_base and gain must be finite and nonnegative".into(),
            ));
        }
        if self.p_base + self.gain > 1.0 + 1e-12 {
            return Err(SimError::InvalidEnvironment(format!(
                "p_base + gain = {} exceeds 1",
                self.p_base + self.gain
            )));
        }
        Ok(())
    }
}

/// One synthetic video question: hidden informative frames, a correct option,
/// and the oracle accuracy curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEnvironment {
    pub num_frames: usize,
    /// Sorted informative frame indices.
    pub informative: Vec<usize>,
    pub answer_count: usize,
    pub truth: usize,
    pub p_base: f64,
    pub gain: f64,
    pub full_signal_count: usize,
    /// Provenance seed recorded at generation time.
    pub seed: u64,
}

impl SimEnvironment {
    pub fn validate(&self) -> Result<(), SimError> {
        SimSpec {
            num_frames: self.num_frames,
            answer_count: self.answer_count,
            informative_count: self.informative.len(),
            p_base: self.p_base,
            gain: self.gain,
            full_signal_count: self.full_signal_count,
        }
        .validate()?;
        if self.truth >= self.answer_count {
            return Err(SimError::InvalidEnvironment(format!(
                "truth index {} outside option count {}",
                self.truth, self.answer_count
            )));
        }
        if self.informative.windows(2).any(|w| w[0] >= w[1])
            || self.informative.iter().any(|&t| t >= self.num_frames)
        {
            return Err(SimError::InvalidEnvironment(
                "informative indices must be sorted, distinct, and in range".into(),
            ));
        }
        Ok(())
    }

    pub fn informative_overlap(&self, subset: &[usize]) -> usize {
        subset
            .iter()
            .filter(|t| self.informative.binary_search(t).is_ok())
            .count()
    }

    /// Closed-form oracle accuracy for a frame subset.
    pub fn p_correct(&self, subset: &[usize]) -> f64 {
        let coverage = self.informative_overlap(subset) as f64 / self.full_signal_count as f64;
        self.p_base + self.gain * coverage.min(1.0)
    }

    pub fn truth_letter(&self) -> String {
        option_letter(self.truth)
    }

    /// Canonical answer indexing: 0 is the evidence-supported (correct)
    /// option; 1.. are the wrong options in ascending letter order. This is
    /// what lets one toy-policy parameter matrix transfer across questions.
    pub fn letter_for_canonical(&self, canonical: usize) -> String {
        debug_assert!(canonical < self.answer_count);
        if canonical == 0 {
            return self.truth_letter();
        }
        let wrong_rank = canonical - 1;
        let index = if wrong_rank < self.truth { wrong_rank } else { wrong_rank + 1 };
        option_letter(index)
    }

    pub fn canonical_for_option(&self, option_index: usize) -> usize {
        debug_assert!(option_index < self.answer_count);
        if option_index == self.truth {
            0
        } else if option_index < self.truth {
            option_index + 1
        } else {
            option_index
        }
    }

    /// Binary informative-presence indicators for the subset, plus a trailing
    /// bias input: the toy policy's feature map.
    pub fn features_for(&self, subset: &[usize]) -> Vec<f64> {
        let mut features = Vec::with_capacity(self.informative.len() + 1);
        for t in &self.informative {
            features.push(if subset.binary_search(t).is_ok() { 1.0 } else { 0.0 });
        }
        features.push(1.0);
        features
    }
}

/// Option index → letter.
pub fn option_letter(index: usize) -> String {
    debug_assert!(index < 26);
    char::from(b'A' + index as u8).to_string()
}

/// Letter → option index, if it is a single A–Z token.
pub fn option_index(letter: &str) -> Option<usize> {
    let mut chars = letter.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => Some((c as u8 - b'A') as usize),
        _ => None,
    }
}

/// Wraps an answer letter the way a chatty model would state it, for
/// exercising the extractor end to end.
pub fn wrap_answer_text(letter: &str) -> String {
    format!("Answer: {letter}")
}

/// Draws an environment: informative frames without replacement from the
/// shared positional prior (uniform when absent), truth uniform over options.
pub fn generate_env<R: Rng + ?Sized>(
    spec: &SimSpec,
    shared_prior: Option<&[f64]>,
    rng: &mut R,
) -> Result<SimEnvironment, SimError> {
    spec.validate()?;
    let prior: Vec<f64> = match shared_prior {
        Some(p) => {
            if p.len() != spec.num_frames {
                return Err(SimError::InvalidEnvironment(format!(
                    "prior length {} does not match grid {}",
                    p.len(),
                    spec.num_frames
                )));
            }
            p.to_vec()
        }
        None => vec![1.0 / spec.num_frames as f64; spec.num_frames],
    };
    let informative = sample_without_replacement(&prior, spec.informative_count, rng)
        .map_err(|e| SimError::InvalidEnvironment(e.to_string()))?;
    let truth = rng.random_range(0..spec.answer_count);
    let env = SimEnvironment {
        num_frames: spec.num_frames,
        informative,
        answer_count: spec.answer_count,
        truth,
        p_base: spec.p_base,
        gain: spec.gain,
        full_signal_count: spec.full_signal_count,
        seed: rng.random::<u64>(),
    };
    env.validate()?;
    Ok(env)
}

/// A batch of environments sharing grid size and option count; informative
/// sets may share a positional prior to model cross-video structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBatch {
    pub environments: Vec<SimEnvironment>,
}

impl SimBatch {
    pub fn generate<R: Rng + ?Sized>(
        count: usize,
        spec: &SimSpec,
        shared_prior: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<Self, SimError> {
        if count == 0 {
            return Err(SimError::InvalidEnvironment("batch must be nonempty".into()));
        }
        let environments = (0..count)
            .map(|_| generate_env(spec, shared_prior, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { environments })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let first = self
            .environments
            .first()
            .ok_or_else(|| SimError::InvalidEnvironment("batch must be nonempty".into()))?;
        for env in &self.environments {
            env.validate()?;
            if env.num_frames != first.num_frames || env.answer_count != first.answer_count {
                return Err(SimError::InvalidEnvironment(
                    "environments must share grid size and option count".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Uniform positional prior over a frame window, for generating batches whose
/// informative sets cluster.
pub fn window_prior(num_frames: usize, start: usize, len: usize) -> Result<Vec<f64>, SimError> {
    if len == 0 || start + len > num_frames {
        return Err(SimError::InvalidEnvironment(format!(
            "window [{start}, {}) does not fit grid of {num_frames}",
            start + len
        )));
    }
    let mut prior = vec![0.0; num_frames];
    for slot in &mut prior[start..start + len] {
        *slot = 1.0 / len as f64;
    }
    Ok(prior)
}

/// One oracle draw: the truth letter's option index with probability
/// `p_correct(subset)`, otherwise a uniformly random wrong option.
pub fn oracle_answer<R: Rng + ?Sized>(env: &SimEnvironment, subset: &[usize], rng: &mut R) -> usize {
    let p = env.p_correct(subset);
    if rng.random::<f64>() < p {
        env.truth
    } else {
        let wrong = rng.random_range(0..env.answer_count - 1);
        if wrong < env.truth {
            wrong
        } else {
            wrong + 1
        }
    }
}

// ---------------------------------------------------------------------------
// Independent reward oracle for a fixed pool
// ---------------------------------------------------------------------------

/// Exhaustive recomputation of counts, frequencies, entropy, per-rollout and
/// per-subset rewards for one concrete pool, written independently of the
/// reward engine (plain vectors, linear scans). `answers[k][n]` is the valid
/// canonical token or `None` for an unparseable output.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolOracleReport {
    pub freqs: BTreeMap<String, f64>,
    pub entropy_norm: f64,
    pub per_rollout: Vec<Vec<f64>>,
    pub per_subset: Vec<f64>,
    pub baseline: f64,
}

pub fn pool_reward_oracle(
    answers: &[Vec<Option<String>>],
    alpha: f64,
    invalid_reward: f64,
) -> PoolOracleReport {
    let mut tokens: Vec<(String, f64)> = Vec::new();
    let mut valid_total = 0.0;
    for subset in answers {
        for answer in subset.iter().flatten() {
            valid_total += 1.0;
            match tokens.iter_mut().find(|(t, _)| t == answer) {
                Some((_, count)) => *count += 1.0,
                None => tokens.push((answer.clone(), 1.0)),
            }
        }
    }

    let mut freqs = BTreeMap::new();
    let mut entropy = 0.0;
    for (token, count) in &tokens {
        let p = count / valid_total;
        entropy -= p * p.ln();
        freqs.insert(token.clone(), p);
    }
    let entropy_norm = if tokens.len() > 1 { entropy / (tokens.len() as f64).ln() } else { 0.0 };

    let mut per_rollout = Vec::with_capacity(answers.len());
    let mut per_subset = Vec::with_capacity(answers.len());
    for subset in answers {
        let mut rewards = Vec::with_capacity(subset.len());
        for answer in subset {
            let reward = match answer {
                Some(token) => freqs[token] - alpha * entropy_norm,
                None => invalid_reward,
            };
            rewards.push(reward);
        }
        per_subset.push(rewards.iter().sum::<f64>() / rewards.len() as f64);
        per_rollout.push(rewards);
    }
    let baseline = per_subset.iter().sum::<f64>() / per_subset.len() as f64;

    PoolOracleReport {
        freqs,
        entropy_norm,
        per_rollout,
        per_subset,
        baseline,
    }
}

// ---------------------------------------------------------------------------
// Expected per-subset rewards under the oracle's answer distribution
// ---------------------------------------------------------------------------

fn subset_answer_probs(env: &SimEnvironment, subset: &[usize]) -> Vec<f64> {
    let p = env.p_correct(subset);
    let wrong = (1.0 - p) / (env.answer_count - 1) as f64;
    (0..env.answer_count)
        .map(|a| if a == env.truth { p } else { wrong })
        .collect()
}

fn validate_subsets(env: &SimEnvironment, subsets: &[Vec<usize>]) -> Result<(), SimError> {
    for (k, subset) in subsets.iter().enumerate() {
        let mut seen = vec![false; env.num_frames];
        for &t in subset {
            if t >= env.num_frames {
                return Err(SimError::InvalidSubset(format!(
                    "subset {k} references frame {t} outside grid of {}",
                    env.num_frames
                )));
            }
            if seen[t] {
                return Err(SimError::InvalidSubset(format!("subset {k} repeats frame {t}")));
            }
            seen[t] = true;
        }
    }
    Ok(())
}

/// All count vectors of `total` answers over `options` options.
fn compositions(total: usize, options: usize) -> Vec<Vec<usize>> {
    fn recurse(remaining: usize, slots: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            current.push(remaining);
            out.push(current.clone());
            current.pop();
            return;
        }
        for take in 0..=remaining {
            current.push(take);
            recurse(remaining - take, slots - 1, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    recurse(total, options, &mut Vec::new(), &mut out);
    out
}

fn multinomial_pmf(counts: &[usize], probs: &[f64], factorials: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    let mut pmf = factorials[total];
    for (&count, &p) in counts.iter().zip(probs) {
        if count > 0 {
            if p == 0.0 {
                return 0.0;
            }
            pmf = pmf / factorials[count] * p.powi(count as i32);
        }
    }
    pmf
}

/// Exact expected r̄_k for each subset, by enumerating the joint distribution
/// of answer pools. Rewards are permutation-invariant within a subset, so
/// pools are enumerated as per-subset answer count vectors weighted by their
/// multinomial probabilities — identical to enumerating every individual
/// pool, without the redundancy. All oracle answers are well-formed, so no
/// invalid-answer branch arises.
///
/// Exact mode requires K·N ≤ 16, M ≤ 4 and a bounded enumeration size;
/// anything larger is directed to the Monte Carlo estimator.
pub fn expected_subset_reward(
    env: &SimEnvironment,
    subsets: &[Vec<usize>],
    rollouts_per_subset: usize,
    params: &RewardParams,
) -> Result<Vec<f64>, SimError> {
    env.validate()?;
    validate_subsets(env, subsets)?;
    let k = subsets.len();
    if k == 0 || rollouts_per_subset == 0 {
        return Err(SimError::InvalidSubset("need at least one subset and one rollout".into()));
    }
    let m = env.answer_count;
    let pool_size = k * rollouts_per_subset;
    if pool_size > 16 || m > 4 {
        return Err(SimError::EnumerationTooLarge(format!(
            "K·N = {pool_size} (max 16), M = {m} (max 4)"
        )));
    }
    let comps = compositions(rollouts_per_subset, m);
    let states = (comps.len() as u128).pow(k as u32);
    if states > MAX_ENUMERATION_STATES {
        return Err(SimError::EnumerationTooLarge(format!(
            "{states} pool states exceed the {MAX_ENUMERATION_STATES} cap"
        )));
    }

    let mut factorials = vec![1.0; pool_size + 1];
    for i in 1..=pool_size {
        factorials[i] = factorials[i - 1] * i as f64;
    }
    let per_subset_probs: Vec<Vec<f64>> =
        subsets.iter().map(|s| subset_answer_probs(env, s)).collect();
    let weighted: Vec<Vec<(usize, f64)>> = per_subset_probs
        .iter()
        .map(|probs| {
            comps
                .iter()
                .enumerate()
                .filter_map(|(i, counts)| {
                    let pmf = multinomial_pmf(counts, probs, &factorials);
                    (pmf > 0.0).then_some((i, pmf))
                })
                .collect()
        })
        .collect();

    let alpha = params.alpha;
    let mut expected = vec![0.0; k];
    let mut choice = vec![0usize; k];
    let mut global = vec![0usize; m];

    #[allow(clippy::too_many_arguments)]
    fn walk(
        level: usize,
        prob: f64,
        comps: &[Vec<usize>],
        weighted: &[Vec<(usize, f64)>],
        choice: &mut Vec<usize>,
        global: &mut Vec<usize>,
        pool_size: usize,
        rollouts: usize,
        alpha: f64,
        expected: &mut [f64],
    ) {
        if level == weighted.len() {
            let total = pool_size as f64;
            let mut entropy = 0.0;
            let mut distinct = 0usize;
            for &count in global.iter() {
                if count > 0 {
                    distinct += 1;
                    let p = count as f64 / total;
                    entropy -= p * p.ln();
                }
            }
            let entropy_norm = if distinct > 1 { entropy / (distinct as f64).ln() } else { 0.0 };
            for (k_index, &comp_index) in choice.iter().enumerate() {
                let counts = &comps[comp_index];
                let mut freq_sum = 0.0;
                for (answer, &count) in counts.iter().enumerate() {
                    if count > 0 {
                        freq_sum += count as f64 * (global[answer] as f64 / total);
                    }
                }
                let subset_mean = freq_sum / rollouts as f64 - alpha * entropy_norm;
                expected[k_index] += prob * subset_mean;
            }
            return;
        }
        for &(comp_index, pmf) in &weighted[level] {
            choice[level] = comp_index;
            for (slot, &count) in global.iter_mut().zip(&comps[comp_index]) {
                *slot += count;
            }
            walk(
                level + 1,
                prob * pmf,
                comps,
                weighted,
                choice,
                global,
                pool_size,
                rollouts,
                alpha,
                expected,
            );
            for (slot, &count) in global.iter_mut().zip(&comps[comp_index]) {
                *slot -= count;
            }
        }
    }

    walk(
        0,
        1.0,
        &comps,
        &weighted,
        &mut choice,
        &mut global,
        pool_size,
        rollouts_per_subset,
        alpha,
        &mut expected,
    );
    Ok(expected)
}

/// Monte Carlo estimate of the same quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

pub fn expected_subset_reward_monte_carlo<R: Rng + ?Sized>(
    env: &SimEnvironment,
    subsets: &[Vec<usize>],
    rollouts_per_subset: usize,
    params: &RewardParams,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<McEstimate>, SimError> {
    env.validate()?;
    validate_subsets(env, subsets)?;
    let k = subsets.len();
    if k == 0 || rollouts_per_subset == 0 || draws == 0 {
        return Err(SimError::InvalidSubset(
            "need at least one subset, one rollout, and one draw".into(),
        ));
    }
    let m = env.answer_count;
    let pool_size = (k * rollouts_per_subset) as f64;
    let p_correct: Vec<f64> = subsets.iter().map(|s| env.p_correct(s)).collect();

    let mut mean = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    let mut per_subset_counts = vec![vec![0usize; m]; k];
    let mut global_counts = vec![0usize; m];

    for draw in 0..draws {
        global_counts.fill(0);
        for (counts, &p) in per_subset_counts.iter_mut().zip(&p_correct) {
            counts.fill(0);
            for _ in 0..rollouts_per_subset {
                let answer = if rng.random::<f64>() < p {
                    env.truth
                } else {
                    let wrong = rng.random_range(0..m - 1);
                    if wrong < env.truth {
                        wrong
                    } else {
                        wrong + 1
                    }
                };
                counts[answer] += 1;
                global_counts[answer] += 1;
            }
        }
        let mut entropy = 0.0;
        let mut distinct = 0usize;
        for &count in &global_counts {
            if count > 0 {
                distinct += 1;
                let p = count as f64 / pool_size;
                entropy -= p * p.ln();
            }
        }
        let entropy_norm = if distinct > 1 { entropy / (distinct as f64).ln() } else { 0.0 };
        for (k_index, counts) in per_subset_counts.iter().enumerate() {
            let mut freq_sum = 0.0;
            for (answer, &count) in counts.iter().enumerate() {
                if count > 0 {
                    freq_sum += count as f64 * (global_counts[answer] as f64 / pool_size);
                }
            }
            let value = freq_sum / rollouts_per_subset as f64 - params.alpha * entropy_norm;
            let delta = value - mean[k_index];
            mean[k_index] += delta / (draw + 1) as f64;
            m2[k_index] += delta * (value - mean[k_index]);
        }
    }

    Ok((0..k)
        .map(|k_index| McEstimate {
            mean: mean[k_index],
            std_err: (m2[k_index] / (draws as f64 - 1.0).max(1.0) / draws as f64).sqrt(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// simenv-v1 persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SimBatchFile {
    version: String,
    environments: Vec<SimEnvironment>,
}

pub fn write_sim_batch(batch: &SimBatch) -> String {
    serde_json::to_string_pretty(&SimBatchFile {
        version: SIMENV_VERSION.to_string(),
        environments: batch.environments.clone(),
    })
    .expect("sim batch serialization cannot fail")
}

pub fn read_sim_batch(text: &str) -> Result<SimBatch, SimError> {
    let file: SimBatchFile =
        serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
    if file.version != SIMENV_VERSION {
        return Err(SimError::Parse(format!(
            "unsupported version {:?}, expected {SIMENV_VERSION:?}",
            file.version
        )));
    }
    let batch = SimBatch { environments: file.environments };
    batch.validate()?;
    Ok(batch)
}
