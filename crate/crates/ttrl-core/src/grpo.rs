//! Group-relative policy optimization at desk scale.
//!
//! Rewards are standardized within rollout groups (zero mean, unit variance,
//! with a zero-variance guard) and fed to a REINFORCE-style update of a small
//! softmax policy:
//!
//! ```text
//! a_i = (r_i − mean_g) / max(std_g, ε)          (a_i = 0 when std_g < ε)
//! θ  ← θ + η · (1/R) Σ_i a_i ∇_θ log π_θ(y_i | φ_i) − η·β·∇KL(π_θ ‖ π_ref)
//! ```
//!
//! The toy policy stands in for a full vision-language backbone: it maps a
//! feature vector (binary informative-frame indicators plus a bias) to a
//! distribution over answer indices. Answer index 0 is, by convention, the
//! option supported by the visible evidence, so a single parameter matrix
//! transfers across questions. The contract — features in, answer
//! distribution and log-prob gradients out — is what a heavier policy would
//! have to implement to replace it.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference peak learning rate for adapting a full-size backbone; kept for
/// documentation. The toy policy's parameter count is tiny, so its default
/// step size is much larger.
pub const REFERENCE_BACKBONE_LEARNING_RATE: f64 = 5e-7;

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("empty group at index {0}")]
    EmptyGroup(usize),
    #[error("group sizes sum to {got}, expected {expected}")]
    GroupSizeMismatch { got: usize, expected: usize },
    #[error("invalid policy state: {0}")]
    InvalidPolicy(String),
    #[error("invalid rollout {index}: {reason}")]
    InvalidRollout { index: usize, reason: String },
    #[error("non-finite gradient contribution from rollout {rollout}")]
    NonFiniteGradient { rollout: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
}

/// How a question's K×N rewards are partitioned into baseline groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Each subset's N rollouts form one group (subsets see different
    /// evidence, so they are baselined separately).
    PerSubset,
    /// All K×N rollouts form a single group.
    WholePool,
}

/// Rewards with their standardized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub grouping: Grouping,
}

/// Standardizes rewards within consecutive groups. Uses the population
/// standard deviation; a group whose std falls below `std_epsilon` gets all
/// zero advantages.
pub fn compute_advantages(
    rewards: &[f64],
    group_sizes: &[usize],
    std_epsilon: f64,
) -> Result<Vec<f64>, GrpoError> {
    let total: usize = group_sizes.iter().sum();
    if total != rewards.len() {
        return Err(GrpoError::GroupSizeMismatch {
            got: total,
            expected: rewards.len(),
        });
    }
    let mut advantages = Vec::with_capacity(rewards.len());
    let mut start = 0;
    for (g, &size) in group_sizes.iter().enumerate() {
        if size == 0 {
            return Err(GrpoError::EmptyGroup(g));
        }
        let group = &rewards[start..start + size];
        let mean = group.iter().sum::<f64>() / size as f64;
        let variance = group.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / size as f64;
        let std = variance.sqrt();
        if std < std_epsilon {
            advantages.extend(std::iter::repeat_n(0.0, size));
        } else {
            advantages.extend(group.iter().map(|r| (r - mean) / std));
        }
        start += size;
    }
    Ok(advantages)
}

/// Advantage computation for one question's pool, rewards laid out
/// subset-major (subset 0's N rollouts first).
pub fn advantages_for_pool(
    rewards: &[f64],
    grouping: Grouping,
    rollouts_per_subset: usize,
    std_epsilon: f64,
) -> Result<AdvantageGroup, GrpoError> {
    let group_sizes = match grouping {
        Grouping::WholePool => vec![rewards.len()],
        Grouping::PerSubset => {
            if rollouts_per_subset == 0 || !rewards.len().is_multiple_of(rollouts_per_subset) {
                return Err(GrpoError::GroupSizeMismatch {
                    got: rollouts_per_subset,
                    expected: rewards.len(),
                });
            }
            vec![rollouts_per_subset; rewards.len() / rollouts_per_subset]
        }
    };
    let advantages = compute_advantages(rewards, &group_sizes, std_epsilon)?;
    Ok(AdvantageGroup {
        rewards: rewards.to_vec(),
        advantages,
        grouping,
    })
}

/// Policy-update hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Policy learning rate η.
    pub eta: f64,
    /// Adaptation epochs over the batch.
    pub epochs: usize,
    /// KL penalty β against the reference policy (0 disables the term).
    pub kl_coeff: f64,
    /// Zero-variance guard for advantage standardization.
    pub std_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 5e-2,
            epochs: 5,
            kl_coeff: 0.0,
            std_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(GrpoError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(GrpoError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.kl_coeff < 0.0 || !self.kl_coeff.is_finite() {
            return Err(GrpoError::InvalidConfig(format!(
                "kl_coeff must be nonnegative, got {}",
                self.kl_coeff
            )));
        }
        Ok(())
    }
}

/// One rollout's contribution to a policy step.
#[derive(Debug, Clone)]
pub struct PolicyRollout {
    pub features: Vec<f64>,
    pub answer: usize,
    pub advantage: f64,
}

/// Small linear-softmax answer policy: logits = θᵀφ, π = softmax(logits / τ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    /// Row-major (feature_dim × answer_count).
    theta: Vec<f64>,
    feature_dim: usize,
    answer_count: usize,
    temperature: f64,
    /// Snapshot the KL term is measured against; frozen at construction.
    ref_theta: Vec<f64>,
}

impl ToyPolicy {
    pub fn zeros(feature_dim: usize, answer_count: usize) -> Self {
        let theta = vec![0.0; feature_dim * answer_count];
        Self {
            ref_theta: theta.clone(),
            theta,
            feature_dim,
            answer_count,
            temperature: 1.0,
        }
    }

    /// A weakly pretrained policy: every evidence indicator contributes
    /// `bias` to the evidence-supported answer's logit. The bias input (last
    /// feature) starts neutral.
    pub fn evidence_biased(feature_dim: usize, answer_count: usize, bias: f64) -> Self {
        let mut policy = Self::zeros(feature_dim, answer_count);
        for d in 0..feature_dim.saturating_sub(1) {
            policy.theta[d * answer_count] = bias;
        }
        policy.ref_theta = policy.theta.clone();
        policy
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Builds a policy from explicit parameters (row-major feature × answer);
    /// the reference snapshot starts at the same values.
    pub fn from_theta(
        theta: Vec<f64>,
        feature_dim: usize,
        answer_count: usize,
        temperature: f64,
    ) -> Result<Self, GrpoError> {
        let policy = Self {
            ref_theta: theta.clone(),
            theta,
            feature_dim,
            answer_count,
            temperature,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.feature_dim == 0 || self.answer_count < 2 {
            return Err(GrpoError::InvalidPolicy(
                "need at least one feature and two answers".into(),
            ));
        }
        if self.theta.len() != self.feature_dim * self.answer_count
            || self.ref_theta.len() != self.theta.len()
        {
            return Err(GrpoError::InvalidPolicy("theta shape mismatch".into()));
        }
        if self.theta.iter().chain(&self.ref_theta).any(|v| !v.is_finite()) {
            return Err(GrpoError::InvalidPolicy("theta contains non-finite entries".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GrpoError::InvalidPolicy("temperature must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn answer_count(&self) -> usize {
        self.answer_count
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Makes the current parameters the KL reference.
    pub fn freeze_reference(&mut self) {
        self.ref_theta = self.theta.clone();
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        logits_of(&self.theta, self.feature_dim, self.answer_count, features)
    }

    /// Softmax over temperature-scaled logits; the `temperature < 1e-6`
    /// regime degenerates to a point mass on the argmax.
    pub fn probs(&self, features: &[f64]) -> Vec<f64> {
        let logits = self.logits(features);
        if self.temperature < 1e-6 {
            let argmax = argmax_index(&logits);
            let mut point = vec![0.0; self.answer_count];
            point[argmax] = 1.0;
            return point;
        }
        softmax(&logits, self.temperature)
    }

    pub fn log_prob(&self, features: &[f64], answer: usize) -> f64 {
        let logits = self.logits(features);
        log_softmax(&logits, self.temperature)[answer]
    }

    /// One draw from π(·|φ). Greedy when the temperature is effectively zero.
    pub fn sample<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> usize {
        let probs = self.probs(features);
        if self.temperature < 1e-6 {
            return argmax_index(&probs);
        }
        sample_categorical(&probs, rng)
    }

    /// N independent draws from π(·|φ); reproducible given the rng seed.
    pub fn rollout<R: Rng + ?Sized>(&self, features: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.sample(features, rng)).collect()
    }

    fn ref_log_softmax(&self, features: &[f64]) -> Vec<f64> {
        let logits = logits_of(&self.ref_theta, self.feature_dim, self.answer_count, features);
        log_softmax(&logits, self.temperature)
    }
}

fn logits_of(theta: &[f64], feature_dim: usize, answer_count: usize, features: &[f64]) -> Vec<f64> {
    debug_assert_eq!(features.len(), feature_dim);
    let mut logits = vec![0.0; answer_count];
    for (d, &phi) in features.iter().enumerate() {
        if phi == 0.0 {
            continue;
        }
        let row = &theta[d * answer_count..(d + 1) * answer_count];
        for (logit, &w) in logits.iter_mut().zip(row) {
            *logit += phi * w;
        }
    }
    logits
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax(logits, temperature).iter().map(|l| l.exp()).collect()
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let tau = temperature.max(1e-12);
    let scaled: Vec<f64> = logits.iter().map(|l| l / tau).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
    scaled.iter().map(|s| s - log_sum).collect()
}

fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let target = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn new() -> Self {
        Self { sum: 0.0, carry: 0.0 }
    }

    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Accumulates one rollout's surrogate gradient (policy-gradient term minus
/// β times the KL term) into `grad`.
fn accumulate_rollout_gradient(
    policy: &ToyPolicy,
    rollout: &PolicyRollout,
    kl_coeff: f64,
    index: usize,
    grad: &mut [f64],
) -> Result<(), GrpoError> {
    if rollout.features.len() != policy.feature_dim {
        return Err(GrpoError::InvalidRollout {
            index,
            reason: format!(
                "feature dim {} does not match policy dim {}",
                rollout.features.len(),
                policy.feature_dim
            ),
        });
    }
    if rollout.answer >= policy.answer_count {
        return Err(GrpoError::InvalidRollout {
            index,
            reason: format!(
                "answer {} outside answer count {}",
                rollout.answer, policy.answer_count
            ),
        });
    }
    if !rollout.advantage.is_finite() {
        return Err(GrpoError::NonFiniteGradient { rollout: index });
    }

    let tau = policy.temperature.max(1e-12);
    let log_probs = {
        let logits = policy.logits(&rollout.features);
        log_softmax(&logits, tau)
    };
    let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();

    let (ref_log_probs, kl) = if kl_coeff > 0.0 {
        let ref_log_probs = policy.ref_log_softmax(&rollout.features);
        let kl = probs
            .iter()
            .zip(log_probs.iter().zip(&ref_log_probs))
            .map(|(&p, (lp, rlp))| p * (lp - rlp))
            .sum::<f64>();
        (Some(ref_log_probs), kl)
    } else {
        (None, 0.0)
    };

    let answer_count = policy.answer_count;
    for (d, &phi) in rollout.features.iter().enumerate() {
        if phi == 0.0 {
            continue;
        }
        for a in 0..answer_count {
            // ∇_{θ[d][a]} log π(y|φ) = (φ_d/τ)(1[a=y] − π(a))
            let indicator = if a == rollout.answer { 1.0 } else { 0.0 };
            let mut contribution = rollout.advantage * (phi / tau) * (indicator - probs[a]);
            if let Some(ref_lp) = &ref_log_probs {
                // ∇_{θ[d][a]} KL = (φ_d/τ)·π(a)·(log π(a) − log π_ref(a) − KL)
                let kl_grad = (phi / tau) * probs[a] * (log_probs[a] - ref_lp[a] - kl);
                contribution -= kl_coeff * kl_grad;
            }
            if !contribution.is_finite() {
                return Err(GrpoError::NonFiniteGradient { rollout: index });
            }
            grad[d * answer_count + a] += contribution;
        }
    }
    Ok(())
}

/// One gradient-ascent step over a single rollout group (mean over rollouts).
pub fn policy_step(
    policy: &ToyPolicy,
    rollouts: &[PolicyRollout],
    config: &TrainConfig,
) -> Result<ToyPolicy, GrpoError> {
    config.validate()?;
    policy.validate()?;
    if rollouts.is_empty() {
        return Err(GrpoError::InvalidConfig("policy step needs at least one rollout".into()));
    }
    let mut grad = vec![0.0; policy.theta.len()];
    for (i, rollout) in rollouts.iter().enumerate() {
        accumulate_rollout_gradient(policy, rollout, config.kl_coeff, i, &mut grad)?;
    }
    let scale = config.eta / rollouts.len() as f64;
    let mut next = policy.clone();
    for (w, g) in next.theta.iter_mut().zip(&grad) {
        *w += scale * g;
    }
    Ok(next)
}

/// One step from the mean of per-question gradient contributions. Questions
/// must be supplied in a canonical order; compensated summation keeps the
/// result stable against grouping noise.
pub fn batch_policy_step(
    policy: &ToyPolicy,
    question_rollouts: &[&[PolicyRollout]],
    config: &TrainConfig,
) -> Result<ToyPolicy, GrpoError> {
    config.validate()?;
    policy.validate()?;
    let groups: Vec<&[PolicyRollout]> =
        question_rollouts.iter().copied().filter(|g| !g.is_empty()).collect();
    if groups.is_empty() {
        return Err(GrpoError::InvalidConfig("batch step needs at least one rollout".into()));
    }
    let mut accumulators: Vec<Kahan> = (0..policy.theta.len()).map(|_| Kahan::new()).collect();
    let mut rollout_index = 0usize;
    let mut scratch = vec![0.0; policy.theta.len()];
    for group in &groups {
        scratch.fill(0.0);
        for rollout in group.iter() {
            accumulate_rollout_gradient(policy, rollout, config.kl_coeff, rollout_index, &mut scratch)?;
            rollout_index += 1;
        }
        let group_scale = 1.0 / group.len() as f64;
        for (acc, g) in accumulators.iter_mut().zip(&scratch) {
            acc.add(g * group_scale);
        }
    }
    let scale = config.eta / groups.len() as f64;
    let mut next = policy.clone();
    for (w, acc) in next.theta.iter_mut().zip(&accumulators) {
        *w += scale * acc.sum;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn advantages_of_binary_rewards() {
        // mean 0.5, population std 0.5.
        let adv = compute_advantages(&[1.0, 0.0, 0.0, 1.0], &[4], 1e-8).unwrap();
        assert_eq!(adv, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn zero_variance_guard_gives_zero_advantages() {
        let adv = compute_advantages(&[0.7, 0.7, 0.7], &[3], 1e-8).unwrap();
        assert_eq!(adv, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn nondegenerate_groups_have_zero_mean_unit_variance() {
        let rewards = [0.9, -0.3, 0.2, 0.55, -0.8, 0.1];
        let adv = compute_advantages(&rewards, &[6], 1e-8).unwrap();
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let variance = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((variance - 1.0).abs() < 1e-6);
    }

    #[test]
    fn affine_invariance_of_advantages() {
        let rewards = [0.3, -0.2, 0.9, 0.1];
        let base = compute_advantages(&rewards, &[4], 1e-8).unwrap();
        let shifted: Vec<f64> = rewards.iter().map(|r| 1.7 * r + 0.4).collect();
        let transformed = compute_advantages(&shifted, &[4], 1e-8).unwrap();
        for (a, b) in base.iter().zip(&transformed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn per_subset_grouping_standardizes_each_subset() {
        let rewards = [1.0, 0.0, 5.0, 5.0];
        let group = advantages_for_pool(&rewards, Grouping::PerSubset, 2, 1e-8).unwrap();
        assert_eq!(group.advantages, vec![1.0, -1.0, 0.0, 0.0]);

        let whole = advantages_for_pool(&rewards, Grouping::WholePool, 2, 1e-8).unwrap();
        let mean: f64 = whole.advantages.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn group_shape_errors() {
        assert!(compute_advantages(&[1.0, 2.0], &[3], 1e-8).is_err());
        assert!(compute_advantages(&[1.0, 2.0], &[2, 0], 1e-8).is_err());
    }

    #[test]
    fn zero_theta_policy_is_uniform() {
        let policy = ToyPolicy::zeros(3, 4);
        let probs = policy.probs(&[1.0, 0.0, 1.0]);
        for p in probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_limit_returns_argmax_copies() {
        let mut policy = ToyPolicy::zeros(2, 3).with_temperature(1e-9);
        policy.theta[1] = 2.0; // feature 0 pushes answer 1
        let mut rng = seed::rng_from(&[5]);
        let draws = policy.rollout(&[1.0, 1.0], 16, &mut rng);
        assert!(draws.iter().all(|&a| a == 1));
    }

    #[test]
    fn uniform_policy_sampling_passes_chi_square() {
        // 10k draws over 4 answers; χ² with 3 dof at p = 0.01 is 11.345.
        let policy = ToyPolicy::zeros(2, 4);
        let mut rng = seed::rng_from(&[6]);
        let draws = 10_000usize;
        let mut hits = [0f64; 4];
        for _ in 0..draws {
            hits[policy.sample(&[1.0, 1.0], &mut rng)] += 1.0;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = hits.iter().map(|h| (h - expected).powi(2) / expected).sum();
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let policy = ToyPolicy::evidence_biased(3, 4, 0.7);
        let a = policy.rollout(&[1.0, 0.0, 1.0], 32, &mut seed::rng_from(&[9]));
        let b = policy.rollout(&[1.0, 0.0, 1.0], 32, &mut seed::rng_from(&[9]));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_advantages_leave_theta_unchanged() {
        let policy = ToyPolicy::evidence_biased(3, 4, 0.5);
        let rollouts = vec![
            PolicyRollout { features: vec![1.0, 0.0, 1.0], answer: 2, advantage: 0.0 },
            PolicyRollout { features: vec![0.0, 1.0, 1.0], answer: 0, advantage: 0.0 },
        ];
        let next = policy_step(&policy, &rollouts, &TrainConfig::default()).unwrap();
        assert_eq!(policy.theta(), next.theta());
    }

    #[test]
    fn positive_advantage_raises_sampled_answer_logit() {
        let policy = ToyPolicy::zeros(1, 2);
        let rollouts = vec![PolicyRollout { features: vec![1.0], answer: 0, advantage: 1.0 }];
        let next = policy_step(&policy, &rollouts, &TrainConfig::default()).unwrap();
        assert!(next.theta()[0] > policy.theta()[0]);
        assert!(next.theta()[1] < policy.theta()[1]);
        let probs = next.probs(&[1.0]);
        assert!(probs[0] > 0.5);
    }

    /// Surrogate objective for the finite-difference oracle:
    /// J(θ) = (1/R) Σ_i [a_i log π_θ(y_i|φ_i) − β KL(π_θ(·|φ_i) ‖ π_ref(·|φ_i))]
    fn surrogate(policy: &ToyPolicy, rollouts: &[PolicyRollout], kl_coeff: f64) -> f64 {
        let mut total = 0.0;
        for r in rollouts {
            total += r.advantage * policy.log_prob(&r.features, r.answer);
            if kl_coeff > 0.0 {
                let logits = policy.logits(&r.features);
                let lp = log_softmax(&logits, policy.temperature());
                let rlp = policy.ref_log_softmax(&r.features);
                let kl: f64 = lp
                    .iter()
                    .zip(&rlp)
                    .map(|(l, rl)| l.exp() * (l - rl))
                    .sum();
                total -= kl_coeff * kl;
            }
        }
        total / rollouts.len() as f64
    }

    fn random_instance(
        rng: &mut rand_chacha::ChaCha8Rng,
        kl_coeff: f64,
    ) -> (ToyPolicy, Vec<PolicyRollout>, TrainConfig) {
        use rand::Rng;
        let feature_dim = 4;
        let answer_count = 3;
        let mut policy = ToyPolicy::zeros(feature_dim, answer_count);
        for w in policy.theta.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        // A reference distinct from theta so the KL gradient is nontrivial.
        for w in policy.ref_theta.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let rollouts: Vec<PolicyRollout> = (0..6)
            .map(|_| PolicyRollout {
                features: (0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                answer: rng.random_range(0..answer_count),
                advantage: rng.random_range(-2.0..2.0),
            })
            .collect();
        let config = TrainConfig { eta: 1.0, kl_coeff, ..TrainConfig::default() };
        (policy, rollouts, config)
    }

    fn check_gradient_against_finite_differences(kl_coeff: f64, seed_tag: u64) {
        let mut rng = seed::rng_from(&[seed_tag]);
        for _ in 0..100 {
            let (policy, rollouts, config) = random_instance(&mut rng, kl_coeff);
            let stepped = policy_step(&policy, &rollouts, &config).unwrap();
            let h = 1e-5;
            for entry in 0..policy.theta.len() {
                // eta = 1, so theta delta IS the analytic gradient entry.
                let analytic = stepped.theta()[entry] - policy.theta()[entry];
                let mut plus = policy.clone();
                plus.theta[entry] += h;
                let mut minus = policy.clone();
                minus.theta[entry] -= h;
                let numeric =
                    (surrogate(&plus, &rollouts, kl_coeff) - surrogate(&minus, &rollouts, kl_coeff))
                        / (2.0 * h);
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-5,
                    "entry {entry}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        check_gradient_against_finite_differences(0.0, 21);
    }

    #[test]
    fn gradient_matches_finite_differences_with_kl_penalty() {
        check_gradient_against_finite_differences(0.4, 22);
    }

    #[test]
    fn constant_reward_shift_leaves_step_unchanged() {
        let rewards = [0.9, 0.1, 0.4, 0.4];
        let shifted: Vec<f64> = rewards.iter().map(|r| r + 3.0).collect();
        let adv_a = compute_advantages(&rewards, &[4], 1e-8).unwrap();
        let adv_b = compute_advantages(&shifted, &[4], 1e-8).unwrap();

        let policy = ToyPolicy::evidence_biased(3, 4, 0.3);
        let build = |advs: &[f64]| -> Vec<PolicyRollout> {
            advs.iter()
                .enumerate()
                .map(|(i, &a)| PolicyRollout {
                    features: vec![1.0, (i % 2) as f64, 1.0],
                    answer: i % 4,
                    advantage: a,
                })
                .collect()
        };
        let next_a = policy_step(&policy, &build(&adv_a), &TrainConfig::default()).unwrap();
        let next_b = policy_step(&policy, &build(&adv_b), &TrainConfig::default()).unwrap();
        for (a, b) in next_a.theta().iter().zip(next_b.theta()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn batch_step_matches_single_group_mean() {
        let policy = ToyPolicy::zeros(2, 3);
        let q1 = vec![PolicyRollout { features: vec![1.0, 1.0], answer: 0, advantage: 1.0 }];
        let q2 = vec![PolicyRollout { features: vec![0.0, 1.0], answer: 2, advantage: -1.0 }];
        let config = TrainConfig::default();
        let batched = batch_policy_step(&policy, &[&q1, &q2], &config).unwrap();

        // Same result as averaging the two one-question steps' deltas.
        let s1 = policy_step(&policy, &q1, &config).unwrap();
        let s2 = policy_step(&policy, &q2, &config).unwrap();
        for i in 0..policy.theta().len() {
            let mean_delta =
                ((s1.theta()[i] - policy.theta()[i]) + (s2.theta()[i] - policy.theta()[i])) / 2.0;
            assert!((batched.theta()[i] - (policy.theta()[i] + mean_delta)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_rollouts_are_rejected_with_index() {
        let policy = ToyPolicy::zeros(2, 3);
        let bad_answer = vec![PolicyRollout { features: vec![1.0, 1.0], answer: 7, advantage: 1.0 }];
        match policy_step(&policy, &bad_answer, &TrainConfig::default()) {
            Err(GrpoError::InvalidRollout { index: 0, .. }) => {}
            other => panic!("expected InvalidRollout, got {other:?}"),
        }
        let bad_advantage =
            vec![PolicyRollout { features: vec![1.0, 1.0], answer: 1, advantage: f64::NAN }];
        match policy_step(&policy, &bad_advantage, &TrainConfig::default()) {
            Err(GrpoError::NonFiniteGradient { rollout: 0 }) => {}
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }
}
