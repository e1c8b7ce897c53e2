//! The adaptation loop: per epoch and per question, sample K frame subsets
//! from the current frame distribution, collect K×N rollouts from a backend,
//! run the reward pass, update the bandit, and (in toy mode) apply a
//! group-relative policy step — then run adapted inference with a global
//! prior.
//!
//! Determinism contract: every random draw is keyed by
//! `(run seed, video/question id, epoch, subset, rollout)`, state mutation
//! happens in one sequential reducer, and the batch-level policy step
//! aggregates per-question gradients in a canonical id order. Sim-mode runs
//! are therefore bitwise reproducible and insensitive to batch order.

use crate::backend::{AnswerBackend, BackendOutput, PolicySample, RolloutRequest, VideoSample};
use crate::bandit::{BanditError, BanditUpdateInput, FrameDistribution};
use crate::distops::{self, DistOpsError, GlobalPrior, SelectionMode};
use crate::extract::{self, ExtractedAnswer};
use crate::grpo::{
    advantages_for_pool, batch_policy_step, policy_step, Grouping, GrpoError, PolicyRollout,
    ToyPolicy, TrainConfig,
};
use crate::reward::{compute_rewards, AnswerPool, PoolEntry, RewardError, RewardParams};
use crate::seed;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

pub const ROLLOUTLOG_VERSION: &str = "rolloutlog-v1";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    DistOps(#[from] DistOpsError),
    #[error("policy mode problem: {0}")]
    Policy(String),
    #[error("ground-truth rewards need sim environments (or a labels file upstream)")]
    GroundTruthUnavailable,
    #[error("every rollout of epoch {epoch} failed; aborting with partial log flushed")]
    TotalBackendFailure { epoch: usize },
    #[error("prior grid {prior} does not match sample grid {sample}; pass interpolate to resample")]
    PriorGridMismatch { prior: usize, sample: usize },
    #[error("cannot write run log: {0}")]
    LogWrite(String),
    #[error("cannot parse run log: {0}")]
    LogParse(String),
}

/// Reward source for the adaptation loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Batch-wide frequency reward with entropy penalty.
    Frequency,
    /// Ablation: r = 1 when the extracted answer equals the ground truth.
    GroundTruth,
}

/// How per-video frame weights are seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BanditInit {
    /// CLIP scores when the sample carries them, uniform otherwise.
    Auto,
    Uniform,
    /// Require CLIP scores; error when absent.
    ClipScores,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationConfig {
    /// K subsets per question per epoch.
    pub subsets: usize,
    /// F frames per subset.
    pub frames_per_subset: usize,
    /// N rollouts per subset.
    pub rollouts: usize,
    pub epochs: usize,
    pub temperature: f64,
    /// Samples taken from the batch (truncates longer inputs).
    pub batch_size: usize,
    pub reward: RewardParams,
    /// Frame-selection learning rate η_fs.
    pub eta_fs: f64,
    pub grouping: Grouping,
    pub policy: TrainConfig,
    /// Apply a policy step after every question instead of one aggregated
    /// step per epoch.
    pub step_per_question: bool,
    /// Draw fresh subsets each epoch from the current distribution; when
    /// off, the epoch-0 subsets are reused for the whole run.
    pub resample_subsets: bool,
    pub reward_mode: RewardMode,
    pub bandit_init: BanditInit,
    pub max_prompt_tokens: usize,
    pub max_response_tokens: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            subsets: 4,
            frames_per_subset: 4,
            rollouts: 8,
            epochs: 5,
            temperature: 1.0,
            batch_size: 32,
            reward: RewardParams::default(),
            eta_fs: 3.0,
            grouping: Grouping::PerSubset,
            policy: TrainConfig::default(),
            step_per_question: false,
            resample_subsets: true,
            reward_mode: RewardMode::Frequency,
            bandit_init: BanditInit::Auto,
            max_prompt_tokens: 7524,
            max_response_tokens: 1024,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.subsets == 0 || self.frames_per_subset == 0 || self.rollouts == 0 || self.epochs == 0
        {
            return Err(OrchestratorError::InvalidBatch(
                "K, F, N, and epochs must all be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(OrchestratorError::InvalidBatch("batch size must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(OrchestratorError::InvalidBatch(
                "temperature must be finite and nonnegative".into(),
            ));
        }
        if !self.eta_fs.is_finite() {
            return Err(OrchestratorError::InvalidBatch("eta_fs must be finite".into()));
        }
        self.reward.validate()?;
        self.policy.validate()?;
        Ok(())
    }
}

/// One generated rollout with its provenance, extraction, and reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub video_id: String,
    pub question_id: String,
    pub epoch: usize,
    pub subset_index: usize,
    pub rollout_index: usize,
    pub subset: Vec<usize>,
    pub text: String,
    pub answer: String,
    pub answer_valid: bool,
    pub reward: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency_ms: Option<u64>,
}

/// Per-epoch aggregates for the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean reward across every rollout of the epoch.
    pub mean_reward: f64,
    /// Mean, over non-degenerate questions, of the majority answer's share
    /// of valid answers.
    pub majority_frequency: f64,
    /// Sim mode only: mean probability mass on informative frames after the
    /// epoch's bandit updates.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub informative_mass: Option<f64>,
    /// Questions skipped because their pool had no valid answers.
    pub skipped_questions: usize,
}

#[derive(Debug)]
pub struct AdaptOutcome {
    /// Final frame distribution per batch sample, input order.
    pub distributions: Vec<FrameDistribution>,
    pub policy: Option<ToyPolicy>,
    pub records: Vec<RolloutRecord>,
    pub epoch_summaries: Vec<EpochSummary>,
}

/// Newline-delimited run log: a header object, then one record per line,
/// flushed at each epoch boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLogHeader {
    pub version: String,
    pub seed: u64,
    pub config: AdaptationConfig,
}

pub struct RunLogWriter {
    out: Box<dyn Write>,
}

impl RunLogWriter {
    pub fn new(
        mut out: Box<dyn Write>,
        run_seed: u64,
        config: &AdaptationConfig,
    ) -> Result<Self, OrchestratorError> {
        let header = RunLogHeader {
            version: ROLLOUTLOG_VERSION.to_string(),
            seed: run_seed,
            config: config.clone(),
        };
        let line = serde_json::to_string(&header)
            .map_err(|e| OrchestratorError::LogWrite(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| OrchestratorError::LogWrite(e.to_string()))?;
        Ok(Self { out })
    }

    fn write_record(&mut self, record: &RolloutRecord) -> Result<(), OrchestratorError> {
        let line = serde_json::to_string(record)
            .map_err(|e| OrchestratorError::LogWrite(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| OrchestratorError::LogWrite(e.to_string()))
    }

    fn flush(&mut self) -> Result<(), OrchestratorError> {
        self.out.flush().map_err(|e| OrchestratorError::LogWrite(e.to_string()))
    }
}

/// Parses a run log back into its header and records.
pub fn read_rollout_log(text: &str) -> Result<(RunLogHeader, Vec<RolloutRecord>), OrchestratorError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| OrchestratorError::LogParse("log is empty".into()))?;
    let header: RunLogHeader = serde_json::from_str(header_line)
        .map_err(|e| OrchestratorError::LogParse(format!("header: {e}")))?;
    if header.version != ROLLOUTLOG_VERSION {
        return Err(OrchestratorError::LogParse(format!(
            "unsupported version {:?}, expected {ROLLOUTLOG_VERSION:?}",
            header.version
        )));
    }
    let records = lines
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| OrchestratorError::LogParse(format!("record {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, records))
}

fn init_distribution(
    sample: &VideoSample,
    init: BanditInit,
) -> Result<FrameDistribution, OrchestratorError> {
    let t = sample.num_frames();
    match init {
        BanditInit::Uniform => Ok(FrameDistribution::init(t, None)?),
        BanditInit::ClipScores => match &sample.clip_scores {
            Some(scores) => Ok(FrameDistribution::init(t, Some(scores))?),
            None => Err(OrchestratorError::InvalidBatch(format!(
                "sample {} has no clip scores but clip initialization was requested",
                sample.video_id
            ))),
        },
        BanditInit::Auto => Ok(FrameDistribution::init(t, sample.clip_scores.as_deref())?),
    }
}

struct QuestionPass {
    records: Vec<RolloutRecord>,
    per_subset_rewards: Vec<f64>,
    subsets: Vec<Vec<usize>>,
    degenerate: bool,
    majority_share: Option<f64>,
    policy_rollouts: Vec<PolicyRollout>,
    failures: usize,
    requests: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_question_epoch(
    sample: &VideoSample,
    dist: &FrameDistribution,
    frozen: Option<&[Vec<usize>]>,
    config: &AdaptationConfig,
    backend: &mut dyn AnswerBackend,
    collect_policy: bool,
    run_seed: u64,
    sample_key: u64,
    epoch: usize,
) -> Result<QuestionPass, OrchestratorError> {
    let subsets: Vec<Vec<usize>> = match frozen {
        Some(frozen) => frozen.to_vec(),
        None => {
            let mut rng = seed::rng_from(&[run_seed, sample_key, epoch as u64, seed::tag::SUBSET]);
            (0..config.subsets)
                .map(|_| dist.sample_subset(config.frames_per_subset, &mut rng))
                .collect::<Result<_, _>>()?
        }
    };

    let requests: Vec<RolloutRequest<'_>> = (0..config.subsets)
        .flat_map(|k| (0..config.rollouts).map(move |n| (k, n)))
        .map(|(k, n)| RolloutRequest {
            sample,
            subset: &subsets[k],
            epoch,
            subset_index: k,
            rollout_index: n,
            temperature: config.temperature,
            seed: seed::mix(&[run_seed, sample_key, epoch as u64, k as u64, n as u64, seed::tag::GENERATE]),
        })
        .collect();
    let outputs = backend.generate_many(&requests);
    debug_assert_eq!(outputs.len(), requests.len());

    let mut failures = 0usize;
    let mut texts: Vec<String> = Vec::with_capacity(outputs.len());
    let mut latencies: Vec<Option<u64>> = Vec::with_capacity(outputs.len());
    let mut policy_samples: Vec<Option<PolicySample>> = Vec::with_capacity(outputs.len());
    let mut answers: Vec<ExtractedAnswer> = Vec::with_capacity(outputs.len());
    for output in outputs {
        match output {
            Ok(BackendOutput { text, latency_ms, policy_sample }) => {
                answers.push(extract::extract_answer(&text, &sample.format));
                texts.push(text);
                latencies.push(latency_ms);
                policy_samples.push(policy_sample);
            }
            Err(_) => {
                failures += 1;
                answers.push(ExtractedAnswer::invalid());
                texts.push(String::new());
                latencies.push(None);
                policy_samples.push(None);
            }
        }
    }

    let entries: Vec<PoolEntry> = requests
        .iter()
        .zip(&answers)
        .map(|(request, answer)| PoolEntry {
            subset_index: request.subset_index,
            rollout_index: request.rollout_index,
            answer: answer.clone(),
        })
        .collect();
    let pool = AnswerPool::from_entries(config.subsets, config.rollouts, entries)?;

    let (per_rollout, per_subset_rewards, degenerate, majority_share) = match config.reward_mode {
        RewardMode::Frequency => {
            let report = compute_rewards(&pool, &config.reward)?;
            let share = report.majority.as_ref().map(|m| {
                report.counts[m] as f64 / report.counts.values().sum::<usize>() as f64
            });
            (report.per_rollout, report.per_subset, report.degenerate, share)
        }
        RewardMode::GroundTruth => {
            let env = sample
                .frames
                .sim_env()
                .ok_or(OrchestratorError::GroundTruthUnavailable)?;
            let truth = env.truth_letter();
            let per_rollout: Vec<f64> = answers
                .iter()
                .map(|a| if a.is_valid() && a.as_str() == truth { 1.0 } else { 0.0 })
                .collect();
            let mut per_subset = vec![0.0; config.subsets];
            for (request, &reward) in requests.iter().zip(&per_rollout) {
                per_subset[request.subset_index] += reward;
            }
            for sum in &mut per_subset {
                *sum /= config.rollouts as f64;
            }
            let degenerate = answers.iter().all(|a| !a.is_valid());
            let report = compute_rewards(&pool, &config.reward)?;
            let share = report.majority.as_ref().map(|m| {
                report.counts[m] as f64 / report.counts.values().sum::<usize>() as f64
            });
            (per_rollout, per_subset, degenerate, share)
        }
    };

    let mut policy_rollouts = Vec::new();
    if collect_policy && !degenerate {
        let advantages = advantages_for_pool(
            &per_rollout,
            config.grouping,
            config.rollouts,
            config.policy.std_epsilon,
        )?;
        for (index, policy_sample) in policy_samples.iter().enumerate() {
            if let Some(sampled) = policy_sample {
                policy_rollouts.push(PolicyRollout {
                    features: sampled.features.clone(),
                    answer: sampled.answer_index,
                    advantage: advantages.advantages[index],
                });
            } else if texts[index].is_empty() {
                // Failed rollout: nothing was sampled, so it cannot join the
                // gradient; its invalid reward already shaped the advantages.
            } else {
                return Err(OrchestratorError::Policy(format!(
                    "backend produced text without a policy sample for {}; toy mode needs the \
                     toy policy backend",
                    sample.video_id
                )));
            }
        }
    }

    let records: Vec<RolloutRecord> = requests
        .iter()
        .enumerate()
        .map(|(index, request)| RolloutRecord {
            video_id: sample.video_id.clone(),
            question_id: sample.question_id.clone(),
            epoch,
            subset_index: request.subset_index,
            rollout_index: request.rollout_index,
            subset: subsets[request.subset_index].clone(),
            text: texts[index].clone(),
            answer: answers[index].as_str().to_string(),
            answer_valid: answers[index].is_valid(),
            reward: per_rollout[index],
            latency_ms: latencies[index],
        })
        .collect();
    let requests_count = records.len();

    Ok(QuestionPass {
        records,
        per_subset_rewards,
        subsets,
        degenerate,
        majority_share,
        policy_rollouts,
        failures,
        requests: requests_count,
    })
}

/// Runs the full adaptation loop over one batch.
///
/// Backend failures mark the affected rollouts invalid and the loop goes on;
/// an epoch in which every rollout failed aborts the run after flushing the
/// partial log. Questions whose pool has no valid answer leave both their
/// frame distribution and the policy untouched for that epoch.
pub fn adapt_batch(
    samples: &[VideoSample],
    config: &AdaptationConfig,
    backend: &mut dyn AnswerBackend,
    initial_policy: Option<ToyPolicy>,
    run_seed: u64,
    mut log: Option<&mut RunLogWriter>,
) -> Result<AdaptOutcome, OrchestratorError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(OrchestratorError::InvalidBatch("batch must be nonempty".into()));
    }
    let batch = &samples[..samples.len().min(config.batch_size)];
    let grid = batch[0].num_frames();
    for sample in batch {
        sample.validate().map_err(OrchestratorError::InvalidBatch)?;
        if sample.num_frames() != grid {
            return Err(OrchestratorError::InvalidBatch(format!(
                "sample {} has {} frames, batch grid is {grid}",
                sample.video_id,
                sample.num_frames()
            )));
        }
    }
    if config.frames_per_subset > grid {
        return Err(OrchestratorError::InvalidBatch(format!(
            "subset size {} exceeds the {grid}-frame grid",
            config.frames_per_subset
        )));
    }
    if config.reward_mode == RewardMode::GroundTruth
        && batch.iter().any(|s| s.frames.sim_env().is_none())
    {
        return Err(OrchestratorError::GroundTruthUnavailable);
    }
    let mut ids: Vec<(&str, &str)> = batch
        .iter()
        .map(|s| (s.video_id.as_str(), s.question_id.as_str()))
        .collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(OrchestratorError::InvalidBatch(
            "duplicate (video_id, question_id) pairs break the determinism contract".into(),
        ));
    }

    let sample_keys: Vec<u64> = batch
        .iter()
        .map(|s| seed::mix(&[seed::hash_str(&s.video_id), seed::hash_str(&s.question_id)]))
        .collect();
    // The policy aggregation order is canonical in ids, so permuting the
    // batch cannot change the step.
    let mut canonical_order: Vec<usize> = (0..batch.len()).collect();
    canonical_order.sort_by(|&a, &b| {
        (&batch[a].video_id, &batch[a].question_id).cmp(&(&batch[b].video_id, &batch[b].question_id))
    });

    let mut distributions: Vec<FrameDistribution> = batch
        .iter()
        .map(|s| init_distribution(s, config.bandit_init))
        .collect::<Result<_, _>>()?;
    let mut policy = initial_policy;
    let mut frozen_subsets: Vec<Option<Vec<Vec<usize>>>> = vec![None; batch.len()];
    let mut records = Vec::new();
    let mut epoch_summaries = Vec::new();

    for epoch in 0..config.epochs {
        if let Some(p) = &policy {
            backend.set_policy(p);
        }
        let epoch_start = records.len();
        let mut epoch_failures = 0usize;
        let mut epoch_requests = 0usize;
        let mut skipped = 0usize;
        let mut majority_sum = 0.0;
        let mut majority_count = 0usize;
        let mut question_rollouts: Vec<Vec<PolicyRollout>> = vec![Vec::new(); batch.len()];

        for (v, sample) in batch.iter().enumerate() {
            let pass = run_question_epoch(
                sample,
                &distributions[v],
                frozen_subsets[v].as_deref(),
                config,
                backend,
                policy.is_some(),
                run_seed,
                sample_keys[v],
                epoch,
            )?;
            epoch_failures += pass.failures;
            epoch_requests += pass.requests;
            if !config.resample_subsets && frozen_subsets[v].is_none() {
                frozen_subsets[v] = Some(pass.subsets.clone());
            }
            if let Some(share) = pass.majority_share {
                majority_sum += share;
                majority_count += 1;
            }
            if pass.degenerate {
                skipped += 1;
            } else {
                let input = BanditUpdateInput::new(
                    pass.subsets.clone(),
                    pass.per_subset_rewards.clone(),
                    config.eta_fs,
                );
                distributions[v] = distributions[v].update(&input)?;
                question_rollouts[v] = pass.policy_rollouts;
                if config.step_per_question {
                    if let Some(current) = policy.take() {
                        let next = if question_rollouts[v].is_empty() {
                            current
                        } else {
                            let stepped =
                                policy_step(&current, &question_rollouts[v], &config.policy)?;
                            backend.set_policy(&stepped);
                            stepped
                        };
                        policy = Some(next);
                    }
                }
            }
            records.extend(pass.records);
        }

        if epoch_requests > 0 && epoch_failures == epoch_requests {
            if let Some(writer) = log.as_deref_mut() {
                for record in &records[epoch_start..] {
                    writer.write_record(record)?;
                }
                writer.flush()?;
            }
            return Err(OrchestratorError::TotalBackendFailure { epoch });
        }

        if !config.step_per_question {
            if let Some(current) = policy.take() {
                let groups: Vec<&[PolicyRollout]> = canonical_order
                    .iter()
                    .map(|&v| question_rollouts[v].as_slice())
                    .filter(|g| !g.is_empty())
                    .collect();
                let next = if groups.is_empty() {
                    current
                } else {
                    batch_policy_step(&current, &groups, &config.policy)?
                };
                policy = Some(next);
            }
        }

        let epoch_records = &records[epoch_start..];
        let mean_reward = if epoch_records.is_empty() {
            0.0
        } else {
            epoch_records.iter().map(|r| r.reward).sum::<f64>() / epoch_records.len() as f64
        };
        let informative_mass = {
            let masses: Vec<f64> = batch
                .iter()
                .zip(&distributions)
                .filter_map(|(sample, dist)| {
                    sample.frames.sim_env().map(|env| dist.mass_on(&env.informative))
                })
                .collect();
            (!masses.is_empty()).then(|| masses.iter().sum::<f64>() / masses.len() as f64)
        };
        epoch_summaries.push(EpochSummary {
            epoch,
            mean_reward,
            majority_frequency: if majority_count > 0 {
                majority_sum / majority_count as f64
            } else {
                0.0
            },
            informative_mass,
            skipped_questions: skipped,
        });

        if let Some(writer) = log.as_deref_mut() {
            for record in epoch_records {
                writer.write_record(record)?;
            }
            writer.flush()?;
        }
    }

    Ok(AdaptOutcome {
        distributions,
        policy,
        records,
        epoch_summaries,
    })
}

/// Frame prior driving inference-time selection.
#[derive(Debug, Clone, Copy)]
pub enum InferencePrior<'a> {
    Global(&'a GlobalPrior),
    /// Random-sampling baseline: ignore any prior.
    Uniform,
    /// CLIP-score baseline: each sample's own scores, normalized.
    ClipScores,
}

#[derive(Debug, Clone, Copy)]
pub struct InferenceConfig {
    /// F_out frames shown to the backend.
    pub frames: usize,
    pub mode: SelectionMode,
    /// 1 = single prediction; >1 = self-consistency over that many votes.
    pub votes: usize,
    pub temperature: f64,
    /// Interpolate a mismatched prior onto the sample grid instead of
    /// erroring.
    pub interpolate: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            frames: 32,
            mode: SelectionMode::SampleWithoutReplacement,
            votes: 1,
            temperature: 1.0,
            interpolate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub question_id: String,
    /// Absent when the backend failed or no answer could be extracted —
    /// never fabricated.
    pub answer: Option<String>,
}

/// Adapted inference: select frames according to the prior, ask the backend
/// once (or `votes` times with majority voting), record predictions.
pub fn adapted_inference(
    samples: &[VideoSample],
    prior: InferencePrior<'_>,
    config: &InferenceConfig,
    backend: &mut dyn AnswerBackend,
    run_seed: u64,
) -> Result<Vec<Prediction>, OrchestratorError> {
    if samples.is_empty() {
        return Err(OrchestratorError::InvalidBatch("evaluation set must be nonempty".into()));
    }
    if config.votes == 0 {
        return Err(OrchestratorError::InvalidBatch("votes must be at least 1".into()));
    }
    let mut predictions = Vec::with_capacity(samples.len());
    for sample in samples {
        sample.validate().map_err(OrchestratorError::InvalidBatch)?;
        let grid = sample.num_frames();
        let probs: Vec<f64> = match prior {
            InferencePrior::Uniform => vec![1.0 / grid as f64; grid],
            InferencePrior::ClipScores => {
                let scores = sample.clip_scores.as_deref().ok_or_else(|| {
                    OrchestratorError::InvalidBatch(format!(
                        "sample {} has no clip scores for the clip baseline",
                        sample.video_id
                    ))
                })?;
                let total: f64 = scores.iter().sum();
                if total <= 0.0 {
                    return Err(OrchestratorError::InvalidBatch(format!(
                        "sample {} clip scores are all zero",
                        sample.video_id
                    )));
                }
                scores.iter().map(|s| s / total).collect()
            }
            InferencePrior::Global(global) => {
                if global.num_frames() == grid {
                    global.probs().to_vec()
                } else if config.interpolate {
                    distops::interpolate(global.probs(), grid)?
                } else {
                    return Err(OrchestratorError::PriorGridMismatch {
                        prior: global.num_frames(),
                        sample: grid,
                    });
                }
            }
        };
        let sample_key =
            seed::mix(&[seed::hash_str(&sample.video_id), seed::hash_str(&sample.question_id)]);
        let mut select_rng = seed::rng_from(&[run_seed, sample_key, seed::tag::INFER]);
        let frames = distops::select_inference_frames(&probs, config.frames, config.mode, &mut select_rng)?;

        let mut votes: Vec<ExtractedAnswer> = Vec::with_capacity(config.votes);
        for vote in 0..config.votes {
            let request = RolloutRequest {
                sample,
                subset: &frames,
                epoch: 0,
                subset_index: 0,
                rollout_index: vote,
                temperature: config.temperature,
                seed: seed::mix(&[run_seed, sample_key, vote as u64, seed::tag::INFER]),
            };
            match backend.generate(&request) {
                Ok(output) => votes.push(extract::extract_answer(&output.text, &sample.format)),
                Err(_) => votes.push(ExtractedAnswer::invalid()),
            }
        }
        let answer = if config.votes == 1 {
            votes[0].is_valid().then(|| votes[0].as_str().to_string())
        } else {
            let pool = AnswerPool::from_answers(1, config.votes, votes)?;
            crate::reward::self_consistency_answer(&pool).ok()
        };
        predictions.push(Prediction {
            video_id: sample.video_id.clone(),
            question_id: sample.question_id.clone(),
            answer,
        });
    }
    Ok(predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, SimOracleBackend, ToyPolicyBackend, VideoSample};
    use crate::sim::{self, SimSpec};

    fn sim_samples(count: usize, spec: &SimSpec, tag: u64) -> Vec<VideoSample> {
        let mut rng = seed::rng_from(&[tag, seed::tag::ENV]);
        (0..count)
            .map(|i| {
                VideoSample::from_sim(i, sim::generate_env(spec, None, &mut rng).unwrap())
            })
            .collect()
    }

    fn quick_config() -> AdaptationConfig {
        AdaptationConfig {
            epochs: 2,
            ..AdaptationConfig::default()
        }
    }

    #[test]
    fn conservation_of_work() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(3, &spec, 1);
        let config = quick_config();
        let mut backend = SimOracleBackend::new(true);
        let outcome = adapt_batch(&samples, &config, &mut backend, None, 7, None).unwrap();
        // V·E·K·N records, no more, no fewer.
        assert_eq!(outcome.records.len(), 3 * 2 * 4 * 8);
        assert_eq!(outcome.epoch_summaries.len(), 2);
        assert_eq!(outcome.distributions.len(), 3);
        for dist in &outcome.distributions {
            assert_eq!(dist.step_count(), 2);
        }
    }

    #[test]
    fn sim_runs_are_bitwise_reproducible() {
        let spec = SimSpec::new(16, 4, 3);
        let samples = sim_samples(2, &spec, 2);
        let config = quick_config();
        let a = adapt_batch(&samples, &config, &mut SimOracleBackend::new(true), None, 3, None)
            .unwrap();
        let b = adapt_batch(&samples, &config, &mut SimOracleBackend::new(true), None, 3, None)
            .unwrap();
        assert_eq!(a.records, b.records);
        for (x, y) in a.distributions.iter().zip(&b.distributions) {
            assert_eq!(x.probs(), y.probs());
            assert_eq!(x.weights(), y.weights());
        }
    }

    #[test]
    fn constant_backend_yields_unanimous_rewards_and_identity_updates() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(2, &spec, 3);
        let config = quick_config();
        let mut backend = ScriptedBackend::constant("Answer: B");
        let outcome = adapt_batch(&samples, &config, &mut backend, None, 5, None).unwrap();
        assert!(outcome.records.iter().all(|r| r.reward == 1.0));
        // Equal per-subset rewards keep the distribution uniform.
        for dist in &outcome.distributions {
            for &p in dist.probs() {
                assert!((p - 1.0 / 12.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_questions_skip_both_updates() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(1, &spec, 4);
        let mut config = quick_config();
        config.epochs = 1;
        // Unparseable text, but the backend call itself succeeds.
        let mut backend = ScriptedBackend::constant("mumbling without commitment");
        let outcome = adapt_batch(&samples, &config, &mut backend, None, 5, None).unwrap();
        assert_eq!(outcome.epoch_summaries[0].skipped_questions, 1);
        assert_eq!(outcome.distributions[0].step_count(), 0);
        assert!(outcome.records.iter().all(|r| !r.answer_valid && r.reward == -1.0));
    }

    #[test]
    fn total_backend_failure_aborts_with_flushed_log() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(1, &spec, 5);
        let mut config = quick_config();
        config.epochs = 3;
        let mut backend = ScriptedBackend::from_script(vec![Err("down".into())]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let file = std::fs::File::create(&path).unwrap();
        let mut log = RunLogWriter::new(Box::new(file), 5, &config).unwrap();
        let err = adapt_batch(&samples, &config, &mut backend, None, 5, Some(&mut log)).unwrap_err();
        match err {
            OrchestratorError::TotalBackendFailure { epoch } => assert_eq!(epoch, 0),
            other => panic!("expected TotalBackendFailure, got {other:?}"),
        }
        drop(log);
        let text = std::fs::read_to_string(&path).unwrap();
        let (header, records) = read_rollout_log(&text).unwrap();
        assert_eq!(header.seed, 5);
        assert_eq!(records.len(), 4 * 8);
        assert!(records.iter().all(|r| !r.answer_valid));
    }

    #[test]
    fn partial_failures_mark_rollouts_invalid_but_continue() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(1, &spec, 6);
        let mut config = quick_config();
        config.epochs = 1;
        let mut backend = ScriptedBackend::from_script(vec![
            Ok("Answer: A".into()),
            Err("flaky".into()),
            Ok("Answer: A".into()),
            Ok("Answer: B".into()),
        ]);
        let outcome = adapt_batch(&samples, &config, &mut backend, None, 5, None).unwrap();
        let invalid = outcome.records.iter().filter(|r| !r.answer_valid).count();
        assert_eq!(invalid, 8);
        assert_eq!(outcome.distributions[0].step_count(), 1);
    }

    #[test]
    fn batch_permutation_does_not_change_policy_or_distributions() {
        let spec = SimSpec::new(16, 4, 3);
        let samples = sim_samples(3, &spec, 7);
        let mut config = quick_config();
        config.policy.eta = 0.3;
        let env = samples[0].frames.sim_env().unwrap();
        let policy = ToyPolicy::evidence_biased(env.informative.len() + 1, env.answer_count, 0.4);

        let mut backend = ToyPolicyBackend::new(policy.clone(), true);
        let a = adapt_batch(&samples, &config, &mut backend, Some(policy.clone()), 11, None)
            .unwrap();

        let permuted: Vec<VideoSample> =
            vec![samples[2].clone(), samples[0].clone(), samples[1].clone()];
        let mut backend = ToyPolicyBackend::new(policy.clone(), true);
        let b = adapt_batch(&permuted, &config, &mut backend, Some(policy), 11, None).unwrap();

        let theta_a = a.policy.unwrap();
        let theta_b = b.policy.unwrap();
        for (x, y) in theta_a.theta().iter().zip(theta_b.theta()) {
            assert!((x - y).abs() <= 1e-9);
        }
        // Per-sample distributions follow the sample, not the position.
        for (x, y) in a.distributions.iter().zip([&b.distributions[1], &b.distributions[2], &b.distributions[0]])
        {
            assert_eq!(x.probs(), y.probs());
        }
    }

    #[test]
    fn duplicate_sample_ids_are_rejected() {
        let spec = SimSpec::new(12, 4, 2);
        let mut samples = sim_samples(2, &spec, 8);
        samples[1].video_id = samples[0].video_id.clone();
        samples[1].question_id = samples[0].question_id.clone();
        let err =
            adapt_batch(&samples, &quick_config(), &mut SimOracleBackend::new(true), None, 1, None)
                .unwrap_err();
        assert!(matches!(err, OrchestratorError::InvalidBatch(_)));
    }

    #[test]
    fn ground_truth_mode_rewards_only_correct_answers() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(2, &spec, 9);
        let mut config = quick_config();
        config.reward_mode = RewardMode::GroundTruth;
        config.epochs = 1;
        let mut backend = SimOracleBackend::new(true);
        let outcome = adapt_batch(&samples, &config, &mut backend, None, 13, None).unwrap();
        for record in &outcome.records {
            assert!(record.reward == 0.0 || record.reward == 1.0);
            let sample = samples
                .iter()
                .find(|s| s.video_id == record.video_id)
                .unwrap();
            let truth = sample.frames.sim_env().unwrap().truth_letter();
            assert_eq!(record.reward == 1.0, record.answer == truth);
        }
    }

    #[test]
    fn run_log_round_trips_bitwise() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(2, &spec, 10);
        let config = quick_config();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        {
            let file = std::fs::File::create(&path).unwrap();
            let mut log = RunLogWriter::new(Box::new(file), 21, &config).unwrap();
            adapt_batch(&samples, &config, &mut SimOracleBackend::new(true), None, 21, Some(&mut log))
                .unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let (header, records) = read_rollout_log(&text).unwrap();
        assert_eq!(header.seed, 21);
        assert_eq!(records.len(), 2 * 2 * 4 * 8);

        // Re-serialization reproduces the identical bytes.
        let mut rebuilt = serde_json::to_string(&header).unwrap();
        rebuilt.push('\n');
        for record in &records {
            rebuilt.push_str(&serde_json::to_string(record).unwrap());
            rebuilt.push('\n');
        }
        assert_eq!(rebuilt, text);
    }

    #[test]
    fn inference_with_uniform_prior_and_topk_uses_tie_broken_frames() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(1, &spec, 11);
        let config = InferenceConfig {
            frames: 4,
            mode: SelectionMode::TopK,
            ..InferenceConfig::default()
        };
        // With a uniform prior, TopK tie-breaks toward the lowest indices.
        let mut backend = SimOracleBackend::new(true);
        let predictions =
            adapted_inference(&samples, InferencePrior::Uniform, &config, &mut backend, 3).unwrap();
        assert_eq!(predictions.len(), 1);
        assert!(predictions[0].answer.is_some());
    }

    #[test]
    fn self_consistency_votes_match_majority_of_vote_pool() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(1, &spec, 12);
        let config = InferenceConfig { frames: 4, votes: 8, ..InferenceConfig::default() };
        let mut backend = ScriptedBackend::from_script(vec![
            Ok("Answer: B".into()),
            Ok("Answer: C".into()),
            Ok("Answer: B".into()),
        ]);
        let predictions =
            adapted_inference(&samples, InferencePrior::Uniform, &config, &mut backend, 3).unwrap();
        // Script cycles B,C,B over 8 votes: B appears 6 times, C twice.
        assert_eq!(predictions[0].answer.as_deref(), Some("B"));
    }

    #[test]
    fn failed_inference_is_absent_not_fabricated() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(1, &spec, 13);
        let config = InferenceConfig { frames: 4, ..InferenceConfig::default() };
        let mut backend = ScriptedBackend::from_script(vec![Err("down".into())]);
        let predictions =
            adapted_inference(&samples, InferencePrior::Uniform, &config, &mut backend, 3).unwrap();
        assert_eq!(predictions[0].answer, None);
    }

    #[test]
    fn prior_grid_mismatch_names_both_grids_unless_interpolation_is_on() {
        let spec = SimSpec::new(12, 4, 2);
        let samples = sim_samples(1, &spec, 14);
        let prior = GlobalPrior::from_parts(vec![1.0 / 40.0; 40], 8).unwrap();
        let config = InferenceConfig { frames: 4, ..InferenceConfig::default() };
        let mut backend = SimOracleBackend::new(true);
        let err = adapted_inference(
            &samples,
            InferencePrior::Global(&prior),
            &config,
            &mut backend,
            3,
        )
        .unwrap_err();
        match err {
            OrchestratorError::PriorGridMismatch { prior: p, sample: s } => {
                assert_eq!((p, s), (40, 12));
            }
            other => panic!("expected PriorGridMismatch, got {other:?}"),
        }
        let config = InferenceConfig { interpolate: true, frames: 4, ..config };
        adapted_inference(&samples, InferencePrior::Global(&prior), &config, &mut backend, 3)
            .unwrap();
    }
}
