//! Test-time adaptation for video question answering, at desk scale.
//!
//! Given a small unlabeled batch of video questions, the loop samples several
//! frame subsets per video, generates multiple answers per subset, rewards
//! each answer by its frequency across the whole pool (minus an entropy
//! penalty), and reuses that reward twice: group-relative policy updates on
//! an answer policy, and a multiplicative-weights bandit over frames that
//! learns which frames matter. Averaging the per-video frame distributions
//! yields a global prior for inference on unseen videos.
//!
//! Modules follow the pipeline: [`extract`] parses answers out of generated
//! text, [`reward`] scores answer pools, [`bandit`] learns frame importance,
//! [`grpo`] updates the toy policy, [`distops`] handles priors and
//! persistence, [`sim`] provides a closed-form environment plus independent
//! reward oracles, and [`orchestrate`] drives the loop against pluggable
//! [`backend`]s (sim oracle, toy policy, scripted, or a chat-completions
//! endpoint in [`remote`]).

pub mod backend;
pub mod bandit;
pub mod distops;
pub mod extract;
pub mod grpo;
pub mod orchestrate;
pub mod remote;
pub mod reward;
pub mod seed;
pub mod sim;

pub use backend::{
    AnswerBackend, BackendError, BackendOutput, FrameSource, PolicySample, RolloutRequest,
    ScriptedBackend, SimOracleBackend, ToyPolicyBackend, VideoSample,
};
pub use bandit::{BanditError, BanditUpdateInput, FrameDistribution, InitKind};
pub use distops::{
    average_distributions, blend, interpolate, select_inference_frames, BlendSpec, DistMeta,
    DistOpsError, DistributionDocument, GlobalPrior, SelectionMode,
};
pub use extract::{canonicalize, extract_answer, AnswerFormat, ExtractedAnswer, INVALID_SENTINEL};
pub use grpo::{
    advantages_for_pool, batch_policy_step, compute_advantages, policy_step, AdvantageGroup,
    Grouping, GrpoError, PolicyRollout, ToyPolicy, TrainConfig,
};
pub use orchestrate::{
    adapt_batch, adapted_inference, read_rollout_log, AdaptOutcome, AdaptationConfig, BanditInit,
    EpochSummary, InferenceConfig, InferencePrior, OrchestratorError, Prediction, RewardMode,
    RolloutRecord, RunLogHeader, RunLogWriter,
};
pub use remote::{EndpointConfig, RemoteBackend};
pub use reward::{
    compute_frequencies, compute_rewards, normalized_entropy, self_consistency_answer, AnswerPool,
    PoolEntry, RewardError, RewardParams, RewardReport,
};
pub use sim::{
    expected_subset_reward, expected_subset_reward_monte_carlo, generate_env, oracle_answer,
    pool_reward_oracle, read_sim_batch, window_prior, write_sim_batch, McEstimate, SimBatch,
    SimEnvironment, SimError, SimSpec,
};
