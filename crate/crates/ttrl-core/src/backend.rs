//! Answer backends: where rollouts come from.
//!
//! The adaptation loop only needs "question + frame subset → generated text".
//! Three implementations cover the desk-scale matrix: the sim oracle (frame
//! coverage drives accuracy), the toy policy (trainable, reports what it
//! sampled so the policy step can use exact log-prob gradients), and a
//! scripted backend for failure-path tests. The remote HTTP backend lives in
//! `remote`.

use crate::extract::AnswerFormat;
use crate::grpo::ToyPolicy;
use crate::seed;
use crate::sim::{self, SimEnvironment};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("image file {0} is empty")]
    EmptyImage(PathBuf),
    #[error("cannot read image {path}: {detail}")]
    ImageRead { path: PathBuf, detail: String },
    #[error("unsupported image extension for {0} (expect .jpg or .png)")]
    UnsupportedImage(PathBuf),
    #[error("prompt estimate of {estimated} tokens exceeds the {limit}-token limit")]
    PromptTooLarge { estimated: usize, limit: usize },
    #[error("transport failure against {url}: {detail}")]
    Transport { url: String, detail: String },
    #[error("endpoint {url} returned status {status}: {detail}")]
    Endpoint { url: String, status: u16, detail: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("backend does not support this sample: {0}")]
    UnsupportedSample(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
}

/// Where a sample's frames live.
#[derive(Debug, Clone)]
pub enum FrameSource {
    /// Synthetic environment standing in for the video.
    Sim(SimEnvironment),
    /// Ordered frame image files on disk.
    Images(Vec<PathBuf>),
}

impl FrameSource {
    pub fn num_frames(&self) -> usize {
        match self {
            FrameSource::Sim(env) => env.num_frames,
            FrameSource::Images(paths) => paths.len(),
        }
    }

    pub fn sim_env(&self) -> Option<&SimEnvironment> {
        match self {
            FrameSource::Sim(env) => Some(env),
            FrameSource::Images(_) => None,
        }
    }
}

/// One video question entering the adaptation loop.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub video_id: String,
    pub question_id: String,
    pub question: String,
    pub format: AnswerFormat,
    pub frames: FrameSource,
    pub clip_scores: Option<Vec<f64>>,
}

impl VideoSample {
    pub fn num_frames(&self) -> usize {
        self.frames.num_frames()
    }

    pub fn validate(&self) -> Result<(), String> {
        self.format.validate()?;
        if let Some(scores) = &self.clip_scores {
            if scores.len() != self.num_frames() {
                return Err(format!(
                    "clip scores length {} does not match frame grid {}",
                    scores.len(),
                    self.num_frames()
                ));
            }
            if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err("clip scores must be finite and nonnegative".into());
            }
        }
        Ok(())
    }

    /// A sample wrapping a synthetic environment, with ids derived from the
    /// batch position.
    pub fn from_sim(index: usize, env: SimEnvironment) -> Self {
        Self {
            video_id: format!("sim-{index:04}"),
            question_id: format!("sim-{index:04}-q0"),
            question: format!(
                "Which option does the highlighted content support? Choose one of {} options.",
                env.answer_count
            ),
            format: AnswerFormat::MultipleChoiceLetter { options: env.answer_count as u8 },
            frames: FrameSource::Sim(env),
            clip_scores: None,
        }
    }

    /// Attaches CLIP-style scores concentrated on the environment's
    /// informative frames, with `noise` mass spread over the rest.
    pub fn with_synthetic_clip_scores(mut self, noise: f64) -> Self {
        if let FrameSource::Sim(env) = &self.frames {
            let t = env.num_frames;
            let mut scores = vec![noise.max(1e-6); t];
            for &frame in &env.informative {
                scores[frame] = 1.0;
            }
            self.clip_scores = Some(scores);
        }
        self
    }
}

/// One rollout to generate.
#[derive(Debug, Clone)]
pub struct RolloutRequest<'a> {
    pub sample: &'a VideoSample,
    pub subset: &'a [usize],
    pub epoch: usize,
    pub subset_index: usize,
    pub rollout_index: usize,
    pub temperature: f64,
    /// Deterministic per-rollout seed; backends with randomness derive their
    /// stream from it.
    pub seed: u64,
}

/// What came back.
#[derive(Debug, Clone)]
pub struct BackendOutput {
    pub text: String,
    pub latency_ms: Option<u64>,
    /// Present in toy mode: exactly what the policy sampled, so the policy
    /// step does not depend on re-extracting it from text.
    pub policy_sample: Option<PolicySample>,
}

impl BackendOutput {
    pub fn text_only(text: String) -> Self {
        Self { text, latency_ms: None, policy_sample: None }
    }
}

/// The toy policy's bookkeeping for one rollout.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub features: Vec<f64>,
    /// Canonical answer index the policy sampled.
    pub answer_index: usize,
}

pub trait AnswerBackend {
    fn generate(&mut self, request: &RolloutRequest<'_>) -> Result<BackendOutput, BackendError>;

    /// Batched entry point; backends with internal parallelism override it.
    /// Results are positionally aligned with the requests.
    fn generate_many(
        &mut self,
        requests: &[RolloutRequest<'_>],
    ) -> Vec<Result<BackendOutput, BackendError>> {
        requests.iter().map(|r| self.generate(r)).collect()
    }

    /// Called at every epoch boundary in toy mode with the current policy
    /// snapshot. Backends without a policy ignore it.
    fn set_policy(&mut self, _policy: &ToyPolicy) {}
}

/// Emits the sim oracle's answers, optionally wrapped in model-style prose so
/// the extractor is exercised end to end.
#[derive(Debug, Clone, Default)]
pub struct SimOracleBackend {
    pub text_mode: bool,
}

impl SimOracleBackend {
    pub fn new(text_mode: bool) -> Self {
        Self { text_mode }
    }
}

impl AnswerBackend for SimOracleBackend {
    fn generate(&mut self, request: &RolloutRequest<'_>) -> Result<BackendOutput, BackendError> {
        let env = request.sample.frames.sim_env().ok_or_else(|| {
            BackendError::UnsupportedSample("sim backend needs sim frame sources".into())
        })?;
        let mut rng = seed::rng_from(&[request.seed, seed::tag::GENERATE]);
        let option = sim::oracle_answer(env, request.subset, &mut rng);
        let letter = sim::option_letter(option);
        let text = if self.text_mode { sim::wrap_answer_text(&letter) } else { letter };
        Ok(BackendOutput::text_only(text))
    }
}

/// Samples answers from the toy policy over canonical indices and maps them
/// back to option letters through the environment.
#[derive(Debug, Clone)]
pub struct ToyPolicyBackend {
    policy: ToyPolicy,
    pub text_mode: bool,
}

impl ToyPolicyBackend {
    pub fn new(policy: ToyPolicy, text_mode: bool) -> Self {
        Self { policy, text_mode }
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.policy
    }
}

impl AnswerBackend for ToyPolicyBackend {
    fn generate(&mut self, request: &RolloutRequest<'_>) -> Result<BackendOutput, BackendError> {
        let env = request.sample.frames.sim_env().ok_or_else(|| {
            BackendError::UnsupportedSample("toy policy backend needs sim frame sources".into())
        })?;
        if self.policy.answer_count() != env.answer_count {
            return Err(BackendError::UnsupportedSample(format!(
                "policy answers {} options, environment has {}",
                self.policy.answer_count(),
                env.answer_count
            )));
        }
        let features = env.features_for(request.subset);
        if features.len() != self.policy.feature_dim() {
            return Err(BackendError::UnsupportedSample(format!(
                "policy feature dim {} does not match environment dim {}",
                self.policy.feature_dim(),
                features.len()
            )));
        }
        let mut rng = seed::rng_from(&[request.seed, seed::tag::GENERATE]);
        let canonical = self.policy.sample(&features, &mut rng);
        let letter = env.letter_for_canonical(canonical);
        let text = if self.text_mode { sim::wrap_answer_text(&letter) } else { letter };
        Ok(BackendOutput {
            text,
            latency_ms: None,
            policy_sample: Some(PolicySample { features, answer_index: canonical }),
        })
    }

    fn set_policy(&mut self, policy: &ToyPolicy) {
        self.policy = policy.clone();
    }
}

/// Returns a fixed script of responses, cycling; entries of `Err` simulate
/// backend failures. For tests and degenerate-path checks.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    script: Vec<Result<String, String>>,
    cursor: usize,
}

impl ScriptedBackend {
    pub fn constant(text: &str) -> Self {
        Self { script: vec![Ok(text.to_string())], cursor: 0 }
    }

    pub fn from_script(script: Vec<Result<String, String>>) -> Self {
        Self { script, cursor: 0 }
    }
}

impl AnswerBackend for ScriptedBackend {
    fn generate(&mut self, _request: &RolloutRequest<'_>) -> Result<BackendOutput, BackendError> {
        let entry = self.script[self.cursor % self.script.len()].clone();
        self.cursor += 1;
        match entry {
            Ok(text) => Ok(BackendOutput::text_only(text)),
            Err(detail) => Err(BackendError::Scripted(detail)),
        }
    }
}
