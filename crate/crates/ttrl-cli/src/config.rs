//! Run configuration: a flat key-value file with section headers.
//!
//! Every key has a default matching the main experimental setup, so an empty
//! file is a valid configuration. Presets live in `presets/` as auditable
//! files. The effective (fully defaulted) configuration is written alongside
//! run outputs and re-running from it reproduces the run.

use crate::CliError;
use std::fmt::Write as _;
use std::path::PathBuf;
use ttrl_core::distops::SelectionMode;
use ttrl_core::grpo::Grouping;
use ttrl_core::orchestrate::{AdaptationConfig, BanditInit, RewardMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Sim,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    None,
    Window,
}

/// How synthetic CLIP-style scores are produced for sim samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipMode {
    None,
    /// Scores peaked on informative frames over a noise floor, standing in
    /// for question-frame similarity.
    Informative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Learned,
    Random,
    Clip,
    SelfConsistency,
}

#[derive(Debug, Clone)]
pub struct SimSection {
    pub videos: usize,
    pub num_frames: usize,
    pub answer_count: usize,
    pub informative_count: usize,
    /// Defaults to chance level (1/answer_count) when absent.
    pub p_base: Option<f64>,
    /// Defaults to reaching 0.9 at full coverage when absent.
    pub gain: Option<f64>,
    /// Defaults to the informative count when absent.
    pub full_signal_count: Option<usize>,
    pub prior: PriorKind,
    pub prior_window_len: usize,
    /// Seeded random placement when absent.
    pub prior_window_start: Option<usize>,
    pub text_mode: bool,
    pub eval_videos: usize,
    pub clip_mode: ClipMode,
    pub clip_noise: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            videos: 8,
            num_frames: 40,
            answer_count: 10,
            informative_count: 4,
            p_base: None,
            gain: None,
            full_signal_count: None,
            prior: PriorKind::None,
            prior_window_len: 8,
            prior_window_start: None,
            text_mode: true,
            eval_videos: 32,
            clip_mode: ClipMode::Informative,
            clip_noise: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferSection {
    pub frames: usize,
    pub mode: SelectionMode,
    pub votes: usize,
    pub baseline: Baseline,
    pub interpolate: bool,
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            frames: 32,
            mode: SelectionMode::SampleWithoutReplacement,
            votes: 1,
            baseline: Baseline::Learned,
            interpolate: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteSection {
    pub samples: Option<PathBuf>,
    pub parallelism: usize,
}

impl Default for RemoteSection {
    fn default() -> Self {
        Self { samples: None, parallelism: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub seed: u64,
    pub out: PathBuf,
    pub adapt: AdaptationConfig,
    pub policy_enabled: bool,
    pub policy_evidence_bias: f64,
    pub policy_temperature: f64,
    pub sim: SimSection,
    pub infer: InferSection,
    pub remote: RemoteSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Sim,
            seed: 0,
            out: PathBuf::from("runs/out"),
            adapt: AdaptationConfig::default(),
            policy_enabled: false,
            policy_evidence_bias: 0.5,
            policy_temperature: 1.0,
            sim: SimSection::default(),
            infer: InferSection::default(),
            remote: RemoteSection::default(),
        }
    }
}

impl RunConfig {
    pub fn resolved_p_base(&self) -> f64 {
        self.sim.p_base.unwrap_or(1.0 / self.sim.answer_count as f64)
    }

    pub fn resolved_gain(&self) -> f64 {
        self.sim.gain.unwrap_or(0.9 - self.resolved_p_base())
    }

    pub fn resolved_full_signal_count(&self) -> usize {
        self.sim.full_signal_count.unwrap_or(self.sim.informative_count)
    }
}

fn bad(line: usize, detail: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("config line {line}: {detail}"))
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| bad(line, format!("field {key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        other => Err(bad(line, format!("field {key}: expected true/false, got {other:?}"))),
    }
}

/// Parses a configuration file. Unknown sections and keys are errors so that
/// typos fail fast; comment lines start with `#` or `;`.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    let mut section = String::from("run");
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(bad(line, "unterminated section header"));
            };
            let name = name.trim();
            if !matches!(name, "run" | "adapt" | "reward" | "bandit" | "policy" | "sim" | "infer" | "remote")
            {
                return Err(bad(line, format!("unknown section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(bad(line, format!("expected `key = value`, got {trimmed:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        apply(&mut config, &section, key, value, line)?;
    }
    validate(&config)?;
    Ok(config)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = parse_config(&text)?;
    // Relative sample manifests resolve against the config file, which is
    // where they are kept in practice.
    if let Some(samples) = &config.remote.samples {
        if samples.is_relative() {
            if let Some(parent) = path.parent() {
                config.remote.samples = Some(parent.join(samples));
            }
        }
    }
    Ok(config)
}

fn apply(
    config: &mut RunConfig,
    section: &str,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), CliError> {
    match (section, key) {
        ("run", "backend") => {
            config.backend = match value {
                "sim" => BackendKind::Sim,
                "remote" => BackendKind::Remote,
                other => return Err(bad(line, format!("field backend: unknown backend {other:?}"))),
            }
        }
        ("run", "seed") => config.seed = parse_value(line, key, value)?,
        ("run", "out") => config.out = PathBuf::from(value),

        ("adapt", "subsets") => config.adapt.subsets = parse_value(line, key, value)?,
        ("adapt", "frames_per_subset") => {
            config.adapt.frames_per_subset = parse_value(line, key, value)?
        }
        ("adapt", "rollouts") => config.adapt.rollouts = parse_value(line, key, value)?,
        ("adapt", "epochs") => config.adapt.epochs = parse_value(line, key, value)?,
        ("adapt", "temperature") => config.adapt.temperature = parse_value(line, key, value)?,
        ("adapt", "batch_size") => config.adapt.batch_size = parse_value(line, key, value)?,
        ("adapt", "grouping") => {
            config.adapt.grouping = match value {
                "per-subset" => Grouping::PerSubset,
                "whole-pool" => Grouping::WholePool,
                other => return Err(bad(line, format!("field grouping: unknown value {other:?}"))),
            }
        }
        ("adapt", "step_per_question") => {
            config.adapt.step_per_question = parse_bool(line, key, value)?
        }
        ("adapt", "resample_subsets") => {
            config.adapt.resample_subsets = parse_bool(line, key, value)?
        }
        ("adapt", "reward_mode") => {
            config.adapt.reward_mode = match value {
                "frequency" => RewardMode::Frequency,
                "ground-truth" => RewardMode::GroundTruth,
                other => {
                    return Err(bad(line, format!("field reward_mode: unknown value {other:?}")))
                }
            }
        }
        ("adapt", "max_prompt_tokens") => {
            config.adapt.max_prompt_tokens = parse_value(line, key, value)?
        }
        ("adapt", "max_response_tokens") => {
            config.adapt.max_response_tokens = parse_value(line, key, value)?
        }

        ("reward", "alpha") => config.adapt.reward.alpha = parse_value(line, key, value)?,
        ("reward", "invalid_reward") => {
            config.adapt.reward.invalid_reward = parse_value(line, key, value)?
        }
        ("reward", "count_invalid_in_frequencies") => {
            config.adapt.reward.count_invalid_in_frequencies = parse_bool(line, key, value)?
        }

        ("bandit", "eta_fs") => config.adapt.eta_fs = parse_value(line, key, value)?,
        ("bandit", "init") => {
            config.adapt.bandit_init = match value {
                "auto" => BanditInit::Auto,
                "uniform" => BanditInit::Uniform,
                "clip" => BanditInit::ClipScores,
                other => return Err(bad(line, format!("field init: unknown value {other:?}"))),
            }
        }

        ("policy", "enabled") => config.policy_enabled = parse_bool(line, key, value)?,
        ("policy", "eta") => config.adapt.policy.eta = parse_value(line, key, value)?,
        ("policy", "kl_coeff") => config.adapt.policy.kl_coeff = parse_value(line, key, value)?,
        ("policy", "std_epsilon") => {
            config.adapt.policy.std_epsilon = parse_value(line, key, value)?
        }
        ("policy", "evidence_bias") => {
            config.policy_evidence_bias = parse_value(line, key, value)?
        }
        ("policy", "temperature") => config.policy_temperature = parse_value(line, key, value)?,

        ("sim", "videos") => config.sim.videos = parse_value(line, key, value)?,
        ("sim", "num_frames") => config.sim.num_frames = parse_value(line, key, value)?,
        ("sim", "answer_count") => config.sim.answer_count = parse_value(line, key, value)?,
        ("sim", "informative_count") => {
            config.sim.informative_count = parse_value(line, key, value)?
        }
        ("sim", "p_base") => config.sim.p_base = Some(parse_value(line, key, value)?),
        ("sim", "gain") => config.sim.gain = Some(parse_value(line, key, value)?),
        ("sim", "full_signal_count") => {
            config.sim.full_signal_count = Some(parse_value(line, key, value)?)
        }
        ("sim", "prior") => {
            config.sim.prior = match value {
                "none" => PriorKind::None,
                "window" => PriorKind::Window,
                other => return Err(bad(line, format!("field prior: unknown value {other:?}"))),
            }
        }
        ("sim", "prior_window_len") => {
            config.sim.prior_window_len = parse_value(line, key, value)?
        }
        ("sim", "prior_window_start") => {
            config.sim.prior_window_start = Some(parse_value(line, key, value)?)
        }
        ("sim", "text_mode") => config.sim.text_mode = parse_bool(line, key, value)?,
        ("sim", "eval_videos") => config.sim.eval_videos = parse_value(line, key, value)?,
        ("sim", "clip_mode") => {
            config.sim.clip_mode = match value {
                "none" => ClipMode::None,
                "informative" => ClipMode::Informative,
                other => return Err(bad(line, format!("field clip_mode: unknown value {other:?}"))),
            }
        }
        ("sim", "clip_noise") => config.sim.clip_noise = parse_value(line, key, value)?,

        ("infer", "frames") => config.infer.frames = parse_value(line, key, value)?,
        ("infer", "mode") => {
            config.infer.mode = match value {
                "sample" => SelectionMode::SampleWithoutReplacement,
                "topk" => SelectionMode::TopK,
                other => return Err(bad(line, format!("field mode: unknown value {other:?}"))),
            }
        }
        ("infer", "votes") => config.infer.votes = parse_value(line, key, value)?,
        ("infer", "baseline") => {
            config.infer.baseline = match value {
                "learned" => Baseline::Learned,
                "random" => Baseline::Random,
                "clip" => Baseline::Clip,
                "self-consistency" => Baseline::SelfConsistency,
                other => return Err(bad(line, format!("field baseline: unknown value {other:?}"))),
            }
        }
        ("infer", "interpolate") => config.infer.interpolate = parse_bool(line, key, value)?,

        ("remote", "samples") => config.remote.samples = Some(PathBuf::from(value)),
        ("remote", "parallelism") => config.remote.parallelism = parse_value(line, key, value)?,

        (section, key) => {
            return Err(bad(line, format!("unknown field {key:?} in section [{section}]")))
        }
    }
    Ok(())
}

fn validate(config: &RunConfig) -> Result<(), CliError> {
    config
        .adapt
        .validate()
        .map_err(|e| CliError::Config(format!("invalid adapt settings: {e}")))?;
    if config.sim.videos == 0 || config.sim.eval_videos == 0 {
        return Err(CliError::Config("sim videos and eval_videos must be at least 1".into()));
    }
    if config.infer.frames == 0 || config.infer.votes == 0 {
        return Err(CliError::Config("infer frames and votes must be at least 1".into()));
    }
    if config.sim.prior == PriorKind::Window {
        let len = config.sim.prior_window_len;
        if len == 0 || len > config.sim.num_frames {
            return Err(CliError::Config(format!(
                "prior window length {len} does not fit the {}-frame grid",
                config.sim.num_frames
            )));
        }
        if let Some(start) = config.sim.prior_window_start {
            if start + len > config.sim.num_frames {
                return Err(CliError::Config(format!(
                    "prior window [{start}, {}) exceeds the {}-frame grid",
                    start + len,
                    config.sim.num_frames
                )));
            }
        }
    }
    Ok(())
}

fn backend_label(kind: BackendKind) -> &'static str {
    match kind {
        BackendKind::Sim => "sim",
        BackendKind::Remote => "remote",
    }
}

/// Renders the fully resolved configuration; parsing it back reproduces the
/// run. Seeded choices (window placement) must already be resolved into
/// `config` by the caller.
pub fn effective_config(config: &RunConfig) -> String {
    let mut out = String::new();
    let grouping = match config.adapt.grouping {
        Grouping::PerSubset => "per-subset",
        Grouping::WholePool => "whole-pool",
    };
    let reward_mode = match config.adapt.reward_mode {
        RewardMode::Frequency => "frequency",
        RewardMode::GroundTruth => "ground-truth",
    };
    let init = match config.adapt.bandit_init {
        BanditInit::Auto => "auto",
        BanditInit::Uniform => "uniform",
        BanditInit::ClipScores => "clip",
    };
    let prior = match config.sim.prior {
        PriorKind::None => "none",
        PriorKind::Window => "window",
    };
    let clip_mode = match config.sim.clip_mode {
        ClipMode::None => "none",
        ClipMode::Informative => "informative",
    };
    let mode = match config.infer.mode {
        SelectionMode::SampleWithoutReplacement => "sample",
        SelectionMode::TopK => "topk",
    };
    let baseline = match config.infer.baseline {
        Baseline::Learned => "learned",
        Baseline::Random => "random",
        Baseline::Clip => "clip",
        Baseline::SelfConsistency => "self-consistency",
    };

    let _ = write!(
        out,
        "[run]\nbackend = {}\nseed = {}\nout = {}\n\n",
        backend_label(config.backend),
        config.seed,
        config.out.display()
    );
    let a = &config.adapt;
    let _ = write!(
        out,
        "[adapt]\nsubsets = {}\nframes_per_subset = {}\nrollouts = {}\nepochs = {}\n\
         temperature = {}\nbatch_size = {}\ngrouping = {grouping}\nstep_per_question = {}\n\
         resample_subsets = {}\nreward_mode = {reward_mode}\nmax_prompt_tokens = {}\n\
         max_response_tokens = {}\n\n",
        a.subsets,
        a.frames_per_subset,
        a.rollouts,
        a.epochs,
        a.temperature,
        a.batch_size,
        a.step_per_question,
        a.resample_subsets,
        a.max_prompt_tokens,
        a.max_response_tokens
    );
    let _ = write!(
        out,
        "[reward]\nalpha = {}\ninvalid_reward = {}\ncount_invalid_in_frequencies = {}\n\n",
        a.reward.alpha, a.reward.invalid_reward, a.reward.count_invalid_in_frequencies
    );
    let _ = write!(out, "[bandit]\neta_fs = {}\ninit = {init}\n\n", a.eta_fs);
    let _ = write!(
        out,
        "[policy]\nenabled = {}\neta = {}\nkl_coeff = {}\nstd_epsilon = {}\n\
         evidence_bias = {}\ntemperature = {}\n\n",
        config.policy_enabled,
        a.policy.eta,
        a.policy.kl_coeff,
        a.policy.std_epsilon,
        config.policy_evidence_bias,
        config.policy_temperature
    );
    let s = &config.sim;
    let _ = write!(
        out,
        "[sim]\nvideos = {}\nnum_frames = {}\nanswer_count = {}\ninformative_count = {}\n\
         p_base = {}\ngain = {}\nfull_signal_count = {}\nprior = {prior}\n\
         prior_window_len = {}\n",
        s.videos,
        s.num_frames,
        s.answer_count,
        s.informative_count,
        config.resolved_p_base(),
        config.resolved_gain(),
        config.resolved_full_signal_count(),
        s.prior_window_len
    );
    if let Some(start) = s.prior_window_start {
        let _ = writeln!(out, "prior_window_start = {start}");
    }
    let _ = write!(
        out,
        "text_mode = {}\neval_videos = {}\nclip_mode = {clip_mode}\nclip_noise = {}\n\n",
        s.text_mode, s.eval_videos, s.clip_noise
    );
    let i = &config.infer;
    let _ = write!(
        out,
        "[infer]\nframes = {}\nmode = {mode}\nvotes = {}\nbaseline = {baseline}\ninterpolate = {}\n\n",
        i.frames, i.votes, i.interpolate
    );
    let _ = write!(out, "[remote]\nparallelism = {}\n", config.remote.parallelism);
    if let Some(samples) = &config.remote.samples {
        let _ = writeln!(out, "samples = {}", samples.display());
    }
    out
}
