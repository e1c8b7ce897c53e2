//! Subcommand implementations.

pub mod ablate;
pub mod adapt;
pub mod dist;
pub mod infer;
pub mod simgen;

use crate::config::{BackendKind, RunConfig};
use crate::samples::{build_sim_samples, load_remote_samples, resolve_prior};
use crate::CliError;
use std::path::Path;
use ttrl_core::backend::{AnswerBackend, SimOracleBackend, ToyPolicyBackend, VideoSample};
use ttrl_core::grpo::ToyPolicy;
use ttrl_core::remote::RemoteBackend;
use ttrl_core::seed;

/// Everything an adaptation run needs, with seeded choices resolved.
pub struct PreparedRun {
    pub samples: Vec<VideoSample>,
    pub backend: Box<dyn AnswerBackend>,
    pub policy: Option<ToyPolicy>,
    /// The input config with window placement and accuracy-curve defaults
    /// pinned, ready for the effective-config file.
    pub resolved: RunConfig,
}

/// Builds samples, backend, and (in toy mode) the initial policy. Fail-fast:
/// remote endpoint configuration is checked here, before anything is written.
pub fn prepare_run(config: &RunConfig) -> Result<PreparedRun, CliError> {
    let mut resolved = config.clone();
    resolved.sim.p_base = Some(config.resolved_p_base());
    resolved.sim.gain = Some(config.resolved_gain());
    resolved.sim.full_signal_count = Some(config.resolved_full_signal_count());

    match config.backend {
        BackendKind::Sim => {
            let (prior, start) = resolve_prior(config)?;
            resolved.sim.prior_window_start = start;
            let samples = build_sim_samples(
                config,
                prior.as_deref(),
                config.sim.videos,
                "sim",
                seed::tag::ENV,
            )?;
            if config.policy_enabled {
                let policy = ToyPolicy::evidence_biased(
                    config.sim.informative_count + 1,
                    config.sim.answer_count,
                    config.policy_evidence_bias,
                )
                .with_temperature(config.policy_temperature);
                let backend = ToyPolicyBackend::new(policy.clone(), config.sim.text_mode);
                Ok(PreparedRun { samples, backend: Box::new(backend), policy: Some(policy), resolved })
            } else {
                let backend = SimOracleBackend::new(config.sim.text_mode);
                Ok(PreparedRun { samples, backend: Box::new(backend), policy: None, resolved })
            }
        }
        BackendKind::Remote => {
            if config.policy_enabled {
                return Err(CliError::Config(
                    "the toy policy needs the sim backend; remote mode learns frame selection only"
                        .into(),
                ));
            }
            let mut backend = RemoteBackend::from_env().map_err(CliError::from)?;
            backend.parallelism = config.remote.parallelism.max(1);
            backend.max_prompt_tokens = config.adapt.max_prompt_tokens;
            backend.max_response_tokens = config.adapt.max_response_tokens;
            let manifest = config.remote.samples.as_ref().ok_or_else(|| {
                CliError::Config("remote mode needs `samples = <path>` in [remote]".into())
            })?;
            let samples = load_remote_samples(manifest)?;
            Ok(PreparedRun { samples, backend: Box::new(backend), policy: None, resolved })
        }
    }
}

/// Timestamp recorded in output metadata: fixed at 0 for seeded sim runs so
/// reruns are byte-identical, wall clock for remote runs.
pub fn created_unix(backend: BackendKind) -> i64 {
    match backend {
        BackendKind::Sim => 0,
        BackendKind::Remote => std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Accuracy of predictions against sim ground truth; absent predictions
/// count as wrong.
pub fn sim_accuracy(
    predictions: &[ttrl_core::orchestrate::Prediction],
    samples: &[VideoSample],
) -> (usize, usize, f64) {
    let mut answered = 0usize;
    let mut correct = 0usize;
    for (prediction, sample) in predictions.iter().zip(samples) {
        if let Some(answer) = &prediction.answer {
            answered += 1;
            let truth = sample
                .frames
                .sim_env()
                .map(|env| env.truth_letter())
                .unwrap_or_default();
            if *answer == truth {
                correct += 1;
            }
        }
    }
    let accuracy = correct as f64 / predictions.len().max(1) as f64;
    (answered, correct, accuracy)
}
