//! `ttrl infer`: adapted inference over an evaluation set.

use super::{prepare_run, sim_accuracy, write_text};
use crate::config::{Baseline, BackendKind, RunConfig};
use crate::samples::{build_sim_samples, load_remote_samples, resolve_prior};
use crate::CliError;
use std::path::Path;
use ttrl_core::backend::{AnswerBackend, SimOracleBackend, ToyPolicyBackend, VideoSample};
use ttrl_core::distops::{read_distribution_document, DistributionDocument, GlobalPrior};
use ttrl_core::grpo::ToyPolicy;
use ttrl_core::orchestrate::{adapted_inference, InferenceConfig, InferencePrior};
use ttrl_core::seed;

pub fn run(
    config: &RunConfig,
    prior_path: Option<&Path>,
    policy_path: Option<&Path>,
) -> Result<(), CliError> {
    let samples = eval_samples(config)?;
    let mut backend = eval_backend(config, policy_path)?;

    // The learned baseline needs a prior file; the others ignore it.
    let loaded_prior: Option<GlobalPrior> = match config.infer.baseline {
        Baseline::Learned => {
            let path = prior_path.ok_or_else(|| {
                CliError::Config("the learned baseline needs --prior <fdist file>".into())
            })?;
            Some(load_prior(path)?)
        }
        _ => None,
    };
    let prior = match (&config.infer.baseline, &loaded_prior) {
        (Baseline::Learned, Some(p)) => InferencePrior::Global(p),
        (Baseline::Random, _) | (Baseline::SelfConsistency, _) => InferencePrior::Uniform,
        (Baseline::Clip, _) => InferencePrior::ClipScores,
        (Baseline::Learned, None) => unreachable!(),
    };

    let inference = InferenceConfig {
        frames: config.infer.frames,
        mode: config.infer.mode,
        votes: config.infer.votes,
        temperature: config.adapt.temperature,
        interpolate: config.infer.interpolate,
    };
    let predictions =
        adapted_inference(&samples, prior, &inference, backend.as_mut(), config.seed)?;

    std::fs::create_dir_all(&config.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", config.out.display())))?;
    let mut lines = String::new();
    for prediction in &predictions {
        lines.push_str(&serde_json::to_string(prediction).expect("prediction serializes"));
        lines.push('\n');
    }
    write_text(&config.out.join("predictions.jsonl"), &lines)?;

    println!(
        "infer: baseline={} frames={} votes={} predictions={}",
        baseline_label(config.infer.baseline),
        inference.frames,
        inference.votes,
        predictions.len()
    );
    if config.backend == BackendKind::Sim {
        let (answered, correct, accuracy) = sim_accuracy(&predictions, &samples);
        println!(
            "accuracy: {correct}/{} correct ({answered} answered) = {accuracy:.4}",
            predictions.len()
        );
        let metrics = serde_json::json!({
            "total": predictions.len(),
            "answered": answered,
            "correct": correct,
            "accuracy": accuracy,
        });
        write_text(&config.out.join("infer_metrics.json"), &metrics.to_string())?;
    }
    println!("wrote {}/predictions.jsonl", config.out.display());
    Ok(())
}

fn baseline_label(baseline: Baseline) -> &'static str {
    match baseline {
        Baseline::Learned => "learned",
        Baseline::Random => "random",
        Baseline::Clip => "clip",
        Baseline::SelfConsistency => "self-consistency",
    }
}

fn eval_samples(config: &RunConfig) -> Result<Vec<VideoSample>, CliError> {
    match config.backend {
        BackendKind::Sim => {
            let (prior, _) = resolve_prior(config)?;
            build_sim_samples(config, prior.as_deref(), config.sim.eval_videos, "eval", seed::tag::EVAL)
        }
        BackendKind::Remote => {
            let manifest = config.remote.samples.as_ref().ok_or_else(|| {
                CliError::Config("remote mode needs `samples = <path>` in [remote]".into())
            })?;
            load_remote_samples(manifest)
        }
    }
}

fn eval_backend(
    config: &RunConfig,
    policy_path: Option<&Path>,
) -> Result<Box<dyn AnswerBackend>, CliError> {
    match config.backend {
        BackendKind::Sim => match policy_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
                let policy: ToyPolicy = serde_json::from_str(&text)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                policy
                    .validate()
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                Ok(Box::new(ToyPolicyBackend::new(policy, config.sim.text_mode)))
            }
            None => Ok(Box::new(SimOracleBackend::new(config.sim.text_mode))),
        },
        BackendKind::Remote => Ok(prepare_run(config)?.backend),
    }
}

fn load_prior(path: &Path) -> Result<GlobalPrior, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    match read_distribution_document(&text)? {
        DistributionDocument::Global { prior, .. } => Ok(prior),
        DistributionDocument::PerVideo { dist, .. } => {
            Ok(GlobalPrior::from_parts(dist.probs().to_vec(), 1)?)
        }
    }
}
