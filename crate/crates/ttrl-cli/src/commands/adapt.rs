//! `ttrl adapt`: run the adaptation loop and persist its artifacts.

use super::{created_unix, prepare_run, write_text};
use crate::config::{effective_config, BackendKind, RunConfig};
use crate::CliError;
use ttrl_core::distops::{self, DistMeta};
use ttrl_core::orchestrate::{adapt_batch, AdaptOutcome, RunLogWriter};
use ttrl_core::InitKind;

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let mut prepared = prepare_run(config)?;
    let out = &config.out;
    std::fs::create_dir_all(out.join("fdist"))
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    write_text(&out.join("effective.ini"), &effective_config(&prepared.resolved))?;

    let log_path = out.join("rollouts.jsonl");
    let log_file = std::fs::File::create(&log_path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", log_path.display())))?;
    let mut log = RunLogWriter::new(Box::new(log_file), config.seed, &config.adapt)?;

    let outcome = adapt_batch(
        &prepared.samples,
        &config.adapt,
        prepared.backend.as_mut(),
        prepared.policy.take(),
        config.seed,
        Some(&mut log),
    )?;
    drop(log);

    persist_outputs(config, &prepared.samples, &outcome)?;
    print_summary(config, &outcome);
    Ok(())
}

fn persist_outputs(
    config: &RunConfig,
    samples: &[ttrl_core::backend::VideoSample],
    outcome: &AdaptOutcome,
) -> Result<(), CliError> {
    let out = &config.out;
    let stamp = created_unix(config.backend);
    for (sample, dist) in samples.iter().zip(&outcome.distributions) {
        let meta = DistMeta {
            video_id: sample.video_id.clone(),
            question_id: sample.question_id.clone(),
            created_unix: stamp,
        };
        let text = distops::write_distribution(dist, &meta);
        write_text(&out.join("fdist").join(format!("{}.json", sample.video_id)), &text)?;
    }

    let prior = distops::average_distributions(&outcome.distributions)?;
    let init = merged_init(&outcome.distributions);
    let step_count = outcome.distributions.iter().map(|d| d.step_count()).max().unwrap_or(0);
    let meta = DistMeta {
        video_id: "global".into(),
        question_id: String::new(),
        created_unix: stamp,
    };
    write_text(
        &out.join("global_prior.json"),
        &distops::write_global_prior(&prior, init, step_count, &meta),
    )?;

    if let Some(policy) = &outcome.policy {
        let text = serde_json::to_string_pretty(policy)
            .map_err(|e| CliError::Io(format!("cannot serialize policy: {e}")))?;
        write_text(&out.join("policy.json"), &text)?;
    }
    Ok(())
}

pub fn merged_init(dists: &[ttrl_core::FrameDistribution]) -> InitKind {
    if dists.iter().all(|d| d.init_kind() == InitKind::Uniform) {
        InitKind::Uniform
    } else {
        InitKind::ClipScores
    }
}

fn print_summary(config: &RunConfig, outcome: &AdaptOutcome) {
    println!(
        "adapt: backend={} samples={} K={} F={} N={} epochs={} seed={}",
        match config.backend {
            BackendKind::Sim => "sim",
            BackendKind::Remote => "remote",
        },
        outcome.distributions.len(),
        config.adapt.subsets,
        config.adapt.frames_per_subset,
        config.adapt.rollouts,
        config.adapt.epochs,
        config.seed,
    );
    println!("{:>5}  {:>11}  {:>13}  {:>16}  {:>7}", "epoch", "mean_reward", "majority_freq", "informative_mass", "skipped");
    for summary in &outcome.epoch_summaries {
        let mass = summary
            .informative_mass
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>5}  {:>11.4}  {:>13.4}  {:>16}  {:>7}",
            summary.epoch, summary.mean_reward, summary.majority_frequency, mass, summary.skipped_questions
        );
    }
    println!(
        "wrote {}/fdist/*.json, global_prior.json, rollouts.jsonl{}",
        config.out.display(),
        if outcome.policy.is_some() { ", policy.json" } else { "" }
    );
}
