//! `ttrl ablate`: sim-mode comparison sweeps — reward source, weight
//! initialization, K/N grid, and per-epoch checkpoints.

use super::{prepare_run, sim_accuracy, write_text};
use crate::config::{BackendKind, ClipMode, RunConfig};
use crate::samples::{build_sim_samples, resolve_prior};
use crate::CliError;
use std::fmt::Write as _;
use ttrl_core::distops::average_distributions;
use ttrl_core::orchestrate::{
    adapt_batch, adapted_inference, AdaptOutcome, BanditInit, InferenceConfig, InferencePrior,
    RewardMode,
};
use ttrl_core::seed;
use ttrl_core::SimOracleBackend;

/// Informative-mass level treated as "converged" in comparison tables: three
/// times the uniform mass of a 4-in-40 informative set.
pub const MASS_THRESHOLD: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    GtReward,
    UniformInit,
    VaryKn,
    Epochs,
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(value: &str) -> Result<Self, Self::Err> {
        match value {
            "gt-reward" => Ok(Self::GtReward),
            "uniform-init" => Ok(Self::UniformInit),
            "vary-KN" | "vary-kn" => Ok(Self::VaryKn),
            "epochs" => Ok(Self::Epochs),
            other => Err(format!(
                "unknown ablation {other:?}; expected gt-reward | uniform-init | vary-KN | epochs"
            )),
        }
    }
}

pub fn run(config: &RunConfig, ablation: Ablation) -> Result<(), CliError> {
    if config.backend != BackendKind::Sim && ablation == Ablation::GtReward {
        return Err(CliError::Config(
            "gt-reward ablation needs sim ground truth (a labels file is not supported)".into(),
        ));
    }
    if config.backend != BackendKind::Sim {
        return Err(CliError::Config("ablations run against the sim backend".into()));
    }
    std::fs::create_dir_all(&config.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", config.out.display())))?;
    match ablation {
        Ablation::GtReward => gt_reward(config),
        Ablation::UniformInit => uniform_init(config),
        Ablation::VaryKn => vary_kn(config),
        Ablation::Epochs => epochs(config),
    }
}

fn run_once(config: &RunConfig) -> Result<AdaptOutcome, CliError> {
    let mut prepared = prepare_run(config)?;
    Ok(adapt_batch(
        &prepared.samples,
        &config.adapt,
        prepared.backend.as_mut(),
        prepared.policy.take(),
        config.seed,
        None,
    )?)
}

fn final_mass(outcome: &AdaptOutcome) -> f64 {
    outcome
        .epoch_summaries
        .last()
        .and_then(|s| s.informative_mass)
        .unwrap_or(f64::NAN)
}

fn final_reward(outcome: &AdaptOutcome) -> f64 {
    outcome.epoch_summaries.last().map(|s| s.mean_reward).unwrap_or(f64::NAN)
}

/// Held-out accuracy using the run's merged prior, via the sim oracle.
fn eval_accuracy(config: &RunConfig, outcome: &AdaptOutcome, tag: u64) -> Result<f64, CliError> {
    let prior = average_distributions(&outcome.distributions)?;
    let (positional, _) = resolve_prior(config)?;
    let held_out = build_sim_samples(
        config,
        positional.as_deref(),
        config.sim.eval_videos,
        "eval",
        seed::tag::EVAL ^ tag,
    )?;
    let inference = InferenceConfig {
        frames: config.infer.frames.min(config.sim.num_frames),
        mode: config.infer.mode,
        votes: 1,
        temperature: config.adapt.temperature,
        interpolate: true,
    };
    let mut backend = SimOracleBackend::new(config.sim.text_mode);
    let predictions =
        adapted_inference(&held_out, InferencePrior::Global(&prior), &inference, &mut backend, config.seed ^ tag)?;
    Ok(sim_accuracy(&predictions, &held_out).2)
}

fn gt_reward(config: &RunConfig) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (label, mode) in [("majority", RewardMode::Frequency), ("ground-truth", RewardMode::GroundTruth)] {
        let mut variant = config.clone();
        variant.adapt.reward_mode = mode;
        let outcome = run_once(&variant)?;
        let accuracy = eval_accuracy(&variant, &outcome, 0xA11CE)?;
        rows.push((label, final_reward(&outcome), final_mass(&outcome), accuracy));
    }
    let mut csv = String::from("reward_mode,final_mean_reward,final_informative_mass,eval_accuracy\n");
    println!(
        "{:>13}  {:>17}  {:>22}  {:>13}",
        "reward_mode", "final_mean_reward", "final_informative_mass", "eval_accuracy"
    );
    for (label, reward, mass, accuracy) in &rows {
        let _ = writeln!(csv, "{label},{reward},{mass},{accuracy}");
        println!("{label:>13}  {reward:>17.4}  {mass:>22.4}  {accuracy:>13.4}");
    }
    write_text(&config.out.join("ablate_gt_reward.csv"), &csv)?;
    println!("wrote {}/ablate_gt_reward.csv", config.out.display());
    Ok(())
}

fn uniform_init(config: &RunConfig) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (label, init) in [("uniform", BanditInit::Uniform), ("clip", BanditInit::ClipScores)] {
        let mut variant = config.clone();
        variant.adapt.bandit_init = init;
        if init == BanditInit::ClipScores {
            variant.sim.clip_mode = ClipMode::Informative;
        }
        let outcome = run_once(&variant)?;
        let mass = final_mass(&outcome);
        rows.push((label, mass, mass >= MASS_THRESHOLD));
    }
    let mut csv = String::from("init,final_informative_mass,threshold_met\n");
    println!("{:>8}  {:>22}  {:>13}", "init", "final_informative_mass", "threshold_met");
    for (label, mass, met) in &rows {
        let _ = writeln!(csv, "{label},{mass},{met}");
        println!("{label:>8}  {mass:>22.4}  {met:>13}");
    }
    write_text(&config.out.join("ablate_uniform_init.csv"), &csv)?;
    println!("wrote {}/ablate_uniform_init.csv", config.out.display());
    Ok(())
}

fn vary_kn(config: &RunConfig) -> Result<(), CliError> {
    let mut csv = String::from("subsets,rollouts,final_mean_reward,final_informative_mass\n");
    println!(
        "{:>7}  {:>8}  {:>17}  {:>22}",
        "subsets", "rollouts", "final_mean_reward", "final_informative_mass"
    );
    for subsets in [4usize, 8] {
        for rollouts in [8usize, 16, 32] {
            let mut variant = config.clone();
            variant.adapt.subsets = subsets;
            variant.adapt.rollouts = rollouts;
            let outcome = run_once(&variant)?;
            let reward = final_reward(&outcome);
            let mass = final_mass(&outcome);
            let _ = writeln!(csv, "{subsets},{rollouts},{reward},{mass}");
            println!("{subsets:>7}  {rollouts:>8}  {reward:>17.4}  {mass:>22.4}");
        }
    }
    write_text(&config.out.join("ablate_vary_kn.csv"), &csv)?;
    println!("wrote {}/ablate_vary_kn.csv", config.out.display());
    Ok(())
}

fn epochs(config: &RunConfig) -> Result<(), CliError> {
    let outcome = run_once(config)?;
    let mut csv = String::from("epoch,mean_reward,majority_frequency,informative_mass\n");
    println!(
        "{:>5}  {:>11}  {:>18}  {:>16}",
        "epoch", "mean_reward", "majority_frequency", "informative_mass"
    );
    for summary in &outcome.epoch_summaries {
        let mass = summary.informative_mass.unwrap_or(f64::NAN);
        let _ = writeln!(
            csv,
            "{},{},{},{mass}",
            summary.epoch, summary.mean_reward, summary.majority_frequency
        );
        println!(
            "{:>5}  {:>11.4}  {:>18.4}  {:>16.4}",
            summary.epoch, summary.mean_reward, summary.majority_frequency, mass
        );
    }
    write_text(&config.out.join("ablate_epochs.csv"), &csv)?;
    println!("wrote {}/ablate_epochs.csv", config.out.display());
    Ok(())
}
