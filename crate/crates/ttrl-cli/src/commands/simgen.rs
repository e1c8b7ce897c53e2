//! `ttrl simgen`: write a replayable synthetic environment batch.

use super::write_text;
use crate::config::RunConfig;
use crate::samples::{resolve_prior, sim_spec};
use crate::CliError;
use std::path::Path;
use ttrl_core::seed;
use ttrl_core::sim::{write_sim_batch, SimBatch};

pub fn run(config: &RunConfig, file: Option<&Path>) -> Result<(), CliError> {
    let (prior, _) = resolve_prior(config)?;
    let mut rng = seed::rng_from(&[config.seed, seed::tag::ENV]);
    let batch = SimBatch::generate(config.sim.videos, &sim_spec(config), prior.as_deref(), &mut rng)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let text = write_sim_batch(&batch);
    let default_path = config.out.join("sim_batch.json");
    let path = file.unwrap_or(&default_path);
    write_text(path, &text)?;
    println!(
        "wrote {} environments (T={}, M={}) to {}",
        batch.environments.len(),
        config.sim.num_frames,
        config.sim.answer_count,
        path.display()
    );
    Ok(())
}
