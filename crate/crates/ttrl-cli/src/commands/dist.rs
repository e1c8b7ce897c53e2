//! `ttrl dist`: file-level distribution tools — merge, interpolate, blend,
//! and plot-data export.

use super::{created_unix, write_text};
use crate::config::BackendKind;
use crate::CliError;
use std::path::Path;
use ttrl_core::distops::{
    self, read_distribution_document, BlendSpec, DistMeta, DistributionDocument, GlobalPrior,
};
use ttrl_core::{FrameDistribution, InitKind};

fn read_document(path: &Path) -> Result<DistributionDocument, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    read_distribution_document(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn merge(output: &Path, inputs: &[std::path::PathBuf]) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::Config("merge needs at least one input file".into()));
    }
    let mut dists: Vec<FrameDistribution> = Vec::with_capacity(inputs.len());
    for path in inputs {
        match read_document(path)? {
            DistributionDocument::PerVideo { dist, .. } => dists.push(dist),
            DistributionDocument::Global { .. } => {
                return Err(CliError::Config(format!(
                    "{}: merge expects per-video distribution files, not a global prior",
                    path.display()
                )));
            }
        }
    }
    let prior = distops::average_distributions(&dists)?;
    let init = super::adapt::merged_init(&dists);
    let step_count = dists.iter().map(|d| d.step_count()).max().unwrap_or(0);
    let meta = DistMeta {
        video_id: "global".into(),
        question_id: String::new(),
        created_unix: created_unix(BackendKind::Sim),
    };
    write_text(output, &distops::write_global_prior(&prior, init, step_count, &meta))?;
    println!("merged {} distributions into {}", dists.len(), output.display());
    Ok(())
}

pub fn interpolate(frames: usize, input: &Path, output: &Path) -> Result<(), CliError> {
    let document = read_document(input)?;
    let resampled = distops::interpolate(document.probs(), frames)?;
    let (init, step_count, source_count) = document_provenance(&document);
    let prior = GlobalPrior::from_parts(resampled, source_count)?;
    write_text(
        output,
        &distops::write_global_prior(&prior, init, step_count, document.meta()),
    )?;
    println!(
        "interpolated {} ({} frames) onto {frames} frames -> {}",
        input.display(),
        document.num_frames(),
        output.display()
    );
    Ok(())
}

pub fn blend(
    w_clip: f64,
    w_dist: f64,
    clip_input: &Path,
    learned_input: &Path,
    output: &Path,
) -> Result<(), CliError> {
    let spec = BlendSpec::new(w_clip, w_dist)?;
    let clip = read_document(clip_input)?;
    let learned = read_document(learned_input)?;
    let combined = distops::blend(clip.probs(), learned.probs(), spec)?;
    let (init, step_count, source_count) = document_provenance(&learned);
    let prior = GlobalPrior::from_parts(combined, source_count)?;
    write_text(
        output,
        &distops::write_global_prior(&prior, init, step_count, learned.meta()),
    )?;
    println!(
        "blended {w_clip}*{} + {w_dist}*{} -> {}",
        clip_input.display(),
        learned_input.display(),
        output.display()
    );
    Ok(())
}

/// Plot-ready CSV: `frame_index,prob` per line.
pub fn show(input: &Path, csv_out: Option<&Path>) -> Result<(), CliError> {
    let document = read_document(input)?;
    let mut csv = String::from("frame_index,prob\n");
    for (index, prob) in document.probs().iter().enumerate() {
        csv.push_str(&format!("{index},{prob}\n"));
    }
    match csv_out {
        Some(path) => {
            write_text(path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn document_provenance(document: &DistributionDocument) -> (InitKind, u64, usize) {
    match document {
        DistributionDocument::PerVideo { dist, .. } => (dist.init_kind(), dist.step_count(), 1),
        DistributionDocument::Global { prior, init, step_count, .. } => {
            (*init, *step_count, prior.source_count())
        }
    }
}
