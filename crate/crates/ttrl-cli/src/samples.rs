//! Sample construction: synthetic batches from the sim section, or real
//! frame-directory manifests for remote runs.

use crate::config::{ClipMode, PriorKind, RunConfig};
use crate::CliError;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use ttrl_core::backend::{FrameSource, VideoSample};
use ttrl_core::extract::AnswerFormat;
use ttrl_core::seed;
use ttrl_core::sim::{self, SimSpec};

pub const WINDOW_TAG: u64 = 0x5749_4e44;

pub fn sim_spec(config: &RunConfig) -> SimSpec {
    SimSpec {
        num_frames: config.sim.num_frames,
        answer_count: config.sim.answer_count,
        informative_count: config.sim.informative_count,
        p_base: config.resolved_p_base(),
        gain: config.resolved_gain(),
        full_signal_count: config.resolved_full_signal_count(),
    }
}

/// Resolves the positional prior, drawing a seeded window placement when the
/// config leaves the start open. Returns the prior and the resolved start so
/// the effective config can record it.
pub fn resolve_prior(config: &RunConfig) -> Result<(Option<Vec<f64>>, Option<usize>), CliError> {
    match config.sim.prior {
        PriorKind::None => Ok((None, None)),
        PriorKind::Window => {
            let len = config.sim.prior_window_len;
            let start = match config.sim.prior_window_start {
                Some(start) => start,
                None => {
                    let mut rng = seed::rng_from(&[config.seed, WINDOW_TAG]);
                    use rand::Rng;
                    rng.random_range(0..=config.sim.num_frames - len)
                }
            };
            let prior = sim::window_prior(config.sim.num_frames, start, len)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok((Some(prior), Some(start)))
        }
    }
}

/// Generates `count` sim samples with ids `<prefix>-NNNN`, seeded by
/// `(run seed, tag)`.
pub fn build_sim_samples(
    config: &RunConfig,
    prior: Option<&[f64]>,
    count: usize,
    prefix: &str,
    tag: u64,
) -> Result<Vec<VideoSample>, CliError> {
    let spec = sim_spec(config);
    let mut rng = seed::rng_from(&[config.seed, tag]);
    (0..count)
        .map(|i| {
            let env = sim::generate_env(&spec, prior, &mut rng)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let mut sample = VideoSample::from_sim(i, env);
            sample.video_id = format!("{prefix}-{i:04}");
            sample.question_id = format!("{prefix}-{i:04}-q0");
            if config.sim.clip_mode == ClipMode::Informative {
                sample = sample.with_synthetic_clip_scores(config.sim.clip_noise);
            }
            Ok(sample)
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct SampleManifestEntry {
    video_id: String,
    question_id: String,
    question: String,
    format: AnswerFormat,
    frames_dir: PathBuf,
    #[serde(default)]
    clip_scores: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct FramesManifest {
    num_frames: usize,
    frames: Vec<String>,
}

/// Loads a remote-mode samples manifest: a JSON array of entries, each
/// pointing at a frame directory carrying its own `manifest.json` with the
/// frame count and ordering.
pub fn load_remote_samples(path: &Path) -> Result<Vec<VideoSample>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read samples manifest {}: {e}", path.display())))?;
    let entries: Vec<SampleManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("samples manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    entries
        .into_iter()
        .map(|entry| {
            let dir = if entry.frames_dir.is_absolute() {
                entry.frames_dir.clone()
            } else {
                base.join(&entry.frames_dir)
            };
            let manifest_path = dir.join("manifest.json");
            let manifest_text = std::fs::read_to_string(&manifest_path).map_err(|e| {
                CliError::Data(format!("cannot read {}: {e}", manifest_path.display()))
            })?;
            let manifest: FramesManifest = serde_json::from_str(&manifest_text)
                .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
            if manifest.frames.len() != manifest.num_frames {
                return Err(CliError::Data(format!(
                    "{}: lists {} frames but declares num_frames {}",
                    manifest_path.display(),
                    manifest.frames.len(),
                    manifest.num_frames
                )));
            }
            let sample = VideoSample {
                video_id: entry.video_id,
                question_id: entry.question_id,
                question: entry.question,
                format: entry.format,
                frames: FrameSource::Images(
                    manifest.frames.iter().map(|f| dir.join(f)).collect(),
                ),
                clip_scores: entry.clip_scores,
            };
            sample.validate().map_err(CliError::Data)?;
            Ok(sample)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn sim_samples_are_deterministic_and_prefixed() {
        let config = parse_config("[sim]\nvideos = 3\nprior = window\nprior_window_len = 6\n").unwrap();
        let (prior, start) = resolve_prior(&config).unwrap();
        assert!(start.is_some());
        let a = build_sim_samples(&config, prior.as_deref(), 3, "sim", 1).unwrap();
        let b = build_sim_samples(&config, prior.as_deref(), 3, "sim", 1).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].video_id, "sim-0000");
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.frames.sim_env(), y.frames.sim_env());
        }
        // Informative sets stay within the window.
        let start = start.unwrap();
        for sample in &a {
            let env = sample.frames.sim_env().unwrap();
            assert!(env.informative.iter().all(|&t| t >= start && t < start + 6));
            assert!(sample.clip_scores.is_some());
        }
    }

    #[test]
    fn remote_manifest_loads_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let frames_dir = dir.path().join("vid0");
        std::fs::create_dir_all(&frames_dir).unwrap();
        for i in 0..3 {
            std::fs::write(frames_dir.join(format!("frame_{i:04}.png")), [1, 2, 3]).unwrap();
        }
        std::fs::write(
            frames_dir.join("manifest.json"),
            r#"{"num_frames":3,"frames":["frame_0000.png","frame_0001.png","frame_0002.png"]}"#,
        )
        .unwrap();
        let samples_path = dir.path().join("samples.json");
        std::fs::write(
            &samples_path,
            r#"[{"video_id":"v0","question_id":"v0-q0","question":"what?","format":{"kind":"multiple-choice-letter","options":4},"frames_dir":"vid0"}]"#,
        )
        .unwrap();

        let samples = load_remote_samples(&samples_path).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].num_frames(), 3);

        std::fs::write(
            frames_dir.join("manifest.json"),
            r#"{"num_frames":4,"frames":["frame_0000.png"]}"#,
        )
        .unwrap();
        assert!(matches!(load_remote_samples(&samples_path), Err(CliError::Data(_))));
    }
}
