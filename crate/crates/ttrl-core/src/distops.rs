//! Post-adaptation distribution machinery: global prior averaging, grid
//! interpolation, CLIP/learned blending, inference-time frame selection, and
//! the `fdist-v1` persistence format.
//!
//! The file format renders floats with 17 significant digits so a serialized
//! distribution parses back bitwise. Per-video files and global-prior files
//! share one schema; priors additionally carry `source_count` and
//! `kind:"global"`.

use crate::bandit::{self, FrameDistribution, InitKind};
use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistOpsError {
    #[error("empty input list")]
    EmptyInput,
    #[error("frame grids differ: {left} vs {right} (interpolate first)")]
    GridMismatch { left: usize, right: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid blend spec: {0}")]
    InvalidBlend(String),
    #[error("selection of {requested} frames exceeds grid of {available}")]
    SelectionTooLarge { requested: usize, available: usize },
    #[error("parse error at line {line}, column {column} (byte {byte_offset}): {detail}")]
    Parse {
        line: usize,
        column: usize,
        byte_offset: usize,
        detail: String,
    },
    #[error("schema violation: {0}")]
    Schema(String),
}

/// Average of per-video frame distributions: the prior reused for every test
/// video.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPrior {
    probs: Vec<f64>,
    source_count: usize,
}

impl GlobalPrior {
    pub fn from_parts(probs: Vec<f64>, source_count: usize) -> Result<Self, DistOpsError> {
        validate_distribution(&probs)?;
        if source_count == 0 {
            return Err(DistOpsError::EmptyInput);
        }
        Ok(Self { probs, source_count })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_frames(&self) -> usize {
        self.probs.len()
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }
}

/// Convex weights for combining a CLIP-score distribution with the learned
/// one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendSpec {
    pub w_clip: f64,
    pub w_dist: f64,
}

impl BlendSpec {
    pub fn new(w_clip: f64, w_dist: f64) -> Result<Self, DistOpsError> {
        if !(0.0..=1.0).contains(&w_clip) || !(0.0..=1.0).contains(&w_dist) {
            return Err(DistOpsError::InvalidBlend(format!(
                "weights must lie in [0,1], got ({w_clip}, {w_dist})"
            )));
        }
        if (w_clip + w_dist - 1.0).abs() > 1e-12 {
            return Err(DistOpsError::InvalidBlend(format!(
                "weights must sum to 1, got {}",
                w_clip + w_dist
            )));
        }
        Ok(Self { w_clip, w_dist })
    }
}

/// Inference-time frame selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Sequential weighted draw without replacement (the bandit's sampler).
    SampleWithoutReplacement,
    /// The highest-probability frames, ties broken toward the lower index.
    TopK,
}

fn validate_distribution(probs: &[f64]) -> Result<(), DistOpsError> {
    if probs.is_empty() {
        return Err(DistOpsError::InvalidDistribution("empty probability vector".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(DistOpsError::InvalidDistribution(
            "entries must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(DistOpsError::InvalidDistribution("total mass must be positive".into()));
    }
    Ok(())
}

/// Elementwise mean of per-video probabilities over a shared grid.
pub fn average_distributions(dists: &[FrameDistribution]) -> Result<GlobalPrior, DistOpsError> {
    let first = dists.first().ok_or(DistOpsError::EmptyInput)?;
    let num_frames = first.num_frames();
    for dist in dists {
        if dist.num_frames() != num_frames {
            return Err(DistOpsError::GridMismatch {
                left: num_frames,
                right: dist.num_frames(),
            });
        }
    }
    let scale = 1.0 / dists.len() as f64;
    let mut probs = vec![0.0; num_frames];
    for dist in dists {
        for (acc, p) in probs.iter_mut().zip(dist.probs()) {
            *acc += p;
        }
    }
    for p in &mut probs {
        *p *= scale;
    }
    GlobalPrior::from_parts(probs, dists.len())
}

/// Piecewise-linear resampling of a distribution onto a different grid.
/// Source frame `i` sits at normalized position `i/(T_src−1)`; destination
/// positions are `j/(T_dst−1)` (or 0.5 for a single destination frame). The
/// interpolated values are renormalized to sum 1.
pub fn interpolate(probs: &[f64], t_dst: usize) -> Result<Vec<f64>, DistOpsError> {
    validate_distribution(probs)?;
    let t_src = probs.len();
    if t_src < 2 {
        return Err(DistOpsError::InvalidDistribution(
            "interpolation needs a source grid of at least 2 frames".into(),
        ));
    }
    if t_dst == 0 {
        return Err(DistOpsError::InvalidDistribution("target grid must be at least 1".into()));
    }
    let mut raw = Vec::with_capacity(t_dst);
    for j in 0..t_dst {
        let position = if t_dst == 1 { 0.5 } else { j as f64 / (t_dst - 1) as f64 };
        let x = position * (t_src - 1) as f64;
        let lower = (x.floor() as usize).min(t_src - 2);
        let frac = x - lower as f64;
        raw.push(probs[lower] * (1.0 - frac) + probs[lower + 1] * frac);
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(DistOpsError::InvalidDistribution(
            "interpolated mass vanished; source distribution too sparse for target grid".into(),
        ));
    }
    for value in &mut raw {
        *value /= total;
    }
    Ok(raw)
}

/// Convex combination of two distributions in probability space. Endpoint
/// weights pass the corresponding input through untouched.
pub fn blend(
    clip_probs: &[f64],
    learned_probs: &[f64],
    spec: BlendSpec,
) -> Result<Vec<f64>, DistOpsError> {
    if clip_probs.len() != learned_probs.len() {
        return Err(DistOpsError::GridMismatch {
            left: clip_probs.len(),
            right: learned_probs.len(),
        });
    }
    validate_distribution(clip_probs)?;
    validate_distribution(learned_probs)?;
    if spec.w_clip == 1.0 {
        return Ok(clip_probs.to_vec());
    }
    if spec.w_dist == 1.0 {
        return Ok(learned_probs.to_vec());
    }
    let mut combined: Vec<f64> = clip_probs
        .iter()
        .zip(learned_probs)
        .map(|(c, l)| spec.w_clip * c + spec.w_dist * l)
        .collect();
    // A convex combination of distributions is already normalized; dividing
    // by the actual sum only guards accumulated rounding.
    let total: f64 = combined.iter().sum();
    for value in &mut combined {
        *value /= total;
    }
    Ok(combined)
}

/// Picks `f_out` frame indices for inference, sorted ascending.
pub fn select_inference_frames<R: Rng + ?Sized>(
    probs: &[f64],
    f_out: usize,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<Vec<usize>, DistOpsError> {
    validate_distribution(probs)?;
    if f_out > probs.len() {
        return Err(DistOpsError::SelectionTooLarge {
            requested: f_out,
            available: probs.len(),
        });
    }
    match mode {
        SelectionMode::SampleWithoutReplacement => bandit::sample_without_replacement(probs, f_out, rng)
            .map_err(|e| DistOpsError::InvalidDistribution(e.to_string())),
        SelectionMode::TopK => {
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| {
                probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b))
            });
            let mut chosen: Vec<usize> = order.into_iter().take(f_out).collect();
            chosen.sort_unstable();
            Ok(chosen)
        }
    }
}

// ---------------------------------------------------------------------------
// fdist-v1 persistence
// ---------------------------------------------------------------------------

pub const FDIST_VERSION: &str = "fdist-v1";

/// Provenance attached to every distribution file.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct DistMeta {
    pub video_id: String,
    pub question_id: String,
    pub created_unix: i64,
}

/// A parsed distribution file: either one video's bandit state or a merged
/// global prior.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionDocument {
    PerVideo {
        dist: FrameDistribution,
        meta: DistMeta,
    },
    Global {
        prior: GlobalPrior,
        init: InitKind,
        step_count: u64,
        meta: DistMeta,
    },
}

impl DistributionDocument {
    pub fn probs(&self) -> &[f64] {
        match self {
            DistributionDocument::PerVideo { dist, .. } => dist.probs(),
            DistributionDocument::Global { prior, .. } => prior.probs(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.probs().len()
    }

    pub fn meta(&self) -> &DistMeta {
        match self {
            DistributionDocument::PerVideo { meta, .. } => meta,
            DistributionDocument::Global { meta, .. } => meta,
        }
    }
}

/// 17 significant digits: enough to parse back to the identical f64.
pub fn format_sig17(value: f64) -> String {
    format!("{value:.16e}")
}

fn init_label(kind: InitKind) -> &'static str {
    match kind {
        InitKind::Uniform => "uniform",
        InitKind::ClipScores => "clip",
    }
}

fn parse_init_label(label: &str) -> Result<InitKind, DistOpsError> {
    match label {
        "uniform" => Ok(InitKind::Uniform),
        "clip" => Ok(InitKind::ClipScores),
        other => Err(DistOpsError::Schema(format!("unknown init kind {other:?}"))),
    }
}

fn json_string(value: &str) -> String {
    serde_json::to_string(value).expect("string serialization cannot fail")
}

fn push_float_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_sig17(*v));
    }
    out.push(']');
}

fn emit(
    num_frames: usize,
    init: InitKind,
    weights: &[f64],
    probs: &[f64],
    step_count: u64,
    meta: &DistMeta,
    global: Option<usize>,
) -> String {
    let mut out = String::with_capacity(64 + 28 * (weights.len() + probs.len()));
    out.push_str("{\"version\":\"");
    out.push_str(FDIST_VERSION);
    out.push_str("\",\"num_frames\":");
    out.push_str(&num_frames.to_string());
    out.push_str(",\"init\":\"");
    out.push_str(init_label(init));
    out.push_str("\",\"weights\":");
    push_float_array(&mut out, weights);
    out.push_str(",\"probs\":");
    push_float_array(&mut out, probs);
    out.push_str(",\"step_count\":");
    out.push_str(&step_count.to_string());
    if let Some(source_count) = global {
        out.push_str(",\"source_count\":");
        out.push_str(&source_count.to_string());
        out.push_str(",\"kind\":\"global\"");
    }
    out.push_str(",\"meta\":{\"video_id\":");
    out.push_str(&json_string(&meta.video_id));
    out.push_str(",\"question_id\":");
    out.push_str(&json_string(&meta.question_id));
    out.push_str(",\"created_unix\":");
    out.push_str(&meta.created_unix.to_string());
    out.push_str("}}");
    out
}

/// Serializes one video's bandit state.
pub fn write_distribution(dist: &FrameDistribution, meta: &DistMeta) -> String {
    emit(
        dist.num_frames(),
        dist.init_kind(),
        dist.weights(),
        dist.probs(),
        dist.step_count(),
        meta,
        None,
    )
}

/// Serializes a merged global prior. `init` records how its sources were
/// seeded; `step_count` the maximum step count among them.
pub fn write_global_prior(
    prior: &GlobalPrior,
    init: InitKind,
    step_count: u64,
    meta: &DistMeta,
) -> String {
    emit(
        prior.num_frames(),
        init,
        prior.probs(),
        prior.probs(),
        step_count,
        meta,
        Some(prior.source_count()),
    )
}

#[derive(Deserialize)]
struct RawDistributionFile {
    version: String,
    num_frames: usize,
    init: String,
    weights: Vec<f64>,
    probs: Vec<f64>,
    step_count: u64,
    meta: DistMeta,
    #[serde(default)]
    source_count: Option<usize>,
    #[serde(default)]
    kind: Option<String>,
}

fn byte_offset_of(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

/// Parses either a per-video distribution or a global prior.
pub fn read_distribution_document(text: &str) -> Result<DistributionDocument, DistOpsError> {
    let raw: RawDistributionFile = serde_json::from_str(text).map_err(|e| DistOpsError::Parse {
        line: e.line(),
        column: e.column(),
        byte_offset: byte_offset_of(text, e.line(), e.column()),
        detail: e.to_string(),
    })?;
    if raw.version != FDIST_VERSION {
        return Err(DistOpsError::Schema(format!(
            "unsupported version {:?}, expected {FDIST_VERSION:?}",
            raw.version
        )));
    }
    if raw.weights.len() != raw.num_frames || raw.probs.len() != raw.num_frames {
        return Err(DistOpsError::Schema(format!(
            "num_frames {} does not match weights ({}) / probs ({})",
            raw.num_frames,
            raw.weights.len(),
            raw.probs.len()
        )));
    }
    let init = parse_init_label(&raw.init)?;
    match raw.kind.as_deref() {
        Some("global") => {
            let source_count = raw.source_count.ok_or_else(|| {
                DistOpsError::Schema("global distribution missing source_count".into())
            })?;
            Ok(DistributionDocument::Global {
                prior: GlobalPrior::from_parts(raw.probs, source_count)?,
                init,
                step_count: raw.step_count,
                meta: raw.meta,
            })
        }
        Some(other) => Err(DistOpsError::Schema(format!("unknown kind {other:?}"))),
        None => {
            let dist = FrameDistribution::from_parts(raw.weights, init, raw.step_count)
                .map_err(|e| DistOpsError::Schema(e.to_string()))?;
            // The persisted probs must agree with the weights they came from.
            for (stored, derived) in raw.probs.iter().zip(dist.probs()) {
                if (stored - derived).abs() > 1e-9 {
                    return Err(DistOpsError::Schema(
                        "stored probs are inconsistent with stored weights".into(),
                    ));
                }
            }
            Ok(DistributionDocument::PerVideo { dist, meta: raw.meta })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn dist_of(probs: &[f64]) -> FrameDistribution {
        FrameDistribution::init(probs.len(), Some(probs)).unwrap()
    }

    #[test]
    fn mean_of_identical_distributions_is_the_distribution() {
        let d = dist_of(&[0.4, 0.3, 0.2, 0.1]);
        let prior = average_distributions(&[d.clone(), d.clone(), d.clone()]).unwrap();
        for (got, want) in prior.probs().iter().zip(d.probs()) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(prior.source_count(), 3);
    }

    #[test]
    fn mean_of_opposite_point_masses_is_even() {
        let a = dist_of(&[1.0, 1e-15]);
        let b = dist_of(&[1e-15, 1.0]);
        let prior = average_distributions(&[a, b]).unwrap();
        assert!((prior.probs()[0] - 0.5).abs() < 1e-12);
        assert!((prior.probs()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn averaging_matches_elementwise_oracle() {
        let dists = [
            dist_of(&[0.1, 0.2, 0.3, 0.4]),
            dist_of(&[0.25, 0.25, 0.25, 0.25]),
            dist_of(&[0.7, 0.1, 0.1, 0.1]),
        ];
        let prior = average_distributions(&dists).unwrap();
        for t in 0..4 {
            let mut acc = 0.0;
            for d in &dists {
                acc += d.probs()[t];
            }
            assert!((prior.probs()[t] - acc / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_is_permutation_invariant() {
        let dists = [
            dist_of(&[0.5, 0.3, 0.2]),
            dist_of(&[0.2, 0.2, 0.6]),
            dist_of(&[0.9, 0.05, 0.05]),
        ];
        let forward = average_distributions(&dists).unwrap();
        let reversed: Vec<_> = dists.iter().rev().cloned().collect();
        let backward = average_distributions(&reversed).unwrap();
        for (a, b) in forward.probs().iter().zip(backward.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn averaging_rejects_mixed_grids_and_empty_input() {
        let err = average_distributions(&[dist_of(&[0.5, 0.5]), dist_of(&[0.4, 0.3, 0.3])]);
        assert_eq!(err, Err(DistOpsError::GridMismatch { left: 2, right: 3 }));
        assert_eq!(average_distributions(&[]), Err(DistOpsError::EmptyInput));
    }

    #[test]
    fn interpolation_identity_on_matching_grid() {
        let probs = [0.1, 0.4, 0.3, 0.2];
        let out = interpolate(&probs, 4).unwrap();
        for (got, want) in out.iter().zip(probs) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_preserves_uniformity() {
        let uniform = vec![0.125; 8];
        for t_dst in [1usize, 3, 5, 8, 13, 40] {
            let out = interpolate(&uniform, t_dst).unwrap();
            for p in &out {
                assert!((p - 1.0 / t_dst as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_two_to_three() {
        // Raw linear values at positions 0, 0.5, 1 are 0.7, 0.5, 0.3;
        // renormalized by their sum 1.5.
        let out = interpolate(&[0.7, 0.3], 3).unwrap();
        let want = [0.7 / 1.5, 0.5 / 1.5, 0.3 / 1.5];
        for (got, want) in out.iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_rejects_tiny_source() {
        assert!(interpolate(&[1.0], 4).is_err());
    }

    #[test]
    fn blend_endpoints_pass_inputs_through() {
        let clip = [0.6, 0.25, 0.15];
        let learned = [0.1, 0.1, 0.8];
        let all_clip = blend(&clip, &learned, BlendSpec::new(1.0, 0.0).unwrap()).unwrap();
        assert_eq!(all_clip, clip.to_vec());
        let all_learned = blend(&clip, &learned, BlendSpec::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(all_learned, learned.to_vec());
    }

    #[test]
    fn blend_of_point_masses_is_even() {
        let out = blend(&[1.0, 0.0], &[0.0, 1.0], BlendSpec::new(0.5, 0.5).unwrap()).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-12);
        assert!((out[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn blend_stays_between_inputs() {
        let clip = [0.5, 0.3, 0.2];
        let learned = [0.2, 0.3, 0.5];
        let out = blend(&clip, &learned, BlendSpec::new(0.3, 0.7).unwrap()).unwrap();
        for ((&c, &l), &b) in clip.iter().zip(&learned).zip(&out) {
            assert!(b >= c.min(l) - 1e-12 && b <= c.max(l) + 1e-12);
        }
    }

    #[test]
    fn blend_spec_validation() {
        assert!(BlendSpec::new(0.3, 0.7).is_ok());
        assert!(BlendSpec::new(0.3, 0.6).is_err());
        assert!(BlendSpec::new(-0.1, 1.1).is_err());
        assert!(blend(&[1.0], &[0.5, 0.5], BlendSpec::new(0.5, 0.5).unwrap()).is_err());
    }

    #[test]
    fn exhaustive_selection_returns_everything() {
        let probs = [0.1, 0.4, 0.4, 0.1];
        let mut rng = seed::rng_from(&[1]);
        for mode in [SelectionMode::TopK, SelectionMode::SampleWithoutReplacement] {
            let out = select_inference_frames(&probs, 4, mode, &mut rng).unwrap();
            assert_eq!(out, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn top_k_breaks_ties_toward_lower_index() {
        let probs = [0.1, 0.4, 0.4, 0.1];
        let mut rng = seed::rng_from(&[2]);
        let out = select_inference_frames(&probs, 2, SelectionMode::TopK, &mut rng).unwrap();
        assert_eq!(out, vec![1, 2]);
        let out = select_inference_frames(&probs, 3, SelectionMode::TopK, &mut rng).unwrap();
        assert_eq!(out, vec![0, 1, 2]);
    }

    #[test]
    fn sampling_selection_is_reproducible() {
        let probs = vec![1.0 / 40.0; 40];
        let a =
            select_inference_frames(&probs, 8, SelectionMode::SampleWithoutReplacement, &mut seed::rng_from(&[3]))
                .unwrap();
        let b =
            select_inference_frames(&probs, 8, SelectionMode::SampleWithoutReplacement, &mut seed::rng_from(&[3]))
                .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_selection_is_an_error() {
        let mut rng = seed::rng_from(&[4]);
        let err = select_inference_frames(&[0.5, 0.5], 3, SelectionMode::TopK, &mut rng);
        assert_eq!(err, Err(DistOpsError::SelectionTooLarge { requested: 3, available: 2 }));
    }

    fn meta() -> DistMeta {
        DistMeta {
            video_id: "video-7".into(),
            question_id: "q-3".into(),
            created_unix: 0,
        }
    }

    #[test]
    fn fdist_round_trip_is_bitwise() {
        let dist = dist_of(&[0.123456789012345, 0.3, 0.2, 0.376543210987655]);
        let input = crate::bandit::BanditUpdateInput::new(
            vec![vec![0, 1], vec![2, 3]],
            vec![0.7, 0.1],
            3.0,
        );
        let stepped = dist.update(&input).unwrap();
        let text = write_distribution(&stepped, &meta());
        match read_distribution_document(&text).unwrap() {
            DistributionDocument::PerVideo { dist: parsed, meta: parsed_meta } => {
                assert_eq!(parsed.probs(), stepped.probs());
                assert_eq!(parsed.weights(), stepped.weights());
                assert_eq!(parsed.step_count(), stepped.step_count());
                assert_eq!(parsed.init_kind(), stepped.init_kind());
                assert_eq!(parsed_meta, meta());
                // Re-emission reproduces the exact bytes.
                assert_eq!(write_distribution(&parsed, &parsed_meta), text);
            }
            other => panic!("expected per-video document, got {other:?}"),
        }
    }

    #[test]
    fn global_prior_round_trip() {
        let prior = GlobalPrior::from_parts(vec![0.25, 0.5, 0.25], 8).unwrap();
        let text = write_global_prior(&prior, InitKind::Uniform, 5, &meta());
        match read_distribution_document(&text).unwrap() {
            DistributionDocument::Global { prior: parsed, init, step_count, .. } => {
                assert_eq!(parsed, prior);
                assert_eq!(init, InitKind::Uniform);
                assert_eq!(step_count, 5);
            }
            other => panic!("expected global document, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_byte_offset() {
        let text = "{\"version\":\"fdist-v1\",\n\"num_frames\": oops}";
        match read_distribution_document(text) {
            Err(DistOpsError::Parse { line, byte_offset, .. }) => {
                assert_eq!(line, 2);
                assert!(byte_offset > 20, "offset {byte_offset}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn schema_violations_are_rejected() {
        let bad_version = write_distribution(&dist_of(&[0.5, 0.5]), &meta())
            .replace("fdist-v1", "fdist-v9");
        assert!(matches!(
            read_distribution_document(&bad_version),
            Err(DistOpsError::Schema(_))
        ));

        let truncated =
            "{\"version\":\"fdist-v1\",\"num_frames\":3,\"init\":\"uniform\",\"weights\":[0.5,0.5],\"probs\":[0.5,0.5],\"step_count\":0,\"meta\":{\"video_id\":\"\",\"question_id\":\"\",\"created_unix\":0}}";
        assert!(matches!(
            read_distribution_document(truncated),
            Err(DistOpsError::Schema(_))
        ));
    }

    #[test]
    fn sig17_round_trips_awkward_floats() {
        for &value in &[0.1, 1.0 / 3.0, 2.0_f64.powi(-40), 0.123_456_789_012_345_68, 1e300, 5e-324] {
            let text = format_sig17(value);
            let parsed: f64 = text.parse().unwrap();
            assert_eq!(parsed.to_bits(), value.to_bits(), "{text}");
        }
    }
}
