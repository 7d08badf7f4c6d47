//! Embedding data model: per-modality records, paired face/voice samples,
//! L2 normalization and voice-frame averaging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Face embedding dimension.
pub const FACE_DIM: usize = 512;
/// Voice embedding dimension.
pub const VOICE_DIM: usize = 600;
/// Dimension of the concatenated [face, voice] input consumed by the fusion
/// networks.
pub const CONCAT_DIM: usize = FACE_DIM + VOICE_DIM;
/// Dimension of the joint co-embedding space (and of every fused output).
pub const JOINT_DIM: usize = 600;

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM_EPS: f64 = 1e-12;
/// Tolerance used when deciding whether a stored vector is unit-length.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Voice,
}

impl Modality {
    pub fn dim(self) -> usize {
        match self {
            Modality::Face => FACE_DIM,
            Modality::Voice => VOICE_DIM,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Voice => "voice",
        }
    }
}

/// One modality vector with provenance, as stored in dataset files.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub identity_id: String,
    pub clip_id: String,
    pub frame_index: u32,
    pub modality: Modality,
    pub vector: Vec<f64>,
    /// Length of the audio segment the embedding spans (the paper's `l`);
    /// zero for face records.
    pub segment_length_sec: f64,
}

impl EmbeddingRecord {
    /// Checks the per-record invariants against a declared dimension.
    pub fn validate(&self, expected_dim: usize, line: usize) -> Result<()> {
        if self.vector.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                line,
                expected: expected_dim,
                got: self.vector.len(),
            });
        }
        if self.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedRecord {
                line,
                reason: "non-finite vector entry".into(),
            });
        }
        if !self.segment_length_sec.is_finite() || self.segment_length_sec < 0.0 {
            return Err(Error::MalformedRecord {
                line,
                reason: format!("segment_length_sec = {}", self.segment_length_sec),
            });
        }
        Ok(())
    }
}

/// One clip's face and voice vectors, joined on (identity, clip).
///
/// The `*_is_unit` flags record whether the vector is L2-normalized; they are
/// false only for null embeddings injected by corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub identity_id: String,
    pub clip_id: String,
    pub face: Vec<f64>,
    pub voice: Vec<f64>,
    pub face_is_unit: bool,
    pub voice_is_unit: bool,
}

impl PairedSample {
    pub fn modality_vector(&self, modality: Modality) -> &[f64] {
        match modality {
            Modality::Face => &self.face,
            Modality::Voice => &self.voice,
        }
    }
}

/// An ordered collection of paired samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<PairedSample>,
}

impl Dataset {
    pub fn new(samples: Vec<PairedSample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample indices grouped per identity, in identity order.
    pub fn by_identity(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.identity_id.as_str()).or_default().push(i);
        }
        map
    }

    /// Lookup from clip id to sample index. Clip ids are expected unique.
    pub fn clip_index(&self) -> BTreeMap<&str, usize> {
        let mut map = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.insert(s.clip_id.as_str(), i);
        }
        map
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit L2 norm.
///
/// Callers handling "missing" samples must bypass normalization explicitly;
/// a vector with norm below [`ZERO_NORM_EPS`] is an error here.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidConfig("cannot normalize an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("cannot normalize a non-finite vector".into()));
    }
    let norm = l2_norm(v);
    if norm < ZERO_NORM_EPS {
        return Err(Error::ZeroVector {
            norm,
            min: ZERO_NORM_EPS,
        });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Entrywise mean of the first `window` frames.
pub fn average_voice_window(frames: &[Vec<f64>], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidConfig("window must be >= 1".into()));
    }
    if frames.len() < window {
        return Err(Error::InsufficientFrames {
            window,
            available: frames.len(),
        });
    }
    let dim = frames[0].len();
    for (i, f) in frames[..window].iter().enumerate() {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                line: i,
                expected: dim,
                got: f.len(),
            });
        }
    }
    let mut mean = vec![0.0; dim];
    for frame in &frames[..window] {
        for (m, x) in mean.iter_mut().zip(frame) {
            *m += x;
        }
    }
    let inv = 1.0 / window as f64;
    for m in &mut mean {
        *m *= inv;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_three_four() {
        let out = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15);
        assert!((out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_vector_is_identity() {
        let u = vec![1.0 / 3.0_f64.sqrt(); 3];
        let out = l2_normalize(&u).unwrap();
        for (a, b) in out.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_zero_vector_errors() {
        match l2_normalize(&[0.0, 0.0, 0.0]) {
            Err(Error::ZeroVector { .. }) => {}
            other => panic!("expected ZeroVector, got {other:?}"),
        }
    }

    #[test]
    fn voice_window_mean_of_two() {
        let frames = vec![vec![0.0, 2.0], vec![2.0, 0.0]];
        let out = average_voice_window(&frames, 2).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn voice_window_identical_frames() {
        let u = vec![0.25, -0.5, 1.5];
        let frames = vec![u.clone(); 7];
        let out = average_voice_window(&frames, 7).unwrap();
        for (a, b) in out.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn voice_window_matches_independent_accumulation() {
        // Oracle: accumulate each coordinate in a separate pass.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let got = average_voice_window(&frames, 100).unwrap();
        for d in 0..16 {
            let mut acc = 0.0;
            for frame in &frames {
                acc += frame[d];
            }
            let expected = acc / 100.0;
            assert!((got[d] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn voice_window_insufficient_frames() {
        let frames = vec![vec![1.0, 2.0]];
        match average_voice_window(&frames, 2) {
            Err(Error::InsufficientFrames { window: 2, available: 1 }) => {}
            other => panic!("expected InsufficientFrames, got {other:?}"),
        }
    }
}
