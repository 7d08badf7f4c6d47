//! Null-embedding injection: replaces one modality's vectors with standard
//! normal noise (corrupted modality) or zeros (missing modality).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed::{Dataset, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    RandomStandardNormal,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub target_modality: Modality,
    pub mode: CorruptionMode,
    /// Fraction of samples to replace; 1.0 is the full-replacement condition.
    pub fraction: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.fraction.is_finite() || !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidConfig(format!(
                "corruption fraction must be in [0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Replaces the target modality's vector in a seeded subset of
/// `round(fraction * N)` samples. Replacement vectors are not re-normalized;
/// every other field and sample is preserved bitwise.
pub fn corrupt(dataset: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = dataset.len();
    let k = ((spec.fraction * n as f64).round() as usize).min(n);
    let mut out = dataset.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut selected = rand::seq::index::sample(&mut rng, n, k).into_vec();
    selected.sort_unstable();
    let dim = spec.target_modality.dim();
    for idx in selected {
        let replacement = match spec.mode {
            CorruptionMode::Zeros => vec![0.0; dim],
            CorruptionMode::RandomStandardNormal => {
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            }
        };
        let sample = &mut out.samples[idx];
        match spec.target_modality {
            Modality::Face => {
                sample.face = replacement;
                sample.face_is_unit = false;
            }
            Modality::Voice => {
                sample.voice = replacement;
                sample.voice_is_unit = false;
            }
        }
    }
    Ok(out)
}
