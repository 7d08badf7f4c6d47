//! Synthetic paired-embedding datasets: spherical Gaussian identity clusters,
//! renormalized to the unit sphere, with independent noise levels per modality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embed::{l2_normalize, Dataset, PairedSample, FACE_DIM, VOICE_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_identities: usize,
    pub clips_per_identity: usize,
    pub face_noise_sigma: f64,
    pub voice_noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_identities must be > 1, got {}",
                self.n_identities
            )));
        }
        if self.clips_per_identity < 2 {
            return Err(Error::InvalidConfig(format!(
                "clips_per_identity must be >= 2, got {}",
                self.clips_per_identity
            )));
        }
        for (name, sigma) in [
            ("face_noise_sigma", self.face_noise_sigma),
            ("voice_noise_sigma", self.voice_noise_sigma),
        ] {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {sigma}")));
            }
        }
        Ok(())
    }
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform draw from the unit sphere (normalized standard normal).
fn unit_sphere_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        // A zero draw has probability zero; the loop is for completeness.
        if let Ok(v) = l2_normalize(&standard_normal_vec(rng, dim)) {
            return v;
        }
    }
}

fn noisy_clip(rng: &mut ChaCha8Rng, prototype: &[f64], sigma: f64) -> Vec<f64> {
    let mut v: Vec<f64> = prototype.to_vec();
    if sigma > 0.0 {
        for x in &mut v {
            *x += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    loop {
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
        // Resample on the measure-zero event that noise cancelled the prototype.
        for (x, p) in v.iter_mut().zip(prototype) {
            *x = p + sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Generates `n_identities * clips_per_identity` paired samples.
///
/// Per identity one face and one voice prototype are drawn uniformly on the
/// unit sphere; each clip is `l2_normalize(prototype + sigma * noise)` with
/// the modality's sigma. Bitwise deterministic given the seed.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::with_capacity(config.n_identities * config.clips_per_identity);
    for id_idx in 0..config.n_identities {
        let identity_id = format!("id{id_idx:05}");
        let face_proto = unit_sphere_vec(&mut rng, FACE_DIM);
        let voice_proto = unit_sphere_vec(&mut rng, VOICE_DIM);
        for clip_idx in 0..config.clips_per_identity {
            let face = noisy_clip(&mut rng, &face_proto, config.face_noise_sigma);
            let voice = noisy_clip(&mut rng, &voice_proto, config.voice_noise_sigma);
            samples.push(PairedSample {
                identity_id: identity_id.clone(),
                clip_id: format!("{identity_id}_c{clip_idx:04}"),
                face,
                voice,
                face_is_unit: true,
                voice_is_unit: true,
            });
        }
    }
    Ok(Dataset::new(samples))
}
