//! Score-level fusion: logistic-regression calibration of per-modality cosine
//! scores, fit by deterministic full-batch gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trials::TrialLabel;

const CALIBRATION_LR: f64 = 0.1;
const CALIBRATION_STEPS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub weight_face: f64,
    pub weight_voice: f64,
    pub offset: f64,
}

impl CalibrationModel {
    /// The fused score is the linear logit; it is monotone in the posterior,
    /// so threshold-sweep metrics are unaffected by the sigmoid.
    pub fn fused_score(&self, face_score: f64, voice_score: f64) -> f64 {
        self.weight_face * face_score + self.weight_voice * voice_score + self.offset
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fits `sigmoid(w_f s_f + w_v s_v + c)` to the labels by minimizing mean
/// binary cross-entropy: zero init, full-batch gradient descent, fixed step
/// count. Deterministic.
pub fn calibrate_scores(
    face_scores: &[f64],
    voice_scores: &[f64],
    labels: &[TrialLabel],
) -> Result<CalibrationModel> {
    if face_scores.len() != voice_scores.len() || face_scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            what: "calibration inputs".into(),
            expected: face_scores.len().to_string(),
            got: format!("{}/{}", voice_scores.len(), labels.len()),
        });
    }
    if face_scores.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    let n_target = labels.iter().filter(|l| **l == TrialLabel::Target).count();
    if n_target == 0 || n_target == labels.len() {
        return Err(Error::DegenerateLabels);
    }
    if face_scores
        .iter()
        .chain(voice_scores)
        .any(|s| !s.is_finite())
    {
        return Err(Error::InvalidConfig("calibration scores must be finite".into()));
    }

    let n = face_scores.len() as f64;
    let mut w_f = 0.0;
    let mut w_v = 0.0;
    let mut c = 0.0;
    for _ in 0..CALIBRATION_STEPS {
        let mut g_f = 0.0;
        let mut g_v = 0.0;
        let mut g_c = 0.0;
        for ((&sf, &sv), label) in face_scores.iter().zip(voice_scores).zip(labels) {
            let y = match label {
                TrialLabel::Target => 1.0,
                TrialLabel::Nontarget => 0.0,
            };
            let err = sigmoid(w_f * sf + w_v * sv + c) - y;
            g_f += err * sf;
            g_v += err * sv;
            g_c += err;
        }
        w_f -= CALIBRATION_LR * g_f / n;
        w_v -= CALIBRATION_LR * g_v / n;
        c -= CALIBRATION_LR * g_c / n;
    }
    Ok(CalibrationModel {
        weight_face: w_f,
        weight_voice: w_v,
        offset: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Face scores separate the classes, voice scores are pure noise.
    fn synthetic_scores(seed: u64, n_per_class: usize) -> (Vec<f64>, Vec<f64>, Vec<TrialLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut face = Vec::new();
        let mut voice = Vec::new();
        let mut labels = Vec::new();
        for label in [TrialLabel::Target, TrialLabel::Nontarget] {
            let mean = if label == TrialLabel::Target { 0.7 } else { 0.1 };
            for _ in 0..n_per_class {
                face.push(mean + 0.05 * rng.sample::<f64, _>(StandardNormal));
                voice.push(rng.random_range(-1.0..1.0));
                labels.push(label);
            }
        }
        (face, voice, labels)
    }

    #[test]
    fn informative_face_dominates_noisy_voice() {
        let (face, voice, labels) = synthetic_scores(3, 400);
        let model = calibrate_scores(&face, &voice, &labels).unwrap();
        assert!(
            model.weight_voice.abs() < 0.1 * model.weight_face.abs(),
            "w_v {} vs w_f {}",
            model.weight_voice,
            model.weight_face
        );
        assert!(model.weight_face > 0.0);
    }

    #[test]
    fn flipped_labels_negate_the_fit() {
        let (face, voice, labels) = synthetic_scores(5, 200);
        let flipped: Vec<TrialLabel> = labels
            .iter()
            .map(|l| match l {
                TrialLabel::Target => TrialLabel::Nontarget,
                TrialLabel::Nontarget => TrialLabel::Target,
            })
            .collect();
        let a = calibrate_scores(&face, &voice, &labels).unwrap();
        let b = calibrate_scores(&face, &voice, &flipped).unwrap();
        assert!((a.weight_face + b.weight_face).abs() < 1e-3);
        assert!((a.weight_voice + b.weight_voice).abs() < 1e-3);
        assert!((a.offset + b.offset).abs() < 1e-3);
    }

    #[test]
    fn identical_modalities_preserve_ranking() {
        let (face, _, labels) = synthetic_scores(7, 100);
        let model = calibrate_scores(&face, &face, &labels).unwrap();
        let fused: Vec<f64> = face.iter().map(|&s| model.fused_score(s, s)).collect();
        // The fused score is a monotone transform of the shared score list.
        let mut order_raw: Vec<usize> = (0..face.len()).collect();
        order_raw.sort_by(|&a, &b| face[a].total_cmp(&face[b]));
        let mut order_fused: Vec<usize> = (0..fused.len()).collect();
        order_fused.sort_by(|&a, &b| fused[a].total_cmp(&fused[b]));
        assert_eq!(order_raw, order_fused);
    }

    #[test]
    fn one_class_is_rejected() {
        let face = vec![0.5, 0.6];
        let voice = vec![0.1, 0.2];
        let labels = vec![TrialLabel::Target, TrialLabel::Target];
        assert!(matches!(
            calibrate_scores(&face, &voice, &labels),
            Err(Error::DegenerateLabels)
        ));
    }
}
