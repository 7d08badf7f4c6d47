//! Fusion networks. Three systems share the same contract: consume a paired
//! (face, voice) sample and emit a 600-d joint embedding.
//!
//! * System A: two FC layers on the concatenated embeddings, ReLU after the
//!   first layer only.
//! * System B: bias-free linear projections of each modality into the joint
//!   space, combined by summation.
//! * System C: the same projections, combined by a softmax-weighted sum whose
//!   two weights come from a learned linear attention layer over the
//!   concatenated input.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{PairedSample, CONCAT_DIM, FACE_DIM, JOINT_DIM, VOICE_DIM};
use crate::error::{Error, Result};

/// Number of modalities fused (face, voice).
pub const N_MODALITIES: usize = 2;
/// Hidden width of System A's first FC layer.
pub const FC1_DIM: usize = 1200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemKind {
    A,
    B,
    C,
}

impl SystemKind {
    pub fn tag(self) -> &'static str {
        match self {
            SystemKind::A => "A",
            SystemKind::B => "B",
            SystemKind::C => "C",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "A" => Ok(SystemKind::A),
            "B" => Ok(SystemKind::B),
            "C" => Ok(SystemKind::C),
            other => Err(Error::UnknownSystemTag(other.to_string())),
        }
    }

    /// Parameter names and shapes, in checkpoint order.
    pub fn param_shapes(self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            SystemKind::A => vec![
                ("fc1_w", vec![FC1_DIM, CONCAT_DIM]),
                ("fc1_b", vec![FC1_DIM]),
                ("fc2_w", vec![JOINT_DIM, FC1_DIM]),
                ("fc2_b", vec![JOINT_DIM]),
            ],
            SystemKind::B => vec![
                ("proj_face", vec![JOINT_DIM, FACE_DIM]),
                ("proj_voice", vec![JOINT_DIM, VOICE_DIM]),
            ],
            SystemKind::C => vec![
                ("attn_w", vec![N_MODALITIES, CONCAT_DIM]),
                ("attn_b", vec![N_MODALITIES]),
                ("proj_face", vec![JOINT_DIM, FACE_DIM]),
                ("proj_voice", vec![JOINT_DIM, VOICE_DIM]),
            ],
        }
    }
}

/// Concat + 2 FC layers (1200 then 600 nodes), ReLU after the first only.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelA {
    pub fc1_w: Array2<f64>,
    pub fc1_b: Array1<f64>,
    pub fc2_w: Array2<f64>,
    pub fc2_b: Array1<f64>,
}

/// Bias-free modality projections combined by summation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelB {
    pub proj_face: Array2<f64>,
    pub proj_voice: Array2<f64>,
}

/// Attention-weighted combination of the projected modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelC {
    pub attn_w: Array2<f64>,
    pub attn_b: Array1<f64>,
    pub proj_face: Array2<f64>,
    pub proj_voice: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionModel {
    A(ModelA),
    B(ModelB),
    C(ModelC),
}

/// Everything a forward pass computed, enough to replay the output exactly
/// and to log attention weights.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub face_input: Array1<f64>,
    pub voice_input: Array1<f64>,
    pub proj_face: Option<Array1<f64>>,
    pub proj_voice: Option<Array1<f64>>,
    pub attn_scores: Option<(f64, f64)>,
    pub attn_weights: Option<(f64, f64)>,
    pub fc1_pre: Option<Array1<f64>>,
    pub fc1_act: Option<Array1<f64>>,
    pub output: Array1<f64>,
}

impl ForwardTrace {
    /// Recomputes the output from the cached intermediates.
    pub fn replay(&self, model: &FusionModel) -> Result<Array1<f64>> {
        match model {
            FusionModel::A(m) => {
                let act = self.fc1_act.as_ref().ok_or_else(|| shape_err("trace", "fc1_act", "missing"))?;
                Ok(&m.fc2_w.dot(act) + &m.fc2_b)
            }
            FusionModel::B(_) => {
                let f = self.proj_face.as_ref().ok_or_else(|| shape_err("trace", "proj_face", "missing"))?;
                let v = self.proj_voice.as_ref().ok_or_else(|| shape_err("trace", "proj_voice", "missing"))?;
                Ok(f + v)
            }
            FusionModel::C(_) => {
                let f = self.proj_face.as_ref().ok_or_else(|| shape_err("trace", "proj_face", "missing"))?;
                let v = self.proj_voice.as_ref().ok_or_else(|| shape_err("trace", "proj_voice", "missing"))?;
                let (af, av) = self.attn_weights.ok_or_else(|| shape_err("trace", "attn_weights", "missing"))?;
                Ok(weighted_sum(af, f, av, v))
            }
        }
    }
}

fn shape_err(what: &str, expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch {
        what: what.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

fn check_input_dims(sample: &PairedSample) -> Result<()> {
    if sample.face.len() != FACE_DIM {
        return Err(shape_err("face input", FACE_DIM, sample.face.len()));
    }
    if sample.voice.len() != VOICE_DIM {
        return Err(shape_err("voice input", VOICE_DIM, sample.voice.len()));
    }
    Ok(())
}

fn dot(a: ArrayView1<f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Attention scores over the concatenated `[face, voice]` input (face first):
/// `a_hat = W [e_f, e_v] + b`, row 0 for face and row 1 for voice.
pub fn attention_scores(
    e_f: &[f64],
    e_v: &[f64],
    w: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<(f64, f64)> {
    if w.dim() != (N_MODALITIES, CONCAT_DIM) {
        return Err(shape_err("attn_w", format!("{N_MODALITIES}x{CONCAT_DIM}"), format!("{:?}", w.dim())));
    }
    if b.len() != N_MODALITIES {
        return Err(shape_err("attn_b", N_MODALITIES, b.len()));
    }
    if e_f.len() != FACE_DIM {
        return Err(shape_err("face input", FACE_DIM, e_f.len()));
    }
    if e_v.len() != VOICE_DIM {
        return Err(shape_err("voice input", VOICE_DIM, e_v.len()));
    }
    let score = |row: usize| {
        let wrow = w.row(row);
        let (wf, wv) = wrow.split_at(ndarray::Axis(0), FACE_DIM);
        dot(wf, e_f) + dot(wv, e_v) + b[row]
    };
    Ok((score(0), score(1)))
}

/// Numerically stable two-way softmax (max subtraction).
pub fn softmax2(scores: (f64, f64)) -> (f64, f64) {
    let m = scores.0.max(scores.1);
    let e_f = (scores.0 - m).exp();
    let e_v = (scores.1 - m).exp();
    let sum = e_f + e_v;
    (e_f / sum, e_v / sum)
}

fn weighted_sum(alpha_f: f64, f: &Array1<f64>, alpha_v: f64, v: &Array1<f64>) -> Array1<f64> {
    let mut z = Array1::zeros(f.len());
    for ((z_i, f_i), v_i) in z.iter_mut().zip(f.iter()).zip(v.iter()) {
        *z_i = alpha_f * f_i + alpha_v * v_i;
    }
    z
}

fn relu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

fn concat_input(sample: &PairedSample) -> Array1<f64> {
    let mut x = Vec::with_capacity(CONCAT_DIM);
    x.extend_from_slice(&sample.face);
    x.extend_from_slice(&sample.voice);
    Array1::from_vec(x)
}

/// System A forward: `z = FC2 relu(FC1 [e_f, e_v] + b1) + b2`.
pub fn fuse_a(sample: &PairedSample, model: &ModelA) -> Result<(Array1<f64>, ForwardTrace)> {
    check_input_dims(sample)?;
    check_model_shapes(&FusionModel::A(model.clone()))?;
    let x = concat_input(sample);
    let pre = &model.fc1_w.dot(&x) + &model.fc1_b;
    let act = relu(&pre);
    let z = &model.fc2_w.dot(&act) + &model.fc2_b;
    let trace = ForwardTrace {
        face_input: Array1::from_vec(sample.face.clone()),
        voice_input: Array1::from_vec(sample.voice.clone()),
        proj_face: None,
        proj_voice: None,
        attn_scores: None,
        attn_weights: None,
        fc1_pre: Some(pre),
        fc1_act: Some(act),
        output: z.clone(),
    };
    Ok((z, trace))
}

/// System B forward: `z = P_f e_f + P_v e_v`.
pub fn fuse_b(sample: &PairedSample, model: &ModelB) -> Result<(Array1<f64>, ForwardTrace)> {
    check_input_dims(sample)?;
    check_model_shapes(&FusionModel::B(model.clone()))?;
    let e_f = ArrayView1::from(sample.face.as_slice());
    let e_v = ArrayView1::from(sample.voice.as_slice());
    let proj_f = model.proj_face.dot(&e_f);
    let proj_v = model.proj_voice.dot(&e_v);
    let z = &proj_f + &proj_v;
    let trace = ForwardTrace {
        face_input: e_f.to_owned(),
        voice_input: e_v.to_owned(),
        proj_face: Some(proj_f),
        proj_voice: Some(proj_v),
        attn_scores: None,
        attn_weights: None,
        fc1_pre: None,
        fc1_act: None,
        output: z.clone(),
    };
    Ok((z, trace))
}

/// System C forward: projected embeddings combined with softmax attention
/// weights, `z = alpha_f P_f e_f + alpha_v P_v e_v`.
pub fn fuse_c(sample: &PairedSample, model: &ModelC) -> Result<(Array1<f64>, ForwardTrace)> {
    check_input_dims(sample)?;
    check_model_shapes(&FusionModel::C(model.clone()))?;
    let e_f = ArrayView1::from(sample.face.as_slice());
    let e_v = ArrayView1::from(sample.voice.as_slice());
    let proj_f = model.proj_face.dot(&e_f);
    let proj_v = model.proj_voice.dot(&e_v);
    let scores = attention_scores(&sample.face, &sample.voice, &model.attn_w, &model.attn_b)?;
    let weights = softmax2(scores);
    let z = weighted_sum(weights.0, &proj_f, weights.1, &proj_v);
    let trace = ForwardTrace {
        face_input: e_f.to_owned(),
        voice_input: e_v.to_owned(),
        proj_face: Some(proj_f),
        proj_voice: Some(proj_v),
        attn_scores: Some(scores),
        attn_weights: Some(weights),
        fc1_pre: None,
        fc1_act: None,
        output: z.clone(),
    };
    Ok((z, trace))
}

impl FusionModel {
    pub fn kind(&self) -> SystemKind {
        match self {
            FusionModel::A(_) => SystemKind::A,
            FusionModel::B(_) => SystemKind::B,
            FusionModel::C(_) => SystemKind::C,
        }
    }

    pub fn forward(&self, sample: &PairedSample) -> Result<(Array1<f64>, ForwardTrace)> {
        match self {
            FusionModel::A(m) => fuse_a(sample, m),
            FusionModel::B(m) => fuse_b(sample, m),
            FusionModel::C(m) => fuse_c(sample, m),
        }
    }

    /// Flat views of every parameter array, in checkpoint order.
    pub fn params(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            FusionModel::A(m) => vec![
                ("fc1_w", m.fc1_w.as_slice().expect("standard layout")),
                ("fc1_b", m.fc1_b.as_slice().expect("standard layout")),
                ("fc2_w", m.fc2_w.as_slice().expect("standard layout")),
                ("fc2_b", m.fc2_b.as_slice().expect("standard layout")),
            ],
            FusionModel::B(m) => vec![
                ("proj_face", m.proj_face.as_slice().expect("standard layout")),
                ("proj_voice", m.proj_voice.as_slice().expect("standard layout")),
            ],
            FusionModel::C(m) => vec![
                ("attn_w", m.attn_w.as_slice().expect("standard layout")),
                ("attn_b", m.attn_b.as_slice().expect("standard layout")),
                ("proj_face", m.proj_face.as_slice().expect("standard layout")),
                ("proj_voice", m.proj_voice.as_slice().expect("standard layout")),
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            FusionModel::A(m) => vec![
                ("fc1_w", m.fc1_w.as_slice_mut().expect("standard layout")),
                ("fc1_b", m.fc1_b.as_slice_mut().expect("standard layout")),
                ("fc2_w", m.fc2_w.as_slice_mut().expect("standard layout")),
                ("fc2_b", m.fc2_b.as_slice_mut().expect("standard layout")),
            ],
            FusionModel::B(m) => vec![
                ("proj_face", m.proj_face.as_slice_mut().expect("standard layout")),
                ("proj_voice", m.proj_voice.as_slice_mut().expect("standard layout")),
            ],
            FusionModel::C(m) => vec![
                ("attn_w", m.attn_w.as_slice_mut().expect("standard layout")),
                ("attn_b", m.attn_b.as_slice_mut().expect("standard layout")),
                ("proj_face", m.proj_face.as_slice_mut().expect("standard layout")),
                ("proj_voice", m.proj_voice.as_slice_mut().expect("standard layout")),
            ],
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

fn check_model_shapes(model: &FusionModel) -> Result<()> {
    let expected = model.kind().param_shapes();
    let actual: Vec<(usize, Vec<usize>)> = match model {
        FusionModel::A(m) => vec![
            (0, vec![m.fc1_w.nrows(), m.fc1_w.ncols()]),
            (1, vec![m.fc1_b.len()]),
            (2, vec![m.fc2_w.nrows(), m.fc2_w.ncols()]),
            (3, vec![m.fc2_b.len()]),
        ],
        FusionModel::B(m) => vec![
            (0, vec![m.proj_face.nrows(), m.proj_face.ncols()]),
            (1, vec![m.proj_voice.nrows(), m.proj_voice.ncols()]),
        ],
        FusionModel::C(m) => vec![
            (0, vec![m.attn_w.nrows(), m.attn_w.ncols()]),
            (1, vec![m.attn_b.len()]),
            (2, vec![m.proj_face.nrows(), m.proj_face.ncols()]),
            (3, vec![m.proj_voice.nrows(), m.proj_voice.ncols()]),
        ],
    };
    for (i, shape) in actual {
        if shape != expected[i].1 {
            return Err(shape_err(expected[i].0, format!("{:?}", expected[i].1), format!("{shape:?}")));
        }
    }
    Ok(())
}

fn xavier_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

/// Xavier-uniform weights, zero biases. Bitwise deterministic given the seed.
pub fn init_model(system: SystemKind, seed: u64) -> FusionModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match system {
        SystemKind::A => {
            let fc1_w = xavier_matrix(&mut rng, FC1_DIM, CONCAT_DIM);
            let fc2_w = xavier_matrix(&mut rng, JOINT_DIM, FC1_DIM);
            FusionModel::A(ModelA {
                fc1_w,
                fc1_b: Array1::zeros(FC1_DIM),
                fc2_w,
                fc2_b: Array1::zeros(JOINT_DIM),
            })
        }
        SystemKind::B => {
            let proj_face = xavier_matrix(&mut rng, JOINT_DIM, FACE_DIM);
            let proj_voice = xavier_matrix(&mut rng, JOINT_DIM, VOICE_DIM);
            FusionModel::B(ModelB { proj_face, proj_voice })
        }
        SystemKind::C => {
            let attn_w = xavier_matrix(&mut rng, N_MODALITIES, CONCAT_DIM);
            let proj_face = xavier_matrix(&mut rng, JOINT_DIM, FACE_DIM);
            let proj_voice = xavier_matrix(&mut rng, JOINT_DIM, VOICE_DIM);
            FusionModel::C(ModelC {
                attn_w,
                attn_b: Array1::zeros(N_MODALITIES),
                proj_face,
                proj_voice,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SyntheticConfig};

    pub(crate) fn sample_pairdata(seed: u64) -> PairedSample {
        let ds = generate_synthetic(&SyntheticConfig {
            n_identities: 2,
            clips_per_identity: 2,
            face_noise_sigma: 0.3,
            voice_noise_sigma: 0.5,
            seed,
        })
        .unwrap();
        ds.samples.into_iter().next().unwrap()
    }

    fn model_c(seed: u64) -> ModelC {
        match init_model(SystemKind::C, seed) {
            FusionModel::C(m) => m,
            _ => unreachable!(),
        }
    }

    fn model_b(seed: u64) -> ModelB {
        match init_model(SystemKind::B, seed) {
            FusionModel::B(m) => m,
            _ => unreachable!(),
        }
    }

    fn model_a(seed: u64) -> ModelA {
        match init_model(SystemKind::A, seed) {
            FusionModel::A(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn attention_scores_zero_weights_return_bias() {
        let s = sample_pairdata(1);
        let w = Array2::zeros((2, CONCAT_DIM));
        let b = Array1::from_vec(vec![0.3, -0.2]);
        let (af, av) = attention_scores(&s.face, &s.voice, &w, &b).unwrap();
        assert_eq!((af, av), (0.3, -0.2));
        let zero_b = Array1::zeros(2);
        let (af, av) = attention_scores(&s.face, &s.voice, &w, &zero_b).unwrap();
        assert_eq!((af, av), (0.0, 0.0));
    }

    #[test]
    fn attention_scores_match_naive_double_loop() {
        let s = sample_pairdata(2);
        let m = model_c(7);
        let (af, av) = attention_scores(&s.face, &s.voice, &m.attn_w, &m.attn_b).unwrap();
        // Oracle: explicit concatenation and a scalar double loop.
        let mut x = s.face.clone();
        x.extend_from_slice(&s.voice);
        for (row, got) in [(0usize, af), (1, av)] {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += m.attn_w[(row, j)] * xj;
            }
            acc += m.attn_b[row];
            assert!((acc - got).abs() < 1e-12, "row {row}: {acc} vs {got}");
        }
    }

    #[test]
    fn attention_scores_shape_mismatch() {
        let s = sample_pairdata(3);
        let w = Array2::zeros((2, CONCAT_DIM - 1));
        let b = Array1::zeros(2);
        assert!(matches!(
            attention_scores(&s.face, &s.voice, &w, &b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn softmax2_symmetry_and_closed_form() {
        for c in [-3.0, 0.0, 17.5] {
            let (a, b) = softmax2((c, c));
            assert!((a - 0.5).abs() < 1e-15);
            assert!((b - 0.5).abs() < 1e-15);
        }
        let (a, b) = softmax2((0.0, 3.0_f64.ln()));
        assert!((a - 0.25).abs() < 1e-12);
        assert!((b - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax2_extreme_scores_are_stable() {
        let (a, b) = softmax2((1000.0, 0.0));
        assert!(a.is_finite() && b.is_finite());
        assert!(a > 0.999_999);
        assert!(b < 1e-6);
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fuse_c_saturated_attention_returns_face_projection() {
        let s = sample_pairdata(4);
        let mut m = model_c(11);
        // Zero the attention weights and force the scores through the bias.
        m.attn_w.fill(0.0);
        m.attn_b = Array1::from_vec(vec![40.0, -40.0]);
        let (z, trace) = fuse_c(&s, &m).unwrap();
        let proj_f = trace.proj_face.unwrap();
        for (zi, fi) in z.iter().zip(proj_f.iter()) {
            assert!((zi - fi).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_c_equal_projections_return_that_vector() {
        let s = sample_pairdata(5);
        let m = model_c(13);
        // Build projections whose outputs coincide for this sample: map both
        // modalities through rank-1 matrices hitting the same u.
        let u: Vec<f64> = (0..JOINT_DIM).map(|i| (i as f64 * 0.01).sin()).collect();
        let face_dot: f64 = s.face.iter().sum();
        let voice_dot: f64 = s.voice.iter().sum();
        let mut proj_face = Array2::zeros((JOINT_DIM, FACE_DIM));
        let mut proj_voice = Array2::zeros((JOINT_DIM, VOICE_DIM));
        for i in 0..JOINT_DIM {
            for j in 0..FACE_DIM {
                proj_face[(i, j)] = u[i] / face_dot;
            }
            for j in 0..VOICE_DIM {
                proj_voice[(i, j)] = u[i] / voice_dot;
            }
        }
        let m = ModelC {
            attn_w: m.attn_w.clone(),
            attn_b: m.attn_b.clone(),
            proj_face,
            proj_voice,
        };
        let (z, _) = fuse_c(&s, &m).unwrap();
        for (zi, ui) in z.iter().zip(&u) {
            assert!((zi - ui).abs() < 1e-9, "{zi} vs {ui}");
        }
    }

    #[test]
    fn fuse_c_matches_naive_re_evaluation() {
        for seed in 0..5 {
            let s = sample_pairdata(seed);
            let m = model_c(seed + 100);
            let (z, _) = fuse_c(&s, &m).unwrap();
            // Straight-line oracle with scalar loops.
            let mut x = s.face.clone();
            x.extend_from_slice(&s.voice);
            let mut scores = [0.0f64; 2];
            for r in 0..2 {
                for (j, xj) in x.iter().enumerate() {
                    scores[r] += m.attn_w[(r, j)] * xj;
                }
                scores[r] += m.attn_b[r];
            }
            let mx = scores[0].max(scores[1]);
            let e0 = (scores[0] - mx).exp();
            let e1 = (scores[1] - mx).exp();
            let (a0, a1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            for i in 0..JOINT_DIM {
                let mut pf = 0.0;
                for j in 0..FACE_DIM {
                    pf += m.proj_face[(i, j)] * s.face[j];
                }
                let mut pv = 0.0;
                for j in 0..VOICE_DIM {
                    pv += m.proj_voice[(i, j)] * s.voice[j];
                }
                let expected = a0 * pf + a1 * pv;
                assert!((z[i] - expected).abs() < 1e-12, "entry {i}");
            }
        }
    }

    #[test]
    fn fuse_a_zero_parameters_return_bias() {
        let s = sample_pairdata(6);
        let mut m = model_a(1);
        m.fc1_w.fill(0.0);
        m.fc2_w.fill(0.0);
        m.fc2_b = Array1::from_elem(JOINT_DIM, 0.75);
        let (z, _) = fuse_a(&s, &m).unwrap();
        assert!(z.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn fuse_a_dead_relu_region_returns_output_bias() {
        let s = sample_pairdata(7);
        let mut m = model_a(2);
        // Push every first-layer pre-activation negative via the bias.
        m.fc1_b.fill(-1e6);
        m.fc2_b = Array1::from_elem(JOINT_DIM, -0.5);
        let (z, trace) = fuse_a(&s, &m).unwrap();
        assert!(trace.fc1_pre.unwrap().iter().all(|&v| v < 0.0));
        assert!(z.iter().all(|&v| v == -0.5));
    }

    #[test]
    fn fuse_a_matches_naive_re_evaluation() {
        let s = sample_pairdata(8);
        let m = model_a(3);
        let (z, _) = fuse_a(&s, &m).unwrap();
        let mut x = s.face.clone();
        x.extend_from_slice(&s.voice);
        let mut hidden = vec![0.0f64; FC1_DIM];
        for (i, h) in hidden.iter_mut().enumerate() {
            let mut acc = m.fc1_b[i];
            for (j, xj) in x.iter().enumerate() {
                acc += m.fc1_w[(i, j)] * xj;
            }
            *h = acc.max(0.0);
        }
        for i in 0..JOINT_DIM {
            let mut acc = m.fc2_b[i];
            for (j, hj) in hidden.iter().enumerate() {
                acc += m.fc2_w[(i, j)] * hj;
            }
            assert!((z[i] - acc).abs() < 1e-12, "entry {i}");
        }
    }

    #[test]
    fn fuse_b_zero_voice_projection_isolates_face_path() {
        let s = sample_pairdata(9);
        let mut m = model_b(4);
        m.proj_voice.fill(0.0);
        let (z, trace) = fuse_b(&s, &m).unwrap();
        let pf = trace.proj_face.unwrap();
        for (zi, fi) in z.iter().zip(pf.iter()) {
            assert_eq!(zi, fi);
        }
    }

    #[test]
    fn fuse_b_missing_voice_input_is_face_projection() {
        let mut s = sample_pairdata(10);
        s.voice = vec![0.0; VOICE_DIM];
        s.voice_is_unit = false;
        let m = model_b(5);
        let (z, trace) = fuse_b(&s, &m).unwrap();
        let pf = trace.proj_face.unwrap();
        for (zi, fi) in z.iter().zip(pf.iter()) {
            assert_eq!(zi, fi);
        }
    }

    #[test]
    fn fuse_b_matches_naive_re_evaluation() {
        let s = sample_pairdata(11);
        let m = model_b(6);
        let (z, _) = fuse_b(&s, &m).unwrap();
        for i in 0..JOINT_DIM {
            let mut acc = 0.0;
            for j in 0..FACE_DIM {
                acc += m.proj_face[(i, j)] * s.face[j];
            }
            for j in 0..VOICE_DIM {
                acc += m.proj_voice[(i, j)] * s.voice[j];
            }
            assert!((z[i] - acc).abs() < 1e-12, "entry {i}");
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        for kind in [SystemKind::A, SystemKind::B, SystemKind::C] {
            let m1 = init_model(kind, 77);
            let m2 = init_model(kind, 77);
            assert_eq!(m1, m2);
            let m3 = init_model(kind, 78);
            assert_ne!(m1, m3);
        }
        let m = init_model(SystemKind::C, 9);
        if let FusionModel::C(c) = &m {
            let bound = (6.0 / (JOINT_DIM + FACE_DIM) as f64).sqrt();
            assert!(c.proj_face.iter().all(|&x| x.abs() <= bound));
            assert!(c.attn_b.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn replay_reproduces_output_exactly() {
        let s = sample_pairdata(12);
        for kind in [SystemKind::A, SystemKind::B, SystemKind::C] {
            let m = init_model(kind, 31);
            let (z, trace) = m.forward(&s).unwrap();
            let replayed = trace.replay(&m).unwrap();
            assert_eq!(z, replayed);
        }
    }

    #[test]
    fn fuse_b_equals_fuse_c_with_pinned_half_weights() {
        // System C with saturated-equal attention (W = 0, b = 0) halves each
        // projection; System B with half of C's projections must match.
        let s = sample_pairdata(13);
        let c = model_c(40);
        let mut c_eq = c.clone();
        c_eq.attn_w.fill(0.0);
        c_eq.attn_b.fill(0.0);
        let b = ModelB {
            proj_face: c.proj_face.mapv(|x| 0.5 * x),
            proj_voice: c.proj_voice.mapv(|x| 0.5 * x),
        };
        let (zc, _) = fuse_c(&s, &c_eq).unwrap();
        let (zb, _) = fuse_b(&s, &b).unwrap();
        for (x, y) in zc.iter().zip(zb.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
