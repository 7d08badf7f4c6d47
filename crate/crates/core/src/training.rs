//! Contrastive training of the fusion systems with exact analytic gradients.
//!
//! The batch forward/backward passes are expressed as whole-batch matrix
//! products; the per-parameter derivatives are hand-derived and verified
//! against the central finite-difference oracle in this module.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{Dataset, ZERO_NORM_EPS, FACE_DIM, VOICE_DIM};
use crate::error::{Error, Result};
use crate::fusion::{init_model, FusionModel, SystemKind, FC1_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    /// Same identity, distinct clips.
    Same,
    /// Different identities.
    Different,
}

/// A training pair, as indices into the dataset it was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainPair {
    pub first: usize,
    pub second: usize,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub system: SystemKind,
    pub seed: u64,
    pub steps: usize,
    pub learning_rate: f64,
    pub margin: f64,
    /// Positive pairs per step; the same number of negatives is drawn, so the
    /// default gives the 60 + 60 = 120 pair batch.
    pub pairs_per_class: usize,
}

impl TrainConfig {
    pub fn new(system: SystemKind, seed: u64) -> Self {
        TrainConfig {
            system,
            seed,
            steps: 2000,
            learning_rate: 0.05,
            margin: 1.0,
            pairs_per_class: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::InvalidConfig(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.pairs_per_class == 0 {
            return Err(Error::InvalidConfig("pairs_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// One flat gradient array per model parameter array, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub entries: Vec<(&'static str, Vec<f64>)>,
}

impl GradientSet {
    pub fn zeros_like(model: &FusionModel) -> Self {
        GradientSet {
            entries: model
                .params()
                .iter()
                .map(|(name, p)| (*name, vec![0.0; p.len()]))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, g)| g.iter())
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }
}

fn dataset_identity_check(dataset: &Dataset) -> Result<()> {
    let by_id = dataset.by_identity();
    if by_id.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need >= 2 identities, got {}",
            by_id.len()
        )));
    }
    for (id, clips) in &by_id {
        if clips.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "identity {id} has {} clip(s), need >= 2",
                clips.len()
            )));
        }
    }
    Ok(())
}

/// Draws `pairs_per_class` same-identity pairs (distinct clips) followed by
/// `pairs_per_class` different-identity pairs, uniformly at random.
pub fn sample_pairs(
    dataset: &Dataset,
    pairs_per_class: usize,
    seed: u64,
) -> Result<Vec<TrainPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pairs_with_rng(dataset, pairs_per_class, &mut rng)
}

pub fn sample_pairs_with_rng(
    dataset: &Dataset,
    pairs_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainPair>> {
    dataset_identity_check(dataset)?;
    let by_id = dataset.by_identity();
    let identities: Vec<&Vec<usize>> = by_id.values().collect();
    let mut pairs = Vec::with_capacity(2 * pairs_per_class);
    for _ in 0..pairs_per_class {
        let clips = identities[rng.random_range(0..identities.len())];
        let i = rng.random_range(0..clips.len());
        let mut j = rng.random_range(0..clips.len() - 1);
        if j >= i {
            j += 1;
        }
        pairs.push(TrainPair {
            first: clips[i],
            second: clips[j],
            label: PairLabel::Same,
        });
    }
    for _ in 0..pairs_per_class {
        let a = rng.random_range(0..identities.len());
        let mut b = rng.random_range(0..identities.len() - 1);
        if b >= a {
            b += 1;
        }
        let clips_a = identities[a];
        let clips_b = identities[b];
        pairs.push(TrainPair {
            first: clips_a[rng.random_range(0..clips_a.len())],
            second: clips_b[rng.random_range(0..clips_b.len())],
            label: PairLabel::Different,
        });
    }
    Ok(pairs)
}

/// `D = |z1 - z2|`; `loss = label D^2 + (1 - label) max(0, margin - D)^2`.
pub fn contrastive_loss(z1: &[f64], z2: &[f64], label: PairLabel, margin: f64) -> f64 {
    let dist_sq: f64 = z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum();
    match label {
        PairLabel::Same => dist_sq,
        PairLabel::Different => {
            let hinge = (margin - dist_sq.sqrt()).max(0.0);
            hinge * hinge
        }
    }
}

// ---------------------------------------------------------------------------
// Batched forward / backward
// ---------------------------------------------------------------------------

struct SideInputs {
    e_f: Array2<f64>,
    e_v: Array2<f64>,
    /// Concatenated [face, voice] rows; built only for System A.
    x: Option<Array2<f64>>,
}

fn side_inputs(dataset: &Dataset, pairs: &[TrainPair], second: bool, kind: SystemKind) -> SideInputs {
    let n = pairs.len();
    let mut face = Vec::with_capacity(n * FACE_DIM);
    let mut voice = Vec::with_capacity(n * VOICE_DIM);
    for p in pairs {
        let idx = if second { p.second } else { p.first };
        let s = &dataset.samples[idx];
        face.extend_from_slice(&s.face);
        voice.extend_from_slice(&s.voice);
    }
    let e_f = Array2::from_shape_vec((n, FACE_DIM), face).expect("shape");
    let e_v = Array2::from_shape_vec((n, VOICE_DIM), voice).expect("shape");
    let x = match kind {
        SystemKind::A => {
            let mut cat = Vec::with_capacity(n * (FACE_DIM + VOICE_DIM));
            for i in 0..n {
                cat.extend_from_slice(e_f.row(i).to_slice().expect("contiguous"));
                cat.extend_from_slice(e_v.row(i).to_slice().expect("contiguous"));
            }
            Some(Array2::from_shape_vec((n, FACE_DIM + VOICE_DIM), cat).expect("shape"))
        }
        _ => None,
    };
    SideInputs { e_f, e_v, x }
}

enum SideTrace {
    A {
        pre: Array2<f64>,
        act: Array2<f64>,
    },
    B,
    C {
        proj_f: Array2<f64>,
        proj_v: Array2<f64>,
        alpha_f: Array1<f64>,
        alpha_v: Array1<f64>,
    },
}

fn batch_forward(model: &FusionModel, inputs: &SideInputs) -> (Array2<f64>, SideTrace) {
    match model {
        FusionModel::A(m) => {
            let x = inputs.x.as_ref().expect("System A needs concatenated input");
            let mut pre = x.dot(&m.fc1_w.t());
            pre += &m.fc1_b;
            let act = pre.mapv(|v| if v > 0.0 { v } else { 0.0 });
            let mut z = act.dot(&m.fc2_w.t());
            z += &m.fc2_b;
            (z, SideTrace::A { pre, act })
        }
        FusionModel::B(m) => {
            let z = inputs.e_f.dot(&m.proj_face.t()) + inputs.e_v.dot(&m.proj_voice.t());
            (z, SideTrace::B)
        }
        FusionModel::C(m) => {
            let proj_f = inputs.e_f.dot(&m.proj_face.t());
            let proj_v = inputs.e_v.dot(&m.proj_voice.t());
            let w_face = m.attn_w.slice(s![.., ..FACE_DIM]);
            let w_voice = m.attn_w.slice(s![.., FACE_DIM..]);
            let mut scores = inputs.e_f.dot(&w_face.t()) + inputs.e_v.dot(&w_voice.t());
            scores += &m.attn_b;
            let n = scores.nrows();
            let mut alpha_f = Array1::zeros(n);
            let mut alpha_v = Array1::zeros(n);
            for i in 0..n {
                let (af, av) = crate::fusion::softmax2((scores[(i, 0)], scores[(i, 1)]));
                alpha_f[i] = af;
                alpha_v[i] = av;
            }
            let af_col = alpha_f.view().insert_axis(Axis(1));
            let av_col = alpha_v.view().insert_axis(Axis(1));
            let z = &proj_f * &af_col + &proj_v * &av_col;
            (
                z,
                SideTrace::C {
                    proj_f,
                    proj_v,
                    alpha_f,
                    alpha_v,
                },
            )
        }
    }
}

enum GradArrays {
    A {
        fc1_w: Array2<f64>,
        fc1_b: Array1<f64>,
        fc2_w: Array2<f64>,
        fc2_b: Array1<f64>,
    },
    B {
        proj_face: Array2<f64>,
        proj_voice: Array2<f64>,
    },
    C {
        attn_w: Array2<f64>,
        attn_b: Array1<f64>,
        proj_face: Array2<f64>,
        proj_voice: Array2<f64>,
    },
}

impl GradArrays {
    fn zeros(kind: SystemKind) -> Self {
        let shapes = kind.param_shapes();
        match kind {
            SystemKind::A => GradArrays::A {
                fc1_w: Array2::zeros((shapes[0].1[0], shapes[0].1[1])),
                fc1_b: Array1::zeros(shapes[1].1[0]),
                fc2_w: Array2::zeros((shapes[2].1[0], shapes[2].1[1])),
                fc2_b: Array1::zeros(shapes[3].1[0]),
            },
            SystemKind::B => GradArrays::B {
                proj_face: Array2::zeros((shapes[0].1[0], shapes[0].1[1])),
                proj_voice: Array2::zeros((shapes[1].1[0], shapes[1].1[1])),
            },
            SystemKind::C => GradArrays::C {
                attn_w: Array2::zeros((shapes[0].1[0], shapes[0].1[1])),
                attn_b: Array1::zeros(shapes[1].1[0]),
                proj_face: Array2::zeros((shapes[2].1[0], shapes[2].1[1])),
                proj_voice: Array2::zeros((shapes[3].1[0], shapes[3].1[1])),
            },
        }
    }

    fn into_gradient_set(self) -> GradientSet {
        fn flat2(a: Array2<f64>) -> Vec<f64> {
            a.into_raw_vec_and_offset().0
        }
        fn flat1(a: Array1<f64>) -> Vec<f64> {
            a.into_raw_vec_and_offset().0
        }
        let entries = match self {
            GradArrays::A {
                fc1_w,
                fc1_b,
                fc2_w,
                fc2_b,
            } => vec![
                ("fc1_w", flat2(fc1_w)),
                ("fc1_b", flat1(fc1_b)),
                ("fc2_w", flat2(fc2_w)),
                ("fc2_b", flat1(fc2_b)),
            ],
            GradArrays::B {
                proj_face,
                proj_voice,
            } => vec![
                ("proj_face", flat2(proj_face)),
                ("proj_voice", flat2(proj_voice)),
            ],
            GradArrays::C {
                attn_w,
                attn_b,
                proj_face,
                proj_voice,
            } => vec![
                ("attn_w", flat2(attn_w)),
                ("attn_b", flat1(attn_b)),
                ("proj_face", flat2(proj_face)),
                ("proj_voice", flat2(proj_voice)),
            ],
        };
        GradientSet { entries }
    }
}

fn batch_backward(
    model: &FusionModel,
    inputs: &SideInputs,
    trace: &SideTrace,
    d_z: &Array2<f64>,
    grads: &mut GradArrays,
) {
    match (model, trace, grads) {
        (FusionModel::A(m), SideTrace::A { pre, act }, GradArrays::A { fc1_w, fc1_b, fc2_w, fc2_b }) => {
            let x = inputs.x.as_ref().expect("System A needs concatenated input");
            *fc2_w += &d_z.t().dot(act);
            *fc2_b += &d_z.sum_axis(Axis(0));
            let d_act = d_z.dot(&m.fc2_w);
            // ReLU subgradient at exactly zero is zero.
            let d_pre = &d_act * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            *fc1_w += &d_pre.t().dot(x);
            *fc1_b += &d_pre.sum_axis(Axis(0));
        }
        (FusionModel::B(_), SideTrace::B, GradArrays::B { proj_face, proj_voice }) => {
            *proj_face += &d_z.t().dot(&inputs.e_f);
            *proj_voice += &d_z.t().dot(&inputs.e_v);
        }
        (
            FusionModel::C(_),
            SideTrace::C {
                proj_f,
                proj_v,
                alpha_f,
                alpha_v,
            },
            GradArrays::C {
                attn_w,
                attn_b,
                proj_face,
                proj_voice,
            },
        ) => {
            let n = d_z.nrows();
            let d_alpha_f = (d_z * proj_f).sum_axis(Axis(1));
            let d_alpha_v = (d_z * proj_v).sum_axis(Axis(1));
            // Softmax backward per row.
            let mut d_scores = Array2::zeros((n, 2));
            for i in 0..n {
                let dot = alpha_f[i] * d_alpha_f[i] + alpha_v[i] * d_alpha_v[i];
                d_scores[(i, 0)] = alpha_f[i] * (d_alpha_f[i] - dot);
                d_scores[(i, 1)] = alpha_v[i] * (d_alpha_v[i] - dot);
            }
            let dw_face = d_scores.t().dot(&inputs.e_f);
            let dw_voice = d_scores.t().dot(&inputs.e_v);
            attn_w.slice_mut(s![.., ..FACE_DIM]).zip_mut_with(&dw_face, |a, b| *a += b);
            attn_w.slice_mut(s![.., FACE_DIM..]).zip_mut_with(&dw_voice, |a, b| *a += b);
            *attn_b += &d_scores.sum_axis(Axis(0));
            let af_col = alpha_f.view().insert_axis(Axis(1));
            let av_col = alpha_v.view().insert_axis(Axis(1));
            let d_proj_f = d_z * &af_col;
            let d_proj_v = d_z * &av_col;
            *proj_face += &d_proj_f.t().dot(&inputs.e_f);
            *proj_voice += &d_proj_v.t().dot(&inputs.e_v);
        }
        _ => unreachable!("model, trace and grads always share a system"),
    }
}

/// Batch-mean contrastive loss and its gradients with respect to both sides'
/// outputs.
fn loss_and_dz(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    pairs: &[TrainPair],
    margin: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let n = pairs.len();
    let inv_n = 1.0 / n as f64;
    let diff = z1 - z2;
    let mut loss = 0.0;
    let mut d_z1 = Array2::zeros(z1.raw_dim());
    for (i, pair) in pairs.iter().enumerate() {
        let row = diff.row(i);
        let dist_sq: f64 = row.iter().map(|d| d * d).sum();
        let dist = dist_sq.sqrt();
        match pair.label {
            PairLabel::Same => {
                loss += dist_sq;
                let scale = 2.0 * inv_n;
                for (out, d) in d_z1.row_mut(i).iter_mut().zip(row.iter()) {
                    *out = scale * d;
                }
            }
            PairLabel::Different => {
                let hinge = (margin - dist).max(0.0);
                loss += hinge * hinge;
                if hinge > 0.0 && dist > ZERO_NORM_EPS {
                    let scale = -2.0 * hinge / dist * inv_n;
                    for (out, d) in d_z1.row_mut(i).iter_mut().zip(row.iter()) {
                        *out = scale * d;
                    }
                }
            }
        }
    }
    let d_z2 = d_z1.mapv(|v| -v);
    (loss * inv_n, d_z1, d_z2)
}

/// Batch-mean contrastive loss over the pairs (forward only).
pub fn batch_loss(
    dataset: &Dataset,
    pairs: &[TrainPair],
    model: &FusionModel,
    margin: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let kind = model.kind();
    let in1 = side_inputs(dataset, pairs, false, kind);
    let in2 = side_inputs(dataset, pairs, true, kind);
    let (z1, _) = batch_forward(model, &in1);
    let (z2, _) = batch_forward(model, &in2);
    let (loss, _, _) = loss_and_dz(&z1, &z2, pairs, margin);
    Ok(loss)
}

/// Batch-mean loss and exact analytic gradients for every model parameter.
pub fn backward(
    dataset: &Dataset,
    pairs: &[TrainPair],
    model: &FusionModel,
    margin: f64,
) -> Result<(f64, GradientSet)> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let kind = model.kind();
    let in1 = side_inputs(dataset, pairs, false, kind);
    let in2 = side_inputs(dataset, pairs, true, kind);
    let (z1, tr1) = batch_forward(model, &in1);
    let (z2, tr2) = batch_forward(model, &in2);
    let (loss, d_z1, d_z2) = loss_and_dz(&z1, &z2, pairs, margin);
    let mut grads = GradArrays::zeros(kind);
    batch_backward(model, &in1, &tr1, &d_z1, &mut grads);
    batch_backward(model, &in2, &tr2, &d_z2, &mut grads);
    Ok((loss, grads.into_gradient_set()))
}

/// Central finite differences for the listed `(param_array, flat_index)`
/// targets.
pub fn finite_diff_at(
    dataset: &Dataset,
    pairs: &[TrainPair],
    model: &FusionModel,
    margin: f64,
    h: f64,
    targets: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let mut work = model.clone();
    let mut out = Vec::with_capacity(targets.len());
    for &(array_idx, flat_idx) in targets {
        let original = {
            let mut params = work.params_mut();
            let slot = &mut params[array_idx].1[flat_idx];
            let orig = *slot;
            *slot = orig + h;
            orig
        };
        let loss_plus = batch_loss(dataset, pairs, &work, margin)?;
        {
            let mut params = work.params_mut();
            params[array_idx].1[flat_idx] = original - h;
        }
        let loss_minus = batch_loss(dataset, pairs, &work, margin)?;
        {
            let mut params = work.params_mut();
            params[array_idx].1[flat_idx] = original;
        }
        out.push((loss_plus - loss_minus) / (2.0 * h));
    }
    Ok(out)
}

/// Central finite differences for every scalar parameter. At the fixed model
/// dimensions this visits 10^5..10^6 parameters; prefer [`finite_diff_at`]
/// with a sampled index set anywhere runtime matters.
pub fn finite_diff_grads(
    dataset: &Dataset,
    pairs: &[TrainPair],
    model: &FusionModel,
    margin: f64,
    h: f64,
) -> Result<GradientSet> {
    let mut entries = Vec::new();
    for (array_idx, (name, values)) in model.params().iter().enumerate() {
        let targets: Vec<(usize, usize)> = (0..values.len()).map(|i| (array_idx, i)).collect();
        let grads = finite_diff_at(dataset, pairs, model, margin, h, &targets)?;
        entries.push((*name, grads));
    }
    Ok(GradientSet { entries })
}

/// First-layer rows whose pre-activation sits within `tol` of the ReLU kink
/// for any sample in the batch (System A only).
pub fn relu_kink_rows(
    dataset: &Dataset,
    pairs: &[TrainPair],
    model: &FusionModel,
    tol: f64,
) -> Option<Vec<bool>> {
    let FusionModel::A(_) = model else {
        return None;
    };
    let kind = model.kind();
    let mut kinky = vec![false; FC1_DIM];
    for second in [false, true] {
        let inputs = side_inputs(dataset, pairs, second, kind);
        let (_, trace) = batch_forward(model, &inputs);
        if let SideTrace::A { pre, .. } = trace {
            for row in pre.axis_iter(Axis(0)) {
                for (flag, &v) in kinky.iter_mut().zip(row.iter()) {
                    if v.abs() <= tol {
                        *flag = true;
                    }
                }
            }
        }
    }
    Some(kinky)
}

/// Distances `|z1 - z2|` per pair under the current model. Lets gradient
/// checks avoid instances parked on the hinge or norm kinks.
pub fn pair_distances(
    dataset: &Dataset,
    pairs: &[TrainPair],
    model: &FusionModel,
) -> Result<Vec<f64>> {
    let kind = model.kind();
    let in1 = side_inputs(dataset, pairs, false, kind);
    let in2 = side_inputs(dataset, pairs, true, kind);
    let (z1, _) = batch_forward(model, &in1);
    let (z2, _) = batch_forward(model, &in2);
    Ok((&z1 - &z2)
        .axis_iter(Axis(0))
        .map(|row| row.iter().map(|d| d * d).sum::<f64>().sqrt())
        .collect())
}

fn apply_update(model: &mut FusionModel, grads: &GradientSet, learning_rate: f64) {
    for ((_, param), (_, grad)) in model.params_mut().iter_mut().zip(&grads.entries) {
        for (p, g) in param.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FusionModel,
    pub loss_history: Vec<f64>,
}

/// Plain gradient descent: `sample_pairs -> forward -> backward -> update`,
/// `steps` times. Bitwise deterministic given the config.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    dataset_identity_check(dataset)?;
    let mut model = init_model(config.system, config.seed);
    // Pair sampling consumes an RNG stream disjoint from model init.
    let mut pair_rng = ChaCha8Rng::seed_from_u64(config.seed);
    pair_rng.set_stream(1);
    let mut loss_history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let pairs = sample_pairs_with_rng(dataset, config.pairs_per_class, &mut pair_rng)?;
        let (loss, grads) = backward(dataset, &pairs, &model, config.margin)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        apply_update(&mut model, &grads, config.learning_rate);
        loss_history.push(loss);
    }
    Ok(TrainOutcome {
        model,
        loss_history,
    })
}

/// Loss history as CSV (`step,loss`).
pub fn render_loss_history(history: &[f64], manifest: Option<&crate::manifest::Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    out.push_str("step,loss\n");
    for (step, loss) in history.iter().enumerate() {
        out.push_str(&format!("{step},{}\n", crate::manifest::fmt_f64(*loss)));
    }
    out
}

pub fn write_loss_history(
    history: &[f64],
    path: &std::path::Path,
    manifest: Option<&crate::manifest::Manifest>,
) -> Result<()> {
    crate::manifest::atomic_write(path, &render_loss_history(history, manifest))
}

/// Drains `n` u64 values; used to derive per-run seeds from a base seed.
pub fn derive_seeds(base: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(2);
    (0..n).map(|_| rng.next_u64()).collect()
}
