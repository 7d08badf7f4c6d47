//! Cosine scoring of verification trials and the detection metrics: EER and
//! minimum detection cost function over an exhaustive threshold sweep.

use ndarray::Array1;

use crate::embed::{Dataset, ZERO_NORM_EPS};
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::manifest::{atomic_write, fmt_f64, Manifest};
use crate::trials::{TrialLabel, TrialSet};

/// Default detection-cost parameters.
pub const DEFAULT_P_TARGET: f64 = 0.01;
pub const DEFAULT_C_MISS: f64 = 1.0;
pub const DEFAULT_C_FA: f64 = 1.0;

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            what: "cosine operands".into(),
            expected: a.len().to_string(),
            got: b.len().to_string(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Err(Error::ZeroVector {
            norm: na.min(nb),
            min: ZERO_NORM_EPS,
        });
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Representation used to score a trial side.
pub enum Scorer<'a> {
    FaceOnly,
    VoiceOnly,
    Fused(&'a FusionModel),
}

/// Trial scores aligned with their labels. Zero-vector comparisons are
/// recorded as score -1 and counted in `zero_vector_flags` so that
/// missing-modality runs stay defined.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<TrialLabel>,
    pub zero_vector_flags: usize,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<TrialLabel>) -> Self {
        assert_eq!(scores.len(), labels.len(), "scores and labels must align");
        ScoreSet {
            scores,
            labels,
            zero_vector_flags: 0,
        }
    }

    pub fn n_target(&self) -> usize {
        self.labels.iter().filter(|l| **l == TrialLabel::Target).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.labels.len() - self.n_target()
    }
}

/// Scores every trial with the selected representation. Fused scoring runs
/// each distinct sample through the model once.
pub fn score_trials(dataset: &Dataset, trials: &TrialSet, scorer: &Scorer) -> Result<ScoreSet> {
    let fused: Option<Vec<Array1<f64>>> = match scorer {
        Scorer::Fused(model) => {
            let mut reprs = Vec::with_capacity(dataset.len());
            for sample in &dataset.samples {
                let (z, _) = model.forward(sample)?;
                reprs.push(z);
            }
            Some(reprs)
        }
        _ => None,
    };
    let repr = |idx: usize| -> &[f64] {
        match (scorer, &fused) {
            (Scorer::FaceOnly, _) => &dataset.samples[idx].face,
            (Scorer::VoiceOnly, _) => &dataset.samples[idx].voice,
            (Scorer::Fused(_), Some(reprs)) => reprs[idx].as_slice().expect("standard layout"),
            (Scorer::Fused(_), None) => unreachable!("fused representations precomputed"),
        }
    };
    let mut scores = Vec::with_capacity(trials.trials.len());
    let mut labels = Vec::with_capacity(trials.trials.len());
    let mut flags = 0usize;
    for t in &trials.trials {
        let s = match cosine_similarity(repr(t.enroll), repr(t.test)) {
            Ok(s) => s,
            Err(Error::ZeroVector { .. }) => {
                flags += 1;
                -1.0
            }
            Err(e) => return Err(e),
        };
        scores.push(s);
        labels.push(t.label);
    }
    Ok(ScoreSet {
        scores,
        labels,
        zero_vector_flags: flags,
    })
}

/// EER and minDCF for one system under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub zero_vector_flags: usize,
}

struct Sweep {
    thresholds: Vec<f64>,
    /// Fraction of targets with score < t (strict).
    frr: Vec<f64>,
    /// Fraction of nontargets with score >= t.
    far: Vec<f64>,
}

/// Candidate thresholds: one below the minimum, every distinct score, every
/// midpoint between consecutive distinct scores, one above the maximum.
fn build_sweep(scoreset: &ScoreSet) -> Result<Sweep> {
    if scoreset.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("scores must be finite".into()));
    }
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for (s, l) in scoreset.scores.iter().zip(&scoreset.labels) {
        match l {
            TrialLabel::Target => targets.push(*s),
            TrialLabel::Nontarget => nontargets.push(*s),
        }
    }
    if targets.is_empty() {
        return Err(Error::EmptyClass("target"));
    }
    if nontargets.is_empty() {
        return Err(Error::EmptyClass("nontarget"));
    }
    targets.sort_unstable_by(f64::total_cmp);
    nontargets.sort_unstable_by(f64::total_cmp);

    let mut distinct: Vec<f64> = scoreset.scores.clone();
    distinct.sort_unstable_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = Vec::with_capacity(distinct.len() * 2 + 2);
    thresholds.push(distinct[0] - 1.0);
    for (i, &s) in distinct.iter().enumerate() {
        thresholds.push(s);
        if i + 1 < distinct.len() {
            thresholds.push(0.5 * (s + distinct[i + 1]));
        }
    }
    thresholds.push(distinct[distinct.len() - 1] + 1.0);

    let frr_at = |t: f64| targets.partition_point(|&s| s < t) as f64 / targets.len() as f64;
    let far_at =
        |t: f64| (nontargets.len() - nontargets.partition_point(|&s| s < t)) as f64 / nontargets.len() as f64;
    let frr: Vec<f64> = thresholds.iter().map(|&t| frr_at(t)).collect();
    let far: Vec<f64> = thresholds.iter().map(|&t| far_at(t)).collect();
    Ok(Sweep {
        thresholds,
        frr,
        far,
    })
}

/// Equal error rate by linear interpolation between the adjacent sweep points
/// where FAR - FRR changes sign; ties broken toward the lower threshold.
pub fn compute_eer(scoreset: &ScoreSet) -> Result<(f64, f64)> {
    let sweep = build_sweep(scoreset)?;
    // FAR - FRR is non-increasing, starts at +1 and ends at -1.
    let diff: Vec<f64> = sweep
        .far
        .iter()
        .zip(&sweep.frr)
        .map(|(fa, fr)| fa - fr)
        .collect();
    let j = diff
        .iter()
        .position(|&d| d <= 0.0)
        .expect("diff reaches -1 at the top of the sweep");
    if diff[j] == 0.0 || j == 0 {
        return Ok((sweep.frr[j].max(sweep.far[j]), sweep.thresholds[j]));
    }
    let i = j - 1;
    let lambda = diff[i] / (diff[i] - diff[j]);
    let eer = sweep.frr[i] + lambda * (sweep.frr[j] - sweep.frr[i]);
    let threshold = sweep.thresholds[i] + lambda * (sweep.thresholds[j] - sweep.thresholds[i]);
    Ok((eer, threshold))
}

/// Minimum normalized detection cost over the sweep:
/// `DCF(t) = (c_miss p_t P_miss + c_fa (1 - p_t) P_fa) / min(c_miss p_t, c_fa (1 - p_t))`.
pub fn compute_min_dcf(
    scoreset: &ScoreSet,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p_target) || !p_target.is_finite() {
        return Err(Error::InvalidConfig(format!("p_target must be in [0, 1], got {p_target}")));
    }
    if c_miss <= 0.0 || c_fa <= 0.0 || !c_miss.is_finite() || !c_fa.is_finite() {
        return Err(Error::InvalidConfig("costs must be positive and finite".into()));
    }
    let sweep = build_sweep(scoreset)?;
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    if norm <= 0.0 {
        return Err(Error::InvalidConfig("degenerate prior: normalizer is zero".into()));
    }
    let mut best = f64::INFINITY;
    let mut best_t = sweep.thresholds[0];
    for ((&t, &frr), &far) in sweep
        .thresholds
        .iter()
        .zip(&sweep.frr)
        .zip(&sweep.far)
    {
        let cost = (c_miss * p_target * frr + c_fa * (1.0 - p_target) * far) / norm;
        if cost < best {
            best = cost;
            best_t = t;
        }
    }
    Ok((best, best_t))
}

pub fn compute_metrics(
    scoreset: &ScoreSet,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
) -> Result<MetricsReport> {
    let (eer, eer_threshold) = compute_eer(scoreset)?;
    let (min_dcf, dcf_threshold) = compute_min_dcf(scoreset, p_target, c_miss, c_fa)?;
    Ok(MetricsReport {
        eer,
        eer_threshold,
        min_dcf,
        dcf_threshold,
        n_target: scoreset.n_target(),
        n_nontarget: scoreset.n_nontarget(),
        zero_vector_flags: scoreset.zero_vector_flags,
    })
}

/// Scores file: CSV with a manifest comment, header `score,label`, label 1
/// for target and 0 for nontarget.
pub fn render_scores(scoreset: &ScoreSet, manifest: Option<&Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    out.push_str("score,label\n");
    for (s, l) in scoreset.scores.iter().zip(&scoreset.labels) {
        let label = match l {
            TrialLabel::Target => 1,
            TrialLabel::Nontarget => 0,
        };
        out.push_str(&format!("{},{}\n", fmt_f64(*s), label));
    }
    out
}

pub fn write_scores(
    scoreset: &ScoreSet,
    path: &std::path::Path,
    manifest: Option<&Manifest>,
) -> Result<()> {
    atomic_write(path, &render_scores(scoreset, manifest))
}

pub fn parse_scores(contents: &str) -> Result<ScoreSet> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() || line == "score,label" {
            continue;
        }
        let mut parts = line.split(',');
        let (score, label) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(l), None) => (s, l),
            _ => {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    reason: "expected `score,label`".into(),
                })
            }
        };
        let score: f64 = score.trim().parse().map_err(|e| Error::MalformedRecord {
            line: line_no,
            reason: format!("bad score: {e}"),
        })?;
        let label = match label.trim() {
            "1" => TrialLabel::Target,
            "0" => TrialLabel::Nontarget,
            other => {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    reason: format!("bad label {other:?}"),
                })
            }
        };
        scores.push(score);
        labels.push(label);
    }
    Ok(ScoreSet::new(scores, labels))
}
