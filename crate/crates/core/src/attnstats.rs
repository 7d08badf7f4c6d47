//! Statistics of learned attention weights against boolean facial attributes
//! and head-orientation bins: conditional exceedance probabilities with Wald
//! 95% intervals and a 60% lower-bound significance rule.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::manifest::{atomic_write, fmt_f64, read_to_string, Manifest};

/// Two-sided 95% point of the standard normal.
pub const Z_95: f64 = 1.959964;
/// Lower-bound significance bar: strictly above chance by a wide margin.
pub const SIGNIFICANCE_BAR: f64 = 0.60;

/// The 40 facial appearance attribute names (CelebA order).
pub const ATTRIBUTE_NAMES: [&str; 40] = [
    "5_o_Clock_Shadow",
    "Arched_Eyebrows",
    "Attractive",
    "Bags_Under_Eyes",
    "Bald",
    "Bangs",
    "Big_Lips",
    "Big_Nose",
    "Black_Hair",
    "Blond_Hair",
    "Blurry",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Chubby",
    "Double_Chin",
    "Eyeglasses",
    "Goatee",
    "Gray_Hair",
    "Heavy_Makeup",
    "High_Cheekbones",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "Narrow_Eyes",
    "No_Beard",
    "Oval_Face",
    "Pale_Skin",
    "Pointy_Nose",
    "Receding_Hairline",
    "Rosy_Cheeks",
    "Sideburns",
    "Smiling",
    "Straight_Hair",
    "Wavy_Hair",
    "Wearing_Earrings",
    "Wearing_Hat",
    "Wearing_Lipstick",
    "Wearing_Necklace",
    "Wearing_Necktie",
    "Young",
];

/// One test sample's attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub clip_id: String,
    pub alpha_face: f64,
    pub alpha_voice: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionLog {
    pub rows: Vec<AttentionRow>,
}

impl AttentionLog {
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if !row.alpha_face.is_finite() || !row.alpha_voice.is_finite() {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: "non-finite attention weight".into(),
                });
            }
            if (row.alpha_face + row.alpha_voice - 1.0).abs() > 1e-9 {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: format!(
                        "attention weights must sum to 1, got {}",
                        row.alpha_face + row.alpha_voice
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Per-sample boolean attributes plus head orientation in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRow {
    pub clip_id: String,
    pub frame_index: u32,
    pub attributes: BTreeMap<String, bool>,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributeTable {
    pub rows: Vec<AttributeRow>,
}

/// Global mean attention over the whole log.
pub fn global_mean_attention(log: &AttentionLog) -> Result<(f64, f64)> {
    if log.rows.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n = log.rows.len() as f64;
    let mean_face = log.rows.iter().map(|r| r.alpha_face).sum::<f64>() / n;
    let mean_voice = log.rows.iter().map(|r| r.alpha_voice).sum::<f64>() / n;
    Ok((mean_face, mean_voice))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondProb {
    /// Fraction of masked rows with `alpha_face` strictly above the global
    /// face mean.
    pub p_face: f64,
    /// Fraction with `alpha_voice` strictly above the global voice mean
    /// (equivalently `alpha_face` strictly below the face mean, absent ties).
    pub p_voice: f64,
    pub n: usize,
}

/// Conditional exceedance probabilities over the masked rows. Ties with the
/// global mean count as non-exceedance for both modalities.
pub fn conditional_prob(log: &AttentionLog, mask: &[bool], mean_face: f64) -> Result<CondProb> {
    if mask.len() != log.rows.len() {
        return Err(Error::ShapeMismatch {
            what: "attribute mask".into(),
            expected: log.rows.len().to_string(),
            got: mask.len().to_string(),
        });
    }
    let mut n = 0usize;
    let mut face_exceed = 0usize;
    let mut voice_exceed = 0usize;
    for (row, &selected) in log.rows.iter().zip(mask) {
        if !selected {
            continue;
        }
        n += 1;
        if row.alpha_face > mean_face {
            face_exceed += 1;
        }
        if row.alpha_face < mean_face {
            voice_exceed += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCondition);
    }
    Ok(CondProb {
        p_face: face_exceed as f64 / n as f64,
        p_voice: voice_exceed as f64 / n as f64,
        n,
    })
}

/// Wald 95% half-width: `z sqrt(p (1 - p) / n)`. Degenerate at p in {0, 1},
/// where the width collapses to zero (flagged by the report).
pub fn wald_ci(p_hat: f64, n: usize) -> Result<f64> {
    if n == 0 || !(0.0..=1.0).contains(&p_hat) || !p_hat.is_finite() {
        return Err(Error::InvalidCount { n, p: p_hat });
    }
    Ok(Z_95 * (p_hat * (1.0 - p_hat) / n as f64).sqrt())
}

/// True iff the 95% lower bound clears the 60% bar strictly.
pub fn significance_flag(p_hat: f64, half_width: f64) -> bool {
    p_hat - half_width > SIGNIFICANCE_BAR
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleAxis {
    Yaw,
    Pitch,
    Roll,
}

impl AngleAxis {
    pub fn label(self) -> &'static str {
        match self {
            AngleAxis::Yaw => "yaw",
            AngleAxis::Pitch => "pitch",
            AngleAxis::Roll => "roll",
        }
    }

    pub fn all() -> [AngleAxis; 3] {
        [AngleAxis::Yaw, AngleAxis::Pitch, AngleAxis::Roll]
    }

    fn value(self, row: &AttributeRow) -> f64 {
        match self {
            AngleAxis::Yaw => row.yaw,
            AngleAxis::Pitch => row.pitch,
            AngleAxis::Roll => row.roll,
        }
    }
}

pub const ANGLE_BIN_LABELS: [&str; 3] = ["abs<30", "30<=abs<60", "abs>=60"];

/// Masks for |angle| in [0, 30), [30, 60), [60, inf); boundary values fall in
/// the higher bin. The masks partition the table.
pub fn bin_by_angle(table: &AttributeTable, axis: AngleAxis) -> [Vec<bool>; 3] {
    let mut bins = [
        vec![false; table.rows.len()],
        vec![false; table.rows.len()],
        vec![false; table.rows.len()],
    ];
    for (i, row) in table.rows.iter().enumerate() {
        let a = axis.value(row).abs();
        let bin = if a < 30.0 {
            0
        } else if a < 60.0 {
            1
        } else {
            2
        };
        bins[bin][i] = true;
    }
    bins
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatValues {
    pub p_voice: f64,
    pub p_face: f64,
    pub half_width: f64,
    pub significant: bool,
    /// Set when the dominant proportion is 0 or 1 and the Wald width is
    /// degenerate.
    pub degenerate_ci: bool,
}

/// One row of the attention-statistics report: an attribute or an
/// orientation bin.
#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub name: String,
    pub n: usize,
    /// None when the condition selects no rows (skipped, n = 0).
    pub stats: Option<StatValues>,
}

fn stat_values(prob: CondProb) -> Result<StatValues> {
    // The interval is reported for the dominant modality's proportion; with
    // no ties the two proportions are complementary and share a width.
    let p_dom = prob.p_face.max(prob.p_voice);
    let half_width = wald_ci(p_dom, prob.n)?;
    Ok(StatValues {
        p_voice: prob.p_voice,
        p_face: prob.p_face,
        half_width,
        significant: significance_flag(p_dom, half_width),
        degenerate_ci: p_dom == 0.0 || p_dom == 1.0,
    })
}

fn stat_row(log: &AttentionLog, mask: &[bool], mean_face: f64, name: String) -> Result<StatRow> {
    match conditional_prob(log, mask, mean_face) {
        Ok(prob) => Ok(StatRow {
            name,
            n: prob.n,
            stats: Some(stat_values(prob)?),
        }),
        Err(Error::EmptyCondition) => Ok(StatRow {
            name,
            n: 0,
            stats: None,
        }),
        Err(e) => Err(e),
    }
}

/// Joins the attention log against the attribute table by clip id and emits
/// one row per attribute and per orientation bin.
pub fn emit_stat_report(log: &AttentionLog, table: &AttributeTable) -> Result<Vec<StatRow>> {
    log.validate()?;
    if log.rows.is_empty() {
        return Err(Error::EmptyLog);
    }
    let by_clip: BTreeMap<&str, &AttributeRow> = table
        .rows
        .iter()
        .map(|r| (r.clip_id.as_str(), r))
        .collect();
    let mut unmatched = Vec::new();
    let mut joined: Vec<&AttributeRow> = Vec::with_capacity(log.rows.len());
    for row in &log.rows {
        match by_clip.get(row.clip_id.as_str()) {
            Some(attr) => joined.push(attr),
            None => unmatched.push(row.clip_id.clone()),
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::AttributeJoinFailure(unmatched));
    }
    let joined_table = AttributeTable {
        rows: joined.iter().map(|r| (*r).clone()).collect(),
    };

    let (mean_face, _) = global_mean_attention(log)?;
    let mut report = Vec::new();
    // Orientation bins per axis.
    for axis in AngleAxis::all() {
        let bins = bin_by_angle(&joined_table, axis);
        for (bin, mask) in bins.iter().enumerate() {
            report.push(stat_row(
                log,
                mask,
                mean_face,
                format!("{}:{}", axis.label(), ANGLE_BIN_LABELS[bin]),
            )?);
        }
    }
    // Boolean attributes: the union of names across rows, in name order.
    let mut names: Vec<&str> = Vec::new();
    for row in &joined_table.rows {
        for name in row.attributes.keys() {
            if !names.contains(&name.as_str()) {
                names.push(name);
            }
        }
    }
    names.sort_unstable();
    for name in names {
        let mask: Vec<bool> = joined_table
            .rows
            .iter()
            .map(|r| r.attributes.get(name).copied().unwrap_or(false))
            .collect();
        report.push(stat_row(log, &mask, mean_face, name.to_string())?);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Attention log CSV: `clip_id,alpha_face,alpha_voice`.
pub fn render_attention_log(log: &AttentionLog, manifest: Option<&Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    out.push_str("clip_id,alpha_face,alpha_voice\n");
    for row in &log.rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.clip_id,
            fmt_f64(row.alpha_face),
            fmt_f64(row.alpha_voice)
        ));
    }
    out
}

pub fn write_attention_log(log: &AttentionLog, path: &Path, manifest: Option<&Manifest>) -> Result<()> {
    atomic_write(path, &render_attention_log(log, manifest))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeLine {
    clip_id: String,
    #[serde(default)]
    frame_index: u32,
    attributes: BTreeMap<String, bool>,
    yaw: f64,
    pitch: f64,
    roll: f64,
}

/// Attribute file: line-delimited
/// `{clip_id, frame_index, attributes: {name: bool, ...}, yaw, pitch, roll}`.
pub fn parse_attribute_table(contents: &str) -> Result<AttributeTable> {
    let mut rows = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let parsed: AttributeLine = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        for (name, angle) in [("yaw", parsed.yaw), ("pitch", parsed.pitch), ("roll", parsed.roll)] {
            if !angle.is_finite() {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    reason: format!("non-finite {name}"),
                });
            }
        }
        rows.push(AttributeRow {
            clip_id: parsed.clip_id,
            frame_index: parsed.frame_index,
            attributes: parsed.attributes,
            yaw: parsed.yaw,
            pitch: parsed.pitch,
            roll: parsed.roll,
        });
    }
    Ok(AttributeTable { rows })
}

pub fn read_attribute_table(path: &Path) -> Result<AttributeTable> {
    parse_attribute_table(&read_to_string(path)?)
}

pub fn render_attribute_table(table: &AttributeTable, manifest: Option<&Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    for row in &table.rows {
        let attrs = row
            .attributes
            .iter()
            .map(|(k, v)| format!("{}:{}", serde_json::to_string(k).unwrap(), v))
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!(
            "{{\"clip_id\":{},\"frame_index\":{},\"attributes\":{{{}}},\"yaw\":{},\"pitch\":{},\"roll\":{}}}\n",
            serde_json::to_string(&row.clip_id).unwrap(),
            row.frame_index,
            attrs,
            fmt_f64(row.yaw),
            fmt_f64(row.pitch),
            fmt_f64(row.roll)
        ));
    }
    out
}

pub fn write_attribute_table(
    table: &AttributeTable,
    path: &Path,
    manifest: Option<&Manifest>,
) -> Result<()> {
    atomic_write(path, &render_attribute_table(table, manifest))
}

/// Synthesizes an attribute table with independent random labels and angles
/// for the given clips. Stand-in for externally predicted attributes.
pub fn synthetic_attribute_table(clip_ids: &[String], seed: u64) -> AttributeTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = clip_ids
        .iter()
        .map(|clip_id| {
            let attributes: BTreeMap<String, bool> = ATTRIBUTE_NAMES
                .iter()
                .map(|name| (name.to_string(), rng.random_bool(0.3)))
                .collect();
            AttributeRow {
                clip_id: clip_id.clone(),
                frame_index: 0,
                attributes,
                yaw: rng.random_range(-90.0..90.0),
                pitch: rng.random_range(-90.0..90.0),
                roll: rng.random_range(-90.0..90.0),
            }
        })
        .collect();
    AttributeTable { rows }
}

/// Stat report CSV: `attribute,n,p_voice,p_face,ci_half_width,significant`.
pub fn render_stat_report_csv(report: &[StatRow], manifest: Option<&Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    out.push_str("attribute,n,p_voice,p_face,ci_half_width,significant\n");
    for row in report {
        match &row.stats {
            Some(s) => out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.name,
                row.n,
                fmt_f64(s.p_voice),
                fmt_f64(s.p_face),
                fmt_f64(s.half_width),
                s.significant
            )),
            None => out.push_str(&format!("{},0,,,,false\n", row.name)),
        }
    }
    out
}

/// Aligned-text report: the head-orientation block followed by the attribute
/// block, percentages with the dominant modality's confidence half-width.
pub fn render_stat_report_text(report: &[StatRow], manifest: Option<&Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    let is_orientation = |name: &str| name.contains(':');
    out.push_str("Head orientation attributes (V: voice, F: face)\n");
    out.push_str(&format!(
        "{:<22} {:>8} {:>8} {:>8} {:>10} {:>6}\n",
        "bin", "n", "V(%)", "F(%)", "95% C.I.", "sig"
    ));
    for row in report.iter().filter(|r| is_orientation(&r.name)) {
        render_text_row(&mut out, row);
    }
    out.push_str("\nFacial appearance attributes\n");
    out.push_str(&format!(
        "{:<22} {:>8} {:>8} {:>8} {:>10} {:>6}\n",
        "attribute", "n", "V(%)", "F(%)", "95% C.I.", "sig"
    ));
    for row in report.iter().filter(|r| !is_orientation(&r.name)) {
        render_text_row(&mut out, row);
    }
    out
}

fn render_text_row(out: &mut String, row: &StatRow) {
    match &row.stats {
        Some(s) => {
            let ci = format!("+-{:.2}", s.half_width * 100.0);
            out.push_str(&format!(
                "{:<22} {:>8} {:>8.2} {:>8.2} {:>10} {:>6}\n",
                row.name,
                row.n,
                s.p_voice * 100.0,
                s.p_face * 100.0,
                ci,
                if s.significant { "yes" } else { "no" }
            ));
        }
        None => {
            out.push_str(&format!(
                "{:<22} {:>8} {:>8} {:>8} {:>10} {:>6}\n",
                row.name, 0, "-", "-", "-", "no"
            ));
        }
    }
}
