//! Model checkpoints: a self-describing JSON text format carrying the system
//! tag, parameter shapes, row-major parameter data at full precision, the
//! init seed and optional training metadata.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionModel, ModelA, ModelB, ModelC, SystemKind};
use crate::manifest::{atomic_write, fmt_f64, read_to_string, Manifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub steps: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub pairs_per_class: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub training: Option<TrainingMeta>,
    pub manifest: Option<Manifest>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    system: String,
    seed: u64,
    training: Option<TrainingMeta>,
    manifest: Option<Manifest>,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn render_model(model: &FusionModel, meta: &CheckpointMeta) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str("\"format_version\": 1,\n");
    out.push_str(&format!("\"system\": \"{}\",\n", model.kind().tag()));
    out.push_str(&format!("\"seed\": {},\n", meta.seed));
    out.push_str(&format!(
        "\"training\": {},\n",
        meta.training
            .as_ref()
            .map(|t| serde_json::to_string(t).expect("meta serialization"))
            .unwrap_or_else(|| "null".into())
    ));
    out.push_str(&format!(
        "\"manifest\": {},\n",
        meta.manifest
            .as_ref()
            .map(|m| m.to_json())
            .unwrap_or_else(|| "null".into())
    ));
    out.push_str("\"params\": [\n");
    let shapes = model.kind().param_shapes();
    let params = model.params();
    for (i, ((name, values), (_, shape))) in params.iter().zip(&shapes).enumerate() {
        let data = values.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",");
        let shape_str = shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        out.push_str(&format!(
            "{{\"name\":\"{name}\",\"shape\":[{shape_str}],\"data\":[{data}]}}{}\n",
            if i + 1 < params.len() { "," } else { "" }
        ));
    }
    out.push_str("]\n}\n");
    out
}

pub fn save_model(model: &FusionModel, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    atomic_write(path, &render_model(model, meta))
}

pub fn parse_model(contents: &str) -> Result<(FusionModel, CheckpointMeta)> {
    let file: CheckpointFile = serde_json::from_str(contents).map_err(|e| Error::MalformedRecord {
        line: 1,
        reason: format!("bad checkpoint: {e}"),
    })?;
    if file.format_version != 1 {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("unsupported format_version {}", file.format_version),
        });
    }
    let kind = SystemKind::from_tag(&file.system)?;
    let expected = kind.param_shapes();
    if file.params.len() != expected.len() {
        return Err(Error::ShapeMismatch {
            what: format!("system {} parameter list", kind.tag()),
            expected: expected.len().to_string(),
            got: file.params.len().to_string(),
        });
    }
    let mut arrays: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for (entry, (name, shape)) in file.params.into_iter().zip(&expected) {
        if entry.name != *name || entry.shape != *shape {
            return Err(Error::ShapeMismatch {
                what: format!("parameter {}", entry.name),
                expected: format!("{name} {shape:?}"),
                got: format!("{} {:?}", entry.name, entry.shape),
            });
        }
        let expected_len: usize = shape.iter().product();
        if entry.data.len() != expected_len {
            return Err(Error::ShapeMismatch {
                what: format!("parameter {} data", entry.name),
                expected: expected_len.to_string(),
                got: entry.data.len().to_string(),
            });
        }
        if entry.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedRecord {
                line: 1,
                reason: format!("non-finite value in parameter {}", entry.name),
            });
        }
        arrays.push((entry.name, entry.shape, entry.data));
    }
    fn matrix(entry: (String, Vec<usize>, Vec<f64>)) -> Array2<f64> {
        let (_, shape, data) = entry;
        Array2::from_shape_vec((shape[0], shape[1]), data).expect("validated shape")
    }
    fn vector(entry: (String, Vec<usize>, Vec<f64>)) -> Array1<f64> {
        Array1::from_vec(entry.2)
    }
    let mut iter = arrays.into_iter();
    let mut next = move || iter.next().expect("validated count");
    let model = match kind {
        SystemKind::A => FusionModel::A(ModelA {
            fc1_w: matrix(next()),
            fc1_b: vector(next()),
            fc2_w: matrix(next()),
            fc2_b: vector(next()),
        }),
        SystemKind::B => FusionModel::B(ModelB {
            proj_face: matrix(next()),
            proj_voice: matrix(next()),
        }),
        SystemKind::C => FusionModel::C(ModelC {
            attn_w: matrix(next()),
            attn_b: vector(next()),
            proj_face: matrix(next()),
            proj_voice: matrix(next()),
        }),
    };
    Ok((
        model,
        CheckpointMeta {
            seed: file.seed,
            training: file.training,
            manifest: file.manifest,
        },
    ))
}

pub fn load_model(path: &Path) -> Result<(FusionModel, CheckpointMeta)> {
    parse_model(&read_to_string(path)?)
}

/// Loads a checkpoint and rejects it unless it carries the expected system
/// tag.
pub fn load_model_expecting(path: &Path, expected: SystemKind) -> Result<(FusionModel, CheckpointMeta)> {
    let (model, meta) = load_model(path)?;
    if model.kind() != expected {
        return Err(Error::UnknownSystemTag(format!(
            "expected system {}, checkpoint holds {}",
            expected.tag(),
            model.kind().tag()
        )));
    }
    Ok((model, meta))
}
