//! Dataset file format: UTF-8, one JSON header line followed by one JSON
//! record line per modality vector. Floats are written with 17 significant
//! digits so vectors round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::embed::{
    Dataset, EmbeddingRecord, Modality, PairedSample, FACE_DIM, UNIT_NORM_TOL, VOICE_DIM,
};
use crate::error::{Error, Result};
use crate::manifest::{atomic_write, fmt_f64, read_to_string, Manifest};

/// Segment length recorded for synthetic voice embeddings (the short-segment
/// condition; metadata only).
pub const VOICE_SEGMENT_SEC: f64 = 0.115;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    format_version: u32,
    face_dim: usize,
    voice_dim: usize,
    #[serde(default)]
    #[allow(dead_code)]
    manifest: Option<Manifest>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    identity_id: String,
    clip_id: String,
    frame_index: u32,
    modality: Modality,
    segment_length_sec: f64,
    vector: Vec<f64>,
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

fn record_line(r: &EmbeddingRecord) -> String {
    let vector = r
        .vector
        .iter()
        .map(|&x| fmt_f64(x))
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "{{\"identity_id\":{},\"clip_id\":{},\"frame_index\":{},\"modality\":\"{}\",\"segment_length_sec\":{},\"vector\":[{}]}}",
        json_string(&r.identity_id),
        json_string(&r.clip_id),
        r.frame_index,
        r.modality.tag(),
        fmt_f64(r.segment_length_sec),
        vector
    )
}

/// Flattens a paired dataset into per-modality records (face line first).
pub fn to_records(dataset: &Dataset) -> Vec<EmbeddingRecord> {
    let mut records = Vec::with_capacity(dataset.len() * 2);
    for s in &dataset.samples {
        records.push(EmbeddingRecord {
            identity_id: s.identity_id.clone(),
            clip_id: s.clip_id.clone(),
            frame_index: 0,
            modality: Modality::Face,
            vector: s.face.clone(),
            segment_length_sec: 0.0,
        });
        records.push(EmbeddingRecord {
            identity_id: s.identity_id.clone(),
            clip_id: s.clip_id.clone(),
            frame_index: 0,
            modality: Modality::Voice,
            vector: s.voice.clone(),
            segment_length_sec: VOICE_SEGMENT_SEC,
        });
    }
    records
}

pub fn render_dataset(dataset: &Dataset, manifest: Option<&Manifest>) -> Result<String> {
    for (i, s) in dataset.samples.iter().enumerate() {
        for (vec, dim) in [(&s.face, FACE_DIM), (&s.voice, VOICE_DIM)] {
            if vec.len() != dim {
                return Err(Error::DimensionMismatch {
                    line: i + 2,
                    expected: dim,
                    got: vec.len(),
                });
            }
            if vec.iter().any(|x| !x.is_finite()) {
                return Err(Error::MalformedRecord {
                    line: i + 2,
                    reason: format!("non-finite entry in sample {}", s.clip_id),
                });
            }
        }
    }
    let header = match manifest {
        Some(m) => format!(
            "{{\"format_version\":1,\"face_dim\":{FACE_DIM},\"voice_dim\":{VOICE_DIM},\"manifest\":{}}}",
            m.to_json()
        ),
        None => format!("{{\"format_version\":1,\"face_dim\":{FACE_DIM},\"voice_dim\":{VOICE_DIM}}}"),
    };
    let mut out = String::with_capacity(dataset.len() * 4096);
    out.push_str(&header);
    out.push('\n');
    for r in to_records(dataset) {
        out.push_str(&record_line(&r));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(dataset: &Dataset, path: &Path, manifest: Option<&Manifest>) -> Result<()> {
    atomic_write(path, &render_dataset(dataset, manifest)?)
}

pub fn parse_dataset(contents: &str) -> Result<Dataset> {
    let mut lines = contents.lines().enumerate();
    let (_, header_text) = lines.next().ok_or(Error::MalformedRecord {
        line: 1,
        reason: "empty file".into(),
    })?;
    let header: HeaderLine = serde_json::from_str(header_text).map_err(|e| Error::MalformedRecord {
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.format_version != 1 {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("unsupported format_version {}", header.format_version),
        });
    }
    if header.face_dim != FACE_DIM || header.voice_dim != VOICE_DIM {
        return Err(Error::InvalidConfig(format!(
            "unsupported dimensions in header: face {}, voice {}",
            header.face_dim, header.voice_dim
        )));
    }

    // Pair records by clip id, preserving first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut partial: BTreeMap<String, (String, Option<Vec<f64>>, Option<Vec<f64>>)> =
        BTreeMap::new();
    for (idx, text) in lines {
        let line_no = idx + 1;
        if text.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(text).map_err(|e| Error::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        let record = EmbeddingRecord {
            identity_id: rec.identity_id,
            clip_id: rec.clip_id,
            frame_index: rec.frame_index,
            modality: rec.modality,
            vector: rec.vector,
            segment_length_sec: rec.segment_length_sec,
        };
        let expected = match record.modality {
            Modality::Face => header.face_dim,
            Modality::Voice => header.voice_dim,
        };
        record.validate(expected, line_no)?;
        let entry = partial.entry(record.clip_id.clone()).or_insert_with(|| {
            order.push(record.clip_id.clone());
            (record.identity_id.clone(), None, None)
        });
        if entry.0 != record.identity_id {
            return Err(Error::MalformedRecord {
                line: line_no,
                reason: format!(
                    "clip {} maps to identities {:?} and {:?}",
                    record.clip_id, entry.0, record.identity_id
                ),
            });
        }
        let slot = match record.modality {
            Modality::Face => &mut entry.1,
            Modality::Voice => &mut entry.2,
        };
        if slot.is_some() {
            return Err(Error::MalformedRecord {
                line: line_no,
                reason: format!(
                    "duplicate {} record for clip {}",
                    record.modality.tag(),
                    record.clip_id
                ),
            });
        }
        *slot = Some(record.vector);
    }

    let mut samples = Vec::with_capacity(order.len());
    for clip_id in order {
        let (identity_id, face, voice) = partial.remove(&clip_id).expect("clip was inserted");
        let face = face.ok_or_else(|| Error::MalformedRecord {
            line: 0,
            reason: format!("clip {clip_id} has no face record"),
        })?;
        let voice = voice.ok_or_else(|| Error::MalformedRecord {
            line: 0,
            reason: format!("clip {clip_id} has no voice record"),
        })?;
        let face_is_unit = (crate::embed::l2_norm(&face) - 1.0).abs() <= UNIT_NORM_TOL;
        let voice_is_unit = (crate::embed::l2_norm(&voice) - 1.0).abs() <= UNIT_NORM_TOL;
        samples.push(PairedSample {
            identity_id,
            clip_id,
            face,
            voice,
            face_is_unit,
            voice_is_unit,
        });
    }
    Ok(Dataset::new(samples))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrupt::{corrupt, CorruptionMode, CorruptionSpec};
    use crate::synth::{generate_synthetic, SyntheticConfig};

    fn small_dataset() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n_identities: 2,
            clips_per_identity: 2,
            face_noise_sigma: 0.15,
            voice_noise_sigma: 0.6,
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = small_dataset();
        let text = render_dataset(&ds, None).unwrap();
        let back = parse_dataset(&text).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn round_trip_keeps_missing_flags() {
        let ds = corrupt(
            &small_dataset(),
            &CorruptionSpec {
                target_modality: Modality::Voice,
                mode: CorruptionMode::Zeros,
                fraction: 1.0,
                seed: 2,
            },
        )
        .unwrap();
        let back = parse_dataset(&render_dataset(&ds, None).unwrap()).unwrap();
        assert_eq!(ds, back);
        assert!(back.samples.iter().all(|s| !s.voice_is_unit));
    }

    #[test]
    fn header_dimension_mismatch_detected() {
        let ds = small_dataset();
        let text = render_dataset(&ds, None).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // Drop the last entry of the first face vector (line 2).
        let last_comma = lines[1].rfind(',').unwrap();
        let truncated = format!("{}]}}", &lines[1][..last_comma]);
        let broken = format!("{}\n{}\n{}", lines[0], truncated, lines[2..].join("\n"));
        match parse_dataset(&broken) {
            Err(Error::DimensionMismatch { line: 2, expected, got }) => {
                assert_eq!(expected, FACE_DIM);
                assert_eq!(got, FACE_DIM - 1);
            }
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let ds = small_dataset();
        let text = render_dataset(&ds, None).unwrap();
        let mut lines: Vec<String> = text.lines().map(|s| s.to_string()).collect();
        lines[3] = "{not json".into();
        match parse_dataset(&lines.join("\n")) {
            Err(Error::MalformedRecord { line: 4, .. }) => {}
            other => panic!("expected MalformedRecord at line 4, got {other:?}"),
        }
    }

    #[test]
    fn count_and_order_preserved() {
        let ds = generate_synthetic(&SyntheticConfig {
            n_identities: 3,
            clips_per_identity: 3,
            face_noise_sigma: 0.1,
            voice_noise_sigma: 0.2,
            seed: 1,
        })
        .unwrap();
        let back = parse_dataset(&render_dataset(&ds, None).unwrap()).unwrap();
        assert_eq!(back.len(), 9);
        let ids: Vec<&str> = back.samples.iter().map(|s| s.clip_id.as_str()).collect();
        let orig: Vec<&str> = ds.samples.iter().map(|s| s.clip_id.as_str()).collect();
        assert_eq!(ids, orig);
    }

    #[test]
    fn manifest_header_round_trips() {
        let ds = small_dataset();
        let manifest = Manifest::new(b"cfg");
        let text = render_dataset(&ds, Some(&manifest)).unwrap();
        assert!(text.lines().next().unwrap().contains("config_sha256"));
        let back = parse_dataset(&text).unwrap();
        assert_eq!(ds, back);
    }
}
