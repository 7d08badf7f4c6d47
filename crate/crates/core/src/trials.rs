//! Verification trial construction: per identity, target trials from distinct
//! clip pairs and nontarget trials against other identities.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::embed::Dataset;
use crate::error::{Error, Result};
use crate::manifest::{atomic_write, read_to_string, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn tag(self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        }
    }
}

/// One (enrollment, test) pair, as indices into a [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub enroll: usize,
    pub test: usize,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

/// Builds up to `pos_per_identity` target trials (distinct clip pairs, capped
/// at availability) and `neg_per_identity` nontarget trials per identity.
/// Deterministic given the seed.
pub fn build_trials(
    dataset: &Dataset,
    pos_per_identity: usize,
    neg_per_identity: usize,
    seed: u64,
) -> Result<TrialSet> {
    let by_identity = dataset.by_identity();
    if by_identity.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need >= 2 identities, got {}",
            by_identity.len()
        )));
    }
    for (id, clips) in &by_identity {
        if clips.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "identity {id} has {} clip(s), need >= 2",
                clips.len()
            )));
        }
    }
    let identities: Vec<&Vec<usize>> = by_identity.values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::new();
    for (id_pos, clips) in identities.iter().enumerate() {
        // Target trials: distinct unordered clip pairs, all of them when the
        // request exceeds availability.
        let n = clips.len();
        let all_pairs = n * (n - 1) / 2;
        let take = pos_per_identity.min(all_pairs);
        let chosen: Vec<usize> = if take == all_pairs {
            (0..all_pairs).collect()
        } else {
            let mut idx = rand::seq::index::sample(&mut rng, all_pairs, take).into_vec();
            idx.sort_unstable();
            idx
        };
        for flat in chosen {
            let (i, j) = unflatten_pair(flat, n);
            trials.push(Trial {
                enroll: clips[i],
                test: clips[j],
                label: TrialLabel::Target,
            });
        }
        // Nontarget trials: enrollment clip from this identity, test clip from
        // a uniformly chosen other identity.
        for _ in 0..neg_per_identity {
            let enroll = clips[rng.random_range(0..n)];
            let mut other = rng.random_range(0..identities.len() - 1);
            if other >= id_pos {
                other += 1;
            }
            let other_clips = identities[other];
            let test = other_clips[rng.random_range(0..other_clips.len())];
            trials.push(Trial {
                enroll,
                test,
                label: TrialLabel::Nontarget,
            });
        }
    }
    Ok(TrialSet { trials })
}

/// Maps a flat index in [0, n(n-1)/2) to the unordered pair (i, j), i < j,
/// enumerated row by row: (0,1), (0,2), ..., (1,2), ...
fn unflatten_pair(flat: usize, n: usize) -> (usize, usize) {
    let mut remaining = flat;
    for i in 0..n - 1 {
        let row = n - 1 - i;
        if remaining < row {
            return (i, i + 1 + remaining);
        }
        remaining -= row;
    }
    unreachable!("flat index out of range");
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialLine {
    enroll_clip: String,
    test_clip: String,
    label: String,
}

/// Trials file: line-delimited `{enroll_clip, test_clip, label}`.
pub fn render_trials(trials: &TrialSet, dataset: &Dataset, manifest: Option<&Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    for t in &trials.trials {
        out.push_str(&format!(
            "{{\"enroll_clip\":{},\"test_clip\":{},\"label\":\"{}\"}}\n",
            serde_json::to_string(&dataset.samples[t.enroll].clip_id).unwrap(),
            serde_json::to_string(&dataset.samples[t.test].clip_id).unwrap(),
            t.label.tag()
        ));
    }
    out
}

pub fn write_trials(
    trials: &TrialSet,
    dataset: &Dataset,
    path: &Path,
    manifest: Option<&Manifest>,
) -> Result<()> {
    atomic_write(path, &render_trials(trials, dataset, manifest))
}

pub fn parse_trials(contents: &str, dataset: &Dataset) -> Result<TrialSet> {
    let clip_index = dataset.clip_index();
    let mut trials = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let parsed: TrialLine = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        let lookup = |clip: &str| {
            clip_index.get(clip).copied().ok_or_else(|| Error::MalformedRecord {
                line: line_no,
                reason: format!("unknown clip id {clip:?}"),
            })
        };
        let label = match parsed.label.as_str() {
            "target" => TrialLabel::Target,
            "nontarget" => TrialLabel::Nontarget,
            other => {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    reason: format!("unknown label {other:?}"),
                })
            }
        };
        trials.push(Trial {
            enroll: lookup(&parsed.enroll_clip)?,
            test: lookup(&parsed.test_clip)?,
            label,
        });
    }
    Ok(TrialSet { trials })
}

pub fn read_trials(path: &Path, dataset: &Dataset) -> Result<TrialSet> {
    parse_trials(&read_to_string(path)?, dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SyntheticConfig};

    fn dataset(n_identities: usize, clips: usize) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n_identities,
            clips_per_identity: clips,
            face_noise_sigma: 0.1,
            voice_noise_sigma: 0.2,
            seed: 17,
        })
        .unwrap()
    }

    fn check_labels(ts: &TrialSet, ds: &Dataset) {
        for t in &ts.trials {
            let a = &ds.samples[t.enroll];
            let b = &ds.samples[t.test];
            match t.label {
                TrialLabel::Target => {
                    assert_eq!(a.identity_id, b.identity_id);
                    assert_ne!(a.clip_id, b.clip_id);
                }
                TrialLabel::Nontarget => assert_ne!(a.identity_id, b.identity_id),
            }
        }
    }

    #[test]
    fn minimal_dataset_four_trials() {
        let ds = dataset(2, 2);
        let ts = build_trials(&ds, 1, 1, 0).unwrap();
        assert_eq!(ts.trials.len(), 4);
        check_labels(&ts, &ds);
    }

    #[test]
    fn availability_caps_target_trials() {
        let ds = dataset(2, 2);
        let ts = build_trials(&ds, 5, 0, 0).unwrap();
        // One distinct pair per identity.
        assert_eq!(ts.trials.len(), 2);
        check_labels(&ts, &ds);
    }

    #[test]
    fn count_matches_combinatorial_recount() {
        // Enough clips: every identity furnishes the full request.
        let ds = dataset(12, 30);
        let (pos, neg) = (300, 300);
        let ts = build_trials(&ds, pos, neg, 3).unwrap();
        let expected: usize = ds
            .by_identity()
            .values()
            .map(|clips| {
                let pairs = clips.len() * (clips.len() - 1) / 2;
                pos.min(pairs) + neg
            })
            .sum();
        assert_eq!(ts.trials.len(), expected);
        assert_eq!(ts.trials.len(), 12 * (300 + 300));
        check_labels(&ts, &ds);
    }

    #[test]
    fn short_identity_reduces_count_by_recount() {
        // Drop clips of one identity down to 4: C(4,2) = 6 target trials.
        let mut ds = dataset(6, 10);
        let victim = ds.samples[0].identity_id.clone();
        let mut seen = 0;
        ds.samples.retain(|s| {
            if s.identity_id == victim {
                seen += 1;
                seen <= 4
            } else {
                true
            }
        });
        let ts = build_trials(&ds, 300, 10, 3).unwrap();
        let expected: usize = ds
            .by_identity()
            .values()
            .map(|clips| {
                let pairs = clips.len() * (clips.len() - 1) / 2;
                300.min(pairs) + 10
            })
            .sum();
        assert_eq!(ts.trials.len(), expected);
        // 5 identities with C(10,2)=45, one with C(4,2)=6.
        assert_eq!(ts.trials.len(), 5 * 45 + 6 + 6 * 10);
        check_labels(&ts, &ds);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = dataset(5, 6);
        assert_eq!(build_trials(&ds, 10, 10, 9).unwrap(), build_trials(&ds, 10, 10, 9).unwrap());
        assert_ne!(build_trials(&ds, 10, 10, 9).unwrap(), build_trials(&ds, 10, 10, 10).unwrap());
    }

    #[test]
    fn single_clip_identity_is_rejected() {
        let mut ds = dataset(3, 3);
        let victim = ds.samples[0].identity_id.clone();
        let mut seen = 0;
        ds.samples.retain(|s| {
            if s.identity_id == victim {
                seen += 1;
                seen <= 1
            } else {
                true
            }
        });
        assert!(matches!(build_trials(&ds, 1, 1, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn unflatten_enumerates_all_pairs() {
        let n = 7;
        let mut seen = std::collections::BTreeSet::new();
        for flat in 0..n * (n - 1) / 2 {
            let (i, j) = unflatten_pair(flat, n);
            assert!(i < j && j < n);
            assert!(seen.insert((i, j)));
        }
        assert_eq!(seen.len(), 21);
    }

    #[test]
    fn trials_file_round_trip() {
        let ds = dataset(3, 3);
        let ts = build_trials(&ds, 2, 2, 5).unwrap();
        let text = render_trials(&ts, &ds, None);
        let back = parse_trials(&text, &ds).unwrap();
        assert_eq!(ts, back);
    }
}
