//! Evaluation harness: scores any system (unimodal, score fusion, or a fused
//! network) over a trial set, across clean and corrupted/missing-modality
//! conditions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::CalibrationModel;
use crate::corrupt::{corrupt, CorruptionMode, CorruptionSpec};
use crate::embed::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, SystemKind};
use crate::metrics::{compute_metrics, score_trials, MetricsReport, ScoreSet, Scorer};
use crate::trials::TrialSet;

/// Everything that can produce a column of Table 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    VoiceOnly,
    FaceOnly,
    ScoreFusion,
    SystemA,
    SystemB,
    SystemC,
}

impl SystemId {
    pub fn label(self) -> &'static str {
        match self {
            SystemId::VoiceOnly => "voice_only",
            SystemId::FaceOnly => "face_only",
            SystemId::ScoreFusion => "score_fusion",
            SystemId::SystemA => "system_a",
            SystemId::SystemB => "system_b",
            SystemId::SystemC => "system_c",
        }
    }

    pub fn all() -> [SystemId; 6] {
        [
            SystemId::VoiceOnly,
            SystemId::FaceOnly,
            SystemId::ScoreFusion,
            SystemId::SystemA,
            SystemId::SystemB,
            SystemId::SystemC,
        ]
    }
}

/// Trained checkpoints and the calibration model, as far as a run needs them.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    pub system_a: Option<FusionModel>,
    pub system_b: Option<FusionModel>,
    pub system_c: Option<FusionModel>,
    pub calibration: Option<CalibrationModel>,
}

impl ModelRegistry {
    pub fn model(&self, kind: SystemKind) -> Result<&FusionModel> {
        let slot = match kind {
            SystemKind::A => &self.system_a,
            SystemKind::B => &self.system_b,
            SystemKind::C => &self.system_c,
        };
        slot.as_ref()
            .ok_or_else(|| Error::MissingCheckpoint(kind.tag().to_string()))
    }

    pub fn calibration(&self) -> Result<&CalibrationModel> {
        self.calibration
            .as_ref()
            .ok_or_else(|| Error::MissingCheckpoint("score fusion calibration".to_string()))
    }

    pub fn set(&mut self, model: FusionModel) {
        match model.kind() {
            SystemKind::A => self.system_a = Some(model),
            SystemKind::B => self.system_b = Some(model),
            SystemKind::C => self.system_c = Some(model),
        }
    }
}

/// One evaluation condition: clean, or one corruption applied to the test
/// data before scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub corruption: Option<CorruptionSpec>,
}

impl Condition {
    pub fn clean() -> Self {
        Condition {
            name: "clean".into(),
            corruption: None,
        }
    }
}

/// The paper's 2x2 grid: {voice, face} x {random, zeros}, full replacement.
/// Condition seeds are derived from `base_seed` in grid order.
pub fn standard_conditions(base_seed: u64) -> Vec<Condition> {
    let mut conditions = vec![Condition::clean()];
    let grid = [
        ("voice_random", Modality::Voice, CorruptionMode::RandomStandardNormal),
        ("voice_zeros", Modality::Voice, CorruptionMode::Zeros),
        ("face_random", Modality::Face, CorruptionMode::RandomStandardNormal),
        ("face_zeros", Modality::Face, CorruptionMode::Zeros),
    ];
    for (i, (name, modality, mode)) in grid.into_iter().enumerate() {
        conditions.push(Condition {
            name: name.into(),
            corruption: Some(CorruptionSpec {
                target_modality: modality,
                mode,
                fraction: 1.0,
                seed: base_seed.wrapping_add(i as u64),
            }),
        });
    }
    conditions
}

/// Scores one system over the given (possibly corrupted) dataset.
pub fn score_system(
    dataset: &Dataset,
    trials: &TrialSet,
    system: SystemId,
    registry: &ModelRegistry,
) -> Result<ScoreSet> {
    match system {
        SystemId::FaceOnly => score_trials(dataset, trials, &Scorer::FaceOnly),
        SystemId::VoiceOnly => score_trials(dataset, trials, &Scorer::VoiceOnly),
        SystemId::SystemA => score_trials(dataset, trials, &Scorer::Fused(registry.model(SystemKind::A)?)),
        SystemId::SystemB => score_trials(dataset, trials, &Scorer::Fused(registry.model(SystemKind::B)?)),
        SystemId::SystemC => score_trials(dataset, trials, &Scorer::Fused(registry.model(SystemKind::C)?)),
        SystemId::ScoreFusion => {
            let calibration = registry.calibration()?;
            let face = score_trials(dataset, trials, &Scorer::FaceOnly)?;
            let voice = score_trials(dataset, trials, &Scorer::VoiceOnly)?;
            let scores: Vec<f64> = face
                .scores
                .iter()
                .zip(&voice.scores)
                .map(|(&sf, &sv)| calibration.fused_score(sf, sv))
                .collect();
            Ok(ScoreSet {
                scores,
                labels: face.labels,
                zero_vector_flags: face.zero_vector_flags + voice.zero_vector_flags,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub system: SystemId,
    pub condition: String,
    pub report: MetricsReport,
}

/// Evaluates every (condition, system) cell. Conditions corrupt the test
/// dataset independently and may run in parallel; the output order is
/// condition-major and config-determined.
pub fn run_condition_matrix(
    dataset: &Dataset,
    trials: &TrialSet,
    systems: &[SystemId],
    registry: &ModelRegistry,
    conditions: &[Condition],
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
) -> Result<Vec<Cell>> {
    let nested: Vec<Vec<Cell>> = conditions
        .par_iter()
        .map(|condition| -> Result<Vec<Cell>> {
            let corrupted;
            let eval_ds = match &condition.corruption {
                Some(spec) => {
                    corrupted = corrupt(dataset, spec)?;
                    &corrupted
                }
                None => dataset,
            };
            let mut cells = Vec::with_capacity(systems.len());
            for &system in systems {
                let scoreset = score_system(eval_ds, trials, system, registry)?;
                let report = compute_metrics(&scoreset, p_target, c_miss, c_fa)?;
                cells.push(Cell {
                    system,
                    condition: condition.name.clone(),
                    report,
                });
            }
            Ok(cells)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(nested.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::init_model;
    use crate::synth::{generate_synthetic, SyntheticConfig};
    use crate::trials::build_trials;

    fn setup() -> (Dataset, TrialSet, ModelRegistry) {
        let ds = generate_synthetic(&SyntheticConfig {
            n_identities: 8,
            clips_per_identity: 4,
            face_noise_sigma: 0.1,
            voice_noise_sigma: 0.5,
            seed: 2,
        })
        .unwrap();
        let trials = build_trials(&ds, 6, 6, 3).unwrap();
        let mut registry = ModelRegistry::default();
        registry.set(init_model(SystemKind::A, 1));
        registry.set(init_model(SystemKind::B, 2));
        registry.set(init_model(SystemKind::C, 3));
        registry.calibration = Some(CalibrationModel {
            weight_face: 1.0,
            weight_voice: 0.5,
            offset: 0.0,
        });
        (ds, trials, registry)
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let (ds, trials, _) = setup();
        let empty = ModelRegistry::default();
        assert!(matches!(
            score_system(&ds, &trials, SystemId::SystemC, &empty),
            Err(Error::MissingCheckpoint(_))
        ));
        assert!(matches!(
            score_system(&ds, &trials, SystemId::ScoreFusion, &empty),
            Err(Error::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn matrix_has_condition_major_cells() {
        let (ds, trials, registry) = setup();
        let systems = [SystemId::FaceOnly, SystemId::SystemC];
        let conditions = standard_conditions(100);
        let cells =
            run_condition_matrix(&ds, &trials, &systems, &registry, &conditions, 0.01, 1.0, 1.0)
                .unwrap();
        assert_eq!(cells.len(), systems.len() * conditions.len());
        assert_eq!(cells[0].condition, "clean");
        assert_eq!(cells[0].system, SystemId::FaceOnly);
        assert_eq!(cells[1].system, SystemId::SystemC);
        assert_eq!(cells[2].condition, "voice_random");
        // Four corruption conditions next to the clean column.
        assert_eq!(conditions.len(), 5);
    }

    #[test]
    fn face_only_ignores_voice_corruption() {
        let (ds, trials, registry) = setup();
        let corrupted = corrupt(
            &ds,
            &CorruptionSpec {
                target_modality: Modality::Voice,
                mode: CorruptionMode::RandomStandardNormal,
                fraction: 1.0,
                seed: 17,
            },
        )
        .unwrap();
        let clean = score_system(&ds, &trials, SystemId::FaceOnly, &registry).unwrap();
        let noisy = score_system(&corrupted, &trials, SystemId::FaceOnly, &registry).unwrap();
        assert_eq!(clean, noisy);
    }

    #[test]
    fn zeroed_modality_scores_are_flagged() {
        let (ds, trials, registry) = setup();
        let corrupted = corrupt(
            &ds,
            &CorruptionSpec {
                target_modality: Modality::Voice,
                mode: CorruptionMode::Zeros,
                fraction: 1.0,
                seed: 17,
            },
        )
        .unwrap();
        let ss = score_system(&corrupted, &trials, SystemId::VoiceOnly, &registry).unwrap();
        assert_eq!(ss.zero_vector_flags, ss.scores.len());
        assert!(ss.scores.iter().all(|&s| s == -1.0));
        // Metrics stay defined.
        let report = compute_metrics(&ss, 0.01, 1.0, 1.0).unwrap();
        assert!(report.eer.is_finite());
    }

    #[test]
    fn matrix_is_deterministic() {
        let (ds, trials, registry) = setup();
        let systems = SystemId::all();
        let conditions = standard_conditions(7);
        let run = || {
            run_condition_matrix(&ds, &trials, &systems, &registry, &conditions, 0.01, 1.0, 1.0)
                .unwrap()
        };
        assert_eq!(run(), run());
    }
}
