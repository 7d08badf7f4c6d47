//! Machine-readable (CSV) and aligned-text renderings of evaluation results.

use crate::harness::{Cell, SystemId};
use crate::manifest::{fmt_f64, Manifest};

/// EER as a percentage with two decimals, the layout the tables use.
fn eer_pct(eer: f64) -> String {
    format!("{:.2}", eer * 100.0)
}

/// minDCF with three decimals, saturated entries displayed as 0.999.
fn dcf_display(dcf: f64) -> String {
    format!("{:.3}", dcf.min(0.999))
}

/// Long-form CSV: one row per (system, condition) cell, full precision.
pub fn render_cells_csv(cells: &[Cell], manifest: Option<&Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    out.push_str(
        "system,condition,eer,eer_threshold,min_dcf,dcf_threshold,n_target,n_nontarget,zero_vector_flags\n",
    );
    for cell in cells {
        let r = &cell.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            cell.system.label(),
            cell.condition,
            fmt_f64(r.eer),
            fmt_f64(r.eer_threshold),
            fmt_f64(r.min_dcf),
            fmt_f64(r.dcf_threshold),
            r.n_target,
            r.n_nontarget,
            r.zero_vector_flags
        ));
    }
    out
}

fn cell_for<'a>(cells: &'a [Cell], system: SystemId, condition: &str) -> Option<&'a Cell> {
    cells
        .iter()
        .find(|c| c.system == system && c.condition == condition)
}

/// Single-condition table in the verification-performance layout:
/// systems as rows, EER (%) and minDCF as columns.
pub fn render_eval_table(cells: &[Cell], systems: &[SystemId], manifest: Option<&Manifest>) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    out.push_str(&format!("{:<14} {:>8} {:>8}\n", "System", "EER(%)", "minDCF"));
    for &system in systems {
        if let Some(cell) = cell_for(cells, system, "clean") {
            out.push_str(&format!(
                "{:<14} {:>8} {:>8}\n",
                system.label(),
                eer_pct(cell.report.eer),
                dcf_display(cell.report.min_dcf)
            ));
        }
    }
    out
}

/// Corruption grid in the robustness layout: systems as rows, one
/// (EER, minDCF) column pair per condition.
pub fn render_robustness_table(
    cells: &[Cell],
    systems: &[SystemId],
    conditions: &[String],
    manifest: Option<&Manifest>,
) -> String {
    let mut out = String::new();
    if let Some(m) = manifest {
        out.push_str(&m.comment_line());
        out.push('\n');
    }
    out.push_str(&format!("{:<14}", "System"));
    for condition in conditions {
        out.push_str(&format!(" {:>21}", condition));
    }
    out.push('\n');
    out.push_str(&format!("{:<14}", ""));
    for _ in conditions {
        out.push_str(&format!(" {:>12} {:>8}", "EER(%)", "minDCF"));
    }
    out.push('\n');
    for &system in systems {
        out.push_str(&format!("{:<14}", system.label()));
        for condition in conditions {
            match cell_for(cells, system, condition) {
                Some(cell) => out.push_str(&format!(
                    " {:>12} {:>8}",
                    eer_pct(cell.report.eer),
                    dcf_display(cell.report.min_dcf)
                )),
                None => out.push_str(&format!(" {:>12} {:>8}", "-", "-")),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsReport;

    fn cell(system: SystemId, condition: &str, eer: f64, dcf: f64) -> Cell {
        Cell {
            system,
            condition: condition.into(),
            report: MetricsReport {
                eer,
                eer_threshold: 0.5,
                min_dcf: dcf,
                dcf_threshold: 0.6,
                n_target: 10,
                n_nontarget: 10,
                zero_vector_flags: 0,
            },
        }
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let cells = vec![
            cell(SystemId::FaceOnly, "clean", 0.0803, 0.631),
            cell(SystemId::SystemC, "clean", 0.0746, 0.611),
        ];
        let csv = render_cells_csv(&cells, None);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("face_only,clean,"));
    }

    #[test]
    fn saturated_dcf_displays_as_999() {
        let cells = vec![cell(SystemId::VoiceOnly, "clean", 0.4127, 1.0)];
        let table = render_eval_table(&cells, &[SystemId::VoiceOnly], None);
        assert!(table.contains("0.999"));
        assert!(table.contains("41.27"));
    }

    #[test]
    fn robustness_table_has_requested_conditions() {
        let cells = vec![
            cell(SystemId::SystemC, "voice_random", 0.0777, 0.626),
            cell(SystemId::SystemC, "voice_zeros", 0.0750, 0.633),
        ];
        let conditions = vec!["voice_random".to_string(), "voice_zeros".to_string()];
        let table = render_robustness_table(&cells, &[SystemId::SystemC], &conditions, None);
        assert!(table.contains("voice_random"));
        assert!(table.contains("7.77"));
        assert!(table.contains("7.50"));
    }
}
