//! CSV and text outputs of a run. Floats carry 17 significant digits so
//! files are exact and identical across reruns.

use std::path::Path;

use stresseq_core::adaptivity::RunHistory;
use stresseq_core::estimator::EstimatorReport;
use stresseq_core::mesh::Mesh;

use crate::meshio::format_f64;

fn opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

pub const HISTORY_HEADER: [&str; 9] = ["step", "N", "eta_A", "eta_B", "eta_C", "eta_total", "bound", "error", "effectivity"];

/// One row per step. `eta_*` are square roots of the summed squares and
/// `bound` is the square root of the guaranteed bound, so it compares
/// directly with `error`.
pub fn emit_history(history: &RunHistory, path: &Path) -> std::io::Result<()> {
    write_rows(
        path,
        &HISTORY_HEADER,
        history.steps.iter().map(|s| {
            vec![
                s.step.to_string(),
                s.n_dofs.to_string(),
                format_f64(s.eta_a2.sqrt()),
                format_f64(s.eta_b2.sqrt()),
                format_f64(s.eta_c2.sqrt()),
                format_f64(s.eta_total()),
                format_f64(s.bound.sqrt()),
                opt(s.error),
                opt(s.effectivity()),
            ]
        }),
    )
}

/// Estimator, bound variants, efficiency and equilibration residuals per
/// step.
pub fn emit_diagnostics(history: &RunHistory, path: &Path) -> std::io::Result<()> {
    let header = [
        "step",
        "elements",
        "vertices",
        "min_angle",
        "h_max",
        "eta_R",
        "bound_conservative",
        "bound_lambda_free",
        "eta_A_effectivity",
        "efficiency_ratio",
        "marked",
        "residual_divergence",
        "residual_jump",
        "residual_neumann",
        "residual_symmetry",
        "residual_scale",
    ];
    write_rows(
        path,
        &header,
        history.steps.iter().map(|s| {
            let eq = s.equilibration;
            vec![
                s.step.to_string(),
                s.n_elements.to_string(),
                s.n_vertices.to_string(),
                format_f64(s.min_angle),
                format_f64(s.h_max),
                format_f64(s.eta_r2.sqrt()),
                format_f64(s.conservative_bound.sqrt()),
                format_f64(s.lambda_free_bound.sqrt()),
                opt(s.eta_a_effectivity()),
                format_f64(s.efficiency_ratio),
                s.n_marked.to_string(),
                opt(eq.map(|e| e.0.divergence)),
                opt(eq.map(|e| e.0.jump)),
                opt(eq.map(|e| e.0.neumann)),
                opt(eq.map(|e| e.0.symmetry)),
                opt(eq.map(|e| e.1)),
            ]
        }),
    )
}

/// Elementwise estimator of one level.
pub fn emit_report(report: &EstimatorReport, mesh: &Mesh, path: &Path) -> std::io::Result<()> {
    let header = ["element", "centroid_x", "centroid_y", "eta_A", "eta_B", "eta_C", "eta_total", "eta_R"];
    write_rows(
        path,
        &header,
        (0..mesh.n_elements()).map(|t| {
            let c = mesh.centroid(t);
            vec![
                t.to_string(),
                format_f64(c[0]),
                format_f64(c[1]),
                format_f64(report.eta.a[t]),
                format_f64(report.eta.b[t]),
                format_f64(report.eta.c[t]),
                format_f64(report.eta_total(t)),
                format_f64(report.eta_r[t]),
            ]
        }),
    )
}
