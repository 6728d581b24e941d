//! Run reports: a fixed JSON schema plus an aligned text table mirroring the
//! benchmark presentation (roughness in mm, heads in m, residuals in both
//! m³/s and l/s).

use serde::{Deserialize, Serialize};

use crate::assembly::Problem;
use crate::campaign::{CampaignConfig, CampaignResult, Method};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub method: String,
    pub seed: u64,
    pub launches: usize,
    pub inner_runs: usize,
    pub rows: Vec<LaunchRow>,
    pub best_launch: usize,
    pub best_v_m3s: f64,
    pub best_v_lps: f64,
    pub best_roughness_mm: Vec<f64>,
    pub best_heads_m: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaunchRow {
    pub launch: usize,
    pub roughness_mm: Vec<f64>,
    /// Unmeasured heads per measurement set.
    pub heads_m: Vec<Vec<f64>>,
    pub v_m3s: f64,
    pub v_lps: f64,
    pub iter_of_best: usize,
    pub avg_iter_to_best: f64,
    pub failed_runs: usize,
}

pub fn build_report(
    problem: &Problem,
    cfg: &CampaignConfig,
    result: &CampaignResult,
) -> RunReport {
    let n_l = problem.topo.n_l;
    let n_free = problem.topo.n_j - problem.topo.n_p;
    let split = |x: &nalgebra::DVector<f64>| -> (Vec<f64>, Vec<Vec<f64>>) {
        let rough = (0..n_l).map(|j| x[j] * 1e3).collect();
        let heads = (0..problem.n_m())
            .map(|i| (0..n_free).map(|r| x[n_l + i * n_free + r]).collect())
            .collect();
        (rough, heads)
    };
    let rows = result
        .launches
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (roughness_mm, heads_m) = split(&l.best_x);
            LaunchRow {
                launch: i + 1,
                roughness_mm,
                heads_m,
                v_m3s: l.best_v,
                v_lps: l.best_v * 1e3,
                iter_of_best: l.best_run,
                avg_iter_to_best: l.avg_iterations_to_best,
                failed_runs: l.failed_runs,
            }
        })
        .collect();
    let (best_roughness_mm, best_heads_m) = split(&result.best_x);
    RunReport {
        schema: "pipecal-report-v1".into(),
        method: match cfg.method {
            Method::Newton => "newton".into(),
            Method::Tensor => "tensor".into(),
        },
        seed: cfg.seed,
        launches: cfg.launches,
        inner_runs: cfg.inner_runs,
        rows,
        best_launch: result.best_launch + 1,
        best_v_m3s: result.best_v,
        best_v_lps: result.best_v * 1e3,
        best_roughness_mm,
        best_heads_m,
    }
}

/// Aligned table with one column per launch, in the layout of the published
/// result tables.
pub fn text_table(report: &RunReport) -> String {
    let mut lines: Vec<(String, Vec<String>)> = Vec::new();
    let n_launch = report.rows.len();
    let n_l = report.rows.first().map_or(0, |r| r.roughness_mm.len());
    for j in 0..n_l {
        lines.push((
            format!("eps_{} [mm]", j + 1),
            report.rows.iter().map(|r| format!("{:.3}", r.roughness_mm[j])).collect(),
        ));
    }
    let n_m = report.rows.first().map_or(0, |r| r.heads_m.len());
    let n_free = report.rows.first().map_or(0, |r| r.heads_m.first().map_or(0, Vec::len));
    for i in 0..n_m {
        for r in 0..n_free {
            lines.push((
                format!("h_N[{}] set {} [m]", r + 1, i + 1),
                report.rows.iter().map(|row| format!("{:.3}", row.heads_m[i][r])).collect(),
            ));
        }
    }
    lines.push((
        "v(x+) [m3/s]".into(),
        report.rows.iter().map(|r| format!("{:.3e}", r.v_m3s)).collect(),
    ));
    lines.push((
        "v(x+) [l/s]".into(),
        report.rows.iter().map(|r| format!("{:.3e}", r.v_lps)).collect(),
    ));
    lines.push((
        "iter of x+".into(),
        report.rows.iter().map(|r| r.iter_of_best.to_string()).collect(),
    ));
    lines.push((
        "avg # iter to x+".into(),
        report.rows.iter().map(|r| format!("{:.2}", r.avg_iter_to_best)).collect(),
    ));

    let label_width = lines.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let col_width = lines
        .iter()
        .flat_map(|(_, cells)| cells.iter().map(String::len))
        .max()
        .unwrap_or(6)
        .max(9);
    let mut out = String::new();
    use std::fmt::Write;
    write!(out, "{:label_width$} |", "launch").unwrap();
    for i in 1..=n_launch {
        write!(out, " {i:>col_width$} |").unwrap();
    }
    out.push('\n');
    for (label, cells) in &lines {
        write!(out, "{label:label_width$} |").unwrap();
        for cell in cells {
            write!(out, " {cell:>col_width$} |").unwrap();
        }
        out.push('\n');
    }
    writeln!(
        out,
        "best: launch {} with v = {:.4e} m3/s ({:.4e} l/s)",
        report.best_launch, report.best_v_m3s, report.best_v_lps
    )
    .unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_serialises_with_units_in_keys() {
        let report = RunReport {
            schema: "pipecal-report-v1".into(),
            method: "tensor".into(),
            seed: 1,
            launches: 1,
            inner_runs: 1,
            rows: vec![LaunchRow {
                launch: 1,
                roughness_mm: vec![2.0, 1.75],
                heads_m: vec![vec![93.1]],
                v_m3s: 1.0e-7,
                v_lps: 1.0e-4,
                iter_of_best: 1,
                avg_iter_to_best: 3.0,
                failed_runs: 0,
            }],
            best_launch: 1,
            best_v_m3s: 1.0e-7,
            best_v_lps: 1.0e-4,
            best_roughness_mm: vec![2.0, 1.75],
            best_heads_m: vec![vec![93.1]],
        };
        let json = serde_json::to_string_pretty(&report).unwrap();
        assert!(json.contains("v_m3s"));
        assert!(json.contains("v_lps"));
        assert!(json.contains("roughness_mm"));
        let table = text_table(&report);
        assert!(table.contains("eps_1 [mm]"));
        assert!(table.contains("iter of x+"));
    }
}
