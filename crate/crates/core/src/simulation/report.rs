//! Study report files: the full cell CSV, the two table CSVs and a text
//! rendering laid out like the published tables.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::study::{StudyCell, StudyReport};
use super::SimulationError;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CellRow {
    n_units: usize,
    n_periods: usize,
    tau: f64,
    bias: f64,
    rmse: f64,
    coverage_robust: f64,
    coverage_standard: f64,
    mean_ci_width_robust: f64,
    mean_ci_width_standard: f64,
    n_failed: usize,
}

#[derive(Serialize)]
struct Table1Row {
    n_units: usize,
    n_periods: usize,
    tau: f64,
    bias: f64,
    rmse: f64,
}

#[derive(Serialize)]
struct Table2Row {
    n_units: usize,
    n_periods: usize,
    tau: f64,
    coverage_robust: f64,
    coverage_standard: f64,
}

fn io_err(e: impl std::fmt::Display) -> SimulationError {
    SimulationError::Io(e.to_string())
}

fn write_rows<W: Write, T: Serialize>(sink: W, rows: impl Iterator<Item = T>) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// One row per cell, columns in [`StudyCell`] field order.
pub fn write_report_csv<W: Write>(report: &StudyReport, sink: W) -> Result<(), SimulationError> {
    write_rows(
        sink,
        report.cells.iter().map(|c| CellRow {
            n_units: c.n_units,
            n_periods: c.n_periods,
            tau: c.tau,
            bias: c.bias,
            rmse: c.rmse,
            coverage_robust: c.coverage_robust,
            coverage_standard: c.coverage_standard,
            mean_ci_width_robust: c.mean_ci_width_robust,
            mean_ci_width_standard: c.mean_ci_width_standard,
            n_failed: c.n_failed,
        }),
    )
}

pub fn read_report_csv<R: Read>(source: R) -> Result<StudyReport, SimulationError> {
    let mut r = csv::Reader::from_reader(source);
    let cells = r
        .deserialize::<CellRow>()
        .map(|row| {
            row.map(|c| StudyCell {
                n_units: c.n_units,
                n_periods: c.n_periods,
                tau: c.tau,
                bias: c.bias,
                rmse: c.rmse,
                coverage_robust: c.coverage_robust,
                coverage_standard: c.coverage_standard,
                mean_ci_width_robust: c.mean_ci_width_robust,
                mean_ci_width_standard: c.mean_ci_width_standard,
                n_failed: c.n_failed,
            })
            .map_err(io_err)
        })
        .collect::<Result<_, _>>()?;
    Ok(StudyReport { cells })
}

pub fn write_table1_csv<W: Write>(report: &StudyReport, sink: W) -> Result<(), SimulationError> {
    write_rows(
        sink,
        report.cells.iter().map(|c| Table1Row {
            n_units: c.n_units,
            n_periods: c.n_periods,
            tau: c.tau,
            bias: c.bias,
            rmse: c.rmse,
        }),
    )
}

pub fn write_table2_csv<W: Write>(report: &StudyReport, sink: W) -> Result<(), SimulationError> {
    write_rows(
        sink,
        report.cells.iter().map(|c| Table2Row {
            n_units: c.n_units,
            n_periods: c.n_periods,
            tau: c.tau,
            coverage_robust: c.coverage_robust,
            coverage_standard: c.coverage_standard,
        }),
    )
}

/// Rows are (N, T) pairs in report order, columns are the quantile levels.
pub fn render_tables(report: &StudyReport) -> String {
    let mut taus: Vec<f64> = Vec::new();
    let mut sizes: Vec<(usize, usize)> = Vec::new();
    for c in &report.cells {
        if !taus.contains(&c.tau) {
            taus.push(c.tau);
        }
        if !sizes.contains(&(c.n_units, c.n_periods)) {
            sizes.push((c.n_units, c.n_periods));
        }
    }
    let find = |size: (usize, usize), tau: f64| {
        report
            .cells
            .iter()
            .find(|c| (c.n_units, c.n_periods) == size && c.tau == tau)
    };
    let mut out = String::new();
    let section = |out: &mut String, title: &str, left: &str, right: &str, pick: &dyn Fn(&StudyCell) -> (f64, f64)| {
        let _ = writeln!(out, "{title}");
        let _ = write!(out, "{:<12}", "(N,T)");
        for t in &taus {
            let _ = write!(out, "  {:^17}", format!("tau = {t}"));
        }
        let _ = write!(out, "\n{:<12}", "");
        for _ in &taus {
            let _ = write!(out, "  {left:>8} {right:>8}");
        }
        out.push('\n');
        for &size in &sizes {
            let _ = write!(out, "{:<12}", format!("({},{})", size.0, size.1));
            for &t in &taus {
                match find(size, t) {
                    Some(c) => {
                        let (a, b) = pick(c);
                        let _ = write!(out, "  {a:>8.4} {b:>8.4}");
                    }
                    None => {
                        let _ = write!(out, "  {:>8} {:>8}", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
    };
    section(&mut out, "Bias and RMSE of the slope estimate", "bias", "RMSE", &|c| (c.bias, c.rmse));
    out.push('\n');
    section(&mut out, "Coverage of nominal intervals", "robust", "standard", &|c| {
        (c.coverage_robust, c.coverage_standard)
    });
    let failed: usize = report.cells.iter().map(|c| c.n_failed).sum();
    if failed > 0 {
        let _ = writeln!(out, "\n{failed} failed replication-cells excluded");
    }
    out
}

/// Writes `report.csv`, `table1.csv`, `table2.csv` and `tables.txt` into `dir`.
pub fn write_outputs(report: &StudyReport, dir: &Path) -> Result<(), SimulationError> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let create = |name: &str| std::fs::File::create(dir.join(name)).map_err(io_err);
    write_report_csv(report, create("report.csv")?)?;
    write_table1_csv(report, create("table1.csv")?)?;
    write_table2_csv(report, create("table2.csv")?)?;
    std::fs::write(dir.join("tables.txt"), render_tables(report)).map_err(io_err)
}
