//! CSV tables.
//!
//! Every file starts with `#` lines echoing the run settings, followed by
//! one fixed column header row. Numbers are written with `{:.16e}`, rates
//! with two decimals and left blank where no finer pair exists.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::manufactured::{compute_rates, ErrorRecord};
use crate::schemes::StepDiagnostics;

use super::{ManufacturedRun, RunOutcome, StabilityReport};

pub fn sci(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

pub fn rate_cell(r: Option<f64>) -> String {
    r.map(|r| format!("{r:.2}")).unwrap_or_default()
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

fn preamble(header: &[String], failures: &[(usize, &str)]) -> String {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    for (n, err) in failures {
        let _ = writeln!(out, "# failed n={n}: {}", err.replace('\n', " "));
    }
    out
}

type Column<'a> = (&'a str, &'a dyn Fn(&ErrorRecord) -> f64);

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub header: Vec<String>,
    pub runs: Vec<RunOutcome<ManufacturedRun>>,
}

impl ConvergenceReport {
    /// Successful rows in configured order.
    pub fn records(&self) -> Vec<&ErrorRecord> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok().map(|m| &m.record)).collect()
    }

    pub fn failures(&self) -> Vec<(usize, &str)> {
        self.runs.iter().filter_map(|r| r.result.as_ref().err().map(|e| (r.subdivisions, e.as_str()))).collect()
    }

    /// Rate of each successful row against the previous one; blank when the
    /// two do not halve `h`.
    pub fn rates(&self, pick: impl Fn(&ErrorRecord) -> f64) -> Vec<Option<f64>> {
        let rows = self.records();
        let mut out = vec![None; rows.len()];
        for k in 1..rows.len() {
            let h = [rows[k - 1].h, rows[k].h];
            let e = [pick(rows[k - 1]), pick(rows[k])];
            out[k] = compute_rates(&h, &e).ok().and_then(|r| r[1]);
        }
        out
    }

    fn table(&self, columns: &[Column]) -> String {
        let mut out = preamble(&self.header, &self.failures());
        let mut head = vec!["h".to_string(), "tau".to_string()];
        for (name, _) in columns {
            head.push(name.to_string());
            head.push(format!("{name}_rate"));
        }
        let _ = writeln!(out, "{}", head.join(","));
        let rates: Vec<Vec<Option<f64>>> = columns.iter().map(|(_, f)| self.rates(f)).collect();
        for (k, r) in self.records().into_iter().enumerate() {
            let mut cells = vec![sci(r.h), sci(r.tau)];
            for (c, (_, f)) in columns.iter().enumerate() {
                cells.push(sci(f(r)));
                cells.push(rate_cell(rates[c][k]));
            }
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn l2_csv(&self) -> String {
        self.table(&[
            ("u_l2", &|r| r.errors.velocity_l2),
            ("c_l2", &|r| r.errors.concentration_l2),
            ("p_l2", &|r| r.errors.pressure_l2),
        ])
    }

    pub fn h1_csv(&self) -> String {
        self.table(&[("u_h1", &|r| r.errors.velocity_h1), ("c_h1", &|r| r.errors.concentration_h1)])
    }

    /// Errors divided by the quadrature norms of the exact fields.
    pub fn relative_csv(&self) -> String {
        self.table(&[
            ("u_rel_l2", &|r| r.relative.velocity_l2),
            ("c_rel_l2", &|r| r.relative.concentration_l2),
            ("p_rel_l2", &|r| r.relative.pressure_l2),
        ])
    }

    /// `sqrt(tau sum_n |e^n|^2)` over all time levels.
    pub fn time_l2_csv(&self) -> String {
        self.table(&[
            ("u_l2l2", &|r| r.l2_in_time[0]),
            ("c_l2l2", &|r| r.l2_in_time[1]),
            ("p_l2l2", &|r| r.l2_in_time[2]),
        ])
    }

    pub fn solver_csv(&self) -> String {
        let mut out = preamble(&self.header, &self.failures());
        out.push_str("h,steps,max_flow_residual,max_concentration_residual\n");
        for run in &self.runs {
            if let Ok(m) = &run.result {
                let s = m.stats;
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    sci(m.record.h),
                    s.steps,
                    sci(s.max_flow_residual),
                    sci(s.max_concentration_residual)
                );
            }
        }
        out
    }

    /// Wall-clock seconds per run. Kept out of the CSV files so that those
    /// are reproducible byte for byte.
    pub fn timings_text(&self) -> String {
        let mut out = String::from("subdivisions wall_seconds status\n");
        for r in &self.runs {
            let status = if r.result.is_ok() { "ok" } else { "failed" };
            let _ = writeln!(out, "{} {:.3} {status}", r.subdivisions, r.wall_seconds);
        }
        out
    }

    /// Writes all tables into `dir` and returns the paths.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = [
            ("l2_errors.csv", self.l2_csv()),
            ("h1_errors.csv", self.h1_csv()),
            ("relative_errors.csv", self.relative_csv()),
            ("l2_time_errors.csv", self.time_l2_csv()),
            ("solver.csv", self.solver_csv()),
            ("timings.txt", self.timings_text()),
        ];
        let mut written = Vec::new();
        for (name, text) in files {
            let path = dir.join(name);
            write_atomic(&path, &text)?;
            written.push(path);
        }
        Ok(written)
    }
}

impl StabilityReport {
    pub fn csv(&self) -> String {
        let mut out = preamble(&self.header, &self.failures());
        out.push_str("h,tau,u_l2,u_h1,c_l2,c_h1,p_l2,max_energy\n");
        for r in self.rows() {
            let n = r.last;
            let cells = [
                r.h,
                r.tau,
                n.velocity_l2,
                n.velocity_h1,
                n.concentration_l2,
                n.concentration_h1,
                n.pressure_l2,
                r.max_energy,
            ];
            let _ = writeln!(out, "{}", cells.map(sci).join(","));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("stability.csv");
        write_atomic(&path, &self.csv())?;
        Ok(path)
    }
}

/// Per-step norms, residuals and invariants of a single run.
pub fn diagnostics_csv(header: &[String], diagnostics: &[StepDiagnostics]) -> String {
    let mut out = preamble(header, &[]);
    out.push_str(
        "step,time,u_l2,u_h1,c_l2,c_h1,p_l2,flow_residual,concentration_residual,\
         velocity_telescope,concentration_telescope,velocity_convection,concentration_convection,\
         pressure_mean,concentration_mean\n",
    );
    let opt = |v: Option<f64>| v.map(sci).unwrap_or_default();
    for d in diagnostics {
        let n = d.norms;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            d.step,
            sci(d.time),
            sci(n.velocity_l2),
            sci(n.velocity_h1),
            sci(n.concentration_l2),
            sci(n.concentration_h1),
            sci(n.pressure_l2),
            sci(d.flow_residual),
            sci(d.concentration_residual),
            opt(d.velocity_telescope),
            opt(d.concentration_telescope),
            sci(d.velocity_convection),
            sci(d.concentration_convection),
            sci(d.pressure_mean),
            sci(d.concentration_mean),
        );
    }
    out
}
