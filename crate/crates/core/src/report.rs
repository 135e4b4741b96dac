//! CSV and JSON sweep reports.
//!
//! The CSV has a fixed header ([`CSV_COLUMNS`]) and prints every float with
//! 17 significant digits, so it parses back bit-exactly. The JSON report
//! carries the full per-row breakdowns, the config echo and the checks.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::EpsHatMode;
use crate::error::{Error, Result};
use crate::experiments::{BoundRow, CheckResult, ScalingFit, SweepConfig};
use crate::mesh::Region;

pub const CSV_COLUMNS: [&str; 23] = [
    "N",
    "eps",
    "mode",
    "k",
    "c_star",
    "xstar_region",
    "xstar_i",
    "xstar_j",
    "sigma_beta",
    "sigma_eta",
    "norm_msd",
    "norm_w",
    "r_thm",
    "r_s",
    "r_layer",
    "lemma1_ratio",
    "lemma4_ratio",
    "e_s",
    "e_not_s",
    "e_grad_s",
    "e_grad_not_s",
    "residual",
    "quad_depth",
];

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One parsed CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    pub mode: EpsHatMode,
    pub k: f64,
    pub c_star: f64,
    pub xstar_region: Region,
    pub xstar_i: usize,
    pub xstar_j: usize,
    pub sigma_beta: f64,
    pub sigma_eta: f64,
    pub norm_msd: f64,
    pub norm_w: f64,
    pub r_thm: f64,
    pub r_s: f64,
    pub r_layer: f64,
    pub lemma1_ratio: f64,
    pub lemma4_ratio: f64,
    pub e_s: f64,
    pub e_not_s: f64,
    pub e_grad_s: f64,
    pub e_grad_not_s: f64,
    pub residual: f64,
    pub quad_depth: usize,
}

impl From<&BoundRow> for CsvRow {
    fn from(r: &BoundRow) -> Self {
        Self {
            n: r.n,
            eps: r.eps,
            mode: r.mode,
            k: r.k,
            c_star: r.c_star,
            xstar_region: r.xstar_region,
            xstar_i: r.xstar_i,
            xstar_j: r.xstar_j,
            sigma_beta: r.sigma_beta,
            sigma_eta: r.sigma_eta,
            norm_msd: r.norm_msd,
            norm_w: r.norm_w,
            r_thm: r.r_thm,
            r_s: r.r_s,
            r_layer: r.r_layer,
            lemma1_ratio: r.lemma1_ratio,
            lemma4_ratio: r.lemma4_ratio,
            e_s: r.e_s,
            e_not_s: r.e_not_s,
            e_grad_s: r.e_grad_s,
            e_grad_not_s: r.e_grad_not_s,
            residual: r.residual,
            quad_depth: r.quad_depth,
        }
    }
}

impl CsvRow {
    fn record(&self) -> Vec<String> {
        let f = fmt_f64;
        vec![
            self.n.to_string(),
            f(self.eps),
            self.mode.name().to_string(),
            f(self.k),
            f(self.c_star),
            self.xstar_region.name().to_string(),
            self.xstar_i.to_string(),
            self.xstar_j.to_string(),
            f(self.sigma_beta),
            f(self.sigma_eta),
            f(self.norm_msd),
            f(self.norm_w),
            f(self.r_thm),
            f(self.r_s),
            f(self.r_layer),
            f(self.lemma1_ratio),
            f(self.lemma4_ratio),
            f(self.e_s),
            f(self.e_not_s),
            f(self.e_grad_s),
            f(self.e_grad_not_s),
            f(self.residual),
            self.quad_depth.to_string(),
        ]
    }

    /// Field-by-field equality treating `NaN == NaN`.
    pub fn same_bits(&self, other: &Self) -> bool {
        self.record() == other.record()
    }
}

/// CSV text for `rows`; an empty list is an error.
pub fn csv_string(rows: &[BoundRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows to report".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record(CsvRow::from(r).record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write the CSV report. Nothing is created when `rows` is empty.
pub fn write_csv(rows: &[BoundRow], path: &Path) -> Result<()> {
    let text = csv_string(rows)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Config(format!("unexpected CSV header: {}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// Slope of `|||G|||_ω` against `N` for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub placement: String,
    pub eps: f64,
    pub mode: EpsHatMode,
    pub fit: ScalingFit,
}

/// Everything `sweep` and `verify` write as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: SweepConfig,
    pub deterministic: bool,
    pub rows_total: usize,
    pub rows_failed: usize,
    pub max_quad_depth: usize,
    pub max_green_residual: f64,
    pub max_forward_residual: f64,
    pub fits: Vec<FitRecord>,
    pub checks: Vec<CheckResult>,
    pub rows: Vec<BoundRow>,
}

impl SweepReport {
    pub fn new(config: &SweepConfig, rows: Vec<BoundRow>, checks: Vec<CheckResult>) -> Self {
        let ok = || rows.iter().filter(|r| r.is_ok());
        let mut fits = Vec::new();
        for &p in &config.placements {
            for &eps in &config.epsilons {
                for &mode in &config.modes {
                    if let Ok(fit) = crate::experiments::fit_scaling(&rows, p, eps, mode) {
                        fits.push(FitRecord {
                            placement: p.to_string(),
                            eps,
                            mode,
                            fit,
                        });
                    }
                }
            }
        }
        Self {
            tool: "sdgreen",
            version: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            deterministic: config.quad.deterministic,
            rows_total: rows.len(),
            rows_failed: rows.iter().filter(|r| !r.is_ok()).count(),
            max_quad_depth: ok().map(|r| r.quad_depth).max().unwrap_or(0),
            max_green_residual: ok().map(|r| r.residual).fold(0.0, f64::max),
            max_forward_residual: ok().map(|r| r.forward_residual).fold(0.0, f64::max),
            fits,
            checks,
            rows,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Write the JSON report. Nothing is created when the report has no rows.
pub fn write_json(report: &SweepReport, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::InsufficientData("no rows to report".into()));
    }
    let text = serde_json::to_string_pretty(report)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
