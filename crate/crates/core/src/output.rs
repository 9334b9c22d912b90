//! CSV time series and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::adaptivity::MeshAdaptReport;
use crate::checkpoint::Reference;
use crate::config::SimConfig;
use crate::diagnostics::DiagnosticsRecord;
use crate::error::Result;

/// Column names of `run.csv` for a `dim`-dimensional run.
pub fn csv_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "mass", "mass_rel_err"].map(String::from).to_vec();
    h.extend((1..=dim).map(|s| format!("momentum_{s}")));
    h.extend(
        [
            "momentum_abs_err",
            "electric_energy",
            "kinetic_energy",
            "total_energy",
            "total_energy_rel_err",
            "rank",
            "n_elements_x",
            "n_elements_v",
            "continuity_res_rho",
        ]
        .map(String::from),
    );
    h.extend((1..=dim).map(|s| format!("continuity_res_j_{s}")));
    h.extend(["cfl_flag", "wall_time_s"].map(String::from));
    h
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn rel(x: f64, x0: f64) -> f64 {
    if x0 != 0.0 {
        ((x - x0) / x0).abs()
    } else {
        (x - x0).abs()
    }
}

impl Reference {
    pub fn of(rec: &DiagnosticsRecord) -> Self {
        Self { mass: rec.mass, momentum: rec.momentum.clone(), total_energy: rec.total_energy }
    }
}

/// One CSV row; errors are measured against `reference`.
pub fn csv_row(rec: &DiagnosticsRecord, reference: &Reference) -> Vec<String> {
    let mom_err = rec
        .momentum
        .iter()
        .zip(&reference.momentum)
        .map(|(p, p0)| (p - p0).abs())
        .fold(0.0, f64::max);
    let mut row = vec![fmt_float(rec.t), fmt_float(rec.mass), fmt_float(rel(rec.mass, reference.mass))];
    row.extend(rec.momentum.iter().map(|p| fmt_float(*p)));
    row.extend([
        fmt_float(mom_err),
        fmt_float(rec.electric_energy),
        fmt_float(rec.kinetic_energy),
        fmt_float(rec.total_energy),
        fmt_float(rel(rec.total_energy, reference.total_energy)),
        rec.rank.to_string(),
        rec.n_elements_x.to_string(),
        rec.n_elements_v.to_string(),
        fmt_float(rec.continuity_residual_rho),
    ]);
    row.extend(rec.continuity_residual_j.iter().map(|r| fmt_float(*r)));
    row.extend([u8::from(rec.cfl_flag).to_string(), fmt_float(rec.wall_time)]);
    row
}

pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    /// Appends to an existing file without writing a header.
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn write_row(&mut self, row: &[String]) -> Result<()> {
        writeln!(self.out, "{}", row.join(","))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn adapt_header() -> Vec<String> {
    [
        "step",
        "t",
        "space",
        "n_before",
        "n_after",
        "refined",
        "coarsened",
        "passes",
        "max_level_hit",
        "coarsening_defect",
    ]
    .map(String::from)
    .to_vec()
}

pub fn adapt_row(step: usize, t: f64, space: &str, r: &MeshAdaptReport) -> Vec<String> {
    vec![
        step.to_string(),
        fmt_float(t),
        space.to_string(),
        r.n_before.to_string(),
        r.n_after.to_string(),
        r.refined.to_string(),
        r.coarsened.to_string(),
        r.passes.to_string(),
        u8::from(r.max_level_hit).to_string(),
        fmt_float(r.coarsening_defect),
    ]
}

#[derive(Debug, Serialize)]
pub struct RunInfo {
    pub program: String,
    pub version: String,
    pub threads: usize,
    pub status: String,
    pub steps: u64,
    pub t_final_reached: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resumed_from: Option<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    run: &'a RunInfo,
    config: &'a SimConfig,
}

pub fn write_manifest(path: &Path, info: &RunInfo, config: &SimConfig) -> Result<()> {
    let text = toml::to_string(&Manifest { run: info, config })
        .map_err(|e| crate::Error::Config(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}
