//! CSV series files and JSON result records.
//!
//! The CSV holds the time series with columns
//! `t,R_real,R_imag,stderr_real,stderr_imag`; the JSON record next to it holds
//! the resolved configuration, series metadata and diagnostics. Floats are
//! written in shortest round-trip form, so reading both files back reproduces
//! the series exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::estimators::{EstimatorDiagnostics, Method, ResponseSeries, SeriesMetadata};
use crate::quantum::{GridConvergence, GridSpec};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 5] = ["t", "R_real", "R_imag", "stderr_real", "stderr_imag"];

/// Diagnostics of a quantum reference calculation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumDiagnostics {
    pub n_states: usize,
    pub basis_size: usize,
    pub top_population: f64,
    pub ground_energy: f64,
    /// Eigenvalue changes under grid doubling, when checked.
    pub grid_doubling: Option<GridConvergence>,
    /// Largest change of the response curve under grid doubling, when checked.
    pub grid_doubling_response_change: Option<f64>,
    pub grid: GridSpec,
}

/// Run timing; the only fields that differ between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub finished_unix_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub trajectories: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum: Option<QuantumDiagnostics>,
    pub timing: Timing,
}

/// Self-describing record written next to every series CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub config: RunConfig,
    pub method: Method,
    pub beta: f64,
    pub n_points: usize,
    pub metadata: SeriesMetadata,
    pub diagnostics: RunDiagnostics,
}

impl ResultRecord {
    pub fn from_json(text: &str) -> Result<Self> {
        let r: ResultRecord = serde_json::from_str(text)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema version {}",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The JSON path belonging to a CSV path.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_series_csv(out: impl Write, series: &ResponseSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for k in 0..series.len() {
        let (v, e) = (series.values[k], series.stderr[k]);
        w.write_record([
            series.times[k].to_string(),
            v.re.to_string(),
            v.im.to_string(),
            e.re.to_string(),
            e.im.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `(t, R, stderr)` of a series CSV.
pub type SeriesRows = (Vec<f64>, Vec<Complex64>, Vec<Complex64>);

pub fn read_series_csv(input: impl Read) -> Result<SeriesRows> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected CSV header {:?}", header)));
    }
    let (mut times, mut values, mut stderr) = (Vec::new(), Vec::new(), Vec::new());
    for row in r.records() {
        let row = row?;
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Format(format!("row with {} fields", row.len())));
        }
        let mut f = [0.0; 5];
        for (k, field) in row.iter().enumerate() {
            f[k] = field
                .parse()
                .map_err(|_| Error::Format(format!("invalid number `{field}`")))?;
        }
        times.push(f[0]);
        values.push(Complex64::new(f[1], f[2]));
        stderr.push(Complex64::new(f[3], f[4]));
    }
    Ok((times, values, stderr))
}

/// Writes `<csv>` and its JSON sidecar, creating parent directories.
pub fn write_result(csv_path: &Path, series: &ResponseSeries, record: &ResultRecord) -> Result<()> {
    if let Some(dir) = csv_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut buf = Vec::new();
    write_series_csv(&mut buf, series)?;
    fs::write(csv_path, buf)?;
    fs::write(sidecar_path(csv_path), record.to_json()?)?;
    Ok(())
}

/// Reads a CSV and its sidecar back into the series and record.
pub fn read_result(csv_path: &Path) -> Result<(ResponseSeries, ResultRecord)> {
    let record = ResultRecord::from_json(&fs::read_to_string(sidecar_path(csv_path))?)?;
    let (times, values, stderr) = read_series_csv(fs::File::open(csv_path)?)?;
    if times.len() != record.n_points {
        return Err(Error::Format(format!(
            "CSV has {} rows, record expects {}",
            times.len(),
            record.n_points
        )));
    }
    let series = ResponseSeries {
        method: record.method,
        times,
        values,
        stderr,
        metadata: record.metadata.clone(),
    };
    Ok((series, record))
}
