//! Orchestration of runs, sweeps and the self-test suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SweepConfig};
use crate::estimators::{
    response_hk, response_hybrid, response_lsc, EstimatorSettings, Method, ResponseSeries, SampleKernel,
    TimeGrid,
};
use crate::io::{write_result, QuantumDiagnostics, ResultRecord, RunDiagnostics, Timing, SCHEMA_VERSION};
use crate::model::{ModelSystem, MorseBathParams};
use crate::quantum::{
    response_quantum, retained_count, solve_converged, solve_eigenproblem, AxisGrid, GridSpec,
};
use crate::semiclassics::WidthMatrix;
use crate::Result;

/// Estimator settings described by a run configuration.
pub fn estimator_settings(cfg: &RunConfig, model: &ModelSystem) -> Result<EstimatorSettings> {
    let beta = cfg.resolved_beta()?;
    let grid = TimeGrid::new(cfg.t_max, cfg.output_stride)?;
    let mut s = EstimatorSettings::new(beta, grid, cfg.n_samples, cfg.seed);
    s.dt = cfg.dt;
    s.blocks = cfg.jackknife_blocks;
    s.symmetrize = cfg.symmetrize;
    s.bath_monodromy = cfg.bath_monodromy;
    s.proposal = cfg.proposal;
    s.workers = cfg.workers;
    s.widths = match &cfg.widths {
        Some(w) => Some(WidthMatrix::new(w.clone(), model.n_system())?),
        None => None,
    };
    Ok(s)
}

/// Grid for the quantum reference of a run configuration.
pub fn quantum_grid(cfg: &RunConfig, model: &ModelSystem) -> Result<GridSpec> {
    let beta = cfg.resolved_beta()?;
    let mut grid = GridSpec::for_model(model, beta, cfg.quantum.population_threshold)?;
    if let Some(points) = &cfg.quantum.points {
        for (axis, &n) in grid.axes.iter_mut().zip(points) {
            *axis = AxisGrid::new(axis.lower, axis.upper, n)?;
        }
    }
    if let Some(c) = cfg.quantum.basis_cutoff {
        grid.basis_cutoff = c;
    }
    Ok(grid)
}

/// Executes a run without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<(ResponseSeries, ResultRecord)> {
    cfg.validate()?;
    let start = Instant::now();
    let model = cfg.model.build()?;
    let beta = cfg.resolved_beta()?;
    let (mut series, estimator, quantum) = match cfg.method {
        Method::Quantum => {
            let grid = quantum_grid(cfg, &model)?;
            let q = &cfg.quantum;
            let tg = TimeGrid::new(cfg.t_max, cfg.output_stride)?;
            let (spectrum, convergence) = if q.check_convergence {
                let (s, fine, report) =
                    solve_converged(&model, beta, &grid, q.population_threshold, q.convergence_tolerance)?;
                let a = response_quantum(&s, beta, &tg, q.population_threshold)?;
                let b = response_quantum(&fine, beta, &tg, q.population_threshold)?;
                (s, Some((report, compare(&a, &b).max_abs_deviation)))
            } else {
                let full = solve_eigenproblem(&model, &grid, usize::MAX)?;
                let n = retained_count(&full, beta, q.population_threshold)?;
                (full.truncated(n), None)
            };
            let series = response_quantum(&spectrum, beta, &tg, q.population_threshold)?;
            let diag = QuantumDiagnostics {
                n_states: spectrum.n_states(),
                basis_size: spectrum.basis_size,
                top_population: *spectrum.populations(beta).last().unwrap_or(&0.0),
                ground_energy: spectrum.energies[0],
                grid_doubling: convergence.map(|c| c.0),
                grid_doubling_response_change: convergence.map(|c| c.1),
                grid,
            };
            (series, None, Some(diag))
        }
        method => {
            let settings = estimator_settings(cfg, &model)?;
            let (series, diag) = match method {
                Method::Lsc => response_lsc(&model, &settings)?,
                Method::Hk => response_hk(&model, &settings)?,
                _ => response_hybrid(&model, &settings)?,
            };
            (series, Some(diag), None)
        }
    };
    series.metadata.model = model.describe();
    series.metadata.beta = beta;
    let record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        method: cfg.method,
        beta,
        n_points: series.len(),
        metadata: series.metadata.clone(),
        diagnostics: RunDiagnostics {
            trajectories: cfg.method.trajectories_per_sample() * cfg.n_samples,
            estimator,
            quantum,
            timing: Timing {
                wall_clock_seconds: start.elapsed().as_secs_f64(),
                finished_unix_seconds: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
        },
    };
    Ok((series, record))
}

/// Executes a run and writes the CSV and JSON record to `output`.
pub fn run(cfg: &RunConfig, output: &Path) -> Result<ResultRecord> {
    let (series, record) = execute(cfg)?;
    write_result(output, &series, &record)?;
    Ok(record)
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub n_samples: u64,
    pub csv: PathBuf,
    pub status: String,
    pub trajectories: u64,
    pub wall_clock_seconds: f64,
    pub max_stderr: f64,
}

/// Runs every sweep cell, records failures per cell, and writes
/// `sweep_runs.csv` and `sweep_comparison.csv` into `dir`.
pub fn sweep(cfg: &SweepConfig, dir: &Path) -> Result<Vec<SweepCell>> {
    fs::create_dir_all(dir)?;
    let mut cells = Vec::new();
    let mut results: Vec<Option<ResponseSeries>> = Vec::new();
    for run_cfg in cfg.cells()? {
        let csv = dir.join(format!("{}_{}.csv", run_cfg.method, run_cfg.n_samples));
        let (status, series, traj, wall) = match execute(&run_cfg) {
            Ok((series, record)) => {
                write_result(&csv, &series, &record)?;
                let d = &record.diagnostics;
                ("ok".to_string(), Some(series), d.trajectories, d.timing.wall_clock_seconds)
            }
            Err(e) => (format!("error: {e}"), None, 0, 0.0),
        };
        cells.push(SweepCell {
            method: run_cfg.method,
            n_samples: run_cfg.n_samples,
            csv,
            status,
            trajectories: traj,
            wall_clock_seconds: wall,
            max_stderr: series.as_ref().map(|s| s.max_stderr()).unwrap_or(f64::NAN),
        });
        results.push(series);
    }

    let mut runs = csv::Writer::from_path(dir.join("sweep_runs.csv"))?;
    runs.write_record(["method", "n_samples", "status", "trajectories", "wall_clock_seconds", "max_stderr", "csv"])?;
    for c in &cells {
        runs.write_record([
            c.method.to_string(),
            c.n_samples.to_string(),
            c.status.clone(),
            c.trajectories.to_string(),
            c.wall_clock_seconds.to_string(),
            c.max_stderr.to_string(),
            c.csv.display().to_string(),
        ])?;
    }
    runs.flush()?;

    let mut cmp = csv::Writer::from_path(dir.join("sweep_comparison.csv"))?;
    cmp.write_record([
        "a_method",
        "a_n_samples",
        "b_method",
        "b_n_samples",
        "max_abs_deviation",
        "max_deviation_sigma",
        "a_cost",
        "b_cost",
    ])?;
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let (Some(a), Some(b)) = (&results[i], &results[j]) else {
                continue;
            };
            let cmp_ab = compare(a, b);
            cmp.write_record([
                cells[i].method.to_string(),
                cells[i].n_samples.to_string(),
                cells[j].method.to_string(),
                cells[j].n_samples.to_string(),
                cmp_ab.max_abs_deviation.to_string(),
                cmp_ab.max_sigma.to_string(),
                (cells[i].trajectories as f64 * cells[i].wall_clock_seconds).to_string(),
                (cells[j].trajectories as f64 * cells[j].wall_clock_seconds).to_string(),
            ])?;
        }
    }
    cmp.flush()?;
    Ok(cells)
}

/// Pointwise comparison of the real parts of two series on the same grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub max_abs_deviation: f64,
    /// Largest `|a - b| / sqrt(σ_a² + σ_b²)`; infinite when both errors vanish.
    pub max_sigma: f64,
}

pub fn compare(a: &ResponseSeries, b: &ResponseSeries) -> Comparison {
    let mut out = Comparison {
        max_abs_deviation: 0.0,
        max_sigma: 0.0,
    };
    for k in 0..a.len().min(b.len()) {
        let d = (a.values[k].re - b.values[k].re).abs();
        let s = a.stderr[k].re.hypot(b.stderr[k].re);
        out.max_abs_deviation = out.max_abs_deviation.max(d);
        let z = if s > 0.0 {
            d / s
        } else if d > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        out.max_sigma = out.max_sigma.max(z);
    }
    out
}

/// One line of the self-test report.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Fast invariant checks: Morse spectrum, harmonic exactness of every
/// method, reduction of the hybrid kernel, realness and reproducibility.
pub fn selftest() -> Vec<SelfTestResult> {
    let mut out = Vec::new();
    let mut push = |name, r: Result<(bool, String)>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, e.to_string()));
        out.push(SelfTestResult { name, passed, detail });
    };
    push("morse spectrum", check_morse_levels());
    push("harmonic oracle", check_harmonic(2_000));
    push("hybrid reduces to hk", check_reduction());
    push("reproducible rerun", check_reproducible());
    out
}

fn check_morse_levels() -> Result<(bool, String)> {
    let params = MorseBathParams::reference();
    let model = ModelSystem::morse_bath(params, 0)?;
    let grid = GridSpec {
        axes: vec![AxisGrid::new(-3.0, 30.0, 511)?],
        basis_cutoff: 0.0,
    };
    let s = solve_eigenproblem(&model, &grid, 21)?;
    let err = (0..=20)
        .map(|n| (s.energies[n] - params.morse_level(n)).abs())
        .fold(0.0, f64::max);
    Ok((err < 1e-6, format!("max level error {err:.2e}")))
}

fn check_harmonic(n: u64) -> Result<(bool, String)> {
    let w = 4.0;
    let model = ModelSystem::harmonic(&[w, 3.0], vec![1.0, 1.0], 1, vec![])?;
    let grid = TimeGrid::new(2.0, 0.1)?;
    let mut worst: f64 = 0.0;
    for method in [Method::Lsc, Method::Hk, Method::Hybrid] {
        let s = EstimatorSettings::new(1.0 / 7.0, grid, n, 11);
        let (series, _) = match method {
            Method::Lsc => response_lsc(&model, &s)?,
            Method::Hk => response_hk(&model, &s)?,
            _ => response_hybrid(&model, &s)?,
        };
        for (k, t) in series.times.iter().enumerate() {
            let exact = (w * t).sin() / w;
            let se = series.stderr[k].re.max(1e-12);
            worst = worst.max((series.values[k].re - exact).abs() / se);
        }
    }
    Ok((worst < 4.0, format!("max deviation {worst:.2} sigma")))
}

fn check_reduction() -> Result<(bool, String)> {
    let model = ModelSystem::morse_bath(MorseBathParams::reference(), 0)?;
    let s = EstimatorSettings::new(1.0 / 7.0, TimeGrid::new(1.0, 0.1)?, 20, 5);
    let hk = SampleKernel::hk(&model, &s)?;
    let hy = SampleKernel::hybrid(&model, &s)?;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        if let (Ok(a), Ok(b)) = (hk.evaluate(i).contributions, hy.evaluate(i).contributions) {
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max(relative(*x, *y));
            }
        }
    }
    Ok((worst < 1e-12, format!("max relative difference {worst:.2e}")))
}

fn check_reproducible() -> Result<(bool, String)> {
    let model = ModelSystem::morse_bath(MorseBathParams::reference(), 1)?;
    let mut s = EstimatorSettings::new(1.0 / 7.0, TimeGrid::new(1.0, 0.1)?, 50, 8);
    s.blocks = 7;
    let (a, _) = response_hybrid(&model, &s)?;
    s.workers = 2;
    let (b, _) = response_hybrid(&model, &s)?;
    let same = a.values == b.values && a.stderr == b.stderr;
    Ok((same, if same { "identical".into() } else { "differs".into() }))
}

fn relative(a: Complex64, b: Complex64) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}
