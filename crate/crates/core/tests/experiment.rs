use std::fs;
use std::path::Path;

use semiclassical_ir::config::{RunConfig, SweepConfig};
use semiclassical_ir::estimators::Method;
use semiclassical_ir::experiment::{execute, run, sweep};
use semiclassical_ir::io::{read_result, sidecar_path};

const HARMONIC: &str = r#"
method = "hk"
beta = 0.5
t_max = 2.0
output_stride = 0.1
dt = 0.01
n_samples = 400
seed = 17
jackknife_blocks = 20

[model]
kind = "harmonic"
frequencies = [4.0, 1.5]
masses = [1.0, 4.0]
n_system = 1
couplings = [[0, 1, 3.0]]
"#;

#[test]
fn written_results_read_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(HARMONIC).unwrap();
    let csv = dir.path().join("nested/run.csv");
    let record = run(&cfg, &csv).unwrap();
    assert!(sidecar_path(&csv).exists());
    let (series, back) = read_result(&csv).unwrap();
    assert_eq!(back, record);
    assert_eq!(back.config, cfg);
    assert_eq!(series.len(), 21);
    let (again, _) = execute(&cfg).unwrap();
    assert_eq!(series.times, again.times);
    assert_eq!(series.values, again.values);
    assert_eq!(series.stderr, again.stderr);
    assert_eq!(record.diagnostics.trajectories, 800);
}

#[test]
fn workers_do_not_change_results() {
    let mut cfg = RunConfig::from_toml(HARMONIC).unwrap();
    cfg.method = Method::Hybrid;
    cfg.workers = 1;
    let (a, _) = execute(&cfg).unwrap();
    cfg.workers = 3;
    let (b, _) = execute(&cfg).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert_eq!(x.re.to_bits(), y.re.to_bits());
        assert_eq!(x.im.to_bits(), y.im.to_bits());
    }
}

#[test]
fn quantum_record_carries_grid_diagnostics() {
    let mut cfg = RunConfig::from_toml(HARMONIC).unwrap();
    cfg.method = Method::Quantum;
    cfg.n_samples = 0;
    let (series, record) = execute(&cfg).unwrap();
    let q = record.diagnostics.quantum.expect("quantum diagnostics");
    assert!(q.top_population < cfg.quantum.population_threshold);
    assert!(q.grid_doubling.unwrap().max_change < cfg.quantum.convergence_tolerance);
    assert!(q.grid_doubling_response_change.unwrap() < 1e-8);
    assert!(record.diagnostics.estimator.is_none());
    assert!(series.stderr.iter().all(|e| e.norm() == 0.0));
}

#[test]
fn sweep_writes_every_cell_and_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[sweep]
methods = ["quantum", "lsc", "hk"]
n_samples = [50, 100]

[base]
beta = 0.5
t_max = 1.0
output_stride = 0.5
dt = 0.01
seed = 2
jackknife_blocks = 10

[base.model]
kind = "harmonic"
frequencies = [2.0]
masses = [1.0]
n_system = 1
"#;
    let cfg = SweepConfig::from_toml(text).unwrap();
    let cells = sweep(&cfg, dir.path()).unwrap();
    assert_eq!(cells.len(), 5);
    assert!(cells.iter().all(|c| c.status == "ok"), "{cells:?}");
    for name in ["quantum_0.csv", "lsc_50.csv", "lsc_100.csv", "hk_50.csv", "hk_100.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
        assert!(read_result(&dir.path().join(name)).is_ok());
    }
    let runs = fs::read_to_string(dir.path().join("sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 6);
    let cmp = fs::read_to_string(dir.path().join("sweep_comparison.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 1 + 10);
}

#[test]
fn shipped_configurations_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut runs = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        if text.contains("[sweep]") {
            let s = SweepConfig::from_toml(&text).unwrap();
            assert!(!s.cells().unwrap().is_empty());
        } else {
            let c = RunConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(c.output.is_some());
            runs += 1;
        }
    }
    assert!(runs >= 5);
}
