//! TOML run and sweep configurations.
//!
//! Unknown keys are rejected everywhere. Optional keys have documented
//! defaults, and the fully resolved configuration is echoed into every result.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::exact_ratio;
use crate::estimators::{BathMonodromy, Method};
use crate::model::{ModelSystem, MorseBathParams};
use crate::quantum::POPULATION_THRESHOLD;
use crate::sampling::Proposal;
use crate::{Error, Result};

/// Model Hamiltonian section `[model]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Unit-mass Morse oscillator bilinearly coupled to harmonic bath modes.
    MorseBath {
        d: f64,
        alpha: f64,
        chi: f64,
        coupling: f64,
        n_bath: usize,
    },
    /// Coupled harmonic oscillators.
    Harmonic {
        frequencies: Vec<f64>,
        masses: Vec<f64>,
        n_system: usize,
        #[serde(default)]
        couplings: Vec<(usize, usize, f64)>,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSystem> {
        match self {
            ModelConfig::MorseBath {
                d,
                alpha,
                chi,
                coupling,
                n_bath,
            } => ModelSystem::morse_bath(
                MorseBathParams {
                    d: *d,
                    alpha: *alpha,
                    chi: *chi,
                    coupling: *coupling,
                },
                *n_bath,
            ),
            ModelConfig::Harmonic {
                frequencies,
                masses,
                n_system,
                couplings,
            } => ModelSystem::harmonic(frequencies, masses.clone(), *n_system, couplings.clone()),
        }
    }
}

/// Quantum reference section `[quantum]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumConfig {
    #[serde(default = "default_population_threshold")]
    pub population_threshold: f64,
    /// Maximum eigenvalue change allowed when the grid is doubled.
    #[serde(default = "default_convergence_tolerance")]
    pub convergence_tolerance: f64,
    #[serde(default = "default_true")]
    pub check_convergence: bool,
    /// Interior grid points per coordinate; derived from the model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<usize>>,
    /// Product-basis cutoff above the ground state; derived when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_cutoff: Option<f64>,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        QuantumConfig {
            population_threshold: POPULATION_THRESHOLD,
            convergence_tolerance: default_convergence_tolerance(),
            check_convergence: true,
            points: None,
            basis_cutoff: None,
        }
    }
}

fn default_population_threshold() -> f64 {
    POPULATION_THRESHOLD
}
fn default_convergence_tolerance() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}
fn default_dt() -> f64 {
    0.005
}
fn default_blocks() -> usize {
    100
}
fn default_proposal() -> Proposal {
    Proposal::Separable {}
}

/// A single calculation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// `k_B T`; exactly one of `temperature` and `beta` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub t_max: f64,
    pub output_stride: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub n_samples: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub symmetrize: bool,
    #[serde(default)]
    pub bath_monodromy: BathMonodromy,
    #[serde(default = "default_blocks")]
    pub jackknife_blocks: usize,
    /// Worker threads, `0` for one per core.
    #[serde(default)]
    pub workers: usize,
    /// Coherent-state widths, one per coordinate; matched to `m ω` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<f64>>,
    /// CSV output path; the JSON record is written next to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_proposal")]
    pub proposal: Proposal,
    pub model: ModelConfig,
    #[serde(default)]
    pub quantum: QuantumConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn resolved_beta(&self) -> Result<f64> {
        match (self.temperature, self.beta) {
            (Some(t), None) if t > 0.0 && t.is_finite() => Ok(1.0 / t),
            (None, Some(b)) if b > 0.0 && b.is_finite() => Ok(b),
            (Some(_), Some(_)) => Err(Error::Config("give either temperature or beta, not both".into())),
            (None, None) => Err(Error::Config("missing temperature or beta".into())),
            _ => Err(Error::Config("temperature and beta must be positive".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_beta()?;
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive")))
            }
        };
        positive(self.dt, "dt")?;
        positive(self.output_stride, "output_stride")?;
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config("t_max must be non-negative".into()));
        }
        exact_ratio(self.output_stride, self.dt, "output_stride").map_err(to_config)?;
        exact_ratio(self.t_max, self.output_stride, "t_max").map_err(to_config)?;
        if self.method != Method::Quantum && self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive for trajectory methods".into()));
        }
        if self.jackknife_blocks == 0 {
            return Err(Error::Config("jackknife_blocks must be positive".into()));
        }
        if let Proposal::Harmonic { inflation } = self.proposal {
            positive(inflation, "proposal inflation")?;
        }
        let model = self.model.build().map_err(to_config)?;
        if let Some(w) = &self.widths {
            if w.len() != model.n_total() {
                return Err(Error::Config(format!(
                    "widths has {} entries, the model has {} coordinates",
                    w.len(),
                    model.n_total()
                )));
            }
            for &g in w {
                positive(g, "widths")?;
            }
        }
        let q = &self.quantum;
        positive(q.population_threshold, "population_threshold")?;
        positive(q.convergence_tolerance, "convergence_tolerance")?;
        if let Some(points) = &q.points {
            if points.len() != model.n_total() || points.iter().any(|&n| n < 2) {
                return Err(Error::Config("quantum.points needs one entry >= 2 per coordinate".into()));
            }
        }
        if let Some(c) = q.basis_cutoff {
            positive(c, "basis_cutoff")?;
        }
        Ok(())
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// `[sweep]` lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepLists {
    pub methods: Vec<Method>,
    pub n_samples: Vec<u64>,
    /// Directory for the per-cell results and the summary tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// A sweep: every `(method, n_samples)` combination applied to a base run.
///
/// `[base]` holds the keys of a run configuration except `method`,
/// `n_samples` and `output`, which the sweep supplies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sweep: SweepLists,
    pub base: toml::Table,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.methods.is_empty() || self.sweep.n_samples.is_empty() {
            return Err(Error::Config("sweep lists must not be empty".into()));
        }
        for key in ["method", "n_samples", "output"] {
            if self.base.contains_key(key) {
                return Err(Error::Config(format!("`{key}` belongs in [sweep], not [base]")));
            }
        }
        self.cells().map(|_| ())
    }

    /// The run configuration of every cell, methods outermost.
    pub fn cells(&self) -> Result<Vec<RunConfig>> {
        let mut out = Vec::new();
        for &method in &self.sweep.methods {
            let counts: &[u64] = if method == Method::Quantum {
                &[0]
            } else {
                &self.sweep.n_samples
            };
            for &n in counts {
                let mut table = self.base.clone();
                table.insert("method".into(), toml::Value::String(method.as_str().into()));
                table.insert("n_samples".into(), toml::Value::Integer(n as i64));
                let cfg: RunConfig = toml::Value::Table(table).try_into()?;
                cfg.validate()?;
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUN: &str = r#"
method = "hybrid"
temperature = 7.0
t_max = 1.0
output_stride = 0.1
dt = 0.005
n_samples = 100
seed = 3

[model]
kind = "morse_bath"
d = 100.0
alpha = 0.282842712474619
chi = 0.9
coupling = 0.1
n_bath = 1
"#;

    #[test]
    fn parses_and_defaults() {
        let c = RunConfig::from_toml(RUN).unwrap();
        assert_eq!(c.method, Method::Hybrid);
        assert!((c.resolved_beta().unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert!(c.symmetrize);
        assert_eq!(c.jackknife_blocks, 100);
        assert_eq!(c.proposal, Proposal::Separable {});
        assert_eq!(c.model.build().unwrap().n_total(), 2);
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_toml(RUN).unwrap();
        let again = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_toml(&format!("colour = 1\n{RUN}")).is_err());
        let bad_model = RUN.replace("n_bath = 1", "n_bath = 1\nextra = 2");
        assert!(RunConfig::from_toml(&bad_model).is_err());
        let bad_proposal = format!("{RUN}\n[proposal]\nkind = \"separable\"\nwidth = 1.0\n");
        assert!(RunConfig::from_toml(&bad_proposal).is_err());
    }

    #[test]
    fn rejects_inconsistent_values() {
        let both = RUN.replace("temperature = 7.0", "temperature = 7.0\nbeta = 0.1");
        assert!(matches!(RunConfig::from_toml(&both), Err(Error::Config(_))));
        let stride = RUN.replace("output_stride = 0.1", "output_stride = 0.0123");
        assert!(RunConfig::from_toml(&stride).is_err());
        let widths = format!("widths = [1.0]\n{RUN}");
        assert!(RunConfig::from_toml(&widths).is_err());
        let zero = RUN.replace("n_samples = 100", "n_samples = 0");
        assert!(RunConfig::from_toml(&zero).is_err());
    }

    #[test]
    fn sweep_cells() {
        let base: String = RUN
            .lines()
            .filter(|l| !l.starts_with("method") && !l.starts_with("n_samples"))
            .map(|l| if l == "[model]" { "[base.model]".to_string() } else { l.to_string() })
            .collect::<Vec<_>>()
            .join("\n");
        let text = format!(
            "[sweep]\nmethods = [\"lsc\", \"quantum\", \"hk\"]\nn_samples = [10, 20]\n\n[base]\n{base}"
        );
        let s = SweepConfig::from_toml(&text).unwrap();
        let cells = s.cells().unwrap();
        assert_eq!(cells.len(), 5);
        assert_eq!(cells[0].method, Method::Lsc);
        assert_eq!(cells[1].n_samples, 20);
        assert_eq!(cells[2].method, Method::Quantum);
    }
}
