//! Trajectory-based estimators of the linear response function.
//!
//! All three estimators share one per-sample kernel. A sample draws `z̄` from
//! the Boltzmann factor, draws difference variables `Δz` on the *sampled*
//! coordinates, propagates `z̄ ± Δz/2`, and integrates the difference
//! variables of the *linearized* coordinates analytically:
//!
//! | estimator | sampled `Δz`     | linearized       |
//! |-----------|------------------|------------------|
//! | LSC-IVR   | none             | all (`I = 1`)    |
//! | full HK   | all coordinates  | none             |
//! | hybrid    | system block     | bath block       |
//!
//! The linearized-LSC limit collapses to the classical `β p̄ᵀ q̄(t) / m`, which
//! [`response_lsc`] evaluates directly from a single trajectory.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{exact_ratio, Monodromy, PropagationOptions, Trajectory};
use crate::model::{ModelSystem, PhasePoint};
use crate::sampling::{
    block_ranges, sample_rng, BoltzmannSampler, DifferenceSampler, EstimatorAccumulator,
    JackknifeEstimate, Proposal,
};
use crate::semiclassics::{log_overlap_dofs, matrix_a_b, WidthMatrix};
use crate::{Error, Result, HBAR};

/// Method used to compute a response series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Quantum,
    Lsc,
    Hk,
    Hybrid,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Quantum => "quantum",
            Method::Lsc => "lsc",
            Method::Hk => "hk",
            Method::Hybrid => "hybrid",
        }
    }

    /// Trajectories propagated per Monte Carlo sample.
    pub fn trajectories_per_sample(&self) -> u64 {
        match self {
            Method::Quantum => 0,
            Method::Lsc => 1,
            Method::Hk | Method::Hybrid => 2,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantum" => Ok(Method::Quantum),
            "lsc" => Ok(Method::Lsc),
            "hk" => Ok(Method::Hk),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Which monodromy matrix feeds the bath matrix `A_B` of the hybrid kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BathMonodromy {
    /// Element-wise mean of the `z̄ + Δz/2` and `z̄ - Δz/2` matrices.
    #[default]
    Average,
    /// The `z̄ + Δz/2` trajectory only.
    Forward,
    /// The `z̄ - Δz/2` trajectory only.
    Backward,
}

/// Uniform output grid `0, stride, ..., t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_max: f64,
    pub stride: f64,
}

impl TimeGrid {
    pub fn new(t_max: f64, stride: f64) -> Result<Self> {
        if !(stride > 0.0 && t_max >= 0.0) {
            return Err(Error::Parameter("time grid needs stride > 0 and t_max >= 0".into()));
        }
        exact_ratio(t_max, stride, "t_max")?;
        Ok(TimeGrid { t_max, stride })
    }

    pub fn len(&self) -> usize {
        (self.t_max / self.stride).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.stride).collect()
    }
}

/// Settings shared by the trajectory estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSettings {
    pub beta: f64,
    pub grid: TimeGrid,
    pub dt: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub blocks: usize,
    /// Average every sample with its `Δz → -Δz` partner (exactly real output).
    pub symmetrize: bool,
    pub bath_monodromy: BathMonodromy,
    pub proposal: Proposal,
    /// Width matrix; `None` selects the matched harmonic widths.
    pub widths: Option<WidthMatrix>,
    /// Worker threads, `0` for the rayon default. Does not affect results.
    pub workers: usize,
}

impl EstimatorSettings {
    pub fn new(beta: f64, grid: TimeGrid, n_samples: u64, seed: u64) -> Self {
        EstimatorSettings {
            beta,
            grid,
            dt: 0.005,
            n_samples,
            seed,
            blocks: 100,
            symmetrize: true,
            bath_monodromy: BathMonodromy::Average,
            proposal: Proposal::Separable {},
            widths: None,
            workers: 0,
        }
    }

    pub fn widths_for(&self, model: &ModelSystem) -> Result<WidthMatrix> {
        match &self.widths {
            Some(w) if w.dim() != model.n_total() => Err(Error::Dimension {
                expected: model.n_total(),
                got: w.dim(),
            }),
            Some(w) => WidthMatrix::new(w.diagonal().to_vec(), model.n_system()),
            None => Ok(WidthMatrix::matched(model)),
        }
    }
}

/// Metadata carried alongside every response series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetadata {
    pub model: String,
    pub beta: f64,
    pub widths: Vec<f64>,
    pub n_samples: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub seed: u64,
}

/// `R(t)` on a time grid; the real part is the response, the imaginary part a
/// diagnostic. `stderr` holds the errors of the real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSeries {
    pub method: Method,
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub stderr: Vec<Complex64>,
    pub metadata: SeriesMetadata,
}

impl ResponseSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn real(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().map(|s| s.re).fold(0.0, f64::max)
    }
}

/// Monte Carlo bookkeeping returned with every trajectory estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorDiagnostics {
    pub nonfinite: u64,
    pub branch_errors: u64,
    pub bath_determinant_errors: u64,
    /// Fraction of total importance weight carried by rejected samples.
    pub rejected_weight_fraction: f64,
    /// Samples whose log-weight lies more than 30 from the median.
    pub extreme_weights: u64,
    /// Mean of `exp(log_weight)`, i.e. `∫ exp(-βV) dq` for the configurational part.
    pub mean_weight: f64,
    pub median_log_weight: f64,
    /// `|Σ w c| / Σ |w c|` per time bin.
    pub phase_cancellation: Vec<f64>,
    /// Accepted samples with the escaped-trajectory fraction above 1 %.
    pub escaped_warning: bool,
}

/// Failure modes that exclude a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFailure {
    NonFinite,
    Branch,
    BathDeterminant,
}

/// The outcome of a single Monte Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub index: u64,
    pub z_bar: PhasePoint,
    pub dz: PhasePoint,
    /// Log importance weight relative to the sampler reference.
    pub log_weight: f64,
    pub contributions: std::result::Result<Vec<Complex64>, SampleFailure>,
}

/// Everything a sample needs, shared read-only between workers.
#[derive(Debug, Clone)]
pub struct SampleKernel<'m> {
    model: &'m ModelSystem,
    method: Method,
    settings: EstimatorSettings,
    gamma: WidthMatrix,
    boltzmann: BoltzmannSampler,
    difference: DifferenceSampler,
    linearized: Range<usize>,
    per_output: u64,
}

impl<'m> SampleKernel<'m> {
    fn build(
        model: &'m ModelSystem,
        method: Method,
        settings: &EstimatorSettings,
        sampled: Range<usize>,
        linearized: Range<usize>,
    ) -> Result<Self> {
        let gamma = settings.widths_for(model)?;
        let per_output = exact_ratio(settings.grid.stride, settings.dt, "output stride")?;
        if per_output == 0 {
            return Err(Error::Parameter("output stride must be positive".into()));
        }
        Ok(SampleKernel {
            model,
            method,
            boltzmann: BoltzmannSampler::new(model, settings.beta, settings.proposal)?,
            difference: DifferenceSampler::new(&gamma, sampled),
            gamma,
            linearized,
            per_output,
            settings: settings.clone(),
        })
    }

    /// LSC-IVR kernel: one classical trajectory per sample.
    pub fn lsc(model: &'m ModelSystem, settings: &EstimatorSettings) -> Result<Self> {
        Self::build(model, Method::Lsc, settings, 0..0, 0..0)
    }

    /// Full Herman-Kluk kernel: difference variables sampled in every coordinate.
    pub fn hk(model: &'m ModelSystem, settings: &EstimatorSettings) -> Result<Self> {
        let n = model.n_total();
        Self::build(model, Method::Hk, settings, 0..n, n..n)
    }

    /// Hybrid kernel: system differences sampled, bath differences linearized.
    pub fn hybrid(model: &'m ModelSystem, settings: &EstimatorSettings) -> Result<Self> {
        let (m, n) = (model.n_system(), model.n_total());
        Self::build(model, Method::Hybrid, settings, 0..m, m..n)
    }

    /// Hybrid kernel with the system difference variables frozen at zero and
    /// linearized together with the bath; reduces to LSC-IVR sample by sample.
    pub fn hybrid_frozen_system(model: &'m ModelSystem, settings: &EstimatorSettings) -> Result<Self> {
        let n = model.n_total();
        Self::build(model, Method::Hybrid, settings, 0..0, 0..n)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn widths(&self) -> &WidthMatrix {
        &self.gamma
    }

    pub fn boltzmann(&self) -> &BoltzmannSampler {
        &self.boltzmann
    }

    /// Draws the phase-space variables of sample `index`.
    pub fn draw(&self, index: u64) -> (PhasePoint, PhasePoint, f64) {
        let mut rng = sample_rng(self.settings.seed, index);
        let (z_bar, lw) = self.boltzmann.draw(self.model, &mut rng);
        let mut dz = PhasePoint::zeros(self.model.n_total());
        self.difference.draw(&mut rng, &mut dz);
        (z_bar, dz, lw - self.boltzmann.log_weight_reference())
    }

    pub fn evaluate(&self, index: u64) -> SampleOutcome {
        let (z_bar, dz, log_weight) = self.draw(index);
        let contributions = match self.method {
            Method::Lsc => self.classical(&z_bar),
            _ => self.semiclassical(&z_bar, &dz),
        };
        SampleOutcome {
            index,
            z_bar,
            dz,
            log_weight,
            contributions,
        }
    }

    fn momentum_factor(&self, z_bar: &PhasePoint) -> Vec<f64> {
        let masses = self.model.masses();
        (0..self.model.n_system())
            .map(|i| self.settings.beta * z_bar.p[i] / masses[i])
            .collect()
    }

    fn classical(&self, z_bar: &PhasePoint) -> std::result::Result<Vec<Complex64>, SampleFailure> {
        let opts = PropagationOptions::classical(self.settings.dt);
        let mut traj = Trajectory::new(self.model, z_bar, &opts).map_err(|_| SampleFailure::NonFinite)?;
        let pf = self.momentum_factor(z_bar);
        let bins = self.settings.grid.len();
        let mut out = Vec::with_capacity(bins);
        for k in 0..bins {
            if k > 0 {
                traj.advance(self.per_output).map_err(|_| SampleFailure::NonFinite)?;
            }
            let r: f64 = pf.iter().zip(traj.q()).map(|(a, q)| a * q).sum();
            out.push(Complex64::new(r, 0.0));
        }
        Ok(out)
    }

    fn semiclassical(
        &self,
        z_bar: &PhasePoint,
        dz: &PhasePoint,
    ) -> std::result::Result<Vec<Complex64>, SampleFailure> {
        let n = self.model.n_total();
        let n_sys = self.model.n_system();
        let z1 = z_bar.shifted(dz, 0.5);
        let z2 = z_bar.shifted(dz, -0.5);
        let opts = PropagationOptions::semiclassical(self.settings.dt, self.gamma.clone());
        let map_err = |e: Error| match e {
            Error::PrefactorBranch { .. } => SampleFailure::Branch,
            _ => SampleFailure::NonFinite,
        };
        let mut t1 = Trajectory::new(self.model, &z1, &opts).map_err(map_err)?;
        let mut t2 = Trajectory::new(self.model, &z2, &opts).map_err(map_err)?;

        let sampled = self.difference.dofs();
        let gamma = self.gamma.diagonal();
        let pf = self.momentum_factor(z_bar);
        // ∫dΔz G0 / (2πħ)^k = 2^k for the sampled coordinates
        let norm = 2f64.powi(sampled.len() as i32);
        let initial_phase: f64 = sampled.clone().map(|i| z_bar.p[i] * dz.q[i]).sum::<f64>() / HBAR;
        let n_lin = self.linearized.len() as i32;
        let lin_const = (4.0 * HBAR * HBAR).powi(n_lin);

        let bins = self.settings.grid.len();
        let mut out = Vec::with_capacity(bins);
        let mut zt1 = PhasePoint::zeros(n);
        let mut zt2 = PhasePoint::zeros(n);
        for k in 0..bins {
            if k > 0 {
                t1.advance(self.per_output).map_err(map_err)?;
                t2.advance(self.per_output).map_err(map_err)?;
            }
            zt1.p.copy_from_slice(t1.p());
            zt1.q.copy_from_slice(t1.q());
            zt2.p.copy_from_slice(t2.p());
            zt2.q.copy_from_slice(t2.q());

            let mut exponent = t1.prefactor_log()
                + t2.prefactor_log().conj()
                + Complex64::new(0.0, (t1.action() - t2.action()) / HBAR + initial_phase)
                + log_overlap_dofs(&zt2, &zt1, &self.gamma, sampled.clone());

            if n_lin > 0 {
                let m = match self.settings.bath_monodromy {
                    BathMonodromy::Average => Monodromy::from_row_slice(n, t1.monodromy_slice())
                        .average(&Monodromy::from_row_slice(n, t2.monodromy_slice())),
                    BathMonodromy::Forward => Monodromy::from_row_slice(n, t1.monodromy_slice()),
                    BathMonodromy::Backward => Monodromy::from_row_slice(n, t2.monodromy_slice()),
                };
                let det = matrix_a_b(&m, &self.gamma, self.linearized.clone()).determinant();
                if !(det > 0.0) {
                    return Err(SampleFailure::BathDeterminant);
                }
                exponent -= 0.5 * (lin_const * det).ln();
            }

            let mut dipole = Complex64::new(0.0, 0.0);
            for i in 0..n_sys {
                let qbar = 0.5 * (zt1.q[i] + zt2.q[i]);
                let dp = zt1.p[i] - zt2.p[i];
                dipole += Complex64::new(qbar, dp / (2.0 * HBAR * gamma[i])) * pf[i];
            }
            let mut c = dipole * exponent.exp() * norm;
            if self.settings.symmetrize {
                // the Δz → -Δz partner contributes the complex conjugate
                c = Complex64::new(c.re, 0.0);
            }
            if !c.is_finite() {
                return Err(SampleFailure::NonFinite);
            }
            out.push(c);
        }
        Ok(out)
    }

    /// Runs all samples in fixed contiguous blocks and reduces them in block order.
    pub fn run(&self) -> Result<(ResponseSeries, EstimatorDiagnostics)> {
        let s = &self.settings;
        if s.n_samples == 0 {
            return Err(Error::Parameter("n_samples must be positive".into()));
        }
        let bins = s.grid.len();
        let ranges = block_ranges(s.n_samples, s.blocks);
        let work = || {
            ranges
                .par_iter()
                .map(|range| {
                    let mut acc = EstimatorAccumulator::new(bins);
                    let mut log_weights = Vec::with_capacity((range.end - range.start) as usize);
                    let mut failures = [0u64; 3];
                    for index in range.clone() {
                        let outcome = self.evaluate(index);
                        let w = outcome.log_weight.exp();
                        log_weights.push(outcome.log_weight);
                        match &outcome.contributions {
                            Ok(c) => acc.add_sample(w, c),
                            Err(f) => {
                                acc.reject(w);
                                failures[*f as usize] += 1;
                            }
                        }
                    }
                    (acc, log_weights, failures)
                })
                .collect::<Vec<_>>()
        };
        let results = if s.workers > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(s.workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?
                .install(work)
        } else {
            work()
        };

        let blocks: Vec<EstimatorAccumulator> = results.iter().map(|r| r.0.clone()).collect();
        let mut log_weights: Vec<f64> = results.iter().flat_map(|r| r.1.iter().copied()).collect();
        let mut failures = [0u64; 3];
        for r in &results {
            for k in 0..3 {
                failures[k] += r.2[k];
            }
        }
        let est = JackknifeEstimate::from_blocks(&blocks)?;
        if est.total.accepted == 0 {
            return Err(Error::Parameter("every sample was rejected".into()));
        }

        let mean_weight = log_weights.iter().map(|lw| lw.exp()).sum::<f64>() / log_weights.len() as f64
            * self.boltzmann.log_weight_reference().exp();
        log_weights.sort_by(f64::total_cmp);
        let median = log_weights[log_weights.len() / 2];
        let extreme = log_weights.iter().filter(|lw| (*lw - median).abs() > 30.0).count() as u64;
        let total_weight = est.total.accepted_weight + est.total.rejected_weight;
        let rejected_fraction = est.total.rejected_weight / total_weight;

        let diagnostics = EstimatorDiagnostics {
            nonfinite: failures[SampleFailure::NonFinite as usize],
            branch_errors: failures[SampleFailure::Branch as usize],
            bath_determinant_errors: failures[SampleFailure::BathDeterminant as usize],
            rejected_weight_fraction: rejected_fraction,
            extreme_weights: extreme,
            mean_weight,
            median_log_weight: median + self.boltzmann.log_weight_reference(),
            phase_cancellation: (0..bins).map(|k| est.total.phase_cancellation(k)).collect(),
            escaped_warning: est.total.rejected as f64 > 0.01 * s.n_samples as f64,
        };
        let series = ResponseSeries {
            method: self.method,
            times: s.grid.times(),
            values: est.values,
            stderr: est.stderr,
            metadata: SeriesMetadata {
                model: self.model.describe(),
                beta: s.beta,
                widths: self.gamma.diagonal().to_vec(),
                n_samples: s.n_samples,
                accepted: est.total.accepted,
                rejected: est.total.rejected,
                seed: s.seed,
            },
        };
        Ok((series, diagnostics))
    }
}

/// Linearized semiclassical (classical Wigner) response `β ⟨p̄ᵀ q̄(t)⟩ / m`.
pub fn response_lsc(
    model: &ModelSystem,
    settings: &EstimatorSettings,
) -> Result<(ResponseSeries, EstimatorDiagnostics)> {
    SampleKernel::lsc(model, settings)?.run()
}

/// Full Herman-Kluk double phase-space response.
pub fn response_hk(
    model: &ModelSystem,
    settings: &EstimatorSettings,
) -> Result<(ResponseSeries, EstimatorDiagnostics)> {
    SampleKernel::hk(model, settings)?.run()
}

/// Hybrid response: Herman-Kluk in the system block, linearized bath.
pub fn response_hybrid(
    model: &ModelSystem,
    settings: &EstimatorSettings,
) -> Result<(ResponseSeries, EstimatorDiagnostics)> {
    SampleKernel::hybrid(model, settings)?.run()
}
