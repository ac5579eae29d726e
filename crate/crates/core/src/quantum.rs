//! Exact quantum reference: sine-DVR eigensolver and thermal response sum.
//!
//! One-dimensional factors are diagonalized on a Colbert-Miller sine grid.
//! Coupled models are then diagonalized in the energy-pruned product basis of
//! those factor eigenstates, which is exact for the bilinear couplings used
//! here because `q_i q_j` factorizes over the coordinates.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::estimators::{Method, ResponseSeries, SeriesMetadata, TimeGrid};
use crate::model::{ModelSystem, OneDimTerm};
use crate::{Error, Result, HBAR};

/// Default threshold on the thermal population of the highest retained state.
pub const POPULATION_THRESHOLD: f64 = 1e-10;

/// Interval and number of interior points for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisGrid {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl AxisGrid {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(upper > lower) || points < 2 {
            return Err(Error::Parameter(format!(
                "invalid grid [{lower}, {upper}] with {points} points"
            )));
        }
        Ok(AxisGrid { lower, upper, points })
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points + 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let dx = self.spacing();
        (1..=self.points).map(|j| self.lower + j as f64 * dx).collect()
    }

    pub fn doubled(&self) -> Self {
        // 2n + 1 interior points nest the original grid
        AxisGrid {
            points: 2 * self.points + 1,
            ..*self
        }
    }
}

/// Grid and truncation settings for [`solve_eigenproblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<AxisGrid>,
    /// Product-basis energy cutoff above the ground state.
    pub basis_cutoff: f64,
}

impl GridSpec {
    /// Grid whose confining walls sit at `βV = 40`, or further out where the
    /// highest retained state has decayed (`V = E_top + 30 ħω`), and which
    /// resolves the kinetic energy available at the walls.
    pub fn for_model(model: &ModelSystem, beta: f64, threshold: f64) -> Result<Self> {
        let form = separable(model)?;
        let e_top = retention_energy(beta, threshold);
        let w_max = model.local_frequencies().iter().cloned().fold(0.0, f64::max);
        let v_wall = (40.0 / beta).max(e_top + 30.0 * HBAR * w_max);
        let mut axes = Vec::with_capacity(form.len());
        for (term, &m) in form.iter().zip(model.masses()) {
            let (lower, upper) = match *term {
                OneDimTerm::Harmonic { stiffness } => {
                    let x = (2.0 * v_wall / stiffness).sqrt();
                    (-x, x)
                }
                OneDimTerm::Morse { d, alpha } => {
                    let lower = -(1.0 + (v_wall / d).sqrt()).ln() / alpha;
                    (lower, 200f64.ln() / alpha)
                }
            };
            let p_max = (2.0 * m * (e_top + v_wall)).sqrt() / HBAR;
            let raw = 1.5 * (upper - lower) * p_max / PI;
            let points = ((raw / 64.0).ceil() as usize * 64).max(128) - 1;
            axes.push(AxisGrid::new(lower, upper, points)?);
        }
        Ok(GridSpec {
            axes,
            basis_cutoff: e_top + 6.0 * HBAR * w_max,
        })
    }

    pub fn doubled(&self) -> Self {
        GridSpec {
            axes: self.axes.iter().map(AxisGrid::doubled).collect(),
            basis_cutoff: self.basis_cutoff,
        }
    }
}

/// Energy above the ground state at which the Boltzmann factor reaches
/// `threshold / 10`.
pub fn retention_energy(beta: f64, threshold: f64) -> f64 {
    (10.0 / threshold).ln() / beta
}

fn separable(model: &ModelSystem) -> Result<Vec<OneDimTerm>> {
    model
        .potential_surface()
        .separable_form()
        .map(|f| f.terms)
        .ok_or_else(|| Error::Parameter("quantum reference needs a separable potential".into()))
}

/// Sine-DVR kinetic matrix `-ħ²/(2m) d²/dx²` with Dirichlet walls.
pub fn sine_dvr_kinetic(grid: &AxisGrid, mass: f64) -> DMatrix<f64> {
    let n = grid.points;
    let intervals = (n + 1) as f64;
    let length = grid.upper - grid.lower;
    let pref = HBAR * HBAR / (2.0 * mass) * PI * PI / (2.0 * length * length);
    let inv_sin2 = |x: f64| 1.0 / (x.sin() * x.sin());
    DMatrix::from_fn(n, n, |a, b| {
        let (i, j) = ((a + 1) as f64, (b + 1) as f64);
        if a == b {
            pref * ((2.0 * intervals * intervals + 1.0) / 3.0 - inv_sin2(PI * i / intervals))
        } else {
            let sign = if (a + b) % 2 == 0 { 1.0 } else { -1.0 };
            pref * sign
                * (inv_sin2(PI * (i - j) / (2.0 * intervals))
                    - inv_sin2(PI * (i + j) / (2.0 * intervals)))
        }
    })
}

/// Eigenpairs of a one-dimensional Hamiltonian on a sine grid, ascending.
#[derive(Debug, Clone)]
pub struct Eigen1d {
    pub grid: AxisGrid,
    pub energies: Vec<f64>,
    /// Grid values of the eigenfunctions, one column per state.
    pub vectors: DMatrix<f64>,
}

impl Eigen1d {
    pub fn solve(term: &OneDimTerm, mass: f64, grid: AxisGrid) -> Self {
        let nodes = grid.nodes();
        let mut h = sine_dvr_kinetic(&grid, mass);
        for (k, &x) in nodes.iter().enumerate() {
            h[(k, k)] += term.value(x);
        }
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..grid.points).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(grid.points, grid.points, |r, c| eig.eigenvectors[(r, order[c])]);
        Eigen1d {
            grid,
            energies,
            vectors,
        }
    }

    /// Position matrix between the lowest `n` states.
    pub fn position_matrix(&self, n: usize) -> DMatrix<f64> {
        let nodes = self.grid.nodes();
        let v = self.vectors.columns(0, n);
        let mut xv = v.clone_owned();
        for (r, &x) in nodes.iter().enumerate() {
            xv.row_mut(r).scale_mut(x);
        }
        v.transpose() * xv
    }
}

/// Eigenvalues and system-coordinate matrix elements of a model Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    pub energies: Vec<f64>,
    /// `⟨a|q_i|b⟩` for every system coordinate `i`.
    pub dipoles: Vec<DMatrix<f64>>,
    pub grid: GridSpec,
    pub basis_size: usize,
}

impl SpectralDecomposition {
    pub fn n_states(&self) -> usize {
        self.energies.len()
    }

    /// Normalized Boltzmann populations of the retained states.
    pub fn populations(&self, beta: f64) -> Vec<f64> {
        let e0 = self.energies[0];
        let w: Vec<f64> = self.energies.iter().map(|e| (-beta * (e - e0)).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    /// Retains the lowest `n` states.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_states());
        SpectralDecomposition {
            energies: self.energies[..n].to_vec(),
            dipoles: self
                .dipoles
                .iter()
                .map(|d| d.view((0, 0), (n, n)).clone_owned())
                .collect(),
            grid: self.grid.clone(),
            basis_size: self.basis_size,
        }
    }
}

/// Lowest `n_states` eigenpairs of the model on `grid` (all of them if the
/// basis is smaller).
pub fn solve_eigenproblem(
    model: &ModelSystem,
    grid: &GridSpec,
    n_states: usize,
) -> Result<SpectralDecomposition> {
    let terms = separable(model)?;
    let couplings = model
        .potential_surface()
        .separable_form()
        .map(|f| f.bilinear)
        .unwrap_or_default();
    if grid.axes.len() != terms.len() {
        return Err(Error::Dimension {
            expected: terms.len(),
            got: grid.axes.len(),
        });
    }
    let factors: Vec<Eigen1d> = terms
        .iter()
        .zip(model.masses())
        .zip(&grid.axes)
        .map(|((t, &m), &g)| Eigen1d::solve(t, m, g))
        .collect();

    if factors.len() == 1 {
        let f = &factors[0];
        let n = n_states.min(f.energies.len());
        return Ok(SpectralDecomposition {
            energies: f.energies[..n].to_vec(),
            dipoles: vec![f.position_matrix(n)],
            grid: grid.clone(),
            basis_size: f.energies.len(),
        });
    }

    // factor states within the cutoff, then the pruned product basis
    let ground: Vec<f64> = factors.iter().map(|f| f.energies[0]).collect();
    let counts: Vec<usize> = factors
        .iter()
        .zip(&ground)
        .map(|(f, e0)| f.energies.iter().take_while(|&&e| e - e0 <= grid.basis_cutoff).count())
        .collect();
    let positions: Vec<DMatrix<f64>> = factors.iter().zip(&counts).map(|(f, &n)| f.position_matrix(n)).collect();
    let mut basis = Vec::new();
    enumerate_basis(&factors, &ground, &counts, grid.basis_cutoff, &mut vec![0; factors.len()], 0, 0.0, &mut basis);
    let index: HashMap<Vec<usize>, usize> = basis.iter().cloned().enumerate().map(|(k, b)| (b, k)).collect();
    let nb = basis.len();
    let n_states = n_states.min(nb);

    let mut h = DMatrix::zeros(nb, nb);
    for (a, tuple) in basis.iter().enumerate() {
        h[(a, a)] = tuple.iter().enumerate().map(|(i, &k)| factors[i].energies[k]).sum();
        for &(i, j, c) in &couplings {
            let mut other = tuple.clone();
            for li in 0..counts[i] {
                let xi = positions[i][(tuple[i], li)];
                other[i] = li;
                for lj in 0..counts[j] {
                    other[j] = lj;
                    if let Some(&b) = index.get(&other) {
                        h[(a, b)] += c * xi * positions[j][(tuple[j], lj)];
                    }
                }
            }
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order.truncate(n_states);
    let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let u = DMatrix::from_fn(nb, n_states, |r, c| eig.eigenvectors[(r, order[c])]);

    let mut dipoles = Vec::with_capacity(model.n_system());
    for i in 0..model.n_system() {
        let mut xu = DMatrix::zeros(nb, n_states);
        for (a, tuple) in basis.iter().enumerate() {
            let mut other = tuple.clone();
            for l in 0..counts[i] {
                other[i] = l;
                if let Some(&b) = index.get(&other) {
                    let x = positions[i][(tuple[i], l)];
                    for c in 0..n_states {
                        xu[(a, c)] += x * u[(b, c)];
                    }
                }
            }
        }
        dipoles.push(u.transpose() * xu);
    }
    Ok(SpectralDecomposition {
        energies,
        dipoles,
        grid: grid.clone(),
        basis_size: nb,
    })
}

#[allow(clippy::too_many_arguments)]
fn enumerate_basis(
    factors: &[Eigen1d],
    ground: &[f64],
    counts: &[usize],
    cutoff: f64,
    current: &mut Vec<usize>,
    dof: usize,
    used: f64,
    out: &mut Vec<Vec<usize>>,
) {
    if dof == factors.len() {
        out.push(current.clone());
        return;
    }
    for k in 0..counts[dof] {
        let e = used + factors[dof].energies[k] - ground[dof];
        if e > cutoff {
            break;
        }
        current[dof] = k;
        enumerate_basis(factors, ground, counts, cutoff, current, dof + 1, e, out);
    }
}

/// Populations below this level are ignored by the eigenvalue convergence
/// test; box-discretized continuum states converge only algebraically.
pub const SIGNIFICANT_POPULATION: f64 = 1e-6;

/// Eigenvalue changes under grid doubling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConvergence {
    /// Largest change among states with population above [`SIGNIFICANT_POPULATION`].
    pub max_change: f64,
    /// Largest change among all retained states.
    pub max_change_all: f64,
    pub significant_states: usize,
}

/// Number of states needed so that the highest one has a Boltzmann factor
/// below `threshold`.
pub fn retained_count(spectrum: &SpectralDecomposition, beta: f64, threshold: f64) -> Result<usize> {
    let e_ret = retention_energy(beta, threshold);
    let e0 = spectrum.energies[0];
    let n = spectrum.energies.iter().take_while(|&&e| e - e0 <= e_ret).count() + 1;
    if n > spectrum.n_states() {
        return Err(Error::Truncation {
            population: spectrum.populations(beta).last().copied().unwrap_or(1.0),
            threshold,
        });
    }
    Ok(n)
}

/// Solves on `grid` and on the doubled grid, keeps the thermally relevant
/// states, and checks that the significant eigenvalues moved by less than
/// `tolerance`. Returns the coarse and fine decompositions.
pub fn solve_converged(
    model: &ModelSystem,
    beta: f64,
    grid: &GridSpec,
    threshold: f64,
    tolerance: f64,
) -> Result<(SpectralDecomposition, SpectralDecomposition, GridConvergence)> {
    let full = solve_eigenproblem(model, grid, usize::MAX)?;
    let n = retained_count(&full, beta, threshold)?;
    let coarse = full.truncated(n);
    let fine = solve_eigenproblem(model, &grid.doubled(), n)?;
    let rho = coarse.populations(beta);
    let significant_states = rho.iter().filter(|&&p| p >= SIGNIFICANT_POPULATION).count();
    let change = |k: usize| (coarse.energies[k] - fine.energies[k]).abs();
    let report = GridConvergence {
        max_change: (0..significant_states).map(change).fold(0.0, f64::max),
        max_change_all: (0..n).map(change).fold(0.0, f64::max),
        significant_states,
    };
    if !(report.max_change < tolerance) {
        return Err(Error::NotConverged {
            change: report.max_change,
        });
    }
    Ok((coarse, fine, report))
}

/// `R(t) = (2/ħ) Σ_{a<b} |q_ab|² (ρ_a - ρ_b) sin((E_b - E_a) t / ħ)`, summed
/// over system coordinates.
pub fn response_quantum(
    spectrum: &SpectralDecomposition,
    beta: f64,
    grid: &TimeGrid,
    threshold: f64,
) -> Result<ResponseSeries> {
    let rho = spectrum.populations(beta);
    let top = *rho.last().expect("non-empty spectrum");
    if !(top < threshold) {
        return Err(Error::Truncation {
            population: top,
            threshold,
        });
    }
    let terms = transition_terms(spectrum, &rho);
    let times = grid.times();
    let values = times
        .iter()
        .map(|&t| {
            let r: f64 = terms.iter().map(|(a, w)| a * (w * t / HBAR).sin()).sum();
            Complex64::new(2.0 * r / HBAR, 0.0)
        })
        .collect();
    Ok(ResponseSeries {
        method: Method::Quantum,
        stderr: vec![Complex64::new(0.0, 0.0); times.len()],
        times,
        values,
        metadata: SeriesMetadata {
            model: String::new(),
            beta,
            widths: Vec::new(),
            n_samples: 0,
            accepted: 0,
            rejected: 0,
            seed: 0,
        },
    })
}

/// Non-negligible `(|q_ab|² (ρ_a - ρ_b), E_b - E_a)` pairs with `a < b`.
fn transition_terms(spectrum: &SpectralDecomposition, rho: &[f64]) -> Vec<(f64, f64)> {
    let n = spectrum.n_states();
    let mut terms = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let q2: f64 = spectrum.dipoles.iter().map(|d| d[(a, b)] * d[(a, b)]).sum();
            let amp = q2 * (rho[a] - rho[b]);
            if amp.abs() > 1e-18 {
                terms.push((amp, spectrum.energies[b] - spectrum.energies[a]));
            }
        }
    }
    terms
}

/// The full complex double sum `(i/ħ) Σ_ab |q_ab|² (ρ_a - ρ_b) e^{i(E_a-E_b)t/ħ}`.
pub fn response_quantum_complex(spectrum: &SpectralDecomposition, beta: f64, times: &[f64]) -> Vec<Complex64> {
    let rho = spectrum.populations(beta);
    let n = spectrum.n_states();
    times
        .iter()
        .map(|&t| {
            let mut r = Complex64::new(0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let q2: f64 = spectrum.dipoles.iter().map(|d| d[(a, b)] * d[(a, b)]).sum();
                    let phase = (spectrum.energies[a] - spectrum.energies[b]) * t / HBAR;
                    r += Complex64::from_polar(q2 * (rho[a] - rho[b]), phase);
                }
            }
            r * Complex64::new(0.0, 1.0 / HBAR)
        })
        .collect()
}

/// Sine-form response for arbitrary state populations.
pub fn response_with_populations(
    spectrum: &SpectralDecomposition,
    populations: &[f64],
    times: &[f64],
) -> Vec<f64> {
    let terms = transition_terms(spectrum, populations);
    times
        .iter()
        .map(|&t| 2.0 / HBAR * terms.iter().map(|(a, w)| a * (w * t / HBAR).sin()).sum::<f64>())
        .collect()
}
