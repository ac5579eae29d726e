//! Model Hamiltonians: a Morse oscillator bilinearly coupled to harmonic bath
//! modes, plus a purely harmonic family used as an exactness oracle.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point `z = (p, q)` in `2N`-dimensional phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl PhasePoint {
    pub fn zeros(n: usize) -> Self {
        PhasePoint {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::Dimension {
                expected: p.len(),
                got: q.len(),
            });
        }
        Ok(PhasePoint { p, q })
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|x| x.is_finite())
    }

    /// `self + scale * other`, component-wise.
    pub fn shifted(&self, other: &PhasePoint, scale: f64) -> PhasePoint {
        PhasePoint {
            p: self.p.iter().zip(&other.p).map(|(a, b)| a + scale * b).collect(),
            q: self.q.iter().zip(&other.q).map(|(a, b)| a + scale * b).collect(),
        }
    }
}

/// One-dimensional potential term of a separable Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OneDimTerm {
    /// `d (1 - exp(-alpha x))^2`
    Morse { d: f64, alpha: f64 },
    /// `stiffness x^2 / 2`
    Harmonic { stiffness: f64 },
}

impl OneDimTerm {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            OneDimTerm::Morse { d, alpha } => {
                let u = 1.0 - (-alpha * x).exp();
                d * u * u
            }
            OneDimTerm::Harmonic { stiffness } => 0.5 * stiffness * x * x,
        }
    }

    /// Curvature at the minimum.
    pub fn curvature_at_minimum(&self) -> f64 {
        match *self {
            OneDimTerm::Morse { d, alpha } => 2.0 * d * alpha * alpha,
            OneDimTerm::Harmonic { stiffness } => stiffness,
        }
    }
}

/// Sum of one-dimensional terms plus bilinear couplings `c q_i q_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableForm {
    pub terms: Vec<OneDimTerm>,
    pub bilinear: Vec<(usize, usize, f64)>,
}

/// Abstract potential energy surface: value, gradient and Hessian.
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Returns `V(q)` and writes the gradient and the row-major Hessian.
    fn evaluate(&self, q: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64;

    fn value(&self, q: &[f64]) -> f64;

    /// Location of the reference minimum.
    fn minimum(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Separable decomposition, when one exists.
    fn separable_form(&self) -> Option<SeparableForm> {
        None
    }

    fn describe(&self) -> String;
}

/// Parameters of the Morse system and its harmonic bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorseBathParams {
    /// Dissociation energy.
    pub d: f64,
    /// Range parameter.
    pub alpha: f64,
    /// Bath detuning factor: the bath frequency is `chi * omega_e`.
    pub chi: f64,
    /// Bilinear system-bath coupling strength.
    pub coupling: f64,
}

impl MorseBathParams {
    /// `D = 100`, `alpha = 0.2 sqrt(2)`, `chi = 0.9`, `coupling = 0.1`.
    pub fn reference() -> Self {
        MorseBathParams {
            d: 100.0,
            alpha: 0.2 * 2f64.sqrt(),
            chi: 0.9,
            coupling: 0.1,
        }
    }

    pub fn uncoupled(self) -> Self {
        MorseBathParams {
            coupling: 0.0,
            ..self
        }
    }

    /// Harmonic frequency at the Morse minimum, `alpha sqrt(2 D)`.
    pub fn omega_e(&self) -> f64 {
        self.alpha * (2.0 * self.d).sqrt()
    }

    /// Anharmonicity constant `omega_e / (4 D)`.
    pub fn x_e(&self) -> f64 {
        self.omega_e() / (4.0 * self.d)
    }

    /// Morse eigenvalue `E_n = omega_e (n + 1/2) - x_e omega_e (n + 1/2)^2` (unit mass, ħ = 1).
    pub fn morse_level(&self, n: usize) -> f64 {
        let v = n as f64 + 0.5;
        self.omega_e() * v - self.x_e() * self.omega_e() * v * v
    }

    /// Number of levels below the dissociation limit, i.e. all `n < 1/(2 x_e) - 1/2`.
    pub fn bound_state_count(&self) -> usize {
        let nmax = 1.0 / (2.0 * self.x_e()) - 0.5;
        (nmax.ceil() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.alpha > 0.0 && self.chi > 0.0) {
            return Err(Error::Parameter(format!(
                "Morse parameters must be positive (D = {}, alpha = {}, chi = {})",
                self.d, self.alpha, self.chi
            )));
        }
        if !self.coupling.is_finite() {
            return Err(Error::Parameter("coupling must be finite".into()));
        }
        Ok(())
    }
}

/// `V = D(1 - e^{-α q_0})^2 + Σ_k [D (χ α q_k)^2 - γ_c q_0 q_k]`.
///
/// Coordinate 0 is the Morse oscillator, coordinates `1..=n_bath` are the bath.
#[derive(Debug, Clone, PartialEq)]
pub struct MorseBath {
    params: MorseBathParams,
    n_bath: usize,
}

impl MorseBath {
    pub fn new(params: MorseBathParams, n_bath: usize) -> Result<Self> {
        params.validate()?;
        Ok(MorseBath { params, n_bath })
    }

    pub fn params(&self) -> &MorseBathParams {
        &self.params
    }

    fn bath_stiffness(&self) -> f64 {
        let a = self.params.chi * self.params.alpha;
        2.0 * self.params.d * a * a
    }
}

impl Potential for MorseBath {
    fn dim(&self) -> usize {
        1 + self.n_bath
    }

    fn evaluate(&self, q: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = self.dim();
        let MorseBathParams { d, alpha, coupling, .. } = self.params;
        let k = self.bath_stiffness();
        let e = (-alpha * q[0]).exp();
        let u = 1.0 - e;
        hess[..n * n].fill(0.0);

        let mut v = d * u * u;
        let mut bath_sum = 0.0;
        for i in 1..n {
            let x = q[i];
            v += 0.5 * k * x * x - coupling * q[0] * x;
            bath_sum += x;
            grad[i] = k * x - coupling * q[0];
            hess[i * n + i] = k;
            hess[i] = -coupling;
            hess[i * n] = -coupling;
        }
        grad[0] = 2.0 * d * alpha * e * u - coupling * bath_sum;
        hess[0] = 2.0 * d * alpha * alpha * e * (2.0 * e - 1.0);
        v
    }

    fn value(&self, q: &[f64]) -> f64 {
        let MorseBathParams { d, alpha, coupling, .. } = self.params;
        let k = self.bath_stiffness();
        let u = 1.0 - (-alpha * q[0]).exp();
        d * u * u
            + q[1..]
                .iter()
                .map(|&x| 0.5 * k * x * x - coupling * q[0] * x)
                .sum::<f64>()
    }

    fn separable_form(&self) -> Option<SeparableForm> {
        let MorseBathParams { d, alpha, coupling, .. } = self.params;
        let mut terms = vec![OneDimTerm::Morse { d, alpha }];
        let mut bilinear = Vec::new();
        for i in 1..self.dim() {
            terms.push(OneDimTerm::Harmonic {
                stiffness: self.bath_stiffness(),
            });
            if coupling != 0.0 {
                bilinear.push((0, i, -coupling));
            }
        }
        Some(SeparableForm { terms, bilinear })
    }

    fn describe(&self) -> String {
        let p = &self.params;
        format!(
            "morse_bath(D={}, alpha={}, chi={}, coupling={}, n_bath={})",
            p.d, p.alpha, p.chi, p.coupling, self.n_bath
        )
    }
}

/// Coupled harmonic oscillators `Σ ½ k_i q_i² + Σ c_ij q_i q_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicOscillators {
    stiffness: Vec<f64>,
    bilinear: Vec<(usize, usize, f64)>,
}

impl HarmonicOscillators {
    pub fn new(stiffness: Vec<f64>, bilinear: Vec<(usize, usize, f64)>) -> Result<Self> {
        if stiffness.is_empty() || stiffness.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::Parameter("harmonic stiffness must be positive".into()));
        }
        for &(i, j, _) in &bilinear {
            if i == j || i >= stiffness.len() || j >= stiffness.len() {
                return Err(Error::Parameter(format!("invalid coupling pair ({i}, {j})")));
            }
        }
        Ok(HarmonicOscillators { stiffness, bilinear })
    }
}

impl Potential for HarmonicOscillators {
    fn dim(&self) -> usize {
        self.stiffness.len()
    }

    fn evaluate(&self, q: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = self.dim();
        hess[..n * n].fill(0.0);
        let mut v = 0.0;
        for i in 0..n {
            let k = self.stiffness[i];
            v += 0.5 * k * q[i] * q[i];
            grad[i] = k * q[i];
            hess[i * n + i] = k;
        }
        for &(i, j, c) in &self.bilinear {
            v += c * q[i] * q[j];
            grad[i] += c * q[j];
            grad[j] += c * q[i];
            hess[i * n + j] += c;
            hess[j * n + i] += c;
        }
        v
    }

    fn value(&self, q: &[f64]) -> f64 {
        let diag: f64 = self
            .stiffness
            .iter()
            .zip(q)
            .map(|(k, x)| 0.5 * k * x * x)
            .sum();
        diag + self.bilinear.iter().map(|&(i, j, c)| c * q[i] * q[j]).sum::<f64>()
    }

    fn separable_form(&self) -> Option<SeparableForm> {
        Some(SeparableForm {
            terms: self
                .stiffness
                .iter()
                .map(|&stiffness| OneDimTerm::Harmonic { stiffness })
                .collect(),
            bilinear: self.bilinear.clone(),
        })
    }

    fn describe(&self) -> String {
        format!(
            "harmonic(stiffness={:?}, couplings={:?})",
            self.stiffness, self.bilinear
        )
    }
}

/// A Hamiltonian `Σ p_i²/(2 m_i) + V(q)` with its system/bath partition.
///
/// The first `n_system` coordinates are IR active; the rest form the bath.
#[derive(Debug, Clone)]
pub struct ModelSystem {
    potential: Arc<dyn Potential>,
    masses: Vec<f64>,
    n_system: usize,
}

impl ModelSystem {
    pub fn new(potential: Arc<dyn Potential>, masses: Vec<f64>, n_system: usize) -> Result<Self> {
        let n = potential.dim();
        if masses.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: masses.len(),
            });
        }
        if masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Parameter("masses must be positive".into()));
        }
        if n_system == 0 || n_system > n {
            return Err(Error::Parameter(format!(
                "n_system must lie in 1..={n}, got {n_system}"
            )));
        }
        Ok(ModelSystem {
            potential,
            masses,
            n_system,
        })
    }

    /// Unit-mass Morse oscillator coupled to `n_bath` harmonic modes.
    pub fn morse_bath(params: MorseBathParams, n_bath: usize) -> Result<Self> {
        let pot = MorseBath::new(params, n_bath)?;
        Self::new(Arc::new(pot), vec![1.0; 1 + n_bath], 1)
    }

    /// Harmonic oscillators with frequencies `omega_i` and masses `m_i`;
    /// couplings are `(i, j, c)` terms `c q_i q_j`.
    pub fn harmonic(
        frequencies: &[f64],
        masses: Vec<f64>,
        n_system: usize,
        couplings: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if frequencies.len() != masses.len() {
            return Err(Error::Dimension {
                expected: frequencies.len(),
                got: masses.len(),
            });
        }
        let stiffness = frequencies.iter().zip(&masses).map(|(w, m)| m * w * w).collect();
        Self::new(
            Arc::new(HarmonicOscillators::new(stiffness, couplings)?),
            masses,
            n_system,
        )
    }

    pub fn n_total(&self) -> usize {
        self.masses.len()
    }

    pub fn n_system(&self) -> usize {
        self.n_system
    }

    pub fn n_bath(&self) -> usize {
        self.n_total() - self.n_system
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn potential_surface(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    /// Same Hamiltonian with a different system/bath split.
    pub fn with_n_system(&self, n_system: usize) -> Result<Self> {
        Self::new(self.potential.clone(), self.masses.clone(), n_system)
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.n_total() {
            return Err(Error::Dimension {
                expected: self.n_total(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn potential(&self, q: &[f64]) -> Result<f64> {
        self.check(q)?;
        Ok(self.potential.value(q))
    }

    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check(q)?;
        let n = self.n_total();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        self.potential.evaluate(q, &mut g, &mut h);
        Ok(g)
    }

    /// Row-major `N x N` Hessian.
    pub fn hessian(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check(q)?;
        let n = self.n_total();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        self.potential.evaluate(q, &mut g, &mut h);
        Ok(h)
    }

    pub fn kinetic(&self, p: &[f64]) -> f64 {
        p.iter().zip(&self.masses).map(|(p, m)| 0.5 * p * p / m).sum()
    }

    pub fn classical_hamiltonian(&self, z: &PhasePoint) -> Result<f64> {
        self.check(&z.p)?;
        Ok(self.kinetic(&z.p) + self.potential(&z.q)?)
    }

    /// Harmonic frequencies `sqrt(V''_ii / m_i)` at the reference minimum.
    pub fn local_frequencies(&self) -> Vec<f64> {
        let n = self.n_total();
        let h = self
            .hessian(&self.potential.minimum())
            .expect("minimum has model dimension");
        (0..n).map(|i| (h[i * n + i] / self.masses[i]).sqrt()).collect()
    }

    pub fn describe(&self) -> String {
        format!(
            "{} masses={:?} n_system={}",
            self.potential.describe(),
            self.masses,
            self.n_system
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(coupling: f64) -> ModelSystem {
        ModelSystem::morse_bath(
            MorseBathParams {
                coupling,
                ..MorseBathParams::reference()
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn derived_constants() {
        let p = MorseBathParams::reference();
        assert!((p.omega_e() - 4.0).abs() < 1e-12);
        assert!((p.x_e() - 0.01).abs() < 1e-14);
        assert_eq!(p.bound_state_count(), 50);
    }

    #[test]
    fn potential_examples() {
        let m = reference(0.1);
        assert_eq!(m.potential(&[0.0, 0.0]).unwrap(), 0.0);
        let far = m.potential(&[200.0, 0.0]).unwrap();
        assert!((far - 100.0).abs() < 1e-9);
        let expected = 100.0 * (1.0 - (-0.02 * 2f64.sqrt()).exp()).powi(2);
        assert!((m.potential(&[0.1, 0.0]).unwrap() - expected).abs() < 1e-14);
        let z = PhasePoint::new(vec![0.0, 0.0], vec![0.1, 0.0]).unwrap();
        assert!((m.classical_hamiltonian(&z).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn kinetic_only_hamiltonian() {
        let m = reference(0.1);
        let z = PhasePoint::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.classical_hamiltonian(&z).unwrap(), 0.5);
        assert_eq!(m.classical_hamiltonian(&PhasePoint::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn gradient_and_hessian_at_origin() {
        let m = reference(0.0);
        assert!(m.gradient(&[0.0, 0.0]).unwrap().iter().all(|g| g.abs() < 1e-15));
        let h = m.hessian(&[0.0, 0.0]).unwrap();
        assert!((h[0] - 16.0).abs() < 1e-12);
        assert!((h[3] - 12.96).abs() < 1e-12);

        let c = reference(0.1);
        for q in [[0.0, 0.0], [1.5, -0.3], [-0.7, 2.0]] {
            let h = c.hessian(&q).unwrap();
            assert_eq!(h[1], -0.1);
            assert_eq!(h[2], -0.1);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = reference(0.1);
        assert!(matches!(
            m.potential(&[0.0]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
        assert!(m.gradient(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn invalid_models_are_rejected() {
        let bad = MorseBathParams {
            d: -1.0,
            ..MorseBathParams::reference()
        };
        assert!(ModelSystem::morse_bath(bad, 1).is_err());
        assert!(ModelSystem::harmonic(&[1.0], vec![0.0], 1, vec![]).is_err());
        assert!(ModelSystem::harmonic(&[1.0, 2.0], vec![1.0, 1.0], 0, vec![]).is_err());
    }

    #[test]
    fn local_frequencies_of_reference_model() {
        let w = reference(0.0).local_frequencies();
        assert!((w[0] - 4.0).abs() < 1e-12);
        assert!((w[1] - 3.6).abs() < 1e-12);
    }

    #[test]
    fn separable_form_reproduces_potential() {
        let m = reference(0.1);
        let form = m.potential_surface().separable_form().unwrap();
        for q in [[0.3, -0.2], [2.0, 1.0], [-1.0, 0.5]] {
            let direct = m.potential(&q).unwrap();
            let sum: f64 = form
                .terms
                .iter()
                .zip(&q)
                .map(|(t, &x)| t.value(x))
                .sum::<f64>()
                + form.bilinear.iter().map(|&(i, j, c)| c * q[i] * q[j]).sum::<f64>();
            assert!((direct - sum).abs() < 1e-12);
        }
    }
}
