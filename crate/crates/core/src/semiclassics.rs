//! Closed-form semiclassical kernels: coherent-state overlaps, the Herman-Kluk
//! prefactor matrix, and the Gaussian matrices that arise when the
//! difference-variable integral is linearized.
//!
//! Phase-space vectors are ordered `(p, q)` throughout, and the monodromy
//! matrix blocks are `m11 = ∂p_t/∂p`, `m12 = ∂p_t/∂q`, `m21 = ∂q_t/∂p`,
//! `m22 = ∂q_t/∂q`.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::Monodromy;
use crate::model::{ModelSystem, PhasePoint};
use crate::{Error, Result, HBAR};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Diagonal coherent-state width parameters `γ`, split into system and bath blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthMatrix {
    gamma: Vec<f64>,
    n_system: usize,
}

impl WidthMatrix {
    pub fn new(gamma: Vec<f64>, n_system: usize) -> Result<Self> {
        if gamma.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Parameter(format!(
                "width parameters must be positive, got {gamma:?}"
            )));
        }
        if n_system > gamma.len() {
            return Err(Error::Parameter("system block larger than width matrix".into()));
        }
        Ok(WidthMatrix { gamma, n_system })
    }

    /// `γ_i = m_i ω_i / ħ` from the local harmonic frequencies at the minimum.
    pub fn matched(model: &ModelSystem) -> Self {
        let gamma = model
            .local_frequencies()
            .iter()
            .zip(model.masses())
            .map(|(w, m)| m * w / HBAR)
            .collect();
        WidthMatrix {
            gamma,
            n_system: model.n_system(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.gamma
    }

    pub fn system(&self) -> &[f64] {
        &self.gamma[..self.n_system]
    }

    pub fn bath(&self) -> &[f64] {
        &self.gamma[self.n_system..]
    }

    pub fn n_system(&self) -> usize {
        self.n_system
    }
}

/// Exponent of `⟨z2|z1⟩` restricted to the coordinates in `dofs`:
/// `-¼ Δqᵀγ Δq - (i/ħ) p̄ᵀ Δq - (1/4ħ²) Δpᵀ γ⁻¹ Δp` with `Δz = z1 - z2`.
pub fn log_overlap_dofs(
    z2: &PhasePoint,
    z1: &PhasePoint,
    gamma: &WidthMatrix,
    dofs: Range<usize>,
) -> Complex64 {
    let g = gamma.diagonal();
    let mut re = 0.0;
    let mut im = 0.0;
    for i in dofs {
        let dq = z1.q[i] - z2.q[i];
        let dp = z1.p[i] - z2.p[i];
        let pbar = 0.5 * (z1.p[i] + z2.p[i]);
        re -= 0.25 * g[i] * dq * dq + dp * dp / (4.0 * HBAR * HBAR * g[i]);
        im -= pbar * dq / HBAR;
    }
    Complex64::new(re, im)
}

/// Coherent-state overlap `⟨z2|z1⟩`.
pub fn overlap(z2: &PhasePoint, z1: &PhasePoint, gamma: &WidthMatrix) -> Complex64 {
    log_overlap_dofs(z2, z1, gamma, 0..gamma.dim()).exp()
}

/// Writes the row-major Herman-Kluk matrix
/// `h = ½(m11 + γ m22 γ⁻¹ - iħ γ m21 + (i/ħ) m12 γ⁻¹)` from a row-major
/// `2N x 2N` monodromy slice.
pub(crate) fn prefactor_matrix_into(m: &[f64], gamma: &[f64], out: &mut [Complex64]) {
    let n = gamma.len();
    let w = 2 * n;
    for i in 0..n {
        for j in 0..n {
            let m11 = m[i * w + j];
            let m12 = m[i * w + n + j];
            let m21 = m[(n + i) * w + j];
            let m22 = m[(n + i) * w + n + j];
            out[i * n + j] = Complex64::new(
                0.5 * (m11 + gamma[i] * m22 / gamma[j]),
                0.5 * (m12 / (HBAR * gamma[j]) - HBAR * gamma[i] * m21),
            );
        }
    }
}

/// The Herman-Kluk matrix `h` whose determinant is `C²`.
pub fn prefactor_matrix(m: &Monodromy, gamma: &WidthMatrix) -> DMatrix<Complex64> {
    let n = gamma.dim();
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    prefactor_matrix_into(m.as_slice(), gamma.diagonal(), &mut buf);
    DMatrix::from_row_slice(n, n, &buf)
}

/// `det h`, i.e. the square of the Herman-Kluk prefactor up to its branch.
pub fn prefactor_determinant(m: &Monodromy, gamma: &WidthMatrix) -> Complex64 {
    prefactor_matrix(m, gamma).determinant()
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
}

fn diag_inv(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        v.len(),
        v.iter().map(|g| 1.0 / g),
    ))
}

/// The `2N x 2N` matrix `A` of the linearized Gaussian `exp(-Δzᵀ A Δz)`,
/// ordered `(Δp, Δq)`.
pub fn matrix_a(m: &Monodromy, gamma: &WidthMatrix) -> DMatrix<f64> {
    let n = gamma.dim();
    let h2 = HBAR * HBAR;
    let g = diag(gamma.diagonal());
    let gi = diag_inv(gamma.diagonal());
    let (m11, m12, m21, m22) = m.blocks();

    let a11 = &gi + m11.transpose() * &gi * &m11 + m21.transpose() * &g * &m21 * h2;
    let a12 = m21.transpose() * &g * &m22 * h2 + m11.transpose() * &gi * &m12;
    let a21 = m22.transpose() * &g * &m21 * h2 + m12.transpose() * &gi * &m11;
    let a22 = &g * h2 + m22.transpose() * &g * &m22 * h2 + m12.transpose() * &gi * &m12;

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&a11);
    a.view_mut((0, n), (n, n)).copy_from(&a12);
    a.view_mut((n, 0), (n, n)).copy_from(&a21);
    a.view_mut((n, n), (n, n)).copy_from(&a22);
    a / (4.0 * h2)
}

/// The `2n x 2n` bath matrix `A_B` of the hybrid estimator.
///
/// The rectangular blocks `m̃_ij` keep all `N` rows of `m_ij` and only the bath
/// columns `bath`; inner products use the full `N`-dimensional `γ`, while the
/// leading terms use the bath sub-block `γ_B`.
pub fn matrix_a_b(m: &Monodromy, gamma: &WidthMatrix, bath: Range<usize>) -> DMatrix<f64> {
    let nb = bath.len();
    let h2 = HBAR * HBAR;
    if nb == 0 {
        return DMatrix::zeros(0, 0);
    }
    let g = diag(gamma.diagonal());
    let gi = diag_inv(gamma.diagonal());
    let gb = diag(&gamma.diagonal()[bath.clone()]);
    let gbi = diag_inv(&gamma.diagonal()[bath.clone()]);
    let (m11, m12, m21, m22) = m.blocks();
    let cols = |b: &DMatrix<f64>| b.columns(bath.start, nb).into_owned();
    let (t11, t12, t21, t22) = (cols(&m11), cols(&m12), cols(&m21), cols(&m22));

    let a11 = &gbi + t11.transpose() * &gi * &t11 + t21.transpose() * &g * &t21 * h2;
    let a12 = t21.transpose() * &g * &t22 * h2 + t11.transpose() * &gi * &t12;
    let a21 = t22.transpose() * &g * &t21 * h2 + t12.transpose() * &gi * &t11;
    let a22 = &gb * h2 + t22.transpose() * &g * &t22 * h2 + t12.transpose() * &gi * &t12;

    let mut a = DMatrix::zeros(2 * nb, 2 * nb);
    a.view_mut((0, 0), (nb, nb)).copy_from(&a11);
    a.view_mut((0, nb), (nb, nb)).copy_from(&a12);
    a.view_mut((nb, 0), (nb, nb)).copy_from(&a21);
    a.view_mut((nb, nb), (nb, nb)).copy_from(&a22);
    a / (4.0 * h2)
}

/// `r = m21ᵀγ + (i/ħ) m11ᵀ` and `s = m22ᵀγ + (i/ħ) m12ᵀ`.
pub fn r_s_matrices(m: &Monodromy, gamma: &WidthMatrix) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let g = diag(gamma.diagonal());
    let (m11, m12, m21, m22) = m.blocks();
    let combine = |re: DMatrix<f64>, im: DMatrix<f64>| {
        re.zip_map(&im, |a, b| Complex64::new(a, b / HBAR))
    };
    let r = combine(m21.transpose() * &g, m11.transpose());
    let s = combine(m22.transpose() * &g, m12.transpose());
    (r, s)
}

fn cdiag(v: &[f64], f: impl Fn(f64) -> f64) -> DMatrix<Complex64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        v.len(),
        v.iter().map(|&x| Complex64::new(f(x), 0.0)),
    ))
}

/// The two factor matrices `½[iħ r† + s† γ⁻¹]` and `½[-iħ r + γ⁻¹ s]`.
fn rs_factors(
    r: &DMatrix<Complex64>,
    s: &DMatrix<Complex64>,
    gamma: &WidthMatrix,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let gi = cdiag(gamma.diagonal(), |g| 1.0 / g);
    let ih = I * HBAR;
    let first = (r.adjoint() * ih + s.adjoint() * &gi) * Complex64::new(0.5, 0.0);
    let second = (r * (-ih) + &gi * s) * Complex64::new(0.5, 0.0);
    (first, second)
}

/// `|C|²` from the factorized `r`/`s` form.
pub fn prefactor_modulus_sq_from_rs(
    r: &DMatrix<Complex64>,
    s: &DMatrix<Complex64>,
    gamma: &WidthMatrix,
) -> f64 {
    let (first, second) = rs_factors(r, s, gamma);
    (first.determinant() * second.transpose().determinant())
        .sqrt()
        .re
}

/// `det A = (1/4ħ²)^N det(½[iħ r† + s†γ⁻¹]) det(½[-iħ r + γ⁻¹ s])`.
pub fn det_a_from_rs(r: &DMatrix<Complex64>, s: &DMatrix<Complex64>, gamma: &WidthMatrix) -> Complex64 {
    let n = gamma.dim() as i32;
    let (first, second) = rs_factors(r, s, gamma);
    first.determinant() * second.determinant() * (1.0 / (4.0 * HBAR * HBAR)).powi(n)
}

/// `A` assembled from `r` and `s`; equals [`matrix_a`] when `M` is symplectic.
pub fn matrix_a_from_rs(
    r: &DMatrix<Complex64>,
    s: &DMatrix<Complex64>,
    gamma: &WidthMatrix,
) -> DMatrix<Complex64> {
    let n = gamma.dim();
    let gi = cdiag(gamma.diagonal(), |g| 1.0 / g);
    let g = cdiag(gamma.diagonal(), |g| g);
    let eye = DMatrix::<Complex64>::identity(n, n);
    let quarter = Complex64::new(0.25, 0.0);
    let a11 = &gi / Complex64::new(HBAR * HBAR, 0.0) + r * &gi * r.adjoint();
    let a12 = r * &gi * s.adjoint() - &eye * (I / HBAR);
    let a21 = s * &gi * r.adjoint() + &eye * (I / HBAR);
    let a22 = &g + s * &gi * s.adjoint();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&a11);
    a.view_mut((0, n), (n, n)).copy_from(&a12);
    a.view_mut((n, 0), (n, n)).copy_from(&a21);
    a.view_mut((n, n), (n, n)).copy_from(&a22);
    a * quarter
}

/// Gaussian integral over the difference variables after linearization,
/// `|C|² (π^{2N} / det A)^{1/2} / (2πħ)^N`; identically one for symplectic `M`.
pub fn linearized_difference_integral(m: &Monodromy, gamma: &WidthMatrix) -> f64 {
    let n = gamma.dim() as i32;
    let c_sq = prefactor_determinant(m, gamma).norm();
    let det_a = matrix_a(m, gamma).determinant();
    c_sq * (PI.powi(2 * n) / det_a).sqrt() / (2.0 * PI * HBAR).powi(n)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Product of random upper/lower shears and a scaling: symplectic by construction.
    pub(crate) fn random_symplectic(n: usize, rng: &mut impl Rng) -> Monodromy {
        let sym = |rng: &mut dyn rand::RngCore| {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            (&a + a.transpose()) * 0.5
        };
        let upper = {
            let mut m = DMatrix::identity(2 * n, 2 * n);
            m.view_mut((0, n), (n, n)).copy_from(&sym(rng));
            m
        };
        let lower = {
            let mut m = DMatrix::identity(2 * n, 2 * n);
            m.view_mut((n, 0), (n, n)).copy_from(&sym(rng));
            m
        };
        let d = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                rng.random_range(0.5..2.0)
            } else {
                rng.random_range(-0.3..0.3)
            }
        });
        let mut scale = DMatrix::zeros(2 * n, 2 * n);
        scale
            .view_mut((0, 0), (n, n))
            .copy_from(&d.transpose().try_inverse().unwrap());
        scale.view_mut((n, n), (n, n)).copy_from(&d);
        Monodromy::from_matrix(upper * scale * lower * sym_exp_shear(n, rng))
    }

    fn sym_exp_shear(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let mut m = DMatrix::identity(2 * n, 2 * n);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        m.view_mut((0, n), (n, n)).copy_from(&(&a + a.transpose()));
        m
    }

    fn widths(n: usize, rng: &mut impl Rng) -> WidthMatrix {
        WidthMatrix::new((0..n).map(|_| rng.random_range(0.5..5.0)).collect(), n.min(1)).unwrap()
    }

    #[test]
    fn overlap_of_identical_points_is_one() {
        let z = PhasePoint::new(vec![0.3, -1.2], vec![0.5, 2.0]).unwrap();
        let g = WidthMatrix::new(vec![4.0, 3.6], 1).unwrap();
        let o = overlap(&z, &z, &g);
        assert!((o - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn overlap_momentum_only_difference_is_real_gaussian() {
        let g = WidthMatrix::new(vec![4.0], 1).unwrap();
        let z1 = PhasePoint::new(vec![1.5], vec![0.7]).unwrap();
        let z2 = PhasePoint::new(vec![0.5], vec![0.7]).unwrap();
        let o = overlap(&z2, &z1, &g);
        assert_eq!(o.im, 0.0);
        assert!((o.re - (-1.0f64 / 16.0).exp()).abs() < 1e-15);
        assert!(o.re < 1.0);
    }

    #[test]
    fn overlap_hermitian_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = WidthMatrix::new(vec![4.0, 3.6], 1).unwrap();
        for _ in 0..100 {
            let mut pt = || {
                PhasePoint::new(
                    (0..2).map(|_| rng.random_range(-3.0..3.0)).collect(),
                    (0..2).map(|_| rng.random_range(-3.0..3.0)).collect(),
                )
                .unwrap()
            };
            let (a, b) = (pt(), pt());
            let ab = overlap(&a, &b, &g);
            let ba = overlap(&b, &a, &g);
            assert!((ab.norm() - ba.norm()).abs() < 1e-14);
            assert!((ab - ba.conj()).norm() < 1e-14);
        }
    }

    #[test]
    fn identity_monodromy_kernels() {
        let m = Monodromy::identity(2);
        let g = WidthMatrix::new(vec![1.0, 1.0], 1).unwrap();
        let a = matrix_a(&m, &g);
        assert!((a - DMatrix::identity(4, 4) * 0.5).abs().max() < 1e-15);
        let det = prefactor_determinant(&m, &g);
        assert!((det - Complex64::new(1.0, 0.0)).norm() < 1e-15);

        let g = WidthMatrix::new(vec![4.0, 3.6], 1).unwrap();
        let (r, s) = r_s_matrices(&m, &g);
        for i in 0..2 {
            for j in 0..2 {
                let eye = if i == j { 1.0 } else { 0.0 };
                assert_eq!(r[(i, j)], Complex64::new(0.0, eye / HBAR));
                assert_eq!(s[(i, j)], Complex64::new(g.diagonal()[i] * eye, 0.0));
            }
        }
    }

    #[test]
    fn bath_matrix_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_symplectic(2, &mut rng);
        let g = WidthMatrix::new(vec![4.0, 3.6], 0).unwrap();
        let full = matrix_a(&m, &g);
        let all_bath = matrix_a_b(&m, &g, 0..2);
        assert!((full - all_bath).abs().max() < 1e-12);
        assert_eq!(matrix_a_b(&m, &g, 2..2).nrows(), 0);

        // block-diagonal monodromy: the bath matrix only sees the bath oscillator
        let ms = random_symplectic(1, &mut rng);
        let mb = random_symplectic(1, &mut rng);
        let mut big = DMatrix::zeros(4, 4);
        for (blk, src) in [(0usize, &ms), (1, &mb)] {
            for r in 0..2 {
                for c in 0..2 {
                    big[(r * 2 + blk, c * 2 + blk)] = src.as_matrix()[(r, c)];
                }
            }
        }
        let big = Monodromy::from_matrix(big);
        let ab = matrix_a_b(&big, &g, 1..2);
        let single = matrix_a(&mb, &WidthMatrix::new(vec![3.6], 0).unwrap());
        assert!((ab - single).abs().max() < 1e-12);
    }

    #[test]
    fn one_dof_blocks_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [1, 2] {
            let m = random_symplectic(n, &mut rng);
            let g = widths(n, &mut rng);
            let a = matrix_a(&m, &g);
            let (a11, a12) = (a.view((0, 0), (n, n)), a.view((0, n), (n, n)));
            let a22 = a.view((n, n), (n, n));
            let schur = a11 * a22 - a11 * a12.transpose() * a11.try_inverse().unwrap() * a12;
            assert!(
                (schur.determinant() - a.determinant()).abs() < 1e-10 * a.determinant(),
                "n = {n}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rs_forms_match_block_forms(seed in any::<u64>(), n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_symplectic(n, &mut rng);
            let g = widths(n, &mut rng);
            let (r, s) = r_s_matrices(&m, &g);

            let c_sq = prefactor_determinant(&m, &g).norm();
            let c_sq_rs = prefactor_modulus_sq_from_rs(&r, &s, &g);
            prop_assert!((c_sq - c_sq_rs).abs() < 1e-10 * c_sq.max(1.0));

            let det_a = matrix_a(&m, &g).determinant();
            let det_rs = det_a_from_rs(&r, &s, &g);
            prop_assert!((det_rs.re - det_a).abs() < 1e-10 * det_a.max(1.0));
            prop_assert!(det_rs.im.abs() < 1e-10 * det_a.max(1.0));

            let a_rs = matrix_a_from_rs(&r, &s, &g);
            let a = matrix_a(&m, &g);
            let scale = a.abs().max().max(1.0);
            for (x, y) in a_rs.iter().zip(a.iter()) {
                prop_assert!((x.re - y).abs() < 1e-10 * scale && x.im.abs() < 1e-10 * scale);
            }
        }

        #[test]
        fn difference_integral_is_unity(seed in any::<u64>(), n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_symplectic(n, &mut rng);
            let g = widths(n, &mut rng);
            let i = linearized_difference_integral(&m, &g);
            prop_assert!((i - 1.0).abs() < 1e-9, "I = {}", i);
            // |C|^4 = (4ħ²)^N det A
            let c4 = prefactor_determinant(&m, &g).norm_sqr();
            let rhs = matrix_a(&m, &g).determinant() * (4.0 * HBAR * HBAR).powi(n as i32);
            prop_assert!((c4 - rhs).abs() < 1e-9 * c4);
        }

        #[test]
        fn linearized_gaussian_is_positive(seed in any::<u64>(), n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_symplectic(n, &mut rng);
            let g = widths(n, &mut rng);
            let a = matrix_a(&m, &g);
            prop_assert!((&a - a.transpose()).abs().max() < 1e-12 * a.abs().max());
            prop_assert!(a.clone().cholesky().is_some());
        }
    }
}
