//! Classical trajectories with their tangent map (monodromy matrix), classical
//! action and continuously tracked Herman-Kluk prefactor.
//!
//! The state `(p, q, S, M)` is advanced jointly with classical fourth-order
//! Runge-Kutta; `M` obeys the variational equation `Ṁ = J ∇²H M`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::model::{ModelSystem, PhasePoint};
use crate::semiclassics::{prefactor_matrix_into, WidthMatrix};
use crate::{linalg, Error, Result};

/// Largest accepted change of `arg det h` between two integrator steps.
pub const MAX_PHASE_STEP: f64 = PI / 2.0;

/// `2N x 2N` stability matrix, stored row-major, ordered `(p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monodromy {
    n: usize,
    data: Vec<f64>,
}

impl Monodromy {
    pub fn identity(n: usize) -> Self {
        let w = 2 * n;
        let mut data = vec![0.0; w * w];
        for i in 0..w {
            data[i * w + i] = 1.0;
        }
        Monodromy { n, data }
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), 4 * n * n);
        Monodromy {
            n,
            data: data.to_vec(),
        }
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        assert!(m.is_square() && m.nrows() % 2 == 0);
        let n = m.nrows() / 2;
        let w = 2 * n;
        let data = (0..w * w).map(|k| m[(k / w, k % w)]).collect();
        Monodromy { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2 * self.n, 2 * self.n, &self.data)
    }

    /// `(m11, m12, m21, m22)`.
    pub fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.n;
        let m = self.as_matrix();
        (
            m.view((0, 0), (n, n)).into_owned(),
            m.view((0, n), (n, n)).into_owned(),
            m.view((n, 0), (n, n)).into_owned(),
            m.view((n, n), (n, n)).into_owned(),
        )
    }

    /// Element-wise mean of two monodromy matrices.
    pub fn average(&self, other: &Monodromy) -> Monodromy {
        Monodromy {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        }
    }

    pub fn determinant(&self) -> f64 {
        let mut buf = self.data.clone();
        linalg::det_real_in_place(&mut buf, 2 * self.n)
    }

    /// Largest entry-wise violation of
    /// `m22ᵀm11 - m12ᵀm21 = 1`, `m11ᵀm21 = m21ᵀm11`, `m22ᵀm12 = m12ᵀm22`.
    pub fn symplectic_defect(&self) -> f64 {
        let (m11, m12, m21, m22) = self.blocks();
        let eye = DMatrix::<f64>::identity(self.n, self.n);
        let r1 = m22.transpose() * &m11 - m12.transpose() * &m21 - eye;
        let r2 = m11.transpose() * &m21 - m21.transpose() * &m11;
        let r3 = m22.transpose() * &m12 - m12.transpose() * &m22;
        r1.abs().max().max(r2.abs().max()).max(r3.abs().max())
    }
}

/// A time-evolved phase point with its action, monodromy matrix and the
/// logarithm of the Herman-Kluk prefactor on a continuous branch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub z: PhasePoint,
    pub action: f64,
    pub monodromy: Monodromy,
    pub prefactor_log: Complex64,
}

/// The Herman-Kluk prefactor `C = sqrt(det h)` on the branch tracked along the
/// trajectory. `gamma` must be the width matrix used during propagation.
pub fn hk_prefactor(state: &TrajectoryState, gamma: &WidthMatrix) -> Complex64 {
    let n = gamma.dim();
    let mut h = vec![Complex64::new(0.0, 0.0); n * n];
    prefactor_matrix_into(state.monodromy.as_slice(), gamma.diagonal(), &mut h);
    let root = linalg::det_complex_in_place(&mut h, n).sqrt();
    let tracked = state.prefactor_log.exp();
    if (root - tracked).norm() <= (root + tracked).norm() {
        root
    } else {
        -root
    }
}

/// Integration settings for a single trajectory.
#[derive(Debug, Clone)]
pub struct PropagationOptions {
    pub dt: f64,
    /// Propagate the monodromy matrix alongside the trajectory.
    pub tangent: bool,
    /// Track `ln det h` for these widths (requires `tangent`).
    pub widths: Option<WidthMatrix>,
}

impl PropagationOptions {
    pub fn classical(dt: f64) -> Self {
        PropagationOptions {
            dt,
            tangent: false,
            widths: None,
        }
    }

    pub fn semiclassical(dt: f64, widths: WidthMatrix) -> Self {
        PropagationOptions {
            dt,
            tangent: true,
            widths: Some(widths),
        }
    }
}

/// Stepping integrator for one trajectory; owns all scratch space so that
/// stepping does not allocate.
pub struct Trajectory<'m> {
    model: &'m ModelSystem,
    n: usize,
    dt: f64,
    tangent: bool,
    gamma: Option<Vec<f64>>,
    steps: u64,
    y: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
    hbuf: Vec<Complex64>,
    log_det_h: Complex64,
}

impl<'m> Trajectory<'m> {
    pub fn new(model: &'m ModelSystem, z0: &PhasePoint, options: &PropagationOptions) -> Result<Self> {
        let n = model.n_total();
        if z0.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: z0.dim(),
            });
        }
        if !(options.dt > 0.0 && options.dt.is_finite()) {
            return Err(Error::Parameter(format!("time step must be positive, got {}", options.dt)));
        }
        let gamma = match &options.widths {
            Some(w) if !options.tangent => {
                let _ = w;
                return Err(Error::Parameter("prefactor tracking requires the tangent map".into()));
            }
            Some(w) if w.dim() != n => {
                return Err(Error::Dimension {
                    expected: n,
                    got: w.dim(),
                })
            }
            Some(w) => Some(w.diagonal().to_vec()),
            None => None,
        };
        let len = 2 * n + 1 + if options.tangent { 4 * n * n } else { 0 };
        let mut y = vec![0.0; len];
        y[..n].copy_from_slice(&z0.p);
        y[n..2 * n].copy_from_slice(&z0.q);
        if options.tangent {
            let w = 2 * n;
            for i in 0..w {
                y[2 * n + 1 + i * w + i] = 1.0;
            }
        }
        Ok(Trajectory {
            model,
            n,
            dt: options.dt,
            tangent: options.tangent,
            gamma,
            steps: 0,
            k: [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            tmp: vec![0.0; len],
            y,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
            hbuf: vec![Complex64::new(0.0, 0.0); n * n],
            log_det_h: Complex64::new(0.0, 0.0),
        })
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn p(&self) -> &[f64] {
        &self.y[..self.n]
    }

    pub fn q(&self) -> &[f64] {
        &self.y[self.n..2 * self.n]
    }

    pub fn action(&self) -> f64 {
        self.y[2 * self.n]
    }

    /// Row-major monodromy entries, empty when the tangent map is not propagated.
    pub fn monodromy_slice(&self) -> &[f64] {
        &self.y[2 * self.n + 1..]
    }

    /// `½ ln det h` on the continuous branch (zero when not tracked).
    pub fn prefactor_log(&self) -> Complex64 {
        self.log_det_h * 0.5
    }

    pub fn state(&self) -> TrajectoryState {
        TrajectoryState {
            t: self.time(),
            z: PhasePoint {
                p: self.p().to_vec(),
                q: self.q().to_vec(),
            },
            action: self.action(),
            monodromy: if self.tangent {
                Monodromy::from_row_slice(self.n, self.monodromy_slice())
            } else {
                Monodromy::identity(self.n)
            },
            prefactor_log: self.prefactor_log(),
        }
    }

    /// One Runge-Kutta step of size `dt`.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.dt;
        let len = self.y.len();
        let [k1, k2, k3, k4] = &mut self.k;
        let ctx = Rhs {
            model: self.model,
            n: self.n,
            tangent: self.tangent,
        };
        ctx.eval(&self.y, k1, &mut self.grad, &mut self.hess);
        for i in 0..len {
            self.tmp[i] = self.y[i] + 0.5 * dt * k1[i];
        }
        ctx.eval(&self.tmp, k2, &mut self.grad, &mut self.hess);
        for i in 0..len {
            self.tmp[i] = self.y[i] + 0.5 * dt * k2[i];
        }
        ctx.eval(&self.tmp, k3, &mut self.grad, &mut self.hess);
        for i in 0..len {
            self.tmp[i] = self.y[i] + dt * k3[i];
        }
        ctx.eval(&self.tmp, k4, &mut self.grad, &mut self.hess);
        let sixth = dt / 6.0;
        for i in 0..len {
            self.y[i] += sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
        self.steps += 1;

        if !self.y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: self.time() });
        }
        if let Some(gamma) = &self.gamma {
            let n = self.n;
            prefactor_matrix_into(&self.y[2 * n + 1..], gamma, &mut self.hbuf);
            let det = linalg::det_complex_in_place(&mut self.hbuf, n);
            let mut jump = det.arg() - self.log_det_h.im;
            jump -= 2.0 * PI * (jump / (2.0 * PI)).round();
            if jump.abs() > MAX_PHASE_STEP || !det.is_finite() || det.norm() == 0.0 {
                return Err(Error::PrefactorBranch {
                    t: self.time(),
                    jump,
                });
            }
            self.log_det_h = Complex64::new(det.norm().ln(), self.log_det_h.im + jump);
        }
        Ok(())
    }

    pub fn advance(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

struct Rhs<'a> {
    model: &'a ModelSystem,
    n: usize,
    tangent: bool,
}

impl Rhs<'_> {
    #[inline]
    fn eval(&self, y: &[f64], out: &mut [f64], grad: &mut [f64], hess: &mut [f64]) {
        let n = self.n;
        let masses = self.model.masses();
        let (p, rest) = y.split_at(n);
        let q = &rest[..n];
        let v = self.model.potential_surface().evaluate(q, grad, hess);
        let mut kinetic = 0.0;
        for i in 0..n {
            out[i] = -grad[i];
            let v_i = p[i] / masses[i];
            out[n + i] = v_i;
            kinetic += 0.5 * p[i] * v_i;
        }
        // dS/dt = p·q̇ - H = T - V
        out[2 * n] = kinetic - v;
        if self.tangent {
            let w = 2 * n;
            let m = &y[2 * n + 1..];
            let dm = &mut out[2 * n + 1..];
            for i in 0..n {
                for c in 0..w {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += hess[i * n + j] * m[(n + j) * w + c];
                    }
                    dm[i * w + c] = -acc;
                    dm[(n + i) * w + c] = m[i * w + c] / masses[i];
                }
            }
        }
    }
}

/// Number of integer steps `k` with `k * unit == span`, or an error.
pub(crate) fn exact_ratio(span: f64, unit: f64, what: &str) -> Result<u64> {
    let k = (span / unit).round();
    if !(k >= 0.0) || ((k * unit) - span).abs() > 1e-9 * span.abs().max(unit) {
        return Err(Error::Parameter(format!(
            "{what}: {span} is not an integer multiple of {unit}"
        )));
    }
    Ok(k as u64)
}

/// Propagates `z0` to `t_final`, recording a state every `stride` time units
/// (including `t = 0`).
pub fn propagate(
    model: &ModelSystem,
    z0: &PhasePoint,
    t_final: f64,
    stride: f64,
    options: &PropagationOptions,
) -> Result<Vec<TrajectoryState>> {
    let per_output = exact_ratio(stride, options.dt, "output stride")?;
    if per_output == 0 {
        return Err(Error::Parameter("output stride must be positive".into()));
    }
    let outputs = exact_ratio(t_final, stride, "final time")?;
    let mut traj = Trajectory::new(model, z0, options)?;
    let mut states = Vec::with_capacity(outputs as usize + 1);
    states.push(traj.state());
    for k in 1..=outputs {
        traj.advance(per_output)?;
        let mut s = traj.state();
        s.t = k as f64 * stride;
        states.push(s);
    }
    Ok(states)
}
