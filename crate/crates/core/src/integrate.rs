//! Path-wise time stepping of the state equation and of the fundamental
//! solution: explicit Euler, the stochastic implicit midpoint rule, and the
//! variation-of-constants representation used as a cross-check.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{MorError, Result};
use crate::fbm::{FbmIncrementSample, UniformGrid};
use crate::linalg::{self, CheckedLu};
use crate::model::{Interpretation, StochasticLinearSystem};

/// Relative pivot threshold for the per-step linear solves.
pub const STEP_PIVOT_TOL: f64 = 1e-13;

/// Above this order, single-driver midpoint steps use a precomputed pencil
/// decomposition instead of a fresh LU factorization per step.
const DENSE_STEP_CAP: usize = 32;

/// Deterministic control `t ↦ u(t) ∈ R^m`.
#[derive(Clone)]
pub struct ControlSignal {
    inputs: usize,
    label: String,
    rule: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
}

impl fmt::Debug for ControlSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSignal")
            .field("inputs", &self.inputs)
            .field("label", &self.label)
            .finish()
    }
}

impl ControlSignal {
    pub fn new(
        inputs: usize,
        label: impl Into<String>,
        rule: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            inputs,
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    pub fn zero(inputs: usize) -> Self {
        Self::new(inputs, "zero", move |_| DVector::zeros(inputs))
    }

    pub fn constant(value: DVector<f64>) -> Self {
        let m = value.len();
        Self::new(m, "constant", move |_| value.clone())
    }

    /// `√(2/π) sin(t)` in every component.
    pub fn sine(inputs: usize) -> Self {
        let amp = (2.0 / std::f64::consts::PI).sqrt();
        Self::new(inputs, "sine", move |t| DVector::from_element(inputs, amp * t.sin()))
    }

    /// Unit step switched on at `t = 0.5`.
    pub fn step(inputs: usize) -> Self {
        Self::new(inputs, "step", move |t| {
            DVector::from_element(inputs, if t >= 0.5 { 1.0 } else { 0.0 })
        })
    }

    /// `sin(2π (t + t²))`, a linear chirp.
    pub fn chirp(inputs: usize) -> Self {
        Self::new(inputs, "chirp", move |t| {
            DVector::from_element(inputs, (2.0 * std::f64::consts::PI * (t + t * t)).sin())
        })
    }

    /// Named preset: `sine` (default), `zero`, `step` or `chirp`.
    pub fn preset(name: &str, inputs: usize) -> Result<Self> {
        match name {
            "sine" | "sqrt(2/pi)*sin(t)" => Ok(Self::sine(inputs)),
            "zero" => Ok(Self::zero(inputs)),
            "step" => Ok(Self::step(inputs)),
            "chirp" => Ok(Self::chirp(inputs)),
            other => Err(MorError::InvalidArgument(format!(
                "unknown control preset '{other}' (expected sine, zero, step or chirp)"
            ))),
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        (self.rule)(t)
    }

    /// `‖u‖_{L²(0,T)}` by midpoint quadrature on `grid`.
    pub fn l2_norm(&self, grid: &UniformGrid) -> f64 {
        let dt = grid.dt();
        (0..grid.steps())
            .map(|k| self.eval(grid.time(k) + 0.5 * dt).norm_squared() * dt)
            .sum::<f64>()
            .sqrt()
    }
}

/// Time-stepping scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Explicit Euler on the Itô form (H = 1/2) or path-wise (H > 1/2).
    Euler,
    /// Stochastic implicit midpoint rule on the circle-integral form.
    Midpoint,
}

/// States and outputs on a grid; column `k` holds the value at `t_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: UniformGrid,
    /// `n × (N+1)`.
    pub states: DMatrix<f64>,
    /// `p × (N+1)`.
    pub outputs: DMatrix<f64>,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.column(k).into_owned()
    }

    pub fn output(&self, k: usize) -> DVector<f64> {
        self.outputs.column(k).into_owned()
    }
}

/// `Φ(t_j) · seed` for `j = 0..=N` along one noise path.
#[derive(Clone, Debug)]
pub struct FundamentalSample {
    pub matrices: Vec<DMatrix<f64>>,
    pub grid: UniformGrid,
    pub seed: u64,
}

enum StepSolver {
    /// No noise: `M_k = E` for every step.
    Constant(CheckedLu),
    /// One driver with `E` SPD and `N` symmetric:
    /// `M_k⁻¹ = Wᵀ (I − cΛ)⁻¹ W`.
    SymmetricPencil { w: DMatrix<f64>, lambda: DVector<f64> },
    /// One driver, general: `E⁻¹N = Q T Qᴴ`, `M_k⁻¹ = Q (I − cT)⁻¹ Qᴴ E⁻¹`.
    SchurPencil {
        g: DMatrix<Complex64>,
        t: DMatrix<Complex64>,
        q: DMatrix<Complex64>,
    },
    /// Fresh LU of `E − Σ c_i N_i` per step.
    Dense,
}

/// Reusable stepping machinery for one system, grid and scheme.
pub struct Propagator {
    scheme: Scheme,
    grid: UniformGrid,
    drift: DMatrix<f64>,
    b: DMatrix<f64>,
    noise: Vec<DMatrix<f64>>,
    e: DMatrix<f64>,
    solver: Option<StepSolver>,
}

impl Propagator {
    pub fn new(sys: &StochasticLinearSystem, grid: UniformGrid, scheme: Scheme) -> Result<Self> {
        let n = sys.order();
        let drift = match scheme {
            Scheme::Euler => match sys.interpretation() {
                Interpretation::Stratonovich => sys.ito_drift()?,
                _ => sys.a().clone(),
            },
            Scheme::Midpoint => sys.circle_drift(),
        };
        let h = grid.dt();
        let e = DMatrix::<f64>::identity(n, n) - &drift * (0.5 * h);
        let solver = match scheme {
            Scheme::Euler => None,
            Scheme::Midpoint => Some(build_step_solver(&e, sys.noise())?),
        };
        Ok(Self {
            scheme,
            grid,
            drift,
            b: sys.b().clone(),
            noise: sys.noise().to_vec(),
            e,
            solver,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn check_noise(&self, noise: &FbmIncrementSample) -> Result<()> {
        if noise.steps() != self.grid.steps()
            || (noise.grid.t_end() - self.grid.t_end()).abs() > 1e-12 * self.grid.t_end()
        {
            return Err(MorError::Dimension(format!(
                "noise grid ({} steps on [0, {}]) does not match integration grid ({} steps on [0, {}])",
                noise.steps(),
                noise.grid.t_end(),
                self.grid.steps(),
                self.grid.t_end()
            )));
        }
        if noise.drivers() != self.noise.len() && !(self.noise.is_empty()) {
            return Err(MorError::Dimension(format!(
                "noise has {} drivers, system has {}",
                noise.drivers(),
                self.noise.len()
            )));
        }
        Ok(())
    }

    /// Propagate the columns of `init` along `noise`, calling `visit(k, X_k)`
    /// for `k = 0..=N`. With a control, `B u` forces every column.
    pub fn run<F>(
        &self,
        init: &DMatrix<f64>,
        control: Option<&ControlSignal>,
        noise: &FbmIncrementSample,
        mut visit: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &DMatrix<f64>),
    {
        self.check_noise(noise)?;
        if init.nrows() != self.drift.nrows() {
            return Err(MorError::Dimension(format!(
                "initial matrix has {} rows, system order is {}",
                init.nrows(),
                self.drift.nrows()
            )));
        }
        if let Some(u) = control {
            if u.inputs() != self.b.ncols() {
                return Err(MorError::Dimension(format!(
                    "control has {} inputs, system has {}",
                    u.inputs(),
                    self.b.ncols()
                )));
            }
        }
        let h = self.grid.dt();
        let mut x = init.clone();
        visit(0, &x);
        let mut coeffs = vec![0.0; self.noise.len()];
        for k in 0..self.grid.steps() {
            for (i, c) in coeffs.iter_mut().enumerate() {
                *c = noise.get(i, k);
            }
            x = match self.scheme {
                Scheme::Euler => {
                    let mut next = &x + &self.drift * &x * h;
                    for (ni, dw) in self.noise.iter().zip(&coeffs) {
                        next += ni * &x * *dw;
                    }
                    if let Some(u) = control {
                        let f = &self.b * u.eval(self.grid.time(k)) * h;
                        for mut col in next.column_iter_mut() {
                            col += &f;
                        }
                    }
                    next
                }
                Scheme::Midpoint => {
                    let mut rhs = x.clone();
                    if let Some(u) = control {
                        let f = &self.b * u.eval(self.grid.time(k) + 0.5 * h) * (0.5 * h);
                        for mut col in rhs.column_iter_mut() {
                            col += &f;
                        }
                    }
                    for c in coeffs.iter_mut() {
                        *c *= 0.5;
                    }
                    let y = self.solve_step(&rhs, &coeffs, k)?;
                    y * 2.0 - x
                }
            };
            visit(k + 1, &x);
        }
        Ok(())
    }

    /// Solves `(E − Σ c_i N_i) Y = R`.
    fn solve_step(&self, rhs: &DMatrix<f64>, c: &[f64], step: usize) -> Result<DMatrix<f64>> {
        let singular = || MorError::SingularStep { step, sample: None };
        match self.solver.as_ref().expect("midpoint solver") {
            StepSolver::Constant(lu) => Ok(lu.solve(rhs)),
            StepSolver::SymmetricPencil { w, lambda } => {
                let c = c[0];
                let scale = 1.0 + (c * lambda.amax()).abs();
                let mut y = w * rhs;
                for (i, mut row) in y.row_iter_mut().enumerate() {
                    let d = 1.0 - c * lambda[i];
                    if d.abs() <= STEP_PIVOT_TOL * scale {
                        return Err(singular());
                    }
                    row /= d;
                }
                Ok(w.tr_mul(&y))
            }
            StepSolver::SchurPencil { g, t, q } => {
                let c = c[0];
                let n = t.nrows();
                let scale = 1.0 + c.abs() * t.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max);
                let rc = rhs.map(|v| Complex64::new(v, 0.0));
                let mut y = g * rc;
                for col in 0..y.ncols() {
                    for i in (0..n).rev() {
                        let mut acc = y[(i, col)];
                        for l in (i + 1)..n {
                            acc += t[(i, l)] * y[(l, col)] * c;
                        }
                        let d = Complex64::new(1.0, 0.0) - t[(i, i)] * c;
                        if d.norm() <= STEP_PIVOT_TOL * scale {
                            return Err(singular());
                        }
                        y[(i, col)] = acc / d;
                    }
                }
                Ok((q * y).map(|z| z.re))
            }
            StepSolver::Dense => {
                let mut m = self.e.clone();
                for (ni, ci) in self.noise.iter().zip(c) {
                    m -= ni * *ci;
                }
                let lu = CheckedLu::new(m, STEP_PIVOT_TOL).ok_or_else(singular)?;
                Ok(lu.solve(rhs))
            }
        }
    }

    /// Full trajectory of the state equation started in `x0`.
    pub fn trajectory(
        &self,
        sys: &StochasticLinearSystem,
        x0: &DVector<f64>,
        control: &ControlSignal,
        noise: &FbmIncrementSample,
    ) -> Result<Trajectory> {
        let n = sys.order();
        let steps = self.grid.steps();
        let mut states = DMatrix::zeros(n, steps + 1);
        let init = DMatrix::from_column_slice(n, 1, x0.as_slice());
        self.run(&init, Some(control), noise, |k, x| {
            states.set_column(k, &x.column(0));
        })?;
        let outputs = sys.c() * &states;
        Ok(Trajectory {
            grid: self.grid,
            states,
            outputs,
        })
    }

    /// Outputs `C x(t_k)` only (`p × (N+1)`), without storing states.
    pub fn outputs(
        &self,
        c: &DMatrix<f64>,
        x0: &DVector<f64>,
        control: Option<&ControlSignal>,
        noise: &FbmIncrementSample,
    ) -> Result<DMatrix<f64>> {
        let steps = self.grid.steps();
        let mut out = DMatrix::zeros(c.nrows(), steps + 1);
        let init = DMatrix::from_column_slice(x0.len(), 1, x0.as_slice());
        self.run(&init, control, noise, |k, x| {
            out.set_column(k, &(c * x.column(0)));
        })?;
        Ok(out)
    }
}

fn build_step_solver(e: &DMatrix<f64>, noise: &[DMatrix<f64>]) -> Result<StepSolver> {
    let n = e.nrows();
    if noise.is_empty() {
        return CheckedLu::new(e.clone(), STEP_PIVOT_TOL)
            .map(StepSolver::Constant)
            .ok_or(MorError::SingularStep { step: 0, sample: None });
    }
    if noise.len() != 1 || n <= DENSE_STEP_CAP {
        return Ok(StepSolver::Dense);
    }
    let nmat = &noise[0];
    if linalg::is_symmetric(e, 1e-14) && linalg::is_symmetric(nmat, 1e-14) {
        if let Some(chol) = Cholesky::new(linalg::symmetrize(e)) {
            let l = chol.l();
            let l_inv = l
                .clone()
                .try_inverse()
                .ok_or(MorError::SingularStep { step: 0, sample: None })?;
            let g = linalg::symmetrize(&(&l_inv * nmat * l_inv.transpose()));
            let (lambda, u) = linalg::sym_eigen_desc(&g);
            return Ok(StepSolver::SymmetricPencil {
                w: u.transpose() * l_inv,
                lambda,
            });
        }
    }
    let lu = CheckedLu::new(e.clone(), STEP_PIVOT_TOL).ok_or(MorError::SingularStep { step: 0, sample: None })?;
    let e_inv = lu.solve(&DMatrix::identity(n, n));
    let f = &e_inv * nmat;
    let schur = nalgebra::Schur::try_new(f.map(|v| Complex64::new(v, 0.0)), f64::EPSILON, 100_000)
        .ok_or_else(|| MorError::Singular("Schur decomposition of the noise pencil failed".into()))?;
    let (q, t) = schur.unpack();
    let g = q.adjoint() * e_inv.map(|v| Complex64::new(v, 0.0));
    Ok(StepSolver::SchurPencil { g, t, q })
}

/// Explicit Euler (Euler–Maruyama for H = 1/2) trajectory.
pub fn euler_path(
    sys: &StochasticLinearSystem,
    x0: &DVector<f64>,
    u: &ControlSignal,
    noise: &FbmIncrementSample,
) -> Result<Trajectory> {
    Propagator::new(sys, noise.grid, Scheme::Euler)?.trajectory(sys, x0, u, noise)
}

/// Stochastic implicit midpoint trajectory.
pub fn midpoint_path(
    sys: &StochasticLinearSystem,
    x0: &DVector<f64>,
    u: &ControlSignal,
    noise: &FbmIncrementSample,
) -> Result<Trajectory> {
    Propagator::new(sys, noise.grid, Scheme::Midpoint)?.trajectory(sys, x0, u, noise)
}

/// `Φ(t_j) · seed_matrix` along the drawn path (homogeneous system).
pub fn fundamental_sample(
    sys: &StochasticLinearSystem,
    seed_matrix: &DMatrix<f64>,
    noise: &FbmIncrementSample,
    scheme: Scheme,
) -> Result<FundamentalSample> {
    let prop = Propagator::new(sys, noise.grid, scheme)?;
    let mut matrices = Vec::with_capacity(noise.steps() + 1);
    prop.run(seed_matrix, None, noise, |_, x| matrices.push(x.clone()))?;
    Ok(FundamentalSample {
        matrices,
        grid: noise.grid,
        seed: noise.seed,
    })
}

/// `x(t_j) = Φ(t_j) x0 + Σ_{l<j} Φ(t_j) Φ(t_l)⁻¹ B u(t_l) Δt`, with `Φ`
/// propagated by `scheme` on the same noise.
pub fn variation_of_constants(
    sys: &StochasticLinearSystem,
    x0: &DVector<f64>,
    u: &ControlSignal,
    noise: &FbmIncrementSample,
    grid: &UniformGrid,
    scheme: Scheme,
) -> Result<Trajectory> {
    if noise.grid != *grid {
        return Err(MorError::Dimension("noise grid differs from requested grid".into()));
    }
    let n = sys.order();
    let phi = fundamental_sample(sys, &DMatrix::identity(n, n), noise, scheme)?;
    let h = grid.dt();
    let steps = grid.steps();
    let mut states = DMatrix::zeros(n, steps + 1);
    // k(t_j) = x0 + Σ_{l<j} Φ(t_l)⁻¹ B u(t_l) Δt, so x(t_j) = Φ(t_j) k(t_j)
    let mut acc = x0.clone();
    for j in 0..=steps {
        states.set_column(j, &(&phi.matrices[j] * &acc));
        if j < steps {
            let lu = CheckedLu::new(phi.matrices[j].clone(), 1e-14)
                .ok_or_else(|| MorError::Singular(format!("fundamental solution singular at step {j}")))?;
            acc += lu.solve_vec(&(sys.b() * u.eval(grid.time(j)))) * h;
        }
    }
    let outputs = sys.c() * &states;
    Ok(Trajectory {
        grid: *grid,
        states,
        outputs,
    })
}
