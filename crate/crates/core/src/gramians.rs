//! Reachability and observability Gramians.
//!
//! Exact Gramians (H = 1/2) come from the second-moment equation
//! `Ż = A_N Z + Z A_Nᵀ + Σ N_i Z N_iᵀ`, `Z(0) = M`, whose time integral is
//! `P_T`; the dual equation gives `Q_T`. Empirical Gramians (any H) average
//! outer products of sampled fundamental solutions.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MorError, Result};
use crate::fbm::{FbmSampler, UniformGrid};
use crate::integrate::{ControlSignal, Propagator, Scheme};
use crate::linalg::{self, SylvesterSolver, EXPM_CAP};
use crate::model::StochasticLinearSystem;
use crate::montecarlo::{blocked_sum, MomentAccumulator};

/// Above this order [`empirical_observability`] logs a cost warning.
pub const DEFAULT_OBSERVABILITY_CAP: usize = 512;

/// Trapezoidal steps per unit time for the moment ODE of large systems.
pub const MOMENT_STEPS_PER_UNIT: usize = 400;
const MOMENT_MIN_STEPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Empirical { steps: usize, samples: usize, seed: u64 },
}

/// Reachability Gramians of the two subsystems, their sum, and optionally
/// the observability Gramian.
#[derive(Clone, Debug)]
pub struct GramianSet {
    pub p_u: DMatrix<f64>,
    pub p_x0: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: Option<DMatrix<f64>>,
    pub horizon: Horizon,
    pub provenance: Provenance,
}

impl GramianSet {
    pub fn order(&self) -> usize {
        self.p.nrows()
    }

    /// Symmetry to `1e-12` and eigenvalues `≥ −1e-10 · trace`.
    pub fn check(&self) -> Result<()> {
        let mut mats = vec![("P_u", &self.p_u), ("P_x0", &self.p_x0), ("P", &self.p)];
        if let Some(q) = &self.q {
            mats.push(("Q", q));
        }
        for (name, m) in mats {
            if !linalg::is_symmetric(m, 1e-12) {
                return Err(MorError::InvalidArgument(format!("{name} is not symmetric")));
            }
            let trace = m.trace();
            let (vals, _) = linalg::sym_eigen_desc(m);
            let smallest = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            if smallest < -1e-10 * trace.abs().max(f64::MIN_POSITIVE) {
                return Err(MorError::NotDefinite {
                    eigenvalue: smallest,
                    largest: vals.iter().cloned().fold(0.0, f64::max),
                });
            }
        }
        let sum = &self.p_u + &self.p_x0;
        if (&sum - &self.p).amax() > 1e-12 * self.p.amax().max(f64::MIN_POSITIVE) {
            return Err(MorError::InvalidArgument("P differs from P_u + P_x0".into()));
        }
        Ok(())
    }
}

/// Sampling parameters for empirical Gramians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmpiricalSpec {
    pub t_end: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub observability_cap: usize,
}

impl EmpiricalSpec {
    pub fn new(t_end: f64, steps: usize, samples: usize, seed: u64) -> Self {
        Self {
            t_end,
            steps,
            samples,
            seed,
            scheme: Scheme::Midpoint,
            observability_cap: DEFAULT_OBSERVABILITY_CAP,
        }
    }

    fn validate(&self) -> Result<UniformGrid> {
        if self.samples == 0 {
            return Err(MorError::InvalidArgument("need at least one sample".into()));
        }
        UniformGrid::new(self.t_end, self.steps)
    }
}

/// `(T/(N·N_s)) Σ_{i=1..N} Σ_j Y_ij Y_ijᵀ` where `Y_ij = Φ(s_i, ω_j) · seed`
/// and the columns of `seed` are split into groups summed separately.
fn empirical_reachability(
    sys: &StochasticLinearSystem,
    spec: &EmpiricalSpec,
    groups: &[&DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    let grid = spec.validate()?;
    let n = sys.order();
    let widths: Vec<usize> = groups.iter().map(|g| g.ncols()).collect();
    let total: usize = widths.iter().sum();
    let mut seed_matrix = DMatrix::zeros(n, total);
    let mut offset = 0;
    for g in groups {
        seed_matrix.view_mut((0, offset), (n, g.ncols())).copy_from(g);
        offset += g.ncols();
    }
    let zero = || vec![DMatrix::<f64>::zeros(n, n); groups.len()];
    if total == 0 {
        return Ok(zero());
    }
    let prop = Propagator::new(sys, grid, spec.scheme)?;
    let sampler = FbmSampler::new(grid, sys.hurst())?;
    let q = sys.drivers();
    let steps = grid.steps();
    let sums = blocked_sum(
        spec.samples,
        zero,
        |j, acc| {
            let noise = sampler.sample_indexed(q, spec.seed, j as u64);
            // snapshot matrices: one n × (N·width) block per group
            let mut snaps: Vec<DMatrix<f64>> = widths.iter().map(|&w| DMatrix::zeros(n, steps * w)).collect();
            prop.run(&seed_matrix, None, &noise, |k, x| {
                if k == 0 {
                    return;
                }
                let mut off = 0;
                for (snap, &w) in snaps.iter_mut().zip(&widths) {
                    snap.view_mut((0, (k - 1) * w), (n, w))
                        .copy_from(&x.view((0, off), (n, w)));
                    off += w;
                }
            })?;
            for (a, snap) in acc.iter_mut().zip(&snaps) {
                if snap.ncols() > 0 {
                    a.gemm(1.0, snap, &snap.transpose(), 1.0);
                }
            }
            Ok(())
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        },
    )?;
    let scale = spec.t_end / (steps as f64 * spec.samples as f64);
    Ok(sums.into_iter().map(|m| linalg::symmetrize(&(m * scale))).collect())
}

/// Empirical `P̄_{u,T}`, `P̄_{x0,T}` and `P̄_T`.
pub fn empirical_gramians(sys: &StochasticLinearSystem, spec: &EmpiricalSpec) -> Result<GramianSet> {
    let mut parts = empirical_reachability(sys, spec, &[sys.b(), sys.x0()])?.into_iter();
    let p_u = parts.next().unwrap();
    let p_x0 = parts.next().unwrap();
    let p = &p_u + &p_x0;
    Ok(GramianSet {
        p_u,
        p_x0,
        p,
        q: None,
        horizon: Horizon::Finite(spec.t_end),
        provenance: Provenance::Empirical {
            steps: spec.steps,
            samples: spec.samples,
            seed: spec.seed,
        },
    })
}

/// Empirical `Q̄_T`; propagates the full `n × n` fundamental solution.
pub fn empirical_observability(sys: &StochasticLinearSystem, spec: &EmpiricalSpec) -> Result<DMatrix<f64>> {
    let grid = spec.validate()?;
    let n = sys.order();
    if n > spec.observability_cap {
        warn!(
            "empirical observability Gramian of order {n} propagates {n} columns per sample; \
             expect roughly {} times the cost of the reachability Gramian",
            n / sys.inputs().max(1)
        );
    }
    let c = sys.c().clone();
    let prop = Propagator::new(sys, grid, spec.scheme)?;
    let sampler = FbmSampler::new(grid, sys.hurst())?;
    let q = sys.drivers();
    let identity = DMatrix::<f64>::identity(n, n);
    let sum = blocked_sum(
        spec.samples,
        || DMatrix::<f64>::zeros(n, n),
        |j, acc| {
            let noise = sampler.sample_indexed(q, spec.seed, j as u64);
            prop.run(&identity, None, &noise, |k, phi| {
                if k > 0 {
                    let y = &c * phi;
                    acc.gemm(1.0, &y.transpose(), &y, 1.0);
                }
            })
        },
        |a, b| *a += b,
    )?;
    let scale = spec.t_end / (grid.steps() as f64 * spec.samples as f64);
    Ok(linalg::symmetrize(&(sum * scale)))
}

/// `∫_0^T Z(t) dt` (finite) or `∫_0^∞ Z(t) dt` (infinite) for
/// `Ż = A Z + Z Aᵀ + Σ N_i Z N_iᵀ`, `Z(0) = M`. `A` is the Itô drift.
pub fn moment_integral(
    a: &DMatrix<f64>,
    noise: &[DMatrix<f64>],
    m: &DMatrix<f64>,
    horizon: Horizon,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if m.amax() == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let out = match horizon {
        Horizon::Infinite => linalg::solve_generalized_lyapunov(a, noise, &(-m))?,
        Horizon::Finite(t) => {
            if !(t > 0.0 && t.is_finite()) {
                return Err(MorError::InvalidArgument(format!("horizon must be positive, got {t}")));
            }
            if n <= EXPM_CAP {
                augmented_exponential(a, noise, m, t)
            } else {
                let steps = ((t * MOMENT_STEPS_PER_UNIT as f64).ceil() as usize).max(MOMENT_MIN_STEPS);
                trapezoidal_moment_integral(a, noise, m, t, steps)?
            }
        }
    };
    Ok(linalg::symmetrize(&out))
}

/// `vec P_T` as the top-right block of `exp([[K, vec M], [0, 0]] T)`.
fn augmented_exponential(a: &DMatrix<f64>, noise: &[DMatrix<f64>], m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let n2 = n * n;
    let k = linalg::lyapunov_generator(a, noise);
    let mut aug = DMatrix::zeros(n2 + 1, n2 + 1);
    aug.view_mut((0, 0), (n2, n2)).copy_from(&(k * t));
    aug.view_mut((0, n2), (n2, 1)).copy_from(&(linalg::vec_of(m) * t));
    let e = linalg::expm(&aug);
    linalg::unvec(&e.column(n2).rows(0, n2).into_owned(), n, n)
}

/// Implicit trapezoidal rule for the moment ODE; the noise term of the new
/// step is resolved by fixed-point iteration around a Lyapunov solve.
/// Summing the steps gives `L[P_h] + Π[P_h] = Z_N − M` exactly.
pub fn trapezoidal_moment_integral(
    a: &DMatrix<f64>,
    noise: &[DMatrix<f64>],
    m: &DMatrix<f64>,
    t: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    let h = t / steps as f64;
    let shift = -2.0 / h;
    let symmetric = linalg::is_symmetric(a, 1e-14);
    if symmetric {
        // eigenbasis of A: the Lyapunov solve becomes an entrywise division
        let (lambda, v) = linalg::sym_eigen_desc(a);
        let noise_hat: Vec<DMatrix<f64>> = noise.iter().map(|ni| v.transpose() * ni * &v).collect();
        let m_hat = v.transpose() * m * &v;
        let n = a.nrows();
        let lyap = |x: &DMatrix<f64>| DMatrix::from_fn(n, n, |i, j| (lambda[i] + lambda[j]) * x[(i, j)]);
        let solve = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_fn(n, n, |i, j| {
                rhs[(i, j)] / (lambda[i] + lambda[j] + shift)
            }))
        };
        let p_hat = trapezoid_loop(&m_hat, &noise_hat, steps, h, lyap, solve)?;
        Ok(&v * p_hat * v.transpose())
    } else {
        let solver = SylvesterSolver::lyapunov(a)?;
        let lyap = |x: &DMatrix<f64>| a * x + x * a.transpose();
        let solve = |rhs: &DMatrix<f64>| solver.solve(rhs, shift);
        trapezoid_loop(m, noise, steps, h, lyap, solve)
    }
}

fn trapezoid_loop<L, S>(
    m: &DMatrix<f64>,
    noise: &[DMatrix<f64>],
    steps: usize,
    h: f64,
    lyap: L,
    solve: S,
) -> Result<DMatrix<f64>>
where
    L: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    S: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let mut z = m.clone();
    let mut integral = m * (0.5 * h);
    for step in 0..steps {
        // (L − 2/h) Z⁺ + Π Z⁺ = −(2/h) Z − L Z − Π Z
        let base = -(&z * (2.0 / h)) - lyap(&z) - linalg::apply_noise_operator(noise, &z);
        let mut next = z.clone();
        if noise.is_empty() {
            next = solve(&base)?;
        } else {
            let mut converged = false;
            for _ in 0..100 {
                let candidate = solve(&(&base - linalg::apply_noise_operator(noise, &next)))?;
                let change = (&candidate - &next).amax();
                next = candidate;
                if change <= 1e-14 * next.amax().max(f64::MIN_POSITIVE) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(MorError::Unstable(format!(
                    "moment ODE fixed point failed to converge at step {step}; reduce the step size"
                )));
            }
        }
        z = linalg::symmetrize(&next);
        let weight = if step + 1 == steps { 0.5 * h } else { h };
        integral += &z * weight;
    }
    debug!("moment ODE integrated in {steps} trapezoidal steps");
    Ok(integral)
}

fn ensure_stable(sys: &StochasticLinearSystem, horizon: Horizon) -> Result<()> {
    if horizon == Horizon::Infinite {
        let report = sys.is_mean_square_stable()?;
        if !report.stable {
            return Err(MorError::Unstable(format!(
                "infinite-horizon Gramian requested but the stability certificate has eigenvalue {:e}",
                report.min_eigenvalue
            )));
        }
    }
    Ok(())
}

fn require_brownian(sys: &StochasticLinearSystem, what: &str) -> Result<()> {
    if !sys.hurst().is_brownian() && sys.drivers() > 0 {
        return Err(MorError::Interpretation(format!(
            "exact {what} Gramians need H = 1/2; for H > 1/2 there is no known link to Lyapunov equations"
        )));
    }
    Ok(())
}

/// Exact `P_{u}`, `P_{x0}` and `P = P_u + P_x0` on `[0, T]` or `[0, ∞)`.
pub fn exact_gramian_p(sys: &StochasticLinearSystem, horizon: Horizon) -> Result<GramianSet> {
    require_brownian(sys, "reachability")?;
    ensure_stable(sys, horizon)?;
    let a_n = sys.ito_drift()?;
    let p_u = moment_integral(&a_n, sys.noise(), &(sys.b() * sys.b().transpose()), horizon)?;
    let p_x0 = moment_integral(&a_n, sys.noise(), &(sys.x0() * sys.x0().transpose()), horizon)?;
    let p = &p_u + &p_x0;
    Ok(GramianSet {
        p_u,
        p_x0,
        p,
        q: None,
        horizon,
        provenance: Provenance::Exact,
    })
}

/// Exact `Q_T` (or `Q`) from the dual moment equation.
pub fn exact_gramian_q(sys: &StochasticLinearSystem, horizon: Horizon) -> Result<DMatrix<f64>> {
    require_brownian(sys, "observability")?;
    ensure_stable(sys, horizon)?;
    let a_n = sys.ito_drift()?;
    let noise_t: Vec<DMatrix<f64>> = sys.noise().iter().map(|ni| ni.transpose()).collect();
    moment_integral(&a_n.transpose(), &noise_t, &(sys.c().transpose() * sys.c()), horizon)
}

/// Exact `P` and `Q` together.
pub fn exact_gramians(sys: &StochasticLinearSystem, horizon: Horizon) -> Result<GramianSet> {
    let mut set = exact_gramian_p(sys, horizon)?;
    set.q = Some(exact_gramian_q(sys, horizon)?);
    Ok(set)
}

/// One inequality of the dominant-subspace characterization.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceTerm {
    pub name: &'static str,
    pub lhs: f64,
    pub lhs_std_error: f64,
    pub rhs: f64,
}

impl SubspaceTerm {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// Margin measured in standard errors (infinite when the error is zero).
    pub fn holds_within(&self, standard_errors: f64) -> bool {
        self.margin() >= -standard_errors * self.lhs_std_error - 1e-12 * self.rhs.abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceReport {
    /// `∫E⟨x_{x0}, v⟩²` vs `vᵀP_{x0,T}v ‖z‖²`.
    pub initial: SubspaceTerm,
    /// `sup_t E⟨x_u, v⟩²` vs `vᵀP_{u,T}v ‖u‖²`.
    pub control: SubspaceTerm,
    /// `∫E⟨x, v⟩²` vs `2 vᵀP_T v max{‖z‖², T‖u‖²}`.
    pub full: SubspaceTerm,
    /// `∫E‖CΦv‖²` vs `vᵀQ_T v` (an equality).
    pub output: SubspaceTerm,
    /// The two raw terms behind the maximum in `full`.
    pub z_norm_sq: f64,
    pub t_u_norm_sq: f64,
}

/// Monte-Carlo check of the dominant-subspace estimates for direction `v`.
/// Time integrals use the right-endpoint rule on `steps` intervals.
#[allow(clippy::too_many_arguments)]
pub fn dominant_subspace_check(
    sys: &StochasticLinearSystem,
    gramians: &GramianSet,
    v: &DVector<f64>,
    u: &ControlSignal,
    z: &DVector<f64>,
    spec: &EmpiricalSpec,
) -> Result<SubspaceReport> {
    let n = sys.order();
    if v.len() != n || z.len() != sys.x0().ncols() || gramians.order() != n {
        return Err(MorError::Dimension(
            "direction, coefficient or Gramian size mismatch".into(),
        ));
    }
    let q_mat = gramians
        .q
        .as_ref()
        .ok_or_else(|| MorError::InvalidArgument("observability Gramian missing".into()))?;
    let grid = spec.validate()?;
    let h = grid.dt();
    let steps = grid.steps();
    let prop = Propagator::new(sys, grid, spec.scheme)?;
    let sampler = FbmSampler::new(grid, sys.hurst())?;
    let x0 = sys.x0() * z;
    let init_x0 = DMatrix::from_column_slice(n, 1, x0.as_slice());
    let init_v = DMatrix::from_column_slice(n, 1, v.as_slice());
    let zero_state = DMatrix::zeros(n, 1);
    let c = sys.c().clone();
    let vt = v.transpose();
    let q = sys.drivers();
    // slots: [∫⟨x_x0,v⟩², ∫⟨x,v⟩², ∫‖CΦv‖², ⟨x_u(t_k),v⟩² for k = 0..=N]
    let width = 3 + steps + 1;
    let acc = blocked_sum(
        spec.samples,
        || MomentAccumulator::new(width),
        |j, acc| {
            let noise = sampler.sample_indexed(q, spec.seed, j as u64);
            let mut xs = vec![0.0; steps + 1];
            prop.run(&init_x0, None, &noise, |k, x| xs[k] = (&vt * x)[(0, 0)])?;
            let mut us = vec![0.0; steps + 1];
            prop.run(&zero_state, Some(u), &noise, |k, x| us[k] = (&vt * x)[(0, 0)])?;
            let mut out = 0.0;
            prop.run(&init_v, None, &noise, |k, x| {
                if k > 0 {
                    out += (&c * x).norm_squared() * h;
                }
            })?;
            let mut row = vec![0.0; width];
            for k in 1..=steps {
                row[0] += xs[k] * xs[k] * h;
                let full = xs[k] + us[k];
                row[1] += full * full * h;
            }
            row[2] = out;
            for k in 0..=steps {
                row[3 + k] = us[k] * us[k];
            }
            acc.push(&row);
            Ok(())
        },
        |a, b| a.merge(b),
    )?;
    let mean = acc.mean();
    let se = acc.std_error();
    let (k_star, sup) =
        (0..=steps).map(|k| (k, mean[3 + k])).fold(
            (0, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        );
    let quad = |m: &DMatrix<f64>| (&vt * m * v)[(0, 0)];
    let z_norm_sq = z.norm_squared();
    let u_norm_sq = u.l2_norm(&grid).powi(2);
    let t_u_norm_sq = spec.t_end * u_norm_sq;
    Ok(SubspaceReport {
        initial: SubspaceTerm {
            name: "initial",
            lhs: mean[0],
            lhs_std_error: se[0],
            rhs: quad(&gramians.p_x0) * z_norm_sq,
        },
        control: SubspaceTerm {
            name: "control",
            lhs: sup,
            lhs_std_error: se[3 + k_star],
            rhs: quad(&gramians.p_u) * u_norm_sq,
        },
        full: SubspaceTerm {
            name: "full",
            lhs: mean[1],
            lhs_std_error: se[1],
            rhs: 2.0 * quad(&gramians.p) * z_norm_sq.max(t_u_norm_sq),
        },
        output: SubspaceTerm {
            name: "output",
            lhs: mean[2],
            lhs_std_error: se[2],
            rhs: quad(q_mat),
        },
        z_norm_sq,
        t_u_norm_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::HurstParam;
    use crate::model::Interpretation;

    fn mat(r: usize, c: usize, d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, d)
    }

    fn scalar(a: f64, n1: f64, b: f64, c: f64) -> StochasticLinearSystem {
        StochasticLinearSystem::without_initial_state(
            mat(1, 1, &[a]),
            mat(1, 1, &[b]),
            mat(1, 1, &[c]),
            vec![mat(1, 1, &[n1])],
            HurstParam::BROWNIAN,
        )
        .unwrap()
    }

    fn lcg_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        DMatrix::from_fn(r, c, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn scalar_infinite_horizon_two_thirds() {
        let sys = scalar(-1.0, 0.5, 1.0, 1.0);
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        // a_N = −0.875: (2·0.875 − 0.25) P = 1
        assert!((g.p[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((g.q.unwrap()[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.p_x0[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_finite_horizon_closed_form() {
        // Ż = (2a_N + n²) Z, ∫_0^T = (e^{κT} − 1)/κ
        let sys = scalar(-1.0, 0.5, 1.0, 1.0);
        let kappa = 2.0 * -0.875 + 0.25;
        for t in [0.3, 1.0, 4.0] {
            let p = exact_gramian_p(&sys, Horizon::Finite(t)).unwrap().p[(0, 0)];
            let expected = ((kappa * t).exp() - 1.0) / kappa;
            assert!((p - expected).abs() < 1e-13, "{p} vs {expected}");
        }
    }

    #[test]
    fn deterministic_case_is_classical_lyapunov() {
        let n = 5;
        let a = lcg_matrix(n, n, 3) - DMatrix::identity(n, n) * 2.0;
        let b = lcg_matrix(n, 2, 4);
        let sys = StochasticLinearSystem::without_initial_state(
            a.clone(),
            b.clone(),
            lcg_matrix(1, n, 5),
            vec![],
            HurstParam::BROWNIAN,
        )
        .unwrap();
        let p = exact_gramian_p(&sys, Horizon::Infinite).unwrap().p;
        let residual = &a * &p + &p * a.transpose() + &b * b.transpose();
        assert!(residual.amax() < 1e-12);
    }

    #[test]
    fn horizon_monotonicity() {
        let sys = StochasticLinearSystem::without_initial_state(
            mat(2, 2, &[-1.0, 0.3, 0.0, -2.0]),
            mat(2, 1, &[1.0, 1.0]),
            mat(1, 2, &[1.0, 0.0]),
            vec![mat(2, 2, &[0.4, 0.1, -0.2, 0.3])],
            HurstParam::BROWNIAN,
        )
        .unwrap();
        let p1 = exact_gramian_p(&sys, Horizon::Finite(0.5)).unwrap().p;
        let p2 = exact_gramian_p(&sys, Horizon::Finite(2.0)).unwrap().p;
        let p = exact_gramian_p(&sys, Horizon::Infinite).unwrap().p;
        for d in [&p2 - &p1, &p - &p2] {
            let (vals, _) = linalg::sym_eigen_desc(&d);
            assert!(vals.iter().all(|&x| x >= -1e-10));
        }
    }

    #[test]
    fn trapezoid_matches_exponential() {
        let n = 4;
        let a = lcg_matrix(n, n, 11) - DMatrix::identity(n, n) * 1.5;
        let noise = vec![lcg_matrix(n, n, 12) * 0.8, lcg_matrix(n, n, 13) * 0.5];
        let b = lcg_matrix(n, 1, 14);
        let m = &b * b.transpose();
        let exact = augmented_exponential(&a, &noise, &m, 1.0);
        let approx = trapezoidal_moment_integral(&a, &noise, &m, 1.0, 800).unwrap();
        assert!((&approx - &exact).amax() < 1e-5 * exact.amax());
        // second order: halving h cuts the error by ~4
        let coarse = trapezoidal_moment_integral(&a, &noise, &m, 1.0, 100).unwrap();
        let fine = trapezoidal_moment_integral(&a, &noise, &m, 1.0, 200).unwrap();
        let ratio = (&coarse - &exact).amax() / (&fine - &exact).amax();
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");

        // symmetric fast path against the same oracle
        let sym = linalg::symmetrize(&a);
        let nsym = vec![linalg::symmetrize(&noise[0])];
        let exact = augmented_exponential(&sym, &nsym, &m, 1.0);
        let approx = trapezoidal_moment_integral(&sym, &nsym, &m, 1.0, 800).unwrap();
        assert!((&approx - &exact).amax() < 1e-5 * exact.amax());
    }

    #[test]
    fn trapezoid_discrete_identity() {
        // summing the trapezoid steps: A P + P Aᵀ + Π[P] = Z_N − M
        let n = 3;
        let a = lcg_matrix(n, n, 21) - DMatrix::identity(n, n) * 2.0;
        let noise = vec![lcg_matrix(n, n, 22)];
        let m = DMatrix::identity(n, n);
        let p = trapezoidal_moment_integral(&a, &noise, &m, 40.0, 4000).unwrap();
        let residual = linalg::apply_lyapunov(&a, &noise, &p) + &m;
        // Z(40) is negligible for this stable system
        assert!(residual.amax() < 1e-8, "{}", residual.amax());
    }

    #[test]
    fn exact_p_rejects_fractional_and_unstable() {
        let young = StochasticLinearSystem::without_initial_state(
            mat(1, 1, &[-1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            vec![mat(1, 1, &[0.5])],
            HurstParam::new(0.75).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            exact_gramian_p(&young, Horizon::Finite(1.0)),
            Err(MorError::Interpretation(_))
        ));
        let unstable = scalar(-0.1, 1.0, 1.0, 1.0);
        assert!(matches!(
            exact_gramian_p(&unstable, Horizon::Infinite),
            Err(MorError::Unstable(_))
        ));
    }

    #[test]
    fn empirical_trivial_identity() {
        let sys = StochasticLinearSystem::without_initial_state(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            vec![],
            HurstParam::BROWNIAN,
        )
        .unwrap();
        let g = empirical_gramians(&sys, &EmpiricalSpec::new(1.0, 10, 3, 0)).unwrap();
        assert!((&g.p_u - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert_eq!(g.p_x0, DMatrix::zeros(2, 2));
        g.check().unwrap();
    }

    #[test]
    fn empirical_deterministic_decay() {
        // a = −1, b = 1: ∫_0^T e^{−2t} dt → 1/2
        let sys = StochasticLinearSystem::without_initial_state(
            mat(1, 1, &[-1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            vec![],
            HurstParam::BROWNIAN,
        )
        .unwrap();
        let g = empirical_gramians(&sys, &EmpiricalSpec::new(20.0, 4000, 1, 0)).unwrap();
        assert!((g.p_u[(0, 0)] - 0.5).abs() < 5e-3);
    }

    #[test]
    fn empirical_observability_zero_and_deterministic() {
        let a = mat(2, 2, &[-1.0, 0.5, -0.2, -1.5]);
        let zero_c = StochasticLinearSystem::without_initial_state(
            a.clone(),
            mat(2, 1, &[1.0, 0.0]),
            DMatrix::zeros(1, 2),
            vec![mat(2, 2, &[0.3, 0.0, 0.0, 0.3])],
            HurstParam::new(0.7).unwrap(),
        )
        .unwrap();
        let spec = EmpiricalSpec::new(1.0, 20, 4, 1);
        assert_eq!(empirical_observability(&zero_c, &spec).unwrap(), DMatrix::zeros(2, 2));

        let c = mat(1, 2, &[1.0, -0.5]);
        let det = StochasticLinearSystem::without_initial_state(
            a.clone(),
            mat(2, 1, &[1.0, 0.0]),
            c.clone(),
            vec![],
            HurstParam::BROWNIAN,
        )
        .unwrap();
        let steps = 2000;
        let q = empirical_observability(&det, &EmpiricalSpec::new(2.0, steps, 1, 0)).unwrap();
        // right-endpoint quadrature of ∫ e^{Aᵀt} CᵀC e^{At} dt with exact exponentials
        let h = 2.0 / steps as f64;
        let step = linalg::expm(&(&a * h));
        let mut phi = DMatrix::identity(2, 2);
        let mut oracle = DMatrix::zeros(2, 2);
        for _ in 0..steps {
            phi = &step * phi;
            let y = &c * &phi;
            oracle += y.transpose() * y * h;
        }
        assert!((&q - &oracle).amax() < 1e-5 * oracle.amax());
    }

    #[test]
    fn gramians_transform_covariantly() {
        let sys = StochasticLinearSystem::new(
            mat(2, 2, &[-1.0, 0.3, -0.4, -2.0]),
            mat(2, 1, &[1.0, 0.5]),
            mat(1, 2, &[1.0, -1.0]),
            vec![mat(2, 2, &[0.2, 0.1, -0.3, 0.4])],
            mat(2, 1, &[0.3, -0.7]),
            DVector::from_element(1, 1.0),
            HurstParam::BROWNIAN,
            Interpretation::Stratonovich,
        )
        .unwrap();
        let s = mat(2, 2, &[2.0, 1.0, 0.5, 1.5]);
        let s_inv = s.clone().try_inverse().unwrap();
        let tsys = sys.transform(&s, &s_inv).unwrap();
        for horizon in [Horizon::Finite(1.5), Horizon::Infinite] {
            let g = exact_gramians(&sys, horizon).unwrap();
            let gt = exact_gramians(&tsys, horizon).unwrap();
            let p_expected = &s * &g.p * s.transpose();
            let q_expected = s_inv.transpose() * g.q.as_ref().unwrap() * &s_inv;
            assert!((&gt.p - &p_expected).amax() < 1e-11 * p_expected.amax());
            assert!((gt.q.as_ref().unwrap() - &q_expected).amax() < 1e-11 * q_expected.amax());
            g.check().unwrap();
        }
        // empirical Gramians on shared noise transform the same way (up to rounding)
        let spec = EmpiricalSpec::new(1.0, 30, 50, 5);
        let g = empirical_gramians(&sys, &spec).unwrap();
        let gt = empirical_gramians(&tsys, &spec).unwrap();
        let p_expected = &s * &g.p * s.transpose();
        assert!((&gt.p - &p_expected).amax() < 1e-10 * p_expected.amax());
    }

    #[test]
    fn empirical_reproducible_and_checked() {
        let sys = StochasticLinearSystem::new(
            mat(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            mat(2, 1, &[1.0, 1.0]),
            mat(1, 2, &[1.0, 1.0]),
            vec![mat(2, 2, &[0.5, 0.0, 0.2, 0.5])],
            mat(2, 1, &[1.0, 0.0]),
            DVector::from_element(1, 1.0),
            HurstParam::new(0.75).unwrap(),
            Interpretation::Young,
        )
        .unwrap();
        let spec = EmpiricalSpec::new(1.0, 25, 70, 9);
        let a = empirical_gramians(&sys, &spec).unwrap();
        let b = empirical_gramians(&sys, &spec).unwrap();
        assert_eq!(a.p, b.p);
        a.check().unwrap();
    }
}
