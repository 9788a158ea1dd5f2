//! A-priori output error bounds for balanced truncation at H = 1/2 and the
//! Monte-Carlo error measure `R_E`.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{MorError, Result};
use crate::fbm::{FbmSampler, UniformGrid};
use crate::integrate::{ControlSignal, Propagator, Scheme};
use crate::linalg::{self, CheckedLu};
use crate::model::{Interpretation, StochasticLinearSystem};
use crate::montecarlo::{blocked_sum, MomentAccumulator};
use crate::reduce::{ReducedOrderModel, SplittingRom};

/// Error bound `bound · ‖u‖_{L²_T}` with its trace components.
#[derive(Clone, Debug)]
pub struct BoundReport {
    pub method: String,
    pub r: usize,
    pub bound_value: f64,
    /// `tr(Σ_2 𝒲)`.
    pub tail_term: f64,
    /// `tr(Σ_1 (Q̂_1ᵀ − Q_r) Δ_{N,11})`; zero for the corrected bound.
    pub drift_term: f64,
    pub q_hat: DMatrix<f64>,
    pub q_r: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub measured_error: Option<f64>,
    pub std_error: Option<f64>,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "method,r,bound,tail_term,drift_term,measured_error,stderr";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{},{}",
            self.method,
            self.r,
            self.bound_value,
            self.tail_term,
            self.drift_term,
            opt(self.measured_error),
            opt(self.std_error)
        )
    }
}

/// Blocks of a balanced system split at `r`.
struct Partition {
    r: usize,
    a_n: DMatrix<f64>,
    noise: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
}

impl Partition {
    fn new(sys_bal: &StochasticLinearSystem, r: usize) -> Result<Self> {
        if sys_bal.interpretation() == Interpretation::Young {
            return Err(MorError::Interpretation("error bounds exist only for H = 1/2".into()));
        }
        let n = sys_bal.order();
        if r == 0 || r > n {
            return Err(MorError::Rank { requested: r, rank: n });
        }
        Ok(Self {
            r,
            a_n: sys_bal.ito_drift()?,
            noise: sys_bal.noise().to_vec(),
            c: sys_bal.c().clone(),
        })
    }

    fn n(&self) -> usize {
        self.a_n.nrows()
    }

    fn block(m: &DMatrix<f64>, rows: (usize, usize), cols: (usize, usize)) -> DMatrix<f64> {
        m.view((rows.0, cols.0), (rows.1 - rows.0, cols.1 - cols.0))
            .into_owned()
    }

    fn top_left(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        Self::block(m, (0, self.r), (0, self.r))
    }

    fn top_right(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        Self::block(m, (0, self.r), (self.r, self.n()))
    }

    fn bottom_left(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        Self::block(m, (self.r, self.n()), (0, self.r))
    }

    /// `Δ_{N,11} = Σ N_{i,12} N_{i,21}`.
    fn delta(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.r, self.r);
        for ni in &self.noise {
            d += self.top_right(ni) * self.bottom_left(ni);
        }
        d
    }

    fn c1(&self) -> DMatrix<f64> {
        self.c.columns(0, self.r).into_owned()
    }

    fn c2(&self) -> DMatrix<f64> {
        self.c.columns(self.r, self.n() - self.r).into_owned()
    }
}

/// Solves `L X + X R + Σ_i L_i X R_i = F` for `X` (`r × n`) by Kronecker
/// vectorization.
fn kron_sylvester(
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
    pairs: &[(DMatrix<f64>, DMatrix<f64>)],
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (r, n) = (left.nrows(), right.nrows());
    let ir = DMatrix::<f64>::identity(r, r);
    let i_n = DMatrix::<f64>::identity(n, n);
    let mut k = i_n.kronecker(left) + right.transpose().kronecker(&ir);
    for (li, ri) in pairs {
        k += ri.transpose().kronecker(li);
    }
    let lu = CheckedLu::new(k, 1e-13).ok_or_else(|| {
        MorError::Singular("dual equation has no unique solution; the stability preconditions are violated".into())
    })?;
    Ok(linalg::unvec(&lu.solve_vec(&linalg::vec_of(rhs)), r, n))
}

fn ito_stable(a_ito: &DMatrix<f64>, noise: &[DMatrix<f64>]) -> Result<bool> {
    let n = a_ito.nrows();
    let sys = StochasticLinearSystem::new(
        a_ito.clone(),
        DMatrix::zeros(n, 0),
        DMatrix::zeros(0, n),
        noise.to_vec(),
        DMatrix::zeros(n, 0),
        DVector::zeros(0),
        crate::fbm::HurstParam::BROWNIAN,
        Interpretation::Ito,
    )?;
    Ok(sys.is_mean_square_stable()?.stable)
}

fn reduced_noise(part: &Partition) -> Vec<DMatrix<f64>> {
    part.noise.iter().map(|ni| part.top_left(ni)).collect()
}

/// Itô drift of the projection ROM, `A_{N,11} − ½ Δ_{N,11}`.
fn projection_drift(part: &Partition) -> DMatrix<f64> {
    part.top_left(&part.a_n) - part.delta() * 0.5
}

fn check_preconditions(sys_bal: &StochasticLinearSystem, part: &Partition, drift: &DMatrix<f64>) -> Result<()> {
    if !sys_bal.is_mean_square_stable()?.stable {
        return Err(MorError::Unstable(
            "the full balanced system is not mean-square stable".into(),
        ));
    }
    if !ito_stable(drift, &reduced_noise(part))? {
        return Err(MorError::Unstable("the reduced model is not mean-square stable".into()));
    }
    Ok(())
}

fn mixed_dual_with(part: &Partition, drift: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pairs: Vec<_> = part
        .noise
        .iter()
        .map(|ni| (part.top_left(ni).transpose(), ni.clone()))
        .collect();
    let rhs = -(part.c1().transpose() * &part.c);
    kron_sylvester(&drift.transpose(), &part.a_n, &pairs, &rhs)
}

fn reduced_dual_with(part: &Partition, drift: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pairs: Vec<_> = reduced_noise(part)
        .into_iter()
        .map(|n11| (n11.transpose(), n11))
        .collect();
    let c1 = part.c1();
    let rhs = -(c1.transpose() * &c1);
    Ok(linalg::symmetrize(&kron_sylvester(
        &drift.transpose(),
        drift,
        &pairs,
        &rhs,
    )?))
}

/// `Q̂` (`r × n`) of the mixed dual equation of the projection ROM.
pub fn solve_mixed_dual(sys_bal: &StochasticLinearSystem, r: usize) -> Result<DMatrix<f64>> {
    let part = Partition::new(sys_bal, r)?;
    let drift = projection_drift(&part);
    check_preconditions(sys_bal, &part, &drift)?;
    mixed_dual_with(&part, &drift)
}

/// `Q_r` (`r × r`) of the reduced dual equation of the projection ROM.
pub fn solve_reduced_dual(sys_bal: &StochasticLinearSystem, r: usize) -> Result<DMatrix<f64>> {
    let part = Partition::new(sys_bal, r)?;
    let drift = projection_drift(&part);
    if !ito_stable(&drift, &reduced_noise(&part))? {
        return Err(MorError::Unstable("the reduced model is not mean-square stable".into()));
    }
    reduced_dual_with(&part, &drift)
}

/// `𝒲 = C_2ᵀC_2 + 2A_{N,12}ᵀQ̂_2 + Σ N_{i,12}ᵀ(2Q̂[N_{i,12}; N_{i,22}] − Q_r N_{i,12})`.
fn w_matrix(part: &Partition, q_hat: &DMatrix<f64>, q_r: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, n) = (part.r, part.n());
    let c2 = part.c2();
    let q_hat2 = q_hat.columns(r, n - r).into_owned();
    let mut w = c2.transpose() * &c2 + part.top_right(&part.a_n).transpose() * &q_hat2 * 2.0;
    for ni in &part.noise {
        let n12 = part.top_right(ni);
        let right_cols = ni.columns(r, n - r).into_owned();
        w += n12.transpose() * (q_hat * right_cols * 2.0 - q_r * &n12);
    }
    w
}

fn finish(method: &str, r: usize, tail: f64, drift: f64) -> Result<f64> {
    let total = tail + drift;
    let scale = tail.abs() + drift.abs();
    if total >= 0.0 {
        return Ok(total.sqrt());
    }
    if total >= -1e-10 * scale {
        warn!("{method} bound at r = {r}: clipped negative argument {total:e} to zero");
        return Ok(0.0);
    }
    Err(MorError::Unstable(format!(
        "{method} bound at r = {r} has negative argument {total:e}; preconditions violated"
    )))
}

/// Bound for the projection ROM; `sys_bal` must have balanced infinite-horizon
/// reachability Gramian `diag(sigma)` and zero initial state.
pub fn bound_projection(sys_bal: &StochasticLinearSystem, sigma: &DVector<f64>, r: usize) -> Result<BoundReport> {
    let part = Partition::new(sys_bal, r)?;
    if sigma.len() != part.n() {
        return Err(MorError::Dimension("sigma length differs from system order".into()));
    }
    let drift = projection_drift(&part);
    check_preconditions(sys_bal, &part, &drift)?;
    let q_hat = mixed_dual_with(&part, &drift)?;
    let q_r = reduced_dual_with(&part, &drift)?;
    let w = w_matrix(&part, &q_hat, &q_r);
    let sigma1 = DMatrix::from_diagonal(&sigma.rows(0, r).into_owned());
    let q_hat1 = q_hat.columns(0, r).into_owned();
    let drift_term = (sigma1 * (q_hat1.transpose() - &q_r) * part.delta()).trace();
    let tail_term = tail_trace(sigma, r, &w);
    let bound_value = finish("projection", r, tail_term, drift_term)?;
    Ok(BoundReport {
        method: "projection".into(),
        r,
        bound_value,
        tail_term,
        drift_term,
        q_hat,
        q_r,
        w,
        measured_error: None,
        std_error: None,
    })
}

/// Bound for the Itô-corrected ROM: the duals use the drift `A_{N,11}`.
pub fn bound_corrected(sys_bal: &StochasticLinearSystem, sigma: &DVector<f64>, r: usize) -> Result<BoundReport> {
    let part = Partition::new(sys_bal, r)?;
    if sigma.len() != part.n() {
        return Err(MorError::Dimension("sigma length differs from system order".into()));
    }
    let drift = part.top_left(&part.a_n);
    check_preconditions(sys_bal, &part, &drift)?;
    let q_hat = mixed_dual_with(&part, &drift)?;
    let q_r = reduced_dual_with(&part, &drift)?;
    let w = w_matrix(&part, &q_hat, &q_r);
    let tail_term = tail_trace(sigma, r, &w);
    let bound_value = finish("corrected", r, tail_term, 0.0)?;
    Ok(BoundReport {
        method: "corrected".into(),
        r,
        bound_value,
        tail_term,
        drift_term: 0.0,
        q_hat,
        q_r,
        w,
        measured_error: None,
        std_error: None,
    })
}

fn tail_trace(sigma: &DVector<f64>, r: usize, w: &DMatrix<f64>) -> f64 {
    (0..sigma.len() - r).map(|i| sigma[r + i] * w[(i, i)]).sum()
}

/// What a full model is compared against.
#[derive(Clone, Copy)]
pub enum Approximant<'a> {
    Full(&'a StochasticLinearSystem),
    Rom(&'a ReducedOrderModel),
    Splitting(&'a SplittingRom),
}

/// Simulation parameters for error measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorSpec {
    pub t_end: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl ErrorSpec {
    pub fn new(t_end: f64, steps: usize, samples: usize, seed: u64) -> Self {
        Self {
            t_end,
            steps,
            samples,
            seed,
            scheme: Scheme::Midpoint,
        }
    }
}

/// Monte-Carlo output error statistics on shared noise.
#[derive(Clone, Debug)]
pub struct ErrorEstimate {
    /// `sup_k E‖y − y_r‖ / sup_k E‖y‖`.
    pub r_e: f64,
    /// `sup_k E‖y(t_k) − y_r(t_k)‖`.
    pub sup_error: f64,
    /// Standard error of the mean at the maximizing time.
    pub sup_error_std_error: f64,
    pub sup_output: f64,
    /// `E‖y(t_k) − y_r(t_k)‖` for every grid point.
    pub mean_error: Vec<f64>,
}

struct RomRunner {
    prop: Propagator,
    c: DMatrix<f64>,
    x0: DVector<f64>,
}

impl RomRunner {
    fn new(sys: &StochasticLinearSystem, grid: UniformGrid, scheme: Scheme) -> Result<Self> {
        Ok(Self {
            prop: Propagator::new(sys, grid, scheme)?,
            c: sys.c().clone(),
            x0: sys.initial_state(),
        })
    }
}

/// `R_E` and the sup-in-time mean output error of `approx` against `sys`.
pub fn reduction_error(
    sys: &StochasticLinearSystem,
    approx: Approximant<'_>,
    u: &ControlSignal,
    spec: &ErrorSpec,
) -> Result<ErrorEstimate> {
    Ok(reduction_errors(sys, &[approx], u, spec)?.remove(0))
}

/// [`reduction_error`] for several approximants on the same noise paths; the
/// full model is simulated once per sample.
pub fn reduction_errors(
    sys: &StochasticLinearSystem,
    approxs: &[Approximant<'_>],
    u: &ControlSignal,
    spec: &ErrorSpec,
) -> Result<Vec<ErrorEstimate>> {
    if spec.samples == 0 {
        return Err(MorError::InvalidArgument("need at least one sample".into()));
    }
    let grid = UniformGrid::new(spec.t_end, spec.steps)?;
    let full = RomRunner::new(sys, grid, spec.scheme)?;
    let mut groups: Vec<Vec<RomRunner>> = Vec::with_capacity(approxs.len());
    for approx in approxs {
        let runners: Vec<RomRunner> = match approx {
            Approximant::Full(other) => vec![RomRunner::new(other, grid, spec.scheme)?],
            Approximant::Rom(rom) => vec![RomRunner::new(&rom.sys_r, grid, spec.scheme)?],
            Approximant::Splitting(split) => split
                .control
                .iter()
                .chain(split.initial.iter())
                .map(|rom| RomRunner::new(&rom.sys_r, grid, spec.scheme))
                .collect::<Result<_>>()?,
        };
        if runners.iter().any(|rr| rr.c.nrows() != sys.outputs()) {
            return Err(MorError::Dimension("reduced and full outputs differ in size".into()));
        }
        groups.push(runners);
    }
    let sampler = FbmSampler::new(grid, sys.hurst())?;
    let q = sys.drivers();
    let points = spec.steps + 1;
    let width = (groups.len() + 1) * points;
    let acc = blocked_sum(
        spec.samples,
        || MomentAccumulator::new(width),
        |j, acc| {
            let noise = sampler.sample_indexed(q, spec.seed, j as u64);
            let y = full.prop.outputs(&full.c, &full.x0, Some(u), &noise)?;
            let mut row = vec![0.0; width];
            for k in 0..points {
                row[k] = y.column(k).norm();
            }
            for (g, runners) in groups.iter().enumerate() {
                let mut y_r = DMatrix::zeros(y.nrows(), points);
                for rr in runners {
                    y_r += rr.prop.outputs(&rr.c, &rr.x0, Some(u), &noise)?;
                }
                let base = (g + 1) * points;
                for k in 0..points {
                    row[base + k] = (y.column(k) - y_r.column(k)).norm();
                }
            }
            acc.push(&row);
            Ok(())
        },
        |a, b| a.merge(b),
    )?;
    let mean = acc.mean();
    let se = acc.std_error();
    let sup_output = mean[..points].iter().cloned().fold(0.0, f64::max);
    Ok((0..groups.len())
        .map(|g| {
            let err = &mean[(g + 1) * points..(g + 2) * points];
            let (k_star, sup_error) =
                err.iter().cloned().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            ErrorEstimate {
                r_e: if sup_output > 0.0 { sup_error / sup_output } else { 0.0 },
                sup_error,
                sup_error_std_error: se[(g + 1) * points + k_star],
                sup_output,
                mean_error: err.to_vec(),
            }
        })
        .collect())
}
