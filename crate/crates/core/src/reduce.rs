//! Balancing, truncation and POD.

use log::info;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MorError, Result};
use crate::gramians::GramianSet;
use crate::linalg;
use crate::model::{Interpretation, StochasticLinearSystem};

/// Eigen/singular values below this multiple of the largest are treated as
/// numerically zero.
pub const RANK_TOL: f64 = 1e-12;

/// Relative cut-off for the Gramian factors of square-root truncation.
pub const FACTOR_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancingMethod {
    PBalance,
    PqBalance,
    PEmpirical,
    PqEmpirical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Projection,
    ItoCorrected,
    Pod,
    PodSplitting,
    GramianSplitting,
}

/// Full balancing transformation `x̃ = S x`.
#[derive(Clone, Debug)]
pub struct BalancedRealization {
    pub sys_bal: StochasticLinearSystem,
    pub s: DMatrix<f64>,
    pub s_inv: DMatrix<f64>,
    /// Diagonal of the balanced Gramian(s), nonincreasing.
    pub sigma: DVector<f64>,
    pub method: BalancingMethod,
    /// Number of entries of `sigma` above `RANK_TOL · sigma[0]`.
    pub rank: usize,
}

/// Petrov–Galerkin reduced model `(WᵀAV, WᵀB, CV, WᵀN_iV, WᵀX0)`, possibly
/// with a corrected drift.
#[derive(Clone, Debug)]
pub struct ReducedOrderModel {
    pub sys_r: StochasticLinearSystem,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub recipe: Recipe,
    pub r: usize,
    /// `½ Σ N_{i,12} N_{i,21}` for the corrected recipe, zero otherwise.
    pub correction: DMatrix<f64>,
    /// Full vector of balancing or POD values, when available.
    pub sigma: Option<DVector<f64>>,
}

impl ReducedOrderModel {
    /// `Σ_{k>r} σ_k`.
    pub fn truncated_tail_sum(&self) -> f64 {
        self.sigma.as_ref().map(|s| s.iter().skip(self.r).sum()).unwrap_or(0.0)
    }

    /// `‖WᵀV − I‖_max`.
    pub fn biorthogonality_defect(&self) -> f64 {
        (self.w.transpose() * &self.v - DMatrix::identity(self.r, self.r)).amax()
    }
}

fn numerical_rank(values: &DVector<f64>) -> usize {
    let top = values.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > RANK_TOL * top).count()
}

fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(MorError::Dimension(format!("{name} must be square")));
    }
    if !linalg::is_symmetric(m, 1e-10) {
        return Err(MorError::InvalidArgument(format!("{name} is not symmetric")));
    }
    let (vals, vecs) = linalg::sym_eigen_desc(m);
    let trace = m.trace().abs();
    let smallest = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if smallest < -1e-10 * trace {
        return Err(MorError::NotDefinite {
            eigenvalue: smallest,
            largest: vals[0],
        });
    }
    Ok((vals, vecs))
}

/// `P`-balancing: `P = Sᵀ Σ S` with `S` orthogonal.
pub fn p_balance(sys: &StochasticLinearSystem, p: &DMatrix<f64>) -> Result<BalancedRealization> {
    p_balance_as(sys, p, BalancingMethod::PBalance)
}

/// `P`-balancing tagged with the given method (exact or empirical).
pub fn p_balance_as(
    sys: &StochasticLinearSystem,
    p: &DMatrix<f64>,
    method: BalancingMethod,
) -> Result<BalancedRealization> {
    if p.nrows() != sys.order() {
        return Err(MorError::Dimension("Gramian order differs from system order".into()));
    }
    let (vals, mut u) = check_psd(p, "P")?;
    linalg::normalize_column_signs(&mut u);
    let sigma = vals.map(|v| v.max(0.0));
    let rank = numerical_rank(&sigma);
    if rank < sys.order() {
        info!(
            "P has numerical rank {rank} of {}; truncation orders are limited to {rank}",
            sys.order()
        );
    }
    let s = u.transpose();
    let sys_bal = sys.transform(&s, &u)?;
    Ok(BalancedRealization {
        sys_bal,
        s,
        s_inv: u,
        sigma,
        method,
        rank,
    })
}

/// Square-root `P/Q`-balancing; both Gramians must be positive definite.
pub fn pq_balance(sys: &StochasticLinearSystem, p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<BalancedRealization> {
    pq_balance_as(sys, p, q, BalancingMethod::PqBalance)
}

pub fn pq_balance_as(
    sys: &StochasticLinearSystem,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    method: BalancingMethod,
) -> Result<BalancedRealization> {
    let n = sys.order();
    if p.nrows() != n || q.nrows() != n {
        return Err(MorError::Dimension("Gramian order differs from system order".into()));
    }
    for (m, name) in [(p, "P"), (q, "Q")] {
        let (vals, _) = check_psd(m, name)?;
        if vals[n - 1] <= RANK_TOL * vals[0] {
            return Err(MorError::NotDefinite {
                eigenvalue: vals[n - 1],
                largest: vals[0],
            });
        }
    }
    let chol = Cholesky::new(linalg::symmetrize(p)).ok_or(MorError::NotDefinite {
        eigenvalue: 0.0,
        largest: p.amax(),
    })?;
    let l = chol.l();
    let core = linalg::symmetrize(&(l.transpose() * q * &l));
    let (sig2, mut u) = linalg::sym_eigen_desc(&core);
    linalg::normalize_column_signs(&mut u);
    let sigma = sig2.map(|v| v.max(0.0).sqrt());
    if sigma[n - 1] <= 0.0 {
        return Err(MorError::NotDefinite {
            eigenvalue: sig2[n - 1],
            largest: sig2[0],
        });
    }
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| MorError::Singular("Cholesky factor of P is singular".into()))?;
    let half = sigma.map(f64::sqrt);
    // S = Σ^{1/2} Uᵀ L⁻¹,  S⁻¹ = L U Σ^{-1/2}
    let mut s = u.transpose() * l_inv;
    for (i, mut row) in s.row_iter_mut().enumerate() {
        row *= half[i];
    }
    let mut s_inv = &l * &u;
    for (j, mut col) in s_inv.column_iter_mut().enumerate() {
        col /= half[j];
    }
    let sys_bal = sys.transform(&s, &s_inv)?;
    let rank = numerical_rank(&sigma);
    Ok(BalancedRealization {
        sys_bal,
        s,
        s_inv,
        sigma,
        method,
        rank,
    })
}

/// Columns `0..r` of the identity.
fn leading_columns(n: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 })
}

fn check_order(r: usize, rank: usize) -> Result<()> {
    if r == 0 || r > rank {
        return Err(MorError::Rank { requested: r, rank });
    }
    Ok(())
}

/// Keep the leading `r × r` blocks of the balanced system.
pub fn truncate_projection(bal: &BalancedRealization, r: usize) -> Result<ReducedOrderModel> {
    check_order(r, bal.rank)?;
    let n = bal.sys_bal.order();
    let e = leading_columns(n, r);
    let sys_r = bal.sys_bal.project(&e, &e)?;
    Ok(ReducedOrderModel {
        sys_r,
        v: bal.s_inv.columns(0, r).into_owned(),
        w: bal.s.transpose().columns(0, r).into_owned(),
        recipe: Recipe::Projection,
        r,
        correction: DMatrix::zeros(r, r),
        sigma: Some(bal.sigma.clone()),
    })
}

fn require_brownian(sys: &StochasticLinearSystem) -> Result<()> {
    if sys.interpretation() == Interpretation::Young {
        return Err(MorError::Interpretation(
            "the Itô-corrected reduced model exists only for H = 1/2".into(),
        ));
    }
    Ok(())
}

/// Truncate the Itô form and convert back: Stratonovich drift
/// `A_11 + ½ Σ N_{i,12} N_{i,21}`.
pub fn truncate_corrected(bal: &BalancedRealization, r: usize) -> Result<ReducedOrderModel> {
    require_brownian(&bal.sys_bal)?;
    let mut rom = truncate_projection(bal, r)?;
    let corrected = corrected_projection(
        &bal.sys_bal,
        &leading_columns(bal.sys_bal.order(), r),
        &leading_columns(bal.sys_bal.order(), r),
    )?;
    rom.correction = corrected.circle_drift() - rom.sys_r.circle_drift();
    rom.sys_r = corrected;
    rom.recipe = Recipe::ItoCorrected;
    Ok(rom)
}

/// Project the Itô form of `sys` with `(V, W)`, returned in the input's
/// interpretation.
fn corrected_projection(
    sys: &StochasticLinearSystem,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<StochasticLinearSystem> {
    let ito = sys.to_ito()?.project(v, w)?;
    match sys.interpretation() {
        Interpretation::Ito => Ok(ito),
        _ => ito.to_stratonovich(),
    }
}

/// Reduced model from arbitrary biorthogonal bases.
pub fn project_rom(
    sys: &StochasticLinearSystem,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    recipe: Recipe,
    sigma: Option<DVector<f64>>,
) -> Result<ReducedOrderModel> {
    let r = v.ncols();
    let plain = sys.project(&v, &w)?;
    let (sys_r, correction) = if recipe == Recipe::ItoCorrected {
        require_brownian(sys)?;
        let corrected = corrected_projection(sys, &v, &w)?;
        let corr = corrected.circle_drift() - plain.circle_drift();
        (corrected, corr)
    } else {
        (plain, DMatrix::zeros(r, r))
    };
    Ok(ReducedOrderModel {
        sys_r,
        v,
        w,
        recipe,
        r,
        correction,
        sigma,
    })
}

/// Square-root balanced truncation from possibly singular Gramians.
///
/// With `P ≈ L_P L_Pᵀ`, `Q ≈ L_Q L_Qᵀ` (eigen factors, clipped at
/// `FACTOR_TOL`) and `L_Qᵀ L_P = U Σ Vᵀ`, the bases are
/// `W = L_Q U_1 Σ_1^{-1/2}` and `V = L_P V_1 Σ_1^{-1/2}`. For definite
/// Gramians this is the leading block of [`pq_balance`] up to column signs.
pub fn square_root_truncation(
    sys: &StochasticLinearSystem,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: usize,
    recipe: Recipe,
) -> Result<ReducedOrderModel> {
    let n = sys.order();
    if p.nrows() != n || q.nrows() != n {
        return Err(MorError::Dimension("Gramian order differs from system order".into()));
    }
    check_psd(p, "P")?;
    check_psd(q, "Q")?;
    let lp = linalg::psd_factor(p, FACTOR_TOL);
    let lq = linalg::psd_factor(q, FACTOR_TOL);
    if lp.ncols() == 0 || lq.ncols() == 0 {
        return Err(MorError::Rank { requested: r, rank: 0 });
    }
    let svd = (lq.transpose() * &lp).svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    let rank = numerical_rank(&sv);
    check_order(r, rank)?;
    let u = svd.u.as_ref().expect("left vectors");
    let vt = svd.v_t.as_ref().expect("right vectors");
    let mut w = DMatrix::zeros(n, r);
    let mut v = DMatrix::zeros(n, r);
    for (dst, &src) in order.iter().take(r).enumerate() {
        let scale = 1.0 / svd.singular_values[src].sqrt();
        let mut wc = &lq * u.column(src) * scale;
        let mut vc = &lp * vt.row(src).transpose() * scale;
        // sign convention: largest-magnitude entry of V positive
        let pivot = vc
            .iter()
            .cloned()
            .fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
        if pivot < 0.0 {
            wc.neg_mut();
            vc.neg_mut();
        }
        w.set_column(dst, &wc);
        v.set_column(dst, &vc);
    }
    let mut sigma = DVector::zeros(n);
    for (i, s) in sv.iter().enumerate().take(n) {
        sigma[i] = *s;
    }
    project_rom(sys, v, w, recipe, Some(sigma))
}

/// Orthonormal POD basis with all singular values.
#[derive(Clone, Debug)]
pub struct PodBasis {
    pub v: DMatrix<f64>,
    pub singular_values: DVector<f64>,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        numerical_rank(&self.singular_values)
    }

    pub fn leading(&self, r: usize) -> Result<DMatrix<f64>> {
        check_order(r, self.rank())?;
        Ok(self.v.columns(0, r).into_owned())
    }
}

/// POD from the snapshot correlation `S Sᵀ`; singular values are the square
/// roots of its eigenvalues.
pub fn pod_from_correlation(corr: &DMatrix<f64>) -> Result<PodBasis> {
    let (vals, mut v) = check_psd(corr, "snapshot correlation")?;
    linalg::normalize_column_signs(&mut v);
    Ok(PodBasis {
        v,
        singular_values: vals.map(|x| x.max(0.0).sqrt()),
    })
}

/// Leading `r` left singular vectors of the snapshot matrix.
pub fn pod_basis(snapshots: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    pod_decomposition(snapshots)?.leading(r)
}

/// Full POD of a snapshot matrix (thin SVD, or the correlation matrix when
/// there are many more columns than rows).
pub fn pod_decomposition(snapshots: &DMatrix<f64>) -> Result<PodBasis> {
    let n = snapshots.nrows();
    if snapshots.ncols() > 4 * n {
        return pod_from_correlation(&(snapshots * snapshots.transpose()));
    }
    let svd = snapshots.clone().svd(true, false);
    let u = svd.u.expect("left vectors");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut v = DMatrix::zeros(n, k);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &u.column(src));
    }
    linalg::normalize_column_signs(&mut v);
    Ok(PodBasis {
        v,
        singular_values: DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i])),
    })
}

/// Reduced models of the controlled subsystem (zero initial state) and the
/// uncontrolled subsystem (`x0 = X0 z`); the output is `y_{u,r} + y_{x0,r}`.
/// A subsystem whose input data vanish has no model.
#[derive(Clone, Debug)]
pub struct SplittingRom {
    pub control: Option<ReducedOrderModel>,
    pub initial: Option<ReducedOrderModel>,
}

/// What the splitting reduction is built from.
pub enum SplittingData<'a> {
    /// `P_u` / `P_x0` balancing; with `Q` present, square-root `P/Q`
    /// truncation per subsystem.
    Gramians(&'a GramianSet),
    /// POD bases of control and initial-state snapshots.
    Pod {
        control: &'a PodBasis,
        initial: &'a PodBasis,
    },
}

/// Corrected recipe for noisy H = 1/2 systems, plain projection otherwise.
pub fn default_recipe(sys: &StochasticLinearSystem) -> Recipe {
    if sys.interpretation() != Interpretation::Young && sys.drivers() > 0 {
        Recipe::ItoCorrected
    } else {
        Recipe::Projection
    }
}

pub fn build_splitting_rom(
    sys: &StochasticLinearSystem,
    data: SplittingData<'_>,
    r_u: usize,
    r_x0: usize,
) -> Result<SplittingRom> {
    let control_sys = sys.input_subsystem();
    let initial_sys = sys.initial_subsystem();
    let has_control = sys.b().amax() > 0.0;
    let has_initial = sys.initial_state().amax() > 0.0;
    match data {
        SplittingData::Gramians(g) => {
            let reduce = |sub: &StochasticLinearSystem, p: &DMatrix<f64>, r: usize| -> Result<ReducedOrderModel> {
                let mut rom = match &g.q {
                    Some(q) => square_root_truncation(sub, p, q, r, default_recipe(sub))?,
                    None => {
                        let bal = p_balance_as(sub, p, BalancingMethod::PEmpirical)?;
                        if default_recipe(sub) == Recipe::ItoCorrected {
                            truncate_corrected(&bal, r)?
                        } else {
                            truncate_projection(&bal, r)?
                        }
                    }
                };
                rom.recipe = Recipe::GramianSplitting;
                Ok(rom)
            };
            Ok(SplittingRom {
                control: if has_control {
                    Some(reduce(&control_sys, &g.p_u, r_u)?)
                } else {
                    None
                },
                initial: if has_initial {
                    Some(reduce(&initial_sys, &g.p_x0, r_x0)?)
                } else {
                    None
                },
            })
        }
        SplittingData::Pod { control, initial } => {
            let reduce = |sub: &StochasticLinearSystem, basis: &PodBasis, r: usize| -> Result<ReducedOrderModel> {
                let v = basis.leading(r)?;
                project_rom(
                    sub,
                    v.clone(),
                    v,
                    Recipe::PodSplitting,
                    Some(basis.singular_values.clone()),
                )
            };
            Ok(SplittingRom {
                control: if has_control {
                    Some(reduce(&control_sys, control, r_u)?)
                } else {
                    None
                },
                initial: if has_initial {
                    Some(reduce(&initial_sys, initial, r_x0)?)
                } else {
                    None
                },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::HurstParam;
    use crate::gramians::{exact_gramians, Horizon};

    fn mat(r: usize, c: usize, d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, d)
    }

    fn example_47() -> StochasticLinearSystem {
        StochasticLinearSystem::without_initial_state(
            mat(2, 2, &[-13.0 / 8.0, 1.25, -1.25, -2.0]),
            mat(2, 1, &[1.0, 0.0]),
            mat(1, 2, &[1.0, 0.0]),
            vec![mat(2, 2, &[1.5, -1.0, 1.0, 1.0])],
            HurstParam::BROWNIAN,
        )
        .unwrap()
    }

    fn lcg(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        DMatrix::from_fn(r, c, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    fn random_stable(n: usize, seed: u64) -> StochasticLinearSystem {
        let a = lcg(n, n, seed) - DMatrix::identity(n, n) * 1.5;
        StochasticLinearSystem::without_initial_state(
            a,
            lcg(n, 2, seed + 1),
            lcg(2, n, seed + 2),
            vec![lcg(n, n, seed + 3) * 0.6],
            HurstParam::BROWNIAN,
        )
        .unwrap()
    }

    #[test]
    fn example_47_stability_numbers() {
        let sys = example_47();
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        let bal = pq_balance(&sys, &g.p, g.q.as_ref().unwrap()).unwrap();
        assert!((bal.sigma[0] - 3.28885698).abs() < 1e-6);
        let proj = truncate_projection(&bal, 1).unwrap();
        let a11 = proj.sys_r.a()[(0, 0)];
        let n11 = proj.sys_r.noise()[0][(0, 0)];
        let proj_val = 2.0 * (a11 + 0.5 * n11 * n11) + n11 * n11;
        assert!((proj_val - 0.13825103).abs() < 1e-6, "{proj_val}");
        let corr = truncate_corrected(&bal, 1).unwrap();
        let an11 = corr.sys_r.ito_drift().unwrap()[(0, 0)];
        let corr_val = 2.0 * an11 + n11 * n11;
        assert!((corr_val - -0.85926317).abs() < 1e-6, "{corr_val}");
        assert!(!proj.sys_r.is_mean_square_stable().unwrap().stable);
        assert!(corr.sys_r.is_mean_square_stable().unwrap().stable);
    }

    #[test]
    fn p_balance_diagonal_input_unchanged() {
        let sys = random_stable(3, 1);
        let p = DMatrix::from_diagonal(&DVector::from_row_slice(&[3.0, 2.0, 1.0]));
        let bal = p_balance(&sys, &p).unwrap();
        assert_eq!(bal.s, DMatrix::identity(3, 3));
        assert_eq!(bal.sys_bal.a(), sys.a());
    }

    #[test]
    fn p_balance_diagonalizes_and_is_orthogonally_invariant() {
        let sys = random_stable(3, 7);
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        let bal = p_balance(&sys, &g.p).unwrap();
        let pb = exact_gramians(&bal.sys_bal, Horizon::Infinite).unwrap().p;
        let diag = DMatrix::from_diagonal(&bal.sigma);
        assert!((&pb - &diag).amax() < 1e-8 * bal.sigma[0]);

        let (_, o) = linalg::sym_eigen_desc(&linalg::symmetrize(&lcg(3, 3, 99)));
        let rotated = sys.transform(&o, &o.transpose()).unwrap();
        let gr = exact_gramians(&rotated, Horizon::Infinite).unwrap();
        let balr = p_balance(&rotated, &gr.p).unwrap();
        assert!((&balr.sigma - &bal.sigma).amax() < 1e-10 * bal.sigma[0]);
    }

    #[test]
    fn pq_balance_identity_and_product_eigenvalues() {
        let sys = random_stable(4, 3);
        let i4 = DMatrix::identity(4, 4);
        let bal = pq_balance(&sys, &i4, &i4).unwrap();
        assert!((&bal.sigma - DVector::from_element(4, 1.0)).amax() < 1e-14);
        assert!((&bal.s * bal.s.transpose() - &i4).amax() < 1e-12);

        let x = lcg(4, 4, 5);
        let y = lcg(4, 4, 6);
        let p = &x * x.transpose() + &i4 * 0.1;
        let q = &y * y.transpose() + &i4 * 0.2;
        let bal = pq_balance(&sys, &p, &q).unwrap();
        let mut eig: Vec<f64> = (&p * &q).complex_eigenvalues().iter().map(|z| z.re).collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (s, e) in bal.sigma.iter().zip(eig) {
            assert!((s * s - e).abs() < 1e-10 * e.abs().max(1.0));
        }
        assert!((&bal.s * &bal.s_inv - &i4).amax() < 1e-10);
        // transformed Gramians are diag(sigma)
        let diag = DMatrix::from_diagonal(&bal.sigma);
        assert!((&bal.s * &p * bal.s.transpose() - &diag).amax() < 1e-10);
        assert!((bal.s_inv.transpose() * &q * &bal.s_inv - &diag).amax() < 1e-10);
    }

    #[test]
    fn pq_balance_rejects_singular() {
        let sys = random_stable(2, 1);
        let p = mat(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = pq_balance(&sys, &p, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, MorError::NotDefinite { .. }));
    }

    #[test]
    fn truncation_rank_and_biorthogonality() {
        let sys = random_stable(4, 11);
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        let bal = pq_balance(&sys, &g.p, g.q.as_ref().unwrap()).unwrap();
        for r in 1..=4 {
            for rom in [
                truncate_projection(&bal, r).unwrap(),
                truncate_corrected(&bal, r).unwrap(),
            ] {
                assert!(rom.biorthogonality_defect() < 1e-10);
            }
        }
        assert!(matches!(truncate_projection(&bal, 5), Err(MorError::Rank { .. })));
        assert!(matches!(truncate_projection(&bal, 0), Err(MorError::Rank { .. })));
    }

    #[test]
    fn full_order_truncation_is_balanced_system() {
        let sys = random_stable(3, 13);
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        let bal = pq_balance(&sys, &g.p, g.q.as_ref().unwrap()).unwrap();
        let rom = truncate_projection(&bal, 3).unwrap();
        assert_eq!(rom.sys_r.a(), bal.sys_bal.a());
        assert_eq!(rom.sys_r.noise()[0], bal.sys_bal.noise()[0]);
        assert_eq!(rom.sys_r.c(), bal.sys_bal.c());
    }

    #[test]
    fn corrected_equals_projection_for_block_diagonal_noise() {
        let sys = StochasticLinearSystem::without_initial_state(
            mat(3, 3, &[-1.0, 0.2, 0.0, 0.1, -2.0, 0.3, 0.0, 0.2, -3.0]),
            mat(3, 1, &[1.0, 0.5, 0.2]),
            mat(1, 3, &[1.0, 0.0, 1.0]),
            vec![mat(3, 3, &[0.3, 0.1, 0.0, 0.1, 0.2, 0.0, 0.0, 0.0, 0.4])],
            HurstParam::BROWNIAN,
        )
        .unwrap();
        // identity balancing keeps the 2+1 block structure of N
        let bal = BalancedRealization {
            sys_bal: sys.clone(),
            s: DMatrix::identity(3, 3),
            s_inv: DMatrix::identity(3, 3),
            sigma: DVector::from_row_slice(&[3.0, 2.0, 1.0]),
            method: BalancingMethod::PBalance,
            rank: 3,
        };
        let p = truncate_projection(&bal, 2).unwrap();
        let c = truncate_corrected(&bal, 2).unwrap();
        assert!((p.sys_r.a() - c.sys_r.a()).amax() < 1e-15);
        assert!(c.correction.amax() < 1e-15);
    }

    #[test]
    fn corrected_ito_form_is_block_of_balanced_ito_form() {
        let sys = random_stable(4, 17);
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        let bal = pq_balance(&sys, &g.p, g.q.as_ref().unwrap()).unwrap();
        let rom = truncate_corrected(&bal, 2).unwrap();
        let full_ito = bal.sys_bal.ito_drift().unwrap();
        let block = full_ito.view((0, 0), (2, 2)).into_owned();
        assert!((rom.sys_r.ito_drift().unwrap() - &block).amax() < 1e-12 * block.amax());
        // correction = ½ N_12 N_21
        let nb = &bal.sys_bal.noise()[0];
        let expected = nb.view((0, 2), (2, 2)) * nb.view((2, 0), (2, 2)) * 0.5;
        assert!((&rom.correction - expected).amax() < 1e-12 * nb.amax().powi(2));
    }

    #[test]
    fn corrected_rejects_young() {
        let sys = StochasticLinearSystem::without_initial_state(
            mat(1, 1, &[-1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            vec![mat(1, 1, &[0.5])],
            HurstParam::new(0.75).unwrap(),
        )
        .unwrap();
        let bal = p_balance(&sys, &mat(1, 1, &[1.0])).unwrap();
        assert!(matches!(truncate_corrected(&bal, 1), Err(MorError::Interpretation(_))));
    }

    #[test]
    fn square_root_matches_pq_balance_for_definite_gramians() {
        let sys = random_stable(5, 23);
        let g = exact_gramians(&sys, Horizon::Infinite).unwrap();
        let q = g.q.as_ref().unwrap();
        let bal = pq_balance(&sys, &g.p, q).unwrap();
        for recipe in [Recipe::Projection, Recipe::ItoCorrected] {
            let sr = square_root_truncation(&sys, &g.p, q, 3, recipe).unwrap();
            let bt = if recipe == Recipe::Projection {
                truncate_projection(&bal, 3).unwrap()
            } else {
                truncate_corrected(&bal, 3).unwrap()
            };
            assert!(sr.biorthogonality_defect() < 1e-10);
            // same model up to a diagonal sign similarity: compare invariants
            let ev = |m: &DMatrix<f64>| {
                let mut v: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
                v.sort_by(|a, b| a.total_cmp(b));
                v
            };
            for (x, y) in ev(sr.sys_r.a()).iter().zip(ev(bt.sys_r.a())) {
                assert!((x - y).abs() < 1e-8);
            }
            let markov = |s: &StochasticLinearSystem| s.c() * s.a() * s.b();
            assert!((markov(&sr.sys_r) - markov(&bt.sys_r)).amax() < 1e-8);
            let noisy = |s: &StochasticLinearSystem| s.c() * &s.noise()[0] * s.b();
            assert!((noisy(&sr.sys_r) - noisy(&bt.sys_r)).amax() < 1e-8);
            assert!((&sr.sigma.clone().unwrap() - &bal.sigma).amax() < 1e-8 * bal.sigma[0]);
        }
    }

    #[test]
    fn pod_properties() {
        let c = DVector::from_row_slice(&[3.0, -4.0, 0.0]);
        let snaps = DMatrix::from_fn(3, 5, |i, _| c[i]);
        let v = pod_basis(&snaps, 1).unwrap();
        let expected = &c / c.norm() * -1.0; // largest-magnitude entry made positive
        assert!((v.column(0) - expected).amax() < 1e-14);
        assert!(matches!(pod_basis(&snaps, 2), Err(MorError::Rank { .. })));

        for cols in [6usize, 40] {
            let s = lcg(6, cols, cols as u64);
            let pod = pod_decomposition(&s).unwrap();
            let v = pod.leading(3).unwrap();
            assert!((v.transpose() * &v - DMatrix::identity(3, 3)).amax() < 1e-12);
            let resid = (&s - &v * (v.transpose() * &s)).norm_squared();
            let tail: f64 = pod.singular_values.iter().skip(3).map(|x| x * x).sum();
            assert!((resid - tail).abs() < 1e-8 * s.norm_squared());
        }
    }
}
