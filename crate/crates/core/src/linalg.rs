//! Dense linear-algebra helpers shared by the Gramian, reduction and bound
//! modules: Kronecker vectorization, sorted symmetric eigendecompositions,
//! pivot-checked LU solves, Schur-based Sylvester solves and generalized
//! Lyapunov equations.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, LU};
use num_complex::Complex64;

use crate::error::{MorError, Result};

/// Largest state dimension for which `n² × n²` Kronecker systems are solved densely.
pub const KRONECKER_CAP: usize = 24;

/// Largest state dimension for which `exp(K t)` of the Kronecker generator is formed.
pub const EXPM_CAP: usize = 16;

/// Column-major vectorization, `vec(M)`.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Symmetric eigendecomposition with eigenvalues sorted nonincreasing.
///
/// Ties keep their original index order (stable sort), so partitions are
/// deterministic.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Fix the sign of each column so its largest-magnitude entry is positive.
pub fn normalize_column_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0.0f64;
        for &x in col.iter() {
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// Infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization with partial pivoting that refuses pivots below
/// `rel_tol · ‖M‖_∞`.
pub struct CheckedLu {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl CheckedLu {
    pub fn new(m: DMatrix<f64>, rel_tol: f64) -> Option<Self> {
        let norm = inf_norm(&m);
        let lu = LU::new(m);
        let threshold = rel_tol * norm;
        let u = lu.u();
        if norm == 0.0 || u.diagonal().iter().any(|p| p.abs() <= threshold) {
            return None;
        }
        Some(Self { lu })
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(rhs).expect("pivots were checked at construction")
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(rhs).expect("pivots were checked at construction")
    }
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

/// Matrix representation of `X ↦ A X + X Aᵀ + Σ N_i X N_iᵀ` acting on `vec(X)`.
pub fn lyapunov_generator(a: &DMatrix<f64>, noise: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut k = a.kronecker(&eye) + eye.kronecker(a);
    for ni in noise {
        k += ni.kronecker(ni);
    }
    k
}

/// Evaluates `A X + X Aᵀ + Σ N_i X N_iᵀ`.
pub fn apply_lyapunov(a: &DMatrix<f64>, noise: &[DMatrix<f64>], x: &DMatrix<f64>) -> DMatrix<f64> {
    let ax = a * x;
    let mut out = &ax + x * a.transpose();
    for ni in noise {
        out += ni * x * ni.transpose();
    }
    out
}

/// Evaluates `Σ N_i X N_iᵀ`.
pub fn apply_noise_operator(noise: &[DMatrix<f64>], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for ni in noise {
        out += ni * x * ni.transpose();
    }
    out
}

enum SylvesterKind {
    /// `A = Bᵀ = A` symmetric: `A = V Λ Vᵀ`.
    Symmetric { v: DMatrix<f64>, lambda: DVector<f64> },
    /// Complex Schur forms `A = U T Uᴴ`, `B = W S Wᴴ`.
    Schur {
        u: DMatrix<Complex64>,
        t: DMatrix<Complex64>,
        w: DMatrix<Complex64>,
        s: DMatrix<Complex64>,
    },
}

/// Bartels–Stewart solver for `A X + X B + σ X = C` with the decompositions
/// of `A` and `B` computed once and reused across right-hand sides and shifts.
pub struct SylvesterSolver {
    kind: SylvesterKind,
    rows: usize,
    cols: usize,
    scale: f64,
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn complex_schur(m: &DMatrix<f64>) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let schur = Schur::try_new(to_complex(m), f64::EPSILON, 100_000)
        .ok_or_else(|| MorError::Singular("Schur decomposition did not converge".into()))?;
    Ok(schur.unpack())
}

impl SylvesterSolver {
    /// Solver for `A X + X B = C` with `A` of size `n × n`, `B` of size `m × m`.
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || !b.is_square() {
            return Err(MorError::Dimension("Sylvester coefficients must be square".into()));
        }
        let scale = a.amax().max(b.amax());
        let kind = if a.nrows() == b.nrows() && is_symmetric(a, 1e-14) && (a - b).amax() <= 1e-14 * scale.max(1e-300) {
            let (lambda, v) = sym_eigen_desc(a);
            SylvesterKind::Symmetric { v, lambda }
        } else {
            let (u, t) = complex_schur(a)?;
            let (w, s) = complex_schur(b)?;
            SylvesterKind::Schur { u, t, w, s }
        };
        Ok(Self {
            kind,
            rows: a.nrows(),
            cols: b.nrows(),
            scale,
        })
    }

    /// Solver for the Lyapunov operator `A X + X Aᵀ`.
    pub fn lyapunov(a: &DMatrix<f64>) -> Result<Self> {
        Self::new(a, &a.transpose())
    }

    /// Solves `A X + X B + shift · X = C`.
    pub fn solve(&self, c: &DMatrix<f64>, shift: f64) -> Result<DMatrix<f64>> {
        if c.nrows() != self.rows || c.ncols() != self.cols {
            return Err(MorError::Dimension(format!(
                "right-hand side is {}x{}, expected {}x{}",
                c.nrows(),
                c.ncols(),
                self.rows,
                self.cols
            )));
        }
        let tol = 1e-14 * (self.scale + shift.abs()).max(f64::MIN_POSITIVE);
        match &self.kind {
            SylvesterKind::Symmetric { v, lambda } => {
                let mut xh = v.transpose() * c * v;
                for j in 0..self.cols {
                    for i in 0..self.rows {
                        let d = lambda[i] + lambda[j] + shift;
                        if d.abs() <= tol {
                            return Err(MorError::Singular(format!("Sylvester operator has eigenvalue {d:e}")));
                        }
                        xh[(i, j)] /= d;
                    }
                }
                Ok(v * xh * v.transpose())
            }
            SylvesterKind::Schur { u, t, w, s } => {
                let ch = u.adjoint() * to_complex(c) * w;
                let n = self.rows;
                let m = self.cols;
                let mut xh = DMatrix::<Complex64>::zeros(n, m);
                let mut rhs = vec![Complex64::new(0.0, 0.0); n];
                for j in 0..m {
                    for i in 0..n {
                        let mut acc = ch[(i, j)];
                        for k in 0..j {
                            acc -= s[(k, j)] * xh[(i, k)];
                        }
                        rhs[i] = acc;
                    }
                    let d = s[(j, j)] + shift;
                    for i in (0..n).rev() {
                        let mut acc = rhs[i];
                        for l in (i + 1)..n {
                            acc -= t[(i, l)] * xh[(l, j)];
                        }
                        let piv = t[(i, i)] + d;
                        if piv.norm() <= tol {
                            return Err(MorError::Singular(format!("Sylvester operator has eigenvalue {piv}")));
                        }
                        xh[(i, j)] = acc / piv;
                    }
                }
                let x = u * xh * w.adjoint();
                Ok(x.map(|z| z.re))
            }
        }
    }
}

/// Solves the generalized Lyapunov equation `A X + X Aᵀ + Σ N_i X N_iᵀ = C`.
///
/// Small systems are solved through the dense Kronecker representation.
/// Larger ones use the fixed-point iteration
/// `A X_{k+1} + X_{k+1} Aᵀ = C − Σ N_i X_k N_iᵀ`, which converges exactly
/// when the operator is mean-square stable.
pub fn solve_generalized_lyapunov(a: &DMatrix<f64>, noise: &[DMatrix<f64>], c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n <= KRONECKER_CAP {
        let k = lyapunov_generator(a, noise);
        let lu =
            CheckedLu::new(k, 1e-13).ok_or_else(|| MorError::Singular("Kronecker generator is singular".into()))?;
        return Ok(unvec(&lu.solve_vec(&vec_of(c)), n, n));
    }
    let solver = SylvesterSolver::lyapunov(a)?;
    let mut x = solver.solve(c, 0.0)?;
    if noise.is_empty() {
        return Ok(x);
    }
    let mut last_change = f64::INFINITY;
    for _ in 0..2000 {
        let next = solver.solve(&(c - apply_noise_operator(noise, &x)), 0.0)?;
        let change = (&next - &x).amax();
        x = next;
        let size = x.amax().max(f64::MIN_POSITIVE);
        if !size.is_finite() || (change > 1e3 * last_change && change > size) {
            break;
        }
        if change <= 1e-14 * size {
            return Ok(x);
        }
        last_change = change;
    }
    Err(MorError::Unstable(
        "fixed-point iteration for the generalized Lyapunov equation diverged".into(),
    ))
}

/// Clip small negative eigenvalues of a symmetric PSD matrix and return a
/// factor `L` (n × rank) with `M ≈ L Lᵀ`, dropping eigenvalues `≤ rel_tol · λ_max`.
pub fn psd_factor(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..vals.len())
        .filter(|&i| vals[i] > rel_tol * top && vals[i] > 0.0)
        .collect();
    let mut l = DMatrix::zeros(m.nrows(), keep.len());
    for (dst, &i) in keep.iter().enumerate() {
        l.set_column(dst, &(vecs.column(i) * vals[i].sqrt()));
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        // small deterministic LCG, enough for shape tests
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DMatrix::from_fn(n, n, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn vec_roundtrip_and_kron_identity() {
        let a = sample_matrix(3, 1);
        let x = sample_matrix(3, 2);
        let b = sample_matrix(3, 3);
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let lhs = vec_of(&(&a * &x * &b));
        let rhs = b.transpose().kronecker(&a) * vec_of(&x);
        assert!((lhs - rhs).amax() < 1e-14);
        assert_eq!(unvec(&vec_of(&x), 3, 3), x);
    }

    #[test]
    fn sylvester_general_and_symmetric() {
        let n = 5;
        let a = sample_matrix(n, 4) - DMatrix::identity(n, n) * 2.0;
        let b = sample_matrix(3, 5) - DMatrix::identity(3, 3) * 1.5;
        let c = DMatrix::from_fn(n, 3, |i, j| (i + 2 * j) as f64);
        let solver = SylvesterSolver::new(&a, &b).unwrap();
        let x = solver.solve(&c, 0.3).unwrap();
        let res = &a * &x + &x * &b + &x * 0.3 - &c;
        assert!(res.amax() < 1e-12, "{res}");

        let s = symmetrize(&sample_matrix(n, 6)) - DMatrix::identity(n, n) * 3.0;
        let lyap = SylvesterSolver::lyapunov(&s).unwrap();
        let cs = DMatrix::identity(n, n);
        let x = lyap.solve(&cs, 0.0).unwrap();
        assert!((&s * &x + &x * &s - cs).amax() < 1e-12);
    }

    #[test]
    fn generalized_lyapunov_both_routes_agree() {
        let n = 30;
        let a = sample_matrix(n, 7) - DMatrix::identity(n, n) * 4.0;
        let noise = vec![sample_matrix(n, 8) * 0.5];
        let c = -DMatrix::identity(n, n);
        let x = solve_generalized_lyapunov(&a, &noise, &c).unwrap();
        assert!((apply_lyapunov(&a, &noise, &x) - &c).amax() < 1e-10);

        let small = 6;
        let a = sample_matrix(small, 9) - DMatrix::identity(small, small) * 2.0;
        let noise = vec![sample_matrix(small, 10) * 0.4];
        let c = -DMatrix::identity(small, small);
        let x = solve_generalized_lyapunov(&a, &noise, &c).unwrap();
        assert!((apply_lyapunov(&a, &noise, &x) - &c).amax() < 1e-11);
    }

    #[test]
    fn fixed_point_detects_instability() {
        let n = 30;
        let a = -DMatrix::<f64>::identity(n, n);
        let noise = vec![DMatrix::<f64>::identity(n, n) * 2.0];
        // 2a + n² = 2 > 0: not mean-square stable
        let res = solve_generalized_lyapunov(&a, &noise, &(-DMatrix::identity(n, n)));
        assert!(matches!(res, Err(MorError::Unstable(_))));
    }

    #[test]
    fn checked_lu_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(CheckedLu::new(m, 1e-13).is_none());
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        assert!((vecs.column(0).abs()[1] - 1.0).abs() < 1e-15);
    }
}
