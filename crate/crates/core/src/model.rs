//! Controlled linear stochastic systems
//!
//! ```text
//! dx = [A x + B u] dt + Σ_i N_i x ∘ dW_i^H,   x(0) = X0 z,   y = C x
//! ```
//!
//! together with the Itô/Stratonovich drift conversion, the Kronecker
//! generator of the second-moment dynamics and a mean-square stability test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MorError, Result};
use crate::fbm::HurstParam;
use crate::linalg::{self, CheckedLu, KRONECKER_CAP};

/// How the noise integral is understood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpretation {
    /// Path-wise Young integral, `H > 1/2`.
    Young,
    /// Stratonovich integral, `H = 1/2`.
    Stratonovich,
    /// Itô integral, `H = 1/2`; `A` is then the Itô drift.
    Ito,
}

impl Interpretation {
    /// The circle-integral interpretation matching `hurst`.
    pub fn for_hurst(hurst: HurstParam) -> Self {
        if hurst.is_brownian() {
            Interpretation::Stratonovich
        } else {
            Interpretation::Young
        }
    }
}

/// Coefficients of a linear system driven by `q` independent fBms.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticLinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    noise: Vec<DMatrix<f64>>,
    x0: DMatrix<f64>,
    z: DVector<f64>,
    hurst: HurstParam,
    interpretation: Interpretation,
}

impl StochasticLinearSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        noise: Vec<DMatrix<f64>>,
        x0: DMatrix<f64>,
        z: DVector<f64>,
        hurst: HurstParam,
        interpretation: Interpretation,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(MorError::Dimension(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(MorError::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(MorError::Dimension(format!(
                "C has {} columns, expected {n}",
                c.ncols()
            )));
        }
        for (i, ni) in noise.iter().enumerate() {
            if ni.nrows() != n || ni.ncols() != n {
                return Err(MorError::Dimension(format!(
                    "N_{} is {}x{}, expected {n}x{n}",
                    i + 1,
                    ni.nrows(),
                    ni.ncols()
                )));
            }
        }
        if x0.nrows() != n {
            return Err(MorError::Dimension(format!("X0 has {} rows, expected {n}", x0.nrows())));
        }
        if z.len() != x0.ncols() {
            return Err(MorError::Dimension(format!(
                "z has length {}, X0 has {} columns",
                z.len(),
                x0.ncols()
            )));
        }
        let brownian = hurst.is_brownian();
        match interpretation {
            Interpretation::Young if brownian => {
                return Err(MorError::Interpretation("Young interpretation requires H > 1/2".into()))
            }
            Interpretation::Stratonovich | Interpretation::Ito if !brownian => {
                return Err(MorError::Interpretation(format!(
                    "{interpretation:?} interpretation requires H = 1/2, got {}",
                    hurst.value()
                )))
            }
            _ => {}
        }
        Ok(Self {
            a,
            b,
            c,
            noise,
            x0,
            z,
            hurst,
            interpretation,
        })
    }

    /// System with zero initial state (`X0` empty).
    pub fn without_initial_state(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        noise: Vec<DMatrix<f64>>,
        hurst: HurstParam,
    ) -> Result<Self> {
        let n = a.nrows();
        Self::new(
            a,
            b,
            c,
            noise,
            DMatrix::zeros(n, 0),
            DVector::zeros(0),
            hurst,
            Interpretation::for_hurst(hurst),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn noise(&self) -> &[DMatrix<f64>] {
        &self.noise
    }
    pub fn x0(&self) -> &DMatrix<f64> {
        &self.x0
    }
    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }
    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }
    pub fn interpretation(&self) -> Interpretation {
        self.interpretation
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn drivers(&self) -> usize {
        self.noise.len()
    }

    /// `x0 = X0 z`.
    pub fn initial_state(&self) -> DVector<f64> {
        &self.x0 * &self.z
    }

    /// `½ Σ N_i²`.
    pub fn ito_correction(&self) -> DMatrix<f64> {
        let n = self.order();
        let mut out = DMatrix::zeros(n, n);
        for ni in &self.noise {
            out += ni * ni;
        }
        out * 0.5
    }

    /// Drift of the equivalent Itô equation, `A_N`.
    pub fn ito_drift(&self) -> Result<DMatrix<f64>> {
        match self.interpretation {
            Interpretation::Stratonovich => Ok(&self.a + self.ito_correction()),
            Interpretation::Ito => Ok(self.a.clone()),
            Interpretation::Young if self.noise.is_empty() => Ok(self.a.clone()),
            Interpretation::Young => Err(MorError::Interpretation(
                "Young systems (H > 1/2) have no Itô form".into(),
            )),
        }
    }

    /// Drift of the circle-integral (Young/Stratonovich) form.
    pub fn circle_drift(&self) -> DMatrix<f64> {
        match self.interpretation {
            Interpretation::Ito => &self.a - self.ito_correction(),
            _ => self.a.clone(),
        }
    }

    /// Same system written as an Itô equation: `A ← A + ½ Σ N_i²`.
    pub fn to_ito(&self) -> Result<Self> {
        match self.interpretation {
            Interpretation::Stratonovich => Ok(Self {
                a: self.ito_drift()?,
                interpretation: Interpretation::Ito,
                ..self.clone()
            }),
            Interpretation::Ito => Ok(self.clone()),
            Interpretation::Young => Err(MorError::Interpretation(
                "Itô conversion requires a Stratonovich system (H = 1/2)".into(),
            )),
        }
    }

    /// Inverse of [`to_ito`](Self::to_ito).
    pub fn to_stratonovich(&self) -> Result<Self> {
        match self.interpretation {
            Interpretation::Ito => Ok(Self {
                a: self.circle_drift(),
                interpretation: Interpretation::Stratonovich,
                ..self.clone()
            }),
            Interpretation::Stratonovich => Ok(self.clone()),
            Interpretation::Young => Err(MorError::Interpretation(
                "Stratonovich conversion requires H = 1/2".into(),
            )),
        }
    }

    /// Replace the drift, keeping everything else.
    pub fn with_drift(&self, a: DMatrix<f64>) -> Result<Self> {
        if a.shape() != self.a.shape() {
            return Err(MorError::Dimension("drift shape changed".into()));
        }
        Ok(Self { a, ..self.clone() })
    }

    /// Same dynamics with a different initial-state matrix and coefficient.
    pub fn with_initial(&self, x0: DMatrix<f64>, z: DVector<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.noise.clone(),
            x0,
            z,
            self.hurst,
            self.interpretation,
        )
    }

    /// Same dynamics with a different input matrix.
    pub fn with_input(&self, b: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            b,
            self.c.clone(),
            self.noise.clone(),
            self.x0.clone(),
            self.z.clone(),
            self.hurst,
            self.interpretation,
        )
    }

    /// Controlled subsystem with zero initial state.
    pub fn input_subsystem(&self) -> Self {
        let n = self.order();
        Self {
            x0: DMatrix::zeros(n, 0),
            z: DVector::zeros(0),
            ..self.clone()
        }
    }

    /// Uncontrolled subsystem started in `X0 z`.
    pub fn initial_subsystem(&self) -> Self {
        let n = self.order();
        Self {
            b: DMatrix::zeros(n, self.inputs()),
            ..self.clone()
        }
    }

    /// State-space transformation `x̃ = S x`:
    /// `(S A S⁻¹, S B, C S⁻¹, S N_i S⁻¹, S X0)`.
    pub fn transform(&self, s: &DMatrix<f64>, s_inv: &DMatrix<f64>) -> Result<Self> {
        let n = self.order();
        if s.shape() != (n, n) || s_inv.shape() != (n, n) {
            return Err(MorError::Dimension("transformation must be n x n".into()));
        }
        Ok(Self {
            a: s * &self.a * s_inv,
            b: s * &self.b,
            c: &self.c * s_inv,
            noise: self.noise.iter().map(|ni| s * ni * s_inv).collect(),
            x0: s * &self.x0,
            ..self.clone()
        })
    }

    /// Petrov–Galerkin projection `(Wᵀ A V, Wᵀ B, C V, Wᵀ N_i V, Wᵀ X0)`.
    pub fn project(&self, v: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Self> {
        let n = self.order();
        if v.nrows() != n || w.shape() != v.shape() {
            return Err(MorError::Dimension("projection bases must both be n x r".into()));
        }
        let wt = w.transpose();
        Ok(Self {
            a: &wt * &self.a * v,
            b: &wt * &self.b,
            c: &self.c * v,
            noise: self.noise.iter().map(|ni| &wt * ni * v).collect(),
            x0: &wt * &self.x0,
            ..self.clone()
        })
    }

    /// Kronecker generator of `Z(t) = E[Φ(t) M Φ(t)ᵀ]`.
    pub fn kronecker_generator(&self) -> Result<KroneckerGenerator> {
        let a_n = self.ito_drift()?;
        Ok(KroneckerGenerator {
            matrix: linalg::lyapunov_generator(&a_n, &self.noise),
            order: self.order(),
        })
    }

    /// Mean-square asymptotic stability test.
    ///
    /// Solves `A_N X + X A_Nᵀ + Σ N_i X N_iᵀ = −I`; the system is stable iff
    /// the solution is positive definite (smallest eigenvalue above
    /// `1e-10 ·` largest).
    pub fn is_mean_square_stable(&self) -> Result<StabilityReport> {
        let a_n = self.ito_drift()?;
        let n = self.order();
        let rhs = -DMatrix::<f64>::identity(n, n);
        let solution = if n <= KRONECKER_CAP {
            let k = linalg::lyapunov_generator(&a_n, &self.noise);
            let lu = CheckedLu::new(k, 1e-13)
                .ok_or_else(|| MorError::Singular("stability operator is singular (boundary of stability)".into()))?;
            linalg::unvec(&lu.solve_vec(&linalg::vec_of(&rhs)), n, n)
        } else {
            match linalg::solve_generalized_lyapunov(&a_n, &self.noise, &rhs) {
                Ok(x) => x,
                Err(MorError::Unstable(_)) | Err(MorError::Singular(_)) => {
                    return Ok(StabilityReport {
                        stable: false,
                        certificate: None,
                        min_eigenvalue: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            }
        };
        let x = linalg::symmetrize(&solution);
        let (vals, _) = linalg::sym_eigen_desc(&x);
        let largest = vals[0];
        let smallest = vals[n - 1];
        let stable = largest > 0.0 && smallest > 1e-10 * largest;
        Ok(StabilityReport {
            stable,
            certificate: Some(x),
            min_eigenvalue: smallest,
        })
    }
}

/// Outcome of [`StochasticLinearSystem::is_mean_square_stable`].
#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub stable: bool,
    /// Solution `X` of the stability equation, when it could be formed.
    pub certificate: Option<DMatrix<f64>>,
    pub min_eigenvalue: f64,
}

/// `K = A_N ⊗ I + I ⊗ A_N + Σ N_i ⊗ N_i`, acting on `vec` of `n × n` matrices.
#[derive(Clone, Debug)]
pub struct KroneckerGenerator {
    matrix: DMatrix<f64>,
    order: usize,
}

impl KroneckerGenerator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `E[Φ(t) M Φ(t)ᵀ]`, via `exp(K t) vec(M)`.
    pub fn propagate(&self, m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let e = linalg::expm(&(&self.matrix * t));
        linalg::unvec(&(e * linalg::vec_of(m)), self.order, self.order)
    }

    /// `E[Φ(t)ᵀ M Φ(t)]`, via `exp(Kᵀ t) vec(M)`.
    pub fn propagate_dual(&self, m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let e = linalg::expm(&(self.matrix.transpose() * t));
        linalg::unvec(&(e * linalg::vec_of(m)), self.order, self.order)
    }

    /// Largest real part of the spectrum of `K`.
    pub fn spectral_abscissa(&self) -> f64 {
        self.matrix
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn example_system() -> StochasticLinearSystem {
        let a = mat(2, 2, &[-13.0 / 8.0, 5.0 / 4.0, -5.0 / 4.0, -2.0]);
        let n1 = mat(2, 2, &[1.5, -1.0, 1.0, 1.0]);
        let b = mat(2, 1, &[1.0, 0.0]);
        let c = b.transpose();
        StochasticLinearSystem::without_initial_state(a, b, c, vec![n1], HurstParam::BROWNIAN).unwrap()
    }

    fn scalar(a: f64, n1: Option<f64>) -> StochasticLinearSystem {
        let noise = n1.map(|v| vec![mat(1, 1, &[v])]).unwrap_or_default();
        StochasticLinearSystem::without_initial_state(
            mat(1, 1, &[a]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            noise,
            HurstParam::BROWNIAN,
        )
        .unwrap()
    }

    #[test]
    fn ito_conversion() {
        let sys = example_system();
        let ito = sys.to_ito().unwrap();
        assert!((ito.a() - mat(2, 2, &[-1.0, 0.0, 0.0, -2.0])).amax() < 1e-15);
        assert_eq!(ito.interpretation(), Interpretation::Ito);
        assert_eq!(ito.noise(), sys.noise());
        assert_eq!(ito.to_stratonovich().unwrap(), sys);

        let det = scalar(-1.0, None);
        assert_eq!(det.to_ito().unwrap().a(), det.a());
    }

    #[test]
    fn young_rejects_ito_conversion() {
        let h = HurstParam::new(0.75).unwrap();
        let sys = StochasticLinearSystem::without_initial_state(
            mat(1, 1, &[-1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            vec![mat(1, 1, &[0.5])],
            h,
        )
        .unwrap();
        assert!(matches!(sys.to_ito(), Err(MorError::Interpretation(_))));
        assert!(sys.kronecker_generator().is_err());
    }

    #[test]
    fn interpretation_consistency_enforced() {
        let h = HurstParam::new(0.75).unwrap();
        let r = StochasticLinearSystem::new(
            mat(1, 1, &[-1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            vec![],
            DMatrix::zeros(1, 0),
            DVector::zeros(0),
            h,
            Interpretation::Stratonovich,
        );
        assert!(r.is_err());
        let r = StochasticLinearSystem::new(
            mat(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 2, &[1.0, 0.0]),
            vec![],
            DMatrix::zeros(2, 0),
            DVector::zeros(0),
            HurstParam::BROWNIAN,
            Interpretation::Stratonovich,
        );
        assert!(matches!(r, Err(MorError::Dimension(_))));
    }

    #[test]
    fn scalar_generator() {
        let sys = scalar(-1.0, Some(0.5));
        let k = sys.kronecker_generator().unwrap();
        // a_N = -1 + 0.125; K = 2 a_N + n²
        assert!((k.matrix()[(0, 0)] - (2.0 * -0.875 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn diagonal_generator_without_noise() {
        let lambdas = [-1.0, -2.5, -4.0];
        let sys = StochasticLinearSystem::without_initial_state(
            DMatrix::from_diagonal(&DVector::from_row_slice(&lambdas)),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 3),
            vec![],
            HurstParam::BROWNIAN,
        )
        .unwrap();
        let k = sys.kronecker_generator().unwrap();
        let mut expected = DMatrix::zeros(9, 9);
        for i in 0..3 {
            for j in 0..3 {
                // vec index of entry (i, j) is j * n + i
                expected[(j * 3 + i, j * 3 + i)] = lambdas[i] + lambdas[j];
            }
        }
        assert!((k.matrix() - expected).amax() < 1e-15);
        assert_eq!(k.propagate(&DMatrix::identity(3, 3), 0.0), DMatrix::identity(3, 3));
    }

    #[test]
    fn dual_generator_is_transpose() {
        let sys = example_system();
        let ito = sys.to_ito().unwrap();
        let dual = StochasticLinearSystem::new(
            ito.a().transpose(),
            ito.c().transpose(),
            ito.b().transpose(),
            ito.noise().iter().map(|n| n.transpose()).collect(),
            DMatrix::zeros(2, 0),
            DVector::zeros(0),
            HurstParam::BROWNIAN,
            Interpretation::Ito,
        )
        .unwrap();
        let k = ito.kronecker_generator().unwrap();
        let kd = dual.kronecker_generator().unwrap();
        assert!((k.matrix().transpose() - kd.matrix()).amax() < 1e-12);
    }

    #[test]
    fn stability_examples() {
        let stable = StochasticLinearSystem::without_initial_state(
            -DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            vec![],
            HurstParam::BROWNIAN,
        )
        .unwrap();
        let rep = stable.is_mean_square_stable().unwrap();
        assert!(rep.stable);
        assert!((rep.certificate.unwrap() - DMatrix::identity(2, 2) * 0.5).amax() < 1e-14);

        let unstable = stable.with_drift(DMatrix::identity(2, 2)).unwrap();
        assert!(!unstable.is_mean_square_stable().unwrap().stable);

        let ex = example_system();
        assert!(ex.is_mean_square_stable().unwrap().stable);
        assert!(ex.kronecker_generator().unwrap().spectral_abscissa() < 0.0);

        // 2 a_N + n² = 2(-1 + 2) + 4 > 0
        let noisy = scalar(-1.0, Some(2.0));
        assert!(!noisy.is_mean_square_stable().unwrap().stable);
    }

    #[test]
    fn stability_invariant_under_similarity() {
        let ex = example_system();
        let s = mat(2, 2, &[2.0, 0.3, -0.7, 1.1]);
        let s_inv = s.clone().try_inverse().unwrap();
        let t = ex.transform(&s, &s_inv).unwrap();
        assert_eq!(
            t.is_mean_square_stable().unwrap().stable,
            ex.is_mean_square_stable().unwrap().stable
        );
    }

    #[test]
    fn subsystems_split_inputs() {
        let ex = example_system()
            .with_initial(mat(2, 1, &[1.0, 2.0]), DVector::from_element(1, 1.0))
            .unwrap();
        assert_eq!(ex.input_subsystem().initial_state(), DVector::zeros(2));
        assert_eq!(ex.initial_subsystem().b(), &DMatrix::zeros(2, 1));
        assert_eq!(ex.initial_state(), DVector::from_row_slice(&[1.0, 2.0]));
    }
}
