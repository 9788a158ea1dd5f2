//! Exact sampling of fractional Brownian motion increments on uniform grids.
//!
//! Increments are drawn from their joint Gaussian law by multiplying a
//! lower-triangular square-root factor of the increment covariance matrix
//! with i.i.d. standard normals. The factor is built once per grid and Hurst
//! parameter and shared by every driver and every Monte-Carlo sample.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MorError, Result};

/// Hurst parameter restricted to `[1/2, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParam(f64);

impl HurstParam {
    /// Standard Brownian motion.
    pub const BROWNIAN: HurstParam = HurstParam(0.5);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.5..1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(MorError::InvalidHurst(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_brownian(self) -> bool {
        self.0 == 0.5
    }
}

impl TryFrom<f64> for HurstParam {
    type Error = MorError;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<HurstParam> for f64 {
    fn from(h: HurstParam) -> f64 {
        h.0
    }
}

/// Equidistant grid `t_k = k · T / N`, `k = 0..=N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    t_end: f64,
    steps: usize,
}

impl UniformGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(MorError::InvalidArgument(format!(
                "horizon must be positive, got {t_end}"
            )));
        }
        if steps == 0 {
            return Err(MorError::InvalidArgument("grid needs at least one step".into()));
        }
        Ok(Self { t_end, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Grid with `factor` times as many steps over the same horizon.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        Self::new(self.t_end, self.steps * factor)
    }
}

/// `E[W^H(s) W^H(t)] = ½(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn fbm_covariance(s: f64, t: f64, hurst: HurstParam) -> Result<f64> {
    if !(s.is_finite() && t.is_finite()) || s < 0.0 || t < 0.0 {
        return Err(MorError::InvalidArgument(format!(
            "fBm covariance needs nonnegative finite times, got ({s}, {t})"
        )));
    }
    let e = 2.0 * hurst.value();
    Ok(0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e)))
}

/// Covariance of the increments `W(t_{k+1}) − W(t_k)` and `W(t_{l+1}) − W(t_l)`
/// on a grid of step `dt`.
pub fn increment_covariance(k: usize, l: usize, dt: f64, hurst: HurstParam) -> f64 {
    let e = 2.0 * hurst.value();
    let d = k as f64 - l as f64;
    // stationary increments: depends on |k - l| only
    0.5 * dt.powf(e) * ((d + 1.0).abs().powf(e) + (d - 1.0).abs().powf(e) - 2.0 * d.abs().powf(e))
}

/// Full `N × N` increment covariance matrix for a grid.
pub fn increment_covariance_matrix(grid: &UniformGrid, hurst: HurstParam) -> DMatrix<f64> {
    let n = grid.steps();
    let dt = grid.dt();
    DMatrix::from_fn(n, n, |k, l| increment_covariance(k, l, dt, hurst))
}

/// Lower-triangular Cholesky factor; rejects pivots below
/// `1e-12 · max diagonal`.
fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let max_diag = m.diagonal().iter().cloned().fold(0.0, f64::max);
    let threshold = 1e-12 * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > threshold) {
            return Err(MorError::Factorization {
                index: j,
                value: d,
                threshold,
            });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

#[derive(Clone, Debug)]
enum Factor {
    /// H = 1/2: the factor is `√dt · I`.
    Diagonal(f64),
    Lower(DMatrix<f64>),
}

/// Reusable sampler holding the covariance square-root factor for one
/// `(grid, H)` pair.
#[derive(Clone, Debug)]
pub struct FbmSampler {
    grid: UniformGrid,
    hurst: HurstParam,
    factor: Factor,
}

/// Random stream for Monte-Carlo sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

impl FbmSampler {
    pub fn new(grid: UniformGrid, hurst: HurstParam) -> Result<Self> {
        let factor = if hurst.is_brownian() {
            Factor::Diagonal(grid.dt().sqrt())
        } else {
            Factor::Lower(cholesky_lower(&increment_covariance_matrix(&grid, hurst))?)
        };
        Ok(Self { grid, hurst, factor })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }

    /// The lower-triangular square-root factor as a dense matrix.
    pub fn factor(&self) -> DMatrix<f64> {
        match &self.factor {
            Factor::Diagonal(s) => DMatrix::identity(self.grid.steps(), self.grid.steps()) * *s,
            Factor::Lower(l) => l.clone(),
        }
    }

    /// Draw `q` independent increment rows for Monte-Carlo sample `index`.
    pub fn sample_indexed(&self, q: usize, seed: u64, index: u64) -> FbmIncrementSample {
        let n = self.grid.steps();
        let mut rng = sample_rng(seed, index);
        let mut increments = DMatrix::zeros(q, n);
        for i in 0..q {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let row = match &self.factor {
                Factor::Diagonal(s) => z * *s,
                Factor::Lower(l) => l * z,
            };
            increments.set_row(i, &row.transpose());
        }
        FbmIncrementSample {
            increments,
            grid: self.grid,
            hurst: self.hurst,
            seed,
            index,
        }
    }

    pub fn sample(&self, q: usize, seed: u64) -> FbmIncrementSample {
        self.sample_indexed(q, seed, 0)
    }
}

/// `q × N` array of fBm increments with the data needed to regenerate it.
#[derive(Clone, Debug, PartialEq)]
pub struct FbmIncrementSample {
    pub increments: DMatrix<f64>,
    pub grid: UniformGrid,
    pub hurst: HurstParam,
    pub seed: u64,
    /// Monte-Carlo sample index (random stream) within the seeded run.
    pub index: u64,
}

impl FbmIncrementSample {
    /// Noise-free sample, used for deterministic limits.
    pub fn zeros(grid: UniformGrid, hurst: HurstParam, q: usize) -> Self {
        Self {
            increments: DMatrix::zeros(q, grid.steps()),
            grid,
            hurst,
            seed: 0,
            index: 0,
        }
    }

    pub fn drivers(&self) -> usize {
        self.increments.nrows()
    }

    pub fn steps(&self) -> usize {
        self.increments.ncols()
    }

    /// Increment of driver `i` over step `k`.
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.increments[(i, k)]
    }

    /// Path values `W_i(t_k)`, `k = 0..=N`, obtained by cumulative summation.
    pub fn path(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for k in 0..self.steps() {
            acc += self.increments[(i, k)];
            out.push(acc);
        }
        out
    }

    /// Increments of the same path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(MorError::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let coarse = self.steps() / factor;
        let increments = DMatrix::from_fn(self.drivers(), coarse, |i, k| {
            (0..factor).map(|j| self.increments[(i, k * factor + j)]).sum()
        });
        Ok(Self {
            increments,
            grid: UniformGrid::new(self.grid.t_end(), coarse)?,
            hurst: self.hurst,
            seed: self.seed,
            index: self.index,
        })
    }

    /// Steps `start..start + len` as a sample on `[0, len · dt]`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.steps() {
            return Err(MorError::InvalidArgument(format!(
                "window {start}..{} outside {} steps",
                start + len,
                self.steps()
            )));
        }
        Ok(Self {
            increments: self.increments.columns(start, len).into_owned(),
            grid: UniformGrid::new(len as f64 * self.grid.dt(), len)?,
            hurst: self.hurst,
            seed: self.seed,
            index: self.index,
        })
    }
}

/// Draw a `q × N` increment sample for `grid` deterministically from `seed`.
pub fn sample_increments(grid: UniformGrid, hurst: HurstParam, q: usize, seed: u64) -> Result<FbmIncrementSample> {
    if q == 0 {
        return Err(MorError::InvalidArgument("need at least one driver".into()));
    }
    Ok(FbmSampler::new(grid, hurst)?.sample(q, seed))
}
