//! Spectral Galerkin discretizations of the stochastic heat and wave
//! benchmark equations, plus the small two-dimensional counterexample for
//! stability preservation.
//!
//! Heat: `∂X = aΔX + 1_{[π/4,3π/4]²} u + γ e^{−|ζ₁−π/2|−ζ₂} X ∘ dW` on `[0,π]²`
//! with basis `φ_{k,l} = (2/π) sin(kζ₁) sin(lζ₂)`.
//! Wave: `∂²X + a∂X = ∂²_ζ X + e^{−|ζ−π/2|} u + 2e^{−|ζ−π/2|} X ∘ dW` on
//! `[0,π]` with basis `√(2/π) sin(kζ)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MorError, Result};
use crate::fbm::HurstParam;
use crate::model::{Interpretation, StochasticLinearSystem};

/// Gauss–Legendre nodes per panel.
pub const QUADRATURE_NODES: usize = 64;
/// Relative change allowed when the node count is doubled.
pub const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatConfig {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
}

impl Default for HeatConfig {
    /// Desk-scale preset: `a = 0.2`, `b = 1`, `n = 256`, `γ = 2`.
    fn default() -> Self {
        Self {
            n: 256,
            a: 0.2,
            b: 1.0,
            gamma: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveConfig {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
}

impl Default for WaveConfig {
    /// Desk-scale preset: `a = 2`, `b = 1`, `n = 200`, `ε = 0.1`.
    fn default() -> Self {
        Self {
            n: 200,
            a: 2.0,
            b: 1.0,
            eps: 0.1,
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on `P_m`).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if m == 0 { 1.0 } else { p1 };
            dp = m as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on `[0, π]` split at `π/2`.
fn split_rule(m: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(m);
    let half = PI / 2.0;
    let mut nodes = Vec::with_capacity(2 * m);
    let mut weights = Vec::with_capacity(2 * m);
    for panel in 0..2 {
        let lo = panel as f64 * half;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(lo + half * (xi + 1.0) / 2.0);
            weights.push(wi * half / 2.0);
        }
    }
    (nodes, weights)
}

/// `G[k,k'] = (2/π) ∫_0^π w(ζ) sin(kζ) sin(k'ζ) dζ` for `k, k' = 1..=kmax`,
/// checked against the rule with twice the nodes.
fn weighted_gram(kmax: usize, weight: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let build = |m: usize| {
        let (z, w) = split_rule(m);
        let mut g = DMatrix::<f64>::zeros(kmax, kmax);
        for (zi, wi) in z.iter().zip(&w) {
            let f = weight(*zi) * wi * 2.0 / PI;
            let s: Vec<f64> = (1..=kmax).map(|k| (k as f64 * zi).sin()).collect();
            for a in 0..kmax {
                for b in 0..=a {
                    g[(a, b)] += f * s[a] * s[b];
                }
            }
        }
        for a in 0..kmax {
            for b in 0..a {
                g[(b, a)] = g[(a, b)];
            }
        }
        g
    };
    let g = build(QUADRATURE_NODES);
    let check = build(2 * QUADRATURE_NODES);
    let scale = check.amax().max(f64::MIN_POSITIVE);
    let diff = (&g - &check).amax();
    if diff > QUADRATURE_TOL * scale {
        return Err(MorError::Quadrature(format!(
            "node doubling changed the Galerkin matrix by {diff:e} (relative to {scale:e})"
        )));
    }
    Ok(check)
}

fn abs_weight(z: f64) -> f64 {
    (-(z - PI / 2.0).abs()).exp()
}

/// `⟨1_{[lo,hi]}, √(2/π) sin(k·)⟩`.
fn sine_window(k: usize, lo: f64, hi: f64) -> f64 {
    let k = k as f64;
    (2.0 / PI).sqrt() * ((k * lo).cos() - (k * hi).cos()) / k
}

/// `⟨cos, √(2/π) sin(k·)⟩` on `[0, π]`.
fn cosine_coefficient(k: usize) -> f64 {
    if k == 1 {
        return 0.0;
    }
    let kf = k as f64;
    let even = if k.is_multiple_of(2) { 2.0 } else { 0.0 };
    (2.0 / PI).sqrt() * kf * even / (kf * kf - 1.0)
}

/// The `n` index pairs with smallest `k² + l²`, ties lexicographic.
pub fn heat_modes(n: usize) -> Vec<(usize, usize)> {
    let kmax = 2 * ((n as f64).sqrt().ceil() as usize) + 2;
    let mut modes: Vec<(usize, usize)> = (1..=kmax).flat_map(|k| (1..=kmax).map(move |l| (k, l))).collect();
    modes.sort_by_key(|&(k, l)| (k * k + l * l, k, l));
    modes.truncate(n);
    modes
}

/// Stratonovich (H = 1/2) or Young (H > 1/2) heat system.
pub fn build_heat_system(cfg: &HeatConfig, hurst: HurstParam) -> Result<StochasticLinearSystem> {
    if cfg.n == 0 || !(cfg.a > 0.0) || !(cfg.b > 0.0) || !cfg.gamma.is_finite() {
        return Err(MorError::InvalidArgument(format!("invalid heat configuration {cfg:?}")));
    }
    let n = cfg.n;
    let modes = heat_modes(n);
    let kmax = modes.iter().map(|&(k, l)| k.max(l)).max().unwrap_or(1);
    let a = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        modes.iter().map(|&(k, l)| -cfg.a * (k * k + l * l) as f64),
    ));
    let (lo, hi) = (PI / 4.0, 3.0 * PI / 4.0);
    let b = DMatrix::from_iterator(
        n,
        1,
        modes
            .iter()
            .map(|&(k, l)| sine_window(k, lo, hi) * sine_window(l, lo, hi)),
    );
    let full = |k: usize| sine_window(k, 0.0, PI);
    let scale = 4.0 / (3.0 * PI * PI);
    let c = DMatrix::from_iterator(
        1,
        n,
        modes
            .iter()
            .zip(b.iter())
            .map(|(&(k, l), bj)| scale * (full(k) * full(l) - bj)),
    );
    let noise = if cfg.gamma == 0.0 {
        DMatrix::zeros(n, n)
    } else {
        let g1 = weighted_gram(kmax, abs_weight)?;
        let g2 = weighted_gram(kmax, |z| (-z).exp())?;
        DMatrix::from_fn(n, n, |i, j| {
            let (ki, li) = modes[i];
            let (kj, lj) = modes[j];
            cfg.gamma * g1[(ki - 1, kj - 1)] * g2[(li - 1, lj - 1)]
        })
    };
    let x0 = DMatrix::from_iterator(
        n,
        1,
        modes
            .iter()
            .map(|&(k, l)| cfg.b * cosine_coefficient(k) * cosine_coefficient(l)),
    );
    StochasticLinearSystem::new(
        a,
        b,
        c,
        vec![noise],
        x0,
        DVector::from_element(1, 1.0),
        hurst,
        Interpretation::for_hurst(hurst),
    )
}

/// First-order wave system with state `[positions; velocities]`.
pub fn build_wave_system(cfg: &WaveConfig, hurst: HurstParam) -> Result<StochasticLinearSystem> {
    if cfg.n == 0 || !cfg.n.is_multiple_of(2) || !(cfg.a > 0.0) || !(cfg.b > 0.0) || !(cfg.eps > 0.0 && cfg.eps < PI / 2.0) {
        return Err(MorError::InvalidArgument(format!("invalid wave configuration {cfg:?}")));
    }
    let n = cfg.n;
    let m = n / 2;
    let mut a = DMatrix::zeros(n, n);
    for k in 0..m {
        let kf = (k + 1) as f64;
        a[(k, m + k)] = 1.0;
        a[(m + k, k)] = -kf * kf;
        a[(m + k, m + k)] = -cfg.a;
    }
    let g = weighted_gram(m, abs_weight)?;
    // ⟨e^{−|ζ−π/2|}, φ_k⟩ = √(π/2) G-weighted mean of sin(kζ); computed with the same rule
    let forcing = {
        let (z, w) = split_rule(2 * QUADRATURE_NODES);
        DVector::from_fn(m, |k, _| {
            z.iter()
                .zip(&w)
                .map(|(zi, wi)| wi * abs_weight(*zi) * (2.0 / PI).sqrt() * ((k + 1) as f64 * zi).sin())
                .sum::<f64>()
        })
    };
    let mut b = DMatrix::zeros(n, 1);
    b.view_mut((m, 0), (m, 1)).copy_from(&forcing);
    let mut noise = DMatrix::zeros(n, n);
    noise.view_mut((m, 0), (m, m)).copy_from(&(g * 2.0));
    let mut c = DMatrix::zeros(2, n);
    let (lo, hi) = (PI / 2.0 - cfg.eps, PI / 2.0 + cfg.eps);
    for k in 0..m {
        let avg = sine_window(k + 1, lo, hi) / (2.0 * cfg.eps);
        c[(0, k)] = avg;
        c[(1, m + k)] = avg;
    }
    let mut x0 = DMatrix::zeros(n, 1);
    for k in 0..m {
        x0[(m + k, 0)] = cfg.b * cosine_coefficient(k + 1);
    }
    StochasticLinearSystem::new(
        a,
        b,
        c,
        vec![noise],
        x0,
        DVector::from_element(1, 1.0),
        hurst,
        Interpretation::for_hurst(hurst),
    )
}

/// Two-dimensional Stratonovich system whose balanced truncation to order 1
/// loses mean-square stability while the Itô-corrected truncation keeps it.
pub fn stability_counterexample() -> StochasticLinearSystem {
    StochasticLinearSystem::without_initial_state(
        DMatrix::from_row_slice(2, 2, &[-13.0 / 8.0, 1.25, -1.25, -2.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        vec![DMatrix::from_row_slice(2, 2, &[1.5, -1.0, 1.0, 1.0])],
        HurstParam::BROWNIAN,
    )
    .expect("valid fixture")
}
