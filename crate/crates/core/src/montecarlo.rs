//! Deterministic parallel Monte-Carlo reduction.
//!
//! Samples are grouped into fixed blocks of consecutive indices. Each block
//! is accumulated sequentially and the block partials are combined in index
//! order, so the result does not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::Result;

/// Number of consecutive samples accumulated per block.
pub const BLOCK_SIZE: usize = 32;

/// Accumulates `sample(j, &mut acc)` over `j = 0..samples`.
pub fn blocked_sum<T, Z, F, C>(samples: usize, zero: Z, sample: F, combine: C) -> Result<T>
where
    T: Send,
    Z: Fn() -> T + Sync,
    F: Fn(usize, &mut T) -> Result<()> + Sync,
    C: Fn(&mut T, T),
{
    let blocks = samples.div_ceil(BLOCK_SIZE);
    let partials = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = zero();
            for j in b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(samples) {
                sample(j, &mut acc).map_err(|e| e.with_sample(j))?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<T>>>()?;
    let mut total = zero();
    for p in partials {
        combine(&mut total, p);
    }
    Ok(total)
}

/// Running first and second moments of a vector-valued estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        self.count += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(values) {
            *s += v;
            *q += v * v;
        }
    }

    pub fn merge(&mut self, other: Self) {
        self.count += other.count;
        for (s, o) in self.sum.iter_mut().zip(other.sum) {
            *s += o;
        }
        for (s, o) in self.sum_sq.iter_mut().zip(other.sum_sq) {
            *s += o;
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Standard error of each mean (unbiased sample variance).
    pub fn std_error(&self) -> Vec<f64> {
        let n = self.count as f64;
        if self.count < 2 {
            return vec![f64::INFINITY; self.sum.len()];
        }
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let var = ((q - s * s / n) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
            .collect()
    }
}
