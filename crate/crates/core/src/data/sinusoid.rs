use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Targets};
use crate::error::{HmoeError, Result};

/// Inputs are drawn from `[-SINUSOID_HALF_RANGE, SINUSOID_HALF_RANGE]`.
pub const SINUSOID_HALF_RANGE: f64 = 2.0 * PI;

/// `n` points `(x, sin x + noise)` with `x ~ U[-2pi, 2pi]` and
/// `noise ~ N(0, noise_std^2)`.
pub fn gen_sinusoid(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(HmoeError::EmptyDataset("sinusoid with zero points".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(HmoeError::InvalidConfig(format!(
            "noise standard deviation {noise_std} must be non-negative"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std).expect("finite non-negative std");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(-SINUSOID_HALF_RANGE..=SINUSOID_HALF_RANGE);
        let noise = if noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
        xs.push(x);
        ys.push(x.sin() + noise);
    }
    Dataset::new(
        format!("sinusoid(n={n},noise={noise_std},seed={seed})"),
        1,
        xs,
        Targets::Real { dim: 1, values: ys },
    )
}

/// `points` evenly spaced noiseless samples of `sin` over `[lo, hi]`.
pub fn sinusoid_grid(points: usize, lo: f64, hi: f64) -> Result<Dataset> {
    if points < 2 {
        return Err(HmoeError::InvalidConfig("grid needs at least two points".into()));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let ys = xs.iter().map(|x| x.sin()).collect();
    Dataset::new(
        format!("sin-grid({points})"),
        1,
        xs,
        Targets::Real { dim: 1, values: ys },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(d: &Dataset) -> &[f64] {
        match d.targets() {
            Targets::Real { values, .. } => values,
            _ => unreachable!(),
        }
    }

    #[test]
    fn noiseless_targets_are_exact() {
        let d = gen_sinusoid(50, 0.0, 3).unwrap();
        for (x, y) in d.features().iter().zip(targets(&d)) {
            assert_eq!(*y, x.sin());
            assert!(x.abs() <= SINUSOID_HALF_RANGE);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(gen_sinusoid(200, 0.1, 5).unwrap(), gen_sinusoid(200, 0.1, 5).unwrap());
        assert_ne!(gen_sinusoid(200, 0.1, 5).unwrap(), gen_sinusoid(200, 0.1, 6).unwrap());
    }

    #[test]
    fn noise_moments() {
        let n = 100_000;
        let d = gen_sinusoid(n, 0.1, 17).unwrap();
        let residuals: Vec<f64> = d.features().iter().zip(targets(&d)).map(|(x, y)| y - x.sin()).collect();
        let mean = residuals.iter().sum::<f64>() / n as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn bad_arguments_rejected() {
        assert!(gen_sinusoid(0, 0.1, 0).is_err());
        assert!(gen_sinusoid(10, -1.0, 0).is_err());
        assert!(sinusoid_grid(1, 0.0, 1.0).is_err());
        let g = sinusoid_grid(1000, -1.0, 1.0).unwrap();
        assert_eq!(g.len(), 1000);
        assert_eq!(g.row(0), &[-1.0]);
        assert_eq!(g.row(999), &[1.0]);
    }
}
