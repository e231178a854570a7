//! Small numeric helpers shared by the sampler, posterior summaries and the
//! simulation harness.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Standard normal CDF, `Φ(z) = erfc(-z/√2)/2`.
///
/// Handles `±∞` exactly, which the weight functions rely on for the outer
/// exposure bounds.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Draw from the inverse-gamma distribution with the given shape and scale
/// (density ∝ x^(-shape-1) exp(-scale/x)).
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    assert!(
        shape > 0.0 && scale > 0.0 && scale.is_finite(),
        "inverse gamma parameters must be positive (shape {shape}, scale {scale})"
    );
    let g = Gamma::new(shape, 1.0 / scale).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n-1)p`). `sorted` must be sorted ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Percentile (0..=100) of unsorted data, same interpolation as
/// [`quantile_sorted`].
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, pct / 100.0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with `n - 1` denominator; zero for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}
