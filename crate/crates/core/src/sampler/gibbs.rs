//! Conjugate Gibbs updates. Half-Cauchy scales use the inverse-gamma
//! auxiliary representation `r² | s ~ IG(1/2, 1/s)`, `s ~ IG(1/2, 1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::marginal::{zt_times, LeafPosterior, ProjectedMetric};
use crate::error::{Error, Result};
use crate::stats::{sample_inv_gamma, std_normal};
use crate::tree::Shrinkage;

/// Draw the leaf effects of a tree from their Gaussian full conditional.
pub fn gibbs_leaf_effects<R: Rng + ?Sized>(posterior: &LeafPosterior, rng: &mut R) -> Vec<f64> {
    posterior.sample(rng)
}

/// Update a half-Cauchy scale `r²` with `n_terms` Gaussian terms whose
/// summed squares, already divided by the remaining variance factors, equal
/// `scaled_ss`. Returns the new `(r², s)`.
pub fn update_half_cauchy<R: Rng + ?Sized>(
    aux: f64,
    n_terms: usize,
    scaled_ss: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let shape = 0.5 * (n_terms as f64 + 1.0);
    let scale = 1.0 / aux + 0.5 * scaled_ss;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Numerical(format!(
            "nonpositive inverse-gamma scale {scale}"
        )));
    }
    let r2 = sample_inv_gamma(rng, shape, scale);
    let s = sample_inv_gamma(rng, 1.0, 1.0 + 1.0 / r2);
    Ok((r2, s))
}

/// `τ_a² | · ~ IG((B_a+1)/2, 1/s + Σ μ²/(2σ²ω²))`, then its auxiliary.
pub fn update_tree_scale<R: Rng + ?Sized>(
    shrink: &mut Shrinkage,
    mu: &[f64],
    sigma2: f64,
    omega2: f64,
    rng: &mut R,
) -> Result<()> {
    let ss: f64 = mu.iter().map(|m| m * m).sum::<f64>() / (sigma2 * omega2);
    let (tau2, aux) = update_half_cauchy(shrink.aux, mu.len(), ss, rng)?;
    *shrink = Shrinkage { tau2, aux };
    Ok(())
}

/// Shape and scale of the `σ²` full conditional.
///
/// `resid_ss` is `‖y − f − Zγ‖²`, `leaf_ss` is `Σ μ²/(ω²τ²)` and `n_leaves`
/// is `Σ B_a`.
pub fn sigma2_conditional(
    aux: f64,
    n: usize,
    n_leaves: usize,
    p: usize,
    resid_ss: f64,
    leaf_ss: f64,
    gamma_ss_over_c: f64,
) -> (f64, f64) {
    let shape = 0.5 * (n + n_leaves + p + 1) as f64;
    let scale = 1.0 / aux + 0.5 * (resid_ss + leaf_ss + gamma_ss_over_c);
    (shape, scale)
}

/// `γ | · ~ N(P⁻¹ Zᵀ(y − f), σ² P⁻¹)` with `P = ZᵀZ + I/c`.
pub fn gibbs_gamma<R: Rng + ?Sized>(
    metric: &ProjectedMetric,
    z: &[f64],
    y_minus_f: &[f64],
    sigma2: f64,
    rng: &mut R,
) -> Vec<f64> {
    let p = metric.p();
    let zty = zt_times(z, metric.n(), p, y_minus_f);
    let mean = metric.solve(&DMatrix::from_column_slice(p, 1, &zty));
    let chol = metric.cholesky();
    let zv = DVector::from_iterator(p, (0..p).map(|_| std_normal(rng)));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&zv)
        .expect("Cholesky factor is invertible");
    let sd = sigma2.sqrt();
    (0..p).map(|k| mean[(k, 0)] + sd * noise[k]).collect()
}

/// Posterior mean of `γ` given `y − f`, `P⁻¹ Zᵀ(y − f)`.
pub fn gamma_mean(metric: &ProjectedMetric, z: &[f64], y_minus_f: &[f64]) -> Vec<f64> {
    let p = metric.p();
    let zty = zt_times(z, metric.n(), p, y_minus_f);
    metric
        .solve(&DMatrix::from_column_slice(p, 1, &zty))
        .iter()
        .copied()
        .collect()
}
