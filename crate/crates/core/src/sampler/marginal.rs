//! Tree marginal likelihood with the covariate coefficients and the leaf
//! effects integrated out.
//!
//! With `γ ~ N(0, σ² c I)` the partial residual of tree `a` is
//! `R ~ N(U μ, σ² M⁻¹)` where `M = I − Z (ZᵀZ + I/c)⁻¹ Zᵀ`. Integrating
//! `μ ~ N(0, σ² ν I)`, `ν = ω² τ_a²`, only needs the `B × B` matrix
//! `K = UᵀMU` and the vector `b = UᵀMR`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::std_normal;
use crate::tree::GridRegion;
use crate::weights::PrefixTable;

/// Factorisation of `ZᵀZ + I/c`, from which every product with `M` is
/// formed.
#[derive(Debug, Clone)]
pub struct ProjectedMetric {
    n: usize,
    p: usize,
    c: f64,
    chol: Cholesky<f64, Dyn>,
    log_det_m: f64,
}

impl ProjectedMetric {
    /// `z` is row-major `n × p`.
    pub fn new(z: &[f64], n: usize, p: usize, c: f64) -> Result<Self> {
        let zm = DMatrix::from_row_slice(n, p, z);
        let mut gram = zm.transpose() * &zm;
        for k in 0..p {
            gram[(k, k)] += 1.0 / c;
        }
        let chol = Cholesky::new(gram)
            .ok_or_else(|| Error::Numerical("ZᵀZ + I/c is not positive definite".into()))?;
        let log_det_p: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        // det(M) = det(I + c ZZᵀ)⁻¹ = [c^p det(ZᵀZ + I/c)]⁻¹
        let log_det_m = -(log_det_p + p as f64 * c.ln());
        Ok(Self {
            n,
            p,
            c,
            chol,
            log_det_m,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn log_det_m(&self) -> f64 {
        self.log_det_m
    }
    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// `(ZᵀZ + I/c)⁻¹ v`
    pub fn solve(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(v)
    }

    /// `M v` for an explicit vector, using `Zᵀv`.
    pub fn apply(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let ztv = zt_times(z, self.n, self.p, v);
        let h = self
            .chol
            .solve(&DMatrix::from_column_slice(self.p, 1, &ztv));
        (0..self.n)
            .map(|i| {
                let zi = &z[i * self.p..(i + 1) * self.p];
                v[i] - zi.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// `Zᵀ v` for row-major `z`.
pub fn zt_times(z: &[f64], n: usize, p: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p];
    for i in 0..n {
        let vi = v[i];
        for (o, zk) in out.iter_mut().zip(&z[i * p..(i + 1) * p]) {
            *o += zk * vi;
        }
    }
    out
}

/// `Σ_i z_i · cum_i(t, e)` for every table cell, so that `ZᵀU` for any
/// grid-aligned leaf costs four `p`-vector lookups.
#[derive(Debug, Clone)]
pub struct ProjectionTable {
    p: usize,
    n_edges: usize,
    zc: Vec<f64>,
    scale: f64,
}

impl ProjectionTable {
    pub fn build(table: &PrefixTable, z: &[f64], p: usize) -> Self {
        let nt = table.n_times();
        let ne = table.n_edges();
        let mut zc = vec![0.0; (nt + 1) * ne * p];
        for i in 0..table.n() {
            let zi = &z[i * p..(i + 1) * p];
            for t in 1..=nt {
                for e in 0..ne {
                    let w = table.cum(i, t, e);
                    if w == 0.0 {
                        continue;
                    }
                    let cell = &mut zc[(t * ne + e) * p..(t * ne + e + 1) * p];
                    for (c, zk) in cell.iter_mut().zip(zi) {
                        *c += zk * w;
                    }
                }
            }
        }
        Self {
            p,
            n_edges: ne,
            zc,
            scale: table.scale(),
        }
    }

    /// `Zᵀ u` where `u_i` is observation `i`'s mass in `region`.
    pub fn zt_region(&self, r: &GridRegion, out: &mut [f64]) {
        let p = self.p;
        let cell = |t: usize, e: usize| {
            &self.zc[(t * self.n_edges + e) * p..(t * self.n_edges + e + 1) * p]
        };
        let (a, b) = (cell(r.t_hi, r.x_hi), cell(r.t_hi, r.x_lo));
        let (c, d) = (cell(r.t_lo - 1, r.x_hi), cell(r.t_lo - 1, r.x_lo));
        for k in 0..p {
            out[k] = ((a[k] - b[k]) - (c[k] - d[k])) * self.scale;
        }
    }
}

/// Sufficient statistics of one tree against a residual.
#[derive(Debug, Clone)]
pub struct LeafStats {
    /// `UᵀMU`
    pub k: DMatrix<f64>,
    /// `UᵀMR`
    pub b: DVector<f64>,
}

impl LeafStats {
    /// `u` is row-major `n × B`; `ztu` is `p × B` column-major; `ztr` is `ZᵀR`.
    pub fn compute(
        metric: &ProjectedMetric,
        u: &[f64],
        n_leaves: usize,
        residual: &[f64],
        ztu: &DMatrix<f64>,
        ztr: &DMatrix<f64>,
    ) -> Self {
        let nb = n_leaves;
        let mut utu = DMatrix::<f64>::zeros(nb, nb);
        let mut utr = DVector::<f64>::zeros(nb);
        for (row, &r) in u.chunks_exact(nb).zip(residual) {
            for a in 0..nb {
                let ua = row[a];
                if ua == 0.0 {
                    continue;
                }
                utr[a] += ua * r;
                for b in a..nb {
                    utu[(a, b)] += ua * row[b];
                }
            }
        }
        for a in 0..nb {
            for b in 0..a {
                utu[(a, b)] = utu[(b, a)];
            }
        }
        let g_ztu = metric.solve(ztu);
        let k = utu - ztu.transpose() * &g_ztu;
        let b = utr - (g_ztu.transpose() * ztr).column(0);
        let k = (&k + k.transpose()) * 0.5;
        Self { k, b }
    }
}

/// Conditional posterior of the leaf effects of one tree, and the tree's
/// log marginal likelihood up to tree-independent constants.
#[derive(Debug, Clone)]
pub struct LeafPosterior {
    pub log_marginal: f64,
    /// `V b` with `V = (K + I/ν)⁻¹`
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    sigma2: f64,
}

impl LeafPosterior {
    pub fn new(stats: &LeafStats, nu: f64, sigma2: f64) -> Result<Self> {
        let nb = stats.b.len();
        let mut prec = stats.k.clone();
        for a in 0..nb {
            prec[(a, a)] += 1.0 / nu;
        }
        let chol = Cholesky::new(prec).ok_or_else(|| {
            Error::Numerical("leaf precision matrix is not positive definite".into())
        })?;
        let log_det_p: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let mean = chol.solve(&stats.b);
        let quad = stats.b.dot(&mean);
        // −½ log det(I + νK) + ½ bᵀ(K + I/ν)⁻¹b / σ²
        let log_marginal = -0.5 * (nb as f64 * nu.ln() + log_det_p) + 0.5 * quad / sigma2;
        if !log_marginal.is_finite() {
            return Err(Error::Numerical("non-finite log marginal".into()));
        }
        Ok(Self {
            log_marginal,
            mean,
            chol,
            sigma2,
        })
    }

    /// Posterior covariance `σ² V`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse() * self.sigma2
    }

    /// Draw `μ ~ N(V b, σ² V)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let nb = self.mean.len();
        let z = DVector::from_iterator(nb, (0..nb).map(|_| std_normal(rng)));
        let lt = self.chol.l().transpose();
        let noise = lt
            .solve_upper_triangular(&z)
            .expect("Cholesky factor is invertible");
        let sd = self.sigma2.sqrt();
        (0..nb).map(|a| self.mean[a] + sd * noise[a]).collect()
    }
}

/// Full log density `log N(R; 0, σ²(M⁻¹ + ν UUᵀ))` including all constants.
/// `rtr` is `RᵀR` and `ztr` is `ZᵀR`.
pub fn log_marginal_full(
    metric: &ProjectedMetric,
    stats: &LeafStats,
    rtr: f64,
    ztr: &DMatrix<f64>,
    nu: f64,
    sigma2: f64,
) -> Result<f64> {
    let post = LeafPosterior::new(stats, nu, sigma2)?;
    let rmr = rtr - ztr.dot(&metric.solve(ztr));
    let n = metric.n() as f64;
    Ok(
        -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() + 0.5 * metric.log_det_m()
            - 0.5 * rmr / sigma2
            + post.log_marginal,
    )
}
