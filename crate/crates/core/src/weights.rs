//! Terminal-node weights for hard partitions, Gaussian-kernel smoothing in
//! exposure and the two exposure-uncertainty modes, together with 2-D prefix
//! tables that answer rectangle-mass queries in constant time.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Dataset, Hyperparameters, SplitGrid, Uncertainty, UncertaintyMode};
use crate::stats::normal_cdf;
use crate::tree::{GridRegion, Rect, Tree};

/// How an exposure cell is distributed over terminal nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    /// Each exposure falls in exactly one node.
    Hard,
    /// Normal kernel with a common bandwidth.
    Smooth { sigma_x: f64 },
    /// Normal kernel with the cell's own standard error as bandwidth.
    PerCellSe,
    /// Empirical CDF of the cell's exposure draws.
    EmpiricalCdf,
}

impl WeightMode {
    pub fn from_hyper(hyper: &Hyperparameters) -> Self {
        match hyper.uncertainty_mode {
            UncertaintyMode::PerCellSe => WeightMode::PerCellSe,
            UncertaintyMode::EmpiricalCdf => WeightMode::EmpiricalCdf,
            UncertaintyMode::None if hyper.sigma_x > 0.0 => WeightMode::Smooth {
                sigma_x: hyper.sigma_x,
            },
            UncertaintyMode::None => WeightMode::Hard,
        }
    }

    pub fn is_hard(&self) -> bool {
        matches!(self, WeightMode::Hard)
    }

    /// Weighting used to evaluate the fitted surface at arbitrary exposures.
    /// Uncertainty modes describe the observed exposures only, so the
    /// surface itself is piecewise constant for them.
    pub fn surface_mode(&self) -> WeightMode {
        match self {
            WeightMode::Smooth { .. } => *self,
            _ => WeightMode::Hard,
        }
    }
}

/// `{Φ((x_hi − x)/σ) − Φ((x_lo − x)/σ)} · 1(t ∈ [t_lo, t_hi])`.
///
/// `sigma_x` must be positive; use [`hard_weight`] for σ = 0.
#[inline]
pub fn psi_weight(x: f64, region: &Rect, t: usize, sigma_x: f64) -> f64 {
    debug_assert!(sigma_x > 0.0);
    if !region.contains_time(t) {
        return 0.0;
    }
    normal_cdf((region.x_hi - x) / sigma_x) - normal_cdf((region.x_lo - x) / sigma_x)
}

/// 1 iff `x ∈ (x_lo, x_hi]` and `t ∈ [t_lo, t_hi]`.
#[inline]
pub fn hard_weight(x: f64, region: &Rect, t: usize) -> f64 {
    if region.contains_time(t) && region.x_lo < x && x <= region.x_hi {
        1.0
    } else {
        0.0
    }
}

/// Kernel weight with the cell's standard error as bandwidth.
pub fn uncertainty_weight(x: f64, se: f64, region: &Rect, t: usize) -> Result<f64> {
    if !(se > 0.0) {
        return Err(Error::Input(format!(
            "standard error must be > 0, got {se}"
        )));
    }
    Ok(psi_weight(x, region, t, se))
}

/// Share of `draws` in `(x_lo, x_hi]`, times the time indicator.
pub fn ecdf_weight(draws: &[f64], region: &Rect, t: usize) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Input("no exposure draws".into()));
    }
    if !region.contains_time(t) {
        return Ok(0.0);
    }
    let inside = draws
        .iter()
        .filter(|&&d| region.x_lo < d && d <= region.x_hi)
        .count();
    Ok(inside as f64 / draws.len() as f64)
}

/// Weight of cell `(i, t)` in `region` computed directly from the data.
pub fn cell_weight(data: &Dataset, mode: WeightMode, i: usize, t: usize, region: &Rect) -> f64 {
    let x = data.exposure(i, t);
    match mode {
        WeightMode::Hard => hard_weight(x, region, t),
        WeightMode::Smooth { sigma_x } => psi_weight(x, region, t, sigma_x),
        WeightMode::PerCellSe => {
            let se = match data.uncertainty() {
                Some(Uncertainty::StdErrors(se)) => se[i * data.n_times() + t - 1],
                _ => panic!("per-cell SE mode without standard errors"),
            };
            psi_weight(x, region, t, se)
        }
        WeightMode::EmpiricalCdf => {
            let cell: Vec<f64> = match data.uncertainty() {
                Some(Uncertainty::Draws(d)) => {
                    d.iter().map(|m| m[i * data.n_times() + t - 1]).collect()
                }
                _ => panic!("empirical-CDF mode without exposure draws"),
            };
            ecdf_weight(&cell, region, t).expect("non-empty draws")
        }
    }
}

/// Design row of observation `i` for `tree` by direct `O(T·B)` scan:
/// entry `b` is `Σ_t weight(x_it, region_b, t)`.
pub fn leaf_design_row(
    data: &Dataset,
    grid: &SplitGrid,
    i: usize,
    tree: &Tree,
    mode: WeightMode,
) -> Vec<f64> {
    tree.leaf_regions(grid)
        .iter()
        .map(|r| {
            let rect = r.to_rect(grid);
            (1..=data.n_times())
                .map(|t| cell_weight(data, mode, i, t, &rect))
                .sum()
        })
        .collect()
}

/// Per-observation cumulative weight over `(time, exposure edge)`.
///
/// Cell `(t, e)` holds `Σ_{t' ≤ t} F_{i t'}(edge e)`, where `F` is the
/// cell's mass at or below the edge (an indicator, a normal CDF or an
/// empirical CDF depending on the mode). Row `t = 0` is zero.
#[derive(Debug, Clone)]
pub struct PrefixTable {
    n: usize,
    n_times: usize,
    n_edges: usize,
    cum: Vec<f64>,
    /// Multiplier applied to query results (1/K in empirical-CDF mode,
    /// where the table stores integer counts).
    scale: f64,
    mode: WeightMode,
}

impl PrefixTable {
    pub fn build(data: &Dataset, grid: &SplitGrid, mode: WeightMode) -> Result<Self> {
        let n = data.n();
        let nt = data.n_times();
        let n_edges = grid.n_edges();
        let stride = (nt + 1) * n_edges;
        let edges: Vec<f64> = (0..n_edges).map(|e| grid.edge(e)).collect();

        let (se, draws, scale) = match (mode, data.uncertainty()) {
            (WeightMode::PerCellSe, Some(Uncertainty::StdErrors(se))) => (Some(se), None, 1.0),
            (WeightMode::PerCellSe, _) => {
                return Err(Error::Input(
                    "per-cell SE mode needs standard errors".into(),
                ))
            }
            (WeightMode::EmpiricalCdf, Some(Uncertainty::Draws(d))) if !d.is_empty() => {
                (None, Some(d), 1.0 / d.len() as f64)
            }
            (WeightMode::EmpiricalCdf, _) => {
                return Err(Error::Input(
                    "empirical-CDF mode needs exposure draws".into(),
                ))
            }
            _ => (None, None, 1.0),
        };

        let mut cum = vec![0.0; n * stride];
        cum.par_chunks_mut(stride)
            .enumerate()
            .for_each(|(i, table)| {
                let mut sorted = Vec::new();
                for t in 1..=nt {
                    let cell = i * nt + t - 1;
                    let x = data.exposures()[cell];
                    if let Some(d) = draws {
                        sorted.clear();
                        sorted.extend(d.iter().map(|m| m[cell]));
                        sorted.sort_by(f64::total_cmp);
                    }
                    let (prev, cur) = table.split_at_mut(t * n_edges);
                    let prev = &prev[(t - 1) * n_edges..];
                    for e in 0..n_edges {
                        let edge = edges[e];
                        let below = match mode {
                            WeightMode::Hard => f64::from(u8::from(x <= edge)),
                            WeightMode::Smooth { sigma_x } => normal_cdf((edge - x) / sigma_x),
                            WeightMode::PerCellSe => {
                                normal_cdf((edge - x) / se.expect("checked")[cell])
                            }
                            WeightMode::EmpiricalCdf => {
                                sorted.partition_point(|&d| d <= edge) as f64
                            }
                        };
                        cur[e] = prev[e] + below;
                    }
                }
            });

        Ok(Self {
            n,
            n_times: nt,
            n_edges,
            cum,
            scale,
            mode,
        })
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn n_times(&self) -> usize {
        self.n_times
    }
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Raw cumulative entry for observation `i` (before scaling).
    #[inline]
    pub fn cum(&self, i: usize, t: usize, e: usize) -> f64 {
        self.cum[(i * (self.n_times + 1) + t) * self.n_edges + e]
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Mass of observation `i` inside a grid region.
    #[inline]
    pub fn query(&self, i: usize, r: &GridRegion) -> f64 {
        let base = i * (self.n_times + 1);
        let row_hi = (base + r.t_hi) * self.n_edges;
        let row_lo = (base + r.t_lo - 1) * self.n_edges;
        let c = &self.cum;
        let mass =
            (c[row_hi + r.x_hi] - c[row_hi + r.x_lo]) - (c[row_lo + r.x_hi] - c[row_lo + r.x_lo]);
        mass * self.scale
    }

    /// Mass of observation `i` inside a rectangle given in exposure values;
    /// the bounds must lie on the grid.
    pub fn rectangle_query(&self, grid: &SplitGrid, i: usize, rect: &Rect) -> Result<f64> {
        if i >= self.n {
            return Err(Error::Index {
                index: i,
                len: self.n,
            });
        }
        let x_lo = grid.edge_of(rect.x_lo).ok_or(Error::OffGrid)?;
        let x_hi = grid.edge_of(rect.x_hi).ok_or(Error::OffGrid)?;
        if x_lo > x_hi || rect.t_lo < 1 || rect.t_lo > rect.t_hi || rect.t_hi > self.n_times {
            return Err(Error::OffGrid);
        }
        Ok(self.query(
            i,
            &GridRegion {
                x_lo,
                x_hi,
                t_lo: rect.t_lo,
                t_hi: rect.t_hi,
            },
        ))
    }

    /// Fast design row: one query per leaf region.
    pub fn design_row(&self, i: usize, regions: &[GridRegion], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(regions) {
            *o = self.query(i, r);
        }
    }
}
