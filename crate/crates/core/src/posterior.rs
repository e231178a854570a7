//! Centered exposure-time-response surfaces and their posterior summaries:
//! pointwise intervals, critical windows and cumulative-effect contrasts.

use crate::error::{Error, Result};
use crate::model::SplitGrid;
use crate::stats::{normal_cdf, quantile_sorted};
use crate::tree::{Rect, Tree};
use crate::weights::{hard_weight, psi_weight, WeightMode};

/// Exposure-direction weight of `x` in `(x_lo, x_hi]` under `mode`,
/// ignoring time.
#[inline]
fn exposure_weight(x: f64, rect: &Rect, mode: WeightMode) -> f64 {
    match mode {
        WeightMode::Smooth { sigma_x } => {
            normal_cdf((rect.x_hi - x) / sigma_x) - normal_cdf((rect.x_lo - x) / sigma_x)
        }
        _ => f64::from(u8::from(rect.x_lo < x && x <= rect.x_hi)),
    }
}

/// A tree with drawn leaf effects, centered at `x0` at every time.
#[derive(Debug, Clone)]
pub struct CenteredTree {
    leaves: Vec<(Rect, f64)>,
    x0: f64,
    mode: WeightMode,
}

/// `w̃(x, t) = w(x, t) − w(x0, t)` for one tree.
pub fn center_tree(tree: &Tree, grid: &SplitGrid, x0: f64, mode: WeightMode) -> CenteredTree {
    let leaves = tree
        .leaf_regions(grid)
        .iter()
        .map(|r| r.to_rect(grid))
        .zip(tree.leaf_effects.iter().copied())
        .collect();
    CenteredTree {
        leaves,
        x0,
        mode: mode.surface_mode(),
    }
}

impl CenteredTree {
    /// Uncentered `w(x, t)`.
    pub fn raw(&self, x: f64, t: usize) -> f64 {
        self.leaves
            .iter()
            .map(|(rect, mu)| {
                let w = match self.mode {
                    WeightMode::Smooth { sigma_x } => psi_weight(x, rect, t, sigma_x),
                    _ => hard_weight(x, rect, t),
                };
                mu * w
            })
            .sum()
    }

    /// Per-time offset `w(x0, t)`.
    pub fn offset(&self, t: usize) -> f64 {
        self.raw(self.x0, t)
    }

    pub fn value(&self, x: f64, t: usize) -> f64 {
        self.leaves
            .iter()
            .filter(|(rect, _)| rect.contains_time(t))
            .map(|(rect, mu)| {
                mu * (exposure_weight(x, rect, self.mode)
                    - exposure_weight(self.x0, rect, self.mode))
            })
            .sum()
    }
}

/// Evaluates summed centered trees on an `(exposure grid × 1..T)` lattice.
#[derive(Debug, Clone)]
pub struct SurfaceEvaluator {
    pub grid_x: Vec<f64>,
    pub n_times: usize,
    pub x0: f64,
    pub mode: WeightMode,
}

impl SurfaceEvaluator {
    pub fn new(grid_x: Vec<f64>, n_times: usize, x0: f64, mode: WeightMode) -> Self {
        Self {
            grid_x,
            n_times,
            x0,
            mode: mode.surface_mode(),
        }
    }

    pub fn cells(&self) -> usize {
        self.grid_x.len() * self.n_times
    }

    /// Add the centered contribution of `tree` into `out` (layout `[t][x]`).
    pub fn accumulate(&self, tree: &Tree, grid: &SplitGrid, out: &mut [f64]) {
        let g = self.grid_x.len();
        let mut wx = vec![0.0; g];
        for (region, &mu) in tree.leaf_regions(grid).iter().zip(&tree.leaf_effects) {
            let rect = region.to_rect(grid);
            let w0 = exposure_weight(self.x0, &rect, self.mode);
            for (w, &x) in wx.iter_mut().zip(&self.grid_x) {
                *w = mu * (exposure_weight(x, &rect, self.mode) - w0);
            }
            for t in rect.t_lo..=rect.t_hi {
                let row = &mut out[(t - 1) * g..t * g];
                for (o, w) in row.iter_mut().zip(&wx) {
                    *o += w;
                }
            }
        }
    }

    /// Centered surface of an ensemble, layout `[t][x]`.
    pub fn evaluate(&self, trees: &[Tree], grid: &SplitGrid) -> Vec<f64> {
        let mut out = vec![0.0; self.cells()];
        for tree in trees {
            self.accumulate(tree, grid, &mut out);
        }
        out
    }
}

/// Posterior draws of the centered surface, layout `[draw][t][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDraws {
    pub grid_x: Vec<f64>,
    pub n_times: usize,
    pub x0: f64,
    pub values: Vec<f64>,
}

impl SurfaceDraws {
    pub fn new(grid_x: Vec<f64>, n_times: usize, x0: f64) -> Self {
        Self {
            grid_x,
            n_times,
            x0,
            values: Vec::new(),
        }
    }

    pub fn cells(&self) -> usize {
        self.grid_x.len() * self.n_times
    }

    pub fn n_draws(&self) -> usize {
        if self.cells() == 0 {
            0
        } else {
            self.values.len() / self.cells()
        }
    }

    pub fn push(&mut self, surface: &[f64]) {
        debug_assert_eq!(surface.len(), self.cells());
        self.values.extend_from_slice(surface);
    }

    pub fn draw(&self, d: usize) -> &[f64] {
        &self.values[d * self.cells()..(d + 1) * self.cells()]
    }

    /// Value of draw `d` at 1-based time `t` and grid column `g`.
    pub fn at(&self, d: usize, t: usize, g: usize) -> f64 {
        self.values[d * self.cells() + (t - 1) * self.grid_x.len() + g]
    }

    /// Draws at one cell across the chain.
    pub fn cell_draws(&self, t: usize, g: usize) -> Vec<f64> {
        (0..self.n_draws()).map(|d| self.at(d, t, g)).collect()
    }
}

/// Pointwise posterior summary, layout `[t][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummary {
    pub grid_x: Vec<f64>,
    pub n_times: usize,
    pub level: f64,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SurfaceSummary {
    pub fn index(&self, t: usize, g: usize) -> usize {
        (t - 1) * self.grid_x.len() + g
    }
}

/// Posterior mean and equal-tailed 95% interval at every cell.
pub fn evaluate_surface(draws: &SurfaceDraws) -> Result<SurfaceSummary> {
    summarize_at_level(draws, 0.95)
}

/// Posterior mean and equal-tailed interval at `level` for every cell.
pub fn summarize_at_level(draws: &SurfaceDraws, level: f64) -> Result<SurfaceSummary> {
    let nd = draws.n_draws();
    if nd == 0 {
        return Err(Error::Input("no posterior draws".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input(format!(
            "interval level must be in (0,1), got {level}"
        )));
    }
    let cells = draws.cells();
    let (p_lo, p_hi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut mean = vec![0.0; cells];
    let mut lo = vec![0.0; cells];
    let mut hi = vec![0.0; cells];
    let mut column = vec![0.0; nd];
    for c in 0..cells {
        for (d, v) in column.iter_mut().enumerate() {
            *v = draws.values[d * cells + c];
        }
        mean[c] = column.iter().sum::<f64>() / nd as f64;
        column.sort_by(f64::total_cmp);
        lo[c] = quantile_sorted(&column, p_lo);
        hi[c] = quantile_sorted(&column, p_hi);
    }
    Ok(SurfaceSummary {
        grid_x: draws.grid_x.clone(),
        n_times: draws.n_times,
        level,
        mean,
        lo,
        hi,
    })
}

/// Weeks where some grid cell's interval excludes zero.
pub fn windows_from_summary(summary: &SurfaceSummary) -> Vec<usize> {
    let g = summary.grid_x.len();
    (1..=summary.n_times)
        .filter(|&t| {
            (0..g).any(|k| {
                let c = summary.index(t, k);
                summary.lo[c] > 0.0 || summary.hi[c] < 0.0
            })
        })
        .collect()
}

/// Critical windows at interval `level`.
pub fn critical_windows(draws: &SurfaceDraws, level: f64) -> Result<Vec<usize>> {
    Ok(windows_from_summary(&summarize_at_level(draws, level)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub x_from: f64,
    pub x_to: f64,
    pub per_draw: Vec<f64>,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Value of draw `d` at time `t` and exposure `x`, interpolating linearly
/// between grid columns.
fn value_at(draws: &SurfaceDraws, d: usize, t: usize, x: f64) -> Result<f64> {
    let gx = &draws.grid_x;
    if let Some(k) = gx.iter().position(|&v| v == x) {
        return Ok(draws.at(d, t, k));
    }
    let (first, last) = (gx[0], gx[gx.len() - 1]);
    if !(x > first && x < last) {
        return Err(Error::Input(format!(
            "exposure {x} outside evaluated range [{first}, {last}]"
        )));
    }
    let k = gx.partition_point(|&v| v < x);
    let (x_a, x_b) = (gx[k - 1], gx[k]);
    let w = (x - x_a) / (x_b - x_a);
    Ok((1.0 - w) * draws.at(d, t, k - 1) + w * draws.at(d, t, k))
}

/// Posterior of `Σ_t [w(x_to, t) − w(x_from, t)]` with a 95% interval.
pub fn cumulative_effect(draws: &SurfaceDraws, x_from: f64, x_to: f64) -> Result<Contrast> {
    let nd = draws.n_draws();
    if nd == 0 {
        return Err(Error::Input("no posterior draws".into()));
    }
    let mut per_draw = Vec::with_capacity(nd);
    for d in 0..nd {
        let mut total = 0.0;
        for t in 1..=draws.n_times {
            total += value_at(draws, d, t, x_to)? - value_at(draws, d, t, x_from)?;
        }
        per_draw.push(total);
    }
    let mean = per_draw.iter().sum::<f64>() / nd as f64;
    let mut sorted = per_draw.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(Contrast {
        x_from,
        x_to,
        mean,
        lo: quantile_sorted(&sorted, 0.025),
        hi: quantile_sorted(&sorted, 0.975),
        per_draw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{Rule, TreeNode};

    fn grid() -> SplitGrid {
        SplitGrid::new(vec![1.0, 2.0, 3.0], SplitGrid::all_time_cuts(37), 37)
    }

    fn split_at_c() -> Tree {
        // x ≤ 2 vs x > 2, no time split; μ = (2, 5)
        let mut t = Tree::from_root(TreeNode::split(
            Rule::Exposure(1),
            TreeNode::leaf(),
            TreeNode::leaf(),
        ));
        t.leaf_effects = vec![2.0, 5.0];
        t
    }

    #[test]
    fn centered_tree_example() {
        let g = grid();
        let ct = center_tree(&split_at_c(), &g, 1.5, WeightMode::Hard);
        for t in 1..=37 {
            assert_eq!(ct.value(1.5, t), 0.0);
            assert_eq!(ct.value(2.7, t), 3.0);
            assert_eq!(ct.value(0.2, t), 0.0);
            assert_eq!(ct.value(2.7, t), ct.raw(2.7, t) - ct.offset(t));
        }
        let smooth = center_tree(&split_at_c(), &g, 1.5, WeightMode::Smooth { sigma_x: 0.4 });
        assert_eq!(smooth.value(1.5, 4), 0.0);
        assert!((smooth.value(2.7, 4) - (smooth.raw(2.7, 4) - smooth.offset(4))).abs() < 1e-14);
    }

    #[test]
    fn centering_commutes_with_summation() {
        let g = grid();
        let mut second = Tree::from_root(TreeNode::split(
            Rule::Time(10),
            TreeNode::leaf(),
            TreeNode::leaf(),
        ));
        second.leaf_effects = vec![-1.0, 0.25];
        let trees = [split_at_c(), second];
        let ev = SurfaceEvaluator::new(vec![0.5, 1.5, 2.5, 3.5], 37, 1.5, WeightMode::Hard);
        let s = ev.evaluate(&trees, &g);
        for t in 1..=37 {
            for (k, &x) in ev.grid_x.iter().enumerate() {
                let cts: Vec<_> = trees
                    .iter()
                    .map(|tr| center_tree(tr, &g, 1.5, WeightMode::Hard))
                    .collect();
                let raw: f64 = cts.iter().map(|c| c.raw(x, t)).sum::<f64>()
                    - cts.iter().map(|c| c.offset(t)).sum::<f64>();
                assert_eq!(s[(t - 1) * 4 + k], raw);
            }
            assert_eq!(s[(t - 1) * 4 + 1], 0.0);
        }
    }

    fn draws_from(values_per_draw: &[f64], n_times: usize, grid_x: Vec<f64>) -> SurfaceDraws {
        let mut d = SurfaceDraws::new(grid_x, n_times, 0.0);
        d.values = values_per_draw.to_vec();
        d
    }

    #[test]
    fn interval_of_four_draws() {
        let d = draws_from(&[1.0, 2.0, 3.0, 4.0], 1, vec![0.5]);
        let s = evaluate_surface(&d).unwrap();
        assert!((s.lo[0] - 1.075).abs() < 1e-12);
        assert!((s.hi[0] - 3.925).abs() < 1e-12);
        assert_eq!(s.mean[0], 2.5);
        assert!(evaluate_surface(&SurfaceDraws::new(vec![0.5], 1, 0.0)).is_err());
    }

    #[test]
    fn identical_draws_have_zero_width() {
        let one = [0.3, -0.2, 0.0, 1.0];
        let d = draws_from(&one.repeat(5), 2, vec![0.0, 1.0]);
        let s = evaluate_surface(&d).unwrap();
        assert!(s.lo.iter().zip(&s.hi).all(|(a, b)| a == b));
    }

    #[test]
    fn windows_from_constructed_draws() {
        let t_max = 20;
        let gx = vec![0.0, 1.0, 2.0];
        let mut vals = Vec::new();
        for d in 0..10 {
            for t in 1..=t_max {
                for k in 0..3 {
                    let v = if (11..=15).contains(&t) && k == 2 {
                        1.0
                    } else {
                        0.01 * ((d + k) as f64 - 5.0)
                    };
                    vals.push(v);
                }
            }
        }
        let d = draws_from(&vals, t_max, gx);
        assert_eq!(
            critical_windows(&d, 0.95).unwrap(),
            vec![11, 12, 13, 14, 15]
        );
        let zero = draws_from(&vec![0.0; 10 * t_max * 3], t_max, vec![0.0, 1.0, 2.0]);
        assert!(critical_windows(&zero, 0.95).unwrap().is_empty());
    }

    #[test]
    fn cumulative_effect_example() {
        let g = grid();
        let ev = SurfaceEvaluator::new(vec![0.5, 1.5, 2.7], 37, 1.5, WeightMode::Hard);
        let mut draws = SurfaceDraws::new(ev.grid_x.clone(), 37, 1.5);
        draws.push(&ev.evaluate(&[split_at_c()], &g));
        draws.push(&ev.evaluate(&[split_at_c()], &g));
        let c = cumulative_effect(&draws, 1.5, 2.7).unwrap();
        assert!(c.per_draw.iter().all(|&v| v == 111.0));
        let z = cumulative_effect(&draws, 2.7, 2.7).unwrap();
        assert!(z.per_draw.iter().all(|&v| v == 0.0));
        let back = cumulative_effect(&draws, 2.7, 1.5).unwrap();
        assert!(c
            .per_draw
            .iter()
            .zip(&back.per_draw)
            .all(|(a, b)| *a == -*b));
        // interpolation between columns and range errors
        let mid = cumulative_effect(&draws, 1.5, 2.1).unwrap();
        assert!((mid.mean - 111.0 * 0.5).abs() < 1e-9);
        assert!(cumulative_effect(&draws, 1.5, 9.0).is_err());
    }
}
