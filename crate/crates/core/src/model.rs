//! Data containers, split grids and hyperparameters, plus structural
//! validation of all three.

use std::fmt;

use crate::error::{Error, Result};
use crate::stats;

/// Exposure uncertainty attached to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Uncertainty {
    /// Per-cell standard errors, row-major `n × T`.
    StdErrors(Vec<f64>),
    /// `K` exposure realisations, each row-major `n × T`.
    Draws(Vec<Vec<f64>>),
}

/// Outcome, exposure history and covariates for `n` observations.
///
/// Matrices are stored row-major. Time indices in the public API are
/// 1-based (`1..=T`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    n_times: usize,
    n_covariates: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    uncertainty: Option<Uncertainty>,
}

impl Dataset {
    /// Build from row vectors. Only shapes are checked here; value
    /// invariants are reported by [`validate`].
    pub fn new(y: Vec<f64>, x: Vec<Vec<f64>>, z: Vec<Vec<f64>>) -> Result<Self> {
        let n = y.len();
        if x.len() != n || z.len() != n {
            return Err(Error::Input(format!(
                "row counts differ: y has {n}, exposures {}, covariates {}",
                x.len(),
                z.len()
            )));
        }
        let n_times = x.first().map_or(0, Vec::len);
        let n_covariates = z.first().map_or(0, Vec::len);
        if let Some(i) = x.iter().position(|r| r.len() != n_times) {
            return Err(Error::Input(format!("exposure row {i} has wrong length")));
        }
        if let Some(i) = z.iter().position(|r| r.len() != n_covariates) {
            return Err(Error::Input(format!("covariate row {i} has wrong length")));
        }
        Ok(Self {
            n,
            n_times,
            n_covariates,
            y,
            x: x.concat(),
            z: z.concat(),
            uncertainty: None,
        })
    }

    /// Build from flat row-major buffers.
    pub fn from_flat(
        y: Vec<f64>,
        x: Vec<f64>,
        n_times: usize,
        z: Vec<f64>,
        n_covariates: usize,
    ) -> Result<Self> {
        let n = y.len();
        if x.len() != n * n_times || z.len() != n * n_covariates {
            return Err(Error::Input(format!(
                "buffer sizes do not match n={n}, T={n_times}, p={n_covariates}"
            )));
        }
        Ok(Self {
            n,
            n_times,
            n_covariates,
            y,
            x,
            z,
            uncertainty: None,
        })
    }

    pub fn with_uncertainty(mut self, uncertainty: Uncertainty) -> Result<Self> {
        let cells = self.n * self.n_times;
        match &uncertainty {
            Uncertainty::StdErrors(se) if se.len() != cells => {
                return Err(Error::Input("standard-error matrix has wrong shape".into()))
            }
            Uncertainty::Draws(d) if d.iter().any(|m| m.len() != cells) => {
                return Err(Error::Input("exposure draw matrix has wrong shape".into()))
            }
            _ => {}
        }
        self.uncertainty = Some(uncertainty);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn n_times(&self) -> usize {
        self.n_times
    }
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn exposures(&self) -> &[f64] {
        &self.x
    }
    pub fn covariates(&self) -> &[f64] {
        &self.z
    }
    pub fn uncertainty(&self) -> Option<&Uncertainty> {
        self.uncertainty.as_ref()
    }

    /// Exposure of observation `i` at 1-based time `t`.
    #[inline]
    pub fn exposure(&self, i: usize, t: usize) -> f64 {
        self.x[i * self.n_times + t - 1]
    }

    pub fn exposure_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_times..(i + 1) * self.n_times]
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.n_covariates..(i + 1) * self.n_covariates]
    }

    /// Apply `f` to every exposure value (and every exposure draw).
    /// Standard errors are left untouched.
    pub fn map_exposures(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.x.iter_mut().for_each(|v| *v = f(*v));
        if let Some(Uncertainty::Draws(d)) = &mut out.uncertainty {
            for m in d.iter_mut() {
                m.iter_mut().for_each(|v| *v = f(*v));
            }
        }
        out
    }
}

/// Candidate split locations.
///
/// Exposure rule `j` sends `x ≤ exposure[j]` left. Time rule `k` sends
/// `t ≤ time[k]` left. Internally the exposure axis is described by edge
/// indices `0..=s_x+1`, where edge 0 is `-∞`, edge `j+1` is `exposure[j]`
/// and edge `s_x+1` is `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGrid {
    exposure: Vec<f64>,
    time: Vec<usize>,
    n_times: usize,
}

impl SplitGrid {
    pub fn new(exposure: Vec<f64>, time: Vec<usize>, n_times: usize) -> Self {
        Self {
            exposure,
            time,
            n_times,
        }
    }

    /// All `T-1` time cut points.
    pub fn all_time_cuts(n_times: usize) -> Vec<usize> {
        (1..n_times).collect()
    }

    /// `count` evenly spaced exposure splits between two percentiles of
    /// `values`, plus all time cuts.
    pub fn evenly_spaced(
        values: &[f64],
        count: usize,
        lo_pct: f64,
        hi_pct: f64,
        n_times: usize,
    ) -> Self {
        let lo = stats::percentile(values, lo_pct);
        let hi = stats::percentile(values, hi_pct);
        let exposure = if count == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..count)
                .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
                .collect()
        };
        Self::new(dedup(exposure), Self::all_time_cuts(n_times), n_times)
    }

    /// `count` exposure splits at evenly spaced percentiles between
    /// `lo_pct` and `hi_pct`, plus all time cuts.
    pub fn quantile_spaced(
        values: &[f64],
        count: usize,
        lo_pct: f64,
        hi_pct: f64,
        n_times: usize,
    ) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let exposure = (0..count)
            .map(|k| {
                let pct = if count == 1 {
                    0.5 * (lo_pct + hi_pct)
                } else {
                    lo_pct + (hi_pct - lo_pct) * k as f64 / (count - 1) as f64
                };
                stats::quantile_sorted(&sorted, pct / 100.0)
            })
            .collect();
        Self::new(dedup(exposure), Self::all_time_cuts(n_times), n_times)
    }

    pub fn exposure_splits(&self) -> &[f64] {
        &self.exposure
    }
    pub fn time_splits(&self) -> &[usize] {
        &self.time
    }
    pub fn n_times(&self) -> usize {
        self.n_times
    }
    /// `s_x`
    pub fn n_exposure(&self) -> usize {
        self.exposure.len()
    }
    /// `s_t`
    pub fn n_time(&self) -> usize {
        self.time.len()
    }
    /// Number of exposure edges including both infinities.
    pub fn n_edges(&self) -> usize {
        self.exposure.len() + 2
    }

    /// Exposure value of edge `e` (0 ↦ -∞, `s_x+1` ↦ +∞).
    #[inline]
    pub fn edge(&self, e: usize) -> f64 {
        if e == 0 {
            f64::NEG_INFINITY
        } else if e > self.exposure.len() {
            f64::INFINITY
        } else {
            self.exposure[e - 1]
        }
    }

    /// Edge index of a finite or infinite exposure bound, if it lies on the
    /// grid.
    pub fn edge_of(&self, value: f64) -> Option<usize> {
        if value == f64::NEG_INFINITY {
            Some(0)
        } else if value == f64::INFINITY {
            Some(self.exposure.len() + 1)
        } else {
            self.exposure
                .iter()
                .position(|&s| s == value)
                .map(|j| j + 1)
        }
    }

    /// Same grid with `value` added to the exposure splits, if it lies
    /// strictly inside the exposure range and is not already a split.
    pub fn with_exposure_split(&self, value: f64, values: &[f64]) -> Self {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if !(value > lo && value < hi) || self.exposure.contains(&value) {
            return self.clone();
        }
        let mut exposure = self.exposure.clone();
        let k = exposure.partition_point(|&s| s < value);
        exposure.insert(k, value);
        Self {
            exposure,
            ..self.clone()
        }
    }

    /// Same grid with every exposure split mapped through `f`.
    pub fn map_exposure(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            exposure: self.exposure.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

fn dedup(mut v: Vec<f64>) -> Vec<f64> {
    v.dedup();
    v
}

/// How each exposure is spread over terminal nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyMode {
    None,
    PerCellSe,
    EmpiricalCdf,
}

impl fmt::Display for UncertaintyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UncertaintyMode::None => "none",
            UncertaintyMode::PerCellSe => "per_cell_se",
            UncertaintyMode::EmpiricalCdf => "empirical_cdf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        Self {
            grow: 0.3,
            prune: 0.3,
            change: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcSettings {
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub seed: u64,
    /// Independent chains pooled in chain order; each keeps `iterations`.
    pub chains: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            iterations: 15000,
            thin: 10,
            seed: 1,
            chains: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub n_trees: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Prior scale of the covariate coefficients, `γ ~ N(0, σ² c I)`.
    pub c: f64,
    /// Exposure smoothing bandwidth; 0 gives hard partitions.
    pub sigma_x: f64,
    pub move_probs: MoveProbs,
    /// Reference exposure for centering.
    pub x0: f64,
    pub mcmc: McmcSettings,
    pub uncertainty_mode: UncertaintyMode,
    /// Optional hard cap on tree depth (nodes at this depth never split).
    pub max_depth: Option<usize>,
}

impl Hyperparameters {
    /// Defaults for a dataset: 20 trees, α = 0.95, β = 2, c = 10⁴·var(y),
    /// hard partitions and centering at the median exposure.
    pub fn for_dataset(data: &Dataset) -> Self {
        let var_y = stats::variance(data.y());
        Self {
            n_trees: 20,
            alpha: 0.95,
            beta: 2.0,
            c: 1e4 * if var_y > 0.0 { var_y } else { 1.0 },
            sigma_x: 0.0,
            move_probs: MoveProbs::default(),
            x0: stats::percentile(data.exposures(), 50.0),
            mcmc: McmcSettings::default(),
            uncertainty_mode: UncertaintyMode::None,
            max_depth: None,
        }
    }
}

/// Half the standard deviation of all exposure values, the default
/// smoothing bandwidth.
pub fn half_sd_bandwidth(data: &Dataset) -> f64 {
    0.5 * stats::variance(data.exposures()).sqrt()
}

/// A single broken invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Check every structural invariant of the inputs, collecting all
/// violations.
pub fn validate(
    data: &Dataset,
    grid: &SplitGrid,
    hyper: &Hyperparameters,
) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut fail = |msg: String| out.push(Violation(msg));

    let (n, nt, p) = (data.n(), data.n_times(), data.n_covariates());
    if n < 1 {
        fail("dataset has no observations".into());
    }
    if nt < 2 {
        fail(format!("need at least 2 time points, got {nt}"));
    }
    if p < 1 {
        fail("covariate matrix needs at least an intercept column".into());
    }
    if let Some(i) = data.y().iter().position(|v| !v.is_finite()) {
        fail(format!("missing or non-finite outcome at row {i}"));
    }
    if let Some(k) = data.exposures().iter().position(|v| !v.is_finite()) {
        fail(format!(
            "missing or non-finite exposure at row {}, time {}",
            k / nt.max(1),
            k % nt.max(1) + 1
        ));
    }
    if let Some(k) = data.covariates().iter().position(|v| !v.is_finite()) {
        fail(format!(
            "missing or non-finite covariate at row {}, column {}",
            k / p.max(1),
            k % p.max(1) + 1
        ));
    }
    match data.uncertainty() {
        Some(Uncertainty::StdErrors(se)) => {
            if let Some(k) = se.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                fail(format!(
                    "standard error must be > 0 at row {}, time {}",
                    k / nt.max(1),
                    k % nt.max(1) + 1
                ));
            }
        }
        Some(Uncertainty::Draws(d)) => {
            if d.len() < 2 {
                fail(format!("need at least 2 exposure draws, got {}", d.len()));
            }
            if d.iter().any(|m| m.len() != n * nt) {
                fail("exposure draw matrices must be n×T".into());
            }
            if d.iter().flatten().any(|v| !v.is_finite()) {
                fail("non-finite exposure draw".into());
            }
        }
        None => {}
    }

    // grid
    if grid.n_times() != nt {
        fail(format!(
            "grid built for T={} but data has T={nt}",
            grid.n_times()
        ));
    }
    let xs = grid.exposure_splits();
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        fail("exposure splits not strictly increasing".into());
    }
    let (lo, hi) = data
        .exposures()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    for &s in xs {
        if !(s > lo && s < hi) {
            fail(format!("split out of range: {s} not inside ({lo}, {hi})"));
        }
    }
    let ts = grid.time_splits();
    if ts.windows(2).any(|w| w[0] >= w[1]) {
        fail("time splits not strictly increasing".into());
    }
    if ts.iter().any(|&t| t < 1 || t + 1 > nt) {
        fail(format!("time split outside [1, {}]", nt.saturating_sub(1)));
    }
    if xs.is_empty() && ts.is_empty() {
        fail("split grid is empty".into());
    }

    // hyperparameters
    let mp = hyper.move_probs;
    if [mp.grow, mp.prune, mp.change].iter().any(|v| !(*v >= 0.0)) {
        fail("move probabilities must be nonnegative".into());
    }
    if ((mp.grow + mp.prune + mp.change) - 1.0).abs() > 1e-9 {
        fail("probabilities do not sum to 1".into());
    }
    if !(hyper.alpha > 0.0 && hyper.alpha < 1.0) {
        fail(format!("alpha must lie in (0,1), got {}", hyper.alpha));
    }
    if !(hyper.beta >= 0.0) {
        fail(format!("beta must be >= 0, got {}", hyper.beta));
    }
    if !(hyper.c > 0.0 && hyper.c.is_finite()) {
        fail(format!("c must be > 0, got {}", hyper.c));
    }
    if !(hyper.sigma_x >= 0.0 && hyper.sigma_x.is_finite()) {
        fail(format!("sigma_x must be >= 0, got {}", hyper.sigma_x));
    }
    if !hyper.x0.is_finite() {
        fail("reference exposure x0 must be finite".into());
    }
    if hyper.mcmc.thin < 1 {
        fail("thin must be >= 1".into());
    }
    if hyper.mcmc.chains < 1 {
        fail("chains must be >= 1".into());
    }
    match (hyper.uncertainty_mode, data.uncertainty()) {
        (UncertaintyMode::PerCellSe, Some(Uncertainty::StdErrors(_)))
        | (UncertaintyMode::EmpiricalCdf, Some(Uncertainty::Draws(_)))
        | (UncertaintyMode::None, _) => {}
        (mode, _) => fail(format!("uncertainty mode {mode} needs matching data")),
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
