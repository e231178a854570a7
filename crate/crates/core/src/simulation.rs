//! Simulation scenarios with autocorrelated exposures and seasonal
//! confounding, and the metrics used to score fitted surfaces.
//!
//! Surfaces are defined on log-exposure. Datasets produced here already
//! carry log-exposures; [`gen_exposures`] returns the raw scale.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::FitSettings;
use crate::error::{Error, Result};
use crate::model::{Dataset, McmcSettings};
use crate::posterior::{summarize_at_level, windows_from_summary, SurfaceDraws};
use crate::sampler::{run_chain, AcceptanceStats};
use crate::stats::{mean, std_normal, variance};

/// Cells whose true effect lies within this distance of zero count as
/// no-effect cells.
pub const EFFECT_THRESHOLD: f64 = 0.005;

/// Weeks carrying a seasonal confounder term.
pub const SEASONAL_WEEKS: [usize; 7] = [5, 10, 15, 20, 25, 30, 35];

const LOG_EXPOSURE_MEAN: f64 = 1.9;
const SEASONAL_AMPLITUDE: f64 = 0.25;
const AR_COEF: f64 = 0.8;
/// Gives a marginal log-exposure sd of 0.4 together with the seasonal term.
const AR_INNOVATION_SD: f64 = 0.215_290_501_416_109_86;
const WEEKS_PER_YEAR: f64 = 52.0;
const N_NORMAL_COVARIATES: usize = 5;
const N_BINARY_COVARIATES: usize = 5;
const SEASONAL_COEF_SD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    /// Step in exposure, weeks 11–15.
    A,
    /// Linear in exposure, weeks 11–15.
    B,
    /// Logistic in exposure, weeks 11–15.
    C,
    /// Logistic in exposure, raised cosine in time around week 13.
    D,
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            "C" | "c" => Ok(Self::C),
            "D" | "d" => Ok(Self::D),
            _ => Err(format!("unknown scenario '{s}', expected A, B, C or D")),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::D => "D",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Effect range for A, C and D; slope for B.
    pub amplitude: f64,
    /// Log-exposure at which every surface vanishes.
    pub center: f64,
    pub window: (usize, usize),
    pub peak: usize,
    pub extent: usize,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, amplitude: f64) -> Self {
        Self {
            kind,
            amplitude,
            center: 1.0,
            window: (11, 15),
            peak: 13,
            extent: 5,
        }
    }

    fn in_window(&self, t: usize) -> bool {
        (self.window.0..=self.window.1).contains(&t)
    }

    fn logistic_shape(&self, x: f64) -> f64 {
        self.amplitude * (1.0 / (1.0 + (-4.0 * (x - self.center)).exp()) - 0.5)
    }

    /// Raised cosine equal to 1 at the peak and 0 beyond `extent` weeks.
    fn time_kernel(&self, t: usize) -> f64 {
        let d = t as f64 - self.peak as f64;
        if d.abs() >= self.extent as f64 {
            0.0
        } else {
            0.5 * (1.0 + (PI * d / self.extent as f64).cos())
        }
    }

    /// True effect at log-exposure `x` and week `t`.
    pub fn true_surface(&self, x: f64, t: usize) -> f64 {
        match self.kind {
            ScenarioKind::D => self.logistic_shape(x) * self.time_kernel(t),
            _ if !self.in_window(t) => 0.0,
            ScenarioKind::A => {
                if x > self.center {
                    self.amplitude
                } else {
                    0.0
                }
            }
            ScenarioKind::B => self.amplitude * (x - self.center),
            ScenarioKind::C => self.logistic_shape(x),
        }
    }

    /// Truth on `grid_x × 1..=T`, laid out `[t][x]`.
    pub fn surface_on(&self, grid_x: &[f64], n_times: usize) -> Vec<f64> {
        (1..=n_times)
            .flat_map(|t| grid_x.iter().map(move |&x| self.true_surface(x, t)))
            .collect()
    }
}

/// Exposure histories with the calendar offset that drives their
/// seasonality.
#[derive(Debug, Clone, PartialEq)]
pub struct Exposures {
    /// Raw-scale exposures, one row of length `T` per observation.
    pub values: Vec<Vec<f64>>,
    /// Calendar week (in `[0, 52)`) at which each history starts.
    pub start_week: Vec<f64>,
}

/// Log-exposures follow a seasonal sinusoid plus a stationary AR(1) with
/// coefficient 0.8; the marginal sd is about 0.4 around a mean of 1.9.
pub fn gen_exposures<R: Rng + ?Sized>(n: usize, n_times: usize, rng: &mut R) -> Exposures {
    let stationary_sd = AR_INNOVATION_SD / (1.0 - AR_COEF * AR_COEF).sqrt();
    let mut values = Vec::with_capacity(n);
    let mut start_week = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * WEEKS_PER_YEAR;
        let mut e = stationary_sd * std_normal(rng);
        let mut row = Vec::with_capacity(n_times);
        for t in 1..=n_times {
            if t > 1 {
                e = AR_COEF * e + AR_INNOVATION_SD * std_normal(rng);
            }
            let season = SEASONAL_AMPLITUDE * (2.0 * PI * (u + t as f64) / WEEKS_PER_YEAR).sin();
            row.push((LOG_EXPOSURE_MEAN + season + e).exp());
        }
        values.push(row);
        start_week.push(u);
    }
    Exposures { values, start_week }
}

/// A simulated dataset with the quantities needed to score a fit.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Log-exposures, covariates (intercept, 5 normal, 5 binary, 7 seasonal)
    /// and outcome.
    pub data: Dataset,
    /// `f(x_i) = Σ_t w(x_it, t)`
    pub signal: Vec<f64>,
    pub covariate_coefs: Vec<f64>,
    pub seasonal_coefs: Vec<f64>,
    pub sigma2: f64,
}

/// Standardized seasonal series at week `w` of each history, one value per
/// observation.
fn seasonal_column(start_week: &[f64], w: usize) -> Vec<f64> {
    let raw: Vec<f64> = start_week
        .iter()
        .map(|u| (2.0 * PI * (u + w as f64) / WEEKS_PER_YEAR).cos())
        .collect();
    let m = mean(&raw);
    let sd = variance(&raw).sqrt();
    raw.iter()
        .map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 })
        .collect()
}

/// Build `y = f + Zγ + season + ε` with `Var[f]/σ² = snr`. When the signal
/// has no variance σ² is 1.
pub fn gen_outcomes<R: Rng + ?Sized>(
    exposures: &Exposures,
    spec: &ScenarioSpec,
    snr: f64,
    rng: &mut R,
) -> Result<SimulatedData> {
    let n = exposures.values.len();
    let log_x: Vec<Vec<f64>> = exposures
        .values
        .iter()
        .map(|row| row.iter().map(|v| v.ln()).collect())
        .collect();
    let signal: Vec<f64> = log_x
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, &x)| spec.true_surface(x, k + 1))
                .sum()
        })
        .collect();

    let n_cov = N_NORMAL_COVARIATES + N_BINARY_COVARIATES;
    let covariate_coefs: Vec<f64> = (0..n_cov).map(|_| std_normal(rng)).collect();
    let seasonal_coefs: Vec<f64> = SEASONAL_WEEKS
        .iter()
        .map(|_| SEASONAL_COEF_SD * std_normal(rng))
        .collect();
    let seasonal: Vec<Vec<f64>> = SEASONAL_WEEKS
        .iter()
        .map(|&w| seasonal_column(&exposures.start_week, w))
        .collect();

    let var_f = variance(&signal);
    let sigma2 = if var_f > 0.0 { var_f / snr } else { 1.0 };
    let sd = sigma2.sqrt();

    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(1 + n_cov + SEASONAL_WEEKS.len());
        row.push(1.0);
        for _ in 0..N_NORMAL_COVARIATES {
            row.push(std_normal(rng));
        }
        for _ in 0..N_BINARY_COVARIATES {
            row.push(f64::from(u8::from(rng.random_bool(0.5))));
        }
        let mut yi = signal[i];
        for (k, b) in covariate_coefs.iter().enumerate() {
            yi += b * row[1 + k];
        }
        for (col, c) in seasonal.iter().zip(&seasonal_coefs) {
            row.push(col[i]);
            yi += c * col[i];
        }
        yi += sd * std_normal(rng);
        y.push(yi);
        z.push(row);
    }
    Ok(SimulatedData {
        data: Dataset::new(y, log_x, z)?,
        signal,
        covariate_coefs,
        seasonal_coefs,
        sigma2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub rmse_overall: f64,
    pub rmse_no_effect: Option<f64>,
    pub rmse_effect: Option<f64>,
    pub coverage: f64,
    pub ci_width: f64,
    /// Share of effect cells whose interval excludes zero.
    pub tp: Option<f64>,
    /// Share of no-effect cells whose interval excludes zero.
    pub fp: Option<f64>,
    pub precision: Option<f64>,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 8] = [
        "rmse_overall",
        "rmse_no_effect",
        "rmse_effect",
        "coverage",
        "ci_width",
        "tp",
        "fp",
        "precision",
    ];

    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.rmse_overall),
            self.rmse_no_effect,
            self.rmse_effect,
            Some(self.coverage),
            Some(self.ci_width),
            self.tp,
            self.fp,
            self.precision,
        ]
    }
}

/// `TP/(TP+FP)`; 1 when nothing is flagged, undefined without effect cells.
pub fn precision(tp: Option<f64>, fp: Option<f64>) -> Option<f64> {
    let tp = tp?;
    let fp = fp.unwrap_or(0.0);
    if tp + fp == 0.0 {
        Some(1.0)
    } else {
        Some(tp / (tp + fp))
    }
}

fn rmse(sq: &[f64]) -> Option<f64> {
    (!sq.is_empty()).then(|| mean(sq).sqrt())
}

fn share(flags: &[bool]) -> Option<f64> {
    (!flags.is_empty()).then(|| flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Score posterior draws against a truth laid out like the draws.
pub fn score_values(draws: &SurfaceDraws, truth: &[f64]) -> Result<MetricsReport> {
    if truth.len() != draws.cells() {
        return Err(Error::Input(format!(
            "truth has {} cells, draws have {}",
            truth.len(),
            draws.cells()
        )));
    }
    let s = summarize_at_level(draws, 0.95)?;
    let (mut sq_all, mut sq_eff, mut sq_null) = (Vec::new(), Vec::new(), Vec::new());
    let (mut flag_eff, mut flag_null) = (Vec::new(), Vec::new());
    let (mut covered, mut width) = (0usize, 0.0);
    for (c, &truth_c) in truth.iter().enumerate() {
        let err = s.mean[c] - truth_c;
        let flagged = s.lo[c] > 0.0 || s.hi[c] < 0.0;
        sq_all.push(err * err);
        if truth_c.abs() > EFFECT_THRESHOLD {
            sq_eff.push(err * err);
            flag_eff.push(flagged);
        } else {
            sq_null.push(err * err);
            flag_null.push(flagged);
        }
        covered += usize::from(s.lo[c] <= truth_c && truth_c <= s.hi[c]);
        width += s.hi[c] - s.lo[c];
    }
    let cells = truth.len() as f64;
    let tp = share(&flag_eff);
    let fp = share(&flag_null);
    Ok(MetricsReport {
        rmse_overall: rmse(&sq_all).unwrap_or(0.0),
        rmse_no_effect: rmse(&sq_null),
        rmse_effect: rmse(&sq_eff),
        coverage: covered as f64 / cells,
        ci_width: width / cells,
        tp,
        fp,
        precision: precision(tp, fp),
    })
}

/// Score posterior draws against a scenario's true surface on the draws'
/// grid.
pub fn score(draws: &SurfaceDraws, spec: &ScenarioSpec) -> Result<MetricsReport> {
    score_values(draws, &spec.surface_on(&draws.grid_x, draws.n_times))
}

/// Settings for a replication study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub scenario: ScenarioSpec,
    pub n: usize,
    pub n_times: usize,
    pub snr: f64,
    pub seed: u64,
    pub fit: FitSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    /// Weeks flagged at the 95% level.
    pub windows: Vec<usize>,
    pub acceptance: AcceptanceStats,
}

/// Simulated data for replicate `r`, drawn from its own stream so it does
/// not overlap the chain's.
pub fn simulate_replicate(settings: &StudySettings, r: usize) -> Result<SimulatedData> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(r as u64));
    rng.set_stream(1);
    let exposures = gen_exposures(settings.n, settings.n_times, &mut rng);
    gen_outcomes(&exposures, &settings.scenario, settings.snr, &mut rng)
}

/// Generate, fit and score one replicate. The fit is centered at the
/// scenario's centering exposure.
pub fn run_replicate(settings: &StudySettings, r: usize) -> Result<ReplicateResult> {
    let seed = settings.seed.wrapping_add(r as u64);
    let sim = simulate_replicate(settings, r)?;
    let data = &sim.data;
    let mut hyper = settings.fit.hyperparameters(data);
    hyper.x0 = settings.scenario.center;
    let grid = settings.fit.split_grid(data, hyper.x0);
    hyper.mcmc = McmcSettings {
        seed,
        ..settings.fit.mcmc
    };
    let grid_x = settings.fit.eval_grid(data, hyper.x0);
    let out = run_chain(data, &grid, &hyper, &grid_x)?;
    let metrics = score(&out.surface, &settings.scenario)?;
    let windows = windows_from_summary(&summarize_at_level(&out.surface, 0.95)?);
    Ok(ReplicateResult {
        replicate: r,
        seed,
        metrics,
        windows,
        acceptance: out.acceptance,
    })
}

/// Run replicates `0..replicates` in parallel on the current rayon pool.
pub fn run_study(settings: &StudySettings, replicates: usize) -> Vec<Result<ReplicateResult>> {
    (0..replicates)
        .into_par_iter()
        .map(|r| run_replicate(settings, r))
        .collect()
}

/// Mean and standard error of one metric over the replicates where it is
/// defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricAggregate {
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub count: usize,
}

pub fn aggregate(reports: &[MetricsReport]) -> [MetricAggregate; 8] {
    std::array::from_fn(|k| {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.values()[k]).collect();
        let count = vals.len();
        MetricAggregate {
            mean: (count > 0).then(|| mean(&vals)),
            se: (count > 1).then(|| (variance(&vals) / count as f64).sqrt()),
            count,
        }
    })
}
