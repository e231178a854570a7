//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    half_sd_bandwidth, Dataset, Hyperparameters, McmcSettings, MoveProbs, SplitGrid,
    UncertaintyMode,
};
use crate::simulation::ScenarioKind;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaXMode {
    Zero,
    HalfSd,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum X0Mode {
    Median,
    Fixed(f64),
}

/// How exposure split candidates are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Evenly spaced values between two percentiles.
    Values,
    /// Evenly spaced percentiles.
    Quantiles,
}

/// Settings that turn a dataset into a split grid, hyperparameters and an
/// evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub n_trees: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Covariate prior scale as a multiple of var(y).
    pub c_scale: f64,
    pub sigma_x_mode: SigmaXMode,
    pub x0_mode: X0Mode,
    pub n_exposure_splits: usize,
    pub split_percentiles: (f64, f64),
    pub split_mode: SplitMode,
    /// Add the reference exposure to the exposure split candidates.
    pub split_at_x0: bool,
    pub move_probs: MoveProbs,
    pub mcmc: McmcSettings,
    pub uncertainty_mode: UncertaintyMode,
    pub grid_size: usize,
    pub max_depth: Option<usize>,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            n_trees: 20,
            alpha: 0.95,
            beta: 2.0,
            c_scale: 1e4,
            sigma_x_mode: SigmaXMode::Zero,
            x0_mode: X0Mode::Median,
            n_exposure_splits: 30,
            split_percentiles: (0.01, 99.9),
            split_mode: SplitMode::Values,
            split_at_x0: true,
            move_probs: MoveProbs::default(),
            mcmc: McmcSettings::default(),
            uncertainty_mode: UncertaintyMode::None,
            grid_size: 50,
            max_depth: None,
        }
    }
}

impl FitSettings {
    /// Split candidates for `data`; `x0` is added when `split_at_x0` is set.
    pub fn split_grid(&self, data: &Dataset, x0: f64) -> SplitGrid {
        let (lo, hi) = self.split_percentiles;
        let build = match self.split_mode {
            SplitMode::Values => SplitGrid::evenly_spaced,
            SplitMode::Quantiles => SplitGrid::quantile_spaced,
        };
        let grid = build(
            data.exposures(),
            self.n_exposure_splits,
            lo,
            hi,
            data.n_times(),
        );
        if self.split_at_x0 {
            grid.with_exposure_split(x0, data.exposures())
        } else {
            grid
        }
    }

    pub fn x0(&self, data: &Dataset) -> f64 {
        match self.x0_mode {
            X0Mode::Median => stats::percentile(data.exposures(), 50.0),
            X0Mode::Fixed(v) => v,
        }
    }

    pub fn hyperparameters(&self, data: &Dataset) -> Hyperparameters {
        let var_y = stats::variance(data.y());
        Hyperparameters {
            n_trees: self.n_trees,
            alpha: self.alpha,
            beta: self.beta,
            c: self.c_scale * if var_y > 0.0 { var_y } else { 1.0 },
            sigma_x: match self.sigma_x_mode {
                SigmaXMode::Zero => 0.0,
                SigmaXMode::HalfSd => half_sd_bandwidth(data),
                SigmaXMode::Fixed(v) => v,
            },
            move_probs: self.move_probs,
            x0: self.x0(data),
            mcmc: self.mcmc,
            uncertainty_mode: self.uncertainty_mode,
            max_depth: self.max_depth,
        }
    }

    /// Evaluation grid for a dataset, with `x0` included.
    pub fn eval_grid(&self, data: &Dataset, x0: f64) -> Vec<f64> {
        crate::sampler::default_eval_grid(data, self.grid_size, x0)
    }
}

/// Everything a CLI run can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fit: FitSettings,
    pub data: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub draws: Option<PathBuf>,
    pub scenario: ScenarioKind,
    pub amplitude: f64,
    pub n: usize,
    pub n_times: usize,
    pub replicates: usize,
    pub snr: f64,
    pub level: f64,
    pub contrast_from: Option<ExposurePoint>,
    pub contrast_to: Option<ExposurePoint>,
    /// Normalized `key=value` lines, in key order, echoed into outputs.
    echo: Vec<(String, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fit: FitSettings::default(),
            data: None,
            output_dir: PathBuf::from("."),
            draws: None,
            scenario: ScenarioKind::A,
            amplitude: 1.0,
            n: 1000,
            n_times: 37,
            replicates: 100,
            snr: 1e-3,
            level: 0.95,
            contrast_from: None,
            contrast_to: None,
            echo: Vec::new(),
        }
    }
}

/// An exposure given directly or as a percentile of the evaluated range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExposurePoint {
    Value(f64),
    Percentile(f64),
}

impl FromStr for ExposurePoint {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(p) = s.strip_prefix('p') {
            let v: f64 = p.parse().map_err(|_| format!("bad percentile '{s}'"))?;
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("percentile {v} outside [0, 100]"));
            }
            Ok(Self::Percentile(v))
        } else {
            s.parse()
                .map(Self::Value)
                .map_err(|_| format!("expected a number or pNN, got '{s}'"))
        }
    }
}

impl fmt::Display for ExposurePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Value(v) => write!(f, "{v}"),
            Self::Percentile(p) => write!(f, "p{p}"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_fixed(key: &str, v: &str) -> Result<Option<f64>> {
    match v.strip_prefix("fixed:") {
        Some(rest) => parse_num(key, rest).map(Some),
        None => Ok(None),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative paths are resolved against the config file's directory
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.draws.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{k}'",
                    lineno + 1
                )));
            }
        }
        let mut cfg = Self::default();
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.check()?;
        cfg.echo = entries.into_iter().collect();
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let fit = &mut self.fit;
        match key {
            "n_trees" => fit.n_trees = parse_num(key, v)?,
            "alpha" => fit.alpha = parse_num(key, v)?,
            "beta" => fit.beta = parse_num(key, v)?,
            "c_scale" => fit.c_scale = parse_num(key, v)?,
            "sigma_x_mode" => {
                fit.sigma_x_mode = match v {
                    "zero" => SigmaXMode::Zero,
                    "half_sd" => SigmaXMode::HalfSd,
                    _ => match parse_fixed(key, v)? {
                        Some(s) => SigmaXMode::Fixed(s),
                        None => {
                            return Err(Error::Config(format!(
                                "sigma_x_mode: expected zero, half_sd or fixed:<value>, got '{v}'"
                            )))
                        }
                    },
                }
            }
            "x0_mode" => {
                fit.x0_mode = match v {
                    "median" => X0Mode::Median,
                    _ => match parse_fixed(key, v)? {
                        Some(x) => X0Mode::Fixed(x),
                        None => {
                            return Err(Error::Config(format!(
                                "x0_mode: expected median or fixed:<value>, got '{v}'"
                            )))
                        }
                    },
                }
            }
            "n_exposure_splits" => fit.n_exposure_splits = parse_num(key, v)?,
            "exposure_split_percentile_range" => {
                let (lo, hi) = v
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("{key}: expected 'lo,hi', got '{v}'")))?;
                fit.split_percentiles = (parse_num(key, lo.trim())?, parse_num(key, hi.trim())?);
            }
            "exposure_split_mode" => {
                fit.split_mode = match v {
                    "values" => SplitMode::Values,
                    "quantiles" => SplitMode::Quantiles,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected values or quantiles, got '{v}'"
                        )))
                    }
                }
            }
            "split_at_x0" => fit.split_at_x0 = parse_num(key, v)?,
            "move_probs" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?;
                let [grow, prune, change] = parts[..] else {
                    return Err(Error::Config(format!("{key}: expected three values")));
                };
                fit.move_probs = MoveProbs {
                    grow,
                    prune,
                    change,
                };
            }
            "burn_in" => fit.mcmc.burn_in = parse_num(key, v)?,
            "iterations" => fit.mcmc.iterations = parse_num(key, v)?,
            "thin" => fit.mcmc.thin = parse_num(key, v)?,
            "seed" => fit.mcmc.seed = parse_num(key, v)?,
            "chains" => fit.mcmc.chains = parse_num(key, v)?,
            "grid_size" => fit.grid_size = parse_num(key, v)?,
            "max_depth" => fit.max_depth = Some(parse_num(key, v)?),
            "uncertainty_mode" => {
                fit.uncertainty_mode = match v {
                    "none" => UncertaintyMode::None,
                    "per_cell_se" => UncertaintyMode::PerCellSe,
                    "empirical_cdf" => UncertaintyMode::EmpiricalCdf,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected none, per_cell_se or empirical_cdf, got '{v}'"
                        )))
                    }
                }
            }
            "scenario" => {
                self.scenario = v
                    .parse()
                    .map_err(|e| Error::Config(format!("{key}: {e}")))?
            }
            "amplitude" => self.amplitude = parse_num(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "n_times" => self.n_times = parse_num(key, v)?,
            "replicates" => self.replicates = parse_num(key, v)?,
            "snr" => self.snr = parse_num(key, v)?,
            "level" => self.level = parse_num(key, v)?,
            "contrast_from" => {
                self.contrast_from = Some(
                    v.parse()
                        .map_err(|e| Error::Config(format!("{key}: {e}")))?,
                )
            }
            "contrast_to" => {
                self.contrast_to = Some(
                    v.parse()
                        .map_err(|e| Error::Config(format!("{key}: {e}")))?,
                )
            }
            "data" => self.data = Some(PathBuf::from(v)),
            "draws" => self.draws = Some(PathBuf::from(v)),
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let fit = &self.fit;
        let mut bad = Vec::new();
        if fit.mcmc.thin == 0 {
            bad.push("thin must be ≥ 1".to_string());
        }
        if fit.mcmc.chains == 0 {
            bad.push("chains must be ≥ 1".to_string());
        }
        if fit.grid_size == 0 {
            bad.push("grid_size must be ≥ 1".to_string());
        }
        if fit.n_exposure_splits == 0 {
            bad.push("n_exposure_splits must be ≥ 1".to_string());
        }
        let (lo, hi) = fit.split_percentiles;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            bad.push(format!(
                "exposure_split_percentile_range {lo},{hi} is not a range in [0,100]"
            ));
        }
        if !(fit.c_scale > 0.0) {
            bad.push("c_scale must be > 0".to_string());
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            bad.push("snr must be > 0".to_string());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            bad.push("level must be in (0,1)".to_string());
        }
        if let SigmaXMode::Fixed(s) = fit.sigma_x_mode {
            if !(s >= 0.0 && s.is_finite()) {
                bad.push("sigma_x must be ≥ 0".to_string());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Override the seed from the command line.
    pub fn set_seed(&mut self, seed: u64) {
        self.fit.mcmc.seed = seed;
        self.echo.retain(|(k, _)| k != "seed");
        self.echo.push(("seed".into(), seed.to_string()));
        self.echo.sort();
    }

    pub fn seed(&self) -> u64 {
        self.fit.mcmc.seed
    }

    /// The explicitly set keys, normalized, one `key=value` per line.
    pub fn echo(&self) -> String {
        self.echo
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.echo().as_bytes()))
    }
}
