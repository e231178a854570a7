//! `treedlnm fit|simulate|summarize --config <file> [--seed N] [--jobs N]`

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::{ExposurePoint, RunConfig};
use crate::error::{Error, Result};
use crate::io::{self, Stamp};
use crate::posterior::{cumulative_effect, summarize_at_level, windows_from_summary};
use crate::sampler::run_chain;
use crate::simulation::{aggregate, run_replicate, ScenarioSpec, StudySettings};
use crate::stats::percentile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SAMPLER: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "treedlnm",
    version,
    about = "Treed distributed lag nonlinear models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a dataset and write posterior draws and summaries.
    Fit(CommonArgs),
    /// Run a replication study on a simulated scenario.
    Simulate(CommonArgs),
    /// Contrasts, windows and plot grids from a draws file.
    Summarize(CommonArgs),
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Sampler { .. } | Error::Numerical(_) => EXIT_SAMPLER,
        _ => EXIT_DATA,
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if args.jobs == Some(0) {
        return Err(Error::Config("--jobs must be ≥ 1".into()));
    }
    Ok(cfg)
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j);
    }
    b.build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

fn stamp(cfg: &RunConfig) -> Stamp {
    Stamp {
        seed: cfg.seed(),
        config_sha256: cfg.digest(),
    }
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

/// Fit the configured dataset and write draws, summary, windows, params and
/// run metadata to `output_dir`.
pub fn cmd_fit(cfg: &RunConfig, jobs: Option<usize>) -> Result<()> {
    let started = Instant::now();
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("fit needs 'data = <csv>'".into()))?;
    let data = io::load_dataset(path, cfg.fit.uncertainty_mode)?;
    let hyper = cfg.fit.hyperparameters(&data);
    let grid = cfg.fit.split_grid(&data, hyper.x0);
    let grid_x = cfg.fit.eval_grid(&data, hyper.x0);
    let out_dir = output_dir(cfg)?;
    let st = stamp(cfg);

    let chain = thread_pool(jobs)?.install(|| run_chain(&data, &grid, &hyper, &grid_x));
    let out = match chain {
        Ok(out) => out,
        Err(e) => {
            let diag = format!(
                "{}error={e}\nelapsed_seconds={:.3}\n{}",
                st_line(&st),
                started.elapsed().as_secs_f64(),
                cfg.echo()
            );
            fs::write(out_dir.join("diagnostics.txt"), diag)?;
            return Err(e);
        }
    };

    io::write_draws(&out_dir.join("surface_draws.csv"), &st, &out.surface)?;
    io::write_params(&out_dir.join("params.csv"), &st, &out)?;
    io::write_meta(
        &out_dir.join("run_meta.txt"),
        &st,
        &cfg.echo(),
        &out.acceptance,
        out.n_draws(),
    )?;
    if out.n_draws() > 0 {
        let summary = summarize_at_level(&out.surface, cfg.level)?;
        io::write_summary(&out_dir.join("surface_summary.csv"), &st, &summary)?;
        io::write_windows(
            &out_dir.join("windows.csv"),
            &st,
            data.n_times(),
            &windows_from_summary(&summary),
        )?;
    } else {
        eprintln!("no retained draws; surface summary and windows not written");
    }
    eprintln!(
        "fit: {} draws in {:.2}s",
        out.n_draws(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn st_line(st: &Stamp) -> String {
    format!("seed={}\nconfig_sha256={}\n", st.seed, st.config_sha256)
}

pub fn study_settings(cfg: &RunConfig) -> StudySettings {
    StudySettings {
        scenario: ScenarioSpec::new(cfg.scenario, cfg.amplitude),
        n: cfg.n,
        n_times: cfg.n_times,
        snr: cfg.snr,
        seed: cfg.seed(),
        fit: cfg.fit.clone(),
    }
}

/// Run the replication study and write `metrics.csv`. Fails if more than 1%
/// of replicates fail.
pub fn cmd_simulate(cfg: &RunConfig, jobs: Option<usize>) -> Result<()> {
    let started = Instant::now();
    if cfg.n == 0 || cfg.n_times < 2 {
        return Err(Error::Config("simulate needs n ≥ 1 and n_times ≥ 2".into()));
    }
    let settings = study_settings(cfg);
    let out_dir = output_dir(cfg)?;
    let pool = thread_pool(jobs)?;
    let results: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let seed = settings.seed.wrapping_add(r as u64);
                (r, seed, run_replicate(&settings, r))
            })
            .collect()
    });
    let reports: Vec<_> = results
        .iter()
        .filter_map(|(_, _, r)| r.as_ref().ok().map(|rep| rep.metrics))
        .collect();
    let failed = results.len() - reports.len();
    for (r, _, res) in &results {
        if let Err(e) = res {
            eprintln!("replicate {r} failed: {e}");
        }
    }
    io::write_metrics(
        &out_dir.join("metrics.csv"),
        &stamp(cfg),
        &results,
        &aggregate(&reports),
    )?;
    eprintln!(
        "simulate: {} replicates ({failed} failed) in {:.2}s",
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed as f64 > 0.01 * results.len() as f64 {
        return Err(Error::Sampler {
            iteration: 0,
            tree: None,
            message: format!("{failed} of {} replicates failed", results.len()),
        });
    }
    Ok(())
}

fn resolve_point(point: ExposurePoint, exposures: Option<&[f64]>) -> Result<f64> {
    match point {
        ExposurePoint::Value(v) => Ok(v),
        ExposurePoint::Percentile(p) => exposures.map(|x| percentile(x, p)).ok_or_else(|| {
            Error::Config("percentile contrasts need 'data = <csv>' to locate exposures".into())
        }),
    }
}

/// Contrast, windows at the configured level and plot-ready grids from a
/// draws file (`draws`, or `surface_draws.csv` in `output_dir`).
pub fn cmd_summarize(cfg: &RunConfig) -> Result<()> {
    let draws_path = cfg
        .draws
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("surface_draws.csv"));
    let draws = io::read_draws(&draws_path)?;
    let out_dir = output_dir(cfg)?;
    let st = stamp(cfg);

    let summary = summarize_at_level(&draws, cfg.level)?;
    io::write_summary(&out_dir.join("summary_grid.csv"), &st, &summary)?;
    io::write_windows(
        &out_dir.join("summary_windows.csv"),
        &st,
        draws.n_times,
        &windows_from_summary(&summary),
    )?;

    match (cfg.contrast_from, cfg.contrast_to) {
        (Some(from), Some(to)) => {
            let data = match &cfg.data {
                Some(p) => Some(io::load_dataset(p, crate::model::UncertaintyMode::None)?),
                None => None,
            };
            let exposures = data.as_ref().map(|d| d.exposures());
            let x_from = resolve_point(from, exposures)?;
            let x_to = resolve_point(to, exposures)?;
            let c = cumulative_effect(&draws, x_from, x_to)?;
            let body = format!(
                "{}from,to,x_from,x_to,mean,lo95,hi95\n{from},{to},{},{},{},{},{}\n",
                st.line(),
                c.x_from,
                c.x_to,
                c.mean,
                c.lo,
                c.hi
            );
            fs::write(out_dir.join("contrast.csv"), body)?;
        }
        (None, None) => {}
        _ => {
            return Err(Error::Config(
                "set both contrast_from and contrast_to, or neither".into(),
            ))
        }
    }
    Ok(())
}

/// Parse arguments, dispatch, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (args, outcome) = match &cli.command {
        Command::Fit(a) => (a, load_config(a).and_then(|c| cmd_fit(&c, a.jobs))),
        Command::Simulate(a) => (a, load_config(a).and_then(|c| cmd_simulate(&c, a.jobs))),
        Command::Summarize(a) => (a, load_config(a).and_then(|c| cmd_summarize(&c))),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("treedlnm: {e} (config {})", args.config.display());
            exit_code(&e)
        }
    }
}
