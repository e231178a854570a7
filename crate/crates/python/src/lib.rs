//! Python bindings: datasets, fitting, posterior summaries and the
//! simulation scenarios.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use treedlnm::config::{FitSettings, SigmaXMode, X0Mode};
use treedlnm::model::{McmcSettings, Uncertainty, UncertaintyMode};
use treedlnm::posterior::{self, SurfaceDraws};
use treedlnm::sampler::{moves::MoveKind, run_chain, ChainOutput};
use treedlnm::simulation::{self as sim, ScenarioKind, ScenarioSpec};
use treedlnm::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Sampler { .. } | Error::Numerical(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Outcome, exposure matrix (n × T) and covariates (n × p).
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: treedlnm::Dataset,
}

#[pymethods]
impl PyDataset {
    /// An intercept column is prepended to `z` unless `intercept=False`.
    #[new]
    #[pyo3(signature = (y, x, z=None, intercept=true, std_errors=None, exposure_draws=None))]
    fn new(
        y: Vec<f64>,
        x: Vec<Vec<f64>>,
        z: Option<Vec<Vec<f64>>>,
        intercept: bool,
        std_errors: Option<Vec<Vec<f64>>>,
        exposure_draws: Option<Vec<Vec<Vec<f64>>>>,
    ) -> PyResult<Self> {
        let n = y.len();
        let mut z = z.unwrap_or_else(|| vec![Vec::new(); n]);
        if intercept {
            for row in &mut z {
                row.insert(0, 1.0);
            }
        }
        let mut inner = treedlnm::Dataset::new(y, x, z).map_err(to_py)?;
        match (std_errors, exposure_draws) {
            (Some(_), Some(_)) => {
                return Err(PyValueError::new_err(
                    "give std_errors or exposure_draws, not both",
                ))
            }
            (Some(se), None) => {
                inner = inner
                    .with_uncertainty(Uncertainty::StdErrors(se.concat()))
                    .map_err(to_py)?
            }
            (None, Some(d)) => {
                inner = inner
                    .with_uncertainty(Uncertainty::Draws(
                        d.into_iter().map(|m| m.concat()).collect(),
                    ))
                    .map_err(to_py)?
            }
            (None, None) => {}
        }
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n_times(&self) -> usize {
        self.inner.n_times()
    }

    #[getter]
    fn n_covariates(&self) -> usize {
        self.inner.n_covariates()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n())
            .map(|i| self.inner.exposure_row(i).to_vec())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, T={}, p={})",
            self.inner.n(),
            self.inner.n_times(),
            self.inner.n_covariates()
        )
    }
}

/// Posterior draws from one chain.
#[pyclass(name = "FitResult")]
struct PyFitResult {
    out: ChainOutput,
}

impl PyFitResult {
    fn draws(&self) -> &SurfaceDraws {
        &self.out.surface
    }
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn grid_x(&self) -> Vec<f64> {
        self.draws().grid_x.clone()
    }

    #[getter]
    fn n_times(&self) -> usize {
        self.draws().n_times
    }

    #[getter]
    fn x0(&self) -> f64 {
        self.draws().x0
    }

    #[getter]
    fn n_draws(&self) -> usize {
        self.out.n_draws()
    }

    #[getter]
    fn sigma2(&self) -> Vec<f64> {
        self.out.sigma2.clone()
    }

    #[getter]
    fn omega2(&self) -> Vec<f64> {
        self.out.omega2.clone()
    }

    #[getter]
    fn gamma(&self) -> Vec<Vec<f64>> {
        self.out.gamma.clone()
    }

    /// Draw `d` as a `T × len(grid_x)` nested list.
    fn surface(&self, d: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = self.draws();
        if d >= s.n_draws() {
            return Err(PyValueError::new_err(format!(
                "draw {d} out of range ({} draws)",
                s.n_draws()
            )));
        }
        Ok(s.draw(d)
            .chunks(s.grid_x.len())
            .map(<[f64]>::to_vec)
            .collect())
    }

    fn acceptance<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for kind in MoveKind::ALL {
            d.set_item(kind.name(), self.out.acceptance.rate(kind))?;
        }
        Ok(d)
    }

    /// Posterior mean and equal-tailed interval at `level`, each as a
    /// `T × len(grid_x)` nested list.
    #[pyo3(signature = (level=0.95))]
    fn summary<'py>(&self, py: Python<'py>, level: f64) -> PyResult<Bound<'py, PyDict>> {
        let s = posterior::summarize_at_level(self.draws(), level).map_err(to_py)?;
        let g = s.grid_x.len();
        let rows = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(g).map(<[f64]>::to_vec).collect() };
        let d = PyDict::new(py);
        d.set_item("mean", rows(&s.mean))?;
        d.set_item("lo", rows(&s.lo))?;
        d.set_item("hi", rows(&s.hi))?;
        d.set_item("level", level)?;
        Ok(d)
    }

    #[pyo3(signature = (level=0.95))]
    fn critical_windows(&self, level: f64) -> PyResult<Vec<usize>> {
        posterior::critical_windows(self.draws(), level).map_err(to_py)
    }

    /// `Σ_t [w(x_to, t) − w(x_from, t)]`: mean and 95% interval.
    fn cumulative_effect<'py>(
        &self,
        py: Python<'py>,
        x_from: f64,
        x_to: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let c = posterior::cumulative_effect(self.draws(), x_from, x_to).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("mean", c.mean)?;
        d.set_item("lo", c.lo)?;
        d.set_item("hi", c.hi)?;
        d.set_item("draws", c.per_draw)?;
        Ok(d)
    }
}

fn parse_uncertainty_mode(s: &str) -> PyResult<UncertaintyMode> {
    match s {
        "none" => Ok(UncertaintyMode::None),
        "per_cell_se" => Ok(UncertaintyMode::PerCellSe),
        "empirical_cdf" => Ok(UncertaintyMode::EmpiricalCdf),
        _ => Err(PyValueError::new_err(format!(
            "uncertainty_mode must be none, per_cell_se or empirical_cdf, got '{s}'"
        ))),
    }
}

/// Fit the model. `sigma_x` is a bandwidth, `"half_sd"`, or 0 for hard
/// partitions; `x0` defaults to the median exposure.
#[pyfunction]
#[pyo3(signature = (
    data, *, n_trees=20, burn_in=5000, iterations=15000, thin=10, seed=1, chains=1,
    sigma_x=None, x0=None, n_exposure_splits=30, grid_size=50, alpha=0.95,
    beta=2.0, c_scale=1e4, uncertainty_mode="none", grid_x=None
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    n_trees: usize,
    burn_in: usize,
    iterations: usize,
    thin: usize,
    seed: u64,
    chains: usize,
    sigma_x: Option<Bound<'_, PyAny>>,
    x0: Option<f64>,
    n_exposure_splits: usize,
    grid_size: usize,
    alpha: f64,
    beta: f64,
    c_scale: f64,
    uncertainty_mode: &str,
    grid_x: Option<Vec<f64>>,
) -> PyResult<PyFitResult> {
    let sigma_x_mode = match sigma_x {
        None => SigmaXMode::Zero,
        Some(v) => {
            if let Ok(s) = v.extract::<String>() {
                match s.as_str() {
                    "half_sd" => SigmaXMode::HalfSd,
                    "zero" => SigmaXMode::Zero,
                    _ => {
                        return Err(PyValueError::new_err(
                            "sigma_x must be a number or 'half_sd'",
                        ))
                    }
                }
            } else {
                SigmaXMode::Fixed(v.extract::<f64>()?)
            }
        }
    };
    if thin == 0 {
        return Err(PyValueError::new_err("thin must be >= 1"));
    }
    if chains == 0 {
        return Err(PyValueError::new_err("chains must be >= 1"));
    }
    let settings = FitSettings {
        n_trees,
        alpha,
        beta,
        c_scale,
        sigma_x_mode,
        x0_mode: x0.map_or(X0Mode::Median, X0Mode::Fixed),
        n_exposure_splits,
        grid_size: grid_size.max(1),
        mcmc: McmcSettings {
            burn_in,
            iterations,
            thin,
            seed,
            chains,
        },
        uncertainty_mode: parse_uncertainty_mode(uncertainty_mode)?,
        ..FitSettings::default()
    };
    let data = &data.inner;
    let hyper = settings.hyperparameters(data);
    let grid = settings.split_grid(data, hyper.x0);
    let grid_x = grid_x.unwrap_or_else(|| settings.eval_grid(data, hyper.x0));
    let out = py
        .detach(|| run_chain(data, &grid, &hyper, &grid_x))
        .map_err(to_py)?;
    Ok(PyFitResult { out })
}

fn scenario(kind: &str, amplitude: f64) -> PyResult<ScenarioSpec> {
    let kind: ScenarioKind = kind.parse().map_err(PyValueError::new_err)?;
    Ok(ScenarioSpec::new(kind, amplitude))
}

/// True effect of a simulation scenario at log-exposure `x` and week `t`.
#[pyfunction]
#[pyo3(signature = (kind, x, t, amplitude=1.0))]
fn true_surface(kind: &str, x: f64, t: usize, amplitude: f64) -> PyResult<f64> {
    Ok(scenario(kind, amplitude)?.true_surface(x, t))
}

/// Simulate one dataset (log-exposures) for a scenario. Returns the dataset
/// and the true signal `f(x_i)`.
#[pyfunction]
#[pyo3(signature = (kind, n=1000, n_times=37, amplitude=1.0, snr=1e-3, seed=1))]
fn simulate(
    kind: &str,
    n: usize,
    n_times: usize,
    amplitude: f64,
    snr: f64,
    seed: u64,
) -> PyResult<(PyDataset, Vec<f64>)> {
    let settings = sim::StudySettings {
        scenario: scenario(kind, amplitude)?,
        n,
        n_times,
        snr,
        seed,
        fit: FitSettings::default(),
    };
    let s = sim::simulate_replicate(&settings, 0).map_err(to_py)?;
    Ok((PyDataset { inner: s.data }, s.signal))
}

/// `Φ(z)`
#[pyfunction]
fn normal_cdf(z: f64) -> f64 {
    treedlnm::stats::normal_cdf(z)
}

#[pymodule]
fn treedlnm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(true_surface, m)?)?;
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    Ok(())
}
