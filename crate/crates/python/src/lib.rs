//! Python bindings: build steady states, evaluate Phi and Lambda, run perturbations
//! and experiments. Fields cross the boundary as nested lists indexed `[i][j]`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hydrostab::config::parse_config;
use hydrostab::evolution::{run, Diagnostics, PerturbationState, RunOptions, Scheme, TimeStepperConfig};
use hydrostab::experiments::{
    experiment_hadamard, experiment_linear_growth, experiment_lipschitz, experiment_stability,
};
use hydrostab::grid::{Grid, ScalarField};
use hydrostab::report::to_json;
use hydrostab::steady::{build_steady_state, classify, DensityProfile, PotentialSpec, SteadyState, DEFAULT_CONST_TOL};
use hydrostab::variational::{phi as phi_eval, solve_growth_rate, EigOptions, GrowthOptions};
use hydrostab::Error;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(f: &ScalarField) -> Vec<Vec<f64>> {
    f.values.outer_iter().map(|r| r.to_vec()).collect()
}

fn profile_from(kind: &str, p: &BTreeMap<String, f64>) -> PyResult<DensityProfile> {
    let get = |k: &str| {
        p.get(k)
            .copied()
            .ok_or_else(|| PyValueError::new_err(format!("{kind} profile needs parameter '{k}'")))
    };
    Ok(match kind {
        "linear" => DensityProfile::Linear { a: get("a")?, b: get("b")? },
        "exponential" => DensityProfile::Exponential {
            rho_bar: get("rho_bar")?,
            beta: get("beta")?,
        },
        "tanh" => DensityProfile::Tanh {
            mean: get("mean")?,
            jump: get("jump")?,
            t0: get("t0")?,
            width: get("width")?,
        },
        other => return Err(PyValueError::new_err(format!("unknown profile kind {other:?}"))),
    })
}

/// A hydrostatic background under uniform gravity.
#[pyclass(name = "State", module = "hydrostab")]
struct PyState {
    inner: SteadyState,
}

#[pymethods]
impl PyState {
    #[new]
    #[pyo3(signature = (nx, ny, profile, params, mu, sigma, g = 1.0, lx = 1.0, ly = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        nx: usize,
        ny: usize,
        profile: &str,
        params: BTreeMap<String, f64>,
        mu: f64,
        sigma: f64,
        g: f64,
        lx: f64,
        ly: f64,
    ) -> PyResult<Self> {
        let grid = Grid::new(lx, ly, nx, ny).map_err(py_err)?;
        let pot = PotentialSpec::uniform_gravity(grid, g).map_err(py_err)?;
        let inner = build_steady_state(grid, pot, profile_from(profile, &params)?, mu, sigma).map_err(py_err)?;
        Ok(PyState { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyState {
            inner: SteadyState::load(&dir).map_err(py_err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map(|_| ()).map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.grid.nx, self.inner.grid.ny)
    }

    #[getter]
    fn rho0(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.rho0)
    }

    #[getter]
    fn h(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.h)
    }

    #[getter]
    fn classification(&self) -> String {
        format!("{:?}", classify(&self.inner, DEFAULT_CONST_TOL))
    }

    #[getter]
    fn upper_bound(&self) -> f64 {
        self.inner.upper_bound()
    }

    #[getter]
    fn residuals(&self) -> BTreeMap<String, f64> {
        let r = &self.inner.residuals;
        BTreeMap::from([
            ("hydrostatic".into(), r.hydrostatic),
            ("hydrostatic_truncation".into(), r.hydrostatic_truncation),
            ("alignment".into(), r.alignment),
        ])
    }

    /// `(phi, iterations, residual)` at `s`.
    fn phi(&self, s: f64) -> PyResult<(f64, usize, f64)> {
        let e = phi_eval(&self.inner, s, EigOptions::default()).map_err(py_err)?;
        Ok((e.phi, e.iterations, e.residual))
    }

    /// `Lambda`, or `None` when `Phi(s) <= s^2` everywhere.
    fn growth_rate(&self) -> PyResult<Option<f64>> {
        match solve_growth_rate(&self.inner, GrowthOptions::default()) {
            Ok(r) => Ok(Some(r.lambda)),
            Err(Error::NoInstability { .. }) => Ok(None),
            Err(e) => Err(py_err(e)),
        }
    }

    /// Runs from the eigenmode and returns one dict per diagnostics sample.
    #[pyo3(signature = (mode = "linear", amplitude = 1e-3, t_end = 1.0, dt = None, cadence = 1))]
    fn simulate(
        &self,
        mode: &str,
        amplitude: f64,
        t_end: f64,
        dt: Option<f64>,
        cadence: usize,
    ) -> PyResult<Vec<BTreeMap<String, f64>>> {
        let scheme = match mode {
            "linear" => Scheme::Linearized,
            "nonlinear" => Scheme::Nonlinear,
            other => return Err(PyValueError::new_err(format!("mode must be linear or nonlinear, got {other:?}"))),
        };
        let res = solve_growth_rate(&self.inner, GrowthOptions::default()).map_err(py_err)?;
        let mut cfg = TimeStepperConfig::for_grid(&self.inner.grid, scheme);
        if let Some(dt) = dt {
            cfg.dt = dt;
        }
        let s0 = PerturbationState::eigenmode(&res, amplitude);
        let traj = run(&s0, &self.inner, &cfg, RunOptions::new(t_end, cadence), &mut []).map_err(py_err)?;
        Ok(traj.samples.iter().map(diag_dict).collect())
    }
}

fn diag_dict(d: &Diagnostics) -> BTreeMap<String, f64> {
    match serde_json::to_value(d) {
        Ok(serde_json::Value::Object(m)) => m
            .into_iter()
            .map(|(k, v)| (k, v.as_f64().unwrap_or(f64::NAN)))
            .collect(),
        _ => BTreeMap::new(),
    }
}

/// Validates a configuration document and returns the effective settings as JSON.
#[pyfunction]
fn check_config(text: &str) -> PyResult<String> {
    let cfg = parse_config(text).map_err(py_err)?;
    to_json(&cfg.echo()).map_err(py_err)
}

/// Runs `lipschitz`, `hadamard`, `lineargrowth` or `stability` and returns the report JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, kind: &str, config: &str) -> PyResult<String> {
    let cfg = parse_config(config).map_err(py_err)?;
    let exp = cfg.experiment;
    let report = py
        .detach(|| match kind {
            "lipschitz" => experiment_lipschitz(&exp),
            "hadamard" => experiment_hadamard(&exp),
            "lineargrowth" => experiment_linear_growth(&exp),
            "stability" => experiment_stability(&exp),
            other => Err(Error::Domain(format!("unknown experiment {other:?}"))),
        })
        .map_err(py_err)?;
    to_json(&report).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "hydrostab")]
fn hydrostab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyState>()?;
    m.add_function(wrap_pyfunction!(check_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
