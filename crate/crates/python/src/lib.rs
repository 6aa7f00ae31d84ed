//! Python bindings: FEM operators, the discrete control problem (Riccati
//! solve, costs, gradient descent) and the experiment runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use slqheat_core::control::{
    evaluate_cost_chaos, optimality_residual_chaos, simulate_optimal_chaos, slq_adjoint_chaos, solve_optimality,
    ControlProblem as CoreProblem,
};
use slqheat_core::experiment::{run_experiment as core_run, ExperimentConfig, Profile, ProfileKind};
use slqheat_core::gradient::{kappa_bound as core_kappa_bound, run_gd, GdConfig};
use slqheat_core::nalgebra::DVector;
use slqheat_core::process::ChaosAffineProcess;
use slqheat_core::{FemOperators, FieldP1, Mesh1D, SlqError, Space, TimeGrid};

fn py_err(e: SlqError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json_object(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// P1 finite-element operators on a uniform mesh of `(0, length)`.
#[pyclass(name = "Operators", module = "slqheat")]
struct PyOperators {
    ops: FemOperators,
}

#[pymethods]
impl PyOperators {
    #[new]
    #[pyo3(signature = (n_cells, tau, length = 1.0))]
    fn new(n_cells: usize, tau: f64, length: f64) -> PyResult<Self> {
        let mesh = Mesh1D::uniform(length, n_cells).map_err(py_err)?;
        Ok(Self { ops: FemOperators::assemble(&mesh, tau).map_err(py_err)? })
    }

    #[getter]
    fn n_dof(&self) -> usize {
        self.ops.n_dof()
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.ops.n_cells()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.ops.tau()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.ops.mesh().interior_nodes().to_vec()
    }

    /// Dense mass matrix as a list of rows.
    fn mass(&self) -> Vec<Vec<f64>> {
        rows(&self.ops.mass_dense())
    }

    fn stiffness(&self) -> Vec<Vec<f64>> {
        rows(&self.ops.stiffness().to_dense())
    }

    fn laplacian(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.ops.laplacian(&FieldP1::from_vec(v)).map_err(py_err)?.0.as_slice().to_vec())
    }

    /// `(1 − τΔ_h)⁻¹ v`
    fn resolvent(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.ops.resolvent(&FieldP1::from_vec(v)).map_err(py_err)?.0.as_slice().to_vec())
    }

    /// L² projection of a Python callable onto P1.
    fn project(&self, f: Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        let err = std::cell::RefCell::new(None);
        let v = self.ops.project_p1(|x| match f.call1((x,)).and_then(|r| r.extract::<f64>()) {
            Ok(y) => y,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        });
        match err.into_inner() {
            Some(e) => Err(e),
            None => Ok(v.0.as_slice().to_vec()),
        }
    }

    fn cell_averages(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.ops.p0_from_p1(&FieldP1::from_vec(v)).map_err(py_err)?.0.as_slice().to_vec())
    }

    fn l2_norm(&self, v: Vec<f64>) -> PyResult<f64> {
        check_len(&v, self.ops.n_dof())?;
        Ok(self.ops.l2_p1(&DVector::from_vec(v)))
    }

    fn h1_seminorm(&self, v: Vec<f64>) -> PyResult<f64> {
        check_len(&v, self.ops.n_dof())?;
        Ok(self.ops.h1_semi(&DVector::from_vec(v)))
    }
}

fn rows(m: &slqheat_core::nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_len(v: &[f64], n: usize) -> PyResult<()> {
    if v.len() != n {
        return Err(PyValueError::new_err(format!("expected {n} values, got {}", v.len())));
    }
    Ok(())
}

fn profile(spec: Option<(String, Vec<f64>)>, default: Profile) -> PyResult<Profile> {
    let Some((name, coeffs)) = spec else { return Ok(default) };
    let kind: ProfileKind =
        serde_json::from_value(serde_json::Value::String(name)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let p = Profile::new(kind, &coeffs);
    p.validate("profile").map_err(py_err)?;
    Ok(p)
}

/// Discrete linear-quadratic control problem with data given by named
/// profiles `(name, coeffs)`.
#[pyclass(name = "ControlProblem", module = "slqheat")]
struct PyControlProblem {
    ops: FemOperators,
    grid: TimeGrid,
    alpha: f64,
    x0: FieldP1,
    sigma: Vec<FieldP1>,
    xtilde: Vec<FieldP1>,
}

impl PyControlProblem {
    fn problem(&self) -> PyResult<CoreProblem<'_>> {
        CoreProblem::new(&self.ops, self.grid, self.alpha, self.x0.clone(), self.sigma.clone(), self.xtilde.clone())
            .map_err(py_err)
    }
}

#[pymethods]
impl PyControlProblem {
    #[new]
    #[pyo3(signature = (n_cells, steps, horizon = 1.0, alpha = 1.0, length = 1.0, x0 = None, sigma = None, xtilde = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_cells: usize,
        steps: usize,
        horizon: f64,
        alpha: f64,
        length: f64,
        x0: Option<(String, Vec<f64>)>,
        sigma: Option<(String, Vec<f64>)>,
        xtilde: Option<(String, Vec<f64>)>,
    ) -> PyResult<Self> {
        let defaults = ExperimentConfig::new(slqheat_core::experiment::ExperimentId::SlqTime);
        let (x0, sigma, xtilde) =
            (profile(x0, defaults.x0)?, profile(sigma, defaults.sigma)?, profile(xtilde, defaults.xtilde)?);
        let grid = TimeGrid::new(horizon, steps).map_err(py_err)?;
        let ops =
            FemOperators::assemble(&Mesh1D::uniform(length, n_cells).map_err(py_err)?, grid.tau()).map_err(py_err)?;
        let p = CoreProblem::from_functions(
            &ops,
            grid,
            alpha,
            |x| x0.eval(0.0, x, length),
            |t, x| sigma.eval(t, x, length),
            |t, x| xtilde.eval(t, x, length),
        )
        .map_err(py_err)?;
        let (x0, sigma, xtilde) = (p.x0, p.sigma, p.xtilde);
        Ok(Self { ops, grid, alpha, x0, sigma, xtilde })
    }

    #[getter]
    fn n_dof(&self) -> usize {
        self.ops.n_dof()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// Cost of the Riccati feedback control.
    fn optimal_cost(&self) -> PyResult<f64> {
        let p = self.problem()?;
        let (ric, _) = solve_optimality(&p).map_err(py_err)?;
        let opt = simulate_optimal_chaos(&p, &ric).map_err(py_err)?;
        evaluate_cost_chaos(&p, &opt.u).map_err(py_err)
    }

    /// `E[U*_n]` per step, one list of cell values each.
    fn optimal_control_mean(&self) -> PyResult<Vec<Vec<f64>>> {
        let p = self.problem()?;
        let (ric, _) = solve_optimality(&p).map_err(py_err)?;
        let opt = simulate_optimal_chaos(&p, &ric).map_err(py_err)?;
        Ok(opt.u.values.iter().map(|v| v.mean.as_slice().to_vec()).collect())
    }

    /// `max |U* − Π_h^0 Y*|` with `Y*` from an independent adjoint sweep.
    fn optimality_residual(&self) -> PyResult<f64> {
        let p = self.problem()?;
        let (ric, _) = solve_optimality(&p).map_err(py_err)?;
        let opt = simulate_optimal_chaos(&p, &ric).map_err(py_err)?;
        let y = slq_adjoint_chaos(&p, &opt.x).map_err(py_err)?;
        Ok(optimality_residual_chaos(&self.ops, &y, &opt.u))
    }

    /// Cost of a deterministic control given as one list of cell values per
    /// step.
    fn cost(&self, control: Vec<Vec<f64>>) -> PyResult<f64> {
        let p = self.problem()?;
        let means = control.into_iter().map(DVector::from_vec).collect();
        evaluate_cost_chaos(&p, &ChaosAffineProcess::deterministic(self.grid, Space::P0, means)).map_err(py_err)
    }

    /// Runs gradient descent from zero against the Riccati optimum and
    /// returns the report as a dict.
    #[pyo3(signature = (kappa = None, iterations = 50))]
    fn gradient_descent(&self, py: Python<'_>, kappa: Option<f64>, iterations: usize) -> PyResult<Py<PyAny>> {
        let p = self.problem()?;
        let (ric, _) = solve_optimality(&p).map_err(py_err)?;
        let u_star = simulate_optimal_chaos(&p, &ric).map_err(py_err)?.u;
        let mut cfg = GdConfig::for_problem(&p);
        if let Some(k) = kappa {
            cfg.kappa = k;
        }
        cfg.max_iters = iterations + 1;
        cfg.tol = 0.0;
        let report = run_gd(&p, &cfg, Some(&u_star)).map_err(py_err)?;
        to_json_object(py, &report)
    }
}

/// `1 + αT + T²`
#[pyfunction]
fn kappa_bound(alpha: f64, horizon: f64) -> f64 {
    core_kappa_bound(alpha, horizon)
}

/// Least-squares slope of `log(error)` against `log(param)`.
#[pyfunction]
fn observed_order(levels: Vec<(f64, f64)>) -> PyResult<f64> {
    slqheat_core::rates::observed_order(&levels).map_err(py_err)
}

/// Resolved config (defaults filled in) for a JSON config string.
#[pyfunction]
fn resolve_config(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    to_json_object(py, &ExperimentConfig::from_json(config).map_err(py_err)?)
}

/// Runs an experiment from a JSON config string and returns its report.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = ExperimentConfig::from_json(config).map_err(py_err)?;
    let outcome = py.detach(|| core_run(&cfg)).map_err(py_err)?;
    let passed = outcome.passed();
    let obj = to_json_object(py, &outcome)?;
    obj.bind(py).set_item("passed", passed)?;
    Ok(obj)
}

#[pymodule]
fn slqheat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperators>()?;
    m.add_class::<PyControlProblem>()?;
    m.add_function(wrap_pyfunction!(kappa_bound, m)?)?;
    m.add_function(wrap_pyfunction!(observed_order, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("DEFAULT_SEED", slqheat_core::DEFAULT_SEED)?;
    Ok(())
}
