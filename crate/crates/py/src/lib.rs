//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sparseid::ensemble::{self, EnsembleKind, EnsembleSpec};
use sparseid::estimators::{self, GradFitConfig, HyperGrid, Method};
use sparseid::harness::{self, SweepConfig};
use sparseid::integrator::{self, SolveConfig};
use sparseid::spectral::{self, DEFAULT_SVD_TOL};
use sparseid::stats::{self, Direction};
use sparseid::{special, traj_metrics, DMatrix, DVector, Error};

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for sparseid::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let k = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Ok(DMatrix::from_fn(k, n, |i, j| rows[i][j]))
}

fn to_square(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let m = to_matrix(rows)?;
    if !m.is_square() || m.is_empty() {
        return Err(PyValueError::new_err("matrix must be square and nonempty"));
    }
    Ok(m)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().py()
}

/// A sampled trajectory: `times` (length K) and `states` (K rows of n).
#[pyclass(name = "Trajectory", module = "sparseid", from_py_object)]
#[derive(Clone)]
struct PyTrajectory {
    inner: integrator::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[new]
    fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> PyResult<Self> {
        let states = to_matrix(&states)?;
        Ok(PyTrajectory {
            inner: integrator::Trajectory::from_samples(times, states).py()?,
        })
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.states)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.inner.x0().iter().copied().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(dim={}, samples={})",
            self.inner.dim(),
            self.inner.len()
        )
    }
}

/// Identifiability conditions and spectral summary of a system matrix.
#[pyclass(
    name = "IdentReport",
    module = "sparseid",
    get_all,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyIdentReport {
    dim: usize,
    rank: usize,
    sigma2: f64,
    sigma_min: f64,
    eigenvalues: Vec<(f64, f64)>,
    cond_i: bool,
    cond_ii: bool,
    cond_iii: bool,
    globally_unidentifiable: bool,
    witness: Option<(f64, f64)>,
    structural_rank_upper: usize,
    matching_lower: usize,
}

#[pymethods]
impl PyIdentReport {
    fn __repr__(&self) -> String {
        format!(
            "IdentReport(dim={}, rank={}, cond_i={}, cond_ii={}, cond_iii={})",
            self.dim, self.rank, self.cond_i, self.cond_ii, self.cond_iii
        )
    }
}

/// Draws one matrix from a sparse ensemble.
#[pyfunction]
#[pyo3(signature = (n, p, seed, index=0, kind="sparse_continuous"))]
fn draw_matrix(n: usize, p: f64, seed: u64, index: u64, kind: &str) -> PyResult<Vec<Vec<f64>>> {
    let kind: EnsembleKind = parse(kind)?;
    let spec = EnsembleSpec::new(kind, n, p, seed).py()?;
    Ok(to_rows(&ensemble::draw(&spec, index).py()?.entries))
}

/// Uniform draw from the unit sphere in `R^n`.
#[pyfunction]
fn draw_unit_sphere(n: usize, seed: u64) -> PyResult<Vec<f64>> {
    Ok(ensemble::draw_unit_sphere(n, seed)
        .py()?
        .values
        .iter()
        .copied()
        .collect())
}

#[pyfunction]
#[pyo3(signature = (matrix, tol=DEFAULT_SVD_TOL))]
fn analyze(matrix: Vec<Vec<f64>>, tol: f64) -> PyResult<PyIdentReport> {
    let r = spectral::analyze(&to_square(&matrix)?, tol).py()?;
    Ok(PyIdentReport {
        dim: r.dim,
        rank: r.rank,
        sigma2: r.sigma2,
        sigma_min: r.sigma_min,
        eigenvalues: r.eigenvalues.iter().map(|z| (z.re, z.im)).collect(),
        cond_i: r.cond_i(),
        cond_ii: r.cond_ii(),
        cond_iii: r.cond_iii(),
        globally_unidentifiable: r.globally_unidentifiable,
        witness: r.witness.map(|z| (z.re, z.im)),
        structural_rank_upper: r.structural_rank_upper,
        matching_lower: r.matching_lower,
    })
}

/// Solves `x' = A x` on a homogeneous grid with `steps` samples.
#[pyfunction]
#[pyo3(signature = (matrix, x0, solver="rk45", t_end=1.0, steps=512, rtol=1e-6, atol=1e-9))]
fn solve(
    matrix: Vec<Vec<f64>>,
    x0: Vec<f64>,
    solver: &str,
    t_end: f64,
    steps: usize,
    rtol: f64,
    atol: f64,
) -> PyResult<PyTrajectory> {
    let a = to_square(&matrix)?;
    let x0 = DVector::from_vec(x0);
    let cfg = SolveConfig {
        t_end,
        steps,
        rtol,
        atol,
    };
    let inner = match solver {
        "rk45" => integrator::solve_rk45(&a, &x0, &cfg),
        "expm" => integrator::solve_expm(&a, &x0, &cfg),
        other => return Err(PyValueError::new_err(format!("unknown solver '{other}'"))),
    }
    .py()?;
    Ok(PyTrajectory { inner })
}

/// Kernel distance `d_A0`, kernel dimension and smoothed condition number.
#[pyfunction]
#[pyo3(signature = (matrix, trajectory, tol=DEFAULT_SVD_TOL))]
fn trajectory_metrics<'py>(
    py: Python<'py>,
    matrix: Vec<Vec<f64>>,
    trajectory: &PyTrajectory,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = traj_metrics::trajectory_metrics(&to_square(&matrix)?, &trajectory.inner, tol).py()?;
    let d = PyDict::new(py);
    d.set_item("d_a0", m.d_a0)?;
    d.set_item("kernel_dim", m.d0)?;
    d.set_item("scn", m.scn)?;
    d.set_item("gram", to_rows(&m.gram))?;
    Ok(d)
}

/// Random system sharing `x0`-trajectories started in `ker(A)`.
#[pyfunction]
#[pyo3(signature = (matrix, seed, tol=DEFAULT_SVD_TOL))]
fn confusable_system(matrix: Vec<Vec<f64>>, seed: u64, tol: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(
        &traj_metrics::confusable_system(&to_square(&matrix)?, tol, seed).py()?,
    ))
}

/// Upper bound on `‖e^{At}x0 − e^{A′t}x0‖` and the measured distance.
#[pyfunction]
#[pyo3(signature = (a, a_prime, x0, t, tol=DEFAULT_SVD_TOL))]
fn divergence_bound(
    a: Vec<Vec<f64>>,
    a_prime: Vec<Vec<f64>>,
    x0: Vec<f64>,
    t: f64,
    tol: f64,
) -> PyResult<(f64, f64)> {
    let (a, ap, x0) = (to_square(&a)?, to_square(&a_prime)?, DVector::from_vec(x0));
    let b = traj_metrics::divergence_bound(&a, &ap, &x0, t, tol).py()?;
    let measured = traj_metrics::measured_divergence(&a, &ap, &x0, t).py()?;
    Ok((b.bound, measured))
}

/// Time up to which the two trajectories provably stay `epsilon`-close.
#[pyfunction]
#[pyo3(signature = (a, a_prime, x0, epsilon, tol=DEFAULT_SVD_TOL))]
fn epsilon_horizon(
    a: Vec<Vec<f64>>,
    a_prime: Vec<Vec<f64>>,
    x0: Vec<f64>,
    epsilon: f64,
    tol: f64,
) -> PyResult<f64> {
    let (a, ap, x0) = (to_square(&a)?, to_square(&a_prime)?, DVector::from_vec(x0));
    Ok(traj_metrics::epsilon_horizon(&a, &ap, &x0, epsilon, tol)
        .py()?
        .horizon_t)
}

/// Estimates `A` from a trajectory with hyperparameter selection.
#[pyfunction]
#[pyo3(signature = (trajectory, method="stlsq", a_true=None, max_iters=10_000))]
fn fit<'py>(
    py: Python<'py>,
    trajectory: &PyTrajectory,
    method: &str,
    a_true: Option<Vec<Vec<f64>>>,
    max_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = parse(method)?;
    let a_true = a_true.as_deref().map(to_square).transpose()?;
    let gf = GradFitConfig {
        max_iters,
        ..Default::default()
    };
    let r = estimators::select_hypers(
        method,
        &trajectory.inner,
        a_true.as_ref(),
        &HyperGrid::default(),
        &gf,
    )
    .py()?;
    let d = PyDict::new(py);
    d.set_item("a_hat", to_rows(&r.a_hat))?;
    d.set_item("method", r.method.as_str())?;
    d.set_item("r2", r.r2)?;
    d.set_item("mse", r.mse)?;
    d.set_item("well_fit", r.well_fit)?;
    d.set_item("hamming", r.hamming)?;
    d.set_item("converged", r.converged)?;
    d.set_item("threshold", r.hyper.threshold)?;
    d.set_item("ridge", r.hyper.ridge)?;
    d.set_item("l1", r.hyper.l1)?;
    d.set_item("fd_order", r.hyper.fd_order)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (a, a_hat, tau=estimators::HAMMING_TOL))]
fn hamming_distance(a: Vec<Vec<f64>>, a_hat: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    estimators::hamming_distance(&to_square(&a)?, &to_square(&a_hat)?, tau).py()
}

#[pyfunction]
fn unident_lower_bound(n: usize, p: f64) -> PyResult<f64> {
    spectral::unident_lower_bound(n, p).py()
}

#[pyfunction]
fn critical_sparsity(n: usize) -> PyResult<f64> {
    spectral::critical_sparsity(n).py()
}

#[pyfunction]
fn expected_kernel_distance(n: usize, d0: usize) -> PyResult<f64> {
    traj_metrics::expected_kernel_distance(n, d0).py()
}

#[pyfunction]
fn lambert_w0(z: f64) -> PyResult<f64> {
    special::lambert_w0(z).py()
}

/// One-sided Welch test; returns `(t, dof, p_value)`.
#[pyfunction]
#[pyo3(signature = (a, b, direction="less"))]
fn welch_one_sided(a: Vec<f64>, b: Vec<f64>, direction: &str) -> PyResult<(f64, f64, f64)> {
    let dir = match direction {
        "less" => Direction::Less,
        "greater" => Direction::Greater,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown direction '{other}'"
            )))
        }
    };
    let w = stats::welch_one_sided(&a, &b, dir).py()?;
    Ok((w.t_stat, w.dof, w.p_value))
}

/// Runs a sweep from a TOML configuration string (empty for the desk
/// profile) and returns the number of cells written.
#[pyfunction]
#[pyo3(signature = (config_toml, output_dir, jobs=0))]
fn run_sweep(
    py: Python<'_>,
    config_toml: &str,
    output_dir: std::path::PathBuf,
    jobs: usize,
) -> PyResult<usize> {
    let mut cfg = if config_toml.trim().is_empty() {
        SweepConfig::desk()
    } else {
        SweepConfig::from_toml_str(config_toml).py()?
    };
    cfg.output_dir = output_dir;
    cfg.jobs = jobs;
    let res = py.detach(|| harness::run_sweep(&cfg)).py()?;
    Ok(res.cells.len())
}

#[pymodule]
#[pyo3(name = "sparseid")]
fn sparseid_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyIdentReport>()?;
    m.add("DEFAULT_SVD_TOL", DEFAULT_SVD_TOL)?;
    m.add_function(wrap_pyfunction!(draw_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(draw_unit_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(confusable_system, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_bound, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_horizon, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(hamming_distance, m)?)?;
    m.add_function(wrap_pyfunction!(unident_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(critical_sparsity, m)?)?;
    m.add_function(wrap_pyfunction!(expected_kernel_distance, m)?)?;
    m.add_function(wrap_pyfunction!(lambert_w0, m)?)?;
    m.add_function(wrap_pyfunction!(welch_one_sided, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
