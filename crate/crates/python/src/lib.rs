//! Python bindings for `polycentroid`.

use polycentroid::{analysis, geometry, maxent, model, saddle, sampler, Error};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        Error::Io { .. } => PyOSError::new_err(msg),
        e if e.is_numerical() => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn options(max_iterations: usize, tol: f64, damping: f64) -> saddle::SolverOptions {
    saddle::SolverOptions {
        max_iterations,
        residual_tolerance: tol,
        damping,
        initial_multipliers: None,
    }
}

/// Linear constraints `Σ_i f_ji p_i = 1` on `n_states` probabilities.
#[pyclass(name = "ConstraintSet", module = "polycentroid_py", frozen)]
struct PyConstraintSet {
    inner: model::ConstraintSet,
}

#[pymethods]
impl PyConstraintSet {
    /// With `lenient=True` only structural problems are rejected, so redundant
    /// rows reach the solvers and fail there.
    #[new]
    #[pyo3(signature = (n_states, rows, lenient = false))]
    fn new(n_states: usize, rows: Vec<Vec<f64>>, lenient: bool) -> PyResult<Self> {
        let inner = if lenient {
            model::ConstraintSet::new_lenient(n_states, rows)
        } else {
            model::ConstraintSet::new(n_states, rows)
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_constraints(&self) -> usize {
        self.inner.n_constraints()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.to_rows()
    }

    /// `|Σ p − 1|` followed by `|f_j · p − 1|` for each row.
    fn residuals(&self, p: Vec<f64>) -> PyResult<Vec<f64>> {
        if p.len() != self.inner.n_states() {
            return Err(to_py(Error::LengthMismatch(p.len(), self.inner.n_states())));
        }
        Ok(self.inner.residuals(&p))
    }

    fn __repr__(&self) -> String {
        format!(
            "ConstraintSet(n_states={}, n_constraints={})",
            self.inner.n_states(),
            self.inner.n_constraints()
        )
    }
}

#[pyclass(name = "SaddlePoint", module = "polycentroid_py", frozen, get_all)]
struct PySaddlePoint {
    m_star: f64,
    lambda_star: Vec<f64>,
    residual_norm: f64,
    iterations: usize,
}

impl From<model::SaddlePoint> for PySaddlePoint {
    fn from(s: model::SaddlePoint) -> Self {
        Self {
            m_star: s.m_star,
            lambda_star: s.lambda_star,
            residual_norm: s.residual_norm,
            iterations: s.iterations,
        }
    }
}

impl PySaddlePoint {
    fn to_core(&self) -> model::SaddlePoint {
        model::SaddlePoint {
            m_star: self.m_star,
            lambda_star: self.lambda_star.clone(),
            residual_norm: self.residual_norm,
            iterations: self.iterations,
        }
    }
}

#[pyclass(name = "MaxEntSolution", module = "polycentroid_py", frozen, get_all)]
struct PyMaxEnt {
    multipliers: Vec<f64>,
    log_norm: f64,
    distribution: Vec<f64>,
    entropy: f64,
    residual_norm: f64,
    iterations: usize,
}

#[pyclass(name = "SampleStats", module = "polycentroid_py", frozen, get_all)]
struct PySampleStats {
    n_samples: u64,
    mean: Vec<f64>,
    variance: Vec<f64>,
    second_moment: Vec<f64>,
    mean_std_error: Vec<f64>,
    variance_std_error: Vec<f64>,
    seed: u64,
    n_chains: u64,
}

#[pyclass(name = "GeometrySummary", module = "polycentroid_py", frozen, get_all)]
struct PyGeometry {
    widths: Vec<f64>,
    log_volume: f64,
    log_volume_bound: f64,
    volume_deficit: f64,
    strength_ratio: Option<f64>,
    regime: String,
}

#[pyfunction]
#[pyo3(signature = (constraints, max_iterations = 200, tol = 1e-12, damping = 0.5))]
fn solve_saddle(
    constraints: &PyConstraintSet,
    max_iterations: usize,
    tol: f64,
    damping: f64,
) -> PyResult<PySaddlePoint> {
    saddle::solve_saddle(&constraints.inner, &options(max_iterations, tol, damping))
        .map(Into::into)
        .map_err(to_py)
}

#[pyfunction]
fn centroid_first_order(
    constraints: &PyConstraintSet,
    saddle: &PySaddlePoint,
) -> PyResult<Vec<f64>> {
    saddle::centroid_first_order(&constraints.inner, &saddle.to_core())
        .map(|p| p.into_vec())
        .map_err(to_py)
}

#[pyfunction]
fn centroid_second_order(
    constraints: &PyConstraintSet,
    saddle: &PySaddlePoint,
) -> PyResult<Vec<f64>> {
    saddle::centroid_second_order(&constraints.inner, &saddle.to_core())
        .map(|c| c.distribution.into_vec())
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (constraints, max_iterations = 200, tol = 1e-12, damping = 0.5))]
fn solve_maxent(
    constraints: &PyConstraintSet,
    max_iterations: usize,
    tol: f64,
    damping: f64,
) -> PyResult<PyMaxEnt> {
    let me = maxent::solve_maxent(&constraints.inner, &options(max_iterations, tol, damping))
        .map_err(to_py)?;
    Ok(PyMaxEnt {
        multipliers: me.multipliers,
        log_norm: me.log_norm,
        distribution: me.distribution.into_vec(),
        entropy: me.entropy,
        residual_norm: me.residual_norm,
        iterations: me.iterations,
    })
}

#[pyfunction]
fn entropy(p: Vec<f64>) -> PyResult<f64> {
    let p = model::ProbabilityVector::new(p).map_err(to_py)?;
    Ok(maxent::entropy(&p))
}

/// Hit-and-run over the solution set, started from the first-order centroid.
#[pyfunction]
#[pyo3(signature = (constraints, n_steps, seed, burn_in = 10_000, thinning = 10, chains = 1))]
fn hit_and_run(
    py: Python<'_>,
    constraints: &PyConstraintSet,
    n_steps: u64,
    seed: u64,
    burn_in: u64,
    thinning: u64,
    chains: u64,
) -> PyResult<PySampleStats> {
    let params = sampler::WalkParams {
        n_steps,
        seed,
        burn_in,
        thinning,
    };
    let cs = &constraints.inner;
    let stats = py
        .detach(|| {
            params.check()?;
            let ch = sampler::chart(cs, None)?;
            sampler::run_chains(&ch, params, chains)
        })
        .map_err(to_py)?;
    Ok(PySampleStats {
        n_samples: stats.n_samples,
        variance: stats.variance(),
        mean: stats.mean,
        second_moment: stats.second_moment,
        mean_std_error: stats.mean_std_error,
        variance_std_error: stats.variance_std_error,
        seed: stats.seed,
        n_chains: stats.n_chains,
    })
}

#[pyfunction]
fn segment_centroid(constraints: &PyConstraintSet) -> PyResult<Vec<f64>> {
    sampler::segment_centroid(&constraints.inner)
        .map(|p| p.into_vec())
        .map_err(to_py)
}

#[pyfunction]
fn classify_strength(constraints: &PyConstraintSet, p_c1: Vec<f64>) -> PyResult<PyGeometry> {
    let p = model::ProbabilityVector::new(p_c1).map_err(to_py)?;
    if p.len() != constraints.inner.n_states() {
        return Err(to_py(Error::LengthMismatch(
            p.len(),
            constraints.inner.n_states(),
        )));
    }
    let g = geometry::classify_strength(&constraints.inner, &p);
    Ok(PyGeometry {
        widths: g.widths,
        log_volume: g.log_volume,
        log_volume_bound: g.log_volume_bound,
        volume_deficit: g.volume_deficit,
        strength_ratio: g.strength_ratio,
        regime: g.regime.as_str().to_string(),
    })
}

#[pyfunction]
#[pyo3(signature = (n, c, sigma, seed, feasible = false))]
fn gen_gaussian_constraints(
    n: usize,
    c: usize,
    sigma: f64,
    seed: u64,
    feasible: bool,
) -> PyResult<PyConstraintSet> {
    let inner = if feasible {
        analysis::gen_feasible_constraints(n, c, sigma, seed).map(|g| g.constraints)
    } else {
        analysis::gen_gaussian_constraints(n, c, sigma, seed)
    }
    .map_err(to_py)?;
    Ok(PyConstraintSet { inner })
}

#[pyfunction]
fn leading_order_estimate(constraints: &PyConstraintSet) -> PyResult<Vec<f64>> {
    analysis::leading_order_estimate(&constraints.inner).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (path, lenient = false))]
fn read_constraints(path: std::path::PathBuf, lenient: bool) -> PyResult<PyConstraintSet> {
    let inner = if lenient {
        model::read_constraints_lenient(&path)
    } else {
        model::read_constraints(&path)
    }
    .map_err(to_py)?;
    Ok(PyConstraintSet { inner })
}

#[pyfunction]
fn write_constraints(constraints: &PyConstraintSet, path: std::path::PathBuf) -> PyResult<()> {
    model::write_constraints(&constraints.inner, &path, None).map_err(to_py)
}

#[pymodule]
fn polycentroid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyConstraintSet>()?;
    m.add_class::<PySaddlePoint>()?;
    m.add_class::<PyMaxEnt>()?;
    m.add_class::<PySampleStats>()?;
    m.add_class::<PyGeometry>()?;
    m.add_function(wrap_pyfunction!(solve_saddle, m)?)?;
    m.add_function(wrap_pyfunction!(centroid_first_order, m)?)?;
    m.add_function(wrap_pyfunction!(centroid_second_order, m)?)?;
    m.add_function(wrap_pyfunction!(solve_maxent, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(hit_and_run, m)?)?;
    m.add_function(wrap_pyfunction!(segment_centroid, m)?)?;
    m.add_function(wrap_pyfunction!(classify_strength, m)?)?;
    m.add_function(wrap_pyfunction!(gen_gaussian_constraints, m)?)?;
    m.add_function(wrap_pyfunction!(leading_order_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(read_constraints, m)?)?;
    m.add_function(wrap_pyfunction!(write_constraints, m)?)?;
    Ok(())
}
