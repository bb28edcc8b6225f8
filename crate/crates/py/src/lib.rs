//! Python bindings for the oswi library: the activation catalog,
//! sigma* calibration, fixed-point dynamics, signal-propagation
//! simulators, and layer initializers.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use oswi::activations::{check_odd_sigmoid, ActivationSpec, SamplingPlan};
use oswi::initializers::{InitKind, InitScheme};
use oswi::propagation::X0Dist;
use oswi::{calibration, dynamics, propagation};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// An odd-sigmoid activation, parsed from the CLI grammar
/// (`tanh`, `erf`, `arctan`, `arctann`, `gd`, `softsign:<k>`,
/// `scale:<alpha>:<spec>`, `sum:<c1>*<spec1>+...`).
#[pyclass(name = "Activation")]
#[derive(Clone)]
struct PyActivation {
    inner: ActivationSpec,
}

#[pymethods]
impl PyActivation {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Self { inner: ActivationSpec::parse(spec).map_err(value_err)? })
    }

    fn eval(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn deriv(&self, x: f64) -> f64 {
        self.inner.deriv(x)
    }

    fn omega(&self) -> f64 {
        self.inner.omega()
    }

    fn supremum_bound(&self) -> f64 {
        self.inner.supremum_bound()
    }

    /// Numerical odd-sigmoid membership check on a sampled grid.
    #[pyo3(signature = (x_max=50.0, points=2001))]
    fn check(&self, py: Python<'_>, x_max: f64, points: usize) -> PyResult<Py<PyDict>> {
        let report = check_odd_sigmoid(&self.inner, &SamplingPlan { x_max, points })
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("is_member", report.is_member())?;
        d.set_item("odd_symmetry", report.odd_symmetry)?;
        d.set_item("bounded", report.bounded)?;
        d.set_item("strictly_increasing", report.strictly_increasing)?;
        d.set_item("slope_decreasing", report.slope_decreasing)?;
        d.set_item("sup_estimate", report.sup_estimate)?;
        d.set_item("slope_at_xmax", report.slope_at_xmax)?;
        Ok(d.into())
    }

    fn __repr__(&self) -> String {
        format!("Activation(\"{}\")", self.inner)
    }
}

/// sigma*(p, depth, omega): the closed-form noise scale hitting the
/// target negative rate p at the given depth.
#[pyfunction]
fn sigma_star(p: f64, depth: usize, omega: f64) -> PyResult<f64> {
    calibration::sigma_star(p, depth, omega).map_err(value_err)
}

/// Negative rate of the scalar surrogate at depth for noise sigma.
#[pyfunction]
fn negative_rate(sigma: f64, depth: usize, omega: f64) -> f64 {
    calibration::negative_rate(sigma, depth, omega)
}

/// The omega-scaled Adam band (1e-5 omega, 1e-3 omega).
#[pyfunction]
fn lr_band(omega: f64) -> (f64, f64) {
    calibration::lr_band(omega)
}

#[pyfunction]
fn std_normal_cdf(x: f64) -> f64 {
    calibration::std_normal_cdf(x)
}

#[pyfunction]
fn std_normal_quantile(q: f64) -> PyResult<f64> {
    calibration::std_normal_quantile(q).map_err(value_err)
}

/// Nonnegative fixed point of f(a x) = x: (regime, xi, residual).
#[pyfunction]
fn solve_xi(activation: &PyActivation, a: f64) -> PyResult<(String, f64, f64)> {
    let fp = dynamics::solve_xi(&activation.inner, a).map_err(value_err)?;
    let regime = match fp.regime {
        dynamics::Regime::SubCritical => "subcritical",
        dynamics::Regime::SuperCritical => "supercritical",
    };
    Ok((regime.to_string(), fp.xi, fp.residual))
}

/// Orbit of x_{n+1} = f(a x_n), n+1 values starting at x0.
#[pyfunction]
fn iterate(activation: &PyActivation, a: f64, x0: f64, n: usize) -> Vec<f64> {
    dynamics::iterate(&activation.inner, a, x0, n).values
}

/// Monte-Carlo scalar chains; returns per-depth negative rates, the
/// last-layer spread, and the final values.
#[pyfunction]
#[pyo3(signature = (activation, sigma, depth, chains, x0=0.1, seed=0))]
fn scalar_chain(
    py: Python<'_>,
    activation: &PyActivation,
    sigma: f64,
    depth: usize,
    chains: usize,
    x0: f64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let trace = propagation::scalar_chain(&activation.inner, sigma, depth, chains, x0, seed);
    trace_to_dict(py, &trace)
}

/// Wide feedforward chain under a named scheme
/// ("proposed" | "xavier" | "he" | "orthogonal").
#[pyfunction]
#[pyo3(signature = (activation, init, width, depth, p=0.3, x0=0.1, seed=0))]
#[allow(clippy::too_many_arguments)]
fn ffnn_chain(
    py: Python<'_>,
    activation: &PyActivation,
    init: &str,
    width: usize,
    depth: usize,
    p: f64,
    x0: f64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let omega = activation.inner.omega();
    let kind = match init {
        "proposed" => {
            let ss = calibration::sigma_star(p, depth, omega).map_err(value_err)?;
            InitKind::Proposed { sigma_star: ss, omega }
        }
        "xavier" => InitKind::XavierUniform,
        "he" => InitKind::HeNormal,
        "orthogonal" => InitKind::Orthogonal,
        other => return Err(value_err(format!("unknown init `{other}`"))),
    };
    let scheme = InitScheme::new(kind, seed);
    let trace = propagation::ffnn_chain(
        &activation.inner,
        &scheme,
        width,
        depth,
        X0Dist::PositiveConstant(x0),
        seed,
    );
    trace_to_dict(py, &trace)
}

fn trace_to_dict(py: Python<'_>, trace: &propagation::PropagationTrace) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("depth", trace.depth)?;
    d.set_item("width", trace.width)?;
    d.set_item("negative_rate_per_depth", trace.negative_rate_per_depth.clone())?;
    d.set_item("last_layer_values", trace.last_layer_values.clone())?;
    d.set_item("spread", trace.spread)?;
    Ok(d.into())
}

/// Normalized histogram entropy of values over [lo, hi].
#[pyfunction]
fn spread_metric(values: Vec<f64>, bins: usize, lo: f64, hi: f64) -> PyResult<f64> {
    propagation::spread_metric(&values, bins, (lo, hi)).map_err(value_err)
}

/// One initialized layer as nested lists.
#[pyfunction]
#[pyo3(signature = (init, rows, cols, omega=1.0, sigma_star=0.0, seed=0, layer=0))]
fn init_layer(
    init: &str,
    rows: usize,
    cols: usize,
    omega: f64,
    sigma_star: f64,
    seed: u64,
    layer: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let kind = match init {
        "proposed" => InitKind::Proposed { sigma_star, omega },
        "xavier" => InitKind::XavierUniform,
        "he" => InitKind::HeNormal,
        "orthogonal" => InitKind::Orthogonal,
        other => return Err(value_err(format!("unknown init `{other}`"))),
    };
    let w = InitScheme::new(kind, seed).init_layer(rows, cols, layer);
    Ok(w.rows().into_iter().map(|r| r.to_vec()).collect())
}

#[pymodule]
fn oswi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyActivation>()?;
    m.add_function(wrap_pyfunction!(sigma_star, m)?)?;
    m.add_function(wrap_pyfunction!(negative_rate, m)?)?;
    m.add_function(wrap_pyfunction!(lr_band, m)?)?;
    m.add_function(wrap_pyfunction!(std_normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(std_normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(solve_xi, m)?)?;
    m.add_function(wrap_pyfunction!(iterate, m)?)?;
    m.add_function(wrap_pyfunction!(scalar_chain, m)?)?;
    m.add_function(wrap_pyfunction!(ffnn_chain, m)?)?;
    m.add_function(wrap_pyfunction!(spread_metric, m)?)?;
    m.add_function(wrap_pyfunction!(init_layer, m)?)?;
    Ok(())
}
