//! Python bindings: the main parameter types plus rate evaluation,
//! optimization, sweeps and Monte Carlo validation.
//!
//! Build with `cargo build --release -p cka-python`; the resulting
//! `libcka_py.so` imports as the module `cka_py` (see python/smoke_test.py).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cka_core as core;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn finite(name: &str, x: f64) -> PyResult<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(PyValueError::new_err(format!("{name}: non-finite input")))
    }
}

/// Fixed experimental constants; defaults are the reference parameter set.
#[pyclass(name = "SystemParams", from_py_object)]
#[derive(Clone)]
struct PySystemParams(core::SystemParams);

#[pymethods]
impl PySystemParams {
    #[new]
    #[pyo3(signature = (eta_d=0.56, p_d=1e-8, e_d_x=0.035, alpha=0.167, f=1.1, delta=std::f64::consts::PI/18.0))]
    fn new(eta_d: f64, p_d: f64, e_d_x: f64, alpha: f64, f: f64, delta: f64) -> PyResult<Self> {
        core::SystemParams::new(eta_d, p_d, e_d_x, alpha, f, delta)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn eta_d(&self) -> f64 {
        self.0.eta_d
    }
    #[getter]
    fn p_d(&self) -> f64 {
        self.0.p_d
    }
    #[getter]
    fn e_d_x(&self) -> f64 {
        self.0.e_d_x
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn f(&self) -> f64 {
        self.0.f
    }
    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta
    }

    /// Per-arm transmittance eta_d * 10^(-alpha L / 20).
    fn sqrt_eta(&self, l_km: f64) -> PyResult<f64> {
        self.0.sqrt_eta(l_km).map_err(err)
    }

    /// Phase post-selection probability 2 delta / pi.
    fn p_pm(&self) -> f64 {
        self.0.p_pm()
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemParams(eta_d={}, p_d={}, e_d_x={}, alpha={}, f={}, delta={})",
            self.0.eta_d, self.0.p_d, self.0.e_d_x, self.0.alpha, self.0.f, self.0.delta
        )
    }
}

/// Free protocol parameters (t, mu, nu).
#[pyclass(name = "ProtocolParams", from_py_object)]
#[derive(Clone)]
struct PyProtocolParams(core::ProtocolParams);

#[pymethods]
impl PyProtocolParams {
    #[new]
    fn new(t: f64, mu: f64, nu: f64) -> PyResult<Self> {
        core::ProtocolParams::new(t, mu, nu).map(Self).map_err(err)
    }

    #[getter]
    fn t(&self) -> f64 {
        self.0.t
    }
    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }
    #[getter]
    fn nu(&self) -> f64 {
        self.0.nu
    }

    fn __repr__(&self) -> String {
        format!(
            "ProtocolParams(t={}, mu={}, nu={})",
            self.0.t, self.0.mu, self.0.nu
        )
    }
}

/// One evaluated rate point with its diagnostics.
#[pyclass(name = "RatePoint", from_py_object)]
#[derive(Clone)]
struct PyRatePoint(core::RatePoint);

#[pymethods]
impl PyRatePoint {
    #[getter]
    fn l_km(&self) -> f64 {
        self.0.l_km
    }
    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }
    #[getter]
    fn r_raw(&self) -> f64 {
        self.0.diag.r_raw
    }
    #[getter]
    fn t(&self) -> f64 {
        self.0.t
    }
    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }
    #[getter]
    fn nu(&self) -> f64 {
        self.0.nu
    }
    #[getter]
    fn e_z(&self) -> f64 {
        self.0.diag.e_z
    }
    #[getter]
    fn e1_x(&self) -> f64 {
        self.0.diag.e1_x
    }
    #[getter]
    fn y1(&self) -> f64 {
        self.0.diag.y1
    }
    #[getter]
    fn q_z(&self) -> f64 {
        self.0.diag.q_z_total
    }
    #[getter]
    fn lambda_ec(&self) -> f64 {
        self.0.diag.lambda_ec
    }
    #[getter]
    fn flag(&self) -> String {
        self.0.flag.to_string()
    }
    #[getter]
    fn protocol(&self) -> String {
        self.0.kind.to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "RatePoint(L={} km, R={:e}, t={}, mu={}, nu={}, flag={})",
            self.0.l_km, self.0.r, self.0.t, self.0.mu, self.0.nu, self.0.flag
        )
    }
}

/// Optimizer settings (population, generations, restarts, seed, tolerance).
#[pyclass(name = "OptimizerConfig", from_py_object)]
#[derive(Clone)]
struct PyOptimizerConfig(core::OptimizerConfig);

#[pymethods]
impl PyOptimizerConfig {
    #[new]
    #[pyo3(signature = (population=64, generations=200, restarts=3, seed=42, tolerance=1e-10, qber="marginal"))]
    fn new(
        population: usize,
        generations: usize,
        restarts: usize,
        seed: u64,
        tolerance: f64,
        qber: &str,
    ) -> PyResult<Self> {
        Ok(Self(core::OptimizerConfig {
            population_size: population,
            generations,
            restarts,
            seed,
            tolerance,
            qber: core::QberConvention::parse(qber).map_err(err)?,
            ..core::OptimizerConfig::default()
        }))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
}

fn parse_kind(kind: &str) -> PyResult<core::ProtocolKind> {
    match kind {
        "practical" => Ok(core::ProtocolKind::Practical),
        "single_photon" | "single-photon" => Ok(core::ProtocolKind::SinglePhoton),
        _ => Err(PyValueError::new_err(format!(
            "unknown protocol {kind:?}: expected practical|single_photon"
        ))),
    }
}

/// Key rate of the practical weak-coherent protocol at one distance.
#[pyfunction]
fn practical_rate(
    sys: &PySystemParams,
    params: &PyProtocolParams,
    l_km: f64,
) -> PyResult<PyRatePoint> {
    core::practical_rate(&sys.0, &params.0, l_km)
        .map(PyRatePoint)
        .map_err(err)
}

/// Key rate of the ideal single-photon protocol at one distance.
#[pyfunction]
fn single_photon_rate(sys: &PySystemParams, t: f64, l_km: f64) -> PyResult<PyRatePoint> {
    core::single_photon_rate(&sys.0, t, l_km)
        .map(PyRatePoint)
        .map_err(err)
}

/// Maximize the practical key rate over (t, mu, nu). Deterministic per seed.
#[pyfunction]
#[pyo3(signature = (sys, l_km, config=None))]
fn optimize_at_distance(
    sys: &PySystemParams,
    l_km: f64,
    config: Option<&PyOptimizerConfig>,
) -> PyResult<PyRatePoint> {
    let cfg = config.map(|c| c.0).unwrap_or_default();
    core::optimize_at_distance(&sys.0, &cfg, l_km)
        .map(|r| PyRatePoint(r.best))
        .map_err(err)
}

/// One optimized rate point per distance (ascending grid).
#[pyfunction]
#[pyo3(signature = (sys, distances, kind="practical", config=None))]
fn sweep(
    sys: &PySystemParams,
    distances: Vec<f64>,
    kind: &str,
    config: Option<&PyOptimizerConfig>,
) -> PyResult<Vec<PyRatePoint>> {
    let cfg = config.map(|c| c.0).unwrap_or_default();
    core::sweep(&sys.0, &cfg, &distances, parse_kind(kind)?)
        .map(|pts| pts.into_iter().map(PyRatePoint).collect())
        .map_err(err)
}

/// (name, analytic, estimate, std_error, z, pass)
type ValidationTuple = (String, f64, f64, f64, f64, bool);

/// Monte Carlo vs analytic cross-check, one tuple per compared quantity.
#[pyfunction]
#[pyo3(signature = (sys, params, l_km, trials=1_000_000, seed=1))]
fn validate_point(
    sys: &PySystemParams,
    params: &PyProtocolParams,
    l_km: f64,
    trials: u64,
    seed: u64,
) -> PyResult<Vec<ValidationTuple>> {
    core::compare_with_analytic(&sys.0, &params.0, l_km, trials, seed)
        .map(|rows| {
            rows.into_iter()
                .map(|r| (r.name, r.analytic, r.estimate, r.std_error, r.z, r.pass))
                .collect()
        })
        .map_err(err)
}

/// True single-photon X-basis yield and error rate from the conditioned
/// pulse-level simulation: returns (y1_x, e1_x, clicks).
#[pyfunction]
#[pyo3(signature = (sys, l_km, trials=1_000_000, seed=1))]
fn simulate_single_photon(
    sys: &PySystemParams,
    l_km: f64,
    trials: u64,
    seed: u64,
) -> PyResult<(f64, f64, u64)> {
    core::simulate_single_photon_component_conditioned(&sys.0, l_km, trials, seed)
        .map(|r| (r.y1_x.estimate, r.e1_x.estimate, r.clicks))
        .map_err(err)
}

/// Z-basis pair gain Q^z_{k_a k_b}: exactly one of the direct detectors clicks.
#[pyfunction]
fn gain_z_pair(sys: &PySystemParams, sqrt_eta: f64, k_a: f64, k_b: f64) -> PyResult<f64> {
    core::gain_z_pair(&sys.0, sqrt_eta, k_a, k_b).map_err(err)
}

/// Phase-averaged X-basis pair gain Q^x_{k_a k_b}.
#[pyfunction]
fn gain_x_pair(sys: &PySystemParams, sqrt_eta: f64, k_a: f64, k_b: f64) -> PyResult<f64> {
    core::gain_x_pair(&sys.0, sqrt_eta, k_a, k_b).map_err(err)
}

/// Decoy lower bound on the joint single-photon yield. `q_mu`, `q_nu`, `q_0`
/// are the summed one-sided gains Q_k = Q_{k0} + Q_{0k}.
#[pyfunction]
fn y1_lower_bound(q_mu: f64, q_nu: f64, q_0: f64, mu: f64, nu: f64) -> PyResult<f64> {
    core::y1_lower_bound(q_mu, q_nu, q_0, mu, nu)
        .map(|(v, _clamped)| v)
        .map_err(err)
}

/// Decoy upper bound on the single-photon X-basis error rate, clamped to
/// [0, 0.5]; returns (bounded, raw).
#[pyfunction]
fn e1x_upper_bound(
    e_pm: f64,
    q_pm: f64,
    y0_x: f64,
    y1_x: f64,
    nu: f64,
    p_pm: f64,
) -> PyResult<(f64, f64)> {
    core::e1x_upper_bound(e_pm, q_pm, y0_x, y1_x, nu, p_pm)
        .map(|b| (b.bounded, b.raw))
        .map_err(err)
}

#[pyfunction]
fn erf(x: f64) -> PyResult<f64> {
    Ok(core::special::erf(finite("erf", x)?))
}

#[pyfunction]
fn erfi(x: f64) -> PyResult<f64> {
    Ok(core::special::erfi(finite("erfi", x)?))
}

#[pyfunction]
fn bessel_i0(x: f64) -> PyResult<f64> {
    Ok(core::special::bessel_i0(finite("bessel_i0", x)?))
}

#[pyfunction]
fn binary_entropy(x: f64) -> PyResult<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(PyValueError::new_err("binary_entropy: x outside [0, 1]"));
    }
    Ok(core::special::binary_entropy(x))
}

#[pymodule]
fn cka_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemParams>()?;
    m.add_class::<PyProtocolParams>()?;
    m.add_class::<PyRatePoint>()?;
    m.add_class::<PyOptimizerConfig>()?;
    m.add_function(wrap_pyfunction!(practical_rate, m)?)?;
    m.add_function(wrap_pyfunction!(single_photon_rate, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_at_distance, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(validate_point, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_single_photon, m)?)?;
    m.add_function(wrap_pyfunction!(gain_z_pair, m)?)?;
    m.add_function(wrap_pyfunction!(gain_x_pair, m)?)?;
    m.add_function(wrap_pyfunction!(y1_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(e1x_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(erf, m)?)?;
    m.add_function(wrap_pyfunction!(erfi, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_i0, m)?)?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    Ok(())
}
