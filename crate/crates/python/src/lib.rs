//! Python module `elmg`: a thin layer over the core numerics.

// Triggered inside the pyfunction macro expansion.
#![allow(clippy::useless_conversion)]

use elmg_core::complexity::nielsen_complexity;
use elmg_core::dynamics::{FiniteModel, FotocSpec, Generator};
use elmg_core::effective::Phase;
use elmg_core::geometry::{
    curvature_spacing, metric_first_order, metric_zeroth_order, MetricConvention, MetricModel,
    ParameterPoint,
};
use elmg_core::spin_model::{qpt_lines, stationary_point};
use elmg_core::{BlochPoint, Error, ModelParams};
use pyo3::exceptions::{PyArithmeticError, PyMemoryError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::PhaseDomain { .. } | Error::Contract(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Resource(_) => PyMemoryError::new_err(e.to_string()),
        _ => PyArithmeticError::new_err(e.to_string()),
    }
}

fn phase(name: &str) -> PyResult<Phase> {
    Phase::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown phase {name:?}")))
}

fn generator(name: &str) -> PyResult<Generator> {
    Ok(match name {
        "Q" | "q" => Generator::Q,
        "P" | "p" => Generator::P,
        "Jx" | "jx" => Generator::Jx,
        "Jy" | "jy" => Generator::Jy,
        "Jz" | "jz" => Generator::Jz,
        _ => return Err(PyValueError::new_err(format!("unknown generator {name:?}"))),
    })
}

/// FOTOC `F(t)` at the given times.
///
/// The initial coherent state is stationary point `point` (1-4) unless
/// `theta` and `phi` are both given.
#[pyfunction]
#[pyo3(signature = (j, omega_x, xi_y, epsilon, times, generator="Q", point=1, theta=None, phi=None))]
#[allow(clippy::too_many_arguments)]
fn fotoc(
    j: f64,
    omega_x: f64,
    xi_y: f64,
    epsilon: f64,
    times: Vec<f64>,
    generator: &str,
    point: u8,
    theta: Option<f64>,
    phi: Option<f64>,
) -> PyResult<Vec<f64>> {
    let g = self::generator(generator)?;
    let p = ModelParams::new(omega_x, xi_y, j, epsilon).map_err(py_err)?;
    let initial = match (theta, phi) {
        (Some(th), Some(ph)) => BlochPoint::new(th, ph).map_err(py_err)?,
        (None, None) => stationary_point(&p, point).map_err(py_err)?.point,
        _ => return Err(PyValueError::new_err("give both theta and phi, or neither")),
    };
    let model = FiniteModel::new(p).map_err(py_err)?;
    let series = model
        .fotoc(&FotocSpec::new(g, epsilon, initial), &times)
        .map_err(py_err)?;
    Ok(series.re())
}

/// Nielsen complexity of the FOTOC operator at time `t`, normalized by `ε²`.
#[pyfunction]
#[pyo3(signature = (omega_x, xi_y, t, phase="symmetric", j=100.0))]
fn complexity(omega_x: f64, xi_y: f64, t: f64, phase: &str, j: f64) -> PyResult<f64> {
    let p = ModelParams::new(omega_x, xi_y, j, 1.0).map_err(py_err)?;
    nielsen_complexity(self::phase(phase)?, &p, t).map_err(py_err)
}

/// Closed-form 3x3 metric over `(Ω_x, ξ_y, t)` to first order in `ε`.
#[pyfunction]
#[pyo3(signature = (omega_x, xi_y, t, epsilon, phase="symmetric", j=100.0))]
fn metric(
    omega_x: f64,
    xi_y: f64,
    t: f64,
    epsilon: f64,
    phase: &str,
    j: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let ph = self::phase(phase)?;
    let point = ParameterPoint::new(omega_x, xi_y, t);
    let g = metric_zeroth_order(ph, &point, j).map_err(py_err)?
        + metric_first_order(ph, &point, j, epsilon).map_err(py_err)?;
    Ok(g.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Scalar curvature of the `(Ω_x, ξ_y)` metric at fixed `t`.
///
/// The stencil spacing defaults to a value well below the distance to the
/// nearest transition line; the stencil must not straddle it.
#[pyfunction]
#[pyo3(signature = (omega_x, xi_y, t, epsilon, phase="symmetric", j=100.0, h=None))]
#[allow(clippy::too_many_arguments)]
fn curvature(
    omega_x: f64,
    xi_y: f64,
    t: f64,
    epsilon: f64,
    phase: &str,
    j: f64,
    h: Option<f64>,
) -> PyResult<f64> {
    let ph = self::phase(phase)?;
    let p = ModelParams::new(omega_x, xi_y, j, epsilon).map_err(py_err)?;
    let lines = qpt_lines(&p);
    let line = if ph == Phase::Ground {
        lines.gs
    } else {
        lines.es
    };
    let d = (xi_y - line).abs();
    let h = h.unwrap_or_else(|| curvature_spacing(d).min(2e-3 * d));
    let model = MetricModel::standard(ph, j, epsilon, t, MetricConvention::Raw).map_err(py_err)?;
    elmg_core::geometry::ricci_at(&model, omega_x, xi_y, h).map_err(py_err)
}

/// Scalar curvature at distance `distance` from the phase boundary, in the
/// `(Ω_x, log distance)` chart, which stays well conditioned as `distance → 0`.
#[pyfunction]
#[pyo3(signature = (omega_x, distance, t, epsilon, phase="symmetric", j=100.0, h=0.005))]
#[allow(clippy::too_many_arguments)]
fn curvature_near_line(
    omega_x: f64,
    distance: f64,
    t: f64,
    epsilon: f64,
    phase: &str,
    j: f64,
    h: f64,
) -> PyResult<f64> {
    let model = MetricModel::standard(self::phase(phase)?, j, epsilon, t, MetricConvention::Raw)
        .map_err(py_err)?;
    elmg_core::geometry::ricci_near_line(&model, omega_x, distance, h).map_err(py_err)
}

#[pymodule]
fn elmg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(fotoc, m)?)?;
    m.add_function(wrap_pyfunction!(complexity, m)?)?;
    m.add_function(wrap_pyfunction!(metric, m)?)?;
    m.add_function(wrap_pyfunction!(curvature, m)?)?;
    m.add_function(wrap_pyfunction!(curvature_near_line, m)?)?;
    Ok(())
}
