//! Python bindings: the bounded mixture model, feature extraction and
//! reconstruction, and the controller evaluation loop.
//!
//! Matrices cross the boundary as plain lists of lists; reports cross as
//! JSON strings so the Python side can `json.loads` them.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ldc_core::bgm::{fit_em, select_components, Bounds, BoundedGmm, EmConfig};
use ldc_core::controller::{ControlOutcome, ControllerParams, SimOptions};
use ldc_core::error::ErrorKind;
use ldc_core::evaluation::{evaluate_batch, EvalConfig};
use ldc_core::features::{
    extract_features, filter_event, DepartureEvent, FilterDecision, RejectReason,
    TrajectorySample,
};
use ldc_core::io::{ModelFile, ModelMeta};
use ldc_core::qmc::QmcConfig;
use ldc_core::vehicle::VehicleParams;
use ldc_core::{FeatureVector, Side};

fn to_py_err(e: ldc_core::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Numerical => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_side(s: &str) -> PyResult<Side> {
    Side::parse(s).ok_or_else(|| PyValueError::new_err(format!("invalid side `{s}`")))
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("ragged data matrix"));
    }
    let mut m = DMatrix::zeros(rows.len(), d);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn event_from_arrays(
    event_id: &str,
    side: Side,
    t: Vec<f64>,
    y: Vec<f64>,
    v: Vec<f64>,
    c: Vec<f64>,
) -> PyResult<DepartureEvent> {
    let n = t.len();
    if y.len() != n || v.len() != n || c.len() != n {
        return Err(PyValueError::new_err("t, y, v, c must have equal length"));
    }
    let samples = (0..n)
        .map(|i| TrajectorySample {
            t: t[i],
            y: y[i],
            v: v[i],
            c: c[i],
        })
        .collect();
    DepartureEvent::new(event_id, side, samples).map_err(to_py_err)
}

fn feature_dict<'py>(py: Python<'py>, f: &FeatureVector) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (name, value) in FeatureVector::NAMES.iter().zip(f.to_array()) {
        d.set_item(name, value)?;
    }
    Ok(d)
}

fn feature_from_list(xi: Vec<f64>) -> PyResult<FeatureVector> {
    let arr: [f64; 8] = xi
        .try_into()
        .map_err(|_| PyValueError::new_err("feature vector must have 8 components"))?;
    Ok(FeatureVector::from_array(arr))
}

/// A fitted bounded Gaussian mixture.
#[pyclass(name = "BgmModel")]
struct PyBgmModel {
    inner: BoundedGmm,
}

#[pymethods]
impl PyBgmModel {
    /// Fit by EM. `data` is a list of 8-component rows (or any fixed
    /// dimension matching the bounds). Returns (model, report_dict).
    #[staticmethod]
    #[pyo3(signature = (data, k, lower, upper, seed=0, max_iter=500, tol=1e-6))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        data: Vec<Vec<f64>>,
        k: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        seed: u64,
        max_iter: usize,
        tol: f64,
    ) -> PyResult<(Self, Py<PyDict>)> {
        let m = matrix_from_rows(data)?;
        let bounds = Bounds::new(lower, upper).map_err(to_py_err)?;
        let cfg = EmConfig {
            max_iter,
            tol,
            seed,
            ..EmConfig::default()
        };
        let (model, report) = fit_em(&m, k, &bounds, &cfg).map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("loglik", report.loglik)?;
        d.set_item("iterations", report.iterations)?;
        d.set_item("converged", report.converged)?;
        d.set_item("trace", report.trace)?;
        Ok((PyBgmModel { inner: model }, d.into()))
    }

    /// BIC scan over candidate component counts; returns
    /// (best_k, curve) with one dict per K.
    #[staticmethod]
    #[pyo3(signature = (data, lower, upper, ks, seed=0))]
    fn select_components(
        py: Python<'_>,
        data: Vec<Vec<f64>>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        ks: Vec<usize>,
        seed: u64,
    ) -> PyResult<(usize, Vec<Py<PyDict>>)> {
        let m = matrix_from_rows(data)?;
        let bounds = Bounds::new(lower, upper).map_err(to_py_err)?;
        let cfg = EmConfig::with_seed(seed);
        let (best, curve) = select_components(&m, &bounds, &ks, &cfg).map_err(to_py_err)?;
        let mut rows = Vec::with_capacity(curve.len());
        for e in curve {
            let d = PyDict::new(py);
            d.set_item("k", e.k)?;
            d.set_item("bic", e.bic)?;
            d.set_item("loglik", e.loglik)?;
            d.set_item("converged", e.converged)?;
            d.set_item("error", e.error)?;
            rows.push(d.into());
        }
        Ok((best, rows))
    }

    /// Parse the model JSON document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let model = file.to_model(QmcConfig::default()).map_err(to_py_err)?;
        Ok(PyBgmModel { inner: model })
    }

    /// Serialize to the model JSON document.
    fn to_json(&self) -> PyResult<String> {
        let file = ModelFile::from_model(
            &self.inner,
            ModelMeta {
                seed: 0,
                data_hash: String::new(),
                loglik: None,
                bic: None,
            },
        );
        serde_json::to_string_pretty(&file).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.dim()
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn eta(&self) -> Vec<f64> {
        self.inner.mixture_weights_eta().to_vec()
    }

    fn means(&self) -> Vec<Vec<f64>> {
        (0..self.inner.k())
            .map(|j| self.inner.mean(j).iter().cloned().collect())
            .collect()
    }

    fn covariances(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.inner.k())
            .map(|j| matrix_to_rows(self.inner.covariance(j)))
            .collect()
    }

    fn lower_bounds(&self) -> Vec<f64> {
        self.inner.bounds().lower.clone()
    }

    fn upper_bounds(&self) -> Vec<f64> {
        self.inner.bounds().upper.clone()
    }

    /// Density at a point (zero outside the box).
    fn pdf(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err("wrong dimension"));
        }
        Ok(self.inner.pdf(&DVector::from_vec(x)))
    }

    fn log_likelihood(&self, data: Vec<Vec<f64>>) -> PyResult<f64> {
        let m = matrix_from_rows(data)?;
        self.inner.log_likelihood(&m).map_err(to_py_err)
    }

    fn bic(&self, data: Vec<Vec<f64>>) -> PyResult<f64> {
        let m = matrix_from_rows(data)?;
        self.inner.bic(&m).map_err(to_py_err)
    }

    /// Draw n rows; deterministic given the seed.
    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.sample(n, seed).map_err(to_py_err)?;
        Ok(matrix_to_rows(&m))
    }

    fn __repr__(&self) -> String {
        format!("BgmModel(K={}, d={})", self.inner.k(), self.inner.dim())
    }
}

/// The bundled three-component ground-truth model ("L" or "R").
#[pyfunction]
fn demo_truth_model(side: &str) -> PyResult<PyBgmModel> {
    Ok(PyBgmModel {
        inner: ldc_core::synthesis::demo_truth_model(parse_side(side)?),
    })
}

/// Consistency filter: "accept", "reject:duration", or "reject:speed".
#[pyfunction]
#[pyo3(signature = (t, y, v, c, side="R"))]
fn filter_event_arrays(
    t: Vec<f64>,
    y: Vec<f64>,
    v: Vec<f64>,
    c: Vec<f64>,
    side: &str,
) -> PyResult<String> {
    let event = event_from_arrays("py", parse_side(side)?, t, y, v, c)?;
    Ok(match filter_event(&event).map_err(to_py_err)? {
        FilterDecision::Accept => "accept".to_string(),
        FilterDecision::Reject(RejectReason::Duration) => "reject:duration".to_string(),
        FilterDecision::Reject(RejectReason::Speed) => "reject:speed".to_string(),
    })
}

/// Reduce a departure time series to its eight features.
#[pyfunction]
#[pyo3(signature = (t, y, v, c, side="R"))]
fn extract_features_arrays<'py>(
    py: Python<'py>,
    t: Vec<f64>,
    y: Vec<f64>,
    v: Vec<f64>,
    c: Vec<f64>,
    side: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let event = event_from_arrays("py", parse_side(side)?, t, y, v, c)?;
    let f = extract_features(&event).map_err(to_py_err)?;
    feature_dict(py, &f)
}

/// Rebuild a time series from a feature vector
/// [T, d_y, sigma_y, v_bar, a_bar, sigma_v, c0, delta_c].
/// Returns a dict with t, y, v, c lists and the inferred side.
#[pyfunction]
#[pyo3(signature = (xi, ts=0.05, seed=0))]
fn reconstruct_event<'py>(
    py: Python<'py>,
    xi: Vec<f64>,
    ts: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let fv = feature_from_list(xi)?;
    let event =
        ldc_core::synthesis::reconstruct_event(&fv, ts, seed, "py").map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("t", event.rel_times())?;
    d.set_item("y", event.ys())?;
    d.set_item("v", event.vs())?;
    d.set_item("c", event.cs())?;
    d.set_item("side", event.side().code())?;
    Ok(d)
}

/// Run the correction controller over one event. Returns a dict with
/// `triggered` plus the trajectory arrays.
#[pyfunction]
#[pyo3(signature = (t, y, v, c, side="R", matrix_convention="paper", offset_convention="paper"))]
#[allow(clippy::too_many_arguments)]
fn run_controlled<'py>(
    py: Python<'py>,
    t: Vec<f64>,
    y: Vec<f64>,
    v: Vec<f64>,
    c: Vec<f64>,
    side: &str,
    matrix_convention: &str,
    offset_convention: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let event = event_from_arrays("py", parse_side(side)?, t, y, v, c)?;
    let sim = SimOptions {
        matrix_convention: matrix_convention.parse().map_err(PyValueError::new_err)?,
        offset_convention: offset_convention.parse().map_err(PyValueError::new_err)?,
        steer_limit: None,
    };
    let outcome = ldc_core::controller::run_controlled(
        &event,
        &VehicleParams::default(),
        &ControllerParams::default(),
        &sim,
    )
    .map_err(to_py_err)?;
    let d = PyDict::new(py);
    match outcome {
        ControlOutcome::Triggered(traj) => {
            d.set_item("triggered", true)?;
            d.set_item("t", traj.t.clone())?;
            d.set_item("e_y", traj.e_y())?;
            d.set_item("delta", traj.delta.clone())?;
            d.set_item("t_trigger", traj.t_s)?;
            d.set_item("v_x_trigger", traj.v_x_ts)?;
        }
        ControlOutcome::NotTriggered { t, e_y } => {
            d.set_item("triggered", false)?;
            d.set_item("t", t)?;
            d.set_item("e_y", e_y)?;
        }
    }
    Ok(d)
}

/// Monte-Carlo controlled-vs-uncontrolled comparison; returns the report
/// as a JSON string.
#[pyfunction]
#[pyo3(signature = (model_l=None, model_r=None, n=200, seed=0, ts=0.05,
                    matrix_convention="paper", offset_convention="paper"))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    model_l: Option<&PyBgmModel>,
    model_r: Option<&PyBgmModel>,
    n: usize,
    seed: u64,
    ts: f64,
    matrix_convention: &str,
    offset_convention: &str,
) -> PyResult<String> {
    let sim = SimOptions {
        matrix_convention: matrix_convention.parse().map_err(PyValueError::new_err)?,
        offset_convention: offset_convention.parse().map_err(PyValueError::new_err)?,
        steer_limit: None,
    };
    let cfg = EvalConfig {
        n_per_side: n,
        ts,
        seed,
        sim,
    };
    let report = evaluate_batch(
        model_l.map(|m| &m.inner),
        model_r.map(|m| &m.inner),
        &VehicleParams::default(),
        &ControllerParams::default(),
        &cfg,
    )
    .map_err(to_py_err)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn ldc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("FEATURE_NAMES", FeatureVector::NAMES.to_vec())?;
    m.add_class::<PyBgmModel>()?;
    m.add_function(wrap_pyfunction!(demo_truth_model, m)?)?;
    m.add_function(wrap_pyfunction!(filter_event_arrays, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features_arrays, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_event, m)?)?;
    m.add_function(wrap_pyfunction!(run_controlled, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
