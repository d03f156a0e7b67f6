//! Python bindings: the transform catalog, dataset construction, model
//! fitting, point/MSE/interval estimation and the simulation harness.
//!
//! Build with `cargo build -p vstsae-py --release` and rename the produced
//! `libvstsae_py.so` to `vstsae_py.so` on the Python path (see
//! `python/smoke_test.py`), or point maturin at this crate.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use vstsae::error::Error;
use vstsae::estimators::point_estimates_with_nodes;
use vstsae::intervals::{build_bootstrap_intervals, build_intervals, CiMethod};
use vstsae::model::{fit_model, AreaDataset, AreaObservation, ModelFit, VarianceMethod};
use vstsae::mse::ms_estimate;
use vstsae::simulation::{run_scenario, Menus, SimConfig};
use vstsae::transforms::{
    back_transform_correct, catalog, curvature_ratio, forward_shift, LinearDeltaCoeffs,
    QuadraticVarianceFunction, Transform as CoreTransform,
};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A catalog variance-stabilizing transform with its shift coefficients.
#[pyclass(name = "Transform")]
struct PyTransform {
    inner: CoreTransform,
    qvf: QuadraticVarianceFunction,
    coeffs: LinearDeltaCoeffs,
}

#[pymethods]
impl PyTransform {
    #[new]
    #[pyo3(signature = (family, shape=None))]
    fn new(family: &str, shape: Option<f64>) -> PyResult<Self> {
        let shape_vec: Vec<f64> = shape.into_iter().collect();
        let (inner, qvf, coeffs) = catalog(family, &shape_vec).map_err(err)?;
        Ok(PyTransform { inner, qvf, coeffs })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn a(&self) -> f64 {
        self.coeffs.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.coeffs.b
    }

    #[getter]
    fn domain(&self) -> (f64, f64) {
        (self.inner.domain.lo, self.inner.domain.hi)
    }

    #[getter]
    fn range(&self) -> (f64, f64) {
        (self.inner.range.lo, self.inner.range.hi)
    }

    #[getter]
    fn qvf(&self) -> (f64, f64, f64, f64) {
        (self.qvf.c0, self.qvf.c1, self.qvf.c2, self.qvf.k)
    }

    fn g(&self, mu: f64) -> PyResult<f64> {
        self.inner.g(mu).map_err(err)
    }

    fn g_inv(&self, theta: f64) -> PyResult<f64> {
        self.inner.g_inv(theta).map_err(err)
    }

    fn curvature_ratio(&self, mu: f64) -> PyResult<f64> {
        curvature_ratio(&self.inner, mu).map_err(err)
    }

    /// Bias-corrected back transform `(g⁻¹(θ) - D·b/2)/(1 + a·D/2)`.
    fn back_transform(&self, theta: f64, d: f64) -> PyResult<f64> {
        back_transform_correct(theta, d, &self.coeffs, &self.inner).map_err(err)
    }

    /// Exact inverse of `back_transform`.
    fn forward_shift(&self, mu: f64, d: f64) -> PyResult<f64> {
        forward_shift(mu, d, &self.coeffs, &self.inner).map_err(err)
    }

    /// `E[g⁻¹(T)]` for `T ~ Normal(center, variance)`.
    #[pyo3(signature = (center, variance, nodes=40))]
    fn posterior_mean(&self, center: f64, variance: f64, nodes: usize) -> PyResult<f64> {
        let spec = vstsae::PosteriorSpec::new(center, variance, nodes).map_err(err)?;
        vstsae::posterior_mean_inverse(&spec, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Transform({}, a={}, b={})",
            self.inner.name, self.coeffs.a, self.coeffs.b
        )
    }
}

/// An immutable area-level dataset.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: AreaDataset,
}

#[pymethods]
impl PyDataset {
    /// Build a dataset from parallel lists. Covariates get an intercept
    /// prepended; `d` defaults to `k·sum_w2`; direct estimates at a domain
    /// boundary are clamped inward by `1/(4·n_eff)` before transforming.
    #[new]
    #[pyo3(signature = (transform, area_ids, y_direct, n, sum_w2, x=None, d=None, w_median=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        transform: &PyTransform,
        area_ids: Vec<String>,
        y_direct: Vec<f64>,
        n: Vec<usize>,
        sum_w2: Vec<f64>,
        x: Option<Vec<Vec<f64>>>,
        d: Option<Vec<f64>>,
        w_median: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let m = area_ids.len();
        let check = |name: &str, len: usize| -> PyResult<()> {
            if len != m {
                Err(PyValueError::new_err(format!(
                    "{name} has length {len}, expected {m}"
                )))
            } else {
                Ok(())
            }
        };
        check("y_direct", y_direct.len())?;
        check("n", n.len())?;
        check("sum_w2", sum_w2.len())?;
        if let Some(x) = &x {
            check("x", x.len())?;
        }
        if let Some(d) = &d {
            check("d", d.len())?;
        }
        if let Some(w) = &w_median {
            check("w_median", w.len())?;
        }

        let mut rows = Vec::with_capacity(m);
        for i in 0..m {
            let sw2 = sum_w2[i];
            if !(sw2 > 0.0) {
                return Err(PyValueError::new_err(format!(
                    "sum_w2[{i}] must be positive"
                )));
            }
            let (y_used, _) = transform.inner.clamp_to_domain(y_direct[i], 1.0 / sw2);
            let z = transform.inner.g(y_used).map_err(err)?;
            let mut xs = vec![1.0];
            if let Some(x) = &x {
                xs.extend(&x[i]);
            }
            rows.push(AreaObservation {
                area_id: area_ids[i].clone(),
                y_direct: y_direct[i],
                z,
                d: d.as_ref().map_or(transform.qvf.k * sw2, |d| d[i]),
                x: xs,
                sum_w2: sw2,
                n: n[i],
                w_median: w_median.as_ref().map_or(0.0, |w| w[i]),
            });
        }
        Ok(PyDataset {
            inner: AreaDataset::new(rows).map_err(err)?,
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn area_ids(&self) -> Vec<String> {
        self.inner
            .observations()
            .iter()
            .map(|o| o.area_id.clone())
            .collect()
    }

    #[getter]
    fn z(&self) -> Vec<f64> {
        self.inner.z_vector().iter().copied().collect()
    }

    #[getter]
    fn d(&self) -> Vec<f64> {
        self.inner.observations().iter().map(|o| o.d).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.m()
    }
}

/// A fitted transformed-scale model.
#[pyclass(name = "Fit")]
struct PyFit {
    inner: ModelFit,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta_hat.clone()
    }

    #[getter]
    fn a_hat(&self) -> f64 {
        self.inner.a_hat
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.tag().to_string()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.gamma.clone()
    }

    #[getter]
    fn theta_eb(&self) -> Vec<f64> {
        self.inner.theta_eb.clone()
    }

    #[getter]
    fn reml_was_zero(&self) -> bool {
        self.inner.reml_was_zero
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit(method={}, a_hat={}, reml_was_zero={})",
            self.inner.method.tag(),
            self.inner.a_hat,
            self.inner.reml_was_zero
        )
    }
}

fn parse_method(method: &str) -> PyResult<VarianceMethod> {
    method.parse().map_err(err)
}

/// Transform family names accepted by `Transform`.
#[pyfunction]
fn list_families() -> Vec<String> {
    vstsae::CATALOG_FAMILIES.iter().map(|s| s.to_string()).collect()
}

/// Fit the model with the requested variance method (REML, YL or LL).
#[pyfunction]
#[pyo3(signature = (dataset, method="YL"))]
fn fit(dataset: &PyDataset, method: &str) -> PyResult<PyFit> {
    let fit = fit_model(&dataset.inner, parse_method(method)?).map_err(err)?;
    Ok(PyFit { inner: fit })
}

/// Per-area point estimates: direct, nbt, peb and eb.
#[pyfunction]
#[pyo3(signature = (dataset, transform, fit, nodes=40))]
fn point_estimates<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    transform: &PyTransform,
    fit: &PyFit,
    nodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let bundle = point_estimates_with_nodes(
        &dataset.inner,
        &fit.inner,
        &transform.inner,
        &transform.coeffs,
        nodes,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    let ids: Vec<String> = bundle.areas.iter().map(|a| a.area_id.clone()).collect();
    out.set_item("area_id", ids)?;
    out.set_item(
        "direct",
        bundle.areas.iter().map(|a| a.direct).collect::<Vec<_>>(),
    )?;
    out.set_item("nbt", bundle.areas.iter().map(|a| a.nbt).collect::<Vec<_>>())?;
    out.set_item("peb", bundle.areas.iter().map(|a| a.peb).collect::<Vec<_>>())?;
    out.set_item("eb", bundle.areas.iter().map(|a| a.eb).collect::<Vec<_>>())?;
    out.set_item("clamped", bundle.clamped)?;
    Ok(out)
}

/// Leading-term and bootstrap-corrected MSE estimates.
#[pyfunction]
#[pyo3(signature = (dataset, transform, fit, b=100, seed=0))]
fn mse<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    transform: &PyTransform,
    fit: &PyFit,
    b: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let est = ms_estimate(
        &dataset.inner,
        &fit.inner,
        &transform.inner,
        &transform.coeffs,
        b,
        seed,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item(
        "area_id",
        est.areas.iter().map(|a| a.area_id.clone()).collect::<Vec<_>>(),
    )?;
    out.set_item("m1", est.areas.iter().map(|a| a.m1).collect::<Vec<_>>())?;
    out.set_item("ms", est.areas.iter().map(|a| a.ms).collect::<Vec<_>>())?;
    out.set_item("pms", est.areas.iter().map(|a| a.pms).collect::<Vec<_>>())?;
    out.set_item("failed_replicates", est.failed_replicates)?;
    Ok(out)
}

/// Confidence intervals. Methods needing a particular variance adjustment
/// (TEB.YL/Boot -> YL, TEB.B/pTEB.B -> LL) are fitted internally.
#[pyfunction]
#[pyo3(signature = (dataset, transform, methods=vec!["TDirect".to_string()], alpha=0.05, b=1000, seed=0, method="YL"))]
#[allow(clippy::too_many_arguments)]
fn intervals<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    transform: &PyTransform,
    methods: Vec<String>,
    alpha: f64,
    b: usize,
    seed: u64,
    method: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let ds = &dataset.inner;
    let t = &transform.inner;
    let coeffs = &transform.coeffs;
    let parsed: Vec<CiMethod> = methods
        .iter()
        .map(|s| s.parse().map_err(err))
        .collect::<PyResult<_>>()?;

    let fit_user = fit_model(ds, parse_method(method)?).map_err(err)?;
    let need_yl = parsed.iter().any(|m| matches!(m, CiMethod::TebYl | CiMethod::Boot));
    let need_ll = parsed.iter().any(|m| matches!(m, CiMethod::TebB | CiMethod::PTebB));
    let fit_yl = if need_yl {
        Some(fit_model(ds, VarianceMethod::YoshimoriLahiri).map_err(err)?)
    } else {
        None
    };
    let boot_pair = if need_ll {
        let fit_ll = fit_model(ds, VarianceMethod::LiLahiri).map_err(err)?;
        Some(build_bootstrap_intervals(ds, &fit_ll, t, coeffs, alpha, b, seed).map_err(err)?)
    } else {
        None
    };

    let out = PyDict::new(py);
    for m in &parsed {
        let cis = match m {
            CiMethod::TebB => boot_pair.as_ref().unwrap().0.clone(),
            CiMethod::PTebB => boot_pair.as_ref().unwrap().1.clone(),
            CiMethod::TebYl | CiMethod::Boot => {
                build_intervals(ds, fit_yl.as_ref().unwrap(), t, coeffs, *m, alpha, 0, 0)
                    .map_err(err)?
            }
            CiMethod::TDirect | CiMethod::Mpnaive => {
                build_intervals(ds, &fit_user, t, coeffs, *m, alpha, 0, 0).map_err(err)?
            }
        };
        let pairs: Vec<(f64, f64)> = cis.iter().map(|c| (c.lower, c.upper)).collect();
        out.set_item(m.tag(), pairs)?;
    }
    Ok(out)
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().unbind().into(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.unbind().into()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.unbind().into()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.unbind().into(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.unbind().into()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.unbind().into()
        }
    })
}

/// Run one Monte Carlo scenario of the arcsin-Bernoulli study and return
/// the aggregated report as nested dicts.
#[pyfunction]
#[pyo3(signature = (m, n, replications, seed, alpha=0.05, include_mse=false, include_intervals=false, mse_bootstrap=100, interval_bootstrap=1000))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    m: usize,
    n: usize,
    replications: usize,
    seed: u64,
    alpha: f64,
    include_mse: bool,
    include_intervals: bool,
    mse_bootstrap: usize,
    interval_bootstrap: usize,
) -> PyResult<Py<PyAny>> {
    let mut cfg = SimConfig::new(m, n, replications, seed);
    cfg.alpha = alpha;
    cfg.mse_bootstrap = mse_bootstrap;
    cfg.interval_bootstrap = interval_bootstrap;
    let full = Menus::full();
    let menus = Menus {
        estimators: full.estimators,
        mse: if include_mse { full.mse } else { vec![] },
        intervals: if include_intervals { full.intervals } else { vec![] },
    };
    let report = run_scenario(&cfg, &menus).map_err(err)?;
    let value = serde_json::to_value(&report)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

#[pymodule]
fn vstsae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransform>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(list_families, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(point_estimates, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(intervals, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
