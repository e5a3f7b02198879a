//! Python bindings: the main model types and operations, with plain lists
//! crossing the boundary. Build `libspqrx_py` and import it as
//! `spqrx_py` (see python/smoke_test.py for a loader).

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use spqrx::dist::BlendSpec;
use spqrx::evaluate;
use spqrx::interpret;
use spqrx::network::{Activation, XiActivation};
use spqrx::persist;
use spqrx::regression::{
    fit_spqr as core_fit_spqr, fit_spqrx as core_fit_spqrx, Architecture, Dataset, FittedModel,
    Mode, TrainingConfig,
};
use spqrx::simulate::{generate, SimDesign, SimSpec};
use spqrx::Error as CoreError;

fn py_err(e: CoreError) -> PyErr {
    match e {
        CoreError::InvalidArgument(_) | CoreError::Data(_) | CoreError::Persistence(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn build_dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Dataset> {
    if x.is_empty() {
        return Err(PyValueError::new_err("x must be non-empty"));
    }
    let p = x[0].len();
    if x.iter().any(|row| row.len() != p) {
        return Err(PyValueError::new_err("x rows have inconsistent lengths"));
    }
    let n = x.len();
    let flat: Vec<f64> = x.into_iter().flatten().collect();
    let cov = Array2::from_shape_vec((n, p), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Dataset::new(cov, Array1::from_vec(y)).map_err(py_err)
}

fn xi_activation(kind: &str, lo: f64, hi: f64) -> PyResult<XiActivation> {
    let act = match kind {
        "scaled-tanh" | "tanh" => XiActivation::ScaledTanh { lo, hi },
        "logistic" | "sigmoid" => XiActivation::Logistic,
        "exponential" | "exp" => XiActivation::Exponential,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown xi activation '{other}'"
            )))
        }
    };
    act.validate().map_err(py_err)?;
    Ok(act)
}

fn architecture(
    k: usize,
    hidden: Vec<usize>,
    activation: &str,
    xi_kind: &str,
    xi_lo: f64,
    xi_hi: f64,
) -> PyResult<Architecture> {
    Ok(Architecture {
        num_basis: k,
        spline_order: 3,
        hidden,
        activation: activation.parse::<Activation>().map_err(py_err)?,
        xi_activation: xi_activation(xi_kind, xi_lo, xi_hi)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn training_config(
    seed: u64,
    learning_rate: f64,
    max_epochs: usize,
    patience: usize,
    batch_size: usize,
    density_penalty: f64,
    l1_xi: f64,
) -> TrainingConfig {
    TrainingConfig {
        learning_rate,
        max_epochs,
        patience,
        density_penalty,
        l1_xi,
        seed,
        batch_size,
        ..TrainingConfig::default()
    }
}

/// A fitted conditional density model.
#[pyclass(name = "Model")]
pub struct PyModel {
    inner: FittedModel,
}

#[pymethods]
impl PyModel {
    /// "spqr" (bulk only) or "spqrx" (blended GP tail).
    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            Mode::Spqr => "spqr",
            Mode::Spqrx => "spqrx",
        }
    }

    #[getter]
    fn num_covariates(&self) -> usize {
        self.inner.scaling.x_mean.len()
    }

    #[getter]
    fn best_val_loss(&self) -> f64 {
        self.inner.info.best_val_loss
    }

    /// Conditional quantile at one covariate vector.
    fn quantile(&self, x: Vec<f64>, tau: f64) -> PyResult<f64> {
        self.inner.quantile(&x, tau).map_err(py_err)
    }

    /// Conditional quantiles at several levels (one forward pass).
    fn quantiles(&self, x: Vec<f64>, taus: Vec<f64>) -> PyResult<Vec<f64>> {
        let cond = self.inner.at(&x).map_err(py_err)?;
        taus.iter()
            .map(|&t| cond.quantile(t).map_err(py_err))
            .collect()
    }

    /// Conditional distribution function at a response value.
    fn cdf(&self, x: Vec<f64>, y: f64) -> PyResult<f64> {
        self.inner.cdf(&x, y).map_err(py_err)
    }

    /// Conditional density at a response value.
    fn density(&self, x: Vec<f64>, y: f64) -> PyResult<f64> {
        self.inner.density(&x, y).map_err(py_err)
    }

    /// GP shape at a covariate vector (tail-extended models only).
    fn xi(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.xi(&x).map_err(py_err)
    }

    /// Probability integral transform of a test set.
    fn pit(&self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        let data = build_dataset(x, y)?;
        Ok(evaluate::pit(&self.inner, &data).map_err(py_err)?.values)
    }

    /// Variable-importance scores per covariate for each quantile level.
    #[pyo3(signature = (x, taus, bins = 40))]
    fn vi_quantile(
        &self,
        x: Vec<Vec<f64>>,
        taus: Vec<f64>,
        bins: usize,
    ) -> PyResult<Vec<Vec<f64>>> {
        let data = to_matrix(x)?;
        let result =
            interpret::vi_quantile_profile(&self.inner, &data, &taus, bins).map_err(py_err)?;
        Ok(result.scores)
    }

    /// Variable-importance scores for the GP shape.
    #[pyo3(signature = (x, bins = 40))]
    fn vi_shape(&self, x: Vec<Vec<f64>>, bins: usize) -> PyResult<Vec<f64>> {
        let data = to_matrix(x)?;
        let result = interpret::vi_xi(&self.inner, &data, bins).map_err(py_err)?;
        Ok(result.scores[0].clone())
    }

    /// Serialize to the versioned JSON document.
    fn to_json(&self) -> PyResult<String> {
        persist::to_json(&self.inner, "python").map_err(py_err)
    }

    fn save(&self, path: String) -> PyResult<()> {
        persist::save_model(&self.inner, std::path::Path::new(&path), "python").map_err(py_err)
    }

    #[staticmethod]
    fn from_json(json: String) -> PyResult<Self> {
        Ok(PyModel {
            inner: persist::from_json(&json).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: String) -> PyResult<Self> {
        Ok(PyModel {
            inner: persist::load_model(std::path::Path::new(&path)).map_err(py_err)?,
        })
    }
}

/// Draw a synthetic benchmark dataset; returns (x_rows, y).
#[pyfunction]
#[pyo3(signature = (design, n, seed = 0))]
fn simulate(design: &str, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let design: SimDesign = design.parse().map_err(py_err)?;
    let (data, _) = generate(&SimSpec { design, n, seed }).map_err(py_err)?;
    let x = data
        .covariates()
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    Ok((x, data.response().to_vec()))
}

/// True conditional quantile of a synthetic design.
#[pyfunction]
fn true_quantile(design: &str, tau: f64, x: Vec<f64>) -> PyResult<f64> {
    let design: SimDesign = design.parse().map_err(py_err)?;
    Ok(spqrx::simulate::TruthModel { design }.quantile(tau, &x))
}

/// Fit the bulk-only model.
#[pyfunction]
#[pyo3(signature = (
    x, y, k = 15, hidden = vec![16, 16], activation = "sigmoid",
    seed = 0, learning_rate = 1e-3, max_epochs = 1000, patience = 25,
    batch_size = 0
))]
#[allow(clippy::too_many_arguments)]
fn fit_spqr(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    k: usize,
    hidden: Vec<usize>,
    activation: &str,
    seed: u64,
    learning_rate: f64,
    max_epochs: usize,
    patience: usize,
    batch_size: usize,
) -> PyResult<PyModel> {
    let data = build_dataset(x, y)?;
    let arch = architecture(k, hidden, activation, "scaled-tanh", -0.5, 0.7)?;
    let config = training_config(
        seed,
        learning_rate,
        max_epochs,
        patience,
        batch_size,
        100.0,
        1e-4,
    );
    Ok(PyModel {
        inner: core_fit_spqr(&data, &arch, &config).map_err(py_err)?,
    })
}

/// Fit the tail-extended model (bulk pre-training included).
#[pyfunction]
#[pyo3(signature = (
    x, y, k = 15, hidden = vec![16, 16], activation = "sigmoid",
    p_a = 0.9, p_b = 0.99, c1 = 25.0, c2 = 5.0,
    xi_activation_kind = "scaled-tanh", xi_lo = -0.5, xi_hi = 0.7,
    seed = 0, learning_rate = 1e-3, max_epochs = 1000, patience = 25,
    batch_size = 0, density_penalty = 100.0, l1_xi = 1e-4
))]
#[allow(clippy::too_many_arguments)]
fn fit_spqrx(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    k: usize,
    hidden: Vec<usize>,
    activation: &str,
    p_a: f64,
    p_b: f64,
    c1: f64,
    c2: f64,
    xi_activation_kind: &str,
    xi_lo: f64,
    xi_hi: f64,
    seed: u64,
    learning_rate: f64,
    max_epochs: usize,
    patience: usize,
    batch_size: usize,
    density_penalty: f64,
    l1_xi: f64,
) -> PyResult<PyModel> {
    let data = build_dataset(x, y)?;
    let arch = architecture(k, hidden, activation, xi_activation_kind, xi_lo, xi_hi)?;
    let blend = BlendSpec::new(p_a, p_b, c1, c2).map_err(py_err)?;
    let config = training_config(
        seed,
        learning_rate,
        max_epochs,
        patience,
        batch_size,
        density_penalty,
        l1_xi,
    );
    Ok(PyModel {
        inner: core_fit_spqrx(&data, &arch, blend, &config).map_err(py_err)?,
    })
}

fn to_matrix(x: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    if x.is_empty() {
        return Err(PyValueError::new_err("x must be non-empty"));
    }
    let p = x[0].len();
    let n = x.len();
    let flat: Vec<f64> = x.into_iter().flatten().collect();
    Array2::from_shape_vec((n, p), flat).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn spqrx_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(true_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(fit_spqr, m)?)?;
    m.add_function(wrap_pyfunction!(fit_spqrx, m)?)?;
    Ok(())
}
