//! Python bindings for forcelab.

use std::collections::BTreeMap;

use forcelab::akg::{first_order_slope, verify_first_order};
use forcelab::datasets::{enumerate_mappings, gen_toy_gaussian, ToyGaussianSpec};
use forcelab::feature_adapt::{sweep_grid, sweep_q0, OpmInstance, OpmSpec};
use forcelab::finetune_dyn::{run_squeeze_trials, SqueezeTrials};
use forcelab::mathcore::{seeded, spearman as spearman_rs, Activation};
use forcelab::simplicity::{describe_and_encode, huffman_bits as huffman_rs, kc_bounds as kc_rs, mapping_topsim, topsim as topsim_rs};
use forcelab::training::ema as ema_rs;
use forcelab::{LabError, MlpModel, ProbVector, Vector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: LabError) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn activation(name: &str) -> PyResult<Activation> {
    match name {
        "identity" => Ok(Activation::Identity),
        "smooth-relu" | "softplus" => Ok(Activation::SmoothRelu),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(PyValueError::new_err(format!("unknown activation {name:?}"))),
    }
}

fn vector(xs: Vec<f64>) -> Vector {
    Vector::from_vec(xs)
}

/// A randomly initialized MLP classifier.
#[pyclass(name = "Mlp")]
struct PyMlp {
    inner: MlpModel,
    dims: Vec<usize>,
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (dims, activation = "smooth-relu", seed = 0))]
    fn new(dims: Vec<usize>, activation: &str, seed: u64) -> PyResult<Self> {
        let inner = MlpModel::random(&dims, self::activation(activation)?, &mut seeded(seed)).map_err(py_err)?;
        Ok(Self { inner, dims })
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.dims.clone()
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.predict(&vector(x)).map_err(py_err)?.as_slice().to_vec())
    }

    /// Real change of `log p(·|x_o)` after one SGD step on `(x_u, y_u)`
    /// against its first-order prediction.
    fn first_order_check(&self, x_o: Vec<f64>, x_u: Vec<f64>, y_u: usize, eta: f64) -> PyResult<BTreeMap<&'static str, Vec<f64>>> {
        let c = verify_first_order(&self.inner, &vector(x_o), &vector(x_u), y_u, eta).map_err(py_err)?;
        Ok(BTreeMap::from([("predicted", c.predicted.as_slice().to_vec()), ("actual", c.actual.as_slice().to_vec()), ("residual", vec![c.residual])]))
    }

    #[pyo3(signature = (x_o, x_u, y_u, etas = vec![1e-2, 1e-3, 1e-4]))]
    fn first_order_slope(&self, x_o: Vec<f64>, x_u: Vec<f64>, y_u: usize, etas: Vec<f64>) -> PyResult<f64> {
        first_order_slope(&self.inner, &vector(x_o), &vector(x_u), y_u, &etas).map_err(py_err)
    }
}

/// Toy-Gaussian samples: inputs, labels, exact posteriors and difficulties.
#[pyfunction]
#[pyo3(signature = (n = 1000, classes = 3, dim = 30, delta_mu = 1.0, sigma = 1.5, seed = 0))]
fn toy_gaussian(py: Python<'_>, n: usize, classes: usize, dim: usize, delta_mu: f64, sigma: f64, seed: u64) -> PyResult<Py<PyAny>> {
    let data = gen_toy_gaussian(&ToyGaussianSpec { classes, dim, delta_mu, sigma, n, seed }).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("x", data.examples.iter().map(|e| e.x.as_slice().to_vec()).collect::<Vec<_>>())?;
    d.set_item("y", data.examples.iter().map(|e| e.y).collect::<Vec<_>>())?;
    d.set_item("q_star", data.examples.iter().map(|e| e.q_star.as_slice().to_vec()).collect::<Vec<_>>())?;
    d.set_item("difficulty", data.examples.iter().map(|e| e.difficulty).collect::<Vec<_>>())?;
    Ok(d.into_any().unbind())
}

/// `(bijection bits, compositional bits, ratio)` for `m` attributes of `v` values.
#[pyfunction]
fn kc_bounds(m: usize, v: usize) -> PyResult<(f64, f64, f64)> {
    let b = kc_rs(m, v).map_err(py_err)?;
    Ok((b.bijection, b.compositional, b.gamma))
}

#[pyfunction]
fn topsim(factors: Vec<Vec<u8>>, codes: Vec<Vec<u8>>) -> PyResult<f64> {
    topsim_rs(&factors, &codes).map_err(py_err)
}

/// Total Huffman code length of a token sequence.
#[pyfunction]
fn huffman_bits(tokens: Vec<String>) -> f64 {
    huffman_rs(&tokens)
}

/// All 256 Toy256 mappings with their class, description and measures.
#[pyfunction]
fn mappings(py: Python<'_>) -> PyResult<Vec<Py<PyAny>>> {
    enumerate_mappings()
        .iter()
        .map(|m| {
            let (desc, bits) = describe_and_encode(m);
            let d = pyo3::types::PyDict::new(py);
            d.set_item("id", m.id)?;
            d.set_item("assignment", m.assignment.to_vec())?;
            d.set_item("class", format!("{:?}", m.class).to_lowercase())?;
            d.set_item("description", desc.render())?;
            d.set_item("coding_bits", bits)?;
            d.set_item("topsim", mapping_topsim(m))?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

/// Spearman `(rho, p_value)`.
#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let c = spearman_rs(&a, &b).map_err(py_err)?;
    Ok((c.rho, c.p_value))
}

/// Exponential moving average of a path of probability vectors.
#[pyfunction]
fn ema(path: Vec<Vec<f64>>, alpha: f64) -> PyResult<Vec<Vec<f64>>> {
    let path: Vec<ProbVector> = path.into_iter().map(|p| ProbVector::new(vector(p))).collect::<Result<_, _>>().map_err(py_err)?;
    Ok(ema_rs(&path, alpha).map_err(py_err)?.iter().map(|p| p.as_slice().to_vec()).collect())
}

/// Counts of trials in which each squeezing guarantee held.
#[pyfunction]
#[pyo3(signature = (trials = 1000, vocab = 8, dim = 6, eta = 0.05, seed = 0))]
fn squeeze_trials(trials: usize, vocab: usize, dim: usize, eta: f64, seed: u64) -> PyResult<BTreeMap<&'static str, usize>> {
    let spec = SqueezeTrials { trials, vocab, dim, eta, seed, ..Default::default() };
    let rows = run_squeeze_trials(&spec).map_err(py_err)?;
    Ok(BTreeMap::from([
        ("trials", rows.len()),
        ("neg_decreased", rows.iter().filter(|r| r.neg_decreased).count()),
        ("star_increased", rows.iter().filter(|r| r.star_increased).count()),
    ]))
}

/// Closed-form sweep of the probe output `s·Y` for one random instance.
#[pyfunction]
#[pyo3(signature = (input_dim = 10, hidden = 32, samples = 6, grid = 21, seed = 0))]
fn opm_sweep(py: Python<'_>, input_dim: usize, hidden: usize, samples: usize, grid: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let inst = OpmInstance::random(&OpmSpec { input_dim, hidden, samples, seed, ..Default::default() }).map_err(py_err)?;
    let table = sweep_q0(&inst, &sweep_grid(grid).map_err(py_err)?).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("s", table.rows.iter().map(|r| r.s).collect::<Vec<_>>())?;
    d.set_item("d_euc", table.rows.iter().map(|r| r.d_euc).collect::<Vec<_>>())?;
    d.set_item("tr_bt_b0", table.rows.iter().map(|r| r.tr_bt_b0).collect::<Vec<_>>())?;
    d.set_item("argmax_tr_bt_b0", table.argmax_tr_bt_b0)?;
    d.set_item("d_euc_rises_toward_zero", table.d_euc_rises_toward_zero)?;
    Ok(d.into_any().unbind())
}

/// Runs the command-line front end on `args` (no program name) and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    forcelab::cli::dispatch(&args)
}

#[pymodule]
fn forcelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(toy_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(kc_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(topsim, m)?)?;
    m.add_function(wrap_pyfunction!(huffman_bits, m)?)?;
    m.add_function(wrap_pyfunction!(mappings, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(ema, m)?)?;
    m.add_function(wrap_pyfunction!(squeeze_trials, m)?)?;
    m.add_function(wrap_pyfunction!(opm_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
