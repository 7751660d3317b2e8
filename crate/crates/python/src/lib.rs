//! Python bindings for the entanglement concentration simulator.
//!
//! Exposes the Schmidt-pair arithmetic, exact branch enumeration, sampled
//! protocol runs, and Monte Carlo summaries. Structured results come back as
//! JSON strings so Python can `json.loads` them without bespoke classes.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ecsim::analysis;
use ecsim::output;
use ecsim::protocol::{self, ProtocolOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_error(err: ecsim::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn options(
    alpha_sq: f64,
    n_parties: u32,
    max_rounds: u32,
    ancilla_mismatch: f64,
) -> PyResult<ProtocolOptions> {
    let coefficients = protocol::SchmidtPair::from_alpha_sq(alpha_sq).map_err(value_error)?;
    let mut opts = ProtocolOptions::new(coefficients, n_parties, max_rounds);
    opts.ancilla_mismatch = ancilla_mismatch;
    opts.validate().map_err(value_error)?;
    Ok(opts)
}

/// The (alpha, beta) pair driving the protocol, built from alpha^2.
#[pyclass]
#[derive(Clone)]
struct SchmidtPair {
    inner: protocol::SchmidtPair,
}

#[pymethods]
impl SchmidtPair {
    #[new]
    fn new(alpha_sq: f64) -> PyResult<Self> {
        Ok(SchmidtPair {
            inner: protocol::SchmidtPair::from_alpha_sq(alpha_sq).map_err(value_error)?,
        })
    }

    #[getter]
    fn alpha_sq(&self) -> f64 {
        self.inner.alpha_sq()
    }

    #[getter]
    fn beta_sq(&self) -> f64 {
        self.inner.beta_sq()
    }

    fn is_degenerate(&self) -> bool {
        self.inner.is_degenerate()
    }

    /// Round-1 heralded success probability 2|ab|^2.
    fn round_success_probability(&self) -> f64 {
        self.inner.round_success_probability()
    }

    /// Coefficients after one failed round: (a^2, b^2) renormalized.
    fn residual_after_failure(&self) -> PyResult<SchmidtPair> {
        Ok(SchmidtPair {
            inner: self.inner.residual_after_failure().map_err(value_error)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "SchmidtPair(alpha_sq={}, beta_sq={})",
            self.inner.alpha_sq(),
            self.inner.beta_sq()
        )
    }
}

/// Exact cumulative success probability by full branch enumeration.
#[pyfunction]
#[pyo3(signature = (alpha_sq, n_parties=2, max_rounds=1, ancilla_mismatch=0.0))]
fn exact_success_probability(
    alpha_sq: f64,
    n_parties: u32,
    max_rounds: u32,
    ancilla_mismatch: f64,
) -> PyResult<f64> {
    let opts = options(alpha_sq, n_parties, max_rounds, ancilla_mismatch)?;
    Ok(analysis::enumerate_branches_with(&opts)
        .map_err(value_error)?
        .success_probability())
}

/// Unconditional success probability of each round, from the coefficient
/// recursion.
#[pyfunction]
#[pyo3(signature = (alpha_sq, max_rounds, ancilla_mismatch=0.0))]
fn success_probability_by_round(
    alpha_sq: f64,
    max_rounds: u32,
    ancilla_mismatch: f64,
) -> PyResult<Vec<f64>> {
    let coefficients = protocol::SchmidtPair::from_alpha_sq(alpha_sq).map_err(value_error)?;
    protocol::exact_success_by_round(&coefficients, max_rounds, ancilla_mismatch)
        .map_err(value_error)
}

/// The naive 2|ab|^(2k) expression, reported for comparison with the exact
/// recursion.
#[pyfunction]
fn naive_success_probability(alpha_sq: f64, round_k: u32) -> PyResult<f64> {
    let coefficients = protocol::SchmidtPair::from_alpha_sq(alpha_sq).map_err(value_error)?;
    Ok(analysis::success_probability_naive(&coefficients, round_k))
}

/// Runs one sampled protocol instance; returns the trace as a JSON string
/// with rounds, messages, final fidelity, and the exact cumulative
/// success probability.
#[pyfunction]
#[pyo3(signature = (alpha_sq, n_parties=2, max_rounds=1, seed=0, ancilla_mismatch=0.0))]
fn run_protocol_json(
    alpha_sq: f64,
    n_parties: u32,
    max_rounds: u32,
    seed: u64,
    ancilla_mismatch: f64,
) -> PyResult<String> {
    let opts = options(alpha_sq, n_parties, max_rounds, ancilla_mismatch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = protocol::run_protocol(&opts, &mut rng).map_err(value_error)?;
    let trace = output::trace_from_report(&report).map_err(value_error)?;
    Ok(output::trace_json(&trace))
}

/// Monte Carlo summary row as a JSON string (exact value, empirical
/// fraction, standard error, mean rounds to success).
#[pyfunction]
#[pyo3(signature = (alpha_sq, n_parties=2, max_rounds=1, trials=10_000, seed=0, ancilla_mismatch=0.0))]
fn monte_carlo_json(
    alpha_sq: f64,
    n_parties: u32,
    max_rounds: u32,
    trials: u64,
    seed: u64,
    ancilla_mismatch: f64,
) -> PyResult<String> {
    let opts = options(alpha_sq, n_parties, max_rounds, ancilla_mismatch)?;
    let row = analysis::monte_carlo_with(&opts, trials, seed).map_err(value_error)?;
    Ok(output::json_row(&row))
}

#[pymodule]
fn ecsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<SchmidtPair>()?;
    m.add_function(wrap_pyfunction!(exact_success_probability, m)?)?;
    m.add_function(wrap_pyfunction!(success_probability_by_round, m)?)?;
    m.add_function(wrap_pyfunction!(naive_success_probability, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol_json, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_json, m)?)?;
    Ok(())
}
