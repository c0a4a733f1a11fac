//! Python bindings: model handling, simulation, nodewise scans, Holm
//! correction, and full graph detection.
//!
//! Build with `cargo build --release -p ancreg-python`; the smoke test in
//! `python/smoke_test.py` shows how to load the resulting shared library.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ancreg::config::{parse_sem_spec, write_sem_spec};
use ancreg::experiments::{reference_spec, two_gaussian_spec};
use ancreg::graph::detect_graph_with;
use ancreg::multitest;
use ancreg::regression::{ancestor_scan, parent_tests, Nonlinearity};
use ancreg::sem::{ground_truth, simulate, DataMatrix, SemSpec};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_f(name: &str) -> PyResult<Nonlinearity> {
    Nonlinearity::parse(name).ok_or_else(|| value_error(format!("unknown nonlinearity '{name}'")))
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DataMatrix> {
    DataMatrix::from_rows(&rows).map_err(value_error)
}

/// A linear structural equation model over a DAG.
#[pyclass(name = "Model", frozen)]
struct Model {
    spec: SemSpec,
}

#[pymethods]
impl Model {
    /// Parses the plain-text model format (see the repository docs).
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Model {
            spec: parse_sem_spec(text).map_err(value_error)?,
        })
    }

    /// The bundled six-node benchmark model; with `two_gaussian` the noise
    /// of node 5 is gaussian as well, hiding the 5 -> 6 relation.
    #[staticmethod]
    #[pyo3(signature = (two_gaussian = false))]
    fn reference(two_gaussian: bool) -> Self {
        Model {
            spec: if two_gaussian {
                two_gaussian_spec()
            } else {
                reference_spec()
            },
        }
    }

    #[getter]
    fn p(&self) -> usize {
        self.spec.p()
    }

    /// Edges as `(parent, child, weight)` with 0-based node indices.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.spec.edges()
    }

    /// True ancestor set of a node (0-based).
    fn ancestors(&self, node: usize) -> PyResult<Vec<usize>> {
        if node >= self.spec.p() {
            return Err(value_error(format!("node {node} out of range")));
        }
        Ok(ground_truth(&self.spec).ancestors[node]
            .iter()
            .copied()
            .collect())
    }

    fn to_text(&self) -> String {
        write_sem_spec(&self.spec)
    }

    /// Draws `n` samples; identical `(n, seed)` gives identical rows.
    fn simulate(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(value_error("n must be at least 1"));
        }
        let data = simulate(&self.spec, n, seed);
        Ok((0..n).map(|i| data.row(i)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(p={}, edges={})",
            self.spec.p(),
            self.spec.edges().len()
        )
    }
}

/// z-statistics and raw p-values of one nodewise scan; entries at the
/// target index are None.
#[pyclass(name = "ScanResult", frozen)]
struct ScanResult {
    #[pyo3(get)]
    target: usize,
    #[pyo3(get)]
    f: String,
    #[pyo3(get)]
    z: Vec<Option<f64>>,
    #[pyo3(get)]
    p_raw: Vec<Option<f64>>,
}

/// Detected ancestor graph.
#[pyclass(name = "GraphResult", frozen)]
struct PyGraphResult {
    #[pyo3(get)]
    ancestors: Vec<Vec<usize>>,
    #[pyo3(get)]
    alpha: f64,
    #[pyo3(get)]
    alpha_hat: f64,
    #[pyo3(get)]
    tightened: bool,
    #[pyo3(get)]
    edges: Vec<(usize, usize, f64)>,
    #[pyo3(get)]
    model_check_p: Option<f64>,
}

/// Tests every column for being an ancestor of `target` (0-based) by
/// regressing f(x_target) on all columns.
#[pyfunction]
#[pyo3(signature = (rows, target, f = "cube", center = true))]
fn scan(rows: Vec<Vec<f64>>, target: usize, f: &str, center: bool) -> PyResult<ScanResult> {
    let data = to_matrix(rows)?;
    let nonlinearity = parse_f(f)?;
    let scan = if center {
        ancestor_scan(&data, target, nonlinearity).map_err(value_error)?
    } else {
        ancreg::regression::DesignFactorization::with_centering(&data, false)
            .and_then(|fac| fac.scan(target, nonlinearity))
            .map_err(value_error)?
    };
    let p = scan.p();
    Ok(ScanResult {
        target,
        f: nonlinearity.name().to_string(),
        z: (0..p).map(|k| scan.z(k)).collect(),
        p_raw: (0..p).map(|k| scan.p_raw(k)).collect(),
    })
}

/// Step-down Holm correction; `cap=False` skips the cap at 1.
#[pyfunction]
#[pyo3(signature = (p_values, cap = true))]
fn holm(p_values: Vec<f64>, cap: bool) -> PyResult<Vec<f64>> {
    multitest::holm(&p_values, cap).map_err(value_error)
}

/// Full graph detection: nodewise scans, pooled Holm correction, and the
/// cycle-tightening structure search.
#[pyfunction]
#[pyo3(signature = (rows, alpha = 0.05, f = "cube", cap = true, center = true))]
fn detect_graph(
    rows: Vec<Vec<f64>>,
    alpha: f64,
    f: &str,
    cap: bool,
    center: bool,
) -> PyResult<PyGraphResult> {
    let data = to_matrix(rows)?;
    let result = detect_graph_with(&data, alpha, parse_f(f)?, cap, center).map_err(value_error)?;
    Ok(PyGraphResult {
        ancestors: result
            .ancestors
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect(),
        alpha: result.alpha,
        alpha_hat: result.alpha_hat,
        tightened: result.tightened,
        edges: result
            .edges
            .iter()
            .map(|e| (e.ancestor, e.descendant, e.corrected_p))
            .collect(),
        model_check_p: result.model_check_p_value().ok(),
    })
}

/// Least squares of x_target on the given ancestors: per-ancestor
/// `(coefficient, t, p)` tuples.
#[pyfunction]
fn parents(
    rows: Vec<Vec<f64>>,
    target: usize,
    ancestors: Vec<usize>,
) -> PyResult<Vec<(usize, f64, f64, f64)>> {
    let data = to_matrix(rows)?;
    let report = parent_tests(&data, target, &ancestors).map_err(value_error)?;
    Ok(report
        .ancestors_used
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, report.coef[i], report.t_stat[i], report.p_value[i]))
        .collect())
}

/// Two-sided standard normal p-value for a z-statistic.
#[pyfunction]
fn pvalue_from_z(z: f64) -> f64 {
    ancreg::stats::pvalue_from_z(z)
}

#[pymodule]
fn ancreg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<ScanResult>()?;
    m.add_class::<PyGraphResult>()?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    m.add_function(wrap_pyfunction!(holm, m)?)?;
    m.add_function(wrap_pyfunction!(detect_graph, m)?)?;
    m.add_function(wrap_pyfunction!(parents, m)?)?;
    m.add_function(wrap_pyfunction!(pvalue_from_z, m)?)?;
    Ok(())
}
