//! Ancestor-graph assembly: threshold the corrected p-value matrix, close
//! transitively, and tighten the significance level until no directed
//! cycles remain. The final level doubles as a p-value for the model
//! assumption itself when the correction was family-wise (capped Holm).

use std::collections::BTreeSet;

use serde_json::json;
use thiserror::Error;

use crate::multitest::{assemble_pmatrix, pooled_correction, MultiTestError};
use crate::regression::{DesignFactorization, Nonlinearity, RegressionError};
use crate::sem::DataMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("significance level must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("diagonal of a p-value matrix must be exactly 1 (row {0})")]
    BadDiagonal(usize),
    #[error("p-value matrix entries must be nonnegative (row {row}, col {col})")]
    NegativeEntry { row: usize, col: usize },
    #[error("matrix must be square with one row per node")]
    BadShape,
    #[error("model-check p-value requires a capped (family-wise) correction")]
    Uncapped,
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    MultiTest(#[from] MultiTestError),
}

/// Matrix of multiplicity-corrected p-values; P[j][k] tests "k is an
/// ancestor of j". Diagonal entries are pinned to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PMatrix {
    p: usize,
    values: Vec<f64>,
}

impl PMatrix {
    pub fn new(p: usize, values: Vec<f64>) -> Result<Self, GraphError> {
        if values.len() != p * p {
            return Err(GraphError::BadShape);
        }
        for j in 0..p {
            if values[j * p + j] != 1.0 {
                return Err(GraphError::BadDiagonal(j));
            }
            for k in 0..p {
                let v = values[j * p + k];
                if v.is_nan() || v < 0.0 {
                    return Err(GraphError::NegativeEntry { row: j, col: k });
                }
            }
        }
        Ok(PMatrix { p, values })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.p + k]
    }

    fn submatrix(&self, keep: &[usize]) -> PMatrix {
        let d = keep.len();
        let mut values = vec![0.0; d * d];
        for (a, &j) in keep.iter().enumerate() {
            for (b, &k) in keep.iter().enumerate() {
                values[a * d + b] = self.get(j, k);
            }
        }
        PMatrix { p: d, values }
    }
}

/// Boolean ancestor relation: `get(j, k)` means k is claimed an ancestor
/// of j. A true diagonal entry marks a node inside a directed cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    p: usize,
    m: Vec<bool>,
}

impl Adjacency {
    pub fn new(p: usize) -> Self {
        Adjacency {
            p,
            m: vec![false; p * p],
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, j: usize, k: usize) -> bool {
        self.m[j * self.p + k]
    }

    pub fn set(&mut self, j: usize, k: usize, value: bool) {
        self.m[j * self.p + k] = value;
    }

    pub fn is_acyclic(&self) -> bool {
        (0..self.p).all(|j| !self.get(j, j))
    }

    pub fn ancestors_of(&self, j: usize) -> BTreeSet<usize> {
        (0..self.p).filter(|&k| self.get(j, k)).collect()
    }
}

/// Transitive closure of the claimed-ancestor relation: the ancestors of
/// every ancestor become ancestors. Idempotent.
pub fn build_recursive(a: &Adjacency) -> Adjacency {
    let p = a.p();
    let mut closed = Adjacency::new(p);
    let mut stack = Vec::with_capacity(p);
    for j in 0..p {
        stack.clear();
        stack.extend((0..p).filter(|&k| a.get(j, k)));
        while let Some(k) = stack.pop() {
            if !closed.get(j, k) {
                closed.set(j, k, true);
                stack.extend((0..p).filter(|&l| a.get(k, l) && !closed.get(j, l)));
            }
        }
    }
    closed
}

/// Nodes that are their own ancestors, i.e. members of directed cycles.
/// Expects a transitively closed relation.
pub fn cycle_nodes(a: &Adjacency) -> BTreeSet<usize> {
    (0..a.p()).filter(|&j| a.get(j, j)).collect()
}

/// Thresholds strictly at `alpha`, closes, and while cycles exist reduces
/// the level to the largest qualifying p-value inside the cyclic node set,
/// recursing on that submatrix. Returns the closed acyclic relation and
/// the final level.
pub fn find_structure(pm: &PMatrix, alpha: f64) -> (Adjacency, f64) {
    assert!(
        alpha.is_finite() && alpha > 0.0,
        "significance level must be positive"
    );
    let (a, alpha_hat) = find_structure_impl(pm, alpha);
    debug_assert!(a.is_acyclic());
    debug_assert_eq!(a, build_recursive(&a));
    (a, alpha_hat)
}

fn find_structure_impl(pm: &PMatrix, alpha: f64) -> (Adjacency, f64) {
    let p = pm.p();
    let mut a = Adjacency::new(p);
    for j in 0..p {
        for k in 0..p {
            if j != k && pm.get(j, k) < alpha {
                a.set(j, k, true);
            }
        }
    }
    let mut a = build_recursive(&a);
    let cyclic: Vec<usize> = cycle_nodes(&a).into_iter().collect();
    if cyclic.is_empty() {
        return (a, alpha);
    }

    let mut alpha_hat = f64::NEG_INFINITY;
    for &j in &cyclic {
        for &k in &cyclic {
            let v = pm.get(j, k);
            if j != k && v < alpha && v > alpha_hat {
                alpha_hat = v;
            }
        }
    }
    // A cycle in the closure is built from thresholded edges among its own
    // nodes, so at least one qualifying entry exists.
    assert!(alpha_hat.is_finite(), "cyclic set without qualifying edges");

    let (sub, alpha_hat) = find_structure_impl(&pm.submatrix(&cyclic), alpha_hat);
    for (si, &j) in cyclic.iter().enumerate() {
        for (sk, &k) in cyclic.iter().enumerate() {
            a.set(j, k, sub.get(si, sk));
        }
    }
    (build_recursive(&a), alpha_hat)
}

/// One claimed ancestor relation with the corrected p-value of its direct
/// test (closure-added relations report their direct pooled p as well).
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimedEdge {
    pub ancestor: usize,
    pub descendant: usize,
    pub corrected_p: f64,
}

/// Full graph-detection output.
#[derive(Debug, Clone)]
pub struct GraphResult {
    pub ancestors: Vec<BTreeSet<usize>>,
    pub alpha: f64,
    pub alpha_hat: f64,
    pub tightened: bool,
    pub capped: bool,
    pub f_name: &'static str,
    pub edges: Vec<ClaimedEdge>,
}

impl GraphResult {
    /// The largest level producing no cycles, read as a p-value for the
    /// null hypothesis that the model assumptions hold: the tightened
    /// level if tightening happened, otherwise 1.
    pub fn model_check_p_value(&self) -> Result<f64, GraphError> {
        if !self.capped {
            return Err(GraphError::Uncapped);
        }
        Ok(if self.tightened { self.alpha_hat } else { 1.0 })
    }

    pub fn p(&self) -> usize {
        self.ancestors.len()
    }

    /// JSON document; `names` defaults to X1..Xp.
    pub fn to_json(&self, names: Option<&[String]>) -> serde_json::Value {
        let labels = node_labels(self.p(), names);
        let mut ancestors = serde_json::Map::new();
        for (j, set) in self.ancestors.iter().enumerate() {
            let list: Vec<_> = set.iter().map(|&k| json!(labels[k])).collect();
            ancestors.insert(labels[j].clone(), json!(list));
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                json!({
                    "ancestor": labels[e.ancestor],
                    "descendant": labels[e.descendant],
                    "corrected_p": e.corrected_p,
                })
            })
            .collect();
        json!({
            "schema": "ancreg/graph_result/v1",
            "alpha": self.alpha,
            "alpha_hat": self.alpha_hat,
            "tightened": self.tightened,
            "capped": self.capped,
            "f": self.f_name,
            "nodes": labels,
            "ancestors": serde_json::Value::Object(ancestors),
            "edges": edges,
            "model_check_p": self.model_check_p_value().ok(),
        })
    }

    /// DOT rendering of the claimed relation, ancestor -> descendant.
    pub fn to_dot(&self, names: Option<&[String]>) -> String {
        let labels = node_labels(self.p(), names);
        let mut out = String::from("digraph ancestors {\n  rankdir=LR;\n");
        for label in &labels {
            out.push_str(&format!("  \"{label}\";\n"));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [label=\"{:.2e}\"];\n",
                labels[e.ancestor], labels[e.descendant], e.corrected_p
            ));
        }
        out.push_str("}\n");
        out
    }
}

fn node_labels(p: usize, names: Option<&[String]>) -> Vec<String> {
    match names {
        Some(names) => {
            assert_eq!(names.len(), p, "one label per node");
            names.to_vec()
        }
        None => (1..=p).map(|i| format!("X{i}")).collect(),
    }
}

/// End-to-end detection: scan every node, pool the p-values through Holm,
/// and run the cycle-tightening structure search.
pub fn detect_graph(
    data: &DataMatrix,
    alpha: f64,
    f: Nonlinearity,
    cap: bool,
) -> Result<GraphResult, GraphError> {
    detect_graph_with(data, alpha, f, cap, true)
}

/// [`detect_graph`] with explicit control over mean-centering (disable for
/// data that is centered by construction).
pub fn detect_graph_with(
    data: &DataMatrix,
    alpha: f64,
    f: Nonlinearity,
    cap: bool,
    center: bool,
) -> Result<GraphResult, GraphError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(GraphError::InvalidAlpha(alpha));
    }
    let p = data.p();
    let fac = DesignFactorization::with_centering(data, center)?;
    let scans = (0..p)
        .map(|j| fac.scan(j, f))
        .collect::<Result<Vec<_>, _>>()?;
    let pm = assemble_pmatrix(&scans, cap)?;
    let corrected = pooled_correction(&scans, cap)?;
    let (a, alpha_hat) = find_structure(&pm, alpha);

    let ancestors: Vec<BTreeSet<usize>> = (0..p).map(|j| a.ancestors_of(j)).collect();
    let mut edges = Vec::new();
    for e in &corrected.entries {
        if a.get(e.row, e.col) {
            edges.push(ClaimedEdge {
                ancestor: e.col,
                descendant: e.row,
                corrected_p: e.corrected,
            });
        }
    }
    edges.sort_by_key(|e| (e.ancestor, e.descendant));
    Ok(GraphResult {
        ancestors,
        alpha,
        alpha_hat,
        tightened: alpha_hat < alpha,
        capped: cap,
        f_name: f.name(),
        edges,
    })
}
