//! Linear structural equation models over DAGs.
//!
//! A model is an edge-weight matrix theta (theta[j][k] nonzero iff k is a
//! parent of j) together with one centered noise distribution per node.
//! Data is generated column-by-column in causal order, each node drawing
//! its noise from an independent seeded substream.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use thiserror::Error;

use crate::rng::substream;

const SQRT_3: f64 = 1.732_050_807_568_877_2;
const SIM_TAG: u64 = 0x5EED_0001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemError {
    #[error("directed cycle: {}", format_cycle(.0))]
    Cycle(Vec<usize>),
    #[error("theta must be square with one row per node (p = {p}, got {len} entries)")]
    ShapeMismatch { p: usize, len: usize },
    #[error("theta diagonal must be zero (node {0})")]
    NonzeroDiagonal(usize),
    #[error("noise scale must be positive and finite (node {node}, sigma = {sigma})")]
    BadScale { node: usize, sigma: f64 },
    #[error("student_t noise needs df > 2 for a finite variance (node {node}, df = {df})")]
    BadDegrees { node: usize, df: f64 },
    #[error("non-finite data value at row {row}, column {col}")]
    NonFiniteData { row: usize, col: usize },
    #[error("data columns must all have the same length")]
    RaggedData,
}

fn format_cycle(path: &[usize]) -> String {
    path.iter()
        .map(|&v| (v + 1).to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// Noise distribution family; every family is centered at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    Laplace,
    StudentT { df: f64 },
    ShiftedExponential,
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseFamily::Gaussian => write!(f, "gaussian"),
            NoiseFamily::Uniform => write!(f, "uniform"),
            NoiseFamily::Laplace => write!(f, "laplace"),
            NoiseFamily::StudentT { df } => write!(f, "student_t({df})"),
            NoiseFamily::ShiftedExponential => write!(f, "shifted_exponential"),
        }
    }
}

/// A node's noise distribution: family plus standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scale: f64) -> Self {
        NoiseSpec { family, scale }
    }

    pub fn gaussian(scale: f64) -> Self {
        Self::new(NoiseFamily::Gaussian, scale)
    }

    pub fn uniform(scale: f64) -> Self {
        Self::new(NoiseFamily::Uniform, scale)
    }

    fn validate(&self, node: usize) -> Result<(), SemError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(SemError::BadScale {
                node,
                sigma: self.scale,
            });
        }
        if let NoiseFamily::StudentT { df } = self.family {
            if !(df.is_finite() && df > 2.0) {
                return Err(SemError::BadDegrees { node, df });
            }
        }
        Ok(())
    }

    /// True when E(X^6) is finite, as needed for f(x) = x^3 in the scans.
    pub fn has_sixth_moment(&self) -> bool {
        match self.family {
            NoiseFamily::StudentT { df } => df > 6.0,
            _ => true,
        }
    }

    /// True when E(X^4) is finite (required by the limiting-law arguments).
    pub fn has_fourth_moment(&self) -> bool {
        match self.family {
            NoiseFamily::StudentT { df } => df > 4.0,
            _ => true,
        }
    }

    /// Fills `out` with i.i.d. draws: mean 0, standard deviation `scale`.
    fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self.family {
            NoiseFamily::Gaussian => {
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = z * self.scale;
                }
            }
            NoiseFamily::Uniform => {
                // U(-sqrt(3), sqrt(3)) has unit variance.
                let width = 2.0 * SQRT_3 * self.scale;
                for v in out.iter_mut() {
                    *v = (rng.random::<f64>() - 0.5) * width;
                }
            }
            NoiseFamily::Laplace => {
                // Difference of two unit exponentials is Laplace with variance 2.
                let s = self.scale / std::f64::consts::SQRT_2;
                for v in out.iter_mut() {
                    let a: f64 = Exp1.sample(rng);
                    let b: f64 = Exp1.sample(rng);
                    *v = (a - b) * s;
                }
            }
            NoiseFamily::StudentT { df } => {
                let t = StudentT::new(df).expect("validated df");
                let s = self.scale * ((df - 2.0) / df).sqrt();
                for v in out.iter_mut() {
                    let x: f64 = t.sample(rng);
                    *v = x * s;
                }
            }
            NoiseFamily::ShiftedExponential => {
                for v in out.iter_mut() {
                    let e: f64 = Exp1.sample(rng);
                    *v = (e - 1.0) * self.scale;
                }
            }
        }
    }
}

/// Validates that `theta` (row-major, p x p) encodes a DAG and returns a
/// topological order of the implied graph, ties broken by ascending index.
pub fn validate_dag(p: usize, theta: &[f64]) -> Result<Vec<usize>, SemError> {
    if theta.len() != p * p {
        return Err(SemError::ShapeMismatch {
            p,
            len: theta.len(),
        });
    }
    for j in 0..p {
        if theta[j * p + j] != 0.0 {
            return Err(SemError::NonzeroDiagonal(j));
        }
    }

    // Kahn's algorithm, always peeling the smallest ready node.
    let mut indegree = vec![0usize; p];
    for j in 0..p {
        for k in 0..p {
            if theta[j * p + k] != 0.0 {
                indegree[j] += 1;
            }
        }
    }
    let mut order = Vec::with_capacity(p);
    let mut done = vec![false; p];
    for _ in 0..p {
        let next = (0..p).find(|&j| !done[j] && indegree[j] == 0);
        let Some(j) = next else { break };
        done[j] = true;
        order.push(j);
        for child in 0..p {
            if theta[child * p + j] != 0.0 {
                indegree[child] -= 1;
            }
        }
    }
    if order.len() == p {
        return Ok(order);
    }
    Err(SemError::Cycle(smallest_cycle(p, theta, &done)))
}

/// Finds a deterministic cycle among the unpeeled nodes: the shortest cycle
/// through the smallest node that lies on one, edges explored in ascending
/// order.
fn smallest_cycle(p: usize, theta: &[f64], peeled: &[bool]) -> Vec<usize> {
    for start in 0..p {
        if peeled[start] {
            continue;
        }
        // BFS over edges k -> j restricted to unpeeled nodes.
        let mut pred = vec![usize::MAX; p];
        let mut queue = std::collections::VecDeque::from([start]);
        let mut seen = vec![false; p];
        seen[start] = true;
        while let Some(k) = queue.pop_front() {
            for j in 0..p {
                if peeled[j] || theta[j * p + k] == 0.0 {
                    continue;
                }
                if j == start {
                    let mut path = vec![start];
                    let mut cur = k;
                    while cur != start {
                        path.push(cur);
                        cur = pred[cur];
                    }
                    path.push(start);
                    let inner = path.len() - 1;
                    path[1..inner].reverse();
                    return path;
                }
                if !seen[j] {
                    seen[j] = true;
                    pred[j] = k;
                    queue.push_back(j);
                }
            }
        }
    }
    unreachable!("cycle search called on an acyclic graph")
}

/// A linear SEM: weights theta (theta[j][k] = effect of k on j) and one
/// noise spec per node. Construction validates acyclicity.
#[derive(Debug, Clone, PartialEq)]
pub struct SemSpec {
    p: usize,
    theta: Vec<f64>,
    noise: Vec<NoiseSpec>,
    causal_order: Vec<usize>,
}

impl SemSpec {
    pub fn new(theta: Vec<f64>, noise: Vec<NoiseSpec>) -> Result<Self, SemError> {
        let p = noise.len();
        for (node, spec) in noise.iter().enumerate() {
            spec.validate(node)?;
        }
        let causal_order = validate_dag(p, &theta)?;
        Ok(SemSpec {
            p,
            theta,
            noise,
            causal_order,
        })
    }

    /// Builds a spec from an edge list of `(parent, child, weight)` triples.
    pub fn from_edges(
        noise: Vec<NoiseSpec>,
        edges: &[(usize, usize, f64)],
    ) -> Result<Self, SemError> {
        let p = noise.len();
        let mut theta = vec![0.0; p * p];
        for &(k, j, w) in edges {
            theta[j * p + k] = w;
        }
        Self::new(theta, noise)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn theta(&self, j: usize, k: usize) -> f64 {
        self.theta[j * self.p + k]
    }

    pub fn noise(&self) -> &[NoiseSpec] {
        &self.noise
    }

    pub fn causal_order(&self) -> &[usize] {
        &self.causal_order
    }

    /// Edges as `(parent, child, weight)`, ordered by (parent, child).
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for k in 0..self.p {
            for j in 0..self.p {
                let w = self.theta(j, k);
                if w != 0.0 {
                    out.push((k, j, w));
                }
            }
        }
        out
    }

    pub fn parents_of(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.p).filter_map(move |k| {
            let w = self.theta(j, k);
            (w != 0.0).then_some((k, w))
        })
    }

    /// Replaces node `j`'s noise; weights are untouched.
    pub fn with_noise(mut self, j: usize, noise: NoiseSpec) -> Result<Self, SemError> {
        noise.validate(j)?;
        self.noise[j] = noise;
        Ok(self)
    }
}

/// Parent/child/ancestor structure implied by a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub parents: Vec<BTreeSet<usize>>,
    pub children: Vec<BTreeSet<usize>>,
    pub ancestors: Vec<BTreeSet<usize>>,
    pub causal_order: Vec<usize>,
}

impl GroundTruth {
    pub fn is_ancestor(&self, k: usize, j: usize) -> bool {
        self.ancestors[j].contains(&k)
    }

    /// All true ancestor relations as `(ancestor, node)` pairs.
    pub fn relations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (j, anc) in self.ancestors.iter().enumerate() {
            for &k in anc {
                out.push((k, j));
            }
        }
        out
    }

    pub fn descendants(&self, k: usize) -> BTreeSet<usize> {
        (0..self.ancestors.len())
            .filter(|&l| self.ancestors[l].contains(&k))
            .collect()
    }

    /// Markov boundary: parents, children, and the children's other parents.
    pub fn markov_boundary(&self, k: usize) -> BTreeSet<usize> {
        let mut out = self.parents[k].clone();
        for &c in &self.children[k] {
            out.insert(c);
            for &co in &self.parents[c] {
                out.insert(co);
            }
        }
        out.remove(&k);
        out
    }
}

/// Computes ancestor sets (transitive closure of the parent relation) and
/// the causal order for a valid spec.
pub fn ground_truth(spec: &SemSpec) -> GroundTruth {
    let p = spec.p();
    let mut parents = vec![BTreeSet::new(); p];
    let mut children = vec![BTreeSet::new(); p];
    for (j, row) in parents.iter_mut().enumerate() {
        for (k, _) in spec.parents_of(j) {
            row.insert(k);
            children[k].insert(j);
        }
    }
    let mut ancestors = vec![BTreeSet::new(); p];
    for j in 0..p {
        let mut stack: Vec<usize> = parents[j].iter().copied().collect();
        while let Some(k) = stack.pop() {
            if ancestors[j].insert(k) {
                stack.extend(parents[k].iter().copied());
            }
        }
    }
    GroundTruth {
        parents,
        children,
        ancestors,
        causal_order: spec.causal_order().to_vec(),
    }
}

/// The mixing matrix omega = (I - theta)^(-1), mapping noises to observables.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    p: usize,
    omega: Vec<f64>,
}

impl MixingMatrix {
    pub fn p(&self) -> usize {
        self.p
    }

    /// omega[l][k]: weight of noise k in variable l.
    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.omega[l * self.p + k]
    }
}

/// omega rows via forward substitution in causal order:
/// row_j = e_j + sum over parents k of theta[j][k] * row_k.
pub fn mixing_matrix(spec: &SemSpec) -> MixingMatrix {
    let p = spec.p();
    let mut omega = vec![0.0; p * p];
    for &j in spec.causal_order() {
        omega[j * p + j] = 1.0;
        for (k, w) in spec.parents_of(j) {
            for c in 0..p {
                omega[j * p + c] += w * omega[k * p + c];
            }
        }
    }
    MixingMatrix { p, omega }
}

/// An n x p observation matrix, stored column-major; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self, SemError> {
        let p = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * p);
        for (col, data) in columns.iter().enumerate() {
            if data.len() != n {
                return Err(SemError::RaggedData);
            }
            for (row, &v) in data.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SemError::NonFiniteData { row, col });
                }
            }
            values.extend_from_slice(data);
        }
        Ok(DataMatrix { n, p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SemError> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut values = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(SemError::RaggedData);
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SemError::NonFiniteData { row: i, col: j });
                }
                values[j * n + i] = v;
            }
        }
        Ok(DataMatrix { n, p, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.get(i, j)).collect()
    }
}

/// Draws `n` i.i.d. samples from the model. Pure in `(spec, n, seed)`:
/// node `j`'s noise comes from the substream tagged `(SIM_TAG, j)`, so the
/// output is identical no matter how callers schedule their runs.
pub fn simulate(spec: &SemSpec, n: usize, seed: u64) -> DataMatrix {
    assert!(n >= 1, "simulate needs at least one sample");
    let p = spec.p();
    let mut values = vec![0.0; n * p];
    for j in 0..p {
        let mut rng = substream(seed, &[SIM_TAG, j as u64]);
        spec.noise()[j].sample_into(&mut rng, &mut values[j * n..(j + 1) * n]);
    }
    for &j in spec.causal_order() {
        for (k, w) in spec.parents_of(j) {
            // Disjoint column slices regardless of index order.
            let (dst, src): (&mut [f64], &[f64]) = if j > k {
                let (head, tail) = values.split_at_mut(j * n);
                (&mut tail[..n], &head[k * n..k * n + n])
            } else {
                let (head, tail) = values.split_at_mut(k * n);
                (&mut head[j * n..j * n + n], &tail[..n])
            };
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    DataMatrix { n, p, values }
}
