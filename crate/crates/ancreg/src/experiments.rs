//! Simulation studies and Monte-Carlo population oracles.
//!
//! The studies reproduce the two benchmark settings at desk scale: nodewise
//! ancestor detection for one target (mean |z| growth, family-wise error
//! and power curves over a level grid) and full graph recovery under the
//! one- and two-gaussian noise scenarios. The oracles estimate population
//! regression coefficients two independent ways (empirical normal
//! equations vs the partial-regression ratio) so tests can verify the
//! zero-for-non-ancestors property without touching the estimation path
//! under test.

use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::config::StudyKind;
use crate::graph::{find_structure, GraphError};
use crate::multitest::{holm, MultiTestError};
use crate::regression::{DesignFactorization, Nonlinearity, RegressionError};
use crate::rng::{derive_seed, substream};
use crate::sem::{ground_truth, simulate, NoiseFamily, NoiseSpec, SemSpec};

const ANCESTOR_RUN_TAG: u64 = 0x0005_7D01;
const GRAPH_RUN_TAG: u64 = 0x0005_7D02;
const ORACLE_NORMAL_EQ_TAG: u64 = 0x0000_AC01;
const ORACLE_PARTIAL_TAG: u64 = 0x0000_AC02;
const RESIDUAL_TAG: u64 = 0x0000_AC03;
const RANDOM_SPEC_TAG: u64 = 0x0000_AC04;

/// Replicate count used to estimate Monte-Carlo standard errors.
const REPLICATES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("study configuration: {0}")]
    Config(String),
    #[error("node {node} ({family}) lacks the moments required for f = {f}")]
    Moment {
        node: usize,
        family: String,
        f: &'static str,
    },
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    MultiTest(#[from] MultiTestError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

// ---------------------------------------------------------------------
// Reference models and adversarial fixtures
// ---------------------------------------------------------------------

/// The six-node benchmark graph: 1->2, 1->3, 2->4, 3->4, 4->6, 5->6 with
/// unit weights. Noise is uniform on nodes 1-5 and gaussian on node 6;
/// the scales differ per node so that no child's noise matches its
/// parent's inherited contribution in distribution (which would zero the
/// population coefficient and hide the relation).
pub fn reference_spec() -> SemSpec {
    let noise = vec![
        NoiseSpec::uniform(1.0),
        NoiseSpec::uniform(1.4),
        NoiseSpec::uniform(1.4),
        NoiseSpec::uniform(1.9),
        NoiseSpec::uniform(1.5),
        NoiseSpec::gaussian(1.0),
    ];
    SemSpec::from_edges(noise, &reference_edges()).expect("reference spec is a valid DAG")
}

/// Same graph, but nodes 5 and 6 both gaussian: the 5 -> 6 relation then
/// has a zero population coefficient (gaussian-path case) and the graph
/// study plateaus at 9 of 10 detectable relations.
pub fn two_gaussian_spec() -> SemSpec {
    reference_spec()
        .with_noise(4, NoiseSpec::gaussian(1.5))
        .expect("scale unchanged")
}

fn reference_edges() -> Vec<(usize, usize, f64)> {
    vec![
        (0, 1, 1.0),
        (0, 2, 1.0),
        (1, 3, 1.0),
        (2, 3, 1.0),
        (3, 5, 1.0),
        (4, 5, 1.0),
    ]
}

/// Resolves a named scenario to its model.
pub fn scenario_spec(name: &str) -> Option<SemSpec> {
    match name {
        "one-gaussian" => Some(reference_spec()),
        "two-gaussian" => Some(two_gaussian_spec()),
        _ => adversarial_fixtures()
            .into_iter()
            .find(|f| f.name == name)
            .map(|f| f.spec),
    }
}

/// A model where some true ancestor relations are provably undetectable.
#[derive(Debug, Clone)]
pub struct AdversarialFixture {
    pub name: &'static str,
    pub spec: SemSpec,
    /// `(ancestor, node)` pairs whose population coefficient is zero
    /// despite genuine ancestry.
    pub undetectable: Vec<(usize, usize)>,
}

/// The two mechanisms that defeat the scan, realized exactly:
///
/// * `gaussian-path`: every path from the ancestor starts with an edge
///   whose endpoints both carry gaussian noise, so the residual is
///   independent of the target and the z-statistic stays standard normal.
/// * `matched-noise`: the single child's noise equals the inherited parent
///   contribution in distribution, cancelling the coefficient (with no
///   guarantee about the limiting law).
/// * `two-gaussian`: the graph-study variant of `gaussian-path`.
pub fn adversarial_fixtures() -> Vec<AdversarialFixture> {
    let gaussian_path = SemSpec::from_edges(
        vec![
            NoiseSpec::gaussian(1.0),
            NoiseSpec::gaussian(0.7),
            NoiseSpec::uniform(1.1),
        ],
        &[(0, 1, 0.8), (1, 2, 0.9)],
    )
    .expect("valid chain");
    let matched_noise = SemSpec::from_edges(
        vec![
            NoiseSpec::uniform(1.0),
            NoiseSpec::uniform(0.8),
            NoiseSpec::uniform(1.3),
        ],
        // theta * sigma_parent = 0.8 = sigma_child, same family: matched.
        &[(0, 1, 0.8), (1, 2, 1.0)],
    )
    .expect("valid chain");
    vec![
        AdversarialFixture {
            name: "gaussian-path",
            spec: gaussian_path,
            undetectable: vec![(0, 1), (0, 2)],
        },
        AdversarialFixture {
            name: "matched-noise",
            spec: matched_noise,
            undetectable: vec![(0, 1), (0, 2)],
        },
        AdversarialFixture {
            name: "two-gaussian",
            spec: two_gaussian_spec(),
            undetectable: vec![(4, 5)],
        },
    ]
}

/// Draws a random DAG model with 3..=6 nodes: edges over a shuffled order
/// with probability 0.45, weights of magnitude 0.5..1.5 and random sign,
/// noise from the light-tailed families with scales 0.6..1.4.
pub fn random_spec(seed: u64) -> SemSpec {
    use rand::Rng;
    let mut rng = substream(seed, &[RANDOM_SPEC_TAG]);
    let p = rng.random_range(3..=6usize);
    let mut order: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut edges = Vec::new();
    for a in 0..p {
        for b in a + 1..p {
            if rng.random::<f64>() < 0.45 {
                let mag = rng.random_range(0.5..1.5);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                edges.push((order[a], order[b], sign * mag));
            }
        }
    }
    let families = [
        NoiseFamily::Gaussian,
        NoiseFamily::Uniform,
        NoiseFamily::Laplace,
        NoiseFamily::ShiftedExponential,
    ];
    let noise = (0..p)
        .map(|_| {
            let family = families[rng.random_range(0..families.len())];
            NoiseSpec::new(family, rng.random_range(0.6..1.4))
        })
        .collect();
    SemSpec::from_edges(noise, &edges).expect("edges follow a topological order")
}

// ---------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------

/// A resolved study definition.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub spec: SemSpec,
    /// Target node for ancestor studies; ignored by graph studies.
    pub target: Option<usize>,
    pub sample_sizes: Vec<usize>,
    pub runs: usize,
    pub alphas: Vec<f64>,
    pub f: Nonlinearity,
    pub seed: u64,
}

impl StudyConfig {
    fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(ExperimentError::Config("runs must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() {
            return Err(ExperimentError::Config("no sample sizes".into()));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::Config(
                "sample sizes must be strictly increasing".into(),
            ));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(ExperimentError::Config(
                "levels must be a nonempty list of positive values".into(),
            ));
        }
        if let Some(t) = self.target {
            if t >= self.spec.p() {
                return Err(ExperimentError::Config(format!(
                    "target {} outside 0..{}",
                    t,
                    self.spec.p()
                )));
            }
        }
        Ok(())
    }

    fn reference_alpha(&self) -> f64 {
        *self
            .alphas
            .iter()
            .min_by(|a, b| {
                ((**a - 0.05).abs())
                    .partial_cmp(&(**b - 0.05).abs())
                    .unwrap()
            })
            .unwrap()
    }
}

/// Detection rate of one true relation per sample size (at the grid level
/// closest to 5%).
#[derive(Debug, Clone, PartialEq)]
pub struct RelationRate {
    pub ancestor: usize,
    pub descendant: usize,
    pub rate: Vec<f64>,
}

/// Aggregated study output.
#[derive(Debug, Clone)]
pub struct StudyResult {
    pub kind: StudyKind,
    pub sample_sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    /// `[sample size][node]`, `None` at the target (empty for graph runs).
    pub mean_abs_z: Vec<Vec<Option<f64>>>,
    /// `[sample size][level]`: share of runs with any false claim.
    pub fwer_curve: Vec<Vec<f64>>,
    /// `[sample size][level]`: mean fraction of true relations detected.
    pub power_curve: Vec<Vec<f64>>,
    /// Power at the reference level, per sample size.
    pub detected_fraction: Vec<f64>,
    /// Per-relation detection rates (graph studies only).
    pub relation_rates: Vec<RelationRate>,
    pub reference_alpha: f64,
}

/// Nodewise study for one target: per sample size, the mean |z| per
/// candidate across runs plus family-wise error and power curves from the
/// Holm-corrected (uncapped) p-values of each scan.
pub fn run_ancestor_study(config: &StudyConfig) -> Result<StudyResult, ExperimentError> {
    config.validate()?;
    let target = config
        .target
        .ok_or_else(|| ExperimentError::Config("ancestor study needs a target".into()))?;
    let spec = &config.spec;
    let p = spec.p();
    let gt = ground_truth(spec);
    let truth: Vec<bool> = (0..p).map(|k| gt.is_ancestor(k, target)).collect();
    let n_count = config.sample_sizes.len();

    // abs_z and corrected p per (run, sample size, node); NaN at target.
    type ScanStats = Vec<(Vec<f64>, Vec<f64>)>;
    let per_run: Vec<Result<ScanStats, ExperimentError>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let mut out = Vec::with_capacity(n_count);
            for (n_idx, &n) in config.sample_sizes.iter().enumerate() {
                let seed = derive_seed(config.seed, &[ANCESTOR_RUN_TAG, run as u64, n_idx as u64]);
                let data = simulate(spec, n, seed);
                let scan = DesignFactorization::new(&data)?.scan(target, config.f)?;
                let raw: Vec<f64> = scan.hypotheses().map(|(_, _, praw)| praw).collect();
                let corrected = holm(&raw, false)?;
                let mut abs_z = vec![f64::NAN; p];
                let mut corr = vec![f64::NAN; p];
                for ((k, z, _), c) in scan.hypotheses().zip(corrected) {
                    abs_z[k] = z.abs();
                    corr[k] = c;
                }
                out.push((abs_z, corr));
            }
            Ok(out)
        })
        .collect();
    let per_run: Vec<Vec<(Vec<f64>, Vec<f64>)>> = per_run.into_iter().collect::<Result<_, _>>()?;

    let runs = config.runs as f64;
    let n_true = truth.iter().filter(|&&t| t).count();
    let mut mean_abs_z = vec![vec![None; p]; n_count];
    let mut fwer_curve = vec![vec![0.0; config.alphas.len()]; n_count];
    let mut power_curve = vec![vec![0.0; config.alphas.len()]; n_count];
    for n_idx in 0..n_count {
        for (k, slot) in mean_abs_z[n_idx].iter_mut().enumerate() {
            if k == target {
                continue;
            }
            let total: f64 = per_run.iter().map(|r| r[n_idx].0[k]).sum();
            *slot = Some(total / runs);
        }
        for (a_idx, &alpha) in config.alphas.iter().enumerate() {
            let mut false_runs = 0usize;
            let mut power_sum = 0.0;
            for run in &per_run {
                let corr = &run[n_idx].1;
                let mut any_false = false;
                let mut hits = 0usize;
                for k in 0..p {
                    if k == target {
                        continue;
                    }
                    if corr[k] < alpha {
                        if truth[k] {
                            hits += 1;
                        } else {
                            any_false = true;
                        }
                    }
                }
                false_runs += any_false as usize;
                power_sum += if n_true > 0 {
                    hits as f64 / n_true as f64
                } else {
                    1.0
                };
            }
            fwer_curve[n_idx][a_idx] = false_runs as f64 / runs;
            power_curve[n_idx][a_idx] = power_sum / runs;
        }
    }

    let reference_alpha = config.reference_alpha();
    let ref_idx = index_of(&config.alphas, reference_alpha);
    let detected_fraction = (0..n_count).map(|i| power_curve[i][ref_idx]).collect();
    Ok(StudyResult {
        kind: StudyKind::Ancestor,
        sample_sizes: config.sample_sizes.clone(),
        alphas: config.alphas.clone(),
        mean_abs_z,
        fwer_curve,
        power_curve,
        detected_fraction,
        relation_rates: Vec::new(),
        reference_alpha,
    })
}

/// Full-graph study: per run and sample size, all p scans feed one pooled
/// uncapped Holm correction; the structure search then runs at every grid
/// level. Claims are compared against the true ancestor relations.
pub fn run_graph_study(config: &StudyConfig) -> Result<StudyResult, ExperimentError> {
    config.validate()?;
    let spec = &config.spec;
    let p = spec.p();
    let gt = ground_truth(spec);
    let relations = gt.relations();
    let n_count = config.sample_sizes.len();

    // Corrected p-value matrix per (run, sample size).
    let per_run: Vec<Result<Vec<crate::graph::PMatrix>, ExperimentError>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let mut out = Vec::with_capacity(n_count);
            for (n_idx, &n) in config.sample_sizes.iter().enumerate() {
                let seed = derive_seed(config.seed, &[GRAPH_RUN_TAG, run as u64, n_idx as u64]);
                let data = simulate(spec, n, seed);
                let fac = DesignFactorization::new(&data)?;
                let scans = (0..p)
                    .map(|j| fac.scan(j, config.f))
                    .collect::<Result<Vec<_>, _>>()?;
                out.push(crate::multitest::assemble_pmatrix(&scans, false)?);
            }
            Ok(out)
        })
        .collect();
    let per_run: Vec<Vec<crate::graph::PMatrix>> = per_run.into_iter().collect::<Result<_, _>>()?;

    let runs = config.runs as f64;
    let reference_alpha = config.reference_alpha();
    let ref_idx = index_of(&config.alphas, reference_alpha);
    let mut fwer_curve = vec![vec![0.0; config.alphas.len()]; n_count];
    let mut power_curve = vec![vec![0.0; config.alphas.len()]; n_count];
    let mut rel_hits = vec![vec![0usize; n_count]; relations.len()];
    for run in &per_run {
        for (n_idx, pm) in run.iter().enumerate() {
            for (a_idx, &alpha) in config.alphas.iter().enumerate() {
                let (adj, _) = find_structure(pm, alpha);
                let mut any_false = false;
                let mut hits = 0usize;
                for j in 0..p {
                    for k in 0..p {
                        if j != k && adj.get(j, k) && !gt.is_ancestor(k, j) {
                            any_false = true;
                        }
                    }
                }
                for (r_idx, &(k, j)) in relations.iter().enumerate() {
                    if adj.get(j, k) {
                        hits += 1;
                        if a_idx == ref_idx {
                            rel_hits[r_idx][n_idx] += 1;
                        }
                    }
                }
                fwer_curve[n_idx][a_idx] += any_false as usize as f64 / runs;
                power_curve[n_idx][a_idx] += if relations.is_empty() {
                    1.0
                } else {
                    hits as f64 / relations.len() as f64
                } / runs;
            }
        }
    }

    let relation_rates = relations
        .iter()
        .enumerate()
        .map(|(r_idx, &(k, j))| RelationRate {
            ancestor: k,
            descendant: j,
            rate: rel_hits[r_idx].iter().map(|&h| h as f64 / runs).collect(),
        })
        .collect();
    let detected_fraction = (0..n_count).map(|i| power_curve[i][ref_idx]).collect();
    Ok(StudyResult {
        kind: StudyKind::Graph,
        sample_sizes: config.sample_sizes.clone(),
        alphas: config.alphas.clone(),
        mean_abs_z: Vec::new(),
        fwer_curve,
        power_curve,
        detected_fraction,
        relation_rates,
        reference_alpha,
    })
}

fn index_of(alphas: &[f64], value: f64) -> usize {
    alphas
        .iter()
        .position(|&a| a == value)
        .expect("reference level comes from the grid")
}

/// Curve table, one row per (sample size, level).
pub fn curves_to_csv(result: &StudyResult) -> String {
    let mut out = String::from("n,alpha,fwer,power\n");
    for (n_idx, &n) in result.sample_sizes.iter().enumerate() {
        for (a_idx, &alpha) in result.alphas.iter().enumerate() {
            out.push_str(&format!(
                "{n},{alpha},{},{}\n",
                result.fwer_curve[n_idx][a_idx], result.power_curve[n_idx][a_idx]
            ));
        }
    }
    out
}

/// Mean |z| table, one row per (node, sample size); ancestor studies only.
pub fn zstats_to_csv(result: &StudyResult) -> String {
    let mut out = String::from("node,n,mean_abs_z\n");
    for (n_idx, &n) in result.sample_sizes.iter().enumerate() {
        for (k, value) in result.mean_abs_z[n_idx].iter().enumerate() {
            if let Some(z) = value {
                out.push_str(&format!("X{},{n},{z}\n", k + 1));
            }
        }
    }
    out
}

/// JSON summary of a study run.
pub fn summary_to_json(config: &StudyConfig, result: &StudyResult) -> serde_json::Value {
    let relation_rates: Vec<_> = result
        .relation_rates
        .iter()
        .map(|r| {
            json!({
                "ancestor": format!("X{}", r.ancestor + 1),
                "descendant": format!("X{}", r.descendant + 1),
                "rate": r.rate,
            })
        })
        .collect();
    json!({
        "schema": "ancreg/study_summary/v1",
        "kind": result.kind.name(),
        "seed": config.seed,
        "runs": config.runs,
        "f": config.f.name(),
        "target": config.target.map(|t| format!("X{}", t + 1)),
        "sample_sizes": result.sample_sizes,
        "alphas": result.alphas,
        "reference_alpha": result.reference_alpha,
        "detected_fraction": result.detected_fraction,
        "fwer": result.fwer_curve,
        "power": result.power_curve,
        "relation_rates": relation_rates,
    })
}

// ---------------------------------------------------------------------
// Population oracles
// ---------------------------------------------------------------------

/// Two independent Monte-Carlo estimates of the population coefficient
/// vector for the regression of f(X_target) on X, with per-route standard
/// errors from replicate spread.
#[derive(Debug, Clone)]
pub struct PopulationBeta {
    pub target: usize,
    /// Route (i): solve the empirical normal equations per replicate.
    pub normal_eq: Vec<f64>,
    pub normal_eq_err: Vec<f64>,
    /// Route (ii): partial-regression ratio from fresh samples.
    pub partial_reg: Vec<f64>,
    pub partial_reg_err: Vec<f64>,
    pub mc_n: usize,
}

impl PopulationBeta {
    /// Headline estimate (route i).
    pub fn beta(&self) -> &[f64] {
        &self.normal_eq
    }

    pub fn mc_error(&self) -> &[f64] {
        &self.normal_eq_err
    }

    /// Combined standard error of the difference between the two routes.
    pub fn joint_error(&self, k: usize) -> f64 {
        (self.normal_eq_err[k].powi(2) + self.partial_reg_err[k].powi(2)).sqrt()
    }

    /// Do the two routes agree within `sigmas` joint errors everywhere?
    pub fn routes_agree(&self, sigmas: f64) -> bool {
        (0..self.normal_eq.len()).all(|k| {
            (self.normal_eq[k] - self.partial_reg[k]).abs() <= sigmas * self.joint_error(k)
        })
    }
}

fn check_moments(spec: &SemSpec, f: Nonlinearity) -> Result<(), ExperimentError> {
    for (node, noise) in spec.noise().iter().enumerate() {
        if !noise.has_fourth_moment() {
            return Err(ExperimentError::Moment {
                node,
                family: noise.family.to_string(),
                f: "any scan (fourth moments required)",
            });
        }
        if f == Nonlinearity::Cube && !noise.has_sixth_moment() {
            return Err(ExperimentError::Moment {
                node,
                family: noise.family.to_string(),
                f: "cube",
            });
        }
    }
    Ok(())
}

/// Raw second-moment accumulator: M = x'x and w = x'f(x_target).
struct Moments {
    m: Vec<f64>,
    w: Vec<f64>,
    p: usize,
}

fn replicate_moments(
    spec: &SemSpec,
    target: usize,
    f: Nonlinearity,
    n: usize,
    seed: u64,
) -> Moments {
    let data = simulate(spec, n, seed);
    let p = spec.p();
    let col_t = data.column(target);
    let sd = {
        let mean = col_t.iter().sum::<f64>() / n as f64;
        (col_t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt()
    };
    let fv = fapply(f, col_t, sd);
    let mut m = vec![0.0; p * p];
    let mut w = vec![0.0; p];
    for a in 0..p {
        let ca = data.column(a);
        for b in a..p {
            let dot: f64 = ca.iter().zip(data.column(b)).map(|(x, y)| x * y).sum();
            m[a * p + b] = dot;
            m[b * p + a] = dot;
        }
        w[a] = ca.iter().zip(&fv).map(|(x, y)| x * y).sum();
    }
    Moments { m, w, p }
}

fn fapply(f: Nonlinearity, col: &[f64], sd: f64) -> Vec<f64> {
    match f {
        Nonlinearity::Cube => col.iter().map(|v| v * v * v).collect(),
        Nonlinearity::SignSquare => col.iter().map(|v| v * v.abs()).collect(),
        Nonlinearity::Tanh => {
            let s = if sd > 0.0 { sd } else { 1.0 };
            col.iter().map(|v| s * (v / s).tanh()).collect()
        }
        Nonlinearity::Identity => col.to_vec(),
    }
}

/// Gaussian elimination with partial pivoting; `a` is p x p row-major.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let p = b.len();
    debug_assert_eq!(a.len(), p * p);
    for col in 0..p {
        let pivot_row = (col..p)
            .max_by(|&r, &s| {
                a[r * p + col]
                    .abs()
                    .partial_cmp(&a[s * p + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot_row * p + col].abs() < 1e-12 {
            return None;
        }
        if pivot_row != col {
            for c in 0..p {
                a.swap(col * p + c, pivot_row * p + c);
            }
            b.swap(col, pivot_row);
        }
        for r in col + 1..p {
            let factor = a[r * p + col] / a[col * p + col];
            if factor != 0.0 {
                for c in col..p {
                    a[r * p + c] -= factor * a[col * p + c];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; p];
    for r in (0..p).rev() {
        let mut acc = b[r];
        for c in r + 1..p {
            acc -= a[r * p + c] * x[c];
        }
        x[r] = acc / a[r * p + r];
    }
    Some(x)
}

fn mean_and_se(replicates: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let r = replicates.len();
    let p = replicates[0].len();
    let mut mean = vec![0.0; p];
    for rep in replicates {
        for (m, v) in mean.iter_mut().zip(rep) {
            *m += v / r as f64;
        }
    }
    let mut se = vec![0.0; p];
    for rep in replicates {
        for k in 0..p {
            se[k] += (rep[k] - mean[k]).powi(2);
        }
    }
    for s in se.iter_mut() {
        *s = (*s / (r - 1) as f64 / r as f64).sqrt();
    }
    (mean, se)
}

/// Monte-Carlo estimate of the population coefficients of f(X_target) on X.
///
/// `mc_n` samples are split over [`REPLICATES`] replicates per route; the
/// two routes draw disjoint substreams so their agreement genuinely
/// cross-checks the partial-regression identity.
pub fn population_beta_oracle(
    spec: &SemSpec,
    target: usize,
    f: Nonlinearity,
    mc_n: usize,
    seed: u64,
) -> Result<PopulationBeta, ExperimentError> {
    check_moments(spec, f)?;
    let p = spec.p();
    if target >= p {
        return Err(ExperimentError::Config(format!(
            "target {target} outside 0..{p}"
        )));
    }
    let per_rep = (mc_n / REPLICATES).max(p + 1);

    let normal_eq_reps: Vec<Vec<f64>> = (0..REPLICATES)
        .into_par_iter()
        .map(|rep| {
            let mom = replicate_moments(
                spec,
                target,
                f,
                per_rep,
                derive_seed(seed, &[ORACLE_NORMAL_EQ_TAG, rep as u64]),
            );
            solve_dense(mom.m.clone(), mom.w.clone()).expect("moment matrix is full rank")
        })
        .collect();

    let partial_reps: Vec<Vec<f64>> = (0..REPLICATES)
        .into_par_iter()
        .map(|rep| {
            let mom = replicate_moments(
                spec,
                target,
                f,
                per_rep,
                derive_seed(seed, &[ORACLE_PARTIAL_TAG, rep as u64]),
            );
            (0..p)
                .map(|k| partial_regression_beta(&mom, k))
                .collect::<Vec<f64>>()
        })
        .collect();

    let (normal_eq, normal_eq_err) = mean_and_se(&normal_eq_reps);
    let (partial_reg, partial_reg_err) = mean_and_se(&partial_reps);
    Ok(PopulationBeta {
        target,
        normal_eq,
        normal_eq_err,
        partial_reg,
        partial_reg_err,
        mc_n,
    })
}

/// beta_k = E(Z_k f(X_j)) / E(Z_k^2) where Z_k is X_k minus its least
/// squares projection on the remaining coordinates, all in raw moments.
fn partial_regression_beta(mom: &Moments, k: usize) -> f64 {
    let p = mom.p;
    let others: Vec<usize> = (0..p).filter(|&a| a != k).collect();
    let d = others.len();
    let mut sub = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    for (ai, &a) in others.iter().enumerate() {
        for (bi, &b) in others.iter().enumerate() {
            sub[ai * d + bi] = mom.m[a * p + b];
        }
        rhs[ai] = mom.m[a * p + k];
    }
    let gamma = solve_dense(sub, rhs).expect("moment matrix is full rank");
    // E(Z f) = w_k - gamma' w_{-k};  E(Z^2) = M_kk - gamma' M_{-k,k}.
    let mut zf = mom.w[k];
    let mut zz = mom.m[k * p + k];
    for (ai, &a) in others.iter().enumerate() {
        zf -= gamma[ai] * mom.w[a];
        zz -= gamma[ai] * mom.m[a * p + k];
    }
    zf / zz
}

/// Monte-Carlo view of the residual decomposition for node `k` against
/// target `j`: gamma (projection of X_k on the rest), zeta (projection of
/// f(X_j) on the rest), the correlation of the residual with f(X_j), and
/// sample paths of the residual pair from the final replicate.
#[derive(Debug, Clone)]
pub struct ResidualRep {
    pub node: usize,
    pub target: usize,
    /// Indices the gamma/zeta entries refer to (all nodes except `node`).
    pub others: Vec<usize>,
    pub gamma: Vec<f64>,
    pub gamma_err: Vec<f64>,
    pub zeta: Vec<f64>,
    pub zeta_err: Vec<f64>,
    /// corr(Z_k, f(X_j)) with replicate standard error.
    pub z_f_corr: f64,
    pub z_f_corr_err: f64,
    pub z_samples: Vec<f64>,
    pub w_samples: Vec<f64>,
}

/// Estimates gamma_k / zeta_k by population least squares and the residual
/// correlation with f(X_j); `mc_n` is split over [`REPLICATES`] replicates.
pub fn residual_representation(
    spec: &SemSpec,
    node: usize,
    target: usize,
    f: Nonlinearity,
    mc_n: usize,
    seed: u64,
) -> Result<ResidualRep, ExperimentError> {
    check_moments(spec, f)?;
    let p = spec.p();
    if node >= p || target >= p {
        return Err(ExperimentError::Config(format!(
            "node {node} / target {target} outside 0..{p}"
        )));
    }
    let per_rep = (mc_n / REPLICATES).max(p + 1);
    let others: Vec<usize> = (0..p).filter(|&a| a != node).collect();
    let d = others.len();

    let mut gamma_reps = Vec::with_capacity(REPLICATES);
    let mut zeta_reps = Vec::with_capacity(REPLICATES);
    let mut corr_reps = Vec::with_capacity(REPLICATES);
    let mut z_samples = Vec::new();
    let mut w_samples = Vec::new();
    for rep in 0..REPLICATES {
        let rep_seed = derive_seed(seed, &[RESIDUAL_TAG, rep as u64]);
        let mom = replicate_moments(spec, target, f, per_rep, rep_seed);
        let mut sub = vec![0.0; d * d];
        let mut rhs_gamma = vec![0.0; d];
        let mut rhs_zeta = vec![0.0; d];
        for (ai, &a) in others.iter().enumerate() {
            for (bi, &b) in others.iter().enumerate() {
                sub[ai * d + bi] = mom.m[a * p + b];
            }
            rhs_gamma[ai] = mom.m[a * p + node];
            rhs_zeta[ai] = mom.w[a];
        }
        let gamma = solve_dense(sub.clone(), rhs_gamma).expect("moment matrix is full rank");
        let zeta = solve_dense(sub, rhs_zeta).expect("moment matrix is full rank");

        // Residual second moments from the same replicate's raw moments.
        let mut zf = mom.w[node];
        let mut zz = mom.m[node * p + node];
        for (ai, &a) in others.iter().enumerate() {
            zf -= gamma[ai] * mom.w[a];
            zz -= gamma[ai] * mom.m[a * p + node];
        }
        // E f(X_j)^2 via a fresh pass over this replicate's data.
        let data = simulate(spec, per_rep, rep_seed);
        let col_t = data.column(target);
        let sd = {
            let mean = col_t.iter().sum::<f64>() / per_rep as f64;
            (col_t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_rep as f64).sqrt()
        };
        let fv = fapply(f, col_t, sd);
        let ff: f64 = fv.iter().map(|v| v * v).sum();
        corr_reps.push(vec![zf / (zz * ff).sqrt()]);
        gamma_reps.push(gamma.clone());
        zeta_reps.push(zeta.clone());

        if rep + 1 == REPLICATES {
            z_samples = (0..per_rep)
                .map(|i| {
                    let mut z = data.get(i, node);
                    for (ai, &a) in others.iter().enumerate() {
                        z -= gamma[ai] * data.get(i, a);
                    }
                    z
                })
                .collect();
            w_samples = (0..per_rep)
                .map(|i| {
                    let mut w = fv[i];
                    for (ai, &a) in others.iter().enumerate() {
                        w -= zeta[ai] * data.get(i, a);
                    }
                    w
                })
                .collect();
        }
    }

    let (gamma, gamma_err) = mean_and_se(&gamma_reps);
    let (zeta, zeta_err) = mean_and_se(&zeta_reps);
    let (corr, corr_err) = mean_and_se(&corr_reps);
    Ok(ResidualRep {
        node,
        target,
        others,
        gamma,
        gamma_err,
        zeta,
        zeta_err,
        z_f_corr: corr[0],
        z_f_corr_err: corr_err[0],
        z_samples,
        w_samples,
    })
}
