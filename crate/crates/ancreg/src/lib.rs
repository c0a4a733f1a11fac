//! Ancestor regression for linear structural equation models.
//!
//! The core idea: regress a nonlinear transform of a target variable on all
//! observed variables (target included). In a linear SEM with independent
//! centered noises, the population coefficient of every non-ancestor is
//! exactly zero, so the usual z-test per covariate yields calibrated
//! p-values for "is an ancestor of the target". Holm correction over all
//! node pairs plus a cycle-driven tightening of the significance level turn
//! the nodewise tests into an acyclic, transitively closed ancestor graph.
//!
//! Modules:
//! - [`sem`]: model specification, validation, ground truth, simulation
//! - [`regression`]: least squares, ancestor scans, parent t-tests
//! - [`multitest`]: Holm correction and the pooled p-value matrix
//! - [`graph`]: graph assembly with cycle-driven level tightening
//! - [`experiments`]: simulation studies and population oracles
//! - [`config`]: plain-text model and study configuration files

pub mod config;
pub mod experiments;
pub mod graph;
pub mod multitest;
pub mod regression;
pub mod rng;
pub mod sem;
pub mod stats;

pub use graph::{detect_graph, Adjacency, GraphResult, PMatrix};
pub use multitest::{assemble_pmatrix, holm, CorrectedPValues};
pub use regression::{ancestor_scan, ols, parent_tests, AncestorScan, Nonlinearity, OlsFit};
pub use sem::{
    ground_truth, mixing_matrix, simulate, validate_dag, DataMatrix, GroundTruth, NoiseFamily,
    NoiseSpec, SemSpec,
};
pub use stats::{ln_pvalue_from_z, pvalue_from_z};
