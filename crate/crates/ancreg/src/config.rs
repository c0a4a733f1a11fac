//! Plain-text configuration files.
//!
//! A model file names the node count, an edge list, and per-node noise
//! (node ids are 1-based in files, 0-based in code):
//!
//! ```text
//! p = 6
//!
//! [edges]
//! 1 -> 2 : 1.0
//!
//! [noise]
//! 1 = uniform, sigma = 1.0
//! 2 = student_t(8), sigma = 0.5
//! ```
//!
//! Study files are flat key-value documents, see [`parse_study_file`].

use thiserror::Error;

use crate::regression::Nonlinearity;
use crate::sem::{NoiseFamily, NoiseSpec, SemError, SemSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] SemError),
}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Syntax {
        line,
        msg: msg.into(),
    }
}

/// Strips comments and blank lines; yields (1-based line number, content).
fn meaningful_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_node(token: &str, p: usize, line: usize) -> Result<usize, ConfigError> {
    let id: usize = token
        .trim()
        .parse()
        .map_err(|_| err(line, format!("expected a node id, got '{token}'")))?;
    if id == 0 || id > p {
        return Err(err(line, format!("node id {id} outside 1..={p}")));
    }
    Ok(id - 1)
}

fn parse_family(token: &str, line: usize) -> Result<NoiseFamily, ConfigError> {
    let token = token.trim();
    if let Some(rest) = token.strip_prefix("student_t") {
        let inner = rest
            .trim()
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| err(line, "student_t needs degrees of freedom: student_t(df)"))?;
        let df: f64 = inner
            .trim()
            .parse()
            .map_err(|_| err(line, format!("bad degrees of freedom '{inner}'")))?;
        return Ok(NoiseFamily::StudentT { df });
    }
    match token {
        "gaussian" => Ok(NoiseFamily::Gaussian),
        "uniform" => Ok(NoiseFamily::Uniform),
        "laplace" => Ok(NoiseFamily::Laplace),
        "shifted_exponential" => Ok(NoiseFamily::ShiftedExponential),
        other => Err(err(line, format!("unknown noise family '{other}'"))),
    }
}

/// Parses a model document; see the module docs for the format.
pub fn parse_sem_spec(text: &str) -> Result<SemSpec, ConfigError> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Edges,
        Noise,
    }
    let mut section = Section::Preamble;
    let mut p: Option<usize> = None;
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut noise: Vec<Option<NoiseSpec>> = Vec::new();
    let mut last_line = 0;

    for (line, content) in meaningful_lines(text) {
        last_line = line;
        match content {
            "[edges]" => {
                if p.is_none() {
                    return Err(err(line, "p = <count> must come before any section"));
                }
                section = Section::Edges;
                continue;
            }
            "[noise]" => {
                if p.is_none() {
                    return Err(err(line, "p = <count> must come before any section"));
                }
                section = Section::Noise;
                continue;
            }
            other if other.starts_with('[') => {
                return Err(err(line, format!("unknown section '{other}'")));
            }
            _ => {}
        }
        match section {
            Section::Preamble => {
                let (key, value) = content
                    .split_once('=')
                    .ok_or_else(|| err(line, "expected 'p = <count>'"))?;
                if key.trim() != "p" {
                    return Err(err(line, format!("unknown key '{}'", key.trim())));
                }
                let count: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| err(line, format!("bad node count '{}'", value.trim())))?;
                if count == 0 {
                    return Err(err(line, "node count must be at least 1"));
                }
                if p.replace(count).is_some() {
                    return Err(err(line, "p given twice"));
                }
                noise = vec![None; count];
            }
            Section::Edges => {
                let p = p.unwrap();
                let (lhs, weight) = content
                    .split_once(':')
                    .ok_or_else(|| err(line, "expected '<k> -> <j> : <weight>'"))?;
                let (from, to) = lhs
                    .split_once("->")
                    .ok_or_else(|| err(line, "expected '<k> -> <j> : <weight>'"))?;
                let k = parse_node(from, p, line)?;
                let j = parse_node(to, p, line)?;
                if k == j {
                    return Err(err(line, format!("self-edge on node {}", k + 1)));
                }
                let w: f64 = weight
                    .trim()
                    .parse()
                    .map_err(|_| err(line, format!("bad weight '{}'", weight.trim())))?;
                if w == 0.0 || !w.is_finite() {
                    return Err(err(line, "edge weight must be nonzero and finite"));
                }
                if edges.iter().any(|&(a, b, _)| a == k && b == j) {
                    return Err(err(line, format!("duplicate edge {} -> {}", k + 1, j + 1)));
                }
                edges.push((k, j, w));
            }
            Section::Noise => {
                let p = p.unwrap();
                let (node, rest) = content
                    .split_once('=')
                    .ok_or_else(|| err(line, "expected '<node> = <family>, sigma = <value>'"))?;
                let j = parse_node(node, p, line)?;
                let (family_tok, sigma_tok) = rest
                    .split_once(',')
                    .ok_or_else(|| err(line, "expected '<family>, sigma = <value>'"))?;
                let family = parse_family(family_tok, line)?;
                let sigma_val = sigma_tok
                    .split_once('=')
                    .filter(|(k, _)| k.trim() == "sigma")
                    .map(|(_, v)| v.trim())
                    .ok_or_else(|| err(line, "expected 'sigma = <value>'"))?;
                let sigma: f64 = sigma_val
                    .parse()
                    .map_err(|_| err(line, format!("bad sigma '{sigma_val}'")))?;
                if noise[j].replace(NoiseSpec::new(family, sigma)).is_some() {
                    return Err(err(
                        line,
                        format!("duplicate noise entry for node {}", j + 1),
                    ));
                }
            }
        }
    }

    let Some(p) = p else {
        return Err(err(last_line.max(1), "missing 'p = <count>'"));
    };
    let noise: Vec<NoiseSpec> = noise
        .into_iter()
        .enumerate()
        .map(|(j, n)| n.ok_or_else(|| err(last_line, format!("missing noise for node {}", j + 1))))
        .collect::<Result<_, _>>()?;
    let _ = p;
    Ok(SemSpec::from_edges(noise, &edges)?)
}

/// Canonical text form; `parse_sem_spec(write_sem_spec(s))` reproduces `s`.
pub fn write_sem_spec(spec: &SemSpec) -> String {
    let mut out = format!("p = {}\n\n[edges]\n", spec.p());
    for (k, j, w) in spec.edges() {
        out.push_str(&format!("{} -> {} : {}\n", k + 1, j + 1, w));
    }
    out.push_str("\n[noise]\n");
    for (j, n) in spec.noise().iter().enumerate() {
        out.push_str(&format!("{} = {}, sigma = {}\n", j + 1, n.family, n.scale));
    }
    out
}

/// Which study a configuration drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Ancestor,
    Graph,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Ancestor => "ancestor",
            StudyKind::Graph => "graph",
        }
    }
}

/// A parsed study file; the model is still a reference (scenario name or
/// path) that the caller resolves.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyFile {
    pub kind: StudyKind,
    pub scenario: Option<String>,
    pub spec_file: Option<String>,
    /// 0-based target node (ancestor studies).
    pub target: Option<usize>,
    pub sample_sizes: Vec<usize>,
    pub runs: usize,
    pub alphas: Vec<f64>,
    pub f: Nonlinearity,
    pub seed: u64,
}

/// Parses a flat `key = value` study document.
pub fn parse_study_file(text: &str) -> Result<StudyFile, ConfigError> {
    let mut kind = None;
    let mut scenario = None;
    let mut spec_file = None;
    let mut target_raw: Option<usize> = None;
    let mut sample_sizes = Vec::new();
    let mut runs = None;
    let mut alphas = Vec::new();
    let mut f = Nonlinearity::Cube;
    let mut seed = 1u64;
    let mut last_line = 1;

    for (line, content) in meaningful_lines(text) {
        last_line = line;
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, "expected 'key = value'"))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "study" => {
                kind = Some(match value {
                    "ancestor" => StudyKind::Ancestor,
                    "graph" => StudyKind::Graph,
                    other => return Err(err(line, format!("unknown study kind '{other}'"))),
                })
            }
            "scenario" => scenario = Some(value.to_string()),
            "spec_file" => spec_file = Some(value.to_string()),
            "target" => {
                let id: usize = value
                    .parse()
                    .map_err(|_| err(line, format!("bad target '{value}'")))?;
                if id == 0 {
                    return Err(err(line, "target is 1-based"));
                }
                target_raw = Some(id - 1);
            }
            "sample_sizes" => {
                for tok in value.split(',') {
                    let n: usize = tok
                        .trim()
                        .parse()
                        .map_err(|_| err(line, format!("bad sample size '{}'", tok.trim())))?;
                    sample_sizes.push(n);
                }
            }
            "runs" => {
                runs = Some(
                    value
                        .parse()
                        .map_err(|_| err(line, format!("bad run count '{value}'")))?,
                )
            }
            "alphas" => {
                for tok in value.split(',') {
                    let a: f64 = tok
                        .trim()
                        .parse()
                        .map_err(|_| err(line, format!("bad level '{}'", tok.trim())))?;
                    alphas.push(a);
                }
            }
            "f" => {
                f = Nonlinearity::parse(value)
                    .ok_or_else(|| err(line, format!("unknown nonlinearity '{value}'")))?
            }
            "seed" => {
                seed = value
                    .parse()
                    .map_err(|_| err(line, format!("bad seed '{value}'")))?
            }
            other => return Err(err(line, format!("unknown key '{other}'"))),
        }
    }

    let kind = kind.ok_or_else(|| err(last_line, "missing 'study = ancestor|graph'"))?;
    if scenario.is_some() == spec_file.is_some() {
        return Err(err(
            last_line,
            "exactly one of 'scenario' or 'spec_file' is required",
        ));
    }
    if kind == StudyKind::Ancestor && target_raw.is_none() {
        return Err(err(last_line, "ancestor studies need a 'target'"));
    }
    if sample_sizes.is_empty() {
        return Err(err(last_line, "missing 'sample_sizes'"));
    }
    if sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(err(last_line, "sample sizes must be strictly increasing"));
    }
    let runs = runs.ok_or_else(|| err(last_line, "missing 'runs'"))?;
    if runs == 0 {
        return Err(err(last_line, "runs must be at least 1"));
    }
    if alphas.is_empty() {
        return Err(err(last_line, "missing 'alphas'"));
    }
    if alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(err(last_line, "levels must be positive"));
    }
    Ok(StudyFile {
        kind,
        scenario,
        spec_file,
        target: target_raw,
        sample_sizes,
        runs,
        alphas,
        f,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::reference_spec;

    #[test]
    fn parses_minimal_spec() {
        let spec = parse_sem_spec(
            "p = 2\n[edges]\n1 -> 2 : 0.5\n[noise]\n1 = uniform, sigma = 1.0\n2 = gaussian, sigma = 0.7\n",
        )
        .unwrap();
        assert_eq!(spec.p(), 2);
        assert_eq!(spec.theta(1, 0), 0.5);
        assert_eq!(spec.noise()[1], NoiseSpec::gaussian(0.7));
    }

    #[test]
    fn round_trips_reference_spec() {
        let spec = reference_spec();
        let text = write_sem_spec(&spec);
        let back = parse_sem_spec(&text).unwrap();
        assert_eq!(spec, back);
        // And the canonical form is a fixed point.
        assert_eq!(text, write_sem_spec(&back));
    }

    #[test]
    fn round_trips_student_t_and_odd_weights() {
        let spec = SemSpec::from_edges(
            vec![
                NoiseSpec::new(NoiseFamily::StudentT { df: 8.5 }, 0.3),
                NoiseSpec::new(NoiseFamily::Laplace, 1.25),
                NoiseSpec::new(NoiseFamily::ShiftedExponential, 2.0),
            ],
            &[(0, 1, -0.12345678901234567), (1, 2, 1e-4)],
        )
        .unwrap();
        assert_eq!(parse_sem_spec(&write_sem_spec(&spec)).unwrap(), spec);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_sem_spec("p = 2\n[edges]\n1 -> 5 : 1.0\n").unwrap_err();
        assert_eq!(
            e,
            ConfigError::Syntax {
                line: 3,
                msg: "node id 5 outside 1..=2".into()
            }
        );
        let e = parse_sem_spec("p = 1\n[noise]\nnope\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 3, .. }));
    }

    #[test]
    fn cyclic_spec_is_a_model_error() {
        let text = "p = 2\n[edges]\n1 -> 2 : 1.0\n2 -> 1 : 1.0\n[noise]\n1 = uniform, sigma = 1\n2 = uniform, sigma = 1\n";
        match parse_sem_spec(text).unwrap_err() {
            ConfigError::Model(SemError::Cycle(path)) => assert_eq!(path, vec![0, 1, 0]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_noise_is_reported() {
        let e = parse_sem_spec("p = 2\n[noise]\n1 = uniform, sigma = 1\n").unwrap_err();
        assert!(e.to_string().contains("missing noise for node 2"));
    }

    #[test]
    fn study_file_happy_path() {
        let text = "study = ancestor\nscenario = one-gaussian\ntarget = 4\n\
                    sample_sizes = 100, 1000\nruns = 10\nalphas = 0.01, 0.05\nseed = 7\n";
        let s = parse_study_file(text).unwrap();
        assert_eq!(s.kind, StudyKind::Ancestor);
        assert_eq!(s.target, Some(3));
        assert_eq!(s.sample_sizes, vec![100, 1000]);
        assert_eq!(s.f, Nonlinearity::Cube);
    }

    #[test]
    fn study_file_validation() {
        let base =
            "study = graph\nscenario = one-gaussian\nsample_sizes = 100, 1000\nalphas = 0.05\n";
        assert!(parse_study_file(&format!("{base}runs = 0\n"))
            .unwrap_err()
            .to_string()
            .contains("runs"));
        let shuffled =
            "study = graph\nscenario = x\nsample_sizes = 1000, 100\nruns = 2\nalphas = 0.05\n";
        assert!(parse_study_file(shuffled)
            .unwrap_err()
            .to_string()
            .contains("strictly increasing"));
        let both = "study = graph\nscenario = x\nspec_file = y\nsample_sizes = 10, 20\nruns = 1\nalphas = 0.05\n";
        assert!(parse_study_file(both).is_err());
    }
}
