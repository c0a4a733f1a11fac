//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ancreg::config::{parse_sem_spec, parse_study_file, StudyKind};
use ancreg::experiments::{
    curves_to_csv, run_ancestor_study, run_graph_study, scenario_spec, summary_to_json,
    zstats_to_csv, StudyConfig,
};
use ancreg::graph::{detect_graph_with, GraphResult};
use ancreg::multitest::holm;
use ancreg::regression::{parent_tests, DesignFactorization, Nonlinearity, ParentReport};
use ancreg::sem::simulate;
use serde_json::json;

use crate::dataset::{ingest_csv, Dataset, IngestOptions};
use crate::manifest::RunManifest;
use crate::{write_atomic, CliError};

fn parse_f(token: &str) -> Result<Nonlinearity, CliError> {
    Nonlinearity::parse(token).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown nonlinearity '{token}' (expected cube, sign-square, tanh, or identity)"
        ))
    })
}

fn load_datasets(
    paths: &[PathBuf],
    env_column: Option<&str>,
    has_header: bool,
) -> Result<Vec<Dataset>, CliError> {
    if env_column.is_some() && paths.len() > 1 {
        return Err(CliError::Usage(
            "--env-column works with a single input file".into(),
        ));
    }
    let mut out = Vec::new();
    for path in paths {
        let options = IngestOptions {
            has_header,
            env_column: env_column.map(str::to_string),
        };
        let mut sets = ingest_csv(path, &options).map_err(|e| CliError::Data(e.to_string()))?;
        if env_column.is_none() && paths.len() > 1 {
            // One file per environment; label by file stem.
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "env".into());
            for set in &mut sets {
                set.environment = Some(label.clone());
            }
        }
        out.append(&mut sets);
    }
    Ok(out)
}

fn resolve_target(dataset: &Dataset, token: &str) -> Result<usize, CliError> {
    dataset.column_index(token).ok_or_else(|| {
        CliError::Usage(format!(
            "target '{token}' is not a column (columns: {})",
            dataset.column_names.join(", ")
        ))
    })
}

fn shape_hint(e: ancreg::regression::RegressionError) -> CliError {
    match e {
        ancreg::regression::RegressionError::ShapeError { n, p } => CliError::Numeric(format!(
            "{e}: the scan needs more rows than columns; this dataset has {n} rows for {p} columns"
        )),
        other => CliError::Numeric(other.to_string()),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    write_atomic(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

// -------------------------------------------------------------------
// simulate
// -------------------------------------------------------------------

pub fn cmd_simulate(spec: &Path, n: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("sample count must be at least 1".into()));
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| CliError::Data(format!("{}: {e}", spec.display())))?;
    let model =
        parse_sem_spec(&text).map_err(|e| CliError::Data(format!("{}: {e}", spec.display())))?;
    let data = simulate(&model, n, seed);

    let mut csv = (1..=model.p())
        .map(|j| format!("X{j}"))
        .collect::<Vec<_>>()
        .join(",");
    csv.push('\n');
    for i in 0..n {
        let row = (0..model.p())
            .map(|j| data.get(i, j).to_string())
            .collect::<Vec<_>>()
            .join(",");
        csv.push_str(&row);
        csv.push('\n');
    }
    write_output(out, &csv)?;
    RunManifest::new(
        "simulate",
        &[text.as_bytes(), &n.to_le_bytes(), &seed.to_le_bytes()],
        Some(seed),
    )
    .write_sidecar(out)
    .map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "wrote {} ({} rows, {} columns)",
        out.display(),
        n,
        model.p()
    );
    Ok(())
}

// -------------------------------------------------------------------
// ancestors
// -------------------------------------------------------------------

pub struct AncestorsArgs<'a> {
    pub data: &'a Path,
    pub target: &'a str,
    pub alpha: f64,
    pub f: &'a str,
    pub cap: bool,
    pub center: bool,
    pub has_header: bool,
    pub out_dir: Option<&'a Path>,
}

pub fn cmd_ancestors(args: &AncestorsArgs) -> Result<(), CliError> {
    if !(args.alpha.is_finite() && args.alpha > 0.0) {
        return Err(CliError::Usage("--alpha must be positive".into()));
    }
    let f = parse_f(args.f)?;
    let dataset = load_datasets(&[args.data.to_path_buf()], None, args.has_header)?
        .pop()
        .expect("single dataset");
    let target = resolve_target(&dataset, args.target)?;
    let fac =
        DesignFactorization::with_centering(&dataset.data, args.center).map_err(shape_hint)?;
    let scan = fac.scan(target, f).map_err(shape_hint)?;
    let raw: Vec<f64> = scan.hypotheses().map(|(_, _, p)| p).collect();
    let corrected = holm(&raw, args.cap).map_err(|e| CliError::Numeric(e.to_string()))?;

    println!(
        "ancestors of {} (f = {}, alpha = {}, n = {})",
        dataset.column_names[target],
        f.name(),
        args.alpha,
        dataset.data.n()
    );
    println!(
        "{:<12} {:>12} {:>14} {:>14}  significant",
        "candidate", "z", "p_raw", "p_corrected"
    );
    let mut tests = Vec::new();
    for ((k, z, p_raw), p_corr) in scan.hypotheses().zip(&corrected) {
        let significant = *p_corr < args.alpha;
        println!(
            "{:<12} {:>12.4} {:>14.4e} {:>14.4e}  {}",
            dataset.column_names[k],
            z,
            p_raw,
            p_corr,
            if significant { "yes" } else { "no" }
        );
        tests.push(json!({
            "candidate": dataset.column_names[k],
            "z": z,
            "p_raw": p_raw,
            "p_corrected": p_corr,
            "significant": significant,
        }));
    }

    if let Some(dir) = args.out_dir {
        ensure_out_dir(dir)?;
        let report = json!({
            "schema": "ancreg/ancestors_report/v1",
            "target": dataset.column_names[target],
            "alpha": args.alpha,
            "f": f.name(),
            "capped": args.cap,
            "centered": args.center,
            "n": dataset.data.n(),
            "tests": tests,
        });
        let path = dir.join("ancestors.json");
        write_output(&path, &format!("{report:#}\n"))?;
        RunManifest::new(
            "ancestors",
            &[&std::fs::read(args.data).unwrap_or_default()],
            None,
        )
        .write_sidecar(&path)
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}

// -------------------------------------------------------------------
// graph
// -------------------------------------------------------------------

pub struct GraphArgs<'a> {
    pub data: &'a [PathBuf],
    pub env_column: Option<&'a str>,
    pub alpha: f64,
    pub f: &'a str,
    pub cap: bool,
    pub center: bool,
    pub has_header: bool,
    pub out_dir: Option<&'a Path>,
}

struct EnvReport {
    label: String,
    result: GraphResult,
    parents: Vec<ParentReport>,
    n: usize,
}

pub fn cmd_graph(args: &GraphArgs) -> Result<(), CliError> {
    if !(args.alpha.is_finite() && args.alpha > 0.0) {
        return Err(CliError::Usage("--alpha must be positive".into()));
    }
    let f = parse_f(args.f)?;
    let datasets = load_datasets(args.data, args.env_column, args.has_header)?;
    let names = datasets[0].column_names.clone();
    for d in &datasets {
        if d.column_names != names {
            return Err(CliError::Data(format!(
                "environment '{}' has different columns",
                d.environment.as_deref().unwrap_or("?")
            )));
        }
    }

    let mut reports = Vec::new();
    for dataset in &datasets {
        let label = dataset
            .environment
            .clone()
            .unwrap_or_else(|| "all".to_string());
        let result = detect_graph_with(&dataset.data, args.alpha, f, args.cap, args.center)
            .map_err(|e| match e {
                ancreg::graph::GraphError::Regression(r) => shape_hint(r),
                other => CliError::Numeric(other.to_string()),
            })?;
        let mut parents = Vec::new();
        for (j, ancestors) in result.ancestors.iter().enumerate() {
            if ancestors.is_empty() || ancestors.len() >= dataset.data.n() {
                continue;
            }
            let list: Vec<usize> = ancestors.iter().copied().collect();
            parents.push(
                parent_tests(&dataset.data, j, &list)
                    .map_err(|e| CliError::Numeric(e.to_string()))?,
            );
        }
        reports.push(EnvReport {
            label,
            result,
            parents,
            n: dataset.data.n(),
        });
    }

    for report in &reports {
        let check = match report.result.model_check_p_value() {
            Ok(p) => format!("{p:.4e}"),
            Err(_) => "n/a (uncapped)".into(),
        };
        println!(
            "environment {}: n = {}, alpha_hat = {:.4e}, tightened = {}, model check p = {}",
            report.label, report.n, report.result.alpha_hat, report.result.tightened, check
        );
        for (j, ancestors) in report.result.ancestors.iter().enumerate() {
            if !ancestors.is_empty() {
                let list: Vec<&str> = ancestors.iter().map(|&k| names[k].as_str()).collect();
                println!("  {} <- {{{}}}", names[j], list.join(", "));
            }
        }
    }

    if let Some(dir) = args.out_dir {
        ensure_out_dir(dir)?;
        for report in &reports {
            let stem = sanitize(&report.label);
            let parents_json: Vec<_> = report
                .parents
                .iter()
                .map(|p| parent_report_json(p, &names))
                .collect();
            let doc = json!({
                "schema": "ancreg/graph_report/v1",
                "environment": report.label,
                "n": report.n,
                "result": report.result.to_json(Some(&names)),
                "parent_tests": parents_json,
            });
            write_output(
                &dir.join(format!("{stem}.graph.json")),
                &format!("{doc:#}\n"),
            )?;
            write_output(
                &dir.join(format!("{stem}.dot")),
                &report.result.to_dot(Some(&names)),
            )?;
        }
        if reports.len() > 1 {
            let summary = env_summary(&reports, &names, args.alpha, f);
            write_output(&dir.join("env_summary.json"), &format!("{summary:#}\n"))?;
        }
        let inputs: Vec<Vec<u8>> = args
            .data
            .iter()
            .map(|p| std::fs::read(p).unwrap_or_default())
            .collect();
        let chunks: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
        RunManifest::new("graph", &chunks, None)
            .write_sidecar(&dir.join("graph"))
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn parent_report_json(report: &ParentReport, names: &[String]) -> serde_json::Value {
    let tests: Vec<_> = report
        .ancestors_used
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            json!({
                "ancestor": names[k],
                "coef": report.coef[i],
                "t": report.t_stat[i],
                "p": report.p_value[i],
            })
        })
        .collect();
    json!({
        "target": names[report.target],
        "df": report.df,
        "tests": tests,
    })
}

/// Cross-environment edge table: in how many environments each relation is
/// suggested, whether its direct (parental) coefficient is significant in
/// the linear fit (Bonferroni over all suggested relation-environment
/// pairs), and the smallest linear-model p-value. The external-check field
/// is a placeholder for downstream tools.
fn env_summary(
    reports: &[EnvReport],
    names: &[String],
    alpha: f64,
    f: Nonlinearity,
) -> serde_json::Value {
    let mut suggested: BTreeMap<(usize, usize), Vec<&EnvReport>> = BTreeMap::new();
    for report in reports {
        for (j, ancestors) in report.result.ancestors.iter().enumerate() {
            for &k in ancestors {
                suggested.entry((k, j)).or_default().push(report);
            }
        }
    }
    let total_suggested: usize = suggested.values().map(Vec::len).sum();
    let threshold = if total_suggested > 0 {
        0.05 / total_suggested as f64
    } else {
        0.05
    };

    let mut edges = Vec::new();
    for ((k, j), envs) in &suggested {
        let mut min_p: Option<f64> = None;
        let mut significant = 0usize;
        for report in envs {
            if let Some(parent) = report.parents.iter().find(|p| p.target == *j) {
                if let Some(idx) = parent.ancestors_used.iter().position(|&a| a == *k) {
                    let p = parent.p_value[idx];
                    min_p = Some(min_p.map_or(p, |m: f64| m.min(p)));
                    if p < threshold {
                        significant += 1;
                    }
                }
            }
        }
        edges.push(json!({
            "ancestor": names[*k],
            "descendant": names[*j],
            "suggested": envs.len(),
            "environments": envs.iter().map(|r| r.label.clone()).collect::<Vec<_>>(),
            "external_check": serde_json::Value::Null,
            "significant_linear": significant,
            "min_linear_p": min_p,
        }));
    }
    json!({
        "schema": "ancreg/env_summary/v1",
        "environments": reports.iter().map(|r| r.label.clone()).collect::<Vec<_>>(),
        "alpha": alpha,
        "f": f.name(),
        "linear_significance_threshold": threshold,
        "edges": edges,
    })
}

// -------------------------------------------------------------------
// parents
// -------------------------------------------------------------------

pub struct ParentsArgs<'a> {
    pub data: &'a Path,
    pub target: &'a str,
    pub alpha: f64,
    pub f: &'a str,
    pub cap: bool,
    pub center: bool,
    pub has_header: bool,
    pub ancestors: Option<&'a str>,
    pub out_dir: Option<&'a Path>,
}

pub fn cmd_parents(args: &ParentsArgs) -> Result<(), CliError> {
    if !(args.alpha.is_finite() && args.alpha > 0.0) {
        return Err(CliError::Usage("--alpha must be positive".into()));
    }
    let f = parse_f(args.f)?;
    let dataset = load_datasets(&[args.data.to_path_buf()], None, args.has_header)?
        .pop()
        .expect("single dataset");
    let target = resolve_target(&dataset, args.target)?;

    let ancestors: Vec<usize> = match args.ancestors {
        Some(list) => {
            let mut out = Vec::new();
            for token in list.split(',') {
                let idx = resolve_target(&dataset, token.trim())?;
                if idx == target {
                    return Err(CliError::Usage(
                        "the target cannot be its own ancestor".into(),
                    ));
                }
                if !out.contains(&idx) {
                    out.push(idx);
                }
            }
            out.sort_unstable();
            out
        }
        None => {
            let fac = DesignFactorization::with_centering(&dataset.data, args.center)
                .map_err(shape_hint)?;
            let scan = fac.scan(target, f).map_err(shape_hint)?;
            let raw: Vec<f64> = scan.hypotheses().map(|(_, _, p)| p).collect();
            let corrected = holm(&raw, args.cap).map_err(|e| CliError::Numeric(e.to_string()))?;
            scan.hypotheses()
                .zip(&corrected)
                .filter(|(_, c)| **c < args.alpha)
                .map(|((k, _, _), _)| k)
                .collect()
        }
    };

    if ancestors.is_empty() {
        println!(
            "no ancestors of {} at level {}; nothing to refine",
            dataset.column_names[target], args.alpha
        );
        return Ok(());
    }
    let report = parent_tests(&dataset.data, target, &ancestors).map_err(shape_hint)?;

    println!(
        "parent tests for {} on {{{}}} (df = {})",
        dataset.column_names[target],
        ancestors
            .iter()
            .map(|&k| dataset.column_names[k].as_str())
            .collect::<Vec<_>>()
            .join(", "),
        report.df
    );
    println!("{:<12} {:>12} {:>12} {:>14}", "ancestor", "coef", "t", "p");
    for (i, &k) in report.ancestors_used.iter().enumerate() {
        println!(
            "{:<12} {:>12.4} {:>12.4} {:>14.4e}",
            dataset.column_names[k], report.coef[i], report.t_stat[i], report.p_value[i]
        );
    }

    if let Some(dir) = args.out_dir {
        ensure_out_dir(dir)?;
        let doc = json!({
            "schema": "ancreg/parents_report/v1",
            "alpha": args.alpha,
            "f": f.name(),
            "report": parent_report_json(&report, &dataset.column_names),
        });
        let path = dir.join("parents.json");
        write_output(&path, &format!("{doc:#}\n"))?;
        RunManifest::new(
            "parents",
            &[&std::fs::read(args.data).unwrap_or_default()],
            None,
        )
        .write_sidecar(&path)
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}

// -------------------------------------------------------------------
// study
// -------------------------------------------------------------------

pub fn cmd_study(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", config_path.display())))?;
    let file = parse_study_file(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", config_path.display())))?;

    let spec = if let Some(name) = &file.scenario {
        scenario_spec(name).ok_or_else(|| CliError::Data(format!("unknown scenario '{name}'")))?
    } else {
        let rel = file.spec_file.as_deref().expect("validated by parser");
        let path = config_path.parent().unwrap_or(Path::new(".")).join(rel);
        let spec_text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        parse_sem_spec(&spec_text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
    };

    let seed = seed_override.unwrap_or(file.seed);
    let config = StudyConfig {
        spec,
        target: file.target,
        sample_sizes: file.sample_sizes.clone(),
        runs: file.runs,
        alphas: file.alphas.clone(),
        f: file.f,
        seed,
    };
    let result = match file.kind {
        StudyKind::Ancestor => run_ancestor_study(&config),
        StudyKind::Graph => run_graph_study(&config),
    }
    .map_err(|e| match e {
        ancreg::experiments::ExperimentError::Config(msg) => CliError::Data(msg),
        other => CliError::Numeric(other.to_string()),
    })?;

    ensure_out_dir(out_dir)?;
    write_output(&out_dir.join("curves.csv"), &curves_to_csv(&result))?;
    if file.kind == StudyKind::Ancestor {
        write_output(&out_dir.join("zstats.csv"), &zstats_to_csv(&result))?;
    }
    let summary = summary_to_json(&config, &result);
    write_output(&out_dir.join("summary.json"), &format!("{summary:#}\n"))?;
    RunManifest::new("study", &[text.as_bytes(), &seed.to_le_bytes()], Some(seed))
        .write_sidecar(&out_dir.join("study"))
        .map_err(|e| CliError::Data(e.to_string()))?;

    for (i, &n) in result.sample_sizes.iter().enumerate() {
        println!(
            "n = {n}: detected fraction {:.3} at alpha = {} (fwer {:.3})",
            result.detected_fraction[i],
            result.reference_alpha,
            result.fwer_curve[i][result
                .alphas
                .iter()
                .position(|&a| a == result.reference_alpha)
                .unwrap_or(0)]
        );
    }
    println!("study outputs in {}", out_dir.display());
    Ok(())
}
