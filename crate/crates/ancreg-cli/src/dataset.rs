//! CSV ingestion into validated numeric datasets.

use std::path::Path;

use ancreg::sem::DataMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}, data row {row}, column {col} ({name}): {msg}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        name: String,
        msg: String,
    },
    #[error("{path}, data row {row}, column {col} ({name}): value is not finite")]
    NonFinite {
        path: String,
        row: usize,
        col: usize,
        name: String,
    },
    #[error("{path}: no data rows")]
    NoDataRows { path: String },
    #[error("{path}: environment column '{column}' not found (columns: {available})")]
    MissingEnvColumn {
        path: String,
        column: String,
        available: String,
    },
    #[error("{path}: need at least one numeric column besides the environment column")]
    NoNumericColumns { path: String },
}

/// A named observation matrix, optionally tagged with an environment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub column_names: Vec<String>,
    pub data: DataMatrix,
    pub environment: Option<String>,
}

impl Dataset {
    /// Resolves a column by name, else as a 1-based index.
    pub fn column_index(&self, token: &str) -> Option<usize> {
        if let Some(idx) = self.column_names.iter().position(|c| c == token) {
            return Some(idx);
        }
        token
            .parse::<usize>()
            .ok()
            .filter(|&i| i >= 1 && i <= self.column_names.len())
            .map(|i| i - 1)
    }
}

pub struct IngestOptions {
    pub has_header: bool,
    pub env_column: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            has_header: true,
            env_column: None,
        }
    }
}

/// Reads one CSV file. With an environment column set, returns one dataset
/// per distinct value (sorted by label); otherwise a single dataset.
pub fn ingest_csv(path: &Path, options: &IngestOptions) -> Result<Vec<Dataset>, IngestError> {
    let path_str = path.display().to_string();
    let io_err = |source| IngestError::Io {
        path: path_str.clone(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(source),
            other => IngestError::Parse {
                path: path_str.clone(),
                row: 0,
                col: 0,
                name: String::new(),
                msg: format!("{other:?}"),
            },
        })?;

    let mut names: Vec<String> = if options.has_header {
        reader
            .headers()
            .map_err(|e| csv_error(&path_str, e))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut envs: Vec<String> = Vec::new();
    let mut env_idx: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&path_str, e))?;
        if names.is_empty() {
            names = (1..=record.len()).map(|c| format!("X{c}")).collect();
        }
        if i == 0 {
            if let Some(env_col) = &options.env_column {
                env_idx = Some(names.iter().position(|n| n == env_col).ok_or_else(|| {
                    IngestError::MissingEnvColumn {
                        path: path_str.clone(),
                        column: env_col.clone(),
                        available: names.join(", "),
                    }
                })?);
                if names.len() <= 1 {
                    return Err(IngestError::NoNumericColumns {
                        path: path_str.clone(),
                    });
                }
            }
        }
        let row = i + 1;
        let mut values = Vec::with_capacity(record.len());
        for (col, cell) in record.iter().enumerate() {
            if Some(col) == env_idx {
                envs.push(cell.to_string());
                continue;
            }
            let name = names.get(col).cloned().unwrap_or_default();
            let value: f64 = cell.parse().map_err(|_| IngestError::Parse {
                path: path_str.clone(),
                row,
                col: col + 1,
                name: name.clone(),
                msg: format!("cannot parse '{cell}' as a number"),
            })?;
            if !value.is_finite() {
                return Err(IngestError::NonFinite {
                    path: path_str.clone(),
                    row,
                    col: col + 1,
                    name,
                });
            }
            values.push(value);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(IngestError::NoDataRows { path: path_str });
    }

    let numeric_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != env_idx)
        .map(|(_, n)| n.clone())
        .collect();

    if env_idx.is_none() {
        let data = DataMatrix::from_rows(&rows).expect("cells validated finite");
        return Ok(vec![Dataset {
            column_names: numeric_names,
            data,
            environment: None,
        }]);
    }

    let mut labels: Vec<String> = envs.clone();
    labels.sort();
    labels.dedup();
    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let subset: Vec<Vec<f64>> = rows
            .iter()
            .zip(&envs)
            .filter(|(_, e)| **e == label)
            .map(|(r, _)| r.clone())
            .collect();
        let data = DataMatrix::from_rows(&subset).expect("cells validated finite");
        out.push(Dataset {
            column_names: numeric_names.clone(),
            data,
            environment: Some(label),
        });
    }
    Ok(out)
}

fn csv_error(path: &str, e: csv::Error) -> IngestError {
    let position = e.position().cloned();
    let row = position.as_ref().map_or(0, |p| p.line() as usize);
    IngestError::Parse {
        path: path.to_string(),
        row,
        col: 0,
        name: String::new(),
        msg: e.to_string(),
    }
}
