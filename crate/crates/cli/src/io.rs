use std::fs;
use std::path::Path;

use lassodof::{designs::make_design, DesignSpec, Matrix, Vector};

use crate::CliError;

fn csv_rows(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .filter(|field| !field.is_empty())
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    CliError::usage(format!("{}: row {}: cannot parse {field:?} as a number", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Dense matrix from a CSV file (one row per line) or a JSON design spec.
pub fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let spec: DesignSpec = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: invalid design spec: {e}", path.display())))?;
        return Ok(make_design(&spec)?);
    }
    let rows = csv_rows(path)?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(CliError::usage(format!("{}: matrix is empty", path.display())));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(CliError::usage(format!(
            "{}: row {} has {} entries, expected {cols}",
            path.display(),
            i + 1,
            row.len()
        )));
    }
    Ok(Matrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

/// Vector from a CSV file holding a single row or a single column.
pub fn read_vector(path: &Path) -> Result<Vector, CliError> {
    let rows = csv_rows(path)?;
    let single_column = rows.iter().all(|r| r.len() == 1);
    if !(rows.len() == 1 || single_column) {
        return Err(CliError::usage(format!("{}: expected a single row or column", path.display())));
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(CliError::usage(format!("{}: vector is empty", path.display())));
    }
    Ok(Vector::from_vec(values))
}

/// Writes to `path`, or to stdout when absent.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, contents).map_err(|e| CliError::usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}
