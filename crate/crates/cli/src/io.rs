use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use robust_trim::nalgebra::{DMatrix, DVector};
use robust_trim::Dataset;

use crate::exit::Failure;

/// Numeric table read from a CSV file with a header row.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table, Failure> {
    let file = File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Failure::data(format!("{}: missing header row", path.display())));
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                let field = field.trim();
                if field.is_empty() {
                    return Err(Failure::data(format!(
                        "line {line}, column '{}': missing value",
                        headers[j]
                    )));
                }
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Failure::data(format!(
                            "line {line}, column '{}': '{field}' is not a finite number",
                            headers[j]
                        ))
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Failure::data(format!("{}: no data rows", path.display())));
    }
    Ok(Table { headers, rows })
}

/// Dataset plus the names of its coefficient columns.
pub struct Loaded {
    pub data: Dataset,
    pub coefficient_names: Vec<String>,
    pub response: String,
}

/// Splits `table` into a response column and predictors. With
/// `add_intercept` a leading column of ones is prepended; otherwise the first
/// predictor column must already be all ones.
pub fn dataset_from_table(
    table: &Table,
    response: Option<&str>,
    add_intercept: bool,
) -> Result<Loaded, Failure> {
    let target = match response {
        Some(name) => table
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::usage(format!("response column '{name}' not found")))?,
        None => table.headers.len() - 1,
    };
    let predictors: Vec<usize> = (0..table.headers.len()).filter(|&j| j != target).collect();
    if predictors.is_empty() {
        return Err(Failure::data("no predictor columns"));
    }
    let n = table.rows.len();
    let y = DVector::from_iterator(n, table.rows.iter().map(|r| r[target]));
    let features = DMatrix::from_fn(n, predictors.len(), |i, j| table.rows[i][predictors[j]]);
    let mut names: Vec<String> = predictors.iter().map(|&j| table.headers[j].clone()).collect();
    let data = if add_intercept {
        names.insert(0, "(intercept)".to_string());
        Dataset::with_intercept(&features, y)
    } else {
        Dataset::new(features, y)
    }
    .map_err(|e| Failure::data(e.to_string()))?;
    Ok(Loaded {
        data,
        coefficient_names: names,
        response: table.headers[target].clone(),
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// renamed into place once complete. `None` writes to stdout.
pub fn write_output(path: Option<&PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| Failure::data(format!("stdout: {e}")))
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
                _ => PathBuf::from("."),
            };
            let fail = |e: std::io::Error| Failure::data(format!("{}: {e}", path.display()));
            let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(fail)?;
            tmp.write_all(bytes).map_err(fail)?;
            tmp.as_file().sync_all().map_err(fail)?;
            tmp.persist(path).map_err(|e| fail(e.error))?;
            Ok(())
        }
    }
}

pub fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>, Failure>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure::data(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Failure::data(e.to_string()))
}

/// Coefficients from a fit report (`coefficients` array) or a bare JSON array.
pub fn read_coefficients(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let array = match &value {
        serde_json::Value::Array(_) => &value,
        serde_json::Value::Object(map) => map.get("coefficients").ok_or_else(|| {
            Failure::data(format!("{}: no 'coefficients' field", path.display()))
        })?,
        _ => return Err(Failure::data(format!("{}: expected an array or object", path.display()))),
    };
    serde_json::from_value::<Vec<f64>>(array.clone())
        .map_err(|e| Failure::data(format!("{}: coefficients: {e}", path.display())))
}
