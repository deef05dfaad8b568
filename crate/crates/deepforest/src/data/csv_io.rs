//! CSV ingestion and export: comma-separated, header row, UTF-8, '.' decimal.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};

/// Load a dataset from a CSV file. `label_column` names the response column;
/// the remaining columns become features in file order.
///
/// Classification labels are one-hot encoded in first-seen order.
pub fn load_csv(path: &Path, label_column: &str, task: Task) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_open_error(&display, e))?;

    let headers = reader
        .headers()
        .map_err(|e| csv_open_error(&display, e))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn {
            path: display.clone(),
            column: label_column.to_string(),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let k = feature_names.len();
    if k == 0 {
        return Err(Error::InvalidParams(format!(
            "{display}: no feature columns besides '{label_column}'"
        )));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1; // 1-based data row
        let record = record.map_err(|e| Error::CsvCell {
            path: display.clone(),
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::CsvCell {
                path: display.clone(),
                row,
                column: String::new(),
                message: format!(
                    "expected {} fields, found {}",
                    headers.len(),
                    record.len()
                ),
            });
        }
        for (col_idx, cell) in record.iter().enumerate() {
            if col_idx == label_idx {
                labels.push(cell.to_string());
                continue;
            }
            let value: f64 = cell.trim().parse().map_err(|_| Error::CsvCell {
                path: display.clone(),
                row,
                column: headers[col_idx].to_string(),
                message: format!("cannot parse '{cell}' as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvCell {
                    path: display.clone(),
                    row,
                    column: headers[col_idx].to_string(),
                    message: format!("non-finite value '{cell}'"),
                });
            }
            features.push(value);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset { path: display });
    }

    match task {
        Task::Regression => {
            let mut response = Vec::with_capacity(n);
            for (i, label) in labels.iter().enumerate() {
                let value: f64 = label.trim().parse().map_err(|_| Error::CsvCell {
                    path: display.clone(),
                    row: i + 1,
                    column: label_column.to_string(),
                    message: format!("cannot parse '{label}' as a number"),
                })?;
                if !value.is_finite() {
                    return Err(Error::CsvCell {
                        path: display.clone(),
                        row: i + 1,
                        column: label_column.to_string(),
                        message: format!("non-finite label '{label}'"),
                    });
                }
                response.push(value);
            }
            Dataset::new(
                features,
                response,
                n,
                k,
                1,
                Task::Regression,
                feature_names,
                vec![],
            )
        }
        Task::Classification => {
            // One-hot in first-seen order.
            let mut class_labels: Vec<String> = Vec::new();
            let mut class_of = Vec::with_capacity(n);
            for label in &labels {
                let idx = match class_labels.iter().position(|c| c == label) {
                    Some(idx) => idx,
                    None => {
                        class_labels.push(label.clone());
                        class_labels.len() - 1
                    }
                };
                class_of.push(idx);
            }
            let c = class_labels.len();
            let mut response = vec![0.0; n * c];
            for (i, &idx) in class_of.iter().enumerate() {
                response[i * c + idx] = 1.0;
            }
            Dataset::new(
                features,
                response,
                n,
                k,
                c,
                Task::Classification,
                feature_names,
                class_labels,
            )
        }
    }
}

/// Write a dataset to CSV with the label in the last column.
/// Classification rows emit the class label; regression rows the value.
pub fn save_csv(d: &Dataset, path: &Path, label_column: &str) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::Io {
        path: display.clone(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::Io {
        path: display.clone(),
        source: e,
    };

    let mut header: Vec<String> = d.feature_names().to_vec();
    header.push(label_column.to_string());
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;

    for i in 0..d.n_rows() {
        let mut cells: Vec<String> = d
            .features_row(i)
            .iter()
            .map(|v| format_float(*v))
            .collect();
        match d.task() {
            Task::Regression => cells.push(format_float(d.response_row(i)[0])),
            Task::Classification => cells.push(d.class_labels()[d.class_of(i)].clone()),
        }
        writeln!(w, "{}", cells.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Shortest decimal form that parses back to the same f64.
pub(crate) fn format_float(v: f64) -> String {
    let mut buffer = ryu_like(v);
    if !buffer.contains('.') && !buffer.contains('e') && !buffer.contains("inf") {
        buffer.push_str(".0");
    }
    buffer
}

fn ryu_like(v: f64) -> String {
    // serde_json uses a shortest-round-trip encoder; reuse it for CSV cells.
    serde_json::to_string(&v).unwrap_or_else(|_| format!("{v:?}"))
}

fn csv_open_error(path: &str, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io {
            path: path.to_string(),
            source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        },
        _ => Error::CsvCell {
            path: path.to_string(),
            row: 0,
            column: String::new(),
            message: e.to_string(),
        },
    }
}
