use std::collections::BTreeMap;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loads a headered numeric CSV. `label_column` names the class column;
/// its distinct integer values are mapped to `0..k` in ascending order.
/// Every other column is standardized to zero mean and unit variance
/// (constant columns become zero).
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let label_pos = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("no column named `{label_column}`"),
        })?;
    let width = header.len() - 1;
    if width == 0 {
        return Err(Error::Parse {
            row: 1,
            message: "no feature columns".into(),
        });
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        // header is line 1
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            message: e.to_string(),
        })?;
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                message: format!("non-numeric cell `{cell}` in column {}", j + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    message: format!("non-finite cell `{cell}`"),
                });
            }
            if j == label_pos {
                if v.fract() != 0.0 {
                    return Err(Error::Parse {
                        row: line,
                        message: format!("label `{cell}` is not an integer"),
                    });
                }
                raw_labels.push(v as i64);
            } else {
                features.push(v);
            }
        }
    }
    let n = raw_labels.len();
    if n == 0 {
        return Err(Error::Input("CSV has no data rows".into()));
    }

    for j in 0..width {
        let mean = (0..n).map(|i| features[i * width + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (features[i * width + j] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            let v = &mut features[i * width + j];
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }

    let classes: BTreeMap<i64, usize> = {
        let mut distinct: Vec<i64> = raw_labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        distinct
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect()
    };
    let labels = raw_labels.iter().map(|v| classes[v]).collect();
    Dataset::new(
        Tensor::new(vec![n, width], features)?,
        labels,
        classes.len(),
    )
}
