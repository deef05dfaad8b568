//! Per-prediction feature contributions and dataset-level importance.

pub mod calibrate;
pub mod deep;
mod mda;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calibrate::{calibrate, CalibrationMethod, CalibrationRule};
pub use deep::{estimate_node_delta, CalibrationCheck, InstanceContribs};
pub use mda::{mda, Predictor};

/// Additive decomposition of one prediction: `bias + column sums = prediction`
/// per class component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContributionReport {
    /// Training mean response (length `C`).
    pub bias: Vec<f64>,
    /// Flattened `K x C` contribution matrix.
    pub contrib: Vec<f64>,
    /// Model prediction (length `C`).
    pub prediction: Vec<f64>,
    /// Layer the decomposition was read at.
    pub layer: usize,
    pub n_features: usize,
    pub n_outputs: usize,
}

impl ContributionReport {
    /// Contribution of feature `k` to class component `c`.
    pub fn value(&self, k: usize, c: usize) -> f64 {
        self.contrib[k * self.n_outputs + c]
    }

    /// Per-class sum of contributions over features.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_outputs];
        for k in 0..self.n_features {
            for (c, s) in sums.iter_mut().enumerate() {
                *s += self.value(k, c);
            }
        }
        sums
    }

    /// Check the decomposition identity within
    /// `rel_tol * (1 + |prediction|)` per class.
    pub fn verify(&self, rel_tol: f64) -> Result<()> {
        let sums = self.column_sums();
        for c in 0..self.n_outputs {
            let total = self.bias[c] + sums[c];
            let err = (total - self.prediction[c]).abs();
            let bound = rel_tol * (1.0 + self.prediction[c].abs());
            if err > bound {
                return Err(Error::Internal(format!(
                    "decomposition identity violated in class {c}: \
                     |{total} - {}| = {err} > {bound}",
                    self.prediction[c]
                )));
            }
        }
        Ok(())
    }
}

/// One exported report line: `(feature, name, class, value)`.
/// `feature` is `None` for bias and prediction lines.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub feature: Option<usize>,
    pub name: String,
    pub class: String,
    pub value: f64,
}

fn class_name(labels: &[String], c: usize) -> String {
    labels.get(c).cloned().unwrap_or_default()
}

impl ContributionReport {
    /// Flatten into export rows: bias lines, one line per
    /// `(feature, class)`, then prediction lines.
    pub fn rows(&self, feature_names: &[String], class_labels: &[String]) -> Vec<ReportRow> {
        let mut rows = Vec::with_capacity((self.n_features + 2) * self.n_outputs);
        for c in 0..self.n_outputs {
            rows.push(ReportRow {
                feature: None,
                name: "bias".into(),
                class: class_name(class_labels, c),
                value: self.bias[c],
            });
        }
        for k in 0..self.n_features {
            for c in 0..self.n_outputs {
                rows.push(ReportRow {
                    feature: Some(k),
                    name: feature_names.get(k).cloned().unwrap_or_else(|| format!("f{k}")),
                    class: class_name(class_labels, c),
                    value: self.value(k, c),
                });
            }
        }
        for c in 0..self.n_outputs {
            rows.push(ReportRow {
                feature: None,
                name: "prediction".into(),
                class: class_name(class_labels, c),
                value: self.prediction[c],
            });
        }
        rows
    }
}

/// Global (and optionally per-class) feature importance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub mdi: Vec<f64>,
    /// Per-class rows; `None` marks a class with no instances in the
    /// evaluation data (undefined, not zero).
    pub per_class: Option<Vec<Option<Vec<f64>>>>,
    pub method: String,
    pub dataset_id: String,
}

impl ImportanceReport {
    /// Flatten into export rows: global lines (empty class), then per-class
    /// lines when present. Undefined classes export NaN, not zero.
    pub fn rows(&self, feature_names: &[String], class_labels: &[String]) -> Vec<ReportRow> {
        let name_of = |k: usize| {
            feature_names
                .get(k)
                .cloned()
                .unwrap_or_else(|| format!("f{k}"))
        };
        let mut rows: Vec<ReportRow> = self
            .mdi
            .iter()
            .enumerate()
            .map(|(k, v)| ReportRow {
                feature: Some(k),
                name: name_of(k),
                class: String::new(),
                value: *v,
            })
            .collect();
        if let Some(per_class) = &self.per_class {
            for (c, class_row) in per_class.iter().enumerate() {
                for k in 0..self.mdi.len() {
                    rows.push(ReportRow {
                        feature: Some(k),
                        name: name_of(k),
                        class: class_name(class_labels, c),
                        value: class_row.as_ref().map_or(f64::NAN, |r| r[k]),
                    });
                }
            }
        }
        rows
    }

    /// Divide all entries by the total response variance of the evaluation
    /// data.
    pub fn normalized(mut self, total_variance: f64) -> Result<Self> {
        if total_variance <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        for v in self.mdi.iter_mut() {
            *v /= total_variance;
        }
        if let Some(per_class) = self.per_class.as_mut() {
            for row in per_class.iter_mut().flatten() {
                for v in row.iter_mut() {
                    *v /= total_variance;
                }
            }
        }
        Ok(self)
    }
}
