//! Datasets: row-major feature matrix plus a response matrix.
//!
//! Regression responses are a single column; classification responses are
//! one-hot rows, which makes variance impurity coincide with the Gini index
//! and lets every downstream computation treat both tasks uniformly.

mod csv_io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub use csv_io::{load_csv, save_csv};

/// Learning task. Determines response encoding and default metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// An immutable dataset: `n` rows, `K` features, `C` response components.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>, // row-major, n * k
    response: Vec<f64>, // row-major, n * c
    n: usize,
    k: usize,
    c: usize,
    task: Task,
    feature_names: Vec<String>,
    class_labels: Vec<String>, // empty for regression
    relevant_mask: Option<Vec<bool>>,
}

impl Dataset {
    /// Build a dataset from row-major matrices, validating shapes and the
    /// one-hot response invariant for classification.
    pub fn new(
        features: Vec<f64>,
        response: Vec<f64>,
        n: usize,
        k: usize,
        c: usize,
        task: Task,
        feature_names: Vec<String>,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        if n == 0 || k == 0 || c == 0 {
            return Err(Error::InvalidParams(format!(
                "dataset requires n >= 1, K >= 1, C >= 1 (got n={n}, K={k}, C={c})"
            )));
        }
        if task == Task::Regression && c != 1 {
            return Err(Error::InvalidParams(format!(
                "regression requires C = 1, got C = {c}"
            )));
        }
        if features.len() != n * k {
            return Err(Error::DimensionMismatch {
                what: "feature matrix",
                expected: n * k,
                got: features.len(),
            });
        }
        if response.len() != n * c {
            return Err(Error::DimensionMismatch {
                what: "response matrix",
                expected: n * c,
                got: response.len(),
            });
        }
        if feature_names.len() != k {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: k,
                got: feature_names.len(),
            });
        }
        if task == Task::Classification {
            if class_labels.len() != c {
                return Err(Error::DimensionMismatch {
                    what: "class labels",
                    expected: c,
                    got: class_labels.len(),
                });
            }
            for i in 0..n {
                let row = &response[i * c..(i + 1) * c];
                let ones = row.iter().filter(|v| **v == 1.0).count();
                let zeros = row.iter().filter(|v| **v == 0.0).count();
                if ones != 1 || zeros != c - 1 {
                    return Err(Error::InvalidParams(format!(
                        "classification response row {i} is not one-hot: {row:?}"
                    )));
                }
            }
        }
        Ok(Self {
            features,
            response,
            n,
            k,
            c,
            task,
            feature_names,
            class_labels,
            relevant_mask: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.k
    }

    pub fn n_outputs(&self) -> usize {
        self.c
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn relevant_mask(&self) -> Option<&[bool]> {
        self.relevant_mask.as_deref()
    }

    /// Attach a ground-truth relevance mask (one flag per feature).
    pub fn with_relevant_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.k {
            return Err(Error::DimensionMismatch {
                what: "relevant mask",
                expected: self.k,
                got: mask.len(),
            });
        }
        self.relevant_mask = Some(mask);
        Ok(self)
    }

    pub fn features_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.k..(i + 1) * self.k]
    }

    pub fn response_row(&self, i: usize) -> &[f64] {
        &self.response[i * self.c..(i + 1) * self.c]
    }

    pub fn feature(&self, row: usize, col: usize) -> f64 {
        self.features[row * self.k + col]
    }

    /// Values of one feature column, in row order.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.feature(i, col)).collect()
    }

    /// Class index of row `i` (classification only).
    pub fn class_of(&self, i: usize) -> usize {
        let row = self.response_row(i);
        row.iter().position(|v| *v == 1.0).unwrap_or(0)
    }

    /// Mean response over all rows, accumulated in row order.
    pub fn mean_response(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.c];
        for i in 0..self.n {
            for (m, y) in mu.iter_mut().zip(self.response_row(i)) {
                *m += y;
            }
        }
        for m in mu.iter_mut() {
            *m /= self.n as f64;
        }
        mu
    }

    /// Total response variance `(1/n) sum_i ||y_i - mu0||^2`.
    pub fn total_response_variance(&self) -> f64 {
        let mu = self.mean_response();
        let mut total = 0.0;
        for i in 0..self.n {
            for (y, m) in self.response_row(i).iter().zip(&mu) {
                total += (y - m) * (y - m);
            }
        }
        total / self.n as f64
    }

    /// New dataset containing the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParams("row selection is empty".into()));
        }
        let mut features = Vec::with_capacity(rows.len() * self.k);
        let mut response = Vec::with_capacity(rows.len() * self.c);
        for &i in rows {
            features.extend_from_slice(self.features_row(i));
            response.extend_from_slice(self.response_row(i));
        }
        let mut out = Self::new(
            features,
            response,
            rows.len(),
            self.k,
            self.c,
            self.task,
            self.feature_names.clone(),
            self.class_labels.clone(),
        )?;
        out.relevant_mask = self.relevant_mask.clone();
        Ok(out)
    }

    /// Replace the feature matrix (used for permuted-copy benchmarks and
    /// layer augmentation). Response rows are untouched.
    pub(crate) fn with_features(
        &self,
        features: Vec<f64>,
        k: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let mut out = Self::new(
            features,
            self.response.clone(),
            self.n,
            k,
            self.c,
            self.task,
            feature_names,
            self.class_labels.clone(),
        )?;
        out.relevant_mask = None;
        Ok(out)
    }
}

/// Fractions of a seeded train/valid/test row partition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.valid_fraction, self.test_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidParams(
                "split fractions must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "split fractions must sum to 1 (got {sum})"
            )));
        }
        Ok(())
    }
}

/// Disjoint row partition indices for `n` rows: seeded shuffle, sizes
/// round-to-nearest with the remainder going to train.
pub fn split_rows(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let n_valid = (n as f64 * spec.valid_fraction).round() as usize;
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    if n_valid + n_test > n {
        return Err(Error::InvalidParams(
            "split fractions leave no training rows".into(),
        ));
    }
    let n_train = n - n_valid - n_test;
    for (count, fraction, name) in [
        (n_train, spec.train_fraction, "train"),
        (n_valid, spec.valid_fraction, "valid"),
        (n_test, spec.test_fraction, "test"),
    ] {
        if fraction > 0.0 && count == 0 {
            return Err(Error::InvalidParams(format!(
                "requested {name} partition is empty (n = {n}, fraction = {fraction})"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut stream_rng(spec.seed, 0));
    let train = order[..n_train].to_vec();
    let valid = order[n_train..n_train + n_valid].to_vec();
    let test = order[n_train + n_valid..].to_vec();
    Ok((train, valid, test))
}

/// Partition a dataset by `spec`. Empty partitions come back as `None`.
pub fn split(
    d: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Option<Dataset>, Option<Dataset>)> {
    let (train, valid, test) = split_rows(d.n_rows(), spec)?;
    let train_d = d.select_rows(&train)?;
    let valid_d = if valid.is_empty() {
        None
    } else {
        Some(d.select_rows(&valid)?)
    };
    let test_d = if test.is_empty() {
        None
    } else {
        Some(d.select_rows(&test)?)
    };
    Ok((train_d, valid_d, test_d))
}

/// Fisher-Yates shuffle driven by an explicit RNG.
pub(crate) fn shuffle<T, R: rand::Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
