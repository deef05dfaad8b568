//! Permutation importance (mean decrease in accuracy / score).

use rayon::prelude::*;

use crate::cascade::{argmax, CascadeModel};
use crate::data::{shuffle, Dataset, Task};
use crate::error::Result;
use crate::forest::Forest;
use crate::rng::stream_rng;

/// Anything that can score feature rows; lets permutation importance treat
/// forests and cascades uniformly.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Predictor for Forest {
    fn n_features(&self) -> usize {
        Forest::n_features(self)
    }

    fn n_outputs(&self) -> usize {
        Forest::n_outputs(self)
    }

    fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

impl Predictor for CascadeModel {
    fn n_features(&self) -> usize {
        CascadeModel::n_features(self)
    }

    fn n_outputs(&self) -> usize {
        CascadeModel::n_outputs(self)
    }

    fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

/// Per-feature drop in score after permuting that feature's column,
/// averaged over `n_repeats` independent permutations. The score is
/// accuracy for classification and negative MSE for regression, so larger
/// MDA always means more important.
///
/// A feature the model never routes on leaves every prediction unchanged,
/// making its MDA exactly zero.
pub fn mda(
    model: &dyn Predictor,
    d: &Dataset,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_repeats == 0 {
        return Err(crate::error::Error::InvalidParams(
            "n_repeats must be >= 1".into(),
        ));
    }
    let k = d.n_features();
    let baseline = score(model, d, None)?;
    let importances: Result<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|feature| {
            let mut drop_total = 0.0;
            for repeat in 0..n_repeats {
                let mut column = d.column(feature);
                let stream = (feature as u64) << 20 | repeat as u64;
                shuffle(&mut column, &mut stream_rng(seed, stream));
                let permuted = score(model, d, Some((feature, &column)))?;
                // Averaging per-repeat differences keeps ignored features
                // at exactly zero.
                drop_total += baseline - permuted;
            }
            Ok(drop_total / n_repeats as f64)
        })
        .collect();
    importances
}

/// Score `model` on `d`, optionally substituting one feature column.
fn score(model: &dyn Predictor, d: &Dataset, replace: Option<(usize, &[f64])>) -> Result<f64> {
    let totals: Result<Vec<f64>> = (0..d.n_rows())
        .into_par_iter()
        .map(|i| {
            let pred = match replace {
                None => model.predict_row(d.features_row(i))?,
                Some((feature, column)) => {
                    let mut x = d.features_row(i).to_vec();
                    x[feature] = column[i];
                    model.predict_row(&x)?
                }
            };
            Ok(match d.task() {
                Task::Classification => {
                    if argmax(&pred) == d.class_of(i) {
                        1.0
                    } else {
                        0.0
                    }
                }
                Task::Regression => {
                    let err = pred[0] - d.response_row(i)[0];
                    -(err * err)
                }
            })
        })
        .collect();
    Ok(totals?.iter().sum::<f64>() / d.n_rows() as f64)
}
