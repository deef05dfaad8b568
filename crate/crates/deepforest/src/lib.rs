//! Cascade forests with built-in interpretability.
//!
//! Trains deep forests (layered ensembles whose prediction vectors are
//! concatenated with the original features for the next layer) and explains
//! them: every prediction decomposes exactly into a bias plus one signed
//! term per original feature, and MDI feature importance extends through
//! the deep layers with a conservation guarantee. Includes the synthetic
//! generators, permutation-importance baselines and benchmark harness used
//! to validate the estimators.

pub mod attribution;
pub mod bench;
pub mod cascade;
pub mod data;
pub mod demo;
mod error;
pub mod forest;
pub mod model_io;
pub mod rng;
pub mod tree;

pub use attribution::{
    calibrate, mda, CalibrationCheck, CalibrationMethod, CalibrationRule, ContributionReport,
    ImportanceReport, Predictor, ReportRow,
};
pub use cascade::{augment_features, CascadeConfig, CascadeModel, GrowthMetric, LayerSchema};
pub use data::{load_csv, save_csv, split, Dataset, SplitSpec, Task};
pub use error::{Error, Result};
pub use forest::{Forest, ForestKind, ForestParams};
pub use tree::{FeatureMode, Node, Split, SplitMode, Tree, TreeParams};
