//! Bagged/subspaced tree ensembles with out-of-bag tracking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::tree::{FeatureMode, SplitMode, Tree, TreeParams};

/// Forest flavor. Determines how member trees pick splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    /// Best-split trees over `ceil(sqrt(K))` candidate features per node.
    BestSplit,
    /// One random threshold per feature, all features candidates.
    FullyRandom,
}

/// Forest training parameters. `tree` supplies depth and minimum-sample
/// limits; feature and split modes are derived from `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    pub kind: ForestKind,
    pub seed: u64,
}

impl ForestParams {
    pub fn new(kind: ForestKind, n_trees: usize, seed: u64) -> Self {
        Self {
            n_trees,
            tree: TreeParams::default(),
            bootstrap: false,
            kind,
            seed,
        }
    }

    pub fn with_max_depth(mut self, depth: Option<usize>) -> Self {
        self.tree.max_depth = depth;
        self
    }

    pub fn with_bootstrap(mut self, bootstrap: bool) -> Self {
        self.bootstrap = bootstrap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParams("n_trees must be >= 1".into()));
        }
        Ok(())
    }

    /// Effective tree parameters for tree index `i`.
    fn tree_params(&self, index: usize) -> TreeParams {
        let (feature_mode, split_mode) = match self.kind {
            ForestKind::BestSplit => (FeatureMode::Sqrt, SplitMode::Best),
            ForestKind::FullyRandom => (FeatureMode::All, SplitMode::RandomThreshold),
        };
        TreeParams {
            feature_mode,
            split_mode,
            seed_stream: derive_seed(self.seed, 2 * index as u64 + 1),
            ..self.tree.clone()
        }
    }
}

/// A fitted forest: trees, the full-training-set mean response `mu0`, and
/// per-tree out-of-bag masks when trained with bootstrap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    params: ForestParams,
    mu0: Vec<f64>,
    oob_masks: Option<Vec<Vec<bool>>>,
    n_features: usize,
    n_outputs: usize,
}

impl Forest {
    pub fn fit(d: &Dataset, params: &ForestParams) -> Result<Forest> {
        params.validate()?;
        params.tree.validate(d.n_features())?;
        let n = d.n_rows();
        let mu0 = d.mean_response();

        let fitted: Result<Vec<(Tree, Option<Vec<bool>>)>> = (0..params.n_trees)
            .into_par_iter()
            .map(|i| {
                if params.bootstrap {
                    let weights = bootstrap_weights(n, params.seed, i);
                    let mask: Vec<bool> = weights.iter().map(|&w| w == 0).collect();
                    let tree = Tree::fit_weighted(d, &params.tree_params(i), Some(&weights))?;
                    Ok((tree, Some(mask)))
                } else {
                    let tree = Tree::fit(d, &params.tree_params(i))?;
                    Ok((tree, None))
                }
            })
            .collect();
        let fitted = fitted?;

        let mut trees = Vec::with_capacity(params.n_trees);
        let mut masks = Vec::with_capacity(params.n_trees);
        for (tree, mask) in fitted {
            trees.push(tree);
            if let Some(mask) = mask {
                masks.push(mask);
            }
        }
        Ok(Forest {
            trees,
            params: params.clone(),
            mu0,
            oob_masks: if params.bootstrap { Some(masks) } else { None },
            n_features: d.n_features(),
            n_outputs: d.n_outputs(),
        })
    }

    /// Rebuild from parts (persistence path), validating every tree.
    pub fn from_parts(
        trees: Vec<Tree>,
        params: ForestParams,
        mu0: Vec<f64>,
        oob_masks: Option<Vec<Vec<bool>>>,
        n_features: usize,
        n_outputs: usize,
    ) -> Result<Forest> {
        if trees.is_empty() {
            return Err(Error::ModelInvariant("forest has no trees".into()));
        }
        if trees.len() != params.n_trees {
            return Err(Error::ModelInvariant(format!(
                "forest holds {} trees but params declare {}",
                trees.len(),
                params.n_trees
            )));
        }
        for tree in &trees {
            tree.validate()?;
            if tree.n_features() != n_features || tree.n_outputs() != n_outputs {
                return Err(Error::ModelInvariant(
                    "tree shape differs from forest shape".into(),
                ));
            }
        }
        if mu0.len() != n_outputs {
            return Err(Error::ModelInvariant("mu0 length mismatch".into()));
        }
        if params.bootstrap != oob_masks.is_some() {
            return Err(Error::ModelInvariant(
                "oob masks present iff bootstrap".into(),
            ));
        }
        Ok(Forest {
            trees,
            params,
            mu0,
            oob_masks,
            n_features,
            n_outputs,
        })
    }

    /// Structural invariants; used when loading persisted models.
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::ModelInvariant("forest has no trees".into()));
        }
        if self.trees.len() != self.params.n_trees {
            return Err(Error::ModelInvariant(format!(
                "forest holds {} trees but params declare {}",
                self.trees.len(),
                self.params.n_trees
            )));
        }
        for tree in &self.trees {
            tree.validate()?;
            if tree.n_features() != self.n_features || tree.n_outputs() != self.n_outputs {
                return Err(Error::ModelInvariant(
                    "tree shape differs from forest shape".into(),
                ));
            }
        }
        if self.mu0.len() != self.n_outputs {
            return Err(Error::ModelInvariant("mu0 length mismatch".into()));
        }
        if self.params.bootstrap != self.oob_masks.is_some() {
            return Err(Error::ModelInvariant(
                "oob masks present iff bootstrap".into(),
            ));
        }
        if let Some(masks) = &self.oob_masks {
            if masks.len() != self.trees.len() {
                return Err(Error::ModelInvariant(
                    "one oob mask per tree required".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub(crate) fn trees_mut(&mut self) -> &mut [Tree] {
        &mut self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn oob_masks(&self) -> Option<&[Vec<bool>]> {
        self.oob_masks.as_deref()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                what: "feature vector",
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Arithmetic mean of tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut acc = vec![0.0; self.n_outputs];
        for tree in &self.trees {
            let p = tree.predict(x)?;
            for (a, v) in acc.iter_mut().zip(&p) {
                *a += v;
            }
        }
        let nt = self.trees.len() as f64;
        for a in acc.iter_mut() {
            *a /= nt;
        }
        Ok(acc)
    }

    /// Mean of per-tree path decompositions: `(bias, K x C contributions)`.
    /// The bias is the mean of tree root means, which equals `mu0` exactly
    /// when trained without bootstrap.
    pub fn contributions(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let c = self.n_outputs;
        let mut bias = vec![0.0; c];
        let mut contrib = vec![0.0; self.n_features * c];
        for tree in &self.trees {
            let (b, m) = tree.contributions(x)?;
            for (acc, v) in bias.iter_mut().zip(&b) {
                *acc += v;
            }
            for (acc, v) in contrib.iter_mut().zip(&m) {
                *acc += v;
            }
        }
        let nt = self.trees.len() as f64;
        for v in bias.iter_mut() {
            *v /= nt;
        }
        for v in contrib.iter_mut() {
            *v /= nt;
        }
        Ok((bias, contrib))
    }

    /// Covariance-form MDI over `d`: equals the average of per-tree
    /// covariance MDI.
    pub fn mdi(&self, d: &Dataset) -> Result<Vec<f64>> {
        if d.n_features() != self.n_features {
            return Err(Error::DimensionMismatch {
                what: "dataset features",
                expected: self.n_features,
                got: d.n_features(),
            });
        }
        let c = self.n_outputs;
        let mut acc = vec![0.0; self.n_features];
        for i in 0..d.n_rows() {
            let (_, contrib) = self.contributions(d.features_row(i))?;
            let y = d.response_row(i);
            for k in 0..self.n_features {
                let mut dot = 0.0;
                for comp in 0..c {
                    dot += contrib[k * c + comp] * y[comp];
                }
                acc[k] += dot;
            }
        }
        let n = d.n_rows() as f64;
        for v in acc.iter_mut() {
            *v /= n;
        }
        Ok(acc)
    }

    /// Debiased MDI: per tree, the covariance form restricted to that
    /// tree's out-of-bag rows, averaged over trees with nonempty OOB sets.
    pub fn mdi_oob(&self, d_train: &Dataset) -> Result<Vec<f64>> {
        let masks = self.oob_masks.as_ref().ok_or(Error::NoOobData)?;
        if d_train.n_rows() != masks[0].len() {
            return Err(Error::DimensionMismatch {
                what: "training rows",
                expected: masks[0].len(),
                got: d_train.n_rows(),
            });
        }
        let c = self.n_outputs;
        let mut acc = vec![0.0; self.n_features];
        let mut used_trees = 0usize;
        for (tree, mask) in self.trees.iter().zip(masks) {
            let oob_rows: Vec<usize> = (0..d_train.n_rows()).filter(|&i| mask[i]).collect();
            if oob_rows.is_empty() {
                continue;
            }
            used_trees += 1;
            let mut tree_acc = vec![0.0; self.n_features];
            for &i in &oob_rows {
                let (_, contrib) = tree.contributions(d_train.features_row(i))?;
                let y = d_train.response_row(i);
                for k in 0..self.n_features {
                    let mut dot = 0.0;
                    for comp in 0..c {
                        dot += contrib[k * c + comp] * y[comp];
                    }
                    tree_acc[k] += dot;
                }
            }
            let n_oob = oob_rows.len() as f64;
            for (a, v) in acc.iter_mut().zip(&tree_acc) {
                *a += v / n_oob;
            }
        }
        if used_trees == 0 {
            return Err(Error::NoOobData);
        }
        for v in acc.iter_mut() {
            *v /= used_trees as f64;
        }
        Ok(acc)
    }
}

/// Multiplicity weights from `n` draws with replacement; row `i` of tree
/// `index` under forest `seed`.
pub fn bootstrap_weights(n: usize, seed: u64, index: usize) -> Vec<u32> {
    use rand::Rng;
    let mut rng = stream_rng(seed, 2 * index as u64);
    let mut weights = vec![0u32; n];
    for _ in 0..n {
        weights[rng.gen_range(0..n)] += 1;
    }
    weights
}
