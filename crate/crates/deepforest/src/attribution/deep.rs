//! Attribution through deep layers.
//!
//! Trees in the second and deeper layers split on generated features. Each
//! such split's response change is traced back to the original features by
//! averaging the previous layer's per-instance contributions over the
//! instances in the child versus the parent node (estimation), then rescaled
//! so the per-class sums match the labeled change (calibration). Running
//! totals are stored per leaf, so explaining a point is a table lookup.

use rayon::prelude::*;

use crate::attribution::calibrate::{calibrate, CalibrationMethod};
use crate::cascade::LayerSchema;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::tree::{LeafTable, Tree};

/// Per-instance `K x C` contribution matrices for one forest, covering the
/// original features only.
#[derive(Debug, Clone)]
pub struct InstanceContribs {
    data: Vec<f64>,
    n_rows: usize,
    n_features: usize,
    n_outputs: usize,
}

impl InstanceContribs {
    pub fn zeros(n_rows: usize, n_features: usize, n_outputs: usize) -> Self {
        Self {
            data: vec![0.0; n_rows * n_features * n_outputs],
            n_rows,
            n_features,
            n_outputs,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Flattened `K x C` matrix for instance `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let len = self.n_features * self.n_outputs;
        &self.data[i * len..(i + 1) * len]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.n_features * self.n_outputs;
        &mut self.data[i * len..(i + 1) * len]
    }
}

/// Sum-constraint record for one calibrated split child, kept by audits.
#[derive(Debug, Clone)]
pub struct CalibrationCheck {
    pub layer: usize,
    pub forest: usize,
    pub tree: usize,
    /// Child node that received the calibrated delta.
    pub node: usize,
    /// True per-class response change of the split.
    pub delta_true: Vec<f64>,
    /// Per-class sums of the calibrated decomposition, recomputed from the
    /// emitted matrix.
    pub calibrated_sum: Vec<f64>,
}

/// Estimation step: per-feature change in mean previous-layer contribution
/// between a child node and its parent. Returns a flattened `K x C` matrix;
/// its per-class sums equal the change in mean predicted response.
pub fn estimate_node_delta(
    prev: &InstanceContribs,
    child_rows: &[u32],
    parent_rows: &[u32],
) -> Result<Vec<f64>> {
    if child_rows.is_empty() || parent_rows.is_empty() {
        return Err(Error::Internal(
            "empty node membership during estimation".into(),
        ));
    }
    let child_mean = mean_rows(prev, child_rows);
    let parent_mean = mean_rows(prev, parent_rows);
    Ok(child_mean
        .iter()
        .zip(&parent_mean)
        .map(|(c, p)| c - p)
        .collect())
}

/// Mean contribution matrix over the given instance rows.
fn mean_rows(prev: &InstanceContribs, rows: &[u32]) -> Vec<f64> {
    let len = prev.n_features * prev.n_outputs;
    let mut mean = vec![0.0; len];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(prev.row(i as usize)) {
            *m += v;
        }
    }
    let n = rows.len() as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    mean
}

/// Route every row of `data` through `tree`, collecting the training
/// instance list of each node (row order preserved).
fn node_memberships(tree: &Tree, data: &Dataset) -> Vec<Vec<u32>> {
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); tree.nodes().len()];
    for i in 0..data.n_rows() {
        let x = data.features_row(i);
        let mut id = 0;
        members[id].push(i as u32);
        while let Some(split) = &tree.nodes()[id].split {
            id = if x[split.feature] < split.threshold {
                split.left
            } else {
                split.right
            };
            members[id].push(i as u32);
        }
    }
    members
}

/// Build the per-leaf contribution table for one deep-layer tree.
///
/// Depth-first traversal with a running `K x C` accumulator: splits on an
/// original feature add the change in node mean to that feature's row;
/// splits on a generated feature add the calibrated estimate to all rows.
fn leaf_table_for_tree(
    tree: &Tree,
    layer_data: &Dataset,
    n_original: usize,
    schema: &LayerSchema,
    prev: &[InstanceContribs],
    method: &CalibrationMethod,
    audit: Option<(&mut Vec<CalibrationCheck>, usize, usize, usize)>,
) -> Result<LeafTable> {
    let c = tree.n_outputs();
    let members = node_memberships(tree, layer_data);
    let mut table = LeafTable {
        rows: vec![None; tree.nodes().len()],
        n_features: n_original,
        n_outputs: c,
    };
    let mut audit = audit;

    let mut stack: Vec<(usize, Vec<f64>)> = vec![(0, vec![0.0; n_original * c])];
    while let Some((id, accum)) = stack.pop() {
        let node = &tree.nodes()[id];
        let Some(split) = &node.split else {
            table.rows[id] = Some(accum);
            continue;
        };
        // Parent mean contribution is shared by both children.
        let parent_rows = &members[id];
        let estimation_parent = if split.feature >= n_original {
            if parent_rows.is_empty() {
                return Err(Error::Internal(format!(
                    "node {id} has no training instances"
                )));
            }
            let (source_forest, _) = schema.source(split.feature - n_original)?;
            Some((source_forest, mean_rows(&prev[source_forest], parent_rows)))
        } else {
            None
        };

        for &child in &[split.left, split.right] {
            let child_node = &tree.nodes()[child];
            let delta_true: Vec<f64> = child_node
                .mean
                .iter()
                .zip(&node.mean)
                .map(|(a, b)| a - b)
                .collect();
            let mut child_accum = accum.clone();
            match &estimation_parent {
                None => {
                    // Original feature: attribute the whole change to it.
                    for comp in 0..c {
                        child_accum[split.feature * c + comp] += delta_true[comp];
                    }
                }
                Some((source_forest, parent_mean)) => {
                    let child_rows = &members[child];
                    if child_rows.is_empty() {
                        return Err(Error::Internal(format!(
                            "node {child} has no training instances"
                        )));
                    }
                    let child_mean = mean_rows(&prev[*source_forest], child_rows);
                    let deltas_hat: Vec<f64> = child_mean
                        .iter()
                        .zip(parent_mean)
                        .map(|(a, b)| a - b)
                        .collect();
                    let calibrated = calibrate(&deltas_hat, n_original, &delta_true, method);
                    if let Some((sink, layer, forest, tree_idx)) = audit.as_mut() {
                        let mut sums = vec![0.0; c];
                        for k in 0..n_original {
                            for comp in 0..c {
                                sums[comp] += calibrated[k * c + comp];
                            }
                        }
                        sink.push(CalibrationCheck {
                            layer: *layer,
                            forest: *forest,
                            tree: *tree_idx,
                            node: child,
                            delta_true: delta_true.clone(),
                            calibrated_sum: sums,
                        });
                    }
                    for (a, v) in child_accum.iter_mut().zip(&calibrated) {
                        *a += v;
                    }
                }
            }
            stack.push((child, child_accum));
        }
    }
    Ok(table)
}

/// Build leaf tables for every tree of a deep-layer forest. Returns the
/// tables (tree order) and, when auditing, the calibration records.
pub(crate) fn build_forest_tables(
    forest: &Forest,
    layer_data: &Dataset,
    n_original: usize,
    schema: &LayerSchema,
    prev: &[InstanceContribs],
    method: &CalibrationMethod,
    audit_context: Option<(usize, usize)>,
) -> Result<(Vec<LeafTable>, Vec<CalibrationCheck>)> {
    let per_tree: Result<Vec<(LeafTable, Vec<CalibrationCheck>)>> = forest
        .trees()
        .par_iter()
        .enumerate()
        .map(|(tree_idx, tree)| {
            let mut checks = Vec::new();
            let audit = audit_context
                .map(|(layer, forest_idx)| (&mut checks, layer, forest_idx, tree_idx));
            let table = leaf_table_for_tree(
                tree,
                layer_data,
                n_original,
                schema,
                prev,
                method,
                audit,
            )?;
            Ok((table, checks))
        })
        .collect();
    let per_tree = per_tree?;
    let mut tables = Vec::with_capacity(per_tree.len());
    let mut checks = Vec::new();
    for (table, tree_checks) in per_tree {
        tables.push(table);
        checks.extend(tree_checks);
    }
    Ok((tables, checks))
}

/// Per-instance calibrated contributions of a deep-layer forest: for each
/// training row, the mean of the leaf-table rows it reaches.
pub(crate) fn instance_contribs_from_tables(
    forest: &Forest,
    layer_data: &Dataset,
    tables: &[LeafTable],
    n_original: usize,
) -> Result<InstanceContribs> {
    let c = forest.n_outputs();
    let n = layer_data.n_rows();
    let mut out = InstanceContribs::zeros(n, n_original, c);
    let n_trees = forest.trees().len() as f64;
    for i in 0..n {
        let x = layer_data.features_row(i);
        let row = out.row_mut(i);
        for (tree, table) in forest.trees().iter().zip(tables) {
            let leaf = tree.leaf_for(x);
            let leaf_row = table.get(leaf).ok_or_else(|| {
                Error::Internal(format!("leaf {leaf} missing from contribution table"))
            })?;
            for (acc, v) in row.iter_mut().zip(leaf_row) {
                *acc += v;
            }
        }
        for v in row.iter_mut() {
            *v /= n_trees;
        }
    }
    Ok(out)
}

/// Per-instance contributions of a first-layer forest: plain path
/// decompositions averaged over trees.
pub(crate) fn layer1_instance_contribs(
    forest: &Forest,
    layer_data: &Dataset,
) -> Result<InstanceContribs> {
    let n = layer_data.n_rows();
    let k = forest.n_features();
    let c = forest.n_outputs();
    let rows: Result<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (_, contrib) = forest.contributions(layer_data.features_row(i))?;
            Ok(contrib)
        })
        .collect();
    let rows = rows?;
    let mut out = InstanceContribs::zeros(n, k, c);
    for (i, contrib) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&contrib);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_memberships_give_zero_delta() {
        let mut prev = InstanceContribs::zeros(3, 2, 1);
        prev.row_mut(0).copy_from_slice(&[1.0, -0.5]);
        prev.row_mut(1).copy_from_slice(&[0.5, 0.5]);
        prev.row_mut(2).copy_from_slice(&[-1.0, 0.0]);
        let rows = [0u32, 1, 2];
        let delta = estimate_node_delta(&prev, &rows, &rows).unwrap();
        assert!(delta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_previous_contributions_give_zero_delta() {
        let prev = InstanceContribs::zeros(4, 3, 2);
        let delta = estimate_node_delta(&prev, &[0, 1], &[0, 1, 2, 3]).unwrap();
        assert!(delta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn delta_is_child_mean_minus_parent_mean() {
        let mut prev = InstanceContribs::zeros(4, 2, 1);
        // Feature 0 contributions: -1, -1, 1, 1; feature 1: all zero.
        for (i, v) in [-1.0, -1.0, 1.0, 1.0].iter().enumerate() {
            prev.row_mut(i)[0] = *v;
        }
        let delta = estimate_node_delta(&prev, &[0, 1], &[0, 1, 2, 3]).unwrap();
        assert_eq!(delta, vec![-1.0, 0.0]);
        // Per-class sum equals the change in mean prediction.
        assert_eq!(delta.iter().sum::<f64>(), -1.0);
    }

    #[test]
    fn empty_membership_is_an_error() {
        let prev = InstanceContribs::zeros(2, 1, 1);
        assert!(estimate_node_delta(&prev, &[], &[0, 1]).is_err());
    }
}
