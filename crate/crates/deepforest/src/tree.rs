//! CART-style regression/classification trees with the per-node statistics
//! needed for prediction decomposition and impurity-based importance.
//!
//! Impurity is the response variance; with one-hot responses this equals the
//! Gini index, so a single code path covers both tasks.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Candidate-feature selection per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Consider every feature.
    All,
    /// Consider `ceil(sqrt(K))` features drawn without replacement.
    Sqrt,
    /// Consider exactly `m` features drawn without replacement.
    Fixed(usize),
}

/// Threshold selection per candidate feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Scan midpoints of consecutive distinct sorted values.
    Best,
    /// Draw one uniform threshold inside the in-node value range.
    RandomThreshold,
}

/// Tree-growing parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeParams {
    /// Maximum leaf depth; `None` grows until other limits bind.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub feature_mode: FeatureMode,
    pub split_mode: SplitMode,
    /// RNG stream id; the tree consumes `stream_rng(seed_stream, 1)`.
    pub seed_stream: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            feature_mode: FeatureMode::All,
            split_mode: SplitMode::Best,
            seed_stream: 0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::InvalidParams(
                "min_samples_split must be >= 2".into(),
            ));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidParams("min_samples_leaf must be >= 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParams("max_depth must be >= 1".into()));
        }
        if let FeatureMode::Fixed(m) = self.feature_mode {
            if m == 0 || m > n_features {
                return Err(Error::InvalidParams(format!(
                    "fixed feature count {m} outside 1..={n_features}"
                )));
            }
        }
        Ok(())
    }
}

/// Internal-node split record. `impurity_decrease` is the weighted variance
/// reduction achieved by this split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub impurity_decrease: f64,
}

/// One tree node: the in-node (multiset) sample count, mean response, depth,
/// and the split if internal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub split: Option<Split>,
    pub n: usize,
    pub mean: Vec<f64>,
    pub depth: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// Per-leaf contribution matrices, indexed by node id. Filled by the
/// attribution pass for trees in deep layers.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LeafTable {
    /// `rows[node_id]` is a flattened `K x C` matrix for leaves, `None`
    /// for internal nodes.
    pub rows: Vec<Option<Vec<f64>>>,
    pub n_features: usize,
    pub n_outputs: usize,
}

impl LeafTable {
    pub fn get(&self, node_id: usize) -> Option<&[f64]> {
        self.rows.get(node_id).and_then(|r| r.as_deref())
    }
}

/// A fitted decision tree. Node 0 is the root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    n_features: usize,
    n_outputs: usize,
    leaf_table: Option<LeafTable>,
}

/// Minimum in-node variance; below this the node becomes a leaf.
const ZERO_VARIANCE: f64 = 1e-12;

impl Tree {
    /// Fit on the full dataset (unit weights).
    pub fn fit(d: &Dataset, params: &TreeParams) -> Result<Tree> {
        Self::fit_weighted(d, params, None)
    }

    /// Fit with integer multiplicity weights (bootstrap counts). Node counts
    /// and means are over the weighted multiset, which keeps the
    /// covariance form of MDI exactly equal to the node-sum form in-bag.
    pub fn fit_weighted(d: &Dataset, params: &TreeParams, weights: Option<&[u32]>) -> Result<Tree> {
        params.validate(d.n_features())?;
        if let Some(w) = weights {
            if w.len() != d.n_rows() {
                return Err(Error::DimensionMismatch {
                    what: "weights",
                    expected: d.n_rows(),
                    got: w.len(),
                });
            }
            if w.iter().all(|&wi| wi == 0) {
                return Err(Error::InvalidParams("weights sum to zero".into()));
            }
        }
        let rows: Vec<usize> = match weights {
            Some(w) => (0..d.n_rows()).filter(|&i| w[i] > 0).collect(),
            None => (0..d.n_rows()).collect(),
        };
        let weight_of = |i: usize| -> u64 { weights.map_or(1, |w| u64::from(w[i])) };

        let mut builder = TreeBuilder {
            d,
            params,
            rng: stream_rng(params.seed_stream, 1),
            nodes: Vec::new(),
            weight_of: &weight_of,
        };
        builder.grow(rows, 0);
        Ok(Tree {
            nodes: builder.nodes,
            n_features: d.n_features(),
            n_outputs: d.n_outputs(),
            leaf_table: None,
        })
    }

    /// Rebuild a tree from raw nodes, validating structural invariants.
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize, n_outputs: usize) -> Result<Tree> {
        let tree = Tree {
            nodes,
            n_features,
            n_outputs,
            leaf_table: None,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Check node invariants: child links, count additivity, the mean
    /// recursion, and non-negative impurity decrease.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::ModelInvariant("tree has no nodes".into()));
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if node.mean.len() != self.n_outputs {
                return Err(Error::ModelInvariant(format!(
                    "node {id}: mean has {} components, expected {}",
                    node.mean.len(),
                    self.n_outputs
                )));
            }
            if node.n == 0 {
                return Err(Error::ModelInvariant(format!("node {id}: empty node")));
            }
            let Some(split) = &node.split else { continue };
            if split.feature >= self.n_features {
                return Err(Error::ModelInvariant(format!(
                    "node {id}: split feature {} out of range {}",
                    split.feature, self.n_features
                )));
            }
            if split.impurity_decrease < 0.0 {
                return Err(Error::ModelInvariant(format!(
                    "node {id}: negative impurity decrease"
                )));
            }
            let (l, r) = (split.left, split.right);
            if l >= self.nodes.len() || r >= self.nodes.len() || l == id || r == id {
                return Err(Error::ModelInvariant(format!(
                    "node {id}: bad child links {l}, {r}"
                )));
            }
            let (ln, rn) = (&self.nodes[l], &self.nodes[r]);
            if ln.n + rn.n != node.n {
                return Err(Error::ModelInvariant(format!(
                    "node {id}: child counts {} + {} != {}",
                    ln.n, rn.n, node.n
                )));
            }
            for c in 0..self.n_outputs {
                let recombined =
                    (ln.n as f64 * ln.mean[c] + rn.n as f64 * rn.mean[c]) / node.n as f64;
                if (recombined - node.mean[c]).abs() > 1e-9 * (1.0 + node.mean[c].abs()) {
                    return Err(Error::ModelInvariant(format!(
                        "node {id}: mean recursion broken in component {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn root_mean(&self) -> &[f64] {
        &self.nodes[0].mean
    }

    pub fn leaf_table(&self) -> Option<&LeafTable> {
        self.leaf_table.as_ref()
    }

    pub(crate) fn set_leaf_table(&mut self, table: LeafTable) {
        self.leaf_table = Some(table);
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

    /// Id of the leaf `x` routes to. Routing is `x[feature] < threshold`
    /// goes left.
    pub(crate) fn leaf_for(&self, x: &[f64]) -> usize {
        let mut id = 0;
        while let Some(split) = &self.nodes[id].split {
            id = if x[split.feature] < split.threshold {
                split.left
            } else {
                split.right
            };
        }
        id
    }

    /// Leaf mean response for `x`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.nodes[self.leaf_for(x)].mean.clone())
    }

    /// Path decomposition of the prediction: `(bias, contributions)` where
    /// `bias` is the root mean and `contributions` is a flattened `K x C`
    /// matrix. Each step from parent to child adds the change in node mean
    /// to the row of the parent's split feature, so
    /// `bias + column_sums(contributions) = predict(x)`.
    pub fn contributions(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let c = self.n_outputs;
        let mut contrib = vec![0.0; self.n_features * c];
        let mut id = 0;
        while let Some(split) = &self.nodes[id].split {
            let child = if x[split.feature] < split.threshold {
                split.left
            } else {
                split.right
            };
            for comp in 0..c {
                contrib[split.feature * c + comp] +=
                    self.nodes[child].mean[comp] - self.nodes[id].mean[comp];
            }
            id = child;
        }
        Ok((self.nodes[0].mean.clone(), contrib))
    }

    /// Classic node-sum MDI: for each feature, the impurity decreases of its
    /// splits weighted by the in-node fraction of `n_total` training rows.
    pub fn mdi_classic(&self, n_total: usize) -> Vec<f64> {
        let mut mdi = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let Some(split) = &node.split {
                mdi[split.feature] +=
                    node.n as f64 / n_total as f64 * split.impurity_decrease;
            }
        }
        mdi
    }

    /// Covariance-form MDI over a dataset:
    /// `(1/|D|) sum_i <f_k(x_i), y_i>` per feature.
    pub fn mdi_cov(&self, d: &Dataset) -> Result<Vec<f64>> {
        self.mdi_cov_weighted(d, None)
    }

    /// Covariance-form MDI with multiplicity weights; `|D|` is the weight
    /// total. With the tree's own bootstrap weights this equals
    /// `mdi_classic` exactly.
    pub fn mdi_cov_weighted(&self, d: &Dataset, weights: Option<&[u32]>) -> Result<Vec<f64>> {
        if d.n_features() != self.n_features {
            return Err(Error::DimensionMismatch {
                what: "dataset features",
                expected: self.n_features,
                got: d.n_features(),
            });
        }
        if d.n_outputs() != self.n_outputs {
            return Err(Error::DimensionMismatch {
                what: "dataset outputs",
                expected: self.n_outputs,
                got: d.n_outputs(),
            });
        }
        if let Some(w) = weights {
            if w.len() != d.n_rows() {
                return Err(Error::DimensionMismatch {
                    what: "weights",
                    expected: d.n_rows(),
                    got: w.len(),
                });
            }
        }
        let c = self.n_outputs;
        let mut acc = vec![0.0; self.n_features];
        let mut total_weight = 0.0;
        for i in 0..d.n_rows() {
            let w = weights.map_or(1.0, |w| f64::from(w[i]));
            if w == 0.0 {
                continue;
            }
            total_weight += w;
            let (_, contrib) = self.contributions(d.features_row(i))?;
            let y = d.response_row(i);
            for k in 0..self.n_features {
                let mut dot = 0.0;
                for comp in 0..c {
                    dot += contrib[k * c + comp] * y[comp];
                }
                acc[k] += w * dot;
            }
        }
        for v in acc.iter_mut() {
            *v /= total_weight;
        }
        Ok(acc)
    }

    /// Maximum leaf depth.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Features that appear in at least one split.
    pub fn split_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.n_features];
        for node in &self.nodes {
            if let Some(split) = &node.split {
                used[split.feature] = true;
            }
        }
        used
    }
}

struct TreeBuilder<'a> {
    d: &'a Dataset,
    params: &'a TreeParams,
    rng: rand_chacha::ChaCha8Rng,
    nodes: Vec<Node>,
    weight_of: &'a dyn Fn(usize) -> u64,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    /// Weighted count and response sum over `rows`.
    fn node_stats(&self, rows: &[usize]) -> (u64, Vec<f64>) {
        let c = self.d.n_outputs();
        let mut n: u64 = 0;
        let mut sum = vec![0.0; c];
        for &i in rows {
            let w = (self.weight_of)(i);
            n += w;
            let wf = w as f64;
            for (s, y) in sum.iter_mut().zip(self.d.response_row(i)) {
                *s += wf * y;
            }
        }
        (n, sum)
    }

    /// `sum_i w_i ||y_i||^2` over `rows`; impurity is recovered as
    /// `sq/n - ||sum||^2/n^2`.
    fn sum_squares(&self, rows: &[usize]) -> f64 {
        let mut sq = 0.0;
        for &i in rows {
            let w = (self.weight_of)(i) as f64;
            for y in self.d.response_row(i) {
                sq += w * y * y;
            }
        }
        sq
    }

    /// Grow the subtree for `rows` at `depth`; returns the node id.
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let (n, sum) = self.node_stats(&rows);
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let id = self.nodes.len();
        self.nodes.push(Node {
            split: None,
            n: n as usize,
            mean,
            depth,
        });

        if let Some(max_depth) = self.params.max_depth {
            if depth >= max_depth {
                return id;
            }
        }
        if (n as usize) < self.params.min_samples_split {
            return id;
        }
        let parent_score = norm_sq(&sum) / nf;
        let impurity = (self.sum_squares(&rows) - parent_score) / nf;
        if impurity < ZERO_VARIANCE {
            return id;
        }

        let candidates = self.candidate_features();
        let best = match self.params.split_mode {
            SplitMode::Best => self.best_split(&rows, &candidates, n, &sum, parent_score),
            SplitMode::RandomThreshold => {
                self.random_threshold_split(&rows, &candidates, n, parent_score)
            }
        };
        let Some(best) = best else { return id };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.d.feature(i, best.feature) < best.threshold);
        // Non-improving and degenerate splits were rejected above.
        debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());

        let delta = (best.score - parent_score) / nf;
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id].split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            impurity_decrease: delta.max(0.0),
        });
        id
    }

    /// Candidate feature indices in ascending order.
    fn candidate_features(&mut self) -> Vec<usize> {
        let k = self.d.n_features();
        let m = match self.params.feature_mode {
            FeatureMode::All => k,
            FeatureMode::Sqrt => (k as f64).sqrt().ceil() as usize,
            FeatureMode::Fixed(m) => m,
        }
        .min(k)
        .max(1);
        if m == k {
            return (0..k).collect();
        }
        let mut pool: Vec<usize> = (0..k).collect();
        crate::data::shuffle(&mut pool, &mut self.rng);
        let mut chosen = pool[..m].to_vec();
        chosen.sort_unstable();
        chosen
    }

    /// Exhaustive midpoint scan. Ties keep the earliest (lowest feature
    /// index, smallest threshold) candidate.
    fn best_split(
        &mut self,
        rows: &[usize],
        candidates: &[usize],
        n: u64,
        total_sum: &[f64],
        parent_score: f64,
    ) -> Option<BestSplit> {
        let c = self.d.n_outputs();
        let min_leaf = self.params.min_samples_leaf as u64;
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = Vec::with_capacity(rows.len());
        for &feature in candidates {
            order.clear();
            order.extend_from_slice(rows);
            order.sort_unstable_by(|&a, &b| {
                self.d
                    .feature(a, feature)
                    .total_cmp(&self.d.feature(b, feature))
                    .then(a.cmp(&b))
            });

            let mut left_n: u64 = 0;
            let mut left_sum = vec![0.0; c];
            for w in 0..order.len() - 1 {
                let i = order[w];
                let wt = (self.weight_of)(i);
                left_n += wt;
                let wf = wt as f64;
                for (s, y) in left_sum.iter_mut().zip(self.d.response_row(i)) {
                    *s += wf * y;
                }
                let v = self.d.feature(i, feature);
                let v_next = self.d.feature(order[w + 1], feature);
                if v == v_next {
                    continue;
                }
                let right_n = n - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let threshold = v + 0.5 * (v_next - v);
                // A midpoint that rounds down to `v` would route every row
                // right; skip it. Rounding up to `v_next` still separates.
                if threshold <= v {
                    continue;
                }
                let mut score = norm_sq(&left_sum) / left_n as f64;
                let mut right_dot = 0.0;
                for comp in 0..c {
                    let r = total_sum[comp] - left_sum[comp];
                    right_dot += r * r;
                }
                score += right_dot / right_n as f64;
                let improves = match &best {
                    None => score > parent_score,
                    Some(b) => score > b.score,
                };
                if improves && score > parent_score {
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    /// One uniform threshold per candidate feature inside its in-node range;
    /// the best improving candidate wins.
    fn random_threshold_split(
        &mut self,
        rows: &[usize],
        candidates: &[usize],
        n: u64,
        parent_score: f64,
    ) -> Option<BestSplit> {
        use rand::Rng;
        let c = self.d.n_outputs();
        let min_leaf = self.params.min_samples_leaf as u64;
        let mut best: Option<BestSplit> = None;
        for &feature in candidates {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in rows {
                let v = self.d.feature(i, feature);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !(hi > lo) {
                continue;
            }
            let threshold = self.rng.gen_range(lo..hi).max(lo.next_up());
            let mut left_n: u64 = 0;
            let mut left_sum = vec![0.0; c];
            let mut right_sum = vec![0.0; c];
            for &i in rows {
                let w = (self.weight_of)(i) as f64;
                let target = if self.d.feature(i, feature) < threshold {
                    left_n += (self.weight_of)(i);
                    &mut left_sum
                } else {
                    &mut right_sum
                };
                for (s, y) in target.iter_mut().zip(self.d.response_row(i)) {
                    *s += w * y;
                }
            }
            let right_n = n - left_n;
            if left_n < min_leaf || right_n < min_leaf || left_n == 0 || right_n == 0 {
                continue;
            }
            let score = norm_sq(&left_sum) / left_n as f64 + norm_sq(&right_sum) / right_n as f64;
            let improves = match &best {
                None => score > parent_score,
                Some(b) => score > b.score,
            };
            if improves && score > parent_score {
                best = Some(BestSplit {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
