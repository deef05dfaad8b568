//! Cascade forests: layers of forests whose prediction vectors are
//! concatenated with the original features and fed to the next layer.
//! Layer growth is driven by a held-out validation metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::deep::{
    build_forest_tables, instance_contribs_from_tables, layer1_instance_contribs,
    CalibrationCheck, InstanceContribs,
};
use crate::attribution::{CalibrationMethod, ContributionReport, ImportanceReport};
use crate::data::{split_rows, Dataset, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestKind, ForestParams};
use crate::rng::derive_seed;

/// Validation metric steering layer growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMetric {
    Accuracy,
    Mse,
}

/// Cascade training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Member forests of every layer. Bootstrap must be off: layer biases
    /// must equal the training mean exactly for the decomposition to hold.
    pub forests_per_layer: Vec<ForestParams>,
    pub max_layers: usize,
    /// Consecutive non-improving layers tolerated before stopping.
    pub patience: usize,
    /// Fraction of rows held out to steer growth.
    pub valid_fraction: f64,
    /// Growth metric; `None` picks accuracy for classification, MSE for
    /// regression.
    pub metric: Option<GrowthMetric>,
    /// Calibration used when building leaf contribution tables.
    pub calibration: CalibrationMethod,
    pub seed: u64,
}

impl CascadeConfig {
    /// Four 50-tree forests per layer (two best-split, two fully random),
    /// depth 5.
    pub fn small(seed: u64) -> Self {
        Self::with_forest_shape(seed, 50, Some(5))
    }

    /// The benchmark variant: depth 8 trees, Brier-score growth.
    pub fn bench(seed: u64) -> Self {
        let mut cfg = Self::with_forest_shape(seed, 50, Some(8));
        cfg.valid_fraction = 0.15;
        cfg.metric = Some(GrowthMetric::Mse);
        cfg
    }

    fn with_forest_shape(seed: u64, n_trees: usize, max_depth: Option<usize>) -> Self {
        let kinds = [
            ForestKind::BestSplit,
            ForestKind::BestSplit,
            ForestKind::FullyRandom,
            ForestKind::FullyRandom,
        ];
        let forests = kinds
            .iter()
            .map(|&kind| ForestParams::new(kind, n_trees, 0).with_max_depth(max_depth))
            .collect();
        Self {
            forests_per_layer: forests,
            max_layers: 8,
            patience: 2,
            valid_fraction: 0.2,
            metric: None,
            calibration: CalibrationMethod::default(),
            seed,
        }
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        if self.forests_per_layer.is_empty() {
            return Err(Error::InvalidConfig("no forests per layer".into()));
        }
        if self.max_layers == 0 {
            return Err(Error::InvalidConfig("max_layers must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "valid_fraction must lie in (0, 1)".into(),
            ));
        }
        for params in &self.forests_per_layer {
            params.validate()?;
            if params.bootstrap {
                return Err(Error::InvalidConfig(
                    "cascade member forests must not use bootstrap".into(),
                ));
            }
        }
        if self.metric == Some(GrowthMetric::Accuracy) && task == Task::Regression {
            return Err(Error::InvalidConfig(
                "accuracy metric requires a classification task".into(),
            ));
        }
        Ok(())
    }

    fn metric_for(&self, task: Task) -> GrowthMetric {
        self.metric.unwrap_or(match task {
            Task::Classification => GrowthMetric::Accuracy,
            Task::Regression => GrowthMetric::Mse,
        })
    }

    /// Deterministic internal (train, validation) row split.
    pub fn split_rows(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let spec = SplitSpec {
            train_fraction: 1.0 - self.valid_fraction,
            valid_fraction: self.valid_fraction,
            test_fraction: 0.0,
            seed: derive_seed(self.seed, SPLIT_TAG),
        };
        let (train, valid, _) = split_rows(n, &spec).map_err(|_| {
            Error::InvalidConfig(format!(
                "validation split too small (n = {n}, valid_fraction = {})",
                self.valid_fraction
            ))
        })?;
        Ok((train, valid))
    }
}

const SPLIT_TAG: u64 = 0x51;
const LAYER_TAG: u64 = 0x1000;

/// Maps each generated input feature of a layer to the previous-layer
/// forest and class component that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSchema {
    sources: Vec<(usize, usize)>,
}

impl LayerSchema {
    /// Empty schema: a layer fed only the original features.
    pub fn empty() -> Self {
        Self {
            sources: Vec::new(),
        }
    }

    /// Canonical order: forest-major, class-minor.
    pub fn canonical(n_forests: usize, n_outputs: usize) -> Self {
        let mut sources = Vec::with_capacity(n_forests * n_outputs);
        for forest in 0..n_forests {
            for class in 0..n_outputs {
                sources.push((forest, class));
            }
        }
        Self { sources }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self) -> &[(usize, usize)] {
        &self.sources
    }

    /// Source of generated feature `new_index` (0-based past the originals).
    pub fn source(&self, new_index: usize) -> Result<(usize, usize)> {
        self.sources.get(new_index).copied().ok_or_else(|| {
            Error::Internal(format!("generated feature {new_index} outside schema"))
        })
    }

    /// The map must be a bijection onto forests x classes.
    pub fn validate(&self, n_forests: usize, n_outputs: usize) -> Result<()> {
        if self.sources.len() != n_forests * n_outputs {
            return Err(Error::ModelInvariant(format!(
                "schema has {} entries, expected {}",
                self.sources.len(),
                n_forests * n_outputs
            )));
        }
        let mut seen = vec![false; n_forests * n_outputs];
        for &(forest, class) in &self.sources {
            if forest >= n_forests || class >= n_outputs {
                return Err(Error::ModelInvariant(format!(
                    "schema entry ({forest}, {class}) out of range"
                )));
            }
            let slot = forest * n_outputs + class;
            if seen[slot] {
                return Err(Error::ModelInvariant(format!(
                    "schema entry ({forest}, {class}) duplicated"
                )));
            }
            seen[slot] = true;
        }
        Ok(())
    }
}

/// Concatenate original features with previous-layer outputs in schema
/// order.
pub fn augment_features(
    x: &[f64],
    prev_outputs: &[Vec<f64>],
    schema: &LayerSchema,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len() + schema.len());
    out.extend_from_slice(x);
    for &(forest, class) in schema.sources() {
        let outputs = prev_outputs.get(forest).ok_or(Error::DimensionMismatch {
            what: "previous-layer outputs",
            expected: forest + 1,
            got: prev_outputs.len(),
        })?;
        let value = outputs.get(class).ok_or(Error::DimensionMismatch {
            what: "previous-layer output components",
            expected: class + 1,
            got: outputs.len(),
        })?;
        out.push(*value);
    }
    Ok(out)
}

/// One cascade layer: its forests and the schema of the generated features
/// it consumes (empty for the first layer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeLayer {
    pub forests: Vec<Forest>,
    pub schema: LayerSchema,
}

/// A fitted cascade, truncated to its best layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeModel {
    layers: Vec<CascadeLayer>,
    mu0: Vec<f64>,
    best_layer: usize,
    growth_log: Vec<f64>,
    n_features: usize,
    n_outputs: usize,
    task: Task,
    feature_names: Vec<String>,
    class_labels: Vec<String>,
    calibration: CalibrationMethod,
    metric: GrowthMetric,
    seed: u64,
}

impl CascadeModel {
    /// Train a cascade on `d`. An internal validation split steers growth;
    /// the returned model is truncated to the best layer and carries leaf
    /// contribution tables for every deep layer.
    pub fn fit(d: &Dataset, cfg: &CascadeConfig) -> Result<CascadeModel> {
        cfg.validate(d.task())?;
        let (train_rows, valid_rows) = cfg.split_rows(d.n_rows())?;
        let d_train = d.select_rows(&train_rows)?;
        let d_valid = d.select_rows(&valid_rows)?;
        let metric = cfg.metric_for(d.task());
        let k = d.n_features();
        let c = d.n_outputs();
        let mu0 = d_train.mean_response();

        let mut layers: Vec<CascadeLayer> = Vec::new();
        let mut layer_inputs: Vec<Dataset> = Vec::new();
        let mut growth_log: Vec<f64> = Vec::new();
        let mut best_value = f64::NAN;
        let mut best_layer = 0usize;
        let mut since_improve = 0usize;

        let mut train_input = d_train.clone();
        let mut valid_input: Vec<Vec<f64>> =
            (0..d_valid.n_rows()).map(|i| d_valid.features_row(i).to_vec()).collect();
        let mut schema = LayerSchema::empty();

        for layer_idx in 1..=cfg.max_layers {
            let layer_seed = derive_seed(cfg.seed, LAYER_TAG + layer_idx as u64);
            let mut forests = Vec::with_capacity(cfg.forests_per_layer.len());
            for (fi, template) in cfg.forests_per_layer.iter().enumerate() {
                let mut params = template.clone();
                params.seed = derive_seed(layer_seed, fi as u64);
                forests.push(Forest::fit(&train_input, &params)?);
            }

            // Ensemble prediction on the held-out rows.
            let valid_preds: Result<Vec<Vec<Vec<f64>>>> = forests
                .iter()
                .map(|f| {
                    valid_input
                        .par_iter()
                        .map(|x| f.predict(x))
                        .collect::<Result<Vec<_>>>()
                })
                .collect();
            let valid_preds = valid_preds?;
            let value = growth_metric_value(metric, &valid_preds, &d_valid);
            growth_log.push(value);

            layers.push(CascadeLayer {
                forests,
                schema: schema.clone(),
            });
            layer_inputs.push(train_input.clone());

            let improved = best_layer == 0
                || match metric {
                    GrowthMetric::Accuracy => value > best_value + 1e-12,
                    GrowthMetric::Mse => value < best_value - 1e-12,
                };
            if improved {
                best_value = value;
                best_layer = layer_idx;
                since_improve = 0;
            } else {
                since_improve += 1;
                if since_improve >= cfg.patience {
                    break;
                }
            }
            if layer_idx == cfg.max_layers {
                break;
            }

            // Prepare next-layer inputs: originals plus this layer's outputs.
            let layer = layers.last().expect("layer just pushed");
            schema = LayerSchema::canonical(layer.forests.len(), c);
            let train_preds: Result<Vec<Vec<Vec<f64>>>> = layer
                .forests
                .iter()
                .map(|f| predict_rows(f, &train_input))
                .collect();
            let train_preds = train_preds?;
            let mut features = Vec::with_capacity(d_train.n_rows() * (k + schema.len()));
            for i in 0..d_train.n_rows() {
                let outputs: Vec<Vec<f64>> =
                    train_preds.iter().map(|p| p[i].clone()).collect();
                features.extend(augment_features(d_train.features_row(i), &outputs, &schema)?);
            }
            let names = augmented_names(d_train.feature_names(), &schema);
            train_input = d_train.with_features(features, k + schema.len(), names)?;

            valid_input = (0..d_valid.n_rows())
                .map(|i| {
                    let outputs: Vec<Vec<f64>> =
                        valid_preds.iter().map(|p| p[i].clone()).collect();
                    augment_features(d_valid.features_row(i), &outputs, &schema)
                })
                .collect::<Result<Vec<_>>>()?;
        }

        layers.truncate(best_layer);
        layer_inputs.truncate(best_layer);

        let mut model = CascadeModel {
            layers,
            mu0,
            best_layer,
            growth_log,
            n_features: k,
            n_outputs: c,
            task: d.task(),
            feature_names: d.feature_names().to_vec(),
            class_labels: d.class_labels().to_vec(),
            calibration: cfg.calibration,
            metric,
            seed: cfg.seed,
        };
        model.build_leaf_tables(&layer_inputs)?;
        Ok(model)
    }

    /// Assemble a cascade from prefitted layers and build its leaf
    /// contribution tables from the layer-training rows. `mu0` must be the
    /// mean response of `d_layer_train` for the decomposition to be exact.
    #[allow(clippy::too_many_arguments)]
    pub fn from_layers(
        layers: Vec<CascadeLayer>,
        mu0: Vec<f64>,
        growth_log: Vec<f64>,
        d_layer_train: &Dataset,
        calibration: CalibrationMethod,
        metric: GrowthMetric,
        seed: u64,
    ) -> Result<CascadeModel> {
        let best_layer = layers.len();
        let mut model = CascadeModel {
            layers,
            mu0,
            best_layer,
            growth_log,
            n_features: d_layer_train.n_features(),
            n_outputs: d_layer_train.n_outputs(),
            task: d_layer_train.task(),
            feature_names: d_layer_train.feature_names().to_vec(),
            class_labels: d_layer_train.class_labels().to_vec(),
            calibration,
            metric,
            seed,
        };
        let inputs = model.layer_input_datasets(d_layer_train)?;
        model.build_leaf_tables(&inputs)?;
        model.validate()?;
        Ok(model)
    }

    /// Fill leaf contribution tables for layers 2..=best with the model's
    /// calibration method.
    fn build_leaf_tables(&mut self, layer_inputs: &[Dataset]) -> Result<()> {
        if self.best_layer < 2 {
            return Ok(());
        }
        let method = self.calibration;
        let k = self.n_features;
        let mut prev: Vec<InstanceContribs> = self.layers[0]
            .forests
            .iter()
            .map(|f| layer1_instance_contribs(f, &layer_inputs[0]))
            .collect::<Result<Vec<_>>>()?;
        for j in 2..=self.best_layer {
            let layer = &mut self.layers[j - 1];
            let data = &layer_inputs[j - 1];
            let mut next = Vec::with_capacity(layer.forests.len());
            for forest in layer.forests.iter_mut() {
                let (tables, _) = build_forest_tables(
                    forest,
                    data,
                    k,
                    &layer.schema,
                    &prev,
                    &method,
                    None,
                )?;
                next.push(instance_contribs_from_tables(forest, data, &tables, k)?);
                for (tree, table) in forest.trees_mut().iter_mut().zip(tables) {
                    tree.set_leaf_table(table);
                }
            }
            prev = next;
        }
        Ok(())
    }

    /// Re-run the attribution pass with an arbitrary calibration method,
    /// collecting the per-node sum-constraint records. `d_layer_train` must
    /// be the rows the cascade layers were trained on. The model itself is
    /// not modified.
    pub fn attribution_audit(
        &self,
        d_layer_train: &Dataset,
        method: &CalibrationMethod,
    ) -> Result<Vec<CalibrationCheck>> {
        let inputs = self.layer_input_datasets(d_layer_train)?;
        let k = self.n_features;
        let mut checks = Vec::new();
        if self.best_layer < 2 {
            return Ok(checks);
        }
        let mut prev: Vec<InstanceContribs> = self.layers[0]
            .forests
            .iter()
            .map(|f| layer1_instance_contribs(f, &inputs[0]))
            .collect::<Result<Vec<_>>>()?;
        for j in 2..=self.best_layer {
            let layer = &self.layers[j - 1];
            let data = &inputs[j - 1];
            let mut next = Vec::with_capacity(layer.forests.len());
            for (fi, forest) in layer.forests.iter().enumerate() {
                let (tables, forest_checks) = build_forest_tables(
                    forest,
                    data,
                    k,
                    &layer.schema,
                    &prev,
                    method,
                    Some((j, fi)),
                )?;
                checks.extend(forest_checks);
                next.push(instance_contribs_from_tables(forest, data, &tables, k)?);
            }
            prev = next;
        }
        Ok(checks)
    }

    /// Input dataset of every layer for the rows of `d` (layer 1 is `d`
    /// itself, deeper layers carry augmented features).
    pub fn layer_input_datasets(&self, d: &Dataset) -> Result<Vec<Dataset>> {
        self.check_input_width(d.n_features())?;
        let mut out = Vec::with_capacity(self.best_layer);
        let mut current = d.clone();
        out.push(current.clone());
        for j in 2..=self.best_layer {
            let layer = &self.layers[j - 2];
            let schema = &self.layers[j - 1].schema;
            let preds: Result<Vec<Vec<Vec<f64>>>> = layer
                .forests
                .iter()
                .map(|f| predict_rows(f, &current))
                .collect();
            let preds = preds?;
            let mut features =
                Vec::with_capacity(d.n_rows() * (self.n_features + schema.len()));
            for i in 0..d.n_rows() {
                let outputs: Vec<Vec<f64>> = preds.iter().map(|p| p[i].clone()).collect();
                features.extend(augment_features(d.features_row(i), &outputs, schema)?);
            }
            let names = augmented_names(d.feature_names(), schema);
            current = d.with_features(features, self.n_features + schema.len(), names)?;
            out.push(current.clone());
        }
        Ok(out)
    }

    fn check_input_width(&self, got: usize) -> Result<()> {
        if got != self.n_features {
            return Err(Error::DimensionMismatch {
                what: "feature vector",
                expected: self.n_features,
                got,
            });
        }
        Ok(())
    }

    /// Forward pass: per-forest outputs at `layer` and the augmented input
    /// vector that layer consumed.
    fn forward(&self, x: &[f64], layer: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if layer == 0 || layer > self.best_layer {
            return Err(Error::InvalidParams(format!(
                "layer {layer} outside 1..={}",
                self.best_layer
            )));
        }
        let mut input = x.to_vec();
        for j in 1..=layer {
            let outputs: Result<Vec<Vec<f64>>> = self.layers[j - 1]
                .forests
                .iter()
                .map(|f| f.predict(&input))
                .collect();
            let outputs = outputs?;
            if j == layer {
                return Ok((outputs, input));
            }
            input = augment_features(x, &outputs, &self.layers[j].schema)?;
        }
        unreachable!("loop returns at the requested layer")
    }

    /// Mean of the best layer's forest outputs.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_at_layer(x, self.best_layer)
    }

    pub fn predict_at_layer(&self, x: &[f64], layer: usize) -> Result<Vec<f64>> {
        self.check_input_width(x.len())?;
        let (outputs, _) = self.forward(x, layer)?;
        Ok(mean_of(&outputs))
    }

    /// Feature contributions of the whole cascade for one instance.
    pub fn contributions(&self, x: &[f64]) -> Result<ContributionReport> {
        self.contributions_at_layer(x, self.best_layer)
    }

    /// Contributions as of layer `layer`: layer 1 is the plain forest
    /// decomposition; deeper layers read the calibrated leaf tables.
    pub fn contributions_at_layer(&self, x: &[f64], layer: usize) -> Result<ContributionReport> {
        self.check_input_width(x.len())?;
        let (outputs, input) = self.forward(x, layer)?;
        let prediction = mean_of(&outputs);
        let k = self.n_features;
        let c = self.n_outputs;
        let forests = &self.layers[layer - 1].forests;
        let mut contrib = vec![0.0; k * c];
        if layer == 1 {
            for forest in forests {
                let (_, fc) = forest.contributions(x)?;
                for (acc, v) in contrib.iter_mut().zip(&fc) {
                    *acc += v;
                }
            }
        } else {
            for forest in forests {
                let mut forest_contrib = vec![0.0; k * c];
                for tree in forest.trees() {
                    let leaf = tree.leaf_for(&input);
                    let table = tree.leaf_table().ok_or_else(|| {
                        Error::Internal("deep tree is missing its leaf table".into())
                    })?;
                    let row = table.get(leaf).ok_or_else(|| {
                        Error::Internal(format!("leaf {leaf} missing from table"))
                    })?;
                    for (acc, v) in forest_contrib.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                let nt = forest.trees().len() as f64;
                for (acc, v) in contrib.iter_mut().zip(&forest_contrib) {
                    *acc += v / nt;
                }
            }
        }
        let nf = forests.len() as f64;
        for v in contrib.iter_mut() {
            *v /= nf;
        }
        Ok(ContributionReport {
            bias: self.mu0.clone(),
            contrib,
            prediction,
            layer,
            n_features: k,
            n_outputs: c,
        })
    }

    /// MDI feature importance over `d`: the mean inner product of per-row
    /// contributions with the response.
    pub fn mdi(&self, d: &Dataset) -> Result<ImportanceReport> {
        self.mdi_at_layer(d, self.best_layer)
    }

    pub fn mdi_at_layer(&self, d: &Dataset, layer: usize) -> Result<ImportanceReport> {
        self.check_compatible(d)?;
        let k = self.n_features;
        let c = self.n_outputs;
        let rows: Result<Vec<Vec<f64>>> = (0..d.n_rows())
            .into_par_iter()
            .map(|i| {
                let report = self.contributions_at_layer(d.features_row(i), layer)?;
                let y = d.response_row(i);
                let mut per_feature = vec![0.0; k];
                for (feat, acc) in per_feature.iter_mut().enumerate() {
                    for comp in 0..c {
                        *acc += report.contrib[feat * c + comp] * y[comp];
                    }
                }
                Ok(per_feature)
            })
            .collect();
        let rows = rows?;
        let mut mdi = vec![0.0; k];
        for row in &rows {
            for (acc, v) in mdi.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let n = d.n_rows() as f64;
        for v in mdi.iter_mut() {
            *v /= n;
        }
        Ok(ImportanceReport {
            mdi,
            per_class: None,
            method: "mdi(df)".into(),
            dataset_id: String::new(),
        })
    }

    /// Per-class MDI (classification only): the covariance sum restricted to
    /// instances of each class. Classes absent from `d` yield `None` rows.
    pub fn local_mdi(&self, d: &Dataset) -> Result<ImportanceReport> {
        if self.task != Task::Classification {
            return Err(Error::InvalidParams(
                "local MDI requires a classification model".into(),
            ));
        }
        self.check_compatible(d)?;
        let k = self.n_features;
        let c = self.n_outputs;
        let contribs: Result<Vec<Vec<f64>>> = (0..d.n_rows())
            .into_par_iter()
            .map(|i| Ok(self.contributions(d.features_row(i))?.contrib))
            .collect();
        let contribs = contribs?;

        let mut mdi = vec![0.0; k];
        for (i, contrib) in contribs.iter().enumerate() {
            let y = d.response_row(i);
            for feat in 0..k {
                for comp in 0..c {
                    mdi[feat] += contrib[feat * c + comp] * y[comp];
                }
            }
        }
        for v in mdi.iter_mut() {
            *v /= d.n_rows() as f64;
        }

        let mut per_class: Vec<Option<Vec<f64>>> = Vec::with_capacity(c);
        for class in 0..c {
            let rows: Vec<usize> = (0..d.n_rows()).filter(|&i| d.class_of(i) == class).collect();
            if rows.is_empty() {
                per_class.push(None);
                continue;
            }
            let mut class_mdi = vec![0.0; k];
            for &i in &rows {
                for feat in 0..k {
                    class_mdi[feat] += contribs[i][feat * c + class];
                }
            }
            for v in class_mdi.iter_mut() {
                *v /= rows.len() as f64;
            }
            per_class.push(Some(class_mdi));
        }
        Ok(ImportanceReport {
            mdi,
            per_class: Some(per_class),
            method: "local-mdi(df)".into(),
            dataset_id: String::new(),
        })
    }

    /// Covariance-form MDI of every best-layer forest over its full
    /// (augmented) input feature set, evaluated on the rows of `d`. The
    /// per-forest vectors have `K + K'` entries; their grand total equals
    /// the sum of the cascade MDI over the original features.
    pub fn last_layer_input_mdi(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.check_compatible(d)?;
        let inputs = self.layer_input_datasets(d)?;
        let last_input = inputs.last().expect("at least one layer");
        self.layers[self.best_layer - 1]
            .forests
            .iter()
            .map(|f| f.mdi(last_input))
            .collect()
    }

    fn check_compatible(&self, d: &Dataset) -> Result<()> {
        self.check_input_width(d.n_features())?;
        if d.n_outputs() != self.n_outputs {
            return Err(Error::DimensionMismatch {
                what: "response components",
                expected: self.n_outputs,
                got: d.n_outputs(),
            });
        }
        Ok(())
    }

    pub fn layers(&self) -> &[CascadeLayer] {
        &self.layers
    }

    pub fn best_layer(&self) -> usize {
        self.best_layer
    }

    pub fn growth_log(&self) -> &[f64] {
        &self.growth_log
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
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

    pub fn calibration(&self) -> &CalibrationMethod {
        &self.calibration
    }

    pub fn metric(&self) -> GrowthMetric {
        self.metric
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Structural invariants; used when loading persisted models.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ModelInvariant("cascade has no layers".into()));
        }
        if self.best_layer != self.layers.len() {
            return Err(Error::ModelInvariant(
                "best_layer does not match the number of kept layers".into(),
            ));
        }
        if self.growth_log.len() < self.layers.len() {
            return Err(Error::ModelInvariant(
                "growth log shorter than kept layers".into(),
            ));
        }
        if self.mu0.len() != self.n_outputs {
            return Err(Error::ModelInvariant("mu0 length mismatch".into()));
        }
        for (j, layer) in self.layers.iter().enumerate() {
            let expected_new = if j == 0 {
                layer.schema.validate(0, 0).map_err(|_| {
                    Error::ModelInvariant("layer 1 must have an empty schema".into())
                })?;
                0
            } else {
                let prev_forests = self.layers[j - 1].forests.len();
                layer.schema.validate(prev_forests, self.n_outputs)?;
                layer.schema.len()
            };
            let width = self.n_features + expected_new;
            if layer.forests.is_empty() {
                return Err(Error::ModelInvariant(format!("layer {} has no forests", j + 1)));
            }
            for forest in &layer.forests {
                if forest.n_features() != width {
                    return Err(Error::ModelInvariant(format!(
                        "layer {} forest consumes {} features, expected {width}",
                        j + 1,
                        forest.n_features()
                    )));
                }
                if forest.n_outputs() != self.n_outputs {
                    return Err(Error::ModelInvariant("forest output width mismatch".into()));
                }
                for tree in forest.trees() {
                    tree.validate()?;
                    if j >= 1 {
                        let table = tree.leaf_table().ok_or_else(|| {
                            Error::ModelInvariant(format!(
                                "layer {} tree lacks a leaf contribution table",
                                j + 1
                            ))
                        })?;
                        if table.n_features != self.n_features
                            || table.n_outputs != self.n_outputs
                            || table.rows.len() != tree.nodes().len()
                        {
                            return Err(Error::ModelInvariant(
                                "leaf table shape mismatch".into(),
                            ));
                        }
                        for (id, node) in tree.nodes().iter().enumerate() {
                            if node.is_leaf() != table.rows[id].is_some() {
                                return Err(Error::ModelInvariant(
                                    "leaf table rows must exist exactly on leaves".into(),
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn augmented_names(original: &[String], schema: &LayerSchema) -> Vec<String> {
    let mut names = original.to_vec();
    for &(forest, class) in schema.sources() {
        names.push(format!("prev_f{forest}_c{class}"));
    }
    names
}

fn predict_rows(forest: &Forest, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    (0..data.n_rows())
        .into_par_iter()
        .map(|i| forest.predict(data.features_row(i)))
        .collect()
}

fn mean_of(outputs: &[Vec<f64>]) -> Vec<f64> {
    let c = outputs[0].len();
    let mut mean = vec![0.0; c];
    for out in outputs {
        for (m, v) in mean.iter_mut().zip(out) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= outputs.len() as f64;
    }
    mean
}

fn growth_metric_value(metric: GrowthMetric, preds: &[Vec<Vec<f64>>], d_valid: &Dataset) -> f64 {
    let n = d_valid.n_rows();
    let mut total = 0.0;
    for i in 0..n {
        let per_forest: Vec<Vec<f64>> = preds.iter().map(|p| p[i].clone()).collect();
        let ensemble = mean_of(&per_forest);
        match metric {
            GrowthMetric::Accuracy => {
                if argmax(&ensemble) == d_valid.class_of(i) {
                    total += 1.0;
                }
            }
            GrowthMetric::Mse => {
                for (p, y) in ensemble.iter().zip(d_valid.response_row(i)) {
                    total += (p - y) * (p - y);
                }
            }
        }
    }
    total / n as f64
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;

    fn tiny_config(seed: u64) -> CascadeConfig {
        let mut cfg = CascadeConfig::small(seed);
        for params in cfg.forests_per_layer.iter_mut() {
            params.n_trees = 5;
            params.tree.max_depth = Some(3);
        }
        cfg.max_layers = 3;
        cfg
    }

    #[test]
    fn augment_orders_schema_entries() {
        let schema = LayerSchema::canonical(2, 1);
        let out = augment_features(&[1.0, 2.0], &[vec![0.3], vec![0.7]], &schema).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 0.3, 0.7]);

        let schema3 = LayerSchema::canonical(1, 3);
        let out = augment_features(&[1.0], &[vec![0.2, 0.5, 0.3]], &schema3).unwrap();
        assert_eq!(out.len(), 4);

        // A permuted schema permutes the generated block accordingly.
        let permuted = LayerSchema {
            sources: vec![(1, 0), (0, 0)],
        };
        let out = augment_features(&[9.0], &[vec![0.3], vec![0.7]], &permuted).unwrap();
        assert_eq!(out, vec![9.0, 0.7, 0.3]);
    }

    #[test]
    fn single_layer_model_reduces_to_forest_average() {
        let d = synth::gen_sincos(120, 4).unwrap();
        let mut cfg = tiny_config(1);
        cfg.max_layers = 1;
        let m = CascadeModel::fit(&d, &cfg).unwrap();
        assert_eq!(m.best_layer(), 1);
        let x = d.features_row(0);
        let mut expected = vec![0.0; 1];
        for f in m.layers()[0].forests.iter() {
            expected[0] += f.predict(x).unwrap()[0];
        }
        expected[0] /= m.layers()[0].forests.len() as f64;
        let got = m.predict(x).unwrap();
        assert!((got[0] - expected[0]).abs() < 1e-12);
    }

    #[test]
    fn classification_prediction_sums_to_one() {
        let d = synth::gen_threeclass(120, 2, 6).unwrap();
        let m = CascadeModel::fit(&d, &tiny_config(2)).unwrap();
        let p = m.predict(d.features_row(0)).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn growth_log_and_determinism() {
        let d = synth::gen_sincos(150, 9).unwrap();
        let cfg = tiny_config(3);
        let a = CascadeModel::fit(&d, &cfg).unwrap();
        let b = CascadeModel::fit(&d, &cfg).unwrap();
        assert_eq!(a.growth_log(), b.growth_log());
        assert_eq!(a.best_layer(), b.best_layer());
        let x = d.features_row(7);
        assert_eq!(a.predict(x).unwrap(), b.predict(x).unwrap());
    }

    #[test]
    fn deep_layer_width_follows_schema() {
        let d = synth::gen_threeclass(150, 1, 8).unwrap();
        let cfg = tiny_config(4);
        let m = CascadeModel::fit(&d, &cfg).unwrap();
        for (j, layer) in m.layers().iter().enumerate() {
            let expected = if j == 0 {
                m.n_features()
            } else {
                m.n_features() + m.layers()[j - 1].forests.len() * m.n_outputs()
            };
            for forest in &layer.forests {
                assert_eq!(forest.n_features(), expected);
            }
        }
        m.validate().unwrap();
    }

    #[test]
    fn deep_decomposition_identity() {
        let d = synth::gen_sincos(200, 11).unwrap();
        let m = CascadeModel::fit(&d, &tiny_config(5)).unwrap();
        for layer in 1..=m.best_layer() {
            for i in (0..20).map(|i| i * 7 % d.n_rows()) {
                let x = d.features_row(i);
                let report = m.contributions_at_layer(x, layer).unwrap();
                report.verify(1e-8).unwrap();
            }
        }
    }

    #[test]
    fn bootstrap_in_cascade_is_rejected() {
        let d = synth::gen_sincos(80, 1).unwrap();
        let mut cfg = tiny_config(1);
        cfg.forests_per_layer[0].bootstrap = true;
        assert!(matches!(
            CascadeModel::fit(&d, &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn accuracy_metric_on_regression_is_rejected() {
        let d = synth::gen_sincos(80, 1).unwrap();
        let mut cfg = tiny_config(1);
        cfg.metric = Some(GrowthMetric::Accuracy);
        assert!(CascadeModel::fit(&d, &cfg).is_err());
    }

    #[test]
    fn validation_split_too_small_is_rejected() {
        let d = synth::gen_sincos(10, 1).unwrap();
        let mut cfg = tiny_config(1);
        cfg.valid_fraction = 0.01;
        assert!(CascadeModel::fit(&d, &cfg).is_err());
    }

    /// Layer growth lowers validation MSE on the sine/cosine surface in the
    /// majority of seeds.
    #[test]
    fn growth_improves_validation_mse_on_sincos() {
        let mut improved = 0;
        for seed in 0..10u64 {
            let d = synth::gen_sincos(300, seed).unwrap();
            let mut cfg = tiny_config(seed);
            cfg.forests_per_layer.iter_mut().for_each(|p| p.n_trees = 8);
            cfg.max_layers = 3;
            let m = CascadeModel::fit(&d, &cfg).unwrap();
            let log = m.growth_log();
            if log[m.best_layer() - 1] < log[0] {
                improved += 1;
            }
        }
        assert!(improved > 5, "only {improved}/10 seeds improved");
    }

    #[test]
    fn local_mdi_requires_classification() {
        let d = synth::gen_sincos(100, 2).unwrap();
        let m = CascadeModel::fit(&d, &tiny_config(6)).unwrap();
        assert!(m.local_mdi(&d).is_err());
    }

    #[test]
    fn local_mdi_rows_aggregate_to_global() {
        let d = synth::gen_threeclass(150, 1, 3).unwrap();
        let m = CascadeModel::fit(&d, &tiny_config(7)).unwrap();
        let report = m.local_mdi(&d).unwrap();
        let per_class = report.per_class.as_ref().unwrap();
        let c = m.n_outputs();
        let mut recombined = vec![0.0; m.n_features()];
        for class in 0..c {
            let rows = (0..d.n_rows()).filter(|&i| d.class_of(i) == class).count();
            let weight = rows as f64 / d.n_rows() as f64;
            if let Some(class_mdi) = &per_class[class] {
                for (acc, v) in recombined.iter_mut().zip(class_mdi) {
                    *acc += weight * v;
                }
            }
        }
        for (got, want) in recombined.iter().zip(&report.mdi) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }
}
