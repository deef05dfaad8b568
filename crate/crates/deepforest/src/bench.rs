//! Importance-quality metrics and the benchmark harness.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attribution::{mda, CalibrationMethod, CalibrationRule};
use crate::cascade::{CascadeConfig, CascadeModel, GrowthMetric};
use crate::data::{load_csv, split_rows, synth, Dataset, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestKind, ForestParams};
use crate::rng::derive_seed;

/// ROC AUC of `scores` against a relevance mask, with midrank tie handling:
/// the probability a relevant feature outscores an irrelevant one, counting
/// ties as one half.
pub fn relevant_feature_auc(scores: &[f64], relevant_mask: &[bool]) -> Result<f64> {
    if scores.len() != relevant_mask.len() {
        return Err(Error::DimensionMismatch {
            what: "relevance mask",
            expected: scores.len(),
            got: relevant_mask.len(),
        });
    }
    let n_rel = relevant_mask.iter().filter(|m| **m).count();
    let n_irr = relevant_mask.len() - n_rel;
    if n_rel == 0 || n_irr == 0 {
        return Err(Error::InvalidParams(
            "relevance mask needs both relevant and irrelevant entries".into(),
        ));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Midranks over tied score groups.
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }

    let rank_sum: f64 = (0..n).filter(|&i| relevant_mask[i]).map(|i| ranks[i]).sum();
    let n_rel_f = n_rel as f64;
    Ok((rank_sum - n_rel_f * (n_rel_f + 1.0) / 2.0) / (n_rel_f * n_irr as f64))
}

/// Fraction of correctly ordered feature pairs, assuming ground-truth
/// importance strictly increases with feature index. Ties count one half.
pub fn ranked_pair_score(scores: &[f64]) -> Result<f64> {
    let k = scores.len();
    if k < 2 {
        return Err(Error::InvalidParams(
            "ranked pair score needs at least two features".into(),
        ));
    }
    let mut correct = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            if scores[i] < scores[j] {
                correct += 1.0;
            } else if scores[i] == scores[j] {
                correct += 0.5;
            }
        }
    }
    Ok(correct / (k * (k - 1) / 2) as f64)
}

/// Where benchmark data comes from. Generators draw fresh rows per run;
/// CSV sources re-split per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchSource {
    Sim { n_train: usize, n_valid: usize },
    Linear { n_train: usize, n_valid: usize, k: usize },
    ThreeClass { n_train: usize, n_valid: usize, noise_dims: usize },
    SinCos { n_train: usize, n_valid: usize },
    Csv { path: String, label_column: String, task: Task },
}

/// Importance estimators under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    /// In-sample node-sum MDI of a random forest.
    MdiRf,
    /// Covariance-form MDI on out-of-bag rows.
    MdiOobRf,
    /// Permutation importance of a random forest, scored on validation data.
    MdaRf,
    /// Permutation importance of a deep forest, scored on validation data.
    MdaDf,
    /// Deep-forest MDI with the given calibration.
    MdiDf { calibration: CalibrationRule },
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::MdiRf => "mdi(rf)".into(),
            MethodSpec::MdiOobRf => "mdi-oob(rf)".into(),
            MethodSpec::MdaRf => "mda(rf)".into(),
            MethodSpec::MdaDf => "mda(df)".into(),
            MethodSpec::MdiDf { calibration } => format!("mdi(df:{})", calibration.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMetric {
    Auc,
    RankedPairs,
}

/// Random-forest baseline settings: bootstrap, fully grown by default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RfSettings {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
}

impl Default for RfSettings {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
        }
    }
}

/// Deep-forest settings mirroring `CascadeConfig`. Growth is steered by
/// the Brier score by default: accuracy on a small validation split cannot
/// resolve layer-to-layer improvements on noisy tasks and stalls the
/// cascade at one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DfSettings {
    pub trees_per_forest: usize,
    pub max_depth: usize,
    pub max_layers: usize,
    pub patience: usize,
    pub valid_fraction: f64,
    pub growth_metric: GrowthMetric,
}

impl Default for DfSettings {
    fn default() -> Self {
        Self {
            trees_per_forest: 50,
            max_depth: 8,
            max_layers: 8,
            patience: 2,
            valid_fraction: 0.15,
            growth_metric: GrowthMetric::Mse,
        }
    }
}

fn default_mda_repeats() -> usize {
    5
}

fn default_metric() -> BenchMetric {
    BenchMetric::Auc
}

/// A full benchmark: data source, methods, and run protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub source: BenchSource,
    pub methods: Vec<MethodSpec>,
    pub n_runs: usize,
    pub base_seed: u64,
    /// Concatenate a per-column-shuffled copy of the feature matrix before
    /// splitting, making half the features irrelevant by construction.
    #[serde(default)]
    pub permute_copy: bool,
    /// Keep this fraction of training rows, applied after the permuted
    /// copy.
    #[serde(default)]
    pub downsample_train: Option<f64>,
    #[serde(default = "default_metric")]
    pub metric: BenchMetric,
    #[serde(default = "default_mda_repeats")]
    pub mda_repeats: usize,
    #[serde(default)]
    pub rf: RfSettings,
    #[serde(default)]
    pub df: DfSettings,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidConfig("n_runs must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods requested".into()));
        }
        if self.mda_repeats == 0 {
            return Err(Error::InvalidConfig("mda_repeats must be >= 1".into()));
        }
        if let Some(f) = self.downsample_train {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(
                    "downsample_train must lie in (0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    fn df_config(&self, seed: u64, calibration: CalibrationRule) -> CascadeConfig {
        let mut cfg = CascadeConfig::bench(seed);
        for params in cfg.forests_per_layer.iter_mut() {
            params.n_trees = self.df.trees_per_forest;
            params.tree.max_depth = Some(self.df.max_depth);
        }
        cfg.max_layers = self.df.max_layers;
        cfg.patience = self.df.patience;
        cfg.valid_fraction = self.df.valid_fraction;
        cfg.metric = Some(self.df.growth_metric);
        cfg.calibration = CalibrationMethod::new(calibration);
        cfg
    }

    fn rf_params(&self, seed: u64) -> ForestParams {
        ForestParams::new(ForestKind::BestSplit, self.rf.n_trees, seed)
            .with_max_depth(self.rf.max_depth)
            .with_bootstrap(true)
    }
}

/// One benchmark cell: a method evaluated in one run.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub method: String,
    pub run: usize,
    pub seed: u64,
    pub metric: String,
    /// NaN when the method failed in this run.
    pub value: f64,
    pub train_ms: f64,
    pub importance_ms: f64,
}

/// All cells plus per-method aggregates.
#[derive(Debug, Clone)]
pub struct BenchmarkResults {
    pub rows: Vec<BenchRow>,
}

/// Per-method aggregate over runs.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub mean: f64,
    pub std_err: f64,
    pub mean_train_ms: f64,
    pub mean_importance_ms: f64,
}

impl BenchmarkResults {
    pub fn summary(&self) -> Vec<MethodSummary> {
        let mut methods: Vec<String> = Vec::new();
        for row in &self.rows {
            if !methods.contains(&row.method) {
                methods.push(row.method.clone());
            }
        }
        methods
            .iter()
            .map(|method| {
                let cells: Vec<&BenchRow> =
                    self.rows.iter().filter(|r| &r.method == method).collect();
                let ok: Vec<f64> = cells
                    .iter()
                    .map(|r| r.value)
                    .filter(|v| v.is_finite())
                    .collect();
                let mean = if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().sum::<f64>() / ok.len() as f64
                };
                let std_err = if ok.len() < 2 {
                    0.0
                } else {
                    let var = ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / (ok.len() - 1) as f64;
                    (var / ok.len() as f64).sqrt()
                };
                MethodSummary {
                    method: method.clone(),
                    runs: cells.len(),
                    failures: cells.len() - ok.len(),
                    mean,
                    std_err,
                    mean_train_ms: cells.iter().map(|r| r.train_ms).sum::<f64>()
                        / cells.len() as f64,
                    mean_importance_ms: cells.iter().map(|r| r.importance_ms).sum::<f64>()
                        / cells.len() as f64,
                }
            })
            .collect()
    }

    /// Results CSV with the fixed column set.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Io {
            path: "<results csv>".into(),
            source: e,
        };
        writeln!(
            w,
            "dataset,method,run,seed,metric,value,train_ms,importance_ms"
        )
        .map_err(io_err)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{:.3},{:.3}",
                r.dataset, r.method, r.run, r.seed, r.metric, r.value, r.train_ms, r.importance_ms
            )
            .map_err(io_err)?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "methods": self.summary() })
    }
}

struct RunData {
    train: Dataset,
    valid: Dataset,
}

fn run_data(spec: &BenchmarkSpec, seed: u64) -> Result<RunData> {
    let gen_seed = derive_seed(seed, 1);
    let (pool, n_train, n_valid) = match &spec.source {
        BenchSource::Sim { n_train, n_valid } => (
            synth::gen_sim(n_train + n_valid, gen_seed)?,
            *n_train,
            *n_valid,
        ),
        BenchSource::Linear { n_train, n_valid, k } => (
            synth::gen_linear(n_train + n_valid, *k, gen_seed)?,
            *n_train,
            *n_valid,
        ),
        BenchSource::ThreeClass {
            n_train,
            n_valid,
            noise_dims,
        } => (
            synth::gen_threeclass(n_train + n_valid, *noise_dims, gen_seed)?,
            *n_train,
            *n_valid,
        ),
        BenchSource::SinCos { n_train, n_valid } => (
            synth::gen_sincos(n_train + n_valid, gen_seed)?,
            *n_train,
            *n_valid,
        ),
        BenchSource::Csv {
            path,
            label_column,
            task,
        } => {
            let d = load_csv(Path::new(path), label_column, *task)?;
            let n_train = d.n_rows() / 2;
            let n_valid = d.n_rows() - n_train;
            (d, n_train, n_valid)
        }
    };
    let pool = if spec.permute_copy {
        synth::permute_augment(&pool, derive_seed(seed, 2))?
    } else {
        pool
    };
    // Seeded row split into train and validation halves.
    let n = pool.n_rows();
    let (train_rows, valid_rows, _) = split_rows(
        n,
        &SplitSpec {
            train_fraction: n_train as f64 / n as f64,
            valid_fraction: 1.0 - n_train as f64 / n as f64,
            test_fraction: 0.0,
            seed: derive_seed(seed, 3),
        },
    )?;
    let _ = n_valid;
    let mut train = pool.select_rows(&train_rows)?;
    let valid = pool.select_rows(&valid_rows)?;
    if let Some(fraction) = spec.downsample_train {
        let keep = ((train.n_rows() as f64 * fraction).round() as usize).max(1);
        let (kept, _, _) = split_rows(
            train.n_rows(),
            &SplitSpec {
                train_fraction: keep as f64 / train.n_rows() as f64,
                valid_fraction: 1.0 - keep as f64 / train.n_rows() as f64,
                test_fraction: 0.0,
                seed: derive_seed(seed, 4),
            },
        )?;
        train = train.select_rows(&kept)?;
    }
    Ok(RunData { train, valid })
}

fn importance_for_method(
    spec: &BenchmarkSpec,
    method: &MethodSpec,
    data: &RunData,
    seed: u64,
) -> Result<(Vec<f64>, f64, f64)> {
    let model_seed = derive_seed(seed, 10);
    let mda_seed = derive_seed(seed, 11);
    match method {
        MethodSpec::MdiRf => {
            let t0 = Instant::now();
            let forest = Forest::fit(&data.train, &spec.rf_params(model_seed))?;
            let train_ms = ms_since(t0);
            let t1 = Instant::now();
            let n = data.train.n_rows();
            let mut mdi = vec![0.0; data.train.n_features()];
            for tree in forest.trees() {
                for (acc, v) in mdi.iter_mut().zip(tree.mdi_classic(n)) {
                    *acc += v;
                }
            }
            for v in mdi.iter_mut() {
                *v /= forest.trees().len() as f64;
            }
            Ok((mdi, train_ms, ms_since(t1)))
        }
        MethodSpec::MdiOobRf => {
            let t0 = Instant::now();
            let forest = Forest::fit(&data.train, &spec.rf_params(model_seed))?;
            let train_ms = ms_since(t0);
            let t1 = Instant::now();
            let mdi = forest.mdi_oob(&data.train)?;
            Ok((mdi, train_ms, ms_since(t1)))
        }
        MethodSpec::MdaRf => {
            let t0 = Instant::now();
            let forest = Forest::fit(&data.train, &spec.rf_params(model_seed))?;
            let train_ms = ms_since(t0);
            let t1 = Instant::now();
            let scores = mda(&forest, &data.valid, spec.mda_repeats, mda_seed)?;
            Ok((scores, train_ms, ms_since(t1)))
        }
        MethodSpec::MdaDf => {
            let cfg = spec.df_config(model_seed, CalibrationRule::PartialAdditive);
            let t0 = Instant::now();
            let model = CascadeModel::fit(&data.train, &cfg)?;
            let train_ms = ms_since(t0);
            let t1 = Instant::now();
            let scores = mda(&model, &data.valid, spec.mda_repeats, mda_seed)?;
            Ok((scores, train_ms, ms_since(t1)))
        }
        MethodSpec::MdiDf { calibration } => {
            let cfg = spec.df_config(model_seed, *calibration);
            let t0 = Instant::now();
            let model = CascadeModel::fit(&data.train, &cfg)?;
            let train_ms = ms_since(t0);
            let t1 = Instant::now();
            // Importance over the rows the layers were actually trained on.
            let (layer_rows, _) = cfg.split_rows(data.train.n_rows())?;
            let layer_train = data.train.select_rows(&layer_rows)?;
            let report = model.mdi(&layer_train)?;
            Ok((report.mdi, train_ms, ms_since(t1)))
        }
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Execute the benchmark: for each run, fresh data, one model per method,
/// one metric value per cell. Failures mark the cell NaN and the run
/// continues.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkResults> {
    spec.validate()?;
    let metric_name = match spec.metric {
        BenchMetric::Auc => "auc",
        BenchMetric::RankedPairs => "ranked_pairs",
    };
    let mut rows = Vec::with_capacity(spec.n_runs * spec.methods.len());
    for run in 0..spec.n_runs {
        let seed = derive_seed(spec.base_seed, run as u64);
        let data = run_data(spec, seed)?;
        for method in &spec.methods {
            let outcome = importance_for_method(spec, method, &data, seed).and_then(
                |(scores, train_ms, importance_ms)| {
                    let value = match spec.metric {
                        BenchMetric::Auc => {
                            let mask = data.train.relevant_mask().ok_or_else(|| {
                                Error::InvalidConfig(
                                    "AUC metric needs a relevance mask; use a generator or \
                                     permute_copy"
                                        .into(),
                                )
                            })?;
                            relevant_feature_auc(&scores, mask)?
                        }
                        BenchMetric::RankedPairs => ranked_pair_score(&scores)?,
                    };
                    Ok((value, train_ms, importance_ms))
                },
            );
            let (value, train_ms, importance_ms) = match outcome {
                Ok(cell) => cell,
                Err(e) => {
                    eprintln!(
                        "benchmark {}: run {run}, method {} failed: {e}",
                        spec.name,
                        method.label()
                    );
                    (f64::NAN, 0.0, 0.0)
                }
            };
            rows.push(BenchRow {
                dataset: spec.name.clone(),
                method: method.label(),
                run,
                seed,
                metric: metric_name.into(),
                value,
                train_ms,
                importance_ms,
            });
        }
    }
    Ok(BenchmarkResults { rows })
}
