//! Command line for cascade forests: train models, explain predictions,
//! compute feature importance, run benchmarks and generate synthetic data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal
//! invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deepforest::bench::{run_benchmark, BenchmarkSpec};
use deepforest::model_io::{load_model, save_cascade, LoadedModel};
use deepforest::{
    data::synth, load_csv, mda, save_csv, CalibrationMethod, CalibrationRule, CascadeConfig,
    CascadeModel, ContributionReport, Dataset, Error, ImportanceReport, ReportRow, Task,
};

#[derive(Parser)]
#[command(
    name = "deepforest",
    version,
    about = "Train, explain and benchmark cascade forests"
)]
struct Cli {
    /// Worker thread cap (env fallback: CASCADE_EXPLAIN_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a cascade and write the model file.
    Train(TrainArgs),
    /// Decompose predictions of a saved model into feature contributions.
    Explain(ExplainArgs),
    /// Compute feature importance of a saved model over a labeled CSV.
    Importance(ImportanceArgs),
    /// Run a benchmark specification and write results.
    Benchmark(BenchmarkArgs),
    /// Generate a synthetic dataset as CSV plus a relevance sidecar.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Regression => Task::Regression,
            TaskArg::Classification => Task::Classification,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CalibrationArg {
    Partial,
    Additive,
    Multiplicative,
}

impl From<CalibrationArg> for CalibrationRule {
    fn from(c: CalibrationArg) -> CalibrationRule {
        match c {
            CalibrationArg::Partial => CalibrationRule::PartialAdditive,
            CalibrationArg::Additive => CalibrationRule::Additive,
            CalibrationArg::Multiplicative => CalibrationRule::Multiplicative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    /// Four 50-tree forests per layer, depth 5.
    PaperSmall,
    /// Depth-8 trees, benchmark growth settings.
    PaperBench,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Sincos,
    Linear,
    Threeclass,
    Sim,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV (requires --label-column and --task).
    #[arg(long, conflicts_with = "synth")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    /// Train on a generated dataset instead of a CSV.
    #[arg(long, value_enum)]
    synth: Option<GeneratorArg>,
    /// Rows for --synth.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Feature count for --synth linear.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Noise dimensions for --synth threeclass.
    #[arg(long, default_value_t = 100)]
    noise_dims: usize,
    #[arg(long, value_enum, default_value = "paper-small")]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "partial")]
    calibration: CalibrationArg,
    /// Trees per member forest (overrides the preset).
    #[arg(long)]
    trees: Option<usize>,
    /// Maximum tree depth; 0 means unlimited (overrides the preset).
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    max_layers: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Instances CSV; must contain every model feature column.
    #[arg(long)]
    input: PathBuf,
    /// Must match the calibration the model was trained with.
    #[arg(long, value_enum)]
    calibration: Option<CalibrationArg>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImportanceMethod {
    Mdi,
    LocalMdi,
    Mda,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled CSV to evaluate importance on.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, value_enum, default_value = "mdi")]
    method: ImportanceMethod,
    /// Divide by the total response variance of the supplied data.
    #[arg(long)]
    normalize: bool,
    /// Permutation repeats for --method mda.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Benchmark specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Directory for results.csv and summary.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    generator: GeneratorArg,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    noise_dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; the relevance sidecar lands next to it.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful exits.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("CASCADE_EXPLAIN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Internal(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Importance(args) => cmd_importance(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn generate(generator: GeneratorArg, n: usize, k: usize, noise_dims: usize, seed: u64) -> Result<Dataset, Error> {
    match generator {
        GeneratorArg::Sincos => synth::gen_sincos(n, seed),
        GeneratorArg::Linear => synth::gen_linear(n, k, seed),
        GeneratorArg::Threeclass => synth::gen_threeclass(n, noise_dims, seed),
        GeneratorArg::Sim => synth::gen_sim(n, seed),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let data = match (&args.input, args.synth) {
        (Some(path), None) => load_csv(path, &args.label_column, args.task.into())?,
        (None, Some(generator)) => generate(generator, args.n, args.k, args.noise_dims, args.seed)?,
        _ => {
            return Err(Error::InvalidConfig(
                "train needs exactly one of --input or --synth".into(),
            ))
        }
    };

    let mut cfg = match args.preset {
        PresetArg::PaperSmall => CascadeConfig::small(args.seed),
        PresetArg::PaperBench => CascadeConfig::bench(args.seed),
    };
    cfg.calibration = CalibrationMethod::new(args.calibration.into());
    if let Some(trees) = args.trees {
        for p in cfg.forests_per_layer.iter_mut() {
            p.n_trees = trees;
        }
    }
    if let Some(depth) = args.depth {
        let depth = if depth == 0 { None } else { Some(depth) };
        for p in cfg.forests_per_layer.iter_mut() {
            p.tree.max_depth = depth;
        }
    }
    if let Some(v) = args.max_layers {
        cfg.max_layers = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if let Some(v) = args.valid_fraction {
        cfg.valid_fraction = v;
    }

    let model = CascadeModel::fit(&data, &cfg)?;
    for (i, value) in model.growth_log().iter().enumerate() {
        let marker = if i + 1 == model.best_layer() { " (best)" } else { "" };
        println!("layer {}: validation metric = {value:.6}{marker}", i + 1);
    }
    save_cascade(&model, &args.out)?;
    println!(
        "model with {} layer(s) written to {}",
        model.best_layer(),
        args.out.display()
    );
    Ok(())
}

/// Feature rows from a CSV, matched to the model's schema by column name.
/// Zero data rows are fine.
fn load_instances(path: &Path, feature_names: &[String]) -> Result<Vec<Vec<f64>>, Error> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: display.clone(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Io {
            path: display.clone(),
            source: std::io::Error::other(e.to_string()),
        })?
        .clone();
    let mut positions = Vec::with_capacity(feature_names.len());
    let mut missing = Vec::new();
    for name in feature_names {
        match headers.iter().position(|h| h == name) {
            Some(idx) => positions.push(idx),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidParams(format!(
            "{display}: columns do not match the model's features; missing: {}",
            missing.join(", ")
        )));
    }
    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CsvCell {
            path: display.clone(),
            row: row_idx + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(positions.len());
        for (&pos, name) in positions.iter().zip(feature_names) {
            let cell = record.get(pos).unwrap_or("");
            let value: f64 = cell.trim().parse().map_err(|_| Error::CsvCell {
                path: display.clone(),
                row: row_idx + 1,
                column: name.clone(),
                message: format!("cannot parse '{cell}' as a number"),
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), Error> {
    match path {
        Some(path) => std::fs::write(path, content).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        }),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn rows_to_csv(rows: &[(Option<usize>, ReportRow)]) -> String {
    let mut out = String::from("instance,feature,name,class,value\n");
    for (instance, row) in rows {
        let instance = instance.map(|i| i.to_string()).unwrap_or_default();
        let feature = row.feature.map(|k| k.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{instance},{feature},{},{},{}\n",
            row.name, row.class, row.value
        ));
    }
    out
}

fn rows_to_json(rows: &[(Option<usize>, ReportRow)]) -> String {
    let items: Vec<serde_json::Value> = rows
        .iter()
        .map(|(instance, row)| {
            serde_json::json!({
                "instance": instance,
                "feature": row.feature,
                "name": row.name,
                "class": if row.class.is_empty() { serde_json::Value::Null } else { row.class.clone().into() },
                "value": if row.value.is_nan() { serde_json::Value::Null } else { row.value.into() },
            })
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&items).unwrap_or_else(|_| "[]".into());
    text.push('\n');
    text
}

fn cmd_explain(args: ExplainArgs) -> Result<(), Error> {
    let model = load_model(&args.model)?;
    let (feature_names, class_labels): (Vec<String>, Vec<String>) = match &model {
        LoadedModel::Cascade(m) => (m.feature_names().to_vec(), m.class_labels().to_vec()),
        LoadedModel::Forest(_) => (Vec::new(), Vec::new()),
    };

    if let Some(flag) = args.calibration {
        if let LoadedModel::Cascade(m) = &model {
            let requested: CalibrationRule = flag.into();
            if requested != m.calibration().rule {
                return Err(Error::InvalidParams(format!(
                    "model was trained with {} calibration; tables cannot be rebuilt \
                     without training data (requested {})",
                    m.calibration().rule.as_str(),
                    requested.as_str()
                )));
            }
        }
    }

    let instances = match &model {
        LoadedModel::Cascade(m) => load_instances(&args.input, m.feature_names())?,
        LoadedModel::Forest(f) => {
            let names: Vec<String> = (0..f.n_features()).map(|k| format!("f{k}")).collect();
            load_instances(&args.input, &names)?
        }
    };

    let mut all_rows: Vec<(Option<usize>, ReportRow)> = Vec::new();
    for (i, x) in instances.iter().enumerate() {
        let report: ContributionReport = match &model {
            LoadedModel::Cascade(m) => m.contributions(x)?,
            LoadedModel::Forest(f) => {
                let (bias, contrib) = f.contributions(x)?;
                let prediction = f.predict(x)?;
                ContributionReport {
                    bias,
                    contrib,
                    prediction,
                    layer: 1,
                    n_features: f.n_features(),
                    n_outputs: f.n_outputs(),
                }
            }
        };
        // Fail loudly (exit 3) if the additive identity is broken.
        report.verify(1e-8)?;
        for row in report.rows(&feature_names, &class_labels) {
            all_rows.push((Some(i), row));
        }
    }

    let content = match args.format {
        FormatArg::Csv => rows_to_csv(&all_rows),
        FormatArg::Json => rows_to_json(&all_rows),
    };
    write_output(args.out.as_deref(), &content)
}

fn cmd_importance(args: ImportanceArgs) -> Result<(), Error> {
    let model = load_model(&args.model)?;
    let task = match &model {
        LoadedModel::Cascade(m) => m.task(),
        LoadedModel::Forest(f) => {
            if f.n_outputs() > 1 {
                Task::Classification
            } else {
                Task::Regression
            }
        }
    };
    let data = load_csv(&args.input, &args.label_column, task)?;

    let report: ImportanceReport = match (&model, args.method) {
        (LoadedModel::Cascade(m), ImportanceMethod::Mdi) => m.mdi(&data)?,
        (LoadedModel::Cascade(m), ImportanceMethod::LocalMdi) => m.local_mdi(&data)?,
        (LoadedModel::Cascade(m), ImportanceMethod::Mda) => ImportanceReport {
            mdi: mda(m, &data, args.repeats, args.seed)?,
            per_class: None,
            method: "mda(df)".into(),
            dataset_id: String::new(),
        },
        (LoadedModel::Forest(f), ImportanceMethod::Mdi) => ImportanceReport {
            mdi: f.mdi(&data)?,
            per_class: None,
            method: "mdi(rf)".into(),
            dataset_id: String::new(),
        },
        (LoadedModel::Forest(_), ImportanceMethod::LocalMdi) => {
            return Err(Error::InvalidParams(
                "local MDI requires a cascade classification model".into(),
            ))
        }
        (LoadedModel::Forest(f), ImportanceMethod::Mda) => ImportanceReport {
            mdi: mda(f, &data, args.repeats, args.seed)?,
            per_class: None,
            method: "mda(rf)".into(),
            dataset_id: String::new(),
        },
    };

    let report = if args.normalize {
        report.normalized(data.total_response_variance())?
    } else {
        report
    };

    let (feature_names, class_labels) = match &model {
        LoadedModel::Cascade(m) => (m.feature_names().to_vec(), m.class_labels().to_vec()),
        LoadedModel::Forest(_) => (data.feature_names().to_vec(), data.class_labels().to_vec()),
    };
    let rows: Vec<(Option<usize>, ReportRow)> = report
        .rows(&feature_names, &class_labels)
        .into_iter()
        .map(|r| (None, r))
        .collect();
    let content = match args.format {
        FormatArg::Csv => rows_to_csv(&rows),
        FormatArg::Json => rows_to_json(&rows),
    };
    write_output(args.out.as_deref(), &content)
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| Error::Io {
        path: args.spec.display().to_string(),
        source: e,
    })?;
    let spec: BenchmarkSpec = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(
        format!("{}: {e}", args.spec.display()),
    ))?;
    let results = run_benchmark(&spec)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    let csv_path = args.out_dir.join("results.csv");
    let mut csv_buf = Vec::new();
    results.write_csv(&mut csv_buf)?;
    std::fs::write(&csv_path, &csv_buf).map_err(|e| Error::Io {
        path: csv_path.display().to_string(),
        source: e,
    })?;
    let summary_path = args.out_dir.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&results.summary_json())
            .map_err(|e| Error::Internal(e.to_string()))?,
    )
    .map_err(|e| Error::Io {
        path: summary_path.display().to_string(),
        source: e,
    })?;

    for s in results.summary() {
        println!(
            "{:<28} mean={:.4} stderr={:.4} train={:.0}ms importance={:.0}ms failures={}",
            s.method, s.mean, s.std_err, s.mean_train_ms, s.mean_importance_ms, s.failures
        );
    }
    println!("results written to {}", args.out_dir.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let data = generate(args.generator, args.n, args.k, args.noise_dims, args.seed)?;
    save_csv(&data, &args.out, "label")?;

    let sidecar = args.out.with_extension("relevance.csv");
    let mut content = String::from("feature,name,relevant\n");
    for (k, name) in data.feature_names().iter().enumerate() {
        let relevant = data.relevant_mask().map_or(true, |m| m[k]);
        content.push_str(&format!("{k},{name},{relevant}\n"));
    }
    std::fs::write(&sidecar, content).map_err(|e| Error::Io {
        path: sidecar.display().to_string(),
        source: e,
    })?;
    println!(
        "wrote {} ({} rows) and {}",
        args.out.display(),
        data.n_rows(),
        sidecar.display()
    );
    Ok(())
}
