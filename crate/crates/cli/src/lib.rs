//! Command-line front end: `train`, `eval`, `gradcheck` and `experiment`.
//!
//! Commands return their outputs as values; `main` prints them and maps
//! errors to a nonzero exit status with a one-line diagnostic.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hrbm::checkpoint::Model;
use hrbm::dataset::{load_idx_files, load_table, LabelColumn};
use hrbm::experiment::{
    default_data_dir, mnist_paths, newsgroups_paths, run_protocol, train_variant, ExperimentOptions, Variant,
    MNIST_TREE, NEWSGROUPS_TREE,
};
use hrbm::gradcheck::{self, Fault, GradcheckOptions, GradcheckReport};
use hrbm::{Dataset, EpochRecord, PenaltyMode, TaxonomyTree, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "hrbm", version, about = "Classification RBMs with a hierarchical label prior", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on labeled data.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Run a benchmark protocol and emit a CSV table.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Idx,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    Abs,
    Raw,
    Squared,
}

impl From<PenaltyArg> for PenaltyMode {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::Abs => PenaltyMode::Abs,
            PenaltyArg::Raw => PenaltyMode::Raw,
            PenaltyArg::Squared => PenaltyMode::Squared,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "hrbm", value_parser = parse_variant)]
    pub variant: Variant,
    /// Training data: a file, or `mnist` / `20ng` for the copies under the data directory.
    #[arg(long)]
    pub data: String,
    /// IDX label file matching `--data`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<String>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Defaults to `idx` when label files are given, `table` otherwise.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Taxonomy file; `mnist` and `20ng` select the bundled trees.
    #[arg(long)]
    pub tree: Option<String>,
    /// Hidden units; a comma list of per-level widths for hhrbm.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long = "C", default_value_t = 0.1)]
    pub c: f64,
    #[arg(long, value_enum, default_value = "abs")]
    pub penalty: PenaltyArg,
    /// Use only the ancestor-side term of the penalty gradient.
    #[arg(long)]
    pub paper_partial_grad: bool,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Metrics JSON; the per-epoch CSV goes next to it with a `.csv` extension.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint file, or cascade checkpoint directory.
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test_data: String,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Confusion-matrix CSV destination.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub visible: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Test hook: corrupt the analytic U gradient.
    #[arg(long, hide = true)]
    pub flip_u_sign: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// table1, fig4a, fig4b or table2.
    pub protocol: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Dataset root; falls back to HRBM_DATA_DIR, then `./data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restrict to these rows (variant names or `hrbm-c0`).
    #[arg(long, value_delimiter = ',')]
    pub variant: Option<Vec<String>>,
    #[arg(long)]
    pub tree: Option<String>,
    #[arg(long, value_enum, default_value = "abs")]
    pub penalty: PenaltyArg,
    #[arg(long)]
    pub paper_partial_grad: bool,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long)]
    pub desk_scale: bool,
    /// fig4a training-set sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// fig4b rare-class counts.
    #[arg(long, value_delimiter = ',')]
    pub rare_counts: Option<Vec<usize>>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: hrbm::Error| e.to_string())
}

fn data_dir() -> PathBuf {
    default_data_dir()
}

/// Loads a named dataset split or a file.
pub fn load_data(spec: &str, labels: Option<&Path>, format: Option<Format>, test_split: bool) -> Result<Dataset> {
    let root = data_dir();
    if labels.is_none() {
        match spec {
            "mnist" => {
                let [ti, tl, vi, vl] = mnist_paths(&root);
                let (i, l) = if test_split { (vi, vl) } else { (ti, tl) };
                return load_idx_files(&i, &l)
                    .with_context(|| format!("loading MNIST from {}", root.display()))?
                    .with_num_classes(10)
                    .map_err(Into::into);
            }
            "20ng" => {
                let [train, test] = newsgroups_paths(&root);
                let path = if test_split { test } else { train };
                return read_table(&path);
            }
            _ => {}
        }
    }
    let path = Path::new(spec);
    let format = format.unwrap_or(if labels.is_some() { Format::Idx } else { Format::Table });
    match format {
        Format::Idx => {
            let labels = labels.ok_or_else(|| anyhow!("--format idx needs a label file"))?;
            Ok(load_idx_files(path, labels).with_context(|| format!("reading {}", path.display()))?)
        }
        Format::Table => {
            if labels.is_some() {
                bail!("label files only apply to --format idx");
            }
            read_table(path)
        }
    }
}

fn read_table(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_table(&text, LabelColumn::Last).with_context(|| format!("parsing {}", path.display()))
}

/// Reads a taxonomy file; `mnist` and `20ng` name the bundled trees when
/// no such file exists.
pub fn load_tree(spec: &str) -> Result<TaxonomyTree> {
    let path = Path::new(spec);
    if !path.exists() {
        match spec {
            "mnist" | "mnist.tree" => return Ok(TaxonomyTree::parse(MNIST_TREE)?),
            "20ng" | "20ng.tree" => return Ok(TaxonomyTree::parse(NEWSGROUPS_TREE)?),
            _ => {}
        }
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading taxonomy {}", path.display()))?;
    TaxonomyTree::parse(&text).with_context(|| format!("parsing taxonomy {}", path.display()))
}

/// Effective configuration echoed into the metrics JSON.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub variant: String,
    pub data: String,
    pub labels: Option<PathBuf>,
    pub test_data: Option<String>,
    pub test_labels: Option<PathBuf>,
    pub format: Option<Format>,
    pub tree: Option<String>,
    pub hidden: Vec<usize>,
    pub lr: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub penalty: PenaltyMode,
    pub paper_partial_grad: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model_out: Option<PathBuf>,
    pub data_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub config: ConfigEcho,
    pub epochs: Vec<EpochRecord>,
    pub test_error: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: MetricsReport,
    pub warnings: Vec<String>,
}

pub fn epochs_csv(epochs: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,recon_error,penalty,train_error\n");
    for e in epochs {
        let _ = writeln!(out, "{},{:.10},{:.10},{:.6}", e.epoch, e.recon_error, e.penalty, e.train_error);
    }
    out
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut warnings = Vec::new();
    if args.hidden.is_empty() || args.hidden.contains(&0) {
        bail!("--hidden must list positive widths");
    }
    if args.variant != Variant::Hhrbm && args.hidden.len() > 1 {
        bail!("--hidden takes a list only for hhrbm");
    }
    let config = TrainConfig {
        hidden: args.hidden[0],
        learning_rate: args.lr,
        penalty_weight: args.c,
        penalty_mode: args.penalty.into(),
        paper_partial_grad: args.paper_partial_grad,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    config.validate()?;

    let tree = match (&args.tree, args.variant.needs_tree()) {
        (Some(t), true) => Some(load_tree(t)?),
        (None, true) => bail!("variant {} needs --tree", args.variant),
        (Some(_), false) => {
            warnings.push(format!("variant {} ignores --tree", args.variant));
            None
        }
        (None, false) => None,
    };

    let mut train = load_data(&args.data, args.labels.as_deref(), args.format, false)?;
    let test_spec = args
        .test_data
        .clone()
        .or_else(|| matches!(args.data.as_str(), "mnist" | "20ng").then(|| args.data.clone()));
    let mut test = test_spec
        .as_deref()
        .map(|t| load_data(t, args.test_labels.as_deref(), args.format, true))
        .transpose()?;

    let num_classes = match &tree {
        Some(t) => t.num_classes(),
        None => train.num_classes().max(test.as_ref().map_or(0, Dataset::num_classes)),
    };
    train = train.with_num_classes(num_classes)?;
    if let Some(t) = test.take() {
        if t.dim() != train.dim() {
            bail!("test data has {} features, training data has {}", t.dim(), train.dim());
        }
        test = Some(t.with_num_classes(num_classes)?);
    }

    let (model, mut metrics) =
        train_variant(args.variant, &train, tree.as_ref(), num_classes, &config, &args.hidden)?;
    if let Some(t) = &test {
        let pred = model.predict_batch(t.features())?;
        let wrong = pred.iter().zip(t.labels()).filter(|(p, y)| p != y).count();
        metrics.test_error = Some(wrong as f64 / t.len().max(1) as f64);
    }

    if let Some(path) = &args.model_out {
        model
            .save(path)
            .with_context(|| format!("writing checkpoint {}", path.display()))?;
    }
    let report = MetricsReport {
        config: ConfigEcho {
            variant: args.variant.to_string(),
            data: args.data.clone(),
            labels: args.labels.clone(),
            test_data: test_spec,
            test_labels: args.test_labels.clone(),
            format: args.format,
            tree: args.tree.clone().filter(|_| tree.is_some()),
            hidden: args.hidden.clone(),
            lr: args.lr,
            c: args.c,
            penalty: config.penalty_mode,
            paper_partial_grad: args.paper_partial_grad,
            epochs: args.epochs,
            batch_size: args.batch_size,
            seed: args.seed,
            model_out: args.model_out.clone(),
            data_dir: data_dir(),
        },
        epochs: metrics.epochs,
        test_error: metrics.test_error,
        seconds: metrics.seconds,
    };
    if let Some(path) = &args.metrics_out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        let csv = path.with_extension("csv");
        fs::write(&csv, epochs_csv(&report.epochs)).with_context(|| format!("writing {}", csv.display()))?;
    }
    Ok(TrainOutcome {
        model,
        report,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub error_rate: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

impl EvalOutcome {
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("true");
        for p in 0..k {
            let _ = write!(out, ",pred_{p}");
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{t}");
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<EvalOutcome> {
    let k = model.num_classes();
    if let Some(&label) = data.labels().iter().find(|&&y| y >= k) {
        bail!("label {label} out of range for a {k}-class model");
    }
    let predictions = model.predict_batch(data.features())?;
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &y) in predictions.iter().zip(data.labels()) {
        confusion[y][p] += 1;
    }
    let wrong = predictions.iter().zip(data.labels()).filter(|(p, y)| p != y).count();
    Ok(EvalOutcome {
        error_rate: wrong as f64 / data.len().max(1) as f64,
        confusion,
        predictions,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome> {
    let model = Model::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let data = load_data(&args.test_data, args.test_labels.as_deref(), args.format, true)?;
    let outcome = evaluate(&model, &data)?;
    if let Some(path) = &args.metrics_out {
        fs::write(path, outcome.confusion_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(outcome)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<GradcheckReport> {
    Ok(gradcheck::run(&GradcheckOptions {
        hidden: args.hidden,
        visible: args.visible,
        classes: args.classes,
        seed: args.seed,
        fault: args.flip_u_sign.then_some(Fault::FlipUSign),
    })?)
}

pub fn gradcheck_text(report: &GradcheckReport) -> String {
    let mut out = String::new();
    for b in &report.blocks {
        let _ = writeln!(
            out,
            "{:<20} max abs error {:.3e} (tol {:.0e}) {}",
            b.name,
            b.max_abs_error,
            b.tolerance,
            if b.passed() { "ok" } else { "FAIL" }
        );
    }
    let _ = writeln!(out, "{}", if report.passed() { "pass" } else { "fail" });
    out
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<String> {
    if args.seeds.is_empty() {
        bail!("--seeds must list at least one seed");
    }
    let mut opts = ExperimentOptions {
        data_dir: args.data.clone().unwrap_or_else(data_dir),
        seeds: args.seeds.clone(),
        only: args.variant.clone(),
        tree: args.tree.as_deref().map(load_tree).transpose()?,
        desk_scale: args.desk_scale,
        batch_size: args.batch_size,
        penalty_mode: args.penalty.into(),
        paper_partial_grad: args.paper_partial_grad,
        ..ExperimentOptions::default()
    };
    if let Some(s) = &args.sizes {
        opts.sizes = s.clone();
    }
    if let Some(r) = &args.rare_counts {
        opts.rare_counts = r.clone();
    }
    let table = run_protocol(&args.protocol, &opts)?;
    let csv = table.to_csv();
    if let Some(path) = &args.metrics_out {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(csv)
}

/// Runs a parsed command line, printing results to stdout and warnings to
/// stderr. Returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(args) => {
            let out = cmd_train(&args)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            let last = out.report.epochs.last();
            println!(
                "trained {} for {} epochs in {:.1}s; train error {}; test error {}",
                args.variant,
                out.report.epochs.len(),
                out.report.seconds,
                last.map_or("n/a".into(), |e| format!("{:.4}", e.train_error)),
                out.report.test_error.map_or("n/a".into(), |e| format!("{e:.4}")),
            );
            Ok(0)
        }
        Command::Eval(args) => {
            let out = cmd_eval(&args)?;
            println!("error rate {:.6}", out.error_rate);
            if args.metrics_out.is_none() {
                print!("{}", out.confusion_csv());
            }
            Ok(0)
        }
        Command::Gradcheck(args) => {
            let report = cmd_gradcheck(&args)?;
            print!("{}", gradcheck_text(&report));
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Experiment(args) => {
            let csv = cmd_experiment(&args)?;
            if args.metrics_out.is_none() {
                print!("{csv}");
            }
            Ok(0)
        }
    }
}
