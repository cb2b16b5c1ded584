//! Benchmark protocols on MNIST subsets and 20 Newsgroups.
//!
//! | protocol | data | what varies |
//! |----------|------|-------------|
//! | `table1` | MNIST, 5000 train / 1000 test, balanced | all seven variants |
//! | `fig4a`  | MNIST, balanced train sizes 1000..5000   | `rbm` vs `hrbm` |
//! | `fig4b`  | MNIST, one rare digit, 500 of each other | `rbm` vs `hrbm`, rare digit 0..9 |
//! | `table2` | 20 Newsgroups binary 5000-word table      | all variants plus `hrbm` with `C = 0` |
//!
//! Every run is deterministic in its seed; result rows are sorted before
//! they are emitted so the CSV is byte-identical across reruns.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::cascade::{train_cascade, train_hhrbm, CascadeMode};
use crate::baselines::mnl::{train_corrmnl, train_mnl};
use crate::checkpoint::Model;
use crate::dataset::{balanced_sample, load_idx_files, load_table, rare_class_sample, Dataset, LabelColumn, SampleSize};
use crate::error::{Error, Result};
use crate::hier::train_hcrbm;
use crate::taxonomy::TaxonomyTree;
use crate::train::{train_flat_rbm, RunMetrics, TrainConfig};

pub const MNIST_TREE: &str = include_str!("../../../trees/mnist.tree");
pub const NEWSGROUPS_TREE: &str = include_str!("../../../trees/20ng.tree");
pub const PROTOCOLS: [&str; 4] = ["table1", "fig4a", "fig4b", "table2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Hrbm,
    Rbm,
    Mnl,
    Corrmnl,
    CascadeHard,
    CascadeSoft,
    Hhrbm,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Rbm,
        Variant::Hrbm,
        Variant::CascadeHard,
        Variant::CascadeSoft,
        Variant::Hhrbm,
        Variant::Mnl,
        Variant::Corrmnl,
    ];

    pub fn needs_tree(self) -> bool {
        !matches!(self, Variant::Rbm | Variant::Mnl)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hrbm" => Variant::Hrbm,
            "rbm" => Variant::Rbm,
            "mnl" => Variant::Mnl,
            "corrmnl" => Variant::Corrmnl,
            "cascade-hard" => Variant::CascadeHard,
            "cascade-soft" => Variant::CascadeSoft,
            "hhrbm" => Variant::Hhrbm,
            other => return Err(Error::Config(format!("unknown variant `{other}`"))),
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Hrbm => "hrbm",
            Variant::Rbm => "rbm",
            Variant::Mnl => "mnl",
            Variant::Corrmnl => "corrmnl",
            Variant::CascadeHard => "cascade-hard",
            Variant::CascadeSoft => "cascade-soft",
            Variant::Hhrbm => "hhrbm",
        })
    }
}

/// Trains one model variant. `widths` is only read by HHRBM.
pub fn train_variant(
    variant: Variant,
    data: &Dataset,
    tree: Option<&TaxonomyTree>,
    num_classes: usize,
    config: &TrainConfig,
    widths: &[usize],
) -> Result<(Model, RunMetrics)> {
    let need_tree = || {
        tree.ok_or_else(|| Error::Config(format!("variant {variant} needs a taxonomy")))
    };
    let start = std::time::Instant::now();
    let timed = |mut m: RunMetrics| {
        m.seconds = start.elapsed().as_secs_f64();
        m
    };
    match variant {
        Variant::Rbm => {
            let (params, metrics) = train_flat_rbm(data, num_classes, config)?;
            Ok((Model::Rbm { params, hier: None }, metrics))
        }
        Variant::Hrbm => {
            let tree = need_tree()?;
            let model = train_hcrbm(data, tree, config)?;
            Ok((
                Model::Rbm {
                    params: model.params,
                    hier: Some((tree.clone(), model.edges)),
                },
                model.metrics,
            ))
        }
        Variant::Mnl => {
            let (model, metrics) = train_mnl(data, num_classes, config)?;
            Ok((Model::Logit { model, tree: None }, metrics))
        }
        Variant::Corrmnl => {
            let tree = need_tree()?;
            let (model, metrics) = train_corrmnl(data, tree, config)?;
            Ok((
                Model::Logit {
                    model,
                    tree: Some(tree.clone()),
                },
                metrics,
            ))
        }
        Variant::CascadeHard | Variant::CascadeSoft => {
            let cascade = train_cascade(data, need_tree()?, config)?;
            let mode = if variant == Variant::CascadeHard {
                CascadeMode::Hard
            } else {
                CascadeMode::Soft
            };
            Ok((Model::Cascade { cascade, mode }, timed(RunMetrics::default())))
        }
        Variant::Hhrbm => {
            let cascade = train_hhrbm(data, need_tree()?, config, widths)?;
            Ok((
                Model::Cascade {
                    cascade,
                    mode: CascadeMode::Hard,
                },
                timed(RunMetrics::default()),
            ))
        }
    }
}

/// One configured model in a protocol.
#[derive(Debug, Clone)]
pub struct RunSpec {
    /// Row label; usually the variant name.
    pub label: String,
    pub variant: Variant,
    pub config: TrainConfig,
    pub widths: Vec<usize>,
}

impl RunSpec {
    pub fn new(variant: Variant, config: TrainConfig) -> Self {
        Self {
            label: variant.to_string(),
            variant,
            config,
            widths: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: String,
    pub variant: String,
    /// Seed, or `mean` for rows averaged over seeds.
    pub seed: String,
    pub setting: String,
    pub test_error: f64,
    /// Error on the test examples of the rare class (fig4b only).
    pub rare_class_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentTable {
    pub rows: Vec<ResultRow>,
}

impl ExperimentTable {
    /// Appends `mean` rows per `(variant, setting)` and sorts canonically.
    fn finish(mut self) -> Self {
        let mut groups: BTreeMap<(String, String, String), Vec<&ResultRow>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.protocol.clone(), r.variant.clone(), r.setting.clone()))
                .or_default()
                .push(r);
        }
        let means: Vec<ResultRow> = groups
            .into_iter()
            .map(|((protocol, variant, setting), rows)| {
                let n = rows.len() as f64;
                let rare: Option<Vec<f64>> = rows.iter().map(|r| r.rare_class_error).collect();
                ResultRow {
                    protocol,
                    variant,
                    seed: "mean".into(),
                    setting,
                    test_error: rows.iter().map(|r| r.test_error).sum::<f64>() / n,
                    rare_class_error: rare.map(|v| v.iter().sum::<f64>() / n),
                }
            })
            .collect();
        self.rows.extend(means);
        self.rows.sort_by(|a, b| {
            (&a.setting, &a.variant, seed_key(&a.seed)).cmp(&(&b.setting, &b.variant, seed_key(&b.seed)))
        });
        self
    }

    pub fn mean(&self, variant: &str, setting: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.setting == setting && r.seed == "mean")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("protocol,variant,seed,setting,test_error,rare_class_error\n");
        for r in &self.rows {
            let rare = r.rare_class_error.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{}",
                r.protocol, r.variant, r.seed, r.setting, r.test_error, rare
            );
        }
        out
    }
}

fn seed_key(seed: &str) -> (u8, u64) {
    seed.parse::<u64>().map_or((1, 0), |s| (0, s))
}

/// Options common to all protocols.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub data_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Restrict to these row labels (variant names, or `hrbm-c0`).
    pub only: Option<Vec<String>>,
    pub tree: Option<TaxonomyTree>,
    pub desk_scale: bool,
    pub batch_size: usize,
    /// fig4a training-set sizes.
    pub sizes: Vec<usize>,
    /// fig4b examples kept for the rare digit.
    pub rare_counts: Vec<usize>,
    pub penalty_mode: crate::hier::PenaltyMode,
    pub paper_partial_grad: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            data_dir: default_data_dir(),
            seeds: vec![1, 2, 3],
            only: None,
            tree: None,
            desk_scale: false,
            batch_size: 100,
            sizes: vec![1000, 2000, 3000, 4000, 5000],
            rare_counts: vec![10, 20, 50, 100],
            penalty_mode: crate::hier::PenaltyMode::Abs,
            paper_partial_grad: false,
        }
    }
}

/// `HRBM_DATA_DIR` when set, otherwise `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("HRBM_DATA_DIR").map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

pub struct MnistSplits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn mnist_paths(data_dir: &Path) -> [PathBuf; 4] {
    let dir = data_dir.join("mnist");
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

pub fn load_mnist(data_dir: &Path) -> Result<MnistSplits> {
    let [ti, tl, vi, vl] = mnist_paths(data_dir);
    Ok(MnistSplits {
        train: load_idx_files(&ti, &tl)?.with_num_classes(10)?,
        test: load_idx_files(&vi, &vl)?.with_num_classes(10)?,
    })
}

pub fn newsgroups_paths(data_dir: &Path) -> [PathBuf; 2] {
    let dir = data_dir.join("20newsgroups");
    [
        dir.join("20newsgroups_train_binary_5000_voc.txt"),
        dir.join("20newsgroups_test_binary_5000_voc.txt"),
    ]
}

fn mnist_config(seed: u64, opts: &ExperimentOptions) -> TrainConfig {
    TrainConfig {
        hidden: 100,
        learning_rate: 0.1,
        penalty_weight: 0.1,
        penalty_mode: opts.penalty_mode,
        paper_partial_grad: opts.paper_partial_grad,
        epochs: 100,
        batch_size: opts.batch_size,
        seed,
    }
}

const MNIST_HHRBM_WIDTHS: [usize; 4] = [100, 50, 25, 20];

fn mnist_specs(seed: u64, variants: &[Variant], opts: &ExperimentOptions) -> Vec<RunSpec> {
    variants
        .iter()
        .map(|&v| {
            let mut spec = RunSpec::new(v, mnist_config(seed, opts));
            if v == Variant::Hhrbm {
                spec.widths = MNIST_HHRBM_WIDTHS.to_vec();
            }
            spec
        })
        .filter(|s| opts.only.as_ref().is_none_or(|o| o.contains(&s.label)))
        .collect()
}

fn tree_or(opts: &ExperimentOptions, default: &str) -> Result<TaxonomyTree> {
    match &opts.tree {
        Some(t) => Ok(t.clone()),
        None => TaxonomyTree::parse(default),
    }
}

/// Overall test error and, when requested, the error on one class.
pub type RunErrors = (f64, Option<f64>);

/// Trains `spec` and evaluates it; returns the overall test error and the
/// error restricted to `rare` when given.
pub fn evaluate_run(
    spec: &RunSpec,
    train: &Dataset,
    test: &Dataset,
    tree: &TaxonomyTree,
    rare: Option<usize>,
) -> Result<RunErrors> {
    let (model, _) = train_variant(
        spec.variant,
        train,
        Some(tree),
        tree.num_classes(),
        &spec.config,
        &spec.widths,
    )?;
    let pred = model.predict_batch(test.features())?;
    let wrong = pred.iter().zip(test.labels()).filter(|(p, y)| p != y).count();
    let test_error = wrong as f64 / test.len().max(1) as f64;
    let rare_error = rare.map(|r| {
        let (n, w) = pred
            .iter()
            .zip(test.labels())
            .filter(|(_, &y)| y == r)
            .fold((0usize, 0usize), |(n, w), (p, y)| (n + 1, w + usize::from(p != y)));
        w as f64 / n.max(1) as f64
    });
    log::info!(
        "{} seed {}: test error {:.4}{}",
        spec.label,
        spec.config.seed,
        test_error,
        rare_error.map(|e| format!(", rare-class error {e:.4}")).unwrap_or_default()
    );
    Ok((test_error, rare_error))
}

fn row(protocol: &str, spec: &RunSpec, setting: String, errs: (f64, Option<f64>)) -> ResultRow {
    ResultRow {
        protocol: protocol.into(),
        variant: spec.label.clone(),
        seed: spec.config.seed.to_string(),
        setting,
        test_error: errs.0,
        rare_class_error: errs.1,
    }
}

pub fn table1(opts: &ExperimentOptions) -> Result<ExperimentTable> {
    let data = load_mnist(&opts.data_dir)?;
    let tree = tree_or(opts, MNIST_TREE)?;
    let mut table = ExperimentTable::default();
    for &seed in &opts.seeds {
        let train = balanced_sample(&data.train, SampleSize::Total(5000), seed)?;
        let test = balanced_sample(&data.test, SampleSize::Total(1000), seed)?;
        for spec in mnist_specs(seed, &Variant::ALL, opts) {
            let errs = evaluate_run(&spec, &train, &test, &tree, None)?;
            table.rows.push(row("table1", &spec, "n=5000".into(), errs));
        }
    }
    Ok(table.finish())
}

pub fn fig4a(opts: &ExperimentOptions) -> Result<ExperimentTable> {
    let data = load_mnist(&opts.data_dir)?;
    let tree = tree_or(opts, MNIST_TREE)?;
    let mut table = ExperimentTable::default();
    for &seed in &opts.seeds {
        let test = balanced_sample(&data.test, SampleSize::Total(1000), seed)?;
        for &size in &opts.sizes {
            let train = balanced_sample(&data.train, SampleSize::Total(size), seed)?;
            for spec in mnist_specs(seed, &[Variant::Rbm, Variant::Hrbm], opts) {
                let errs = evaluate_run(&spec, &train, &test, &tree, None)?;
                table.rows.push(row("fig4a", &spec, format!("n={size:05}"), errs));
            }
        }
    }
    Ok(table.finish())
}

/// Rare-class sweep. For every rare count there is one row per rare digit
/// and seed, plus an `avg` row per seed averaging the ten digits.
pub fn fig4b(opts: &ExperimentOptions) -> Result<ExperimentTable> {
    let data = load_mnist(&opts.data_dir)?;
    let tree = tree_or(opts, MNIST_TREE)?;
    let mut table = ExperimentTable::default();
    for &seed in &opts.seeds {
        let test = balanced_sample(&data.test, SampleSize::Total(1000), seed)?;
        for &count in &opts.rare_counts {
            let mut per_variant: BTreeMap<String, (RunSpec, Vec<RunErrors>)> = BTreeMap::new();
            for digit in 0..10 {
                let train = rare_class_sample(&data.train, digit, count, 500, seed)?;
                for spec in mnist_specs(seed, &[Variant::Rbm, Variant::Hrbm], opts) {
                    let errs = evaluate_run(&spec, &train, &test, &tree, Some(digit))?;
                    table
                        .rows
                        .push(row("fig4b", &spec, format!("rare={count:03},digit={digit}"), errs));
                    per_variant
                        .entry(spec.label.clone())
                        .or_insert_with(|| (spec.clone(), Vec::new()))
                        .1
                        .push(errs);
                }
            }
            for (spec, errs) in per_variant.into_values() {
                let n = errs.len() as f64;
                let overall = errs.iter().map(|e| e.0).sum::<f64>() / n;
                let rare = errs.iter().map(|e| e.1.unwrap_or(0.0)).sum::<f64>() / n;
                table
                    .rows
                    .push(row("fig4b", &spec, format!("rare={count:03},avg"), (overall, Some(rare))));
            }
        }
    }
    Ok(table.finish())
}

/// 20 Newsgroups comparison. Full scale follows the reference settings;
/// desk scale shrinks every model to 200 hidden units and 50 epochs.
pub fn table2(opts: &ExperimentOptions) -> Result<ExperimentTable> {
    let [train_path, test_path] = newsgroups_paths(&opts.data_dir);
    let train = load_table(&std::fs::read_to_string(&train_path)?, LabelColumn::Last)?;
    let test = load_table(&std::fs::read_to_string(&test_path)?, LabelColumn::Last)?;
    let tree = tree_or(opts, NEWSGROUPS_TREE)?;
    let k = tree.num_classes();
    let train = train.with_num_classes(k)?;
    let test = test.with_num_classes(k)?;

    let mut table = ExperimentTable::default();
    for &seed in &opts.seeds {
        for spec in newsgroups_specs(seed, opts) {
            let errs = evaluate_run(&spec, &train, &test, &tree, None)?;
            let setting = if opts.desk_scale { "desk" } else { "full" };
            table.rows.push(row("table2", &spec, setting.into(), errs));
        }
    }
    Ok(table.finish())
}

pub fn newsgroups_specs(seed: u64, opts: &ExperimentOptions) -> Vec<RunSpec> {
    let base = |hidden: usize, learning_rate: f64, epochs: usize, penalty_weight: f64| TrainConfig {
        hidden: if opts.desk_scale { 200 } else { hidden },
        learning_rate,
        penalty_weight,
        penalty_mode: opts.penalty_mode,
        paper_partial_grad: opts.paper_partial_grad,
        epochs: if opts.desk_scale { 50 } else { epochs },
        batch_size: opts.batch_size,
        seed,
    };
    let mut specs = vec![
        RunSpec::new(Variant::Rbm, base(2000, 0.1, 100, 0.0)),
        RunSpec::new(Variant::Hrbm, base(1500, 0.01, 200, 0.1)),
        RunSpec {
            label: "hrbm-c0".into(),
            ..RunSpec::new(Variant::Hrbm, base(1500, 0.01, 200, 0.0))
        },
        RunSpec::new(Variant::CascadeHard, base(2000, 0.1, 100, 0.0)),
        RunSpec::new(Variant::CascadeSoft, base(2000, 0.1, 100, 0.0)),
        RunSpec {
            widths: if opts.desk_scale {
                vec![200, 100, 40, 40]
            } else {
                vec![1000, 500, 200, 200]
            },
            ..RunSpec::new(Variant::Hhrbm, base(1000, 0.1, 100, 0.0))
        },
        RunSpec::new(Variant::Mnl, base(0, 0.1, 100, 0.0)),
        RunSpec::new(Variant::Corrmnl, base(0, 0.1, 100, 0.0)),
    ];
    for s in &mut specs {
        if s.config.hidden == 0 {
            s.config.hidden = 1;
        }
    }
    specs.retain(|s| opts.only.as_ref().is_none_or(|o| o.contains(&s.label)));
    specs
}

pub fn run_protocol(name: &str, opts: &ExperimentOptions) -> Result<ExperimentTable> {
    match name {
        "table1" => table1(opts),
        "fig4a" => fig4a(opts),
        "fig4b" => fig4b(opts),
        "table2" => table2(opts),
        other => Err(Error::UnknownProtocol {
            name: other.into(),
            available: PROTOCOLS.join(", "),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_trees_parse() {
        let m = TaxonomyTree::parse(MNIST_TREE).unwrap();
        assert_eq!(m.num_classes(), 10);
        assert_eq!(m.internal_nodes().len(), 4);
        let g = TaxonomyTree::parse(NEWSGROUPS_TREE).unwrap();
        assert_eq!(g.num_classes(), 20);
        for shallow in ["alt.atheism", "misc.forsale", "soc.religion.christian"] {
            assert_eq!(g.depth(g.node_index(shallow).unwrap()), 1);
        }
        for k in 0..20 {
            let leaf = g.leaf_of_class(k);
            assert!(g.depth(leaf) == 1 || g.depth(leaf) == 3, "{}", g.name(leaf));
        }
    }

    #[test]
    fn unknown_protocol_lists_available() {
        let err = run_protocol("table9", &ExperimentOptions::default()).unwrap_err();
        let msg = err.to_string();
        for p in PROTOCOLS {
            assert!(msg.contains(p));
        }
    }

    #[test]
    fn table1_variant_set() {
        let specs = mnist_specs(1, &Variant::ALL, &ExperimentOptions::default());
        let labels: Vec<String> = specs.iter().map(|s| s.label.clone()).collect();
        assert_eq!(
            labels,
            ["rbm", "hrbm", "cascade-hard", "cascade-soft", "hhrbm", "mnl", "corrmnl"]
        );
        assert!(specs.iter().all(|s| s.config.hidden == 100 && s.config.learning_rate == 0.1));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn mean_rows_and_order() {
        let r = |variant: &str, seed: &str, err: f64| ResultRow {
            protocol: "p".into(),
            variant: variant.into(),
            seed: seed.into(),
            setting: "s".into(),
            test_error: err,
            rare_class_error: None,
        };
        let t = ExperimentTable {
            rows: vec![r("rbm", "2", 0.2), r("hrbm", "1", 0.1), r("rbm", "1", 0.4), r("rbm", "10", 0.3)],
        }
        .finish();
        let order: Vec<(&str, &str)> = t.rows.iter().map(|r| (r.variant.as_str(), r.seed.as_str())).collect();
        assert_eq!(
            order,
            [("hrbm", "1"), ("hrbm", "mean"), ("rbm", "1"), ("rbm", "2"), ("rbm", "10"), ("rbm", "mean")]
        );
        assert!((t.mean("rbm", "s").unwrap().test_error - 0.3).abs() < 1e-15);
    }
}
