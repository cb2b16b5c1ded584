//! Acceptance criteria, one PASS / FAIL / SKIPPED line each.
//!
//! Criteria 7 and 8 train on MNIST under `$HRBM_DATA_DIR/mnist` (default
//! `<workspace>/data/mnist`, fetched by `scripts/fetch_mnist.sh`) and take tens of
//! minutes on one core. Criterion 9 needs the 20 Newsgroups tables. Missing
//! data, or `HRBM_ACCEPTANCE_QUICK=1`, skips them.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::*;
use hrbm::baselines::cascade::{Cascade, CascadeMode, CascadeNode};
use hrbm::baselines::mnl::{LinearLogit, LogitTrainer};
use hrbm::exact::{exact_joint_loglik, exact_loglik_gradient};
use hrbm::experiment::{fig4b, mnist_paths, newsgroups_paths, table1, table2, ExperimentOptions};
use hrbm::hier::{compose_u, orthogonal_penalty, penalty_gradient, HierTrainer, Penalty};
use hrbm::train::FlatTrainer;
use hrbm::{EdgeParams, PenaltyMode, RbmParams, TaxonomyTree, TrainConfig};
use ndarray::{Array1, Array2};
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

use Outcome::*;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn c1_posterior_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, d, k) = (r.random_range(1..=10), r.random_range(1..=8), r.random_range(1..=5));
        let p = random_params(n, d, k, 1.5, &mut r);
        let x = Array1::from_shape_fn(d, |_| r.random::<f64>());
        let got = p.class_posterior(x.view()).unwrap();
        for (g, w) in got.iter().zip(posterior_by_enumeration(&p, &x)) {
            worst = worst.max((g - w).abs() / w);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && secs < 10.0,
        format!("max relative error {worst:.2e} over 100 instances in {secs:.2}s"),
    )
}

fn block_fd(p: &RbmParams, x: &Array1<f64>, y: usize) -> [f64; 5] {
    let g = exact_loglik_gradient(p, x.view(), y).unwrap();
    let h = 1e-5;
    let f = |q: &RbmParams| exact_joint_loglik(q, x.view(), y).unwrap();
    let mut out = [0.0f64; 5];
    let analytic = [g.w.as_slice().unwrap(), g.b.as_slice().unwrap(), g.c.as_slice().unwrap(),
        g.d_bias.as_slice().unwrap(), g.u.as_slice().unwrap()];
    for (block, values) in analytic.iter().enumerate() {
        for (idx, gv) in values.iter().enumerate() {
            let bump = |q: &mut RbmParams, s: f64| {
                let slot = match block {
                    0 => q.w.as_slice_mut(),
                    1 => q.b.as_slice_mut(),
                    2 => q.c.as_slice_mut(),
                    3 => q.d_bias.as_slice_mut(),
                    _ => q.u.as_slice_mut(),
                };
                slot.unwrap()[idx] += s;
            };
            let mut plus = p.clone();
            bump(&mut plus, h);
            let mut minus = p.clone();
            bump(&mut minus, -h);
            out[block] = out[block].max(((f(&plus) - f(&minus)) / (2.0 * h) - gv).abs());
        }
    }
    out
}

fn c2_gradient_structure() -> Outcome {
    let start = Instant::now();
    let mut r = rng(102);
    let mut lik = [0.0f64; 5];
    for _ in 0..25 {
        let (n, d, k) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(2..=4));
        let p = random_params(n, d, k, 1.0, &mut r);
        let x = bits(r.random_range(0..(1 << d)), d);
        for (w, e) in lik.iter_mut().zip(block_fd(&p, &x, r.random_range(0..k))) {
            *w = w.max(e);
        }
    }
    let mut pen = [0.0f64; 3];
    let modes = [PenaltyMode::Raw, PenaltyMode::Abs, PenaltyMode::Squared];
    for _ in 0..10 {
        let tree = random_tree(r.random_range(3..=10), &mut r);
        let pairs = tree.ancestor_pairs();
        for (m, mode) in modes.iter().enumerate() {
            let a = hrbm::gradcheck::random_edges_away_from_zero(tree.num_edges(), 4, &pairs, 1e-3, &mut r);
            let g = penalty_gradient(a.view(), &pairs, *mode, false);
            for ((e, j), gv) in g.indexed_iter() {
                let h = 1e-6;
                let mut plus = a.clone();
                plus[[e, j]] += h;
                let mut minus = a.clone();
                minus[[e, j]] -= h;
                let fd = (orthogonal_penalty(plus.view(), &pairs, *mode)
                    - orthogonal_penalty(minus.view(), &pairs, *mode))
                    / (2.0 * h);
                pen[m] = pen[m].max((fd - gv).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let lik_max = lik.iter().cloned().fold(0.0, f64::max);
    let pen_max = pen.iter().cloned().fold(0.0, f64::max);
    check(
        lik_max <= 1e-6 && pen_max <= 1e-8 && secs < 30.0,
        format!(
            "likelihood W/b/c/d/U max err {:.1e}/{:.1e}/{:.1e}/{:.1e}/{:.1e}; penalty raw/abs/squared {:.1e}/{:.1e}/{:.1e}; {secs:.2}s",
            lik[0], lik[1], lik[2], lik[3], lik[4], pen[0], pen[1], pen[2]
        ),
    )
}

fn c3_composition() -> Outcome {
    let mut r = rng(103);
    let mut trees = 0;
    let mut mismatches = 0;
    while trees < 100 {
        let tree = random_tree(r.random_range(1..=14), &mut r);
        if tree.num_nodes() > 20 {
            continue;
        }
        trees += 1;
        let a = Array2::from_shape_fn((tree.num_edges(), 5), |_| r.random::<f64>() * 4.0 - 2.0);
        if compose_u(a.view(), &tree.indicator_matrix()) != compose_by_walk(&tree, &a) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} of {trees} random trees differ from the path-walk sum"))
}

fn c4_flat_reduction() -> Outcome {
    let data = toy_dataset(500, 16, 5, 0.1, 104);
    let config = TrainConfig {
        hidden: 20,
        penalty_weight: 0.0,
        epochs: 5,
        batch_size: 50,
        seed: 4,
        ..TrainConfig::default()
    };
    let star = TaxonomyTree::star(5);
    let mut flat = FlatTrainer::flat(&data, 5, &config).unwrap();
    let mut hier = HierTrainer::hierarchical(&data, &star, &config).unwrap();
    let mut rbm_gap: f64 = 0.0;
    for _ in 0..5 {
        flat.step_epoch().unwrap();
        hier.step_epoch().unwrap();
        rbm_gap = rbm_gap.max(params_diff(flat.params(), hier.params()));
    }
    let mut mnl = LogitTrainer::new(&data, LinearLogit::zeros(16, 5), &config).unwrap();
    let mut corr = LogitTrainer::new(&data, LinearLogit::with_tree(16, &star), &config).unwrap();
    let mut mnl_gap: f64 = 0.0;
    for _ in 0..5 {
        mnl.step_epoch().unwrap();
        corr.step_epoch().unwrap();
        mnl_gap = mnl_gap.max(max_abs_diff(&mnl.model().coef, &corr.model().coef));
        let db = &mnl.model().bias - &corr.model().bias;
        mnl_gap = db.iter().fold(mnl_gap, |m, v| m.max(v.abs()));
    }
    check(
        rbm_gap <= 1e-12 && mnl_gap <= 1e-12,
        format!("per-epoch max parameter gap: hrbm vs rbm {rbm_gap:.1e}, corrmnl vs mnl {mnl_gap:.1e}"),
    )
}

fn c5_penalty_well_posed() -> Outcome {
    let chain = TaxonomyTree::parse("[edges]\nr -> a\na -> b\nb -> l\n[classes]\nl = 0\n").unwrap();
    let descend = |mode: PenaltyMode, eta: f64| -> (Option<usize>, f64) {
        let mut r = rng(105);
        let a = Array2::from_shape_fn((3, 8), |_| r.random::<f64>() * 2.0 - 1.0);
        let penalty = Penalty {
            weight: 1.0,
            mode,
            partial_grad: false,
        };
        let mut edges = EdgeParams::from_matrix(&chain, a, penalty).unwrap();
        let no_data = Array2::zeros((8, 1));
        for step in 0..=10_000 {
            if edges.max_pair_dot() < 1e-3 {
                return (Some(step), edges.max_pair_dot());
            }
            let g = edges.route(no_data.view()).unwrap();
            edges.ascend(&g, eta).unwrap();
        }
        (None, edges.max_pair_dot())
    };
    let (abs_steps, abs_dot) = descend(PenaltyMode::Abs, 1e-4);
    let (sq_steps, sq_dot) = descend(PenaltyMode::Squared, 0.05);

    let pairs = chain.ancestor_pairs();
    let mut a = Array2::zeros((3, 2));
    a[[0, 0]] = 1.0;
    let raw: Vec<f64> = (0..4)
        .map(|t| {
            a[[1, 0]] = -(10f64.powi(t));
            orthogonal_penalty(a.view(), &pairs, PenaltyMode::Raw)
        })
        .collect();
    let unbounded = raw.windows(2).all(|w| w[1] < w[0]) && raw[3] <= -1e3;
    check(
        abs_steps.is_some() && sq_steps.is_some() && unbounded,
        format!(
            "abs: max |dot| {abs_dot:.1e} after {abs_steps:?} steps; squared: {sq_dot:.1e} after {sq_steps:?} steps; raw along a1 = -t*a0: {raw:?}"
        ),
    )
}

fn c6_soft_cascade() -> Outcome {
    let mut r = rng(106);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let tree = random_tree(r.random_range(2..=15), &mut r);
        let nodes = tree
            .internal_nodes()
            .into_iter()
            .map(|v| CascadeNode {
                node: v,
                classifier: (tree.children(v).len() > 1)
                    .then(|| random_params(3, 5, tree.children(v).len(), 3.0, &mut r)),
            })
            .collect();
        let cascade = Cascade::from_nodes(tree, nodes, false).unwrap();
        for _ in 0..10 {
            let x = Array1::from_shape_fn(5, |_| r.random::<f64>());
            let s: f64 = cascade.predict(x.view(), CascadeMode::Soft).unwrap().scores.unwrap().iter().sum();
            worst = worst.max((s - 1.0).abs());
        }
    }

    let tree = TaxonomyTree::parse(
        "[edges]\nroot -> left\nroot -> right\nleft -> a\nleft -> b\nright -> c\nright -> d\n\
         [classes]\na = 0\nb = 1\nc = 2\nd = 3\n",
    )
    .unwrap();
    let fixed = |probs: &[f64]| {
        let mut p = RbmParams::zeros(1, 1, probs.len());
        p.d_bias = probs.iter().map(|v| v.ln()).collect();
        p
    };
    let node = |name: &str, probs: &[f64]| CascadeNode {
        node: tree.node_index(name).unwrap(),
        classifier: Some(fixed(probs)),
    };
    let nodes = vec![node("root", &[0.6, 0.4]), node("left", &[0.9, 0.1]), node("right", &[0.2, 0.8])];
    let cascade = Cascade::from_nodes(tree.clone(), nodes, false).unwrap();
    let x = Array1::from_elem(1, 0.5);
    let soft = cascade.predict(x.view(), CascadeMode::Soft).unwrap();
    let hard = cascade.predict(x.view(), CascadeMode::Hard).unwrap();
    let scores = soft.scores.unwrap();
    let hand = [0.54, 0.06, 0.08, 0.32];
    let hand_err = scores.iter().zip(hand).map(|(s, e)| (s - e).abs()).fold(0.0, f64::max);
    check(
        worst <= 1e-12 && hand_err <= 1e-15 && soft.class == 0 && hard.class == 0,
        format!(
            "max |sum - 1| {worst:.1e} on 50 random trees; hand cascade scores {scores:?} (max err {hand_err:.1e}), soft class {}, hard class {}",
            soft.class, hard.class
        ),
    )
}

/// `HRBM_DATA_DIR`, else `data/` at the workspace root (test binaries run
/// from the crate directory).
fn data_dir() -> PathBuf {
    std::env::var_os("HRBM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data")))
}

fn quick() -> bool {
    std::env::var("HRBM_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1")
}

fn mnist_opts() -> Option<ExperimentOptions> {
    if quick() {
        return None;
    }
    let dir = data_dir();
    mnist_paths(&dir).iter().all(|p| p.exists()).then(|| ExperimentOptions {
        data_dir: dir,
        seeds: vec![1, 2, 3],
        only: Some(vec!["rbm".into(), "hrbm".into()]),
        rare_counts: vec![10],
        ..ExperimentOptions::default()
    })
}

fn c7_mnist_table() -> Outcome {
    let Some(opts) = mnist_opts() else {
        return Skipped(format!("MNIST not found under {} (or quick mode)", data_dir().display()));
    };
    let start = Instant::now();
    let table = match table1(&opts) {
        Ok(t) => t,
        Err(e) => return Fail(format!("protocol failed: {e}")),
    };
    let rbm = 100.0 * table.mean("rbm", "n=5000").unwrap().test_error;
    let hrbm = 100.0 * table.mean("hrbm", "n=5000").unwrap().test_error;
    let per_seed: Vec<String> = table
        .rows
        .iter()
        .filter(|r| r.seed != "mean")
        .map(|r| format!("{}@{}={:.2}", r.variant, r.seed, 100.0 * r.test_error))
        .collect();
    check(
        (rbm - 8.22).abs() <= 2.5 && (hrbm - 7.91).abs() <= 2.5 && hrbm <= rbm + 0.5,
        format!(
            "mean test error rbm {rbm:.2}% (target 8.22 +- 2.5), hrbm {hrbm:.2}% (target 7.91 +- 2.5, <= rbm + 0.5); [{}]; {:.0}s",
            per_seed.join(" "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c8_rare_class() -> Outcome {
    let Some(opts) = mnist_opts() else {
        return Skipped(format!("MNIST not found under {} (or quick mode)", data_dir().display()));
    };
    let start = Instant::now();
    let table = match fig4b(&opts) {
        Ok(t) => t,
        Err(e) => return Fail(format!("protocol failed: {e}")),
    };
    let get = |v: &str| table.mean(v, "rare=010,avg").unwrap();
    let (rbm, hrbm) = (get("rbm"), get("hrbm"));
    let (rr, hr) = (
        100.0 * rbm.rare_class_error.unwrap(),
        100.0 * hrbm.rare_class_error.unwrap(),
    );
    check(
        hr < rr,
        format!(
            "rare-class error averaged over 10 digits and 3 seeds: hrbm {hr:.2}% vs rbm {rr:.2}% (overall {:.2}% vs {:.2}%); {:.0}s",
            100.0 * hrbm.test_error,
            100.0 * rbm.test_error,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c9_newsgroups() -> Outcome {
    let dir = data_dir();
    if quick() || !newsgroups_paths(&dir).iter().all(|p| p.exists()) {
        return Skipped(format!(
            "20 Newsgroups tables not found under {} (or quick mode)",
            dir.join("20newsgroups").display()
        ));
    }
    let opts = ExperimentOptions {
        data_dir: dir,
        seeds: vec![1, 2, 3],
        only: Some(vec!["hrbm".into(), "hrbm-c0".into()]),
        desk_scale: true,
        ..ExperimentOptions::default()
    };
    let table = match table2(&opts) {
        Ok(t) => t,
        Err(e) => return Fail(format!("protocol failed: {e}")),
    };
    let with = 100.0 * table.mean("hrbm", "desk").unwrap().test_error;
    let without = 100.0 * table.mean("hrbm-c0", "desk").unwrap().test_error;
    check(with < without, format!("desk-scale mean error C=0.1 {with:.2}% vs C=0 {without:.2}%"))
}

fn main() {
    // `cargo test -- --list` and filters from the libtest protocol
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("1 exact posterior oracle", c1_posterior_oracle),
        ("2 gradient structure", c2_gradient_structure),
        ("3 composition oracle", c3_composition),
        ("4 flat-tree reduction", c4_flat_reduction),
        ("5 penalty well-posedness", c5_penalty_well_posed),
        ("6 soft-cascade normalization", c6_soft_cascade),
        ("7 MNIST table protocol", c7_mnist_table),
        ("8 MNIST rare-class protocol", c8_rare_class),
        ("9 20 Newsgroups ablation", c9_newsgroups),
    ];
    // 7-9 reproduce reported numbers on real data; they gate the exit code only in strict mode
    let strict = std::env::var_os("HRBM_ACCEPTANCE_STRICT").is_some();
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let (tag, detail) = match run() {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                if i < 6 || strict {
                    failed += 1;
                }
                ("FAIL", d)
            }
            Skipped(d) => ("SKIPPED", d),
        };
        println!("criterion {name}: {tag}: {detail}");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
