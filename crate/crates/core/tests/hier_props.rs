mod common;

use common::*;
use hrbm::hier::{compose_u, hier_gradient, orthogonal_penalty, penalty_gradient, train_hcrbm, HierTrainer, Penalty};
use hrbm::train::FlatTrainer;
use hrbm::{EdgeParams, PenaltyMode, TaxonomyTree, TrainConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn compose_matches_leaf_walk_on_random_trees() {
    let mut r = rng(21);
    for _ in 0..100 {
        let k = r.random_range(1..=20);
        let tree = random_tree(k, &mut r);
        let a = Array2::from_shape_fn((tree.num_edges(), 4), |_| r.random::<f64>() * 2.0 - 1.0);
        let got = compose_u(a.view(), &tree.indicator_matrix());
        assert_eq!(got, compose_by_walk(&tree, &a));
    }
}

#[test]
fn routed_gradient_matches_per_path_accumulation() {
    let mut r = rng(22);
    for _ in 0..20 {
        let tree = random_tree(r.random_range(2..=12), &mut r);
        let grad_u = Array2::from_shape_fn((3, tree.num_classes()), |_| r.random::<f64>());
        let a = Array2::zeros((tree.num_edges(), 3));
        let got = hier_gradient(
            grad_u.view(),
            a.view(),
            &tree.indicator_matrix(),
            &tree.ancestor_pairs(),
            &Penalty::none(),
        )
        .unwrap();
        let mut want = Array2::<f64>::zeros((tree.num_edges(), 3));
        for c in 0..tree.num_classes() {
            for &e in tree.path_edges(c) {
                let mut row = want.row_mut(e);
                row += &grad_u.column(c);
            }
        }
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let mut r = rng(23);
    for _ in 0..10 {
        let tree = random_tree(r.random_range(3..=10), &mut r);
        let pairs = tree.ancestor_pairs();
        for mode in [PenaltyMode::Raw, PenaltyMode::Abs, PenaltyMode::Squared] {
            let a = hrbm::gradcheck::random_edges_away_from_zero(tree.num_edges(), 3, &pairs, 1e-3, &mut r);
            let g = penalty_gradient(a.view(), &pairs, mode, false);
            let h = 1e-6;
            for ((e, j), gv) in g.indexed_iter() {
                let mut plus = a.clone();
                plus[[e, j]] += h;
                let mut minus = a.clone();
                minus[[e, j]] -= h;
                let fd = (orthogonal_penalty(plus.view(), &pairs, mode)
                    - orthogonal_penalty(minus.view(), &pairs, mode))
                    / (2.0 * h);
                assert!((fd - gv).abs() <= 1e-8, "{mode}: {fd} vs {gv}");
            }
        }
    }
}

fn chain3() -> TaxonomyTree {
    TaxonomyTree::parse("[edges]\nr -> a\na -> b\nb -> l\n[classes]\nl = 0\n").unwrap()
}

/// Penalty-only descent; returns the step count at which every pair dot
/// product fell below `target`, if it did.
fn penalty_descent(mode: PenaltyMode, eta: f64, steps: usize, target: f64) -> Option<usize> {
    let tree = chain3();
    let mut r = rng(24);
    let a = Array2::from_shape_fn((3, 8), |_| r.random::<f64>() * 2.0 - 1.0);
    let penalty = Penalty {
        weight: 1.0,
        mode,
        partial_grad: false,
    };
    let mut edges = EdgeParams::from_matrix(&tree, a, penalty).unwrap();
    let zero = Array2::zeros((8, 1));
    for s in 0..steps {
        if edges.max_pair_dot() < target {
            return Some(s);
        }
        let step = edges.route(zero.view()).unwrap();
        edges.ascend(&step, eta).unwrap();
    }
    (edges.max_pair_dot() < target).then_some(steps)
}

#[test]
fn penalty_only_descent_orthogonalizes() {
    assert!(penalty_descent(PenaltyMode::Squared, 0.05, 10_000, 1e-3).is_some());
    assert!(penalty_descent(PenaltyMode::Abs, 1e-4, 10_000, 1e-3).is_some());
}

#[test]
fn raw_penalty_is_unbounded_below() {
    let tree = chain3();
    let pairs = tree.ancestor_pairs();
    let mut a = Array2::zeros((3, 2));
    a[[0, 0]] = 1.0;
    let mut last = f64::INFINITY;
    for t in 1..6 {
        a[[1, 0]] = -(10f64.powi(t));
        let v = orthogonal_penalty(a.view(), &pairs, PenaltyMode::Raw);
        assert!(v < last);
        last = v;
    }
    assert!(last <= -1e5);
}

fn cfg(epochs: usize, c: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: 16,
        learning_rate: 0.1,
        penalty_weight: c,
        epochs,
        batch_size: 25,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn star_tree_without_penalty_tracks_flat_training() {
    let data = toy_dataset(500, 12, 4, 0.1, 31);
    let config = cfg(5, 0.0, 7);
    let star = TaxonomyTree::star(4);
    let mut flat = FlatTrainer::flat(&data, 4, &config).unwrap();
    let mut hier = HierTrainer::hierarchical(&data, &star, &config).unwrap();
    assert_eq!(params_diff(flat.params(), hier.params()), 0.0);
    for _ in 0..5 {
        let a = flat.step_epoch().unwrap();
        let b = hier.step_epoch().unwrap();
        assert!(params_diff(flat.params(), hier.params()) <= 1e-12);
        assert!((a.recon_error - b.recon_error).abs() <= 1e-12);
    }
}

#[test]
fn hierarchical_model_separates_toy_set() {
    let data = separable_dataset(200, 6, 41);
    let tree = TaxonomyTree::parse("[edges]\nr -> g\ng -> a\ng -> b\n[classes]\na = 0\nb = 1\n").unwrap();
    let model = train_hcrbm(&data, &tree, &cfg(20, 0.1, 1)).unwrap();
    assert_eq!(model.metrics.epochs.last().unwrap().train_error, 0.0);
    assert_eq!(model.params.u, model.edges.compose());
}

#[test]
fn flat_model_separates_toy_set() {
    let data = separable_dataset(200, 6, 42);
    let (_, metrics) = hrbm::train::train_flat_rbm(&data, 2, &cfg(20, 0.0, 1)).unwrap();
    assert_eq!(metrics.epochs.last().unwrap().train_error, 0.0);
}

#[test]
fn training_is_deterministic() {
    let data = toy_dataset(120, 8, 3, 0.1, 5);
    let tree = random_tree(3, &mut rng(2));
    let a = train_hcrbm(&data, &tree, &cfg(3, 0.1, 9)).unwrap();
    let b = train_hcrbm(&data, &tree, &cfg(3, 0.1, 9)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.metrics.epochs, b.metrics.epochs);
    let c = train_hcrbm(&data, &tree, &cfg(3, 0.1, 10)).unwrap();
    assert_ne!(a.params, c.params);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn indicator_column_sums_are_leaf_depths(seed in 0u64..10_000, k in 1usize..16) {
        let tree = random_tree(k, &mut rng(seed));
        let m = tree.indicator_matrix();
        for c in 0..k {
            let col: f64 = m.matrix().column(c).sum();
            prop_assert_eq!(col as usize, tree.depth(tree.leaf_of_class(c)));
        }
    }

    #[test]
    fn pair_count_is_sum_of_parent_depths(seed in 0u64..10_000, k in 1usize..16) {
        let tree = random_tree(k, &mut rng(seed));
        let expect: usize = tree.edges().iter().map(|e| tree.depth(e.parent)).sum();
        let pairs = tree.ancestor_pairs();
        prop_assert_eq!(pairs.len(), expect);
        for &(child, anc) in &pairs {
            let node = tree.edge(child).parent;
            prop_assert!(tree.node_path(node).contains(&anc));
        }
    }

    #[test]
    fn tree_text_round_trip(seed in 0u64..10_000, k in 1usize..16) {
        let tree = random_tree(k, &mut rng(seed));
        let again = TaxonomyTree::parse(&tree.to_text()).unwrap();
        prop_assert_eq!(again.to_text(), tree.to_text());
        prop_assert_eq!(again.num_edges(), tree.num_edges());
        for c in 0..k {
            prop_assert_eq!(again.path_edges(c).len(), tree.path_edges(c).len());
        }
    }
}
