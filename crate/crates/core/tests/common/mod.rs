//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use hrbm::{Dataset, RbmParams, TaxonomyTree};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bits(i: usize, len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |j| ((i >> j) & 1) as f64)
}

pub fn random_params<R: Rng>(n: usize, d: usize, k: usize, scale: f64, rng: &mut R) -> RbmParams {
    let mut p = RbmParams::zeros(n, d, k);
    for v in p
        .w
        .iter_mut()
        .chain(p.b.iter_mut())
        .chain(p.c.iter_mut())
        .chain(p.d_bias.iter_mut())
        .chain(p.u.iter_mut())
    {
        *v = scale * (2.0 * rng.random::<f64>() - 1.0);
    }
    p
}

/// Energy written out term by term.
pub fn energy(p: &RbmParams, x: &Array1<f64>, y: usize, h: &Array1<f64>) -> f64 {
    let mut e = 0.0;
    for j in 0..p.num_hidden() {
        for i in 0..p.num_visible() {
            e -= h[j] * p.w[[j, i]] * x[i];
        }
        e -= p.c[j] * h[j] + p.u[[j, y]] * h[j];
    }
    for i in 0..p.num_visible() {
        e -= p.b[i] * x[i];
    }
    e - p.d_bias[y]
}

/// `p(y | x)` by summing `exp(-E)` over every hidden configuration.
pub fn posterior_by_enumeration(p: &RbmParams, x: &Array1<f64>) -> Vec<f64> {
    let n = p.num_hidden();
    let k = p.num_classes();
    let mut logs = vec![Vec::new(); k];
    for (y, l) in logs.iter_mut().enumerate() {
        for i in 0..(1 << n) {
            l.push(-energy(p, x, y, &bits(i, n)));
        }
    }
    let per_class: Vec<f64> = logs.iter().map(|l| lse(l)).collect();
    let z = lse(&per_class);
    per_class.iter().map(|v| (v - z).exp()).collect()
}

pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Every `(x, y, h)` with its probability under the model.
pub fn full_joint(p: &RbmParams) -> Vec<(Array1<f64>, usize, Array1<f64>, f64)> {
    let (n, d, k) = (p.num_hidden(), p.num_visible(), p.num_classes());
    let mut rows = Vec::new();
    for xi in 0..(1 << d) {
        for y in 0..k {
            for hi in 0..(1 << n) {
                let (x, h) = (bits(xi, d), bits(hi, n));
                let le = -energy(p, &x, y, &h);
                rows.push((x, y, h, le));
            }
        }
    }
    let z = lse(&rows.iter().map(|r| r.3).collect::<Vec<_>>());
    for r in &mut rows {
        r.3 = (r.3 - z).exp();
    }
    rows
}

/// Random tree over `k` classes: internal nodes are created by recursively
/// splitting class ranges into 1..=3 groups.
pub fn random_tree<R: Rng>(k: usize, rng: &mut R) -> TaxonomyTree {
    let mut edges = Vec::new();
    let mut counter = 0usize;
    fn split<R: Rng>(
        name: &str,
        classes: &[usize],
        edges: &mut Vec<String>,
        counter: &mut usize,
        rng: &mut R,
        top: bool,
    ) {
        if classes.len() == 1 && !top {
            return;
        }
        let groups = if classes.len() == 1 {
            1
        } else {
            rng.random_range(2..=classes.len().min(3))
        };
        let mut cuts: Vec<usize> = (1..classes.len()).collect();
        // choose groups-1 cut points
        for i in 0..cuts.len() {
            let j = rng.random_range(i..cuts.len());
            cuts.swap(i, j);
        }
        let mut chosen: Vec<usize> = cuts[..groups - 1].to_vec();
        chosen.sort_unstable();
        let mut start = 0;
        for end in chosen.into_iter().chain([classes.len()]) {
            let part = &classes[start..end];
            start = end;
            if part.len() == 1 {
                edges.push(format!("{name} -> c{}", part[0]));
            } else {
                *counter += 1;
                let child = format!("g{counter}");
                edges.push(format!("{name} -> {child}"));
                split(&child, part, edges, counter, rng, false);
            }
        }
    }
    let classes: Vec<usize> = (0..k).collect();
    split("root", &classes, &mut edges, &mut counter, rng, true);
    let mut text = String::from("[edges]\n");
    for e in edges {
        text.push_str(&e);
        text.push('\n');
    }
    text.push_str("[classes]\n");
    for c in 0..k {
        text.push_str(&format!("c{c} = {c}\n"));
    }
    TaxonomyTree::parse(&text).expect("generated tree parses")
}

/// Path-sum oracle: walk from each class leaf up to the root through
/// parent edges and add every edge row met.
pub fn compose_by_walk(tree: &TaxonomyTree, a: &Array2<f64>) -> Array2<f64> {
    let k = tree.num_classes();
    let mut u = Array2::zeros((a.ncols(), k));
    for c in 0..k {
        let mut node = tree.leaf_of_class(c);
        let mut rows = Vec::new();
        while let Some(e) = tree.parent_edge(node) {
            rows.push(e);
            node = tree.edge(e).parent;
        }
        // root-first order
        for &e in rows.iter().rev() {
            let mut col = u.column_mut(c);
            col += &a.row(e);
        }
    }
    u
}

/// Noisy copies of `k` random binary prototypes; each bit flips with
/// probability `noise`.
pub fn toy_dataset(n: usize, d: usize, k: usize, noise: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let protos: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| f64::from(r.random::<bool>() as u8)).collect())
        .collect();
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        for j in 0..d {
            let v = protos[c][j];
            x[[i, j]] = if r.random::<f64>() < noise { 1.0 - v } else { v };
        }
        y.push(c);
    }
    Dataset::new(x, y, k, "toy").unwrap()
}

/// Two classes; the first three features copy the class, the rest are
/// random bits.
pub fn separable_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        for j in 0..3.min(d) {
            x[[i, j]] = c as f64;
        }
        for j in 3..d {
            x[[i, j]] = f64::from(r.random::<bool>() as u8);
        }
        y.push(c);
    }
    Dataset::new(x, y, 2, "separable").unwrap()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn params_diff(a: &RbmParams, b: &RbmParams) -> f64 {
    let v = |x: &ndarray::Array1<f64>, y: &ndarray::Array1<f64>| {
        x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    };
    max_abs_diff(&a.w, &b.w)
        .max(max_abs_diff(&a.u, &b.u))
        .max(v(&a.b, &b.b))
        .max(v(&a.c, &b.c))
        .max(v(&a.d_bias, &b.d_bias))
}
