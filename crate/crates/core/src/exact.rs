//! Exact likelihoods and gradients for small models.
//!
//! The partition function is enumerated over every binary visible vector
//! and class, with the hidden layer summed out in closed form. Feasible for
//! `d` up to [`MAX_EXACT_DIM`].

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, sigmoid, softplus};
use crate::rbm::{GradientSet, RbmParams};

pub const MAX_EXACT_DIM: usize = 14;

fn check_dims(p: &RbmParams) -> Result<()> {
    if p.num_visible() > MAX_EXACT_DIM || p.num_hidden() > MAX_EXACT_DIM {
        return Err(Error::TooLarge(format!(
            "n={}, d={} (limit {MAX_EXACT_DIM})",
            p.num_hidden(),
            p.num_visible()
        )));
    }
    Ok(())
}

/// `log Σ_h e^{-E(y, x, h)}`.
pub fn log_unnormalized(p: &RbmParams, x: ArrayView1<f64>, y: usize) -> f64 {
    let act = p.w.dot(&x) + &p.c;
    p.b.dot(&x)
        + p.d_bias[y]
        + act
            .iter()
            .zip(p.u.column(y).iter())
            .map(|(&a, &u)| softplus(a + u))
            .sum::<f64>()
}

/// The `i`-th binary vector of length `d` (bit `j` of `i` is entry `j`).
pub fn binary_vector(i: usize, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |j| ((i >> j) & 1) as f64)
}

/// Joint configurations `(x, y)` with their log-weights.
fn joint_table(p: &RbmParams) -> Vec<(Array1<f64>, usize, f64)> {
    let (d, k) = (p.num_visible(), p.num_classes());
    let mut out = Vec::with_capacity((1 << d) * k);
    for i in 0..(1usize << d) {
        let x = binary_vector(i, d);
        for y in 0..k {
            let lw = log_unnormalized(p, x.view(), y);
            out.push((x.clone(), y, lw));
        }
    }
    out
}

pub fn log_partition(p: &RbmParams) -> Result<f64> {
    check_dims(p)?;
    let weights: Vec<f64> = joint_table(p).into_iter().map(|t| t.2).collect();
    Ok(log_sum_exp(&weights))
}

/// Exact `log p(x, y)` for a binary visible vector.
pub fn exact_joint_loglik(p: &RbmParams, x: ArrayView1<f64>, y: usize) -> Result<f64> {
    check_dims(p)?;
    if x.len() != p.num_visible() || y >= p.num_classes() {
        return Err(Error::Shape("example does not match model".into()));
    }
    Ok(log_unnormalized(p, x, y) - log_partition(p)?)
}

/// Sufficient statistics `E_{h|x,y}[-∂E/∂θ]` for one clamped `(x, y)`.
fn clamped_stats(p: &RbmParams, x: ArrayView1<f64>, y: usize, weight: f64, acc: &mut GradientSet) {
    let mut mean = p.w.dot(&x) + &p.c;
    mean += &p.u.column(y);
    mean.mapv_inplace(sigmoid);
    for (j, &hj) in mean.iter().enumerate() {
        let mut row = acc.w.row_mut(j);
        row.scaled_add(weight * hj, &x);
        acc.u[[j, y]] += weight * hj;
    }
    acc.b.scaled_add(weight, &x);
    acc.c.scaled_add(weight, &mean);
    acc.d_bias[y] += weight;
}

/// Exact gradient of `log p(x, y)`: data expectation minus model
/// expectation, both computed in closed form over `h`.
pub fn exact_loglik_gradient(p: &RbmParams, x: ArrayView1<f64>, y: usize) -> Result<GradientSet> {
    check_dims(p)?;
    let mut data = GradientSet::zeros_like(p);
    clamped_stats(p, x, y, 1.0, &mut data);

    let table = joint_table(p);
    let lz = log_sum_exp(&table.iter().map(|t| t.2).collect::<Vec<_>>());
    let mut model = GradientSet::zeros_like(p);
    for (xv, yv, lw) in &table {
        clamped_stats(p, xv.view(), *yv, (lw - lz).exp(), &mut model);
    }
    model.scale(-1.0);
    data.add_assign(&model);
    Ok(data)
}
