//! The classification RBM.
//!
//! Energy over a visible vector `x` (length `d`), binary hidden vector `h`
//! (length `n`) and class `y` (one of `K`):
//!
//! ```text
//! E(y, x, h) = -hᵀWx - bᵀx - cᵀh - d_y - (Uᵀh)_y
//! ```
//!
//! Hidden units are summed out analytically for the class posterior, and
//! training uses one-step contrastive divergence where the label layer is
//! free in the negative phase.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softmax_in_place, softplus};

/// Parameters of a classification RBM with `n` hidden units, `d` visible
/// units and `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// Hidden–visible weights, `n × d`.
    pub w: Array2<f64>,
    /// Visible bias, length `d`.
    pub b: Array1<f64>,
    /// Hidden bias, length `n`.
    pub c: Array1<f64>,
    /// Class bias, length `K`.
    pub d_bias: Array1<f64>,
    /// Hidden–label weights, `n × K`.
    pub u: Array2<f64>,
}

/// Log-likelihood gradient estimate for each parameter block, oriented for
/// ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
    pub d_bias: Array1<f64>,
    pub u: Array2<f64>,
}

/// Result of one CD-1 evaluation on a mini-batch.
#[derive(Debug, Clone)]
pub struct CdOutput {
    pub grad: GradientSet,
    /// Mean over the batch of the squared reconstruction error of `x`.
    pub recon_error: f64,
}

pub const INIT_STD: f64 = 0.01;

impl RbmParams {
    pub fn zeros(n: usize, d: usize, k: usize) -> Self {
        Self {
            w: Array2::zeros((n, d)),
            b: Array1::zeros(d),
            c: Array1::zeros(n),
            d_bias: Array1::zeros(k),
            u: Array2::zeros((n, k)),
        }
    }

    /// `W ~ N(0, 0.01²)` drawn in row-major order; every other block zero.
    pub fn init<R: Rng + ?Sized>(n: usize, d: usize, k: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(n, d, k);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        p.w.iter_mut().for_each(|v| *v = normal.sample(rng));
        p
    }

    pub fn num_hidden(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_visible(&self) -> usize {
        self.w.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.d_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d, k) = (self.num_hidden(), self.num_visible(), self.num_classes());
        if self.b.len() != d || self.c.len() != n || self.u.dim() != (n, k) {
            return Err(Error::Shape(format!(
                "blocks inconsistent with n={n}, d={d}, K={k}: b {}, c {}, U {:?}",
                self.b.len(),
                self.c.len(),
                self.u.dim()
            )));
        }
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, ok) in [
            ("W", self.w.iter().all(|v| v.is_finite())),
            ("b", self.b.iter().all(|v| v.is_finite())),
            ("c", self.c.iter().all(|v| v.is_finite())),
            ("d", self.d_bias.iter().all(|v| v.is_finite())),
            ("U", self.u.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite(format!("parameter block {name}")));
            }
        }
        Ok(())
    }

    fn check_visible(&self, len: usize) -> Result<()> {
        if len != self.num_visible() {
            return Err(Error::Shape(format!(
                "visible vector has length {len}, model expects {}",
                self.num_visible()
            )));
        }
        Ok(())
    }

    fn check_hidden(&self, len: usize) -> Result<()> {
        if len != self.num_hidden() {
            return Err(Error::Shape(format!(
                "hidden vector has length {len}, model expects {}",
                self.num_hidden()
            )));
        }
        Ok(())
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }

    pub fn energy(&self, y: usize, x: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64> {
        self.check_visible(x.len())?;
        self.check_hidden(h.len())?;
        self.check_class(y)?;
        let hwx = h.dot(&self.w.dot(&x));
        Ok(-hwx - self.b.dot(&x) - self.c.dot(&h) - self.d_bias[y] - self.u.column(y).dot(&h))
    }

    /// `Wx + c`.
    fn hidden_input(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.w.dot(&x) + &self.c
    }

    /// Unnormalized log `p(y|x)` for each class:
    /// `d_y + Σ_j softplus(c_j + U_jy + (Wx)_j)`.
    pub fn class_log_scores(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_visible(x.len())?;
        let act = self.hidden_input(x);
        Ok(self.scores_from_activation(act.view()))
    }

    fn scores_from_activation(&self, act: ArrayView1<f64>) -> Array1<f64> {
        let k = self.num_classes();
        let mut scores = self.d_bias.clone();
        for y in 0..k {
            let col = self.u.column(y);
            scores[y] += act
                .iter()
                .zip(col.iter())
                .map(|(&a, &u)| softplus(a + u))
                .sum::<f64>();
        }
        scores
    }

    /// Exact `p(y | x)`, normalized in log space.
    pub fn class_posterior(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut scores = self.class_log_scores(x)?;
        softmax_in_place(scores.as_slice_mut().expect("contiguous"));
        Ok(scores)
    }

    /// Row `i` holds `p(y | x_i)`.
    pub fn class_posterior_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_visible(x.ncols())?;
        let act = x.dot(&self.w.t()) + &self.c;
        let mut out = Array2::zeros((x.nrows(), self.num_classes()));
        for (i, row) in act.outer_iter().enumerate() {
            let mut scores = self.scores_from_activation(row);
            softmax_in_place(scores.as_slice_mut().expect("contiguous"));
            out.row_mut(i).assign(&scores);
        }
        Ok(out)
    }

    /// Most probable class per row; ties go to the lowest class index.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let post = self.class_posterior_batch(x)?;
        Ok(post
            .outer_iter()
            .map(|r| crate::math::argmax(r.as_slice().expect("contiguous")))
            .collect())
    }

    /// `p(h_j = 1 | x, y) = σ(c_j + U_jy + Σ_i W_ji x_i)`.
    pub fn hidden_given_xy(&self, x: ArrayView1<f64>, y: usize) -> Result<Array1<f64>> {
        self.check_visible(x.len())?;
        self.check_class(y)?;
        let mut act = self.hidden_input(x);
        act += &self.u.column(y);
        act.mapv_inplace(sigmoid);
        Ok(act)
    }

    /// `p(h_j = 1 | x)` with the label summed out under `p(y | x)`. Used to
    /// project inputs into hidden space when the label is unknown.
    pub fn hidden_given_x_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_visible(x.ncols())?;
        let act = x.dot(&self.w.t()) + &self.c;
        let mut out = Array2::zeros(act.dim());
        for (i, row) in act.outer_iter().enumerate() {
            let mut post = self.scores_from_activation(row);
            softmax_in_place(post.as_slice_mut().expect("contiguous"));
            let mut acc = out.row_mut(i);
            for (y, &p) in post.iter().enumerate() {
                Zip::from(&mut acc)
                    .and(&row)
                    .and(self.u.column(y))
                    .for_each(|o, &a, &u| *o += p * sigmoid(a + u));
            }
        }
        Ok(out)
    }

    /// Visible means `σ(b + Wᵀh)`.
    pub fn visible_given_h(&self, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_hidden(h.len())?;
        let mut v = self.w.t().dot(&h) + &self.b;
        v.mapv_inplace(sigmoid);
        Ok(v)
    }

    /// Label distribution `softmax(d + Uᵀh)`.
    pub fn label_given_h(&self, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_hidden(h.len())?;
        let mut v = self.u.t().dot(&h) + &self.d_bias;
        softmax_in_place(v.as_slice_mut().expect("contiguous"));
        Ok(v)
    }

    /// `Θ ← Θ + η·grad` on every block.
    pub fn apply_gradient(&mut self, grad: &GradientSet, eta: f64) -> Result<()> {
        if !grad.u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gradient block U".into()));
        }
        self.apply_non_label(grad, eta)?;
        self.u.scaled_add(eta, &grad.u);
        Ok(())
    }

    /// `Θ ← Θ + η·grad` on W, b, c and d; U is left untouched.
    pub fn apply_non_label(&mut self, grad: &GradientSet, eta: f64) -> Result<()> {
        grad.check_shapes(self)?;
        grad.check_finite_non_label()?;
        self.w.scaled_add(eta, &grad.w);
        self.b.scaled_add(eta, &grad.b);
        self.c.scaled_add(eta, &grad.c);
        self.d_bias.scaled_add(eta, &grad.d_bias);
        Ok(())
    }
}

impl GradientSet {
    pub fn zeros_like(p: &RbmParams) -> Self {
        Self {
            w: Array2::zeros(p.w.dim()),
            b: Array1::zeros(p.b.len()),
            c: Array1::zeros(p.c.len()),
            d_bias: Array1::zeros(p.d_bias.len()),
            u: Array2::zeros(p.u.dim()),
        }
    }

    pub fn check_shapes(&self, p: &RbmParams) -> Result<()> {
        if self.w.dim() != p.w.dim()
            || self.b.len() != p.b.len()
            || self.c.len() != p.c.len()
            || self.d_bias.len() != p.d_bias.len()
            || self.u.dim() != p.u.dim()
        {
            return Err(Error::Shape("gradient blocks do not match parameters".into()));
        }
        Ok(())
    }

    fn check_finite_non_label(&self) -> Result<()> {
        for (name, ok) in [
            ("W", self.w.iter().all(|v| v.is_finite())),
            ("b", self.b.iter().all(|v| v.is_finite())),
            ("c", self.c.iter().all(|v| v.is_finite())),
            ("d", self.d_bias.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite(format!("gradient block {name}")));
            }
        }
        Ok(())
    }

    /// Blocks by name, in the order W, b, c, d, U, flattened row-major.
    pub fn blocks(&self) -> [(&'static str, Vec<f64>); 5] {
        [
            ("W", self.w.iter().copied().collect()),
            ("b", self.b.to_vec()),
            ("c", self.c.to_vec()),
            ("d", self.d_bias.to_vec()),
            ("U", self.u.iter().copied().collect()),
        ]
    }

    /// Euclidean norm over all blocks together.
    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, v)| v.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.w *= s;
        self.b *= s;
        self.c *= s;
        self.d_bias *= s;
        self.u *= s;
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        self.w += &other.w;
        self.b += &other.b;
        self.c += &other.c;
        self.d_bias += &other.d_bias;
        self.u += &other.u;
    }
}

/// CD-1 gradient of the joint log-likelihood over a mini-batch.
///
/// Positive phase: hidden means with `(x, y)` clamped. Negative phase: one
/// sample `h ~ p(h | x, y)`, visible means and label distribution
/// reconstructed from it, then hidden means recomputed from the
/// reconstruction. Gradients are batch averages of data minus model terms.
pub fn cd1_step<R: Rng + ?Sized>(
    params: &RbmParams,
    x: ArrayView2<f64>,
    y: &[usize],
    rng: &mut R,
) -> Result<CdOutput> {
    let batch = x.nrows();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if y.len() != batch {
        return Err(Error::Shape(format!("{} labels for {batch} examples", y.len())));
    }
    params.check_visible(x.ncols())?;
    let k = params.num_classes();
    for &label in y {
        params.check_class(label)?;
    }

    // positive phase
    let mut h0 = x.dot(&params.w.t()) + &params.c;
    for (mut row, &label) in h0.outer_iter_mut().zip(y) {
        row += &params.u.column(label);
    }
    h0.mapv_inplace(sigmoid);

    let h_sample = h0.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 });

    // negative phase
    let mut x_recon = h_sample.dot(&params.w) + &params.b;
    x_recon.mapv_inplace(sigmoid);
    let mut y_recon = h_sample.dot(&params.u) + &params.d_bias;
    for mut row in y_recon.outer_iter_mut() {
        softmax_in_place(row.as_slice_mut().expect("contiguous"));
    }
    let mut h1 = x_recon.dot(&params.w.t()) + y_recon.dot(&params.u.t()) + &params.c;
    h1.mapv_inplace(sigmoid);

    let scale = 1.0 / batch as f64;
    let mut w = h0.t().dot(&x);
    w -= &h1.t().dot(&x_recon);
    w *= scale;

    let mut u = Array2::zeros((params.num_hidden(), k));
    for (row, &label) in h0.outer_iter().zip(y) {
        let mut col = u.column_mut(label);
        col += &row;
    }
    u -= &h1.t().dot(&y_recon);
    u *= scale;

    let mut d_bias = Array1::zeros(k);
    for &label in y {
        d_bias[label] += 1.0;
    }
    d_bias -= &y_recon.sum_axis(Axis(0));
    d_bias *= scale;

    let b = (&x - &x_recon).sum_axis(Axis(0)) * scale;
    let c = (&h0 - &h1).sum_axis(Axis(0)) * scale;

    let recon_error = Zip::from(&x)
        .and(&x_recon)
        .fold(0.0, |acc, &a, &r| acc + (a - r) * (a - r))
        * scale;

    Ok(CdOutput {
        grad: GradientSet { w, b, c, d_bias, u },
        recon_error,
    })
}

/// CD-1 gradient over a list of examples.
pub fn cd1_gradient<R: Rng + ?Sized>(
    params: &RbmParams,
    batch: &[LabeledExample],
    rng: &mut R,
) -> Result<GradientSet> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = batch[0].x.len();
    let mut x = Array2::zeros((batch.len(), d));
    for (i, ex) in batch.iter().enumerate() {
        if ex.x.len() != d {
            return Err(Error::Shape("ragged batch".into()));
        }
        x.slice_mut(s![i, ..]).assign(&ex.x);
    }
    let y: Vec<usize> = batch.iter().map(|e| e.y).collect();
    Ok(cd1_step(params, x.view(), &y, rng)?.grad)
}
