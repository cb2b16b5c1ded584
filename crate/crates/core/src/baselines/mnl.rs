//! Multinomial logit and the path-sum ("correlated") multinomial logit.
//!
//! Both maximize the mean conditional log-likelihood by mini-batch gradient
//! ascent from zero. The correlated variant builds each class coefficient
//! vector as the sum of per-edge vectors along its taxonomy path, using the
//! same composition as the hierarchical RBM with the penalty switched off.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hier::{EdgeParams, Penalty};
use crate::math::{argmax, softmax_in_place};
use crate::taxonomy::TaxonomyTree;
use crate::train::{EpochRecord, RunMetrics, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLogit {
    /// `d × K`.
    pub coef: Array2<f64>,
    pub bias: Array1<f64>,
    /// Present for the path-sum variant; `coef` is then always its
    /// composition.
    pub edges: Option<EdgeParams>,
}

impl LinearLogit {
    pub fn zeros(d: usize, k: usize) -> Self {
        Self {
            coef: Array2::zeros((d, k)),
            bias: Array1::zeros(k),
            edges: None,
        }
    }

    pub fn with_tree(d: usize, tree: &TaxonomyTree) -> Self {
        let edges = EdgeParams::zeros(tree, d, Penalty::none());
        Self {
            coef: edges.compose(),
            bias: Array1::zeros(tree.num_classes()),
            edges: Some(edges),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.coef.nrows()
    }

    /// Row `i` holds `p(y | x_i)`.
    pub fn posterior_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        let mut logits = x.dot(&self.coef) + &self.bias;
        for mut row in logits.outer_iter_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous"));
        }
        Ok(logits)
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let post = self.posterior_batch(x)?;
        Ok(post
            .outer_iter()
            .map(|r| argmax(r.as_slice().expect("contiguous")))
            .collect())
    }

    /// Mean `log p(y_i | x_i)`.
    pub fn mean_loglik(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
        let post = self.posterior_batch(x)?;
        Ok(y.iter()
            .enumerate()
            .map(|(i, &label)| post[[i, label]].ln())
            .sum::<f64>()
            / y.len() as f64)
    }

    /// Gradient of [`Self::mean_loglik`] with respect to `coef` and `bias`.
    pub fn loglik_gradient(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<(Array2<f64>, Array1<f64>)> {
        let mut residual = -self.posterior_batch(x)?;
        for (i, &label) in y.iter().enumerate() {
            residual[[i, label]] += 1.0;
        }
        let scale = 1.0 / y.len() as f64;
        Ok((x.t().dot(&residual) * scale, residual.sum_axis(Axis(0)) * scale))
    }

    /// Gradient with respect to the edge vectors of the path-sum variant.
    pub fn edge_gradient(&self, grad_coef: &Array2<f64>) -> Result<Array2<f64>> {
        let edges = self
            .edges
            .as_ref()
            .ok_or_else(|| Error::Config("model has no edge parameters".into()))?;
        edges.route(grad_coef.view())
    }

    fn ascend(&mut self, grad_coef: &Array2<f64>, grad_bias: &Array1<f64>, eta: f64) -> Result<()> {
        if grad_coef.iter().chain(grad_bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logit gradient".into()));
        }
        match self.edges.as_mut() {
            Some(edges) => {
                let step = edges.route(grad_coef.view())?;
                edges.ascend(&step, eta)?;
                self.coef = edges.compose();
            }
            None => self.coef.scaled_add(eta, grad_coef),
        }
        self.bias.scaled_add(eta, grad_bias);
        Ok(())
    }

    pub fn error_rate(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict_batch(data.features())?;
        let wrong = pred.iter().zip(data.labels()).filter(|(p, y)| p != y).count();
        Ok(wrong as f64 / data.len() as f64)
    }
}

/// Epoch-at-a-time trainer shared by both variants.
pub struct LogitTrainer<'a> {
    data: &'a Dataset,
    config: TrainConfig,
    model: LinearLogit,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl<'a> LogitTrainer<'a> {
    pub fn new(data: &'a Dataset, model: LinearLogit, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&label) = data.labels().iter().find(|&&y| y >= model.num_classes()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: model.num_classes(),
            });
        }
        Ok(Self {
            data,
            config: config.clone(),
            model,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: (0..data.len()).collect(),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &LinearLogit {
        &self.model
    }

    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        self.order.shuffle(&mut self.rng);
        let d = self.data.dim();
        for chunk in self.order.chunks(self.config.batch_size) {
            let mut x = Array2::zeros((chunk.len(), d));
            let mut y = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).assign(&self.data.row(i));
                y.push(self.data.labels()[i]);
            }
            let (gc, gb) = self.model.loglik_gradient(x.view(), &y)?;
            self.model.ascend(&gc, &gb, self.config.learning_rate)?;
        }
        self.epoch += 1;
        Ok(EpochRecord {
            epoch: self.epoch,
            recon_error: 0.0,
            penalty: 0.0,
            train_error: self.model.error_rate(self.data)?,
        })
    }

    pub fn run(mut self) -> Result<(LinearLogit, RunMetrics)> {
        let start = std::time::Instant::now();
        let mut metrics = RunMetrics::default();
        while self.epoch < self.config.epochs {
            metrics.epochs.push(self.step_epoch()?);
        }
        metrics.seconds = start.elapsed().as_secs_f64();
        Ok((self.model, metrics))
    }
}

pub fn train_mnl(data: &Dataset, num_classes: usize, config: &TrainConfig) -> Result<(LinearLogit, RunMetrics)> {
    LogitTrainer::new(data, LinearLogit::zeros(data.dim(), num_classes), config)?.run()
}

pub fn train_corrmnl(data: &Dataset, tree: &TaxonomyTree, config: &TrainConfig) -> Result<(LinearLogit, RunMetrics)> {
    LogitTrainer::new(data, LinearLogit::with_tree(data.dim(), tree), config)?.run()
}
