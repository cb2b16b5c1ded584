//! Mini-batch CD-1 training loop shared by the flat and hierarchical models.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hier::{Penalty, PenaltyMode};
use crate::rbm::{cd1_step, RbmParams};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub penalty_weight: f64,
    pub penalty_mode: PenaltyMode,
    pub paper_partial_grad: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            learning_rate: 0.1,
            penalty_weight: 0.1,
            penalty_mode: PenaltyMode::Abs,
            paper_partial_grad: false,
            epochs: 100,
            batch_size: 100,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden unit count must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::Config("penalty weight must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn penalty(&self) -> Penalty {
        Penalty {
            weight: self.penalty_weight,
            mode: self.penalty_mode,
            partial_grad: self.paper_partial_grad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon_error: f64,
    pub penalty: f64,
    pub train_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub test_error: Option<f64>,
    pub seconds: f64,
}

/// How the label weights `U` are parameterized and updated.
pub trait LabelLayer {
    fn init_u(&self, num_hidden: usize) -> Array2<f64>;
    fn update(&mut self, params: &mut RbmParams, grad_u: &Array2<f64>, eta: f64) -> Result<()>;
    fn penalty(&self) -> f64;
}

/// `U` is a free parameter updated directly from its CD gradient.
#[derive(Debug, Clone)]
pub struct FlatLabels {
    num_classes: usize,
}

impl LabelLayer for FlatLabels {
    fn init_u(&self, num_hidden: usize) -> Array2<f64> {
        Array2::zeros((num_hidden, self.num_classes))
    }

    fn update(&mut self, params: &mut RbmParams, grad_u: &Array2<f64>, eta: f64) -> Result<()> {
        if grad_u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient block U".into()));
        }
        params.u.scaled_add(eta, grad_u);
        Ok(())
    }

    fn penalty(&self) -> f64 {
        0.0
    }
}

/// Fraction of rows whose predicted class differs from the label.
pub fn error_rate(params: &RbmParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = params.predict_batch(data.features())?;
    let wrong = pred.iter().zip(data.labels()).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / data.len() as f64)
}

/// Epoch-at-a-time CD-1 trainer.
///
/// Every epoch shuffles the example order with the run's RNG, then for each
/// mini-batch: computes the CD-1 gradient, updates `W, b, c, d` directly and
/// hands the `U` gradient to the label layer.
pub struct RbmTrainer<'a, L> {
    data: &'a Dataset,
    config: TrainConfig,
    params: RbmParams,
    labels: L,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
    metrics: RunMetrics,
}

pub type FlatTrainer<'a> = RbmTrainer<'a, FlatLabels>;

impl<'a> FlatTrainer<'a> {
    pub fn flat(data: &'a Dataset, num_classes: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if let Some(&label) = data.labels().iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Self::with_label_layer(data, num_classes, config, |_| FlatLabels { num_classes })
    }
}

impl<'a, L: LabelLayer> RbmTrainer<'a, L> {
    /// Initializes `W` from the run's seed, then lets `make_labels` draw
    /// from the same stream.
    pub fn with_label_layer(
        data: &'a Dataset,
        num_classes: usize,
        config: &TrainConfig,
        make_labels: impl FnOnce(&mut ChaCha8Rng) -> L,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = RbmParams::init(config.hidden, data.dim(), num_classes, &mut rng);
        let labels = make_labels(&mut rng);
        params.u = labels.init_u(config.hidden);
        Ok(Self {
            data,
            config: config.clone(),
            params,
            labels,
            rng,
            order: (0..data.len()).collect(),
            epoch: 0,
            metrics: RunMetrics::default(),
        })
    }

    pub fn params(&self) -> &RbmParams {
        &self.params
    }

    pub fn label_layer(&self) -> &L {
        &self.labels
    }

    pub fn into_params(self) -> RbmParams {
        self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over the data.
    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        self.order.shuffle(&mut self.rng);
        let d = self.data.dim();
        let eta = self.config.learning_rate;
        let mut recon_total = 0.0;
        for chunk in self.order.chunks(self.config.batch_size) {
            let mut x = Array2::zeros((chunk.len(), d));
            let mut y = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).assign(&self.data.row(i));
                y.push(self.data.labels()[i]);
            }
            let out = cd1_step(&self.params, x.view(), &y, &mut self.rng)?;
            recon_total += out.recon_error * chunk.len() as f64;
            self.params.apply_non_label(&out.grad, eta)?;
            self.labels.update(&mut self.params, &out.grad.u, eta)?;
            self.params.check_finite().map_err(|e| {
                Error::NonFinite(format!("{e} during epoch {}", self.epoch + 1))
            })?;
        }
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch,
            recon_error: recon_total / self.data.len() as f64,
            penalty: self.labels.penalty(),
            train_error: error_rate(&self.params, self.data)?,
        };
        log::debug!(
            "epoch {} recon {:.4} penalty {:.4e} train error {:.4}",
            record.epoch,
            record.recon_error,
            record.penalty,
            record.train_error
        );
        self.metrics.epochs.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs up to the configured count.
    pub fn run(&mut self) -> Result<RunMetrics> {
        let start = Instant::now();
        while self.epoch < self.config.epochs {
            self.step_epoch()?;
        }
        self.metrics.seconds += start.elapsed().as_secs_f64();
        Ok(self.metrics.clone())
    }
}

/// Trains a classification RBM with unconstrained label weights.
pub fn train_flat_rbm(data: &Dataset, num_classes: usize, config: &TrainConfig) -> Result<(RbmParams, RunMetrics)> {
    let mut trainer = FlatTrainer::flat(data, num_classes, config)?;
    let metrics = trainer.run()?;
    Ok((trainer.into_params(), metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { hidden: 0, ..ok.clone() },
            TrainConfig { learning_rate: 0.0, ..ok.clone() },
            TrainConfig { penalty_weight: -1.0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
