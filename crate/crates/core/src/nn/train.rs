use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::io::{save_model, ModelIoError};
use super::metrics::evaluate;
use super::model::{cross_entropy, Gradients, Model};
use super::NnError;
use crate::dataset::Dataset;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("non-finite {what} at epoch {epoch}; training aborted, checkpoint left untouched")]
    NonFinite { epoch: usize, what: &'static str, report: Box<TrainReport> },
    #[error("checkpoint write failed: {0}")]
    Checkpoint(#[from] ModelIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives shuffling and dropout masks.
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 2000, batch_size: 32, seed: 42, adam: AdamConfig::default() }
    }
}

/// A feature matrix with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
}

impl LabeledData {
    pub fn new(features: Array2<f32>, labels: Vec<usize>) -> Result<Self, NnError> {
        if features.nrows() != labels.len() {
            return Err(NnError::LengthMismatch { expected: features.nrows(), actual: labels.len() });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl From<&Dataset> for LabeledData {
    fn from(ds: &Dataset) -> Self {
        Self { features: ds.feature_matrix(), labels: ds.label_indices() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub checkpointed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_test_accuracy: f64,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// `epoch,train_loss,train_acc,test_loss,test_acc`, one row per epoch.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "train_acc", "test_loss", "test_acc"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.train_acc),
                format!("{:.6}", e.test_loss),
                format!("{:.6}", e.test_acc),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First and second moment estimates for every trainable tensor.
struct Adam {
    cfg: AdamConfig,
    m: Gradients<f32>,
    v: Gradients<f32>,
    step: i32,
}

impl Adam {
    fn new(model: &Model<f32>, cfg: AdamConfig) -> Self {
        Self { cfg, m: model.zero_gradients(), v: model.zero_gradients(), step: 0 }
    }

    fn update(&mut self, model: &mut Model<f32>, grads: &Gradients<f32>) {
        self.step += 1;
        let c = self.cfg;
        let lr_t = (c.learning_rate * (1.0 - c.beta2.powi(self.step)).sqrt() / (1.0 - c.beta1.powi(self.step))) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.epsilon as f32);
        let slots = model.params_mut().iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for ((p, g), (m, v)) in slots {
            let (Some(p), Some(g), Some(m), Some(v)) = (p, g, m, v) else { continue };
            let step = |w: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr_t * *m / (v.sqrt() + eps);
            };
            ndarray::Zip::from(&mut p.kernel).and(&g.kernel).and(&mut m.kernel).and(&mut v.kernel).for_each(
                |w, &g, m, v| step(w, g, m, v),
            );
            ndarray::Zip::from(&mut p.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias).for_each(
                |w, &g, m, v| step(w, g, m, v),
            );
        }
    }
}

/// Trains with shuffled mini-batches and evaluates on both sets after every
/// epoch. When `checkpoint` is given, the model is saved there each time test
/// accuracy strictly exceeds the best seen so far.
pub fn train(
    model: &mut Model<f32>,
    train_set: &LabeledData,
    test_set: &LabeledData,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    train_with_hook(model, train_set, test_set, cfg, checkpoint, |_, _| {})
}

/// [`train`], calling `on_epoch_start(epoch, model)` before each epoch.
pub fn train_with_hook(
    model: &mut Model<f32>,
    train_set: &LabeledData,
    test_set: &LabeledData,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    mut on_epoch_start: impl FnMut(usize, &mut Model<f32>),
) -> Result<TrainReport, TrainError> {
    if cfg.epochs == 0 {
        return Err(TrainError::InvalidConfig("epochs must be positive".into()));
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch size must be positive".into()));
    }
    if train_set.is_empty() || test_set.is_empty() {
        return Err(TrainError::InvalidConfig("training and test sets must be non-empty".into()));
    }
    for set in [train_set, test_set] {
        if set.features.ncols() != model.input_length() {
            return Err(NnError::LengthMismatch { expected: model.input_length(), actual: set.features.ncols() }.into());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model, cfg.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    let mut best = f64::NEG_INFINITY;

    for epoch in 1..=cfg.epochs {
        on_epoch_start(epoch, model);
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let x = train_set.features.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let pass = model.forward_train(x.view(), &mut rng)?;
            if !cross_entropy(pass.probabilities().view(), &y)?.is_finite() {
                return Err(non_finite(epoch, "batch loss", report));
            }
            let grads = pass.backward(model, &y)?;
            adam.update(model, &grads);
        }

        let tr = evaluate(model, train_set.features.view(), &train_set.labels)?;
        let te = evaluate(model, test_set.features.view(), &test_set.labels)?;
        let mut stats = EpochStats {
            epoch,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            test_loss: te.loss,
            test_acc: te.accuracy,
            checkpointed: false,
        };
        if !(tr.loss.is_finite() && te.loss.is_finite() && model.all_finite()) {
            report.epochs.push(stats);
            return Err(non_finite(epoch, "loss or weights", report));
        }
        if te.accuracy > best {
            best = te.accuracy;
            report.best_epoch = Some(epoch);
            report.best_test_accuracy = te.accuracy;
            if let Some(path) = checkpoint {
                model.metadata.insert("epoch".into(), epoch.into());
                model.metadata.insert("test_accuracy".into(), te.accuracy.into());
                save_model(model, path)?;
                stats.checkpointed = true;
            }
        }
        log::debug!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, test loss {:.4} acc {:.3}",
            tr.loss,
            tr.accuracy,
            te.loss,
            te.accuracy
        );
        report.epochs.push(stats);
    }
    Ok(report)
}

fn non_finite(epoch: usize, what: &'static str, report: TrainReport) -> TrainError {
    TrainError::NonFinite { epoch, what, report: Box::new(report) }
}
