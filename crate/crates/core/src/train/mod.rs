//! Mini-batch training with Adam on binary cross-entropy, plus checkpoints.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Scalar, Tape};
use crate::dataset::{ContentType, EncodedExamples};
use crate::features::Encoder;
use crate::metrics::auc;
use crate::models::{CtrNet, ModelConfig, ModelError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation-loss improvement. Off when unset.
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 256, learning_rate: 0.001, seed: 42, early_stopping_patience: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite parameters after epoch {epoch}")]
    NonFiniteParams { epoch: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch (training mode).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Mean binary cross-entropy of probabilities, clamped away from 0 and 1.
pub fn log_loss(probs: &[f64], labels: &[f32]) -> f64 {
    const EPS: f64 = 1e-12;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            if y > 0.5 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains one model. Deterministic in (`cfg.seed`, data, configs).
pub fn train(
    model: ModelConfig,
    encoder: &Encoder,
    content_type: ContentType,
    train_set: &EncodedExamples,
    val_set: &EncodedExamples,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let net = CtrNet::new(model, encoder.schema())?;
    let mut params = net.init_params::<f32, _>(&mut rng_stream(cfg.seed, 0));
    let mut shuffle_rng = rng_stream(cfg.seed, 1);
    let mut dropout_rng = rng_stream(cfg.seed, 2);
    let adam = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let mut opt = AdamState::new(&params, adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.gather(rows);
            let mut tape = Tape::<f32>::new();
            let logits = net.forward(&params, &mut tape, &batch.as_batch(), Some(&mut dropout_rng));
            let loss = tape.bce_with_logits(logits, &batch.labels);
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += value * rows.len() as f64;
            let grads = tape.gradients(loss)?;
            opt.step(&mut params, &grads)?;
        }
        if !params.iter().all(|(_, _, t)| t.is_finite()) {
            return Err(TrainError::NonFiniteParams { epoch });
        }
        let (val_loss, val_auc) = if val_set.is_empty() {
            (None, None)
        } else {
            let probs = net.predict(&params, &val_set.as_batch(), 2048);
            let labels: Vec<f64> = val_set.labels.iter().map(|&y| f64::from(y)).collect();
            (Some(log_loss(&probs, &val_set.labels)), auc(&probs, &labels).ok())
        };
        let m = EpochMetrics { epoch, train_loss: loss_sum / train_set.len() as f64, val_loss, val_auc };
        log::info!(
            "{} {content_type} epoch {epoch}: train_loss {:.5} val_loss {} val_auc {}",
            net.config().architecture,
            m.train_loss,
            fmt_opt(m.val_loss),
            fmt_opt(m.val_auc)
        );
        metrics.push(m);
        if let (Some(patience), Some(v)) = (cfg.early_stopping_patience, val_loss) {
            if v < best.0 {
                best = (v, epoch);
            } else if epoch - best.1 >= patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let checkpoint = Checkpoint::new(net, params, encoder.clone(), content_type)?;
    Ok(TrainOutcome { checkpoint, metrics })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.5}")).unwrap_or_else(|| "-".into())
}

/// CSV with columns `epoch,train_loss,val_loss,val_auc`; undefined values are empty.
pub fn write_metrics_csv<W: Write>(writer: W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "val_loss", "val_auc"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
    for m in metrics {
        w.write_record([m.epoch.to_string(), format!("{:.8}", m.train_loss), opt(m.val_loss), opt(m.val_auc)])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_loss_of_half_is_ln2() {
        assert!((log_loss(&[0.5, 0.5], &[1.0, 0.0]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_config() {
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let mut buf = Vec::new();
        let m = [EpochMetrics { epoch: 1, train_loss: 0.5, val_loss: Some(0.25), val_auc: None }];
        write_metrics_csv(&mut buf, &m).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss,val_auc\n1,0.50000000,0.25000000,\n");
    }
}
