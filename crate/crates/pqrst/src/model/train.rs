//! Mini-batch training with seeded shuffling and optional augmentation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{augment, featurize, preprocess_record, AugmentConfig, StftConfig};
use crate::error::{Error, Result};
use crate::grid_codec::{encode_targets, GridConfig, TargetGrid};
use crate::loss::{grid_loss, grid_loss_grad};
use crate::model::{net, ModelParams};
use crate::signal_io::{AnnotationSet, EcgRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 60,
            seed: 0,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be positive"));
        }
        Ok(())
    }
}

/// One labeled training record. `class_mask` lets pseudolabeled records
/// exclude unselected classes from the loss.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub record: EcgRecord,
    pub annotations: AnnotationSet,
    pub class_mask: [bool; 3],
}

impl TrainSample {
    pub fn labeled(record: EcgRecord, annotations: AnnotationSet) -> Self {
        TrainSample {
            record,
            annotations,
            class_mask: [true; 3],
        }
    }
}

/// Shared preprocessing/encoding configuration for a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub grid: &'a GridConfig,
    pub stft: &'a StftConfig,
    pub augment: &'a AugmentConfig,
    pub sample_rate_hz: u32,
}

enum Optimizer {
    Sgd {
        velocity: Vec<f64>,
        momentum: f64,
    },
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Optimizer {
        match kind {
            OptimizerKind::SgdMomentum => Optimizer::Sgd {
                velocity: vec![0.0; n],
                momentum: 0.9,
            },
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }

    fn step(&mut self, lr: f64, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { velocity, momentum } => {
                for ((p, v), &g) in params.iter_mut().zip(velocity).zip(grad) {
                    *v = *momentum * *v - lr * g;
                    *p += *v;
                }
            }
            Optimizer::Adam {
                m,
                v,
                t,
                beta1,
                beta2,
                eps,
            } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    params[i] -= lr * mhat / (vhat.sqrt() + *eps);
                }
            }
        }
    }
}

/// Prepares one record for the network: augmentation (optional),
/// resampling, z-scoring, then the mel frontend.
fn features_for(
    sample: &TrainSample,
    ctx: &TrainContext,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<net::Tensor> {
    let record = match rng {
        Some(rng) => augment(&sample.record, ctx.augment, rng)?,
        None => sample.record.clone(),
    };
    let record = preprocess_record(&record, ctx.sample_rate_hz)?;
    if record.n_samples() != ctx.grid.record_len {
        return Err(Error::config(format!(
            "record {} has {} samples at {} Hz; the grid expects {}",
            record.id,
            record.n_samples(),
            ctx.sample_rate_hz,
            ctx.grid.record_len
        )));
    }
    let features = featurize(&record, ctx.stft)?;
    Ok(net::Tensor {
        c: features.n_leads,
        h: features.n_mel,
        w: features.n_frames,
        data: features.data,
    })
}

/// Trains `params` on the dataset. Deterministic for a fixed
/// `TrainConfig::seed`: data order, augmentation draws, and summation
/// order are all derived from it.
///
/// Returns the trained parameters and the per-epoch mean training loss.
pub fn train(
    params: &ModelParams,
    dataset: &[TrainSample],
    train_config: &TrainConfig,
    ctx: &TrainContext,
) -> Result<(ModelParams, Vec<f64>)> {
    train_config.validate()?;
    ctx.grid.validate()?;
    params.config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let expected_frames = ctx.grid.record_len.div_ceil(ctx.stft.hop);
    if expected_frames != params.config.n_frames
        || ctx.grid.n_intervals != params.config.n_intervals
        || ctx.stft.n_mel != params.config.n_mel
    {
        return Err(Error::config(format!(
            "model expects {} frames x {} mel over {} intervals; pipeline provides {} x {} over {}",
            params.config.n_frames,
            params.config.n_mel,
            params.config.n_intervals,
            expected_frames,
            ctx.stft.n_mel,
            ctx.grid.n_intervals
        )));
    }

    let targets: Vec<TargetGrid> = dataset
        .iter()
        .map(|s| Ok(encode_targets(&s.annotations, ctx.grid)?.masked(s.class_mask)))
        .collect::<Result<_>>()?;

    // Without augmentation the features are fixed; compute them once.
    let cached: Option<Vec<net::Tensor>> = if train_config.augment {
        None
    } else {
        Some(
            dataset
                .iter()
                .map(|s| features_for(s, ctx, None))
                .collect::<Result<_>>()?,
        )
    };

    let mut params = params.clone();
    let mut optimizer = Optimizer::new(train_config.optimizer, params.data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..train_config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(train_config.batch_size) {
            let mut batch_grad = vec![0.0; params.data.len()];
            let mut batch_loss_sum = 0.0;
            for &idx in batch {
                let features = match &cached {
                    Some(f) => f[idx].clone(),
                    None => features_for(&dataset[idx], ctx, Some(&mut rng))?,
                };
                let (pred, cache) = net::forward_full(&params, &features);
                let (loss, _) = grid_loss(&pred, &targets[idx])?;
                batch_loss_sum += loss;
                let cell_grads = grid_loss_grad(&pred, &targets[idx])?;
                let grad = net::backward(&params, &cache, &cell_grads);
                for (acc, g) in batch_grad.iter_mut().zip(&grad) {
                    *acc += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let batch_loss = batch_loss_sum * scale;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            for g in batch_grad.iter_mut() {
                *g *= scale;
            }
            optimizer.step(train_config.learning_rate, &mut params.data, &batch_grad);
            epoch_loss_sum += batch_loss_sum;
        }
        history.push(epoch_loss_sum / dataset.len() as f64);
    }

    Ok((params, history))
}
