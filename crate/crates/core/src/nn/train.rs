use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::network::{backward_cached, forward_cached, DropoutMasks};
use super::{ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::rng;
use crate::types::{FrameFeatures, WeakLabels};

/// One weakly-labeled training example.
#[derive(Debug, Clone, Copy)]
pub struct TrainingBag<'a> {
    pub features: &'a FrameFeatures,
    pub labels: &'a WeakLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
}

impl EarlyStopping {
    /// Patience 15 epochs, minimum improvement 1e-4.
    pub fn fsl_default() -> Self {
        Self {
            patience: 15,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "TrainConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub early_stopping: Option<EarlyStopping>,
}

impl TrainConfig {
    fn default_batch() -> usize {
        8
    }

    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: Self::default_batch(),
            adam: AdamConfig::default(),
            early_stopping: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss per completed epoch (dropout active).
    pub loss_trace: Vec<f64>,
    /// Mean validation loss per epoch, when a validation set was given.
    pub validation_trace: Vec<f64>,
    /// Epoch index (0-based) at which early stopping fired.
    pub stopped_at: Option<usize>,
}

/// Mean loss over `bags` with dropout disabled.
pub fn mean_loss(params: &ModelParams, bags: &[TrainingBag<'_>], loss: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for bag in bags {
        let cache = forward_cached(params, bag.features, &DropoutMasks::none())?;
        total += losses::evaluate(loss, cache.score_matrix(), bag.labels)?.value;
    }
    Ok(total / bags.len().max(1) as f64)
}

/// Mini-batch Adam training. Gradients are averaged over each batch; the
/// bag order is reshuffled every epoch and dropout masks are drawn fresh for
/// every forward pass. Fully determined by `seed`.
pub fn train(
    spec: ModelSpec,
    data: &[TrainingBag<'_>],
    validation: Option<&[TrainingBag<'_>]>,
    loss: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    loss.validate()?;
    for bag in data {
        if bag.labels.len() != spec.classes {
            return Err(Error::Data(format!(
                "bag has {} labels, model has {} classes",
                bag.labels.len(),
                spec.classes
            )));
        }
    }

    let mut params = ModelParams::init(spec, rng::derive(seed, &[0]))?;
    let mut adam = AdamState::new(params.num_params());
    let mut shuffle_rng = rng::stream(seed, &[1]);
    let mut dropout_rng = rng::stream(seed, &[2]);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut validation_trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_at = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; params.num_params()];
            for &i in batch {
                let bag = data[i];
                let masks =
                    DropoutMasks::sample(params.spec(), bag.features.frames(), &mut dropout_rng);
                let cache = forward_cached(&params, bag.features, &masks)?;
                let l = losses::evaluate(loss, cache.score_matrix(), bag.labels)?;
                if !l.value.is_finite() {
                    return Err(Error::numeric(format!("epoch {epoch}"), "loss diverged"));
                }
                epoch_loss += l.value;
                let g = backward_cached(&params, &cache, &l.grad)
                    .map_err(|e| Error::numeric(format!("epoch {epoch}"), e.to_string()))?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grad {
                *g *= scale;
            }
            adam_step(params.values_mut(), &grad, &mut adam, &cfg.adam)
                .map_err(|e| Error::numeric(format!("epoch {epoch}"), e.to_string()))?;
        }
        let epoch_loss = epoch_loss / data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::numeric(format!("epoch {epoch}"), "loss diverged"));
        }
        loss_trace.push(epoch_loss);

        let monitored = match validation {
            Some(v) if !v.is_empty() => {
                let vl = mean_loss(&params, v, loss)?;
                validation_trace.push(vl);
                vl
            }
            _ => epoch_loss,
        };
        if let Some(es) = cfg.early_stopping {
            if monitored < best - es.min_delta {
                best = monitored;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= es.patience {
                    stopped_at = Some(epoch);
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        params,
        loss_trace,
        validation_trace,
        stopped_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossVariant;
    use crate::matrix::Matrix;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> ModelSpec {
        ModelSpec {
            input_dim: 3,
            dense_widths: vec![6],
            activation: Activation::Glu,
            recurrent_width: 4,
            bidirectional: true,
            classes: 2,
            recurrent_dropout: 0.1,
            output_dropout: 0.1,
        }
    }

    fn bag(seed: u64) -> (FrameFeatures, WeakLabels) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        (
            FrameFeatures::new(Matrix::from_vec(10, 3, data).unwrap(), 0.1).unwrap(),
            WeakLabels::from_slice(&[1, 0]).unwrap(),
        )
    }

    #[test]
    fn zero_epochs_rejected() {
        let (f, y) = bag(0);
        let data = [TrainingBag {
            features: &f,
            labels: &y,
        }];
        let cfg = TrainConfig::new(0);
        let err = train(
            spec(),
            &data,
            None,
            &LossConfig::new(LossVariant::MilMax),
            &cfg,
            1,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = TrainConfig::new(3);
        let err = train(
            spec(),
            &[],
            None,
            &LossConfig::new(LossVariant::MilMax),
            &cfg,
            1,
        );
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn single_bag_overfits() {
        let (f, y) = bag(3);
        let data = [TrainingBag {
            features: &f,
            labels: &y,
        }];
        let loss = LossConfig::new(LossVariant::MilMax);
        let out = train(spec(), &data, None, &loss, &TrainConfig::new(50), 4).unwrap();
        assert_eq!(out.loss_trace.len(), 50);
        let initial = ModelParams::init(spec(), rng::derive(4, &[0])).unwrap();
        let before = mean_loss(&initial, &data, &loss).unwrap();
        let after = mean_loss(&out.params, &data, &loss).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0]);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let bags: Vec<_> = (0..5).map(bag).collect();
        let data: Vec<_> = bags
            .iter()
            .map(|(f, y)| TrainingBag {
                features: f,
                labels: y,
            })
            .collect();
        let loss = LossConfig::new(LossVariant::MilMaxCos).with_alpha(0.1);
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::new(4)
        };
        let a = train(spec(), &data, None, &loss, &cfg, 9).unwrap();
        let b = train(spec(), &data, None, &loss, &cfg, 9).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn early_stopping_truncates_trace() {
        let (f, y) = bag(3);
        let data = [TrainingBag {
            features: &f,
            labels: &y,
        }];
        let cfg = TrainConfig {
            early_stopping: Some(EarlyStopping {
                patience: 2,
                min_delta: 1e3,
            }),
            ..TrainConfig::new(20)
        };
        let out = train(
            spec(),
            &data,
            None,
            &LossConfig::new(LossVariant::Fsl),
            &cfg,
            1,
        )
        .unwrap();
        // the first epoch always improves on +inf, then two stale epochs
        assert_eq!(out.stopped_at, Some(2));
        assert_eq!(out.loss_trace.len(), 3);
    }
}
