use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Graph, Mode};
use crate::sample::ShadowTriplet;
use crate::tensor::Tensor;

use super::adam::{AdamConfig, AdamState};
use super::augment::AugmentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam(AdamConfig),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(AdamConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub input_side: usize,
    pub augment: AugmentConfig,
    /// Share of the corpus held out for validation (rounded down).
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            learning_rate: 1e-4,
            optimizer: Optimizer::default(),
            batch_size: 4,
            input_side: 256,
            augment: AugmentConfig::default(),
            validation_fraction: 0.1,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.input_side == 0 {
            return Err(Error::config("input side must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config(format!(
                "validation fraction {} must lie in [0, 1)",
                self.validation_fraction
            )));
        }
        let Optimizer::Adam(a) = self.optimizer;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::config("Adam needs beta1, beta2 in [0, 1) and epsilon > 0"));
        }
        self.augment.validate()
    }
}

/// Stacked network inputs and targets, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub masks: Tensor,
    pub targets: Tensor,
}

impl Batch {
    pub fn from_triplets(items: &[ShadowTriplet]) -> Result<Batch> {
        if items.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let stack = |f: &dyn Fn(&ShadowTriplet) -> Tensor| Tensor::stack(&items.iter().map(f).collect::<Vec<_>>());
        Ok(Batch {
            images: stack(&|t| Tensor::from_rgb(&t.shadow))?,
            masks: stack(&|t| t.mask.to_tensor())?,
            targets: stack(&|t| Tensor::from_rgb(&t.shadow_free))?,
        })
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_finite(&self) -> Result<()> {
        for n in 0..self.len() {
            for (what, t) in [
                ("input", &self.images),
                ("target", &self.targets),
                ("mask", &self.masks),
            ] {
                if let Some(v) = t.sample(n).iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        sample: n,
                        detail: format!("{what} contains {v}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One optimization step on the mean L1 loss of `batch`.
///
/// Returns the loss before the update. Normalization running statistics are
/// updated from the batch.
pub fn train_step(model: &mut Model, batch: &Batch, state: &mut AdamState, config: &TrainConfig) -> Result<f64> {
    if model.mode() != Mode::Train {
        return Err(Error::config("train_step needs the model in train mode"));
    }
    batch.check_finite()?;
    let mut g = Graph::new();
    let x = g.input(batch.images.clone());
    let pred = model.record(&mut g, x, Some(&batch.masks))?;
    if let Some(n) = (0..batch.len()).find(|&n| g.value(pred).sample(n).iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteLoss {
            sample: n,
            detail: "prediction is not finite".into(),
        });
    }
    let target = g.input(batch.targets.clone());
    let loss_var = g.l1_loss(pred, target)?;
    let loss = g.value(loss_var).data()[0];
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            sample: 0,
            detail: format!("batch loss is {loss}"),
        });
    }
    let grads = g.backward(loss_var, model.params());
    model.absorb_statistics(&g);
    let Optimizer::Adam(adam) = config.optimizer;
    state.update(model.params_mut(), &grads, config.learning_rate, &adam)?;
    if !model.params().all_finite() {
        return Err(Error::NonFiniteLoss {
            sample: 0,
            detail: "parameters became non-finite after the update".into(),
        });
    }
    Ok(loss)
}
