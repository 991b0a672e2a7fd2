//! Adam training with a reduce-on-plateau learning rate and best-validation checkpointing.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use seploss::nn::Adam;
use seploss::regularized::{adversarial_step, AdvBatch, AdvConfig, Discriminator, DiscriminatorArch, Separator};
use seploss::spectral::lp_freq;
use seploss::time::Norm;
use seploss::LossKind;

use crate::data::Dataset;
use crate::model::MaskModel;
use crate::objective::{LossParams, Objective};
use crate::HarnessError;

/// Toy-model learning rates, tuned on the synthetic task.
pub fn default_learning_rate(kind: LossKind) -> f64 {
    match kind {
        LossKind::Adversarial => 1e-3,
        _ => 3e-3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// `None` picks [`default_learning_rate`].
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub patience_epochs: usize,
    pub decay_factor: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_params: LossParams,
    /// Required for the adversarial loss: the model has already been trained on a plain loss.
    pub pretrained: bool,
    pub discriminator_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::L2Freq,
            learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience_epochs: 80,
            decay_factor: 0.3,
            max_epochs: 40,
            batch_size: 4,
            seed: 0,
            loss_params: LossParams::default(),
            pretrained: false,
            discriminator_lr: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| default_learning_rate(self.loss))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.learning_rate() >= 0.0) {
            return bad("learning rate must be >= 0");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay factor must lie in (0, 1]");
        }
        if self.patience_epochs == 0 || self.batch_size == 0 {
            return bad("patience and batch size must be positive");
        }
        if self.loss == LossKind::Adversarial && !self.pretrained {
            return bad("the adversarial loss needs a pre-trained model (set `pretrained`)");
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `decay` once validation has not improved for `patience` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    patience: usize,
    decay: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, decay: f64, initial: f64) -> Self {
        Self {
            lr,
            patience,
            decay,
            best: initial,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's validation loss; true when it is a new best.
    pub fn observe(&mut self, val: f64) -> bool {
        if val < self.best {
            self.best = val;
            self.stale = 0;
            return true;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr *= self.decay;
            self.stale = 0;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[EpochRecord], writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in trace {
        w.serialize(r).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss (epoch 0 is the initial model).
    pub model: MaskModel,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n.max(1) as f64
}

/// Mean plain loss over a dataset. The adversarial loss is monitored through L2 on magnitudes.
fn dataset_loss(model: &MaskModel, data: &Dataset, objective: Option<&Objective>) -> Result<f64, HarnessError> {
    let mut values = Vec::with_capacity(data.len());
    for item in &data.items {
        let v = match objective {
            Some(obj) => obj.evaluate(item, &model.masks(&item.mix_mag)?.0)?.value,
            None => lp_freq(Norm::L2, &model.separate(&item.mix_mag)?.0, &item.target_mag)?.value,
        };
        values.push(v);
    }
    Ok(mean(values.into_iter()))
}

struct AdvState {
    discriminators: Vec<Discriminator>,
    optimizers: Vec<Adam>,
    config: AdvConfig,
}

pub fn train(
    mut model: MaskModel,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(HarnessError::Config("training and validation sets must be non-empty".into()));
    }
    let objective = match config.loss {
        LossKind::Adversarial => None,
        kind => Some(Objective::new(kind, train_set.stft, &config.loss_params)?),
    };
    let mut adv = (config.loss == LossKind::Adversarial).then(|| {
        let discriminators: Vec<Discriminator> = (0..model.sources() as u64)
            .map(|k| Discriminator::new(&DiscriminatorArch::default(), config.seed.wrapping_mul(31).wrapping_add(k)))
            .collect();
        let optimizers = discriminators
            .iter()
            .map(|d| Adam::with_betas(d.params.len(), config.beta1, config.beta2, config.adam_eps))
            .collect();
        AdvState {
            discriminators,
            optimizers,
            config: AdvConfig {
                gamma: config.loss_params.gamma,
                ..AdvConfig::default()
            },
        }
    });

    let mut opt = Adam::with_betas(model.params().len(), config.beta1, config.beta2, config.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let val0 = dataset_loss(&model, val_set, objective.as_ref())?;
    let mut trace = vec![EpochRecord {
        epoch: 0,
        train_loss: dataset_loss(&model, train_set, objective.as_ref())?,
        val_loss: val0,
        lr: config.learning_rate(),
    }];
    if !val0.is_finite() {
        return Err(HarnessError::Diverged { epoch: 0, trace });
    }
    let mut sched = PlateauScheduler::new(config.learning_rate(), config.patience_epochs, config.decay_factor, val0);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        match (&objective, adv.as_mut()) {
            (Some(obj), _) => {
                for batch in order.chunks(config.batch_size) {
                    let mut grad = vec![0.0; model.params().len()];
                    let mut loss = 0.0;
                    for &i in batch {
                        let item = &train_set.items[i];
                        let (masks, cache) = model.masks(&item.mix_mag)?;
                        let out = obj.evaluate(item, &masks)?;
                        loss += out.value;
                        let g = model.backward_masks(&cache, &out.gradient);
                        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                    let n = batch.len() as f64;
                    grad.iter_mut().for_each(|g| *g /= n);
                    opt.step(model.params_mut(), &grad, lr);
                    batch_losses.push(loss / n);
                    if model.params().iter().any(|p| !p.is_finite()) {
                        break;
                    }
                }
            }
            (None, Some(state)) => {
                for (j, &i) in order.iter().enumerate() {
                    let paired = &train_set.items[i];
                    let unpaired = &train_set.items[order[(j + 1) % order.len()]];
                    let batch = AdvBatch {
                        paired_mixture: paired.mix_mag.clone(),
                        unpaired_mixture: unpaired.mix_mag.clone(),
                        paired_targets: paired.target_mag.clone(),
                        unpaired_targets: unpaired.target_mag.clone(),
                    };
                    let report = adversarial_step(
                        &batch,
                        &mut model,
                        &mut opt,
                        &mut state.discriminators,
                        &mut state.optimizers,
                        &state.config,
                        lr,
                        config.discriminator_lr,
                    )?;
                    batch_losses.push(report.separator);
                    if model.params().iter().any(|p| !p.is_finite()) {
                        break;
                    }
                }
            }
            (None, None) => unreachable!("adversarial state exists whenever there is no plain objective"),
        }
        let finite_params = model.params().iter().all(|p| p.is_finite());
        let train_loss = if finite_params { mean(batch_losses.into_iter()) } else { f64::NAN };
        let val_loss = if train_loss.is_finite() {
            dataset_loss(&model, val_set, objective.as_ref())?
        } else {
            f64::NAN
        };
        trace.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(HarnessError::Diverged { epoch, trace });
        }
        if sched.observe(val_loss) {
            best = model.clone();
            best_epoch = epoch;
        }
        log::debug!("{} epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e}", config.loss);
    }
    Ok(TrainOutcome {
        model: best,
        trace,
        best_epoch,
    })
}
