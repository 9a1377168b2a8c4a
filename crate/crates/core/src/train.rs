//! Mini-batch training with the multi-scale loss and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, Parameter};
use crate::loss::{l_sum, LossConfig};
use crate::metrics::{evaluate, label_classes, upscale_prediction, Evaluation};
use crate::optim::{adam_step, sgd_step, AdamConfig, AdamState};
use crate::resample::{downscale_mask, power_of_two_ratio};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs without a validation-Jaccard gain of at least `min_delta`
    /// before stopping.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            batch_size: 8,
            max_epochs: 200,
            seed: 0,
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    pub val_jaccard: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_dice,val_jaccard";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.10},{:.6},{:.6}",
            self.epoch, self.train_loss, self.val_dice, self.val_jaccard
        )
    }
}

#[derive(Debug)]
pub struct TrainReport<T> {
    /// Parameters from the epoch with the best validation Jaccard.
    pub model: ModelGraph<T>,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_jaccard: f64,
    pub first_batch_indices: Vec<usize>,
    pub first_batch_loss: f64,
}

/// Training target for a model: the ground truth brought down to the
/// resolution of the model's last tap.
pub fn training_target(model_out_res: usize, gt: &Mask) -> Result<Mask> {
    let k = power_of_two_ratio(gt.height(), model_out_res)?;
    downscale_mask(gt, 1 << k)
}

fn output_res<T: Scalar>(model: &ModelGraph<T>, input_res: usize) -> usize {
    input_res << model.num_stages()
}

/// `L_sum` and its parameter gradients for one batch.
pub fn loss_and_grads<T: Scalar>(
    model: &ModelGraph<T>,
    images: &Tensor<T>,
    gt: &Mask,
    loss: &LossConfig,
) -> Result<(T, Vec<Tensor<T>>)> {
    let target = training_target(output_res(model, images.shape()[2]), gt)?;
    let mut tape = Tape::new();
    let params = model.bind_params(&mut tape);
    let x = tape.constant(images.clone());
    let taps = model.forward_on_tape(&mut tape, x, &params)?;
    let l = l_sum(&mut tape, &taps, &target, loss)?;
    let value = tape.value(l).item()?;
    let grads = tape.backward(l)?;
    let grads = params.iter().map(|&p| grads.wrt(p)).collect::<Result<_>>()?;
    Ok((value, grads))
}

/// Predictions stretched to ground-truth resolution, scored against it.
pub fn evaluate_model<T: Scalar>(model: &ModelGraph<T>, data: &Dataset<T>, batch_size: usize) -> Result<Evaluation> {
    let preds = predict_at_gt(model, data, batch_size)?;
    evaluate(&preds, &data.masks, label_classes(model.num_classes()))
}

pub fn predict_at_gt<T: Scalar>(model: &ModelGraph<T>, data: &Dataset<T>, batch_size: usize) -> Result<Mask> {
    let gt = data.gt_res();
    let mut out = Vec::new();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.select(chunk)?;
        let logits = model.forward(&batch.images)?;
        out.push(upscale_prediction(&logits, gt, gt)?);
    }
    let refs: Vec<&Mask> = out.iter().collect();
    Mask::stack_batch(&refs)
}

enum OptState<T> {
    Sgd,
    Adam(AdamState<T>, AdamConfig),
}

fn apply_step<T: Scalar>(
    params: &mut [Parameter<T>],
    grads: &[Tensor<T>],
    state: &mut OptState<T>,
    lr: f64,
) -> Result<()> {
    let mut refs: Vec<&mut Tensor<T>> = params.iter_mut().map(|p| &mut p.tensor).collect();
    match state {
        OptState::Sgd => sgd_step(&mut refs, grads, T::from_f64_lossy(lr)),
        OptState::Adam(st, cfg) => adam_step(&mut refs, grads, st, cfg),
    }
}

/// Trains `model` on `train`, scoring `val` after every epoch.
pub fn train<T: Scalar>(
    mut model: ModelGraph<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    loss: &LossConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    loss.validate()?;
    if loss.num_stages() != model.num_stages() {
        return Err(Error::Config(format!(
            "loss has {} stage weights but the model has {} taps",
            loss.stage_weights.len(),
            model.num_stages() + 1
        )));
    }
    let mut state = match cfg.optimizer {
        OptimizerKind::Sgd => OptState::Sgd,
        OptimizerKind::Adam => {
            let shapes: Vec<&[usize]> = model.params().iter().map(|p| p.tensor.shape()).collect();
            OptState::Adam(
                AdamState::new(&shapes),
                AdamConfig {
                    lr: cfg.lr,
                    ..AdamConfig::default()
                },
            )
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, model.params().to_vec());
    let mut first_batch: Option<(Vec<usize>, f64)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select(chunk)?;
            let (l, grads) = loss_and_grads(&model, &batch.images, &batch.masks, loss)?;
            let l = l.to_f64_lossy();
            if !l.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            first_batch.get_or_insert_with(|| (chunk.to_vec(), l));
            loss_sum += l;
            batches += 1;
            apply_step(model.params_mut(), &grads, &mut state, cfg.lr)?;
        }
        let ev = evaluate_model(&model, val, cfg.batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_dice: ev.macro_mean_dice,
            val_jaccard: ev.macro_mean_jaccard,
        };
        on_epoch(&log);
        if log.val_jaccard > best.0 + cfg.min_delta || epoch == 1 {
            best = (log.val_jaccard, epoch, model.params().to_vec());
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(log);
        if stale >= cfg.patience {
            break;
        }
    }
    let (best_val_jaccard, best_epoch, params) = best;
    model.load_params(params)?;
    let (first_batch_indices, first_batch_loss) = first_batch.unwrap_or_default();
    Ok(TrainReport {
        model,
        history,
        best_epoch,
        best_val_jaccard,
        first_batch_indices,
        first_batch_loss,
    })
}
