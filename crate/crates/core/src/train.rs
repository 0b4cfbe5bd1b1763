//! Composite loss, optimization loop and evaluation.

use dtaf_tensor::{AdamWConfig, AdamWState, Array, DropoutKey, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::{SeriesDataset, SplitName, WindowBatch, WindowRef, WindowSet};
use crate::error::{DtafError, Result};
use crate::model::{self, Mode};
use crate::params::DtafParams;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Window stride of the training split.
    pub train_stride: usize,
    /// Window stride of validation and test evaluation.
    pub eval_stride: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            optimizer: AdamWConfig::default(),
            clip_norm: Some(5.0),
            train_stride: 1,
            eval_stride: 1,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(DtafError::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.train_stride == 0 || self.eval_stride == 0 {
            return Err(DtafError::Config("window strides must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(DtafError::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(self.optimizer.validate()?)
    }
}

/// Loss terms of one optimization step. `stable` is the unscaled
/// divergence; `total = task + alpha·stable + beta·robust`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub stable: f64,
    pub robust: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossBreakdown {
    /// `|total − (task + α·stable + β·robust)|`.
    pub fn decomposition_error(&self) -> f64 {
        (self.total - (self.task + self.alpha * self.stable + self.beta * self.robust)).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub batch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Mean training loss terms of one epoch and the validation metrics after it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: f64,
    pub stable: f64,
    pub robust: f64,
    pub total: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub patience_counter: usize,
    pub optimizer: AdamWState,
    pub rng_seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation MSE.
    pub params: DtafParams,
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepLog>,
    /// Validation metrics of the initial parameters.
    pub initial_val: Metrics,
}

/// Mean absolute error.
pub fn task_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(DtafError::Tensor(dtaf_tensor::TensorError::Shape {
            op: "task_loss",
            lhs: pred.shape(),
            rhs: target.shape(),
        }));
    }
    Ok(pred.sub(target)?.abs().mean())
}

/// Loss of one batch recorded on the parameters' tape.
pub struct BatchLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

/// Builds the composite loss for one batch. With `beta > 0` the model runs
/// twice with the dropout keys `2·step` and `2·step + 1`; the task term uses
/// the mean forecast and the robust term the mean squared disagreement.
pub fn batch_loss(
    p: &DtafParams<Tensor>,
    cfg: &ModelConfig,
    batch: &WindowBatch,
    seed: u64,
    step: u64,
) -> Result<BatchLoss> {
    let tape = p.embed.weight.tape().clone();
    let target = tape.constant(batch.targets.clone());
    let first = model::forward_batch(p, cfg, &batch.inputs, Mode::Train(DropoutKey::new(seed, 0, 2 * step)))?;
    let (pred, robust) = if cfg.beta > 0.0 {
        let second =
            model::forward_batch(p, cfg, &batch.inputs, Mode::Train(DropoutKey::new(seed, 0, 2 * step + 1)))?;
        let robust = first.forecast.sub(&second.forecast)?.square().mean();
        (first.forecast.add(&second.forecast)?.scale(0.5), Some(robust))
    } else {
        (first.forecast, None)
    };
    let task = task_loss(&pred, &target)?;
    let stable = model::stable_divergence(&first.stable)?;
    let mut total = task.clone();
    if cfg.alpha > 0.0 {
        total = total.add(&stable.scale(cfg.alpha))?;
    }
    if let Some(r) = &robust {
        total = total.add(&r.scale(cfg.beta))?;
    }
    let breakdown = LossBreakdown {
        task: task.item(),
        stable: stable.item(),
        robust: robust.as_ref().map_or(0.0, Tensor::item),
        total: total.item(),
        alpha: cfg.alpha,
        beta: cfg.beta,
    };
    Ok(BatchLoss { total, breakdown })
}

/// Order of training windows in `epoch` (1-based).
pub fn epoch_order(windows: &[WindowRef], seed: u64, epoch: usize) -> Vec<WindowRef> {
    let mut order = windows.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Gradients of every parameter after `backward`, zeros where none arrived.
pub fn collect_grads(p: &DtafParams<Tensor>) -> Vec<Array> {
    p.leaves()
        .into_iter()
        .map(|t| t.grad().unwrap_or_else(|| Array::zeros(t.shape())))
        .collect()
}

fn apply_step(
    params: &mut DtafParams,
    optimizer: &mut AdamWState,
    grads: &[Array],
) -> Result<()> {
    let grad_refs: Vec<&Array> = grads.iter().collect();
    let mut leaves = params.leaves_mut();
    optimizer.step(&mut leaves, &grad_refs)?;
    Ok(())
}

/// Trains freshly initialized parameters; see [`train_from`].
pub fn train(ds: &SeriesDataset, cfg: &ModelConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    train_from(ds, cfg, opts, DtafParams::init(cfg, opts.seed))
}

/// Minimizes the composite loss on the training split, validating after
/// every epoch and keeping the parameters with the lowest validation MSE.
pub fn train_from(
    ds: &SeriesDataset,
    cfg: &ModelConfig,
    opts: &TrainOptions,
    init: DtafParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    opts.validate()?;
    if let Some((name, want, have)) = init.shape_mismatch(cfg) {
        return Err(DtafError::Checkpoint(format!(
            "parameter {name} has shape {have:?}, expected {want:?}"
        )));
    }
    let train_set = ds.make_windows(SplitName::Train, cfg.input_len, cfg.horizon, opts.train_stride)?;
    let val_set = ds.make_windows(SplitName::Val, cfg.input_len, cfg.horizon, opts.eval_stride)?;

    let mut params = init;
    let initial_val = evaluate_windows(ds, &val_set, &params, cfg)?;
    let mut best = params.clone();
    let mut state = TrainState {
        epoch: 0,
        best_val_mse: f64::INFINITY,
        best_epoch: 0,
        patience_counter: 0,
        optimizer: AdamWState::new(opts.optimizer),
        rng_seed: opts.seed,
    };
    let mut history = Vec::new();
    let mut steps = Vec::new();
    let mut global_step = 0u64;

    for epoch in 1..=opts.max_epochs {
        state.epoch = epoch;
        let order = epoch_order(&train_set.windows, opts.seed, epoch);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for (b, refs) in order.chunks(opts.batch_size).enumerate() {
            let batch = train_set.gather(ds, refs);
            let tape = Tape::new();
            let p = params.to_tape(&tape);
            let loss = batch_loss(&p, cfg, &batch, opts.seed, global_step)?;
            let l = loss.breakdown;
            if ![l.task, l.stable, l.robust, l.total].iter().all(|v| v.is_finite()) {
                return Err(DtafError::NonFinite {
                    epoch,
                    batch: b + 1,
                    detail: format!("{l:?}"),
                });
            }
            tape.backward(&loss.total)?;
            let mut grads = collect_grads(&p);
            drop(p);
            drop(tape);
            if let Some(c) = opts.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            apply_step(&mut params, &mut state.optimizer, &grads)?;
            steps.push(StepLog { epoch, batch: b + 1, loss: l });
            for (s, v) in sums.iter_mut().zip([l.task, l.stable, l.robust, l.total]) {
                *s += v;
            }
            batches += 1;
            global_step += 1;
        }
        let val = evaluate_windows(ds, &val_set, &params, cfg)?;
        let n = batches as f64;
        history.push(EpochRecord {
            epoch,
            task: sums[0] / n,
            stable: sums[1] / n,
            robust: sums[2] / n,
            total: sums[3] / n,
            val_mse: val.mse,
            val_mae: val.mae,
        });
        if val.mse < state.best_val_mse {
            state.best_val_mse = val.mse;
            state.best_epoch = epoch;
            state.patience_counter = 0;
            best = params.clone();
        } else {
            state.patience_counter += 1;
            if state.patience_counter >= opts.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        state,
        history,
        steps,
        initial_val,
    })
}

/// Windows per evaluation batch.
const EVAL_BATCH: usize = 256;

/// Forecast errors over `windows` with dropout disabled.
pub fn evaluate_windows(
    ds: &SeriesDataset,
    windows: &WindowSet,
    params: &DtafParams,
    cfg: &ModelConfig,
) -> Result<Metrics> {
    let mut acc = ErrorSums::default();
    for batch in windows.batches(ds, EVAL_BATCH) {
        let (pred, _) = model::forecast(params, cfg, &batch.inputs)?;
        acc.add(&pred, &batch.targets);
    }
    Ok(acc.metrics())
}

/// MSE and MAE over every window of `split` (stride 1), in the scale of
/// `ds`.
pub fn evaluate(
    ds: &SeriesDataset,
    split: SplitName,
    params: &DtafParams,
    cfg: &ModelConfig,
) -> Result<Metrics> {
    let windows = ds.make_windows(split, cfg.input_len, cfg.horizon, 1)?;
    evaluate_windows(ds, &windows, params, cfg)
}

/// Running sums of squared and absolute errors.
#[derive(Clone, Copy, Debug, Default)]
pub struct ErrorSums {
    pub squared: f64,
    pub absolute: f64,
    pub count: usize,
}

impl ErrorSums {
    pub fn add(&mut self, pred: &Array, target: &Array) {
        for (p, t) in pred.data().iter().zip(target.data()) {
            let e = p - t;
            self.squared += e * e;
            self.absolute += e.abs();
        }
        self.count += pred.len();
    }

    pub fn metrics(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        Metrics {
            mse: self.squared / n,
            mae: self.absolute / n,
        }
    }
}
