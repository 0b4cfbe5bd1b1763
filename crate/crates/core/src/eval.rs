//! Reference predictors, hyperparameter sweeps and interpretability dumps.

use dtaf_tensor::{AdamWState, Array, Tape, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::data::{SeriesDataset, SplitName, WindowRef};
use crate::error::{DtafError, Result};
use crate::model;
use crate::params::DtafParams;
use crate::train::{self, clip_global_norm, epoch_order, ErrorSums, Metrics, TrainOptions};

/// Error of repeating the last observed value over the horizon, on every
/// window of `split`.
pub fn persistence_baseline(
    ds: &SeriesDataset,
    split: SplitName,
    input_len: usize,
    horizon: usize,
) -> Result<Metrics> {
    let windows = ds.make_windows(split, input_len, horizon, 1)?;
    let mut acc = ErrorSums::default();
    for batch in windows.batches(ds, 1024) {
        let pred: Vec<f64> = batch
            .inputs
            .data()
            .chunks(input_len)
            .flat_map(|row| std::iter::repeat_n(row[input_len - 1], horizon))
            .collect();
        acc.add(&Array::new(batch.targets.shape().to_vec(), pred)?, &batch.targets);
    }
    Ok(acc.metrics())
}

/// Direct affine map from the lookback window to the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    /// `[F, T_in]`.
    pub weight: Array,
    pub bias: Array,
}

impl LinearModel {
    pub fn zeros(input_len: usize, horizon: usize) -> Self {
        Self {
            weight: Array::zeros(vec![horizon, input_len]),
            bias: Array::zeros(vec![horizon]),
        }
    }

    fn apply(&self, tape: &Tape, inputs: &Array, trainable: bool) -> Result<(Tensor, Tensor, Tensor)> {
        let leaf = |a: &Array| tape.leaf(a.clone(), trainable);
        let (w, b) = (leaf(&self.weight), leaf(&self.bias));
        let pred = tape.constant(inputs.clone()).matmul(&w.transpose()?)?.add(&b)?;
        Ok((pred, w, b))
    }

    pub fn predict(&self, inputs: &Array) -> Result<Array> {
        Ok(self.apply(&Tape::new(), inputs, false)?.0.value())
    }
}

/// Trains a [`LinearModel`] from zeros with the L1 loss, the same window
/// order, optimizer and early stopping as the main model, then reports
/// test metrics.
pub fn linear_baseline(
    ds: &SeriesDataset,
    cfg: &ModelConfig,
    opts: &TrainOptions,
) -> Result<(LinearModel, Metrics)> {
    opts.validate()?;
    let (t_in, f) = (cfg.input_len, cfg.horizon);
    let train_set = ds.make_windows(SplitName::Train, t_in, f, opts.train_stride)?;
    let val_set = ds.make_windows(SplitName::Val, t_in, f, opts.eval_stride)?;
    let evaluate = |m: &LinearModel, split: &crate::data::WindowSet| -> Result<Metrics> {
        let mut acc = ErrorSums::default();
        for batch in split.batches(ds, 1024) {
            acc.add(&m.predict(&batch.inputs)?, &batch.targets);
        }
        Ok(acc.metrics())
    };

    let mut model = LinearModel::zeros(t_in, f);
    let mut best = model.clone();
    let mut best_mse = f64::INFINITY;
    let mut stale = 0;
    let mut optimizer = AdamWState::new(opts.optimizer);
    for epoch in 1..=opts.max_epochs {
        for refs in epoch_order(&train_set.windows, opts.seed, epoch).chunks(opts.batch_size) {
            let batch = train_set.gather(ds, refs);
            let tape = Tape::new();
            let (pred, w, b) = model.apply(&tape, &batch.inputs, true)?;
            let loss = train::task_loss(&pred, &tape.constant(batch.targets.clone()))?;
            tape.backward(&loss)?;
            let mut grads = vec![
                w.grad().unwrap_or_else(|| Array::zeros(w.shape())),
                b.grad().unwrap_or_else(|| Array::zeros(b.shape())),
            ];
            if let Some(c) = opts.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            let refs: Vec<&Array> = grads.iter().collect();
            optimizer.step(&mut [&mut model.weight, &mut model.bias], &refs)?;
        }
        let val = evaluate(&model, &val_set)?;
        if val.mse < best_mse {
            best_mse = val.mse;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                break;
            }
        }
    }
    let test_set = ds.make_windows(SplitName::Test, t_in, f, 1)?;
    let metrics = evaluate(&best, &test_set)?;
    Ok((best, metrics))
}

/// Hyperparameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    TopK,
    PatchLen,
    InputLen,
}

impl SweepParam {
    pub const NAMES: [&'static str; 3] = ["topk", "patch_len", "input_len"];

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "topk" | "k" => Some(SweepParam::TopK),
            "patch_len" => Some(SweepParam::PatchLen),
            "input_len" => Some(SweepParam::InputLen),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::TopK => "topk",
            SweepParam::PatchLen => "patch_len",
            SweepParam::InputLen => "input_len",
        }
    }

    pub fn apply(self, cfg: &ModelConfig, value: usize) -> ModelConfig {
        let mut out = cfg.clone();
        match self {
            SweepParam::TopK => out.topk = value,
            SweepParam::PatchLen => out.patch_len = value,
            SweepParam::InputLen => out.input_len = value,
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<usize>,
    pub base: ModelConfig,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Training options of every cell; the seed is replaced per run.
    pub train: TrainOptions,
}

/// Upper bound on the training epochs of one sweep run.
pub const SWEEP_MAX_EPOCHS: usize = 30;

impl SweepSpec {
    /// Every value must yield a valid configuration for every horizon.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.horizons.is_empty() || self.seeds.is_empty() {
            return Err(DtafError::Config(format!(
                "sweep over {} needs at least one value, horizon and seed",
                self.param.name()
            )));
        }
        for &v in &self.values {
            for &h in &self.horizons {
                let cfg = ModelConfig {
                    horizon: h,
                    ..self.param.apply(&self.base, v)
                };
                cfg.validate().map_err(|e| {
                    DtafError::Config(format!("{} = {v}: {e}", self.param.name()))
                })?;
            }
        }
        Ok(())
    }
}

/// One training run of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub horizon: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
}

/// Mean over seeds of one (value, horizon) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub value: usize,
    pub horizon: usize,
    pub runs: usize,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepFailure {
    pub value: usize,
    pub horizon: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
    pub failures: Vec<SweepFailure>,
}

/// Trains and tests one configuration; the metrics of a sweep cell.
pub fn train_and_test(ds: &SeriesDataset, cfg: &ModelConfig, opts: &TrainOptions) -> Result<Metrics> {
    let outcome = train::train(ds, cfg, opts)?;
    train::evaluate(ds, SplitName::Test, &outcome.params, cfg)
}

/// Runs every (value, horizon, seed) combination on up to `threads`
/// workers. Failed runs are recorded and skipped; rows keep the order of
/// the spec regardless of scheduling.
pub fn run_sweep(ds: &SeriesDataset, spec: &SweepSpec, threads: usize) -> Result<SweepTable> {
    spec.validate()?;
    let jobs: Vec<(usize, usize, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| {
            spec.horizons
                .iter()
                .flat_map(move |&h| spec.seeds.iter().map(move |&s| (v, h, s)))
        })
        .collect();
    let run = |&(value, horizon, seed): &(usize, usize, u64)| {
        let cfg = ModelConfig {
            horizon,
            ..spec.param.apply(&spec.base, value)
        };
        let opts = TrainOptions {
            seed,
            max_epochs: spec.train.max_epochs.min(SWEEP_MAX_EPOCHS),
            ..spec.train.clone()
        };
        train_and_test(ds, &cfg, &opts)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| DtafError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Metrics>> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut table = SweepTable::default();
    for (&(value, horizon, seed), result) in jobs.iter().zip(results) {
        match result {
            Ok(m) if m.mse.is_finite() && m.mae.is_finite() => table.rows.push(SweepRow {
                value,
                horizon,
                seed,
                mse: m.mse,
                mae: m.mae,
            }),
            Ok(m) => table.failures.push(SweepFailure {
                value,
                horizon,
                seed,
                error: format!("non-finite metrics {m:?}"),
            }),
            Err(e) => table.failures.push(SweepFailure {
                value,
                horizon,
                seed,
                error: e.to_string(),
            }),
        }
    }
    for &value in &spec.values {
        for &horizon in &spec.horizons {
            let runs: Vec<&SweepRow> = table
                .rows
                .iter()
                .filter(|r| r.value == value && r.horizon == horizon)
                .collect();
            if runs.is_empty() {
                continue;
            }
            let n = runs.len() as f64;
            table.cells.push(SweepCell {
                value,
                horizon,
                runs: runs.len(),
                mse: runs.iter().map(|r| r.mse).sum::<f64>() / n,
                mae: runs.iter().map(|r| r.mae).sum::<f64>() / n,
            });
        }
    }
    Ok(table)
}

/// Interpretability data of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowAnalysis {
    pub window: WindowRef,
    /// `N × m` expert weights.
    pub router: Vec<Vec<f64>>,
    /// Pairwise `KL(p_i ‖ p_j)` of softmaxed embedded patches.
    pub kl_before: Vec<Vec<f64>>,
    /// The same for the filtered patches.
    pub kl_after: Vec<Vec<f64>>,
    /// Per patch, the kept bins with their spectral-difference magnitudes.
    pub picks: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisBundle {
    pub windows: Vec<WindowAnalysis>,
}

fn softmax_rows(a: &Array) -> Vec<Vec<f64>> {
    let d = *a.shape().last().expect("patch axis");
    a.data()
        .chunks(d)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// `KL(p_i ‖ p_j)` for every ordered pair of rows, logarithms clamped at
/// the model's probability floor.
pub fn pairwise_kl(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let logs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|p| p.max(model::PROB_FLOOR).ln()).collect())
        .collect();
    (0..rows.len())
        .map(|i| {
            (0..rows.len())
                .map(|j| {
                    rows[i]
                        .iter()
                        .zip(logs[i].iter().zip(&logs[j]))
                        .map(|(p, (li, lj))| p * (li - lj))
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Mean of the off-diagonal entries of a square matrix.
pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n < 2 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j])
        .sum();
    total / (n * (n - 1)) as f64
}

impl AnalysisBundle {
    /// Mean off-diagonal divergence before and after filtering, averaged
    /// over windows.
    pub fn mean_kl(&self) -> (f64, f64) {
        let n = self.windows.len().max(1) as f64;
        let before = self.windows.iter().map(|w| mean_off_diagonal(&w.kl_before)).sum::<f64>();
        let after = self.windows.iter().map(|w| mean_off_diagonal(&w.kl_after)).sum::<f64>();
        (before / n, after / n)
    }
}

/// Samples `n_windows` distinct test windows with `seed` (returned in
/// chronological order).
pub fn sample_windows(
    ds: &SeriesDataset,
    cfg: &ModelConfig,
    n_windows: usize,
    seed: u64,
) -> Result<Vec<WindowRef>> {
    if n_windows == 0 {
        return Err(DtafError::Config("at least one window must be analyzed".into()));
    }
    let all = ds.make_windows(SplitName::Test, cfg.input_len, cfg.horizon, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n_windows.min(all.len());
    let mut picked: Vec<usize> = sample(&mut rng, all.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| all.windows[i]).collect())
}

/// Router weights, patch divergences before and after filtering, and
/// spectral picks of the given windows.
pub fn analyze(
    ds: &SeriesDataset,
    params: &DtafParams,
    cfg: &ModelConfig,
    windows: &[WindowRef],
) -> Result<AnalysisBundle> {
    let set = ds.make_windows(SplitName::Test, cfg.input_len, cfg.horizon, 1)?;
    let batch = set.gather(ds, windows);
    let (_, trace) = model::forecast(params, cfg, &batch.inputs)?;
    let (n, d, m) = (cfg.num_patches(), cfg.d_model, cfg.experts);
    let nb = cfg.spectrum_bins();
    let router_rows: Vec<Vec<f64>> = trace.router_weights.data().chunks(m).map(<[f64]>::to_vec).collect();
    let before = softmax_rows(&trace.patches);
    let after = softmax_rows(&trace.stable);
    let wave = trace.wave.data();
    let mut out = AnalysisBundle::default();
    for (b, &window) in windows.iter().enumerate() {
        let rows = b * n..(b + 1) * n;
        let picks = trace.picks[b]
            .iter()
            .enumerate()
            .map(|(i, bins)| {
                bins.iter()
                    .map(|&c| {
                        let at = ((b * n + i) * nb + c) * 2;
                        (c, wave[at].hypot(wave[at + 1]))
                    })
                    .collect()
            })
            .collect();
        debug_assert_eq!(before[rows.clone()].iter().map(Vec::len).sum::<usize>(), n * d);
        out.windows.push(WindowAnalysis {
            window,
            router: router_rows[rows.clone()].to_vec(),
            kl_before: pairwise_kl(&before[rows.clone()]),
            kl_after: pairwise_kl(&after[rows]),
            picks,
        });
    }
    Ok(out)
}
