//! Forward computation of the forecaster.
//!
//! Every block works on a batch of univariate windows: patch-level tensors
//! have shape `[B, N, d]`. Blocks are public so they can be tested and
//! differentiated in isolation.

use dtaf_tensor::{Array, DropoutKey, Tape, Tensor};

use crate::config::ModelConfig;
use crate::error::{DtafError, Result};
use crate::params::{Affine, DtafParams, Projections};

/// Added to the window standard deviation in normalization.
pub const NORM_EPS: f64 = 1e-5;
/// Floor of probabilities inside logarithms.
pub const PROB_FLOOR: f64 = dtaf_tensor::LOG_FLOOR;

const OP_ATTN_TEMPORAL: u64 = 1;
const OP_ATTN_FREQUENCY: u64 = 2;

fn expert_op(expert: usize, layer: usize) -> u64 {
    100 + 16 * expert as u64 + layer as u64
}

/// Whether dropout is active, and the key that fixes its masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train(DropoutKey),
}

impl Mode {
    fn dropout(&self, x: &Tensor, rate: f64, op: u64) -> Result<Tensor> {
        match self {
            Mode::Eval => Ok(x.clone()),
            Mode::Train(key) => Ok(x.dropout(rate, key.with_op(op), true)?),
        }
    }
}

/// Per-window mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Normalizes every row of `x` (`[B, T]`) by its own statistics:
/// `(x - mean) / (std + eps)`.
pub fn instance_norm(x: &Array) -> Result<(Array, NormStats)> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(DtafError::Config(format!(
            "instance_norm expects [batch, time] with time >= 2, got {shape:?}"
        )));
    }
    let t = shape[1];
    let mut out = Vec::with_capacity(x.len());
    let mut stats = NormStats {
        mean: Vec::with_capacity(shape[0]),
        std: Vec::with_capacity(shape[0]),
    };
    for row in x.data().chunks(t) {
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let std = var.sqrt();
        out.extend(row.iter().map(|v| (v - mean) / (std + NORM_EPS)));
        stats.mean.push(mean);
        stats.std.push(std);
    }
    Ok((Array::new(shape.to_vec(), out)?, stats))
}

/// Inverse of [`instance_norm`] applied to forecasts `y` (`[B, F]`).
pub fn denorm(y: &Array, stats: &NormStats) -> Array {
    let f = y.shape()[1];
    let mut out = y.clone();
    for (b, row) in out.data_mut().chunks_mut(f).enumerate() {
        for v in row {
            *v = *v * (stats.std[b] + NORM_EPS) + stats.mean[b];
        }
    }
    out
}

fn denorm_tensor(y: &Tensor, stats: &NormStats) -> Result<Tensor> {
    let tape = y.tape();
    let b = stats.mean.len();
    let scale = tape.constant(Array::new(
        vec![b, 1],
        stats.std.iter().map(|s| s + NORM_EPS).collect(),
    )?);
    let shift = tape.constant(Array::new(vec![b, 1], stats.mean.clone())?);
    Ok(y.mul(&scale)?.add(&shift)?)
}

/// `x·Wᵀ + b` over the last axis.
pub fn affine(x: &Tensor, layer: &Affine<Tensor>) -> Result<Tensor> {
    Ok(x.matmul(&layer.weight.transpose()?)?.add(&layer.bias)?)
}

fn project(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    Ok(x.matmul(&weight.transpose()?)?)
}

/// Splits normalized windows `[B, T_in]` into `N` patches and embeds each
/// into `d` dimensions: `[B, N, d]`.
pub fn patchify_embed(x: &Tensor, p: &DtafParams<Tensor>, cfg: &ModelConfig) -> Result<Tensor> {
    if cfg.num_patches() < 2 {
        return Err(DtafError::Config(format!(
            "at least 2 patches are needed, got {}",
            cfg.num_patches()
        )));
    }
    let patches = x.unfold(cfg.patch_len, cfg.stride)?;
    affine(&patches, &p.embed)
}

pub struct MoeOutput {
    pub stable: Tensor,
    pub patterns: Tensor,
    /// `[B, N, m]`, each row a distribution over experts.
    pub router: Tensor,
}

/// Routes every patch to a weighted mixture of experts and subtracts the
/// mixture from the patch.
pub fn moe_filter(
    x_patch: &Tensor,
    p: &DtafParams<Tensor>,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<MoeOutput> {
    let router = affine(x_patch, &p.router)?.softmax(2)?;
    let mut patterns: Option<Tensor> = None;
    for (j, layers) in p.experts.iter().enumerate() {
        let mut h = x_patch.clone();
        for (l, layer) in layers.iter().enumerate() {
            h = affine(&h, layer)?;
            if l + 1 < layers.len() {
                h = mode.dropout(&h.tanh(), cfg.dropout, expert_op(j, l))?;
            }
        }
        let term = router.slice(2, j, 1)?.mul(&h)?;
        patterns = Some(match patterns {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    let patterns = patterns.ok_or_else(|| DtafError::Config("no experts".into()))?;
    Ok(MoeOutput {
        stable: x_patch.sub(&patterns)?,
        patterns,
        router,
    })
}

/// Unscaled residual divergence: the mean over ordered patch pairs (and over
/// the batch) of `KL(p_i ‖ p_j)`, where `p_i = softmax(stable_i)`.
///
/// Uses `Σ_ij KL(p_i‖p_j) = N·Σ_i Σ_c p_ic log p_ic − Σ_c (Σ_i p_ic)(Σ_j log p_jc)`
/// so the cost is linear in `N`.
pub fn stable_divergence(stable: &Tensor) -> Result<Tensor> {
    let shape = stable.shape();
    let (b, n) = (shape[0] as f64, shape[1] as f64);
    let probs = stable.softmax(2)?;
    let logs = probs.log_clamped(PROB_FLOOR);
    let self_term = probs.mul(&logs)?.sum().scale(n);
    let cross = probs.sum_axis(1)?.mul(&logs.sum_axis(1)?)?.sum();
    Ok(self_term.sub(&cross)?.scale(1.0 / (n * n * b)))
}

/// `alpha` times [`stable_divergence`].
pub fn stable_loss(stable: &Tensor, alpha: f64) -> Result<Tensor> {
    Ok(stable_divergence(stable)?.scale(alpha))
}

/// Moving-average trend/seasonal split of the last axis, each part mixed
/// by its own matrix.
pub fn linear_extra(x: &Tensor, p: &DtafParams<Tensor>, cfg: &ModelConfig) -> Result<Tensor> {
    let trend = x.avg_pool_1d_replicate(cfg.pool_kernel)?;
    let seasonal = x.sub(&trend)?;
    Ok(project(&trend, &p.trend)?.add(&project(&seasonal, &p.seasonal)?)?)
}

/// Strictly lower-triangular 0/1 mask: entry `(i, n)` is 1 iff `n < i`.
pub fn causal_mask(n: usize) -> Array {
    let data = (0..n * n)
        .map(|ix| if ix % n < ix / n { 1.0 } else { 0.0 })
        .collect();
    Array::new(vec![n, n], data).expect("square mask")
}

/// Returns `(H_t, history_weights)` with weights of shape `[B, N, N]`.
pub fn temporal_fusion(
    x_patch: &Tensor,
    stable: &Tensor,
    p: &DtafParams<Tensor>,
    cfg: &ModelConfig,
) -> Result<(Tensor, Tensor)> {
    let n = x_patch.shape()[1];
    let mask = x_patch.tape().constant(causal_mask(n));
    let weights = affine(&linear_extra(stable, p, cfg)?, &p.history)?
        .softmax(2)?
        .mul(&mask)?;
    let history = affine(&weights.matmul(stable)?, &p.history_mlp)?;
    let gate = affine(&linear_extra(x_patch, p, cfg)?, &p.gate)?;
    let h_t = x_patch.mul(&gate)?.add(&history)?;
    Ok((h_t, weights))
}

pub struct WaveOutput {
    pub h_f: Tensor,
    /// Masked spectra, `[B, N, d/2 + 1, 2]`.
    pub freq: Tensor,
    /// Unmasked spectral differences, same layout as `freq`.
    pub wave: Array,
    /// `picks[b][i]` lists the kept bins of patch `i`, largest change first.
    pub picks: Vec<Vec<Vec<usize>>>,
}

/// Indices of the `k` largest values, ties broken by lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Keeps, in every patch, the `k` spectral bins that changed most relative
/// to the previous patch and transforms back.
pub fn frequency_wave(h_t: &Tensor, cfg: &ModelConfig) -> Result<WaveOutput> {
    let shape = h_t.shape();
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    let spec = h_t.rfft()?;
    let nb = d / 2 + 1;
    let row = 2 * nb;
    let values = spec.value();
    let data = values.data();
    let mut wave = vec![0.0; data.len()];
    let mut mask = vec![0.0; b * n * nb];
    let mut picks = Vec::with_capacity(b);
    let mut mags = vec![0.0; nb];
    for w in 0..b {
        let mut window_picks = Vec::with_capacity(n);
        for i in 0..n {
            let at = (w * n + i) * row;
            for c in 0..row {
                let prev = if i == 0 { 0.0 } else { data[at - row + c] };
                wave[at + c] = data[at + c] - prev;
            }
            for (c, m) in mags.iter_mut().enumerate() {
                *m = wave[at + 2 * c].hypot(wave[at + 2 * c + 1]);
            }
            let chosen = top_k(&mags, cfg.topk);
            for &c in &chosen {
                mask[(w * n + i) * nb + c] = 1.0;
            }
            window_picks.push(chosen);
        }
        picks.push(window_picks);
    }
    let mask = h_t.tape().constant(Array::new(vec![b, n, nb, 1], mask)?);
    let freq = spec.mul(&mask)?;
    let h_f = freq.irfft(d)?;
    Ok(WaveOutput {
        h_f,
        freq,
        wave: Array::new(values.shape().to_vec(), wave)?,
        picks,
    })
}

fn attention(x: &Tensor, proj: &Projections<Tensor>, mode: Mode, rate: f64, op: u64) -> Result<Tensor> {
    let d = x.shape()[2] as f64;
    let q = project(x, &proj.query)?;
    let k = project(x, &proj.key)?;
    let v = mode.dropout(&project(x, &proj.value)?, rate, op)?;
    let weights = q.matmul(&k.transpose()?)?.scale(1.0 / d.sqrt()).softmax(2)?;
    Ok(weights.matmul(&v)?)
}

/// Self-attention within each branch, concatenated along the patch axis
/// (temporal branch first): `[B, 2N, d]`.
pub fn dual_branch_attention(
    h_t: &Tensor,
    h_f: &Tensor,
    p: &DtafParams<Tensor>,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Tensor> {
    let temporal = attention(h_t, &p.attn_temporal, mode, cfg.dropout, OP_ATTN_TEMPORAL)?;
    let frequency = attention(h_f, &p.attn_frequency, mode, cfg.dropout, OP_ATTN_FREQUENCY)?;
    Ok(Tensor::concat(&[temporal, frequency], 1)?)
}

/// Flattens the fused features, maps them to the horizon and undoes the
/// window normalization: `[B, F]`.
pub fn predict(h_fusion: &Tensor, p: &DtafParams<Tensor>, stats: &NormStats) -> Result<Tensor> {
    let shape = h_fusion.shape();
    let flat = h_fusion.reshape(vec![shape[0], shape[1] * shape[2]])?;
    denorm_tensor(&affine(&flat, &p.predictor)?, stats)
}

/// Intermediate values of one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub patches: Array,
    pub patterns: Array,
    pub stable: Array,
    pub router_weights: Array,
    pub history_weights: Array,
    pub h_t: Array,
    pub freq: Array,
    pub wave: Array,
    pub picks: Vec<Vec<Vec<usize>>>,
    pub h_f: Array,
    pub h_fusion: Array,
    pub norm_stats: NormStats,
}

pub struct Forward {
    /// `[B, F]` in the scale of the input windows.
    pub forecast: Tensor,
    /// Filtered patches, the argument of [`stable_divergence`].
    pub stable: Tensor,
    pub trace: ForwardTrace,
}

/// Runs the model on windows `[B, T_in]` using parameters recorded on a tape.
pub fn forward_batch(
    p: &DtafParams<Tensor>,
    cfg: &ModelConfig,
    inputs: &Array,
    mode: Mode,
) -> Result<Forward> {
    let shape = inputs.shape();
    if shape.len() != 2 || shape[1] != cfg.input_len {
        return Err(DtafError::Config(format!(
            "expected windows of shape [batch, {}], got {shape:?}",
            cfg.input_len
        )));
    }
    let tape = p.embed.weight.tape().clone();
    let (normed, stats) = instance_norm(inputs)?;
    let x = tape.constant(normed);
    let x_patch = patchify_embed(&x, p, cfg)?;
    let moe = moe_filter(&x_patch, p, cfg, mode)?;
    let (h_t, history) = temporal_fusion(&x_patch, &moe.stable, p, cfg)?;
    let wave = frequency_wave(&h_t, cfg)?;
    let fused = dual_branch_attention(&h_t, &wave.h_f, p, cfg, mode)?;
    let forecast = predict(&fused, p, &stats)?;
    let trace = ForwardTrace {
        patches: x_patch.value(),
        patterns: moe.patterns.value(),
        stable: moe.stable.value(),
        router_weights: moe.router.value(),
        history_weights: history.value(),
        h_t: h_t.value(),
        freq: wave.freq.value(),
        wave: wave.wave,
        picks: wave.picks,
        h_f: wave.h_f.value(),
        h_fusion: fused.value(),
        norm_stats: stats,
    };
    Ok(Forward {
        forecast,
        stable: moe.stable,
        trace,
    })
}

/// Forecasts from plain arrays without recording gradients.
pub fn forecast(
    params: &DtafParams,
    cfg: &ModelConfig,
    inputs: &Array,
) -> Result<(Array, ForwardTrace)> {
    let tape = Tape::new();
    let p = params.to_tape_constant(&tape);
    let out = forward_batch(&p, cfg, inputs, Mode::Eval)?;
    Ok((out.forecast.value(), out.trace))
}

/// Single-window convenience wrapper around [`forward_batch`].
pub fn forward(
    x: &[f64],
    params: &DtafParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<(Vec<f64>, ForwardTrace)> {
    let tape = Tape::new();
    let p = params.to_tape_constant(&tape);
    let inputs = Array::new(vec![1, x.len()], x.to_vec())?;
    let out = forward_batch(&p, cfg, &inputs, mode)?;
    Ok((out.forecast.value().into_data(), out.trace))
}
