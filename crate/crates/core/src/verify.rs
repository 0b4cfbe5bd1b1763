//! Numerical self-checks of the model: finite-difference gradients per
//! block, causality of temporal fusion and the spectral masking contract.

use dtaf_tensor::gradcheck::{check_gradients, GradReport};
use dtaf_tensor::{Array, DropoutKey, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::{self, Mode};
use crate::params::DtafParams;

/// Finite-difference step.
pub const GRAD_STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    MoeFilter,
    TemporalFusion,
    FrequencyWave,
    DualBranchAttention,
    Predict,
    Full,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::MoeFilter,
        Block::TemporalFusion,
        Block::FrequencyWave,
        Block::DualBranchAttention,
        Block::Predict,
        Block::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::MoeFilter => "moe_filter",
            Block::TemporalFusion => "temporal_fusion",
            Block::FrequencyWave => "frequency_wave",
            Block::DualBranchAttention => "dual_branch_attention",
            Block::Predict => "predict",
            Block::Full => "forward",
        }
    }
}

/// Small configuration used for gradient checks.
pub fn gradient_config() -> ModelConfig {
    ModelConfig {
        input_len: 16,
        horizon: 4,
        patch_len: 8,
        stride: 4,
        d_model: 8,
        experts: 2,
        expert_depth: 2,
        topk: 3,
        ..ModelConfig::default()
    }
}

pub fn uniform(shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Array {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Array::new(shape, data).expect("positive shape")
}

/// Parameters with every leaf random, including biases and final expert
/// layers, so that no gradient is structurally zero.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> DtafParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DtafParams::shapes(cfg).map(|_, shape| {
        let bound = 1.0 / (shape[shape.len() - 1] as f64).sqrt();
        uniform(shape.clone(), bound, &mut rng)
    })
}

/// Batch size of the gradient checks.
const BATCH: usize = 2;

/// Max relative error between tape gradients and central differences of a
/// random projection of `block`'s output, over every parameter and every
/// block input.
pub fn check_block(block: Block, seed: u64) -> Result<GradReport> {
    let cfg = gradient_config();
    let params = random_params(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (n, d) = (cfg.num_patches(), cfg.d_model);
    let patch = vec![BATCH, n, d];
    let key = DropoutKey::new(seed, 0, 0);
    let template = params.clone();

    let mut inputs: Vec<Array> = Vec::new();
    let extra: Vec<Array> = match block {
        Block::MoeFilter | Block::FrequencyWave | Block::DualBranchAttention => {
            vec![uniform(patch.clone(), 1.0, &mut rng)]
        }
        Block::TemporalFusion => vec![
            uniform(patch.clone(), 1.0, &mut rng),
            uniform(patch.clone(), 1.0, &mut rng),
        ],
        Block::Predict => vec![uniform(vec![BATCH, 2 * n, d], 1.0, &mut rng)],
        Block::Full => vec![],
    };
    let window = uniform(vec![BATCH, cfg.input_len], 1.0, &mut rng);
    let out_shape = match block {
        Block::Predict | Block::Full => vec![BATCH, cfg.horizon],
        Block::DualBranchAttention => vec![BATCH, 2 * n, d],
        _ => patch.clone(),
    };
    let weights = uniform(out_shape, 1.0, &mut rng);
    let stats = model::NormStats {
        mean: vec![0.3; BATCH],
        std: vec![1.7; BATCH],
    };
    inputs.extend(extra.iter().cloned());
    let n_extra = inputs.len();
    inputs.extend(params.leaves().into_iter().cloned());

    let f = |tape: &Tape, leaves: &[Tensor]| -> Result<Tensor> {
        let p = template.with_leaves(leaves[n_extra..].to_vec());
        let project = |t: &Tensor| -> Result<Tensor> {
            Ok(t.mul(&tape.constant(weights.clone()))?.sum())
        };
        let mode = Mode::Train(key);
        match block {
            Block::MoeFilter => {
                let moe = model::moe_filter(&leaves[0], &p, &cfg, mode)?;
                let div = model::stable_divergence(&moe.stable)?;
                Ok(project(&moe.stable)?.add(&div)?)
            }
            Block::TemporalFusion => {
                let (h_t, _) = model::temporal_fusion(&leaves[0], &leaves[1], &p, &cfg)?;
                project(&h_t)
            }
            Block::FrequencyWave => project(&model::frequency_wave(&leaves[0], &cfg)?.h_f),
            Block::DualBranchAttention => {
                let h_f = leaves[0].tanh();
                project(&model::dual_branch_attention(&leaves[0], &h_f, &p, &cfg, mode)?)
            }
            Block::Predict => project(&model::predict(&leaves[0], &p, &stats)?),
            Block::Full => {
                let out = model::forward_batch(&p, &cfg, &window, mode)?;
                let div = model::stable_divergence(&out.stable)?;
                Ok(project(&out.forecast)?.add(&div)?)
            }
        }
    };
    let wrap = |tape: &Tape, leaves: &[Tensor]| {
        f(tape, leaves).map_err(|e| dtaf_tensor::TensorError::Contract(e.to_string()))
    };
    Ok(check_gradients(&inputs, GRAD_STEP, wrap)?)
}

/// Perturbs one random later patch of both the embedded and the filtered
/// patches and reports whether every earlier row of `H_t` stayed
/// bit-identical.
pub fn causality_trial(seed: u64) -> Result<bool> {
    let cfg = ModelConfig::default();
    let params = random_params(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (cfg.num_patches(), cfg.d_model);
    let x_patch = uniform(vec![BATCH, n, d], 1.0, &mut rng);
    let stable = uniform(vec![BATCH, n, d], 1.0, &mut rng);
    let j = rng.gen_range(1..n);
    let mut x2 = x_patch.clone();
    let mut s2 = stable.clone();
    for b in 0..BATCH {
        for c in 0..d {
            x2.data_mut()[(b * n + j) * d + c] += rng.gen_range(-3.0..3.0);
            s2.data_mut()[(b * n + j) * d + c] += rng.gen_range(-3.0..3.0);
        }
    }
    let run = |x: &Array, s: &Array| -> Result<Array> {
        let tape = Tape::new();
        let p = params.to_tape_constant(&tape);
        let (h_t, _) =
            model::temporal_fusion(&tape.constant(x.clone()), &tape.constant(s.clone()), &p, &cfg)?;
        Ok(h_t.value())
    };
    let (a, b) = (run(&x_patch, &stable)?, run(&x2, &s2)?);
    let unchanged = (0..BATCH).all(|w| {
        (0..j).all(|i| {
            let at = (w * n + i) * d;
            a.data()[at..at + d]
                .iter()
                .zip(&b.data()[at..at + d])
                .all(|(u, v)| u.to_bits() == v.to_bits())
        })
    });
    Ok(unchanged)
}

/// Number of bins with nonzero magnitude in every patch of a masked
/// spectrum `[B, N, nb, 2]`.
pub fn nonzero_bins(freq: &Array) -> Vec<usize> {
    let s = freq.shape();
    let nb = s[s.len() - 2];
    freq.data()
        .chunks(2 * nb)
        .map(|row| row.chunks(2).filter(|c| c[0] != 0.0 || c[1] != 0.0).count())
        .collect()
}
