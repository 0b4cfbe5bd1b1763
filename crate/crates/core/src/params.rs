//! Named parameter collection of the model.
//!
//! [`DtafParams`] is generic over its leaf type so the same layout holds
//! plain arrays (for storage and optimization), tape tensors (for a forward
//! pass) or shapes (for validation).

use dtaf_tensor::{Array, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;

/// `y = x·Wᵀ + b` with `weight` stored as `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: T,
    pub bias: T,
}

/// Query/key/value projections of one attention branch (no biases).
#[derive(Clone, Debug, PartialEq)]
pub struct Projections<T> {
    pub query: T,
    pub key: T,
    pub value: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtafParams<T = Array> {
    /// Patch embedding, `[d, L]`.
    pub embed: Affine<T>,
    /// `experts[j][l]` is layer `l` of expert `j`, each `[d, d]`.
    pub experts: Vec<Vec<Affine<T>>>,
    /// Expert router, `[m, d]`.
    pub router: Affine<T>,
    /// Trend and seasonal mixing matrices, `[d, d]`.
    pub trend: T,
    pub seasonal: T,
    /// History weight generator, `[N, d]`.
    pub history: Affine<T>,
    pub history_mlp: Affine<T>,
    /// Scalar gate of the current patch, `[1, d]`.
    pub gate: Affine<T>,
    pub attn_temporal: Projections<T>,
    pub attn_frequency: Projections<T>,
    /// Output head, `[F, 2N·d]`.
    pub predictor: Affine<T>,
}

impl<T> DtafParams<T> {
    /// Applies `f` to every leaf in canonical order, building a new
    /// collection with the same layout.
    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(&str, &T) -> Result<U, E>,
    ) -> Result<DtafParams<U>, E> {
        let mut affine = |name: &str, a: &Affine<T>| -> Result<Affine<U>, E> {
            Ok(Affine {
                weight: f(&format!("{name}.weight"), &a.weight)?,
                bias: f(&format!("{name}.bias"), &a.bias)?,
            })
        };
        let embed = affine("embed", &self.embed)?;
        let mut experts = Vec::with_capacity(self.experts.len());
        for (j, layers) in self.experts.iter().enumerate() {
            let mut mapped = Vec::with_capacity(layers.len());
            for (l, layer) in layers.iter().enumerate() {
                mapped.push(affine(&format!("experts.{j}.{l}"), layer)?);
            }
            experts.push(mapped);
        }
        let router = affine("router", &self.router)?;
        let history = affine("history", &self.history)?;
        let history_mlp = affine("history_mlp", &self.history_mlp)?;
        let gate = affine("gate", &self.gate)?;
        let predictor = affine("predictor", &self.predictor)?;
        let trend = f("trend", &self.trend)?;
        let seasonal = f("seasonal", &self.seasonal)?;
        let mut proj = |name: &str, p: &Projections<T>| -> Result<Projections<U>, E> {
            Ok(Projections {
                query: f(&format!("{name}.query"), &p.query)?,
                key: f(&format!("{name}.key"), &p.key)?,
                value: f(&format!("{name}.value"), &p.value)?,
            })
        };
        let attn_temporal = proj("attn_temporal", &self.attn_temporal)?;
        let attn_frequency = proj("attn_frequency", &self.attn_frequency)?;
        Ok(DtafParams {
            embed,
            experts,
            router,
            trend,
            seasonal,
            history,
            history_mlp,
            gate,
            attn_temporal,
            attn_frequency,
            predictor,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> DtafParams<U> {
        self.try_map(|n, t| Ok::<_, std::convert::Infallible>(f(n, t)))
            .unwrap_or_else(|e| match e {})
    }

    /// Leaves with their names, in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        fn affine<'a, T>(out: &mut Vec<(String, &'a T)>, name: &str, a: &'a Affine<T>) {
            out.push((format!("{name}.weight"), &a.weight));
            out.push((format!("{name}.bias"), &a.bias));
        }
        let mut out = Vec::new();
        affine(&mut out, "embed", &self.embed);
        for (j, layers) in self.experts.iter().enumerate() {
            for (l, layer) in layers.iter().enumerate() {
                affine(&mut out, &format!("experts.{j}.{l}"), layer);
            }
        }
        affine(&mut out, "router", &self.router);
        affine(&mut out, "history", &self.history);
        affine(&mut out, "history_mlp", &self.history_mlp);
        affine(&mut out, "gate", &self.gate);
        affine(&mut out, "predictor", &self.predictor);
        out.push(("trend".into(), &self.trend));
        out.push(("seasonal".into(), &self.seasonal));
        for (name, p) in [
            ("attn_temporal", &self.attn_temporal),
            ("attn_frequency", &self.attn_frequency),
        ] {
            out.push((format!("{name}.query"), &p.query));
            out.push((format!("{name}.key"), &p.key));
            out.push((format!("{name}.value"), &p.value));
        }
        out
    }

    /// Mutable leaves in the same canonical order as [`DtafParams::named`].
    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = Vec::new();
        let Self {
            embed,
            experts,
            router,
            trend,
            seasonal,
            history,
            history_mlp,
            gate,
            attn_temporal,
            attn_frequency,
            predictor,
        } = self;
        out.extend([&mut embed.weight, &mut embed.bias]);
        for layer in experts.iter_mut().flatten() {
            out.extend([&mut layer.weight, &mut layer.bias]);
        }
        for a in [router, history, history_mlp, gate, predictor] {
            out.extend([&mut a.weight, &mut a.bias]);
        }
        out.extend([trend, seasonal]);
        for p in [attn_temporal, attn_frequency] {
            out.extend([&mut p.query, &mut p.key, &mut p.value]);
        }
        out
    }

    /// Same layout as `self`, filled from `leaves` in canonical order.
    pub fn with_leaves<U>(&self, leaves: Vec<U>) -> DtafParams<U> {
        assert_eq!(leaves.len(), self.named().len(), "leaf count");
        let mut it = leaves.into_iter();
        self.map(|_, _| it.next().expect("leaf count"))
    }

    pub fn leaves(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }
}

impl DtafParams<Vec<usize>> {
    /// The exact shape of every parameter for `cfg`.
    pub fn shapes(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let n = cfg.num_patches();
        let affine = |out: usize, inp: usize| Affine {
            weight: vec![out, inp],
            bias: vec![out],
        };
        let square = || vec![d, d];
        DtafParams {
            embed: affine(d, cfg.patch_len),
            experts: (0..cfg.experts)
                .map(|_| (0..cfg.expert_depth).map(|_| affine(d, d)).collect())
                .collect(),
            router: affine(cfg.experts, d),
            trend: square(),
            seasonal: square(),
            history: affine(n, d),
            history_mlp: affine(d, d),
            gate: affine(1, d),
            attn_temporal: Projections {
                query: square(),
                key: square(),
                value: square(),
            },
            attn_frequency: Projections {
                query: square(),
                key: square(),
                value: square(),
            },
            predictor: affine(cfg.horizon, 2 * n * d),
        }
    }
}

impl DtafParams<Array> {
    /// Weights uniform in `±1/√fan_in`, biases zero, and the last layer of
    /// every expert zero so the filter starts as the identity.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = DtafParams::shapes(cfg);
        let last = cfg.expert_depth - 1;
        shapes.map(|name, shape| {
            let is_bias = name.ends_with(".bias");
            let is_final_expert = name.starts_with("experts.")
                && name.split('.').nth(2) == Some(&last.to_string());
            if is_bias || is_final_expert {
                return Array::zeros(shape.clone());
            }
            let bound = 1.0 / (shape[shape.len() - 1] as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Array::new(shape.clone(), data).expect("parameter shape")
        })
    }

    /// Registers every array on `tape` as a trainable leaf.
    pub fn to_tape(&self, tape: &Tape) -> DtafParams<Tensor> {
        self.map(|_, a| tape.param(a.clone()))
    }

    /// Registers every array on `tape` as a constant.
    pub fn to_tape_constant(&self, tape: &Tape) -> DtafParams<Tensor> {
        self.map(|_, a| tape.constant(a.clone()))
    }

    pub fn count(&self) -> usize {
        self.leaves().iter().map(|a| a.len()).sum()
    }

    /// Name of the first parameter whose shape differs from `cfg`, with the
    /// expected and found shapes.
    pub fn shape_mismatch(&self, cfg: &ModelConfig) -> Option<(String, Vec<usize>, Vec<usize>)> {
        let expected = DtafParams::shapes(cfg);
        if expected.experts.len() != self.experts.len()
            || expected
                .experts
                .iter()
                .zip(&self.experts)
                .any(|(a, b)| a.len() != b.len())
        {
            return Some((
                "experts".into(),
                vec![cfg.experts, cfg.expert_depth],
                vec![
                    self.experts.len(),
                    self.experts.first().map_or(0, Vec::len),
                ],
            ));
        }
        expected
            .named()
            .into_iter()
            .zip(self.named())
            .find(|((_, want), (_, have))| want.as_slice() != have.shape())
            .map(|((name, want), (_, have))| (name, want.clone(), have.shape().to_vec()))
    }
}
