use dtaf::model::{self, Mode};
use dtaf::verify::{nonzero_bins, random_params};
use dtaf::{DropoutKey, ModelConfig};
use dtaf_tensor::Array;
use proptest::prelude::*;

fn config() -> impl Strategy<Value = ModelConfig> {
    (
        (2usize..=5, 1usize..=4, 1usize..=3),
        (1usize..=4, 1usize..=3, 1usize..=3),
        (1usize..=6, 0usize..3, 0.0f64..0.5),
    )
        .prop_flat_map(|((half_d, patch, stride), (experts, depth, n_extra), (horizon, kernel, dropout))| {
            let d = 2 * half_d;
            let input_len = patch + stride * n_extra;
            (1usize..=half_d + 1).prop_map(move |topk| ModelConfig {
                input_len,
                horizon,
                patch_len: patch,
                stride,
                d_model: d,
                experts,
                expert_depth: depth,
                topk,
                pool_kernel: 2 * kernel + 1,
                dropout,
                alpha: 0.1,
                beta: 0.1,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn forward_is_finite_and_well_shaped(
        cfg in config(),
        seed in 0u64..1000,
        scale in 0.01f64..100.0,
        train in any::<bool>(),
    ) {
        prop_assert!(cfg.validate().is_ok(), "{cfg:?}");
        let p = random_params(&cfg, seed);
        let x: Vec<f64> = (0..2 * cfg.input_len)
            .map(|t| scale * ((t as f64 * 0.37 + seed as f64).sin() + 0.01 * t as f64))
            .collect();
        let x = Array::new(vec![2, cfg.input_len], x).unwrap();
        let mode = if train { Mode::Train(DropoutKey::new(seed, 0, 0)) } else { Mode::Eval };
        let tape = dtaf_tensor::Tape::new();
        let pt = p.to_tape_constant(&tape);
        let out = model::forward_batch(&pt, &cfg, &x, mode).unwrap();
        let y = out.forecast.value();
        prop_assert_eq!(y.shape(), &[2, cfg.horizon]);
        prop_assert!(y.is_finite());
        let t = &out.trace;
        for row in t.router_weights.data().chunks(cfg.experts) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&r| (0.0..=1.0).contains(&r)));
        }
        let n = cfg.num_patches();
        for (ix, &w) in t.history_weights.data().iter().enumerate() {
            let (i, j) = ((ix / n) % n, ix % n);
            if j >= i {
                prop_assert_eq!(w, 0.0);
            }
        }
        prop_assert!(t.picks.iter().flatten().all(|p| p.len() == cfg.topk
            && p.iter().all(|&b| b <= cfg.d_model / 2)));
        prop_assert!(nonzero_bins(&t.freq).iter().all(|&c| c <= cfg.topk));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_roundtrip(values in prop::collection::vec(-50.0f64..50.0, 2..40)) {
        let x = Array::new(vec![1, values.len()], values).unwrap();
        let (z, s) = model::instance_norm(&x).unwrap();
        prop_assume!(s.std[0] > 1e-6);
        prop_assert!(model::denorm(&z, &s).max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn stable_loss_is_linear_in_alpha(seed in 0u64..100, alpha in 0.0f64..10.0) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let x = dtaf::verify::uniform(vec![2, 4, 6], 3.0, &mut rng);
        let tape = dtaf_tensor::Tape::new();
        let t = tape.constant(x);
        let raw = model::stable_divergence(&t).unwrap().item();
        let scaled = model::stable_loss(&t, alpha).unwrap().item();
        prop_assert!(raw >= -1e-12);
        prop_assert!((scaled - alpha * raw).abs() <= 1e-12 * (1.0 + scaled.abs()));
    }

    #[test]
    fn causality_holds(seed in 0u64..10_000) {
        prop_assert!(dtaf::verify::causality_trial(seed).unwrap());
    }
}
