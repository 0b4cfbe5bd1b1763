use dtaf_tensor::{Array, Tape, Tensor};
use proptest::prelude::*;

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..16)
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..12).prop_filter_map("nonzero mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(x in logits(), shift in -100.0f64..100.0) {
        let tape = Tape::new();
        let a = tape.constant(Array::from_vec(x.clone()));
        let b = tape.constant(Array::from_vec(x.iter().map(|v| v + shift).collect()));
        let ya = a.softmax(0).unwrap().value();
        let yb = b.softmax(0).unwrap().value();
        let total: f64 = ya.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(ya.data().iter().all(|&v| v >= 0.0));
        prop_assert!(ya.max_abs_diff(&yb) < 1e-12);
    }

    #[test]
    fn kl_is_zero_on_self_and_nonnegative(p in distribution(), seed in 0u64..1000) {
        let tape = Tape::new();
        let pt = tape.constant(Array::from_vec(p.clone()));
        prop_assert!(Tensor::kl_divergence(&pt, &pt).unwrap().item().abs() <= 1e-9);
        let q: Vec<f64> = p.iter().enumerate().map(|(i, _)| ((i as u64 * 31 + seed) % 7 + 1) as f64).collect();
        let s: f64 = q.iter().sum();
        let qt = tape.constant(Array::from_vec(q.iter().map(|v| v / s).collect()));
        prop_assert!(Tensor::kl_divergence(&pt, &qt).unwrap().item() >= -1e-12);
    }

    #[test]
    fn pooling_preserves_constants(c in -1e3f64..1e3, d in 1usize..20, half in 0usize..5) {
        let tape = Tape::new();
        let x = tape.constant(Array::full(vec![d], c));
        let y = x.avg_pool_1d_replicate(2 * half + 1).unwrap().value();
        let mean = y.data().iter().sum::<f64>() / d as f64;
        prop_assert!((mean - c).abs() <= 1e-12 * c.abs().max(1.0));
        prop_assert!(y.data().iter().all(|&v| (v - c).abs() <= 1e-12 * c.abs().max(1.0)));
    }

    #[test]
    fn fft_pair_round_trips(x in prop::collection::vec(-1.0f64..1.0, 1..33)) {
        let mut x = x;
        if x.len() % 2 == 1 { x.push(0.25); }
        let tape = Tape::new();
        let t = tape.constant(Array::from_vec(x.clone()));
        let back = t.rfft().unwrap().irfft(x.len()).unwrap().value();
        prop_assert!(back.max_abs_diff(&Array::from_vec(x)) < 1e-9);
    }
}
