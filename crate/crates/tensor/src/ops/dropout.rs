use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tape::Tensor;

/// Identifies one dropout mask: the same key always yields the same mask.
///
/// `op` distinguishes dropout sites inside a model and `step` distinguishes
/// successive forward passes (including the two passes of a consistency
/// penalty).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DropoutKey {
    pub seed: u64,
    pub op: u64,
    pub step: u64,
}

impl DropoutKey {
    pub fn new(seed: u64, op: u64, step: u64) -> Self {
        Self { seed, op, step }
    }

    pub fn with_op(self, op: u64) -> Self {
        Self { op, ..self }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.op.to_le_bytes());
        seed[16..24].copy_from_slice(&self.step.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }
}

impl Tensor {
    /// Inverted dropout. In training mode every element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`;
    /// otherwise the input passes through unchanged.
    pub fn dropout(&self, rate: f64, key: DropoutKey, training: bool) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let v = self.value_rc();
        let keep = 1.0 / (1.0 - rate);
        let mut rng = key.rng();
        let mask: Vec<f64> = (0..v.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = self.tape.constant(Array::from_parts(v.shape().to_vec(), mask));
        self.mul(&mask)
    }
}

#[cfg(test)]
mod tests {
    use super::DropoutKey;
    use crate::{Array, Tape, TensorError};

    #[test]
    fn zero_rate_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![1.0, -2.0, 3.0]));
        let key = DropoutKey::new(1, 2, 3);
        for training in [true, false] {
            assert_eq!(x.dropout(0.0, key, training).unwrap().value(), x.value());
        }
    }

    #[test]
    fn eval_mode_passes_through() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![1.0, -2.0, 3.0]));
        let y = x.dropout(0.9, DropoutKey::new(7, 0, 0), false).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn half_rate_preserves_mean() {
        let tape = Tape::new();
        let x = tape.constant(Array::full(vec![100_000], 1.0));
        let y = x.dropout(0.5, DropoutKey::new(42, 1, 0), true).unwrap().value();
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn same_key_same_mask() {
        let tape = Tape::new();
        let x = tape.constant(Array::full(vec![64], 1.0));
        let key = DropoutKey::new(3, 4, 5);
        let a = x.dropout(0.3, key, true).unwrap().value();
        let b = x.dropout(0.3, key, true).unwrap().value();
        let c = x.dropout(0.3, DropoutKey { step: 6, ..key }, true).unwrap().value();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rate_out_of_range() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![1.0]));
        for rate in [-0.1, 1.0, 1.5] {
            assert!(matches!(
                x.dropout(rate, DropoutKey::new(0, 0, 0), true),
                Err(TensorError::Config(_))
            ));
        }
    }
}
