use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tape::Tensor;

/// Lower bound applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

impl Tensor {
    /// `KL(p ‖ q) = Σ p (ln p − ln q)` over the last axis, averaged over all
    /// leading positions. Log arguments are clamped at [`LOG_FLOOR`], so a
    /// zero entry of `p` contributes nothing.
    pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<Tensor> {
        p.same_tape(q)?;
        let (pv, qv) = (p.value_rc(), q.value_rc());
        if pv.shape() != qv.shape() || pv.ndim() == 0 {
            return Err(TensorError::shape("kl_divergence", pv.shape(), qv.shape()));
        }
        let width = *pv.shape().last().unwrap();
        let rows = pv.len() / width;
        let total: f64 = pv
            .data()
            .iter()
            .zip(qv.data())
            .map(|(&a, &b)| a * (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()))
            .sum();
        let inv_rows = 1.0 / rows as f64;
        Ok(p.tape.record(
            Array::scalar(total * inv_rows),
            &[p, q],
            Box::new(move |ctx| {
                let scale = ctx.grad[0] * inv_rows;
                let (pd, qd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let gp = ctx.needs(0).then(|| {
                    pd.iter()
                        .zip(qd)
                        .map(|(&a, &b)| {
                            let own = if a > LOG_FLOOR { 1.0 } else { 0.0 };
                            scale * (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln() + own)
                        })
                        .collect()
                });
                let gq = ctx.needs(1).then(|| {
                    pd.iter()
                        .zip(qd)
                        .map(|(&a, &b)| if b > LOG_FLOOR { -scale * a / b } else { 0.0 })
                        .collect()
                });
                vec![gp, gq]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Array, Tape, Tensor};

    fn kl(p: &[f64], q: &[f64]) -> f64 {
        let tape = Tape::new();
        let p = tape.constant(Array::from_vec(p.to_vec()));
        let q = tape.constant(Array::from_vec(q.to_vec()));
        Tensor::kl_divergence(&p, &q).unwrap().item()
    }

    #[test]
    fn identical_distributions() {
        assert_eq!(kl(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn point_mass_against_uniform() {
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn skewed_pair_closed_form() {
        let expect = 0.9 * 9f64.ln() + 0.1 * (1.0f64 / 9.0).ln();
        assert!((kl(&[0.9, 0.1], &[0.1, 0.9]) - expect).abs() < 1e-12);
        assert!((expect - 1.7578).abs() < 1e-4);
    }

    #[test]
    fn averages_over_leading_rows() {
        let tape = Tape::new();
        let p = tape.constant(Array::new(vec![2, 2], vec![1.0, 0.0, 0.5, 0.5]).unwrap());
        let q = tape.constant(Array::new(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap());
        let v = Tensor::kl_divergence(&p, &q).unwrap().item();
        assert!((v - 2f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let tape = Tape::new();
        let p = tape.constant(Array::from_vec(vec![0.5, 0.5]));
        let q = tape.constant(Array::from_vec(vec![1.0 / 3.0; 3]));
        assert!(Tensor::kl_divergence(&p, &q).is_err());
    }
}
