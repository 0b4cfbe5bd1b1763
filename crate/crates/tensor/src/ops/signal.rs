use num_complex::Complex64;

use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::fft::RealFft;
use crate::tape::Tensor;

impl Tensor {
    /// Moving average over the last axis with edge-replicated padding of
    /// `(kernel - 1) / 2` on each side; output length equals input length.
    pub fn avg_pool_1d_replicate(&self, kernel: usize) -> Result<Tensor> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(TensorError::Config(format!(
                "pooling kernel must be a positive odd integer, got {kernel}"
            )));
        }
        let v = self.value_rc();
        let d = *v.shape().last().ok_or_else(|| {
            TensorError::Contract("avg_pool_1d_replicate on a scalar".into())
        })?;
        let half = (kernel / 2) as isize;
        let inv = 1.0 / kernel as f64;
        let source = move |i: usize, j: isize| (i as isize + j).clamp(0, d as isize - 1) as usize;
        let mut out = vec![0.0; v.len()];
        for (row_in, row_out) in v.data().chunks(d).zip(out.chunks_mut(d)) {
            for (i, o) in row_out.iter_mut().enumerate() {
                *o = (-half..=half).map(|j| row_in[source(i, j)]).sum::<f64>() * inv;
            }
        }
        Ok(self.tape.record(
            Array::from_parts(v.shape().to_vec(), out),
            &[self],
            Box::new(move |ctx| {
                let mut g = vec![0.0; ctx.grad.len()];
                for (g_out, g_in) in ctx.grad.chunks(d).zip(g.chunks_mut(d)) {
                    for (i, &go) in g_out.iter().enumerate() {
                        for j in -half..=half {
                            g_in[source(i, j)] += go * inv;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Half-spectrum transform of the last axis: `[.., d]` becomes
    /// `[.., d/2 + 1, 2]` holding (real, imaginary) pairs.
    pub fn rfft(&self) -> Result<Tensor> {
        let v = self.value_rc();
        let d = *v.shape().last().unwrap_or(&0);
        let plan = RealFft::get(d)?;
        let nb = plan.bins();
        let rows = v.len() / d;
        let mut out = Vec::with_capacity(rows * nb * 2);
        let mut bins = vec![Complex64::new(0.0, 0.0); nb];
        for row in v.data().chunks(d) {
            plan.forward(row, &mut bins);
            out.extend(bins.iter().flat_map(|c| [c.re, c.im]));
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = nb;
        shape.push(2);
        Ok(self.tape.record(
            Array::from_parts(shape, out),
            &[self],
            Box::new(move |ctx| {
                let mut g = vec![0.0; rows * d];
                let mut grad_bins = vec![Complex64::new(0.0, 0.0); nb];
                for (gb, gx) in ctx.grad.chunks(2 * nb).zip(g.chunks_mut(d)) {
                    for (c, pair) in grad_bins.iter_mut().zip(gb.chunks(2)) {
                        *c = Complex64::new(pair[0], pair[1]);
                    }
                    plan.forward_adjoint(&grad_bins, gx);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Inverse of [`Tensor::rfft`]: `[.., d/2 + 1, 2]` becomes `[.., d]`.
    pub fn irfft(&self, d: usize) -> Result<Tensor> {
        let v = self.value_rc();
        let plan = RealFft::get(d)?;
        let nb = plan.bins();
        let s = v.shape();
        if s.len() < 2 || s[s.len() - 1] != 2 || s[s.len() - 2] != nb {
            return Err(TensorError::shape("irfft", s, &[nb, 2]));
        }
        let rows = v.len() / (2 * nb);
        let mut out = vec![0.0; rows * d];
        let mut bins = vec![Complex64::new(0.0, 0.0); nb];
        for (src, dst) in v.data().chunks(2 * nb).zip(out.chunks_mut(d)) {
            for (c, pair) in bins.iter_mut().zip(src.chunks(2)) {
                *c = Complex64::new(pair[0], pair[1]);
            }
            plan.inverse(&bins, dst);
        }
        let mut shape = s[..s.len() - 1].to_vec();
        *shape.last_mut().unwrap() = d;
        Ok(self.tape.record(
            Array::from_parts(shape, out),
            &[self],
            Box::new(move |ctx| {
                let mut g = Vec::with_capacity(rows * nb * 2);
                let mut grad_bins = vec![Complex64::new(0.0, 0.0); nb];
                for gx in ctx.grad.chunks(d) {
                    plan.inverse_adjoint(gx, &mut grad_bins);
                    g.extend(grad_bins.iter().flat_map(|c| [c.re, c.im]));
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Array, Tape, TensorError};

    #[test]
    fn pooling_constant_is_constant() {
        let tape = Tape::new();
        let x = tape.constant(Array::full(vec![2, 5], 3.25));
        for k in [1, 3, 5, 7] {
            let y = x.avg_pool_1d_replicate(k).unwrap().value();
            assert!(y.data().iter().all(|&v| v == 3.25), "kernel {k}");
        }
    }

    #[test]
    fn pooling_replicates_edges() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![1., 2., 3.]));
        let y = x.avg_pool_1d_replicate(3).unwrap().value();
        let expect = [4.0 / 3.0, 2.0, 8.0 / 3.0];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pooling_kernel_one_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![0.3, -1.0, 2.0, 5.0]));
        assert_eq!(x.avg_pool_1d_replicate(1).unwrap().value(), x.value());
    }

    #[test]
    fn pooling_even_kernel_is_config_error() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![1., 2., 3.]));
        assert!(matches!(
            x.avg_pool_1d_replicate(2),
            Err(TensorError::Config(_))
        ));
    }

    #[test]
    fn spectrum_layout_and_round_trip() {
        let tape = Tape::new();
        let x = tape.constant(
            Array::new(vec![2, 8], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
        );
        let s = x.rfft().unwrap();
        assert_eq!(s.shape(), vec![2, 5, 2]);
        let back = s.irfft(8).unwrap();
        assert!(back.value().max_abs_diff(&x.value()) < 1e-12);
    }

    #[test]
    fn irfft_rejects_wrong_bin_count() {
        let tape = Tape::new();
        let s = tape.constant(Array::zeros(vec![4, 2]));
        assert!(matches!(s.irfft(8), Err(TensorError::Shape { .. })));
    }
}
