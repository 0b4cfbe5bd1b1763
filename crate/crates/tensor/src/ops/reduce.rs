use crate::array::{axis_extents, Array};
use crate::error::{Result, TensorError};
use crate::tape::Tensor;

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis < shape.len() {
        Ok(())
    } else {
        Err(TensorError::Contract(format!(
            "axis {axis} out of range for shape {shape:?}"
        )))
    }
}

impl Tensor {
    pub fn sum(&self) -> Tensor {
        let v = self.value_rc();
        let total = v.data().iter().sum();
        let n = v.len();
        self.tape.record(
            Array::scalar(total),
            &[self],
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.value_rc().len();
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let v = self.value_rc();
        check_axis(v.shape(), axis)?;
        let (outer, len, inner) = axis_extents(v.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &v.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        Ok(self.tape.record(
            Array::from_parts(shape, out),
            &[self],
            Box::new(move |ctx| {
                let mut g = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &ctx.grad[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        g[(o * len + a) * inner..(o * len + a + 1) * inner].copy_from_slice(src);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Softmax along `axis`; the axis maximum is subtracted before
    /// exponentiation.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let v = self.value_rc();
        check_axis(v.shape(), axis)?;
        let (outer, len, inner) = axis_extents(v.shape(), axis);
        let x = v.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| x[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..len {
                    let e = (x[at(a)] - max).exp();
                    y[at(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    y[at(a)] /= total;
                }
            }
        }
        Ok(self.tape.record(
            Array::from_parts(v.shape().to_vec(), y),
            &[self],
            Box::new(move |ctx| {
                let (y, g) = (ctx.output.data(), ctx.grad);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                        for a in 0..len {
                            dx[at(a)] = y[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Array, Tape};

    #[test]
    fn softmax_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![1.0; 4]));
        assert_eq!(x.softmax(0).unwrap().value().data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_closed_form() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![0.0, 3f64.ln()]));
        let y = x.softmax(0).unwrap().value();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let tape = Tape::new();
        let x = tape.constant(Array::from_vec(vec![1000.0, 0.0]));
        let y = x.softmax(0).unwrap().value();
        assert_eq!(y.data()[0], 1.0);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-300);
        assert!(y.is_finite());
    }

    #[test]
    fn softmax_over_leading_axis() {
        let tape = Tape::new();
        let x = tape.constant(Array::new(vec![2, 2], vec![0.0, 5.0, 0.0, 5.0]).unwrap());
        let y = x.softmax(0).unwrap().value();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(x.softmax(2).is_err());
    }

    #[test]
    fn sum_axis_removes_axis() {
        let tape = Tape::new();
        let x = tape.param(Array::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let s = x.sum_axis(0).unwrap();
        assert_eq!(s.shape(), vec![3]);
        assert_eq!(s.value().data(), &[5., 7., 9.]);
        let s1 = x.sum_axis(1).unwrap();
        assert_eq!(s1.value().data(), &[6., 15.]);
        let w = tape.constant(Array::from_vec(vec![1., 2., 3.]));
        tape.backward(&s.mul(&w).unwrap().sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1., 2., 3., 1., 2., 3.]);
    }
}
