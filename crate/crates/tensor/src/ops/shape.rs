use crate::array::{axis_extents, Array};
use crate::error::{Result, TensorError};
use crate::tape::Tensor;

impl Tensor {
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let out = self.value_rc().reshape(shape)?;
        Ok(self
            .tape
            .record(out, &[self], Box::new(|ctx| vec![Some(ctx.grad.to_vec())])))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let v = self.value_rc();
        let shape = v.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::Contract(format!(
                "slice {start}..{} on axis {axis} out of range for shape {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = axis_extents(shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        Ok(self.tape.record(
            Array::from_parts(new_shape, out),
            &[self],
            Box::new(move |ctx| {
                let mut g = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    g[base..base + len * inner]
                        .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let values: Vec<_> = parts.iter().map(Tensor::value_rc).collect();
        let base = values[0].shape();
        if axis >= base.len() {
            return Err(TensorError::Contract(format!(
                "axis {axis} out of range for shape {base:?}"
            )));
        }
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p)?;
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape("concat", base, s));
            }
        }
        let (outer, _, inner) = axis_extents(base, axis);
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(first.tape.record(
            Array::from_parts(shape, out),
            &refs,
            Box::new(move |ctx| {
                let mut grads: Vec<Vec<f64>> =
                    lens.iter().map(|l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (g, &l) in grads.iter_mut().zip(&lens) {
                        g.extend_from_slice(&ctx.grad[pos..pos + l * inner]);
                        pos += l * inner;
                    }
                }
                grads
                    .into_iter()
                    .enumerate()
                    .map(|(i, g)| ctx.needs(i).then_some(g))
                    .collect()
            }),
        ))
    }

    /// Sliding windows of `size` elements every `step` along the last axis:
    /// `[.., t]` becomes `[.., n, size]` with `n = (t - size) / step + 1`.
    pub fn unfold(&self, size: usize, step: usize) -> Result<Tensor> {
        let v = self.value_rc();
        let shape = v.shape();
        let t = *shape.last().unwrap_or(&0);
        if size == 0 || step == 0 || size > t {
            return Err(TensorError::Config(format!(
                "cannot unfold length {t} into windows of {size} every {step}"
            )));
        }
        let n = (t - size) / step + 1;
        let outer = v.len() / t;
        let mut out = Vec::with_capacity(outer * n * size);
        for o in 0..outer {
            for w in 0..n {
                let s = o * t + w * step;
                out.extend_from_slice(&v.data()[s..s + size]);
            }
        }
        let mut new_shape = shape[..shape.len() - 1].to_vec();
        new_shape.extend([n, size]);
        Ok(self.tape.record(
            Array::from_parts(new_shape, out),
            &[self],
            Box::new(move |ctx| {
                let mut g = vec![0.0; outer * t];
                let mut pos = 0;
                for o in 0..outer {
                    for w in 0..n {
                        let s = o * t + w * step;
                        for (dst, src) in g[s..s + size].iter_mut().zip(&ctx.grad[pos..pos + size]) {
                            *dst += src;
                        }
                        pos += size;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Array, Tape, Tensor};

    #[test]
    fn unfold_overlapping_patches() {
        let tape = Tape::new();
        let x = tape.param(Array::from_vec((0..8).map(f64::from).collect()));
        let p = x.unfold(4, 2).unwrap();
        assert_eq!(p.shape(), vec![3, 4]);
        assert_eq!(
            p.value().data(),
            &[0., 1., 2., 3., 2., 3., 4., 5., 4., 5., 6., 7.]
        );
        tape.backward(&p.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1., 1., 2., 2., 2., 2., 1., 1.]);
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let tape = Tape::new();
        let a = tape.param(Array::new(vec![2, 1, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = tape.param(Array::new(vec![2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap());
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 3, 2]);
        assert_eq!(
            c.value().data(),
            &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]
        );
        let back = c.slice(1, 1, 2).unwrap();
        assert_eq!(back.value(), b.value());
        tape.backward(&back.sum()).unwrap();
        assert!(a.grad().is_none() || a.grad().unwrap().data().iter().all(|&g| g == 0.0));
        assert_eq!(b.grad().unwrap().data(), &[1.0; 8]);
    }

    #[test]
    fn reshape_rejects_wrong_size() {
        let tape = Tape::new();
        let a = tape.constant(Array::zeros(vec![2, 3]));
        assert!(a.reshape(vec![4]).is_err());
        assert_eq!(a.reshape(vec![3, 2]).unwrap().shape(), vec![3, 2]);
    }
}
