//! Elementwise arithmetic with trailing-axis broadcasting.

use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tape::Tensor;

/// Source element of every output element for one broadcast operand.
enum SourceMap {
    /// The operand already has the output shape.
    Same,
    /// The operand matches a trailing block of the output shape.
    Cyclic(usize),
    /// The operand matches a leading block; trailing axes are broadcast.
    Blocked(usize),
    /// Anything else, as an explicit offset table.
    Table(Vec<usize>),
}

impl SourceMap {
    fn new(src: &[usize], out: &[usize]) -> Self {
        let n = out.len();
        let mut padded = vec![1; n - src.len()];
        padded.extend_from_slice(src);
        if padded == out {
            return SourceMap::Same;
        }
        let lead_ones = padded.iter().take_while(|&&d| d == 1).count();
        if (lead_ones..=n).any(|k| padded[k..] == out[k..] && padded[..k].iter().all(|&d| d == 1)) {
            return SourceMap::Cyclic(src.iter().product());
        }
        let trail_ones = padded.iter().rev().take_while(|&&d| d == 1).count();
        let k = n - trail_ones;
        if padded[..k] == out[..k] {
            return SourceMap::Blocked(out[k..].iter().product());
        }
        SourceMap::Table(source_indices(src, out))
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            SourceMap::Same => i,
            SourceMap::Cyclic(len) => i % len,
            SourceMap::Blocked(div) => i / div,
            SourceMap::Table(idx) => idx[i],
        }
    }
}

/// Index plan mapping every output element to its source element in each
/// broadcast operand.
struct Broadcast {
    shape: Vec<usize>,
    lhs: SourceMap,
    rhs: SourceMap,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Source offsets of every output element for an operand of shape `src`
/// broadcast to `out`.
fn source_indices(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let pad = n - src.len();
    let mut strides = vec![0usize; n];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + pad] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let total: usize = out.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut offset = 0usize;
    for _ in 0..total {
        idx.push(offset);
        for ax in (0..n).rev() {
            counter[ax] += 1;
            offset += strides[ax];
            if counter[ax] < out[ax] {
                break;
            }
            offset -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    idx
}

impl Broadcast {
    fn plan(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let shape = broadcast_shape(a, b).ok_or_else(|| TensorError::shape(op, a, b))?;
        Ok(Self {
            lhs: SourceMap::new(a, &shape),
            rhs: SourceMap::new(b, &shape),
            shape,
        })
    }

    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

fn reduce_into(len: usize, map: &SourceMap, grad: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, g) in grad.enumerate() {
        out[map.at(i)] += g;
    }
    out
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: BinOp, name: &'static str) -> Result<Tensor> {
        self.same_tape(other)?;
        let a = self.value_rc();
        let b = other.value_rc();
        if a.shape() == b.shape() {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                })
                .collect();
            let out = Array::from_parts(a.shape().to_vec(), data);
            return Ok(self.tape.record(
                out,
                &[self, other],
                Box::new(move |ctx| {
                    let g = ctx.grad;
                    let ga = ctx.needs(0).then(|| match op {
                        BinOp::Add | BinOp::Sub => g.to_vec(),
                        BinOp::Mul => g.iter().zip(ctx.inputs[1].data()).map(|(g, y)| g * y).collect(),
                    });
                    let gb = ctx.needs(1).then(|| match op {
                        BinOp::Add => g.to_vec(),
                        BinOp::Sub => g.iter().map(|g| -g).collect(),
                        BinOp::Mul => g.iter().zip(ctx.inputs[0].data()).map(|(g, x)| g * x).collect(),
                    });
                    vec![ga, gb]
                }),
            ));
        }

        let plan = Broadcast::plan(name, a.shape(), b.shape())?;
        let (ad, bd) = (a.data(), b.data());
        let data = (0..plan.len())
            .map(|k| (plan.lhs.at(k), plan.rhs.at(k)))
            .map(|(i, j)| match op {
                BinOp::Add => ad[i] + bd[j],
                BinOp::Sub => ad[i] - bd[j],
                BinOp::Mul => ad[i] * bd[j],
            })
            .collect();
        let out = Array::from_parts(plan.shape.clone(), data);
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(move |ctx| {
                let g = ctx.grad;
                let (x, y) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx.needs(0).then(|| {
                    let terms = g.iter().enumerate().map(|(k, g)| match op {
                        BinOp::Add | BinOp::Sub => *g,
                        BinOp::Mul => g * y[plan.rhs.at(k)],
                    });
                    reduce_into(x.len(), &plan.lhs, terms)
                });
                let gb = ctx.needs(1).then(|| {
                    let terms = g.iter().enumerate().map(|(k, g)| match op {
                        BinOp::Add => *g,
                        BinOp::Sub => -g,
                        BinOp::Mul => g * x[plan.lhs.at(k)],
                    });
                    reduce_into(y.len(), &plan.rhs, terms)
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Elementwise sum; shapes broadcast numpy-style from the trailing axis.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Mul, "mul")
    }

    /// Multiplies by a constant factor.
    pub fn scale(&self, factor: f64) -> Tensor {
        let out = self.value_rc().map(|v| v * factor);
        self.tape.record(
            out,
            &[self],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|g| g * factor).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out = self.value_rc().map(|v| v + c);
        self.tape
            .record(out, &[self], Box::new(|ctx| vec![Some(ctx.grad.to_vec())]))
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: fn(x: f64, y: f64) -> f64) -> Tensor {
        let out = self.value_rc().map(f);
        self.tape.record(
            out,
            &[self],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let y = ctx.output.data();
                let g = (0..x.len()).map(|i| ctx.grad[i] * df(x[i], y[i])).collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Natural log of `max(x, floor)`; no gradient flows where the floor binds.
    pub fn log_clamped(&self, floor: f64) -> Tensor {
        let out = self.value_rc().map(|v| v.max(floor).ln());
        self.tape.record(
            out,
            &[self],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let g = x
                    .iter()
                    .zip(ctx.grad)
                    .map(|(&x, g)| if x > floor { g / x } else { 0.0 })
                    .collect();
                vec![Some(g)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::{broadcast_shape, source_indices, SourceMap};
    use crate::{Array, Tape};

    #[test]
    fn source_maps_agree_with_explicit_tables() {
        let cases: [(&[usize], &[usize]); 9] = [
            (&[2, 3, 4], &[4]),
            (&[2, 3, 4], &[3, 4]),
            (&[2, 3, 4], &[2, 3, 1]),
            (&[2, 3, 4], &[2, 1, 1]),
            (&[2, 3, 4], &[1, 3, 1]),
            (&[2, 3, 4], &[2, 1, 4]),
            (&[3, 4], &[1]),
            (&[3, 4], &[3, 4]),
            (&[4], &[2, 3, 4]),
        ];
        for (a, b) in cases {
            let out = broadcast_shape(a, b).unwrap();
            for src in [a, b] {
                let table = source_indices(src, &out);
                let map = SourceMap::new(src, &out);
                for (i, &j) in table.iter().enumerate() {
                    assert_eq!(map.at(i), j, "{src:?} -> {out:?} at {i}");
                }
            }
        }
    }

    #[test]
    fn broadcast_row_vector() {
        let tape = Tape::new();
        let a = tape.param(Array::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.param(Array::from_vec(vec![10., 20., 30.]));
        let c = a.add(&b).unwrap();
        assert_eq!(c.value().data(), &[11., 22., 33., 14., 25., 36.]);
        tape.backward(&c.sum()).unwrap();
        assert_eq!(b.grad().unwrap().data(), &[2., 2., 2.]);
    }

    #[test]
    fn broadcast_column_multiply() {
        let tape = Tape::new();
        let a = tape.param(Array::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let g = tape.param(Array::new(vec![2, 1], vec![2., -1.]).unwrap());
        let c = a.mul(&g).unwrap();
        assert_eq!(c.value().data(), &[2., 4., -3., -4.]);
        tape.backward(&c.sum()).unwrap();
        assert_eq!(g.grad().unwrap().data(), &[3., 7.]);
        assert_eq!(a.grad().unwrap().data(), &[2., 2., -1., -1.]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let tape = Tape::new();
        let a = tape.constant(Array::zeros(vec![2, 3]));
        let b = tape.constant(Array::zeros(vec![2]));
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn log_clamped_blocks_gradient_below_floor() {
        let tape = Tape::new();
        let x = tape.param(Array::from_vec(vec![0.0, 2.0]));
        let y = x.log_clamped(1e-12);
        assert!((y.value().data()[0] - 1e-12f64.ln()).abs() < 1e-12);
        tape.backward(&y.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 0.5]);
    }
}
