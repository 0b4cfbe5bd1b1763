use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tape::Tensor;

/// Strided view of a row-major matrix inside a slice.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    offset: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a> View<'a> {
    fn rows(data: &'a [f64], offset: usize, cols: usize) -> Self {
        Self {
            data,
            offset,
            row_stride: cols,
            col_stride: 1,
        }
    }

    fn transposed(self) -> Self {
        Self {
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `out[offset..] (m×n, row-major) = a (m×k) · b (k×n)`.
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, out: &mut [f64], offset: usize) {
    assert!(a.last_index(m, k) < a.data.len());
    assert!(b.last_index(k, n) < b.data.len());
    assert!(offset + m * n <= out.len());
    // SAFETY: the asserts above bound every element dgemm reads from `a`
    // and `b` and writes to `out`; the three regions do not alias because
    // `out` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            0.0,
            out.as_mut_ptr().add(offset),
            n as isize,
            1,
        );
    }
}

/// Plain (non-recorded) matrix product of two 2-D arrays.
pub fn matmul_arrays(a: &Array, b: &Array) -> Result<Array> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(TensorError::shape("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        View::rows(a.data(), 0, k),
        View::rows(b.data(), 0, n),
        &mut out,
        0,
    );
    Ok(Array::from_parts(vec![m, n], out))
}

impl Tensor {
    /// Matrix product over the last two axes.
    ///
    /// `other` is either a single `[q, r]` matrix shared by every leading
    /// index of `self`, or has exactly the same leading axes as `self`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_tape(other)?;
        let a = self.value_rc();
        let b = other.value_rc();
        let (sa, sb) = (a.shape(), b.shape());
        let bad = || TensorError::shape("matmul", sa, sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(bad());
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (q2, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if q != q2 {
            return Err(bad());
        }
        let lead = &sa[..sa.len() - 2];
        let shared = sb.len() == 2;
        if !shared && &sb[..sb.len() - 2] != lead {
            return Err(bad());
        }
        let batch: usize = lead.iter().product();
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = r;

        let mut out = vec![0.0; batch * p * r];
        if shared {
            gemm(
                batch * p,
                q,
                r,
                View::rows(a.data(), 0, q),
                View::rows(b.data(), 0, r),
                &mut out,
                0,
            );
        } else {
            for i in 0..batch {
                gemm(
                    p,
                    q,
                    r,
                    View::rows(a.data(), i * p * q, q),
                    View::rows(b.data(), i * q * r, r),
                    &mut out,
                    i * p * r,
                );
            }
        }

        Ok(self.tape.record(
            Array::from_parts(shape, out),
            &[self, other],
            Box::new(move |ctx| {
                let (a, b, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                let ga = ctx.needs(0).then(|| {
                    let mut ga = vec![0.0; a.len()];
                    if shared {
                        let bt = View::rows(b, 0, r).transposed();
                        gemm(batch * p, r, q, View::rows(g, 0, r), bt, &mut ga, 0);
                    } else {
                        for i in 0..batch {
                            let bt = View::rows(b, i * q * r, r).transposed();
                            gemm(p, r, q, View::rows(g, i * p * r, r), bt, &mut ga, i * p * q);
                        }
                    }
                    ga
                });
                let gb = ctx.needs(1).then(|| {
                    let mut gb = vec![0.0; b.len()];
                    if shared {
                        let at = View::rows(a, 0, q).transposed();
                        gemm(q, batch * p, r, at, View::rows(g, 0, r), &mut gb, 0);
                    } else {
                        for i in 0..batch {
                            let at = View::rows(a, i * p * q, q).transposed();
                            gemm(q, p, r, at, View::rows(g, i * p * r, r), &mut gb, i * q * r);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let a = self.value_rc();
        let s = a.shape();
        if s.len() < 2 {
            return Err(TensorError::Contract(format!(
                "transpose needs at least 2 axes, got {s:?}"
            )));
        }
        let (p, q) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = a.len() / (p * q);
        let permute = move |src: &[f64], rows: usize, cols: usize| {
            let mut dst = vec![0.0; src.len()];
            for bi in 0..batch {
                let base = bi * rows * cols;
                for i in 0..rows {
                    for j in 0..cols {
                        dst[base + j * rows + i] = src[base + i * cols + j];
                    }
                }
            }
            dst
        };
        let mut shape = s.to_vec();
        let n = shape.len();
        shape.swap(n - 1, n - 2);
        let out = Array::from_parts(shape, permute(a.data(), p, q));
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |ctx| vec![Some(permute(ctx.grad, q, p))]),
        ))
    }
}
