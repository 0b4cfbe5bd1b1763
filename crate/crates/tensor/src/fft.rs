//! Real-input discrete Fourier transform pair.
//!
//! Forward transforms are unnormalized; inverse transforms carry the `1/d`
//! factor so that `irfft(rfft(x), d) == x`. The complex kernels come from
//! `rustfft`; this module adds the half-spectrum bookkeeping and the adjoints
//! needed for differentiation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, TensorError};

/// Half spectrum of a real signal of even length `d`: bins `0..=d/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    bins: Vec<Complex64>,
}

impl ComplexSpectrum {
    /// Wraps `bins`, zeroing the imaginary parts of the DC and Nyquist bins.
    pub fn new(mut bins: Vec<Complex64>) -> Result<Self> {
        if bins.len() < 2 {
            return Err(TensorError::Contract(format!(
                "a half spectrum needs at least 2 bins, got {}",
                bins.len()
            )));
        }
        let last = bins.len() - 1;
        bins[0].im = 0.0;
        bins[last].im = 0.0;
        Ok(Self { bins })
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Length of the real signal this spectrum describes.
    pub fn signal_len(&self) -> usize {
        2 * (self.bins.len() - 1)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }
}

/// Cached forward/inverse complex plans for one even length.
pub(crate) struct RealFft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<RealFft>>> = RefCell::new(HashMap::new());
}

impl RealFft {
    pub(crate) fn get(len: usize) -> Result<Rc<RealFft>> {
        if len < 2 || !len.is_multiple_of(2) {
            return Err(TensorError::Config(format!(
                "real FFT length must be even and at least 2, got {len}"
            )));
        }
        Ok(PLANS.with(|plans| {
            Rc::clone(plans.borrow_mut().entry(len).or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Rc::new(RealFft {
                    len,
                    forward: planner.plan_fft_forward(len),
                    inverse: planner.plan_fft_inverse(len),
                })
            }))
        }))
    }

    pub(crate) fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    /// Forward transform of `x` into `out` (`d/2 + 1` bins).
    pub(crate) fn forward(&self, x: &[f64], out: &mut [Complex64]) {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let nb = self.bins();
        out.copy_from_slice(&buf[..nb]);
        out[0].im = 0.0;
        out[nb - 1].im = 0.0;
    }

    /// Inverse transform with `1/d` scaling. Imaginary parts of the DC and
    /// Nyquist bins are ignored.
    pub(crate) fn inverse(&self, bins: &[Complex64], out: &mut [f64]) {
        let d = self.len;
        let nb = self.bins();
        let mut buf = vec![Complex64::new(0.0, 0.0); d];
        buf[0] = Complex64::new(bins[0].re, 0.0);
        buf[nb - 1] = Complex64::new(bins[nb - 1].re, 0.0);
        for k in 1..nb - 1 {
            buf[k] = bins[k];
            buf[d - k] = bins[k].conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / d as f64;
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re * scale;
        }
    }

    /// Adjoint of [`RealFft::forward`]: maps upstream gradients on the bins
    /// (real and imaginary parts treated as independent outputs) back onto
    /// the signal.
    pub(crate) fn forward_adjoint(&self, grad_bins: &[Complex64], out: &mut [f64]) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        buf[..grad_bins.len()].copy_from_slice(grad_bins);
        self.inverse.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re;
        }
    }

    /// Adjoint of [`RealFft::inverse`]: interior bins carry weight `2/d`,
    /// the DC and Nyquist bins `1/d` on the real part only.
    pub(crate) fn inverse_adjoint(&self, grad: &[f64], out: &mut [Complex64]) {
        let d = self.len as f64;
        let nb = self.bins();
        let mut buf: Vec<Complex64> = grad.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for k in 0..nb {
            out[k] = if k == 0 || k == nb - 1 {
                Complex64::new(buf[k].re / d, 0.0)
            } else {
                buf[k] * (2.0 / d)
            };
        }
    }
}

/// Unnormalized half-spectrum transform of a real signal of even length.
pub fn rfft(x: &[f64]) -> Result<ComplexSpectrum> {
    let plan = RealFft::get(x.len())?;
    let mut bins = vec![Complex64::new(0.0, 0.0); plan.bins()];
    plan.forward(x, &mut bins);
    Ok(ComplexSpectrum { bins })
}

/// Inverse of [`rfft`] for a signal of length `d`.
pub fn irfft(spectrum: &ComplexSpectrum, d: usize) -> Result<Vec<f64>> {
    let plan = RealFft::get(d)?;
    if spectrum.len() != plan.bins() {
        return Err(TensorError::shape("irfft", &[spectrum.len()], &[plan.bins()]));
    }
    let mut out = vec![0.0; d];
    plan.inverse(spectrum.bins(), &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let d = x.len();
        (0..=d / 2)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (n, &v)| {
                    let theta = -2.0 * PI * (k * n) as f64 / d as f64;
                    acc + Complex64::new(v * theta.cos(), v * theta.sin())
                })
            })
            .collect()
    }

    #[test]
    fn constant_signal_is_dc_only() {
        let s = rfft(&[1.5; 8]).unwrap();
        assert_eq!(s.len(), 5);
        assert!((s.bins()[0] - Complex64::new(12.0, 0.0)).norm() < 1e-12);
        assert!(s.bins()[1..].iter().all(|b| b.norm() < 1e-12));
    }

    #[test]
    fn cosine_lands_in_its_bin() {
        let x: Vec<f64> = (0..8).map(|n| (2.0 * PI * 2.0 * n as f64 / 8.0).cos()).collect();
        let s = rfft(&x).unwrap();
        for (k, b) in s.bins().iter().enumerate() {
            let expect = if k == 2 { 4.0 } else { 0.0 };
            assert!((b.re - expect).abs() < 1e-12 && b.im.abs() < 1e-12, "bin {k}: {b}");
        }
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
        let fast = rfft(&x).unwrap();
        for (a, b) in fast.bins().iter().zip(naive_dft(&x)) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn dc_spectrum_inverts_to_constant() {
        let mut bins = vec![Complex64::new(0.0, 0.0); 5];
        bins[0] = Complex64::new(8.0 * 0.7, 0.0);
        let x = irfft(&ComplexSpectrum::new(bins).unwrap(), 8).unwrap();
        assert!(x.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn single_bin_inverts_to_cosine() {
        let mut bins = vec![Complex64::new(0.0, 0.0); 5];
        bins[2] = Complex64::new(4.0, 0.0);
        let x = irfft(&ComplexSpectrum::new(bins).unwrap(), 8).unwrap();
        for (n, v) in x.iter().enumerate() {
            assert!((v - (2.0 * PI * 2.0 * n as f64 / 8.0).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_length_is_rejected() {
        assert!(matches!(rfft(&[1.0; 7]), Err(TensorError::Config(_))));
    }

    #[test]
    fn wrong_bin_count_is_rejected() {
        let s = rfft(&[0.0; 8]).unwrap();
        assert!(matches!(irfft(&s, 16), Err(TensorError::Shape { .. })));
    }
}
