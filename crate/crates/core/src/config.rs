use crate::error::{DtafError, Result};

/// Architecture and loss hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Lookback length `T_in`.
    pub input_len: usize,
    /// Forecast horizon `F`.
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
    /// Embedding width; must be even so the half spectrum has `d/2 + 1` bins.
    pub d_model: usize,
    pub experts: usize,
    /// Affine layers per expert.
    pub expert_depth: usize,
    /// Spectral bins kept per patch.
    pub topk: usize,
    /// Moving-average kernel of the trend/seasonal split.
    pub pool_kernel: usize,
    pub dropout: f64,
    /// Weight of the residual-divergence penalty.
    pub alpha: f64,
    /// Weight of the two-pass consistency penalty.
    pub beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: 96,
            horizon: 96,
            patch_len: 16,
            stride: 8,
            d_model: 64,
            experts: 4,
            expert_depth: 2,
            topk: 4,
            pool_kernel: 3,
            dropout: 0.1,
            alpha: 0.1,
            beta: 0.1,
        }
    }
}

impl ModelConfig {
    /// Number of patches `N = floor((T_in - L) / S) + 1`.
    pub fn num_patches(&self) -> usize {
        if self.patch_len > self.input_len || self.stride == 0 {
            return 0;
        }
        (self.input_len - self.patch_len) / self.stride + 1
    }

    /// Number of half-spectrum bins, `d/2 + 1`.
    pub fn spectrum_bins(&self) -> usize {
        self.d_model / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DtafError::Config(msg));
        if self.input_len == 0 || self.horizon == 0 {
            return fail("input_len and horizon must be positive".into());
        }
        if self.patch_len == 0 || self.patch_len > self.input_len {
            return fail(format!(
                "patch_len must lie in 1..={}, got {}",
                self.input_len, self.patch_len
            ));
        }
        if self.stride == 0 {
            return fail("stride must be at least 1".into());
        }
        if self.num_patches() < 2 {
            return fail(format!(
                "input_len {} with patch_len {} and stride {} gives {} patch(es); at least 2 are needed",
                self.input_len,
                self.patch_len,
                self.stride,
                self.num_patches()
            ));
        }
        if self.d_model < 2 || !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model must be even and at least 2, got {}", self.d_model));
        }
        if self.topk == 0 || self.topk > self.spectrum_bins() {
            return fail(format!(
                "topk must lie in 1..={}, got {}",
                self.spectrum_bins(),
                self.topk
            ));
        }
        if self.experts == 0 || self.expert_depth == 0 {
            return fail("experts and expert_depth must be at least 1".into());
        }
        if self.pool_kernel == 0 || self.pool_kernel.is_multiple_of(2) {
            return fail(format!("pool_kernel must be odd, got {}", self.pool_kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!(
                "alpha and beta must be finite and non-negative, got {} and {}",
                self.alpha, self.beta
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_patches(), 11);
    }

    #[test]
    fn patch_count() {
        let cfg = ModelConfig {
            input_len: 8,
            patch_len: 4,
            stride: 2,
            ..Default::default()
        };
        assert_eq!(cfg.num_patches(), 3);
    }

    #[test]
    fn single_patch_is_rejected() {
        for stride in [1, 5, 100] {
            let cfg = ModelConfig {
                input_len: 16,
                patch_len: 16,
                stride,
                ..Default::default()
            };
            assert!(matches!(cfg.validate(), Err(DtafError::Config(_))));
        }
    }

    #[test]
    fn rejects_odd_width_and_bad_topk() {
        let odd = ModelConfig {
            d_model: 7,
            ..Default::default()
        };
        assert!(odd.validate().is_err());
        let big_k = ModelConfig {
            d_model: 8,
            topk: 6,
            ..Default::default()
        };
        assert!(big_k.validate().is_err());
        let full_k = ModelConfig {
            d_model: 8,
            topk: 5,
            ..Default::default()
        };
        full_k.validate().unwrap();
    }
}
