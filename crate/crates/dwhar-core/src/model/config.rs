//! Model hyperparameters and their invariants.

use crate::error::{Error, Result};
use crate::util::fnv1a64;
use serde::{Deserialize, Serialize};

/// Architecture hyperparameters. Field names use descriptive words; the
/// conventional single letters are noted per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of sensor units (N).
    pub n_sensors: usize,
    /// Variables (modality axes) per sensor (M).
    pub m_vars: usize,
    /// Window length in time steps (L).
    pub window_len: usize,
    /// Number of activity classes (C).
    pub n_classes: usize,
    /// Embedding channels per variable (D).
    pub d_embed: usize,
    /// Embedding convolution kernel size (P).
    pub mse_kernel: usize,
    /// Embedding convolution stride (S).
    pub mse_stride: usize,
    /// Local temporal extraction kernel size (odd).
    pub lte_kernel: usize,
    /// Point-wise fusion expansion factor.
    pub expand_ratio: usize,
    /// Attention heads (H).
    pub n_heads: usize,
    /// State dimension of the selective SSM.
    pub d_state: usize,
    /// Width of the SSM's causal local convolution.
    pub d_conv: usize,
    /// Inner-dimension expansion of the SSM block.
    pub mamba_expand: usize,
    /// Scale attention logits by 1/sqrt(head_dim) (off by default).
    pub attn_scaled: bool,
    /// Enable the global temporal aggregation (SSM) stage.
    pub enable_gta: bool,
    /// Enable the cross-sensor attention stage.
    pub enable_csi: bool,
    /// Run the SSM stage before attention (true) or after it (false).
    pub gta_before_csi: bool,
    /// Seed for parameter initialization (and default run seed).
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for a given data geometry: embedding kernel of one third of
    /// the window (rounded), non-overlapping stride equal to the kernel,
    /// 64 embedding channels, 8 heads.
    pub fn new(n_sensors: usize, m_vars: usize, window_len: usize, n_classes: usize) -> ModelConfig {
        let p = ((window_len as f64 / 3.0).round() as usize).max(1);
        ModelConfig {
            n_sensors,
            m_vars,
            window_len,
            n_classes,
            d_embed: 64,
            mse_kernel: p,
            mse_stride: p,
            lte_kernel: 3,
            expand_ratio: 2,
            n_heads: 8,
            d_state: 16,
            d_conv: 4,
            mamba_expand: 2,
            attn_scaled: false,
            enable_gta: true,
            enable_csi: true,
            gta_before_csi: true,
            seed: 0,
        }
    }

    /// The 5-sensor, 9-variable, 24-step, 18-class configuration used for
    /// efficiency accounting.
    pub fn opportunity_default() -> ModelConfig {
        ModelConfig::new(5, 9, 24, 18)
    }

    /// Smallest configuration exercising every stage; used by the gradient
    /// check suite (heads 2, channels 4, 3 classes).
    pub fn tiny() -> ModelConfig {
        let mut cfg = ModelConfig::new(2, 3, 9, 3);
        cfg.d_embed = 4;
        cfg.n_heads = 2;
        cfg.d_state = 2;
        cfg
    }

    /// Output time steps per window, `T = ceil(L / S)`.
    pub fn t_steps(&self) -> usize {
        self.window_len.div_ceil(self.mse_stride)
    }

    /// Right zero-padding that realizes `T = ceil(L / S)` for the embedding
    /// convolution.
    pub fn mse_pad_r(&self) -> usize {
        let t = self.t_steps();
        ((t - 1) * self.mse_stride + self.mse_kernel).saturating_sub(self.window_len)
    }

    /// Inner channel count of the SSM block.
    pub fn d_inner(&self) -> usize {
        self.mamba_expand * self.d_embed
    }

    /// Per-sensor token length for attention and the classifier, `D * T`.
    pub fn token_len(&self) -> usize {
        self.d_embed * self.t_steps()
    }

    /// Per-head feature size.
    pub fn head_dim(&self) -> usize {
        self.token_len() / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
            Ok(())
        }
        positive("n_sensors", self.n_sensors)?;
        positive("m_vars", self.m_vars)?;
        positive("window_len", self.window_len)?;
        positive("n_classes", self.n_classes)?;
        positive("d_embed", self.d_embed)?;
        positive("mse_kernel", self.mse_kernel)?;
        positive("mse_stride", self.mse_stride)?;
        positive("lte_kernel", self.lte_kernel)?;
        positive("expand_ratio", self.expand_ratio)?;
        positive("n_heads", self.n_heads)?;
        positive("d_state", self.d_state)?;
        positive("d_conv", self.d_conv)?;
        positive("mamba_expand", self.mamba_expand)?;
        if self.mse_kernel > self.window_len {
            return Err(Error::config(format!(
                "mse_kernel ({}) must not exceed window_len ({})",
                self.mse_kernel, self.window_len
            )));
        }
        if self.lte_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "lte_kernel must be odd for symmetric padding, got {}",
                self.lte_kernel
            )));
        }
        if self.token_len() % self.n_heads != 0 {
            return Err(Error::config(format!(
                "token length d_embed*t_steps = {} must be divisible by n_heads = {}",
                self.token_len(),
                self.n_heads
            )));
        }
        Ok(())
    }

    /// Canonical key=value rendering; the basis of the compatibility digest.
    pub fn canonical_text(&self) -> String {
        format!(
            "n_sensors={}\nm_vars={}\nwindow_len={}\nn_classes={}\nd_embed={}\nmse_kernel={}\n\
             mse_stride={}\nlte_kernel={}\nexpand_ratio={}\nn_heads={}\nd_state={}\nd_conv={}\n\
             mamba_expand={}\nattn_scaled={}\nenable_gta={}\nenable_csi={}\ngta_before_csi={}\nseed={}\n",
            self.n_sensors,
            self.m_vars,
            self.window_len,
            self.n_classes,
            self.d_embed,
            self.mse_kernel,
            self.mse_stride,
            self.lte_kernel,
            self.expand_ratio,
            self.n_heads,
            self.d_state,
            self.d_conv,
            self.mamba_expand,
            self.attn_scaled,
            self.enable_gta,
            self.enable_csi,
            self.gta_before_csi,
            self.seed,
        )
    }

    /// 64-bit digest identifying an architecture + seed combination.
    pub fn digest(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_window() {
        let cfg = ModelConfig::opportunity_default();
        assert_eq!(cfg.mse_kernel, 8);
        assert_eq!(cfg.mse_stride, 8);
        assert_eq!(cfg.t_steps(), 3);
        assert_eq!(cfg.mse_pad_r(), 0);
        assert_eq!(cfg.token_len(), 192);
        assert_eq!(cfg.head_dim(), 24);
        cfg.validate().unwrap();
    }

    #[test]
    fn tiny_config_is_valid() {
        let cfg = ModelConfig::tiny();
        assert_eq!(cfg.t_steps(), 3);
        assert_eq!(cfg.d_inner(), 8);
        assert_eq!(cfg.token_len(), 12);
        assert_eq!(cfg.head_dim(), 6);
        cfg.validate().unwrap();
    }

    #[test]
    fn stride_not_dividing_window_pads_right() {
        let mut cfg = ModelConfig::new(1, 1, 10, 2);
        cfg.mse_kernel = 4;
        cfg.mse_stride = 4;
        // T = ceil(10/4) = 3; coverage needs (3-1)*4 + 4 = 12 -> pad 2
        assert_eq!(cfg.t_steps(), 3);
        assert_eq!(cfg.mse_pad_r(), 2);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut cfg = ModelConfig::tiny();
        cfg.lte_kernel = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny();
        cfg.mse_kernel = 99;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny();
        cfg.n_heads = 5; // 12 % 5 != 0
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny();
        cfg.d_state = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn digest_tracks_every_field() {
        let base = ModelConfig::tiny();
        let mut other = base.clone();
        assert_eq!(base.digest(), other.digest());
        other.seed = 1;
        assert_ne!(base.digest(), other.digest());
        let mut other = base.clone();
        other.enable_csi = false;
        assert_ne!(base.digest(), other.digest());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ModelConfig::opportunity_default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
