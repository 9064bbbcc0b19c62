use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn d_depths() -> [usize; 4] {
    [1, 3, 8, 16]
}
fn d_windows() -> [usize; 4] {
    [4, 4, 7, 7]
}
fn d_heads() -> [usize; 4] {
    [2, 4, 8, 16]
}
fn d_mlp_ratio() -> usize {
    4
}
fn d_drop_rate() -> f64 {
    0.2
}
fn d_embed() -> usize {
    80
}
fn d_block() -> usize {
    13
}
fn d_reduction() -> usize {
    4
}
fn d_state_dim() -> usize {
    4
}
fn d_conv_kernel() -> usize {
    3
}
fn d_spectral_stride() -> usize {
    4
}

/// Architecture hyperparameters. Serialized as JSON; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_depths")]
    pub stage_depths: [usize; 4],
    #[serde(default = "d_windows")]
    pub windows: [usize; 4],
    #[serde(default = "d_heads")]
    pub heads: [usize; 4],
    #[serde(default = "d_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "d_drop_rate")]
    pub drop_rate: f64,
    #[serde(default = "d_embed")]
    pub embed_dim: usize,
    /// Spatial side `M = N` of the input block.
    #[serde(default = "d_block")]
    pub block: usize,
    pub bands: usize,
    pub classes: usize,
    #[serde(default = "d_reduction")]
    pub channel_attention_reduction: usize,
    /// State size of the selective scan.
    #[serde(default = "d_state_dim")]
    pub state_dim: usize,
    /// Kernel width of the 1D convolutions inside the dual-branch mixer.
    #[serde(default = "d_conv_kernel")]
    pub conv_kernel: usize,
    /// Spectral stride of the patch-embedding convolution.
    #[serde(default = "d_spectral_stride")]
    pub spectral_stride: usize,
    /// Conv blocks whose mean channel gate falls below this value skip their
    /// residual branch. 0 disables skipping.
    #[serde(default)]
    pub gate_skip_threshold: f64,
    /// Ablation: causal instead of centred convolutions in the mixer.
    #[serde(default)]
    pub causal_conv: bool,
}

impl ModelConfig {
    /// Defaults for everything except the data-dependent fields.
    pub fn new(bands: usize, classes: usize) -> Self {
        Self {
            stage_depths: d_depths(),
            windows: d_windows(),
            heads: d_heads(),
            mlp_ratio: d_mlp_ratio(),
            drop_rate: d_drop_rate(),
            embed_dim: d_embed(),
            block: d_block(),
            bands,
            classes,
            channel_attention_reduction: d_reduction(),
            state_dim: d_state_dim(),
            conv_kernel: d_conv_kernel(),
            spectral_stride: d_spectral_stride(),
            gate_skip_threshold: 0.0,
            causal_conv: false,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks the field-local invariants. Width-dependent checks (heads
    /// dividing stage widths) happen when the stage plan is built.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.block < 3 || self.block.is_multiple_of(2) {
            return fail(format!("block must be odd and ≥ 3, got {}", self.block));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.bands < 3 {
            return fail(format!(
                "patch embedding needs at least 3 bands, got {}",
                self.bands
            ));
        }
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return fail(format!("embed_dim must be even and ≥ 2, got {}", self.embed_dim));
        }
        if self.windows.contains(&0) || self.heads.contains(&0) {
            return fail("windows and heads must be positive".into());
        }
        if self.mlp_ratio == 0 || self.state_dim == 0 || self.spectral_stride == 0 {
            return fail("mlp_ratio, state_dim and spectral_stride must be positive".into());
        }
        if self.channel_attention_reduction == 0 || self.embed_dim < self.channel_attention_reduction {
            return fail(format!(
                "channel attention reduction {} must be in 1..={}",
                self.channel_attention_reduction, self.embed_dim
            ));
        }
        if (!self.causal_conv && self.conv_kernel.is_multiple_of(2)) || self.conv_kernel == 0 {
            return fail(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return fail(format!("drop_rate must be in [0, 1), got {}", self.drop_rate));
        }
        if !self.gate_skip_threshold.is_finite() {
            return fail("gate_skip_threshold must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = ModelConfig::new(200, 16);
        assert_eq!(c.stage_depths, [1, 3, 8, 16]);
        assert_eq!(c.windows, [4, 4, 7, 7]);
        assert_eq!(c.heads, [2, 4, 8, 16]);
        assert_eq!(c.embed_dim, 80);
        assert_eq!(c.mlp_ratio, 4);
        assert_eq!(c.drop_rate, 0.2);
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = ModelConfig::new(16, 3);
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
        let min = r#"{"bands": 16, "classes": 3}"#;
        assert_eq!(ModelConfig::from_json(min).unwrap(), c);
        let bad = r#"{"bands": 16, "classes": 3, "depth": 4}"#;
        assert!(matches!(ModelConfig::from_json(bad), Err(Error::Config(_))));
    }

    #[test]
    fn invariants_enforced() {
        let mut c = ModelConfig::new(16, 3);
        c.block = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(16, 3);
        c.classes = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(2, 3);
        c.block = 5;
        assert!(c.validate().is_err());
    }
}
