//! Token mixers and the residual layer that wraps them.
//!
//! Every mixer maps a token grid `[B, H, W, C]` to the same shape. Mixers are
//! looked up by name in a [`MixerRegistry`], so the backbone only stores names.

mod attention;
mod mamba;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{init_linear, init_norm, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::{ConvMode, Var};

pub use attention::{init_attention, mhsa_forward, window_extent, windowed_attention, WindowAttention, WindowLayout};
pub use mamba::{mixer_branches, mixer_forward, MambaVisionMixer, SingleBranchMixer};

/// Shape hyperparameters shared by all mixers of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MixerSpec {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub state_dim: usize,
    pub conv_kernel: usize,
    pub conv_mode: ConvMode,
}

impl MixerSpec {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            heads: 1,
            window: 7,
            state_dim: 4,
            conv_kernel: 3,
            conv_mode: ConvMode::Same,
        }
    }
}

pub trait TokenMixer: Send + Sync {
    fn name(&self) -> &str;

    /// Rejects specs this mixer cannot be built for.
    fn validate(&self, spec: &MixerSpec) -> Result<()>;

    fn init(&self, store: &mut ParamStore, prefix: &str, spec: &MixerSpec, rng: &mut Rng) -> Result<()>;

    /// `x: [B, H, W, C]` → `[B, H, W, C]`.
    fn forward(&self, ctx: &mut Ctx, prefix: &str, spec: &MixerSpec, x: Var) -> Result<Var>;
}

pub struct MixerRegistry {
    mixers: BTreeMap<String, Box<dyn TokenMixer>>,
}

impl MixerRegistry {
    pub fn empty() -> Self {
        Self {
            mixers: BTreeMap::new(),
        }
    }

    /// `mambavision`, `window-attention` and `single-branch`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(MambaVisionMixer));
        r.register(Box::new(WindowAttention));
        r.register(Box::new(SingleBranchMixer));
        r
    }

    pub fn register(&mut self, m: Box<dyn TokenMixer>) {
        self.mixers.insert(m.name().to_string(), m);
    }

    pub fn get(&self, name: &str) -> Result<&dyn TokenMixer> {
        self.mixers.get(name).map(|m| m.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown mixer `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.mixers.keys().map(|s| s.as_str()).collect()
    }
}

/// Parameter count of one mixer instance, by enumerating its initialised tensors.
pub fn mixer_param_count(mixer: &dyn TokenMixer, spec: &MixerSpec) -> Result<usize> {
    let mut store = ParamStore::new();
    mixer.init(&mut store, "m", spec, &mut Rng::new(0, 0))?;
    Ok(store.numel())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParityReport {
    pub channels: usize,
    pub dual_branch: usize,
    pub single_branch: usize,
    pub ratio: f64,
}

/// Dual-branch mixer against the single-branch block at full width.
pub fn parity_report(spec: &MixerSpec) -> Result<ParityReport> {
    let dual = mixer_param_count(&MambaVisionMixer, spec)?;
    let single = mixer_param_count(&SingleBranchMixer, spec)?;
    Ok(ParityReport {
        channels: spec.channels,
        dual_branch: dual,
        single_branch: single,
        ratio: dual as f64 / single as f64,
    })
}

/// One residual layer: `x + drop(mixer(norm1(x)))`, then `x + drop(mlp(norm2(x)))`.
pub struct LayerSpec<'a> {
    pub mixer: &'a dyn TokenMixer,
    pub mixer_spec: MixerSpec,
    pub mlp_ratio: usize,
    pub drop_rate: f64,
}

pub fn init_hsi_layer(store: &mut ParamStore, prefix: &str, layer: &LayerSpec, rng: &mut Rng) -> Result<()> {
    let c = layer.mixer_spec.channels;
    layer.mixer.validate(&layer.mixer_spec)?;
    init_norm(store, &format!("{prefix}.norm1"), c);
    layer
        .mixer
        .init(store, &format!("{prefix}.mixer"), &layer.mixer_spec, rng)?;
    init_norm(store, &format!("{prefix}.norm2"), c);
    let hidden = c * layer.mlp_ratio;
    init_linear(store, &format!("{prefix}.mlp.fc1"), c, hidden, rng);
    init_linear(store, &format!("{prefix}.mlp.fc2"), hidden, c, rng);
    Ok(())
}

/// `x: [B, H, W, C]`.
pub fn hsi_layer_forward(ctx: &mut Ctx, prefix: &str, layer: &LayerSpec, x: Var) -> Result<Var> {
    let h = ctx.layer_norm(&format!("{prefix}.norm1"), x)?;
    let m = layer
        .mixer
        .forward(ctx, &format!("{prefix}.mixer"), &layer.mixer_spec, h)?;
    let m = ctx.dropout(m, layer.drop_rate)?;
    let x = ctx.tape.add(x, m)?;

    let h = ctx.layer_norm(&format!("{prefix}.norm2"), x)?;
    let h = ctx.linear(&format!("{prefix}.mlp.fc1"), h)?;
    let h = ctx.tape.gelu(h)?;
    let h = ctx.linear(&format!("{prefix}.mlp.fc2"), h)?;
    let h = ctx.dropout(h, layer.drop_rate)?;
    ctx.tape.add(x, h)
}
