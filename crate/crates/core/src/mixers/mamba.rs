use super::{MixerSpec, TokenMixer};
use crate::error::{Error, Result};
use crate::params::{init_linear, Ctx, ParamStore};
use crate::rng::Rng;
use crate::ssm::SelectiveParams;
use crate::tensor::{ConvMode, Tensor, Var};

fn check_conv(spec: &MixerSpec) -> Result<()> {
    if spec.conv_kernel == 0 {
        return Err(Error::Config("conv kernel must be positive".into()));
    }
    if spec.conv_mode == ConvMode::Same && spec.conv_kernel.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "`same` convolution needs an odd kernel, got {}",
            spec.conv_kernel
        )));
    }
    if spec.state_dim == 0 {
        return Err(Error::Config("state dimension must be positive".into()));
    }
    Ok(())
}

fn init_dwconv(store: &mut ParamStore, name: &str, k: usize, c: usize, rng: &mut Rng) {
    store.insert(format!("{name}.w"), Tensor::randn(&[k, c], 1.0 / (k as f64).sqrt(), rng));
    store.insert(format!("{name}.b"), Tensor::zeros(&[c]));
}

fn init_selective(store: &mut ParamStore, name: &str, c: usize, n: usize, rng: &mut Rng) {
    let sp = SelectiveParams::init(c, n, rng);
    store.insert(format!("{name}.a_log"), sp.a_log);
    store.insert(format!("{name}.x_proj"), sp.x_proj);
    store.insert(format!("{name}.dt_proj"), sp.dt_proj);
    store.insert(format!("{name}.dt_bias"), sp.dt_bias);
}

fn dwconv(ctx: &mut Ctx, name: &str, x: Var, mode: ConvMode) -> Result<Var> {
    let w = ctx.p(&format!("{name}.w"))?;
    let b = ctx.p(&format!("{name}.b"))?;
    ctx.tape.depthwise_conv1d(x, w, b, mode)
}

/// Selective scan of `u: [B, T, D]` with Δ, B, C projected from `u`.
fn selective(ctx: &mut Ctx, name: &str, u: Var) -> Result<Var> {
    let a_log = ctx.p(&format!("{name}.a_log"))?;
    let x_proj = ctx.p(&format!("{name}.x_proj"))?;
    let dt_proj = ctx.p(&format!("{name}.dt_proj"))?;
    let dt_bias = ctx.p(&format!("{name}.dt_bias"))?;
    let n = ctx.tape.shape(a_log)[1];
    let r = ctx.tape.shape(dt_proj)[0];

    let proj = ctx.tape.linear(u, x_proj, None)?;
    let dt = ctx.tape.slice_last(proj, 0, r)?;
    let bm = ctx.tape.slice_last(proj, r, n)?;
    let cm = ctx.tape.slice_last(proj, r + n, n)?;
    let dt = ctx.tape.linear(dt, dt_proj, Some(dt_bias))?;
    let delta = ctx.tape.softplus(dt)?;
    let a = ctx.tape.exp(a_log)?;
    let a = ctx.tape.scale(a, -1.0)?;
    ctx.tape.selective_scan(u, delta, a, bm, cm)
}

fn as_sequence(ctx: &mut Ctx, x: Var) -> Result<(Var, Vec<usize>)> {
    let s = ctx.tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("mixer expects [B, H, W, C], got {s:?}")));
    }
    let seq = ctx.tape.reshape(x, &[s[0], s[1] * s[2], s[3]])?;
    Ok((seq, s))
}

/// Dual-branch mixer: a selective-scan branch and a plain conv branch, each at
/// half width, concatenated and projected back.
pub struct MambaVisionMixer;

impl TokenMixer for MambaVisionMixer {
    fn name(&self) -> &str {
        "mambavision"
    }

    fn validate(&self, spec: &MixerSpec) -> Result<()> {
        if spec.channels < 2 || !spec.channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "dual-branch mixer needs an even channel count, got {}",
                spec.channels
            )));
        }
        check_conv(spec)
    }

    fn init(&self, store: &mut ParamStore, prefix: &str, spec: &MixerSpec, rng: &mut Rng) -> Result<()> {
        self.validate(spec)?;
        let (c, h) = (spec.channels, spec.channels / 2);
        init_linear(store, &format!("{prefix}.in_ssm"), c, h, rng);
        init_linear(store, &format!("{prefix}.in_sym"), c, h, rng);
        init_dwconv(store, &format!("{prefix}.conv_ssm"), spec.conv_kernel, h, rng);
        init_dwconv(store, &format!("{prefix}.conv_sym"), spec.conv_kernel, h, rng);
        init_selective(store, &format!("{prefix}.ssm"), h, spec.state_dim, rng);
        init_linear(store, &format!("{prefix}.out_proj"), c, c, rng);
        Ok(())
    }

    fn forward(&self, ctx: &mut Ctx, prefix: &str, spec: &MixerSpec, x: Var) -> Result<Var> {
        let (seq, s) = as_sequence(ctx, x)?;
        let y = mixer_forward(ctx, prefix, spec, seq)?;
        ctx.tape.reshape(y, &s)
    }
}

/// Branch outputs `(scan, symmetric)` of the dual-branch mixer for `x: [B, T, C]`,
/// each `[B, T, C/2]`.
pub fn mixer_branches(ctx: &mut Ctx, prefix: &str, spec: &MixerSpec, x: Var) -> Result<(Var, Var)> {
    MambaVisionMixer.validate(spec)?;
    let c = *ctx.tape.shape(x).last().unwrap();
    if c != spec.channels {
        return Err(Error::Dimension(format!(
            "mixer built for {} channels, input has {c}",
            spec.channels
        )));
    }
    let x1 = ctx.linear(&format!("{prefix}.in_ssm"), x)?;
    let x1 = dwconv(ctx, &format!("{prefix}.conv_ssm"), x1, spec.conv_mode)?;
    let x1 = ctx.tape.silu(x1)?;
    let x1 = selective(ctx, &format!("{prefix}.ssm"), x1)?;

    let x2 = ctx.linear(&format!("{prefix}.in_sym"), x)?;
    let x2 = dwconv(ctx, &format!("{prefix}.conv_sym"), x2, spec.conv_mode)?;
    let x2 = ctx.tape.silu(x2)?;
    Ok((x1, x2))
}

/// Dual-branch mixer on a token sequence `x: [B, T, C]`.
pub fn mixer_forward(ctx: &mut Ctx, prefix: &str, spec: &MixerSpec, x: Var) -> Result<Var> {
    let (x1, x2) = mixer_branches(ctx, prefix, spec, x)?;
    let cat = ctx.tape.concat_last(&[x1, x2])?;
    ctx.linear(&format!("{prefix}.out_proj"), cat)
}

/// Single-branch block at full width: projection, conv, SiLU, selective scan,
/// projection. Used as the parameter-count reference.
pub struct SingleBranchMixer;

impl TokenMixer for SingleBranchMixer {
    fn name(&self) -> &str {
        "single-branch"
    }

    fn validate(&self, spec: &MixerSpec) -> Result<()> {
        if spec.channels == 0 {
            return Err(Error::Config("channel count must be positive".into()));
        }
        check_conv(spec)
    }

    fn init(&self, store: &mut ParamStore, prefix: &str, spec: &MixerSpec, rng: &mut Rng) -> Result<()> {
        self.validate(spec)?;
        let c = spec.channels;
        init_linear(store, &format!("{prefix}.in_proj"), c, c, rng);
        init_dwconv(store, &format!("{prefix}.conv"), spec.conv_kernel, c, rng);
        init_selective(store, &format!("{prefix}.ssm"), c, spec.state_dim, rng);
        init_linear(store, &format!("{prefix}.out_proj"), c, c, rng);
        Ok(())
    }

    fn forward(&self, ctx: &mut Ctx, prefix: &str, spec: &MixerSpec, x: Var) -> Result<Var> {
        let (seq, s) = as_sequence(ctx, x)?;
        let y = ctx.linear(&format!("{prefix}.in_proj"), seq)?;
        let y = dwconv(ctx, &format!("{prefix}.conv"), y, spec.conv_mode)?;
        let y = ctx.tape.silu(y)?;
        let y = selective(ctx, &format!("{prefix}.ssm"), y)?;
        let y = ctx.linear(&format!("{prefix}.out_proj"), y)?;
        ctx.tape.reshape(y, &s)
    }
}
