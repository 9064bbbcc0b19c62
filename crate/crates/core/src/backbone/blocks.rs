//! Convolutional pieces of the backbone. Token grids are `[B, H, W, C]`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{init_linear, init_norm, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

fn init_conv3d(store: &mut ParamStore, name: &str, k: [usize; 3], cin: usize, cout: usize, rng: &mut Rng) {
    let fan_in = (k[0] * k[1] * k[2] * cin) as f64;
    store.insert(
        format!("{name}.w"),
        Tensor::randn(&[k[0], k[1], k[2], cin, cout], 1.0 / fan_in.sqrt(), rng),
    );
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
}

fn grid_dims(ctx: &Ctx, x: Var, op: &str) -> Result<[usize; 4]> {
    match *ctx.tape.shape(x) {
        [b, h, w, c] => Ok([b, h, w, c]),
        ref s => Err(Error::Dimension(format!("{op}: expected [B, H, W, C], got {s:?}"))),
    }
}

pub(crate) fn init_patch_embed(store: &mut ParamStore, embed: usize, rng: &mut Rng) {
    init_conv3d(store, "embed", [3, 3, 3], 1, embed, rng);
}

/// 3×3×3 convolution over `(row, col, band)` of `x: [B, M, N, L]` with
/// spectral stride `stride`, followed by a mean over the remaining band axis.
/// Output `[B, M, N, embed]`.
pub fn patch_embed(ctx: &mut Ctx, x: Var, stride: usize) -> Result<Var> {
    let [b, m, n, l] = match *ctx.tape.shape(x) {
        [b, m, n, l] => [b, m, n, l],
        ref s => return Err(Error::Dimension(format!("patch_embed: expected [B, M, N, L], got {s:?}"))),
    };
    if l < 3 {
        return Err(Error::Config(format!(
            "patch_embed: {l} bands is fewer than the 3-wide spectral kernel"
        )));
    }
    let x = ctx.tape.reshape(x, &[b, m, n, l, 1])?;
    let w = ctx.p("embed.w")?;
    let bias = ctx.p("embed.b")?;
    let y = ctx.tape.conv3d(x, w, Some(bias), [1, 1, stride], [1, 1, 0])?;
    let c = ctx.tape.shape(y)[4];
    let y = ctx.tape.mean_axis(y, 3)?;
    ctx.tape.reshape(y, &[b, m, n, c])
}

pub(crate) fn init_channel_attention(store: &mut ParamStore, name: &str, c: usize, r: usize, rng: &mut Rng) -> Result<()> {
    if r == 0 || c < r {
        return Err(Error::Config(format!(
            "channel attention: {c} channels with reduction {r}"
        )));
    }
    init_linear(store, &format!("{name}.fc1"), c, c / r, rng);
    init_linear(store, &format!("{name}.fc2"), c / r, c, rng);
    Ok(())
}

/// Squeeze-and-excitation gate. Returns `(x ⊙ g, g)` with `g: [B, 1, 1, C]`.
pub fn channel_attention(ctx: &mut Ctx, name: &str, x: Var) -> Result<(Var, Var)> {
    let [b, h, w, c] = grid_dims(ctx, x, "channel_attention")?;
    let flat = ctx.tape.reshape(x, &[b, h * w, c])?;
    let s = ctx.tape.mean_axis(flat, 1)?;
    let s = ctx.linear(&format!("{name}.fc1"), s)?;
    let s = ctx.tape.relu(s)?;
    let s = ctx.linear(&format!("{name}.fc2"), s)?;
    let g = ctx.tape.sigmoid(s)?;
    let g = ctx.tape.reshape(g, &[b, 1, 1, c])?;
    let y = ctx.tape.mul(x, g)?;
    Ok((y, g))
}

pub(crate) fn init_conv_block(store: &mut ParamStore, name: &str, c: usize, r: usize, rng: &mut Rng) -> Result<()> {
    init_norm(store, &format!("{name}.norm"), c);
    init_conv3d(store, &format!("{name}.conv"), [3, 3, 1], c, c, rng);
    init_channel_attention(store, &format!("{name}.ca"), c, r, rng)
}

/// `x + CA(GELU(conv3×3(LN(x))))`. When `skip_threshold > 0` and the mean
/// channel gate of an example is below it, that example's branch is dropped.
pub fn conv_block(ctx: &mut Ctx, name: &str, x: Var, skip_threshold: f64) -> Result<Var> {
    let [b, h, w, c] = grid_dims(ctx, x, name)?;
    let y = ctx.layer_norm(&format!("{name}.norm"), x)?;
    let y = ctx.tape.reshape(y, &[b, h, w, 1, c])?;
    let cw = ctx.p(&format!("{name}.conv.w"))?;
    let cb = ctx.p(&format!("{name}.conv.b"))?;
    let y = ctx.tape.conv3d(y, cw, Some(cb), [1, 1, 1], [1, 1, 0])?;
    let y = ctx.tape.reshape(y, &[b, h, w, c])?;
    let y = ctx.tape.gelu(y)?;
    let (y, g) = channel_attention(ctx, &format!("{name}.ca"), y)?;
    let y = if skip_threshold > 0.0 {
        let keep: Vec<f64> = ctx
            .tape
            .value(g)
            .data()
            .chunks(c)
            .map(|gb| {
                let mean = gb.iter().sum::<f64>() / c as f64;
                if mean < skip_threshold {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        let mask = ctx.tape.constant(Tensor::new(&[b, 1, 1, 1], keep)?)?;
        ctx.tape.mul(y, mask)?
    } else {
        y
    };
    ctx.tape.add(x, y)
}

pub(crate) fn init_downsample(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut Rng) {
    init_conv3d(store, name, [2, 2, 1], cin, cout, rng);
}

/// Grid extent after [`downsample`].
pub fn halved(n: usize) -> usize {
    n.div_ceil(2)
}

/// 2×2 stride-2 convolution. Odd extents are zero-padded on the bottom/right
/// first, so the output extent is `ceil(n / 2)`.
pub fn downsample(ctx: &mut Ctx, name: &str, x: Var) -> Result<Var> {
    let [b, h, w, c] = grid_dims(ctx, x, name)?;
    let (he, we) = (h + h % 2, w + w % 2);
    let x = if (he, we) != (h, w) {
        let mut map = Vec::with_capacity(b * he * we * c);
        for bi in 0..b {
            for y in 0..he {
                for xx in 0..we {
                    for ch in 0..c {
                        map.push((y < h && xx < w).then(|| ((bi * h + y) * w + xx) * c + ch));
                    }
                }
            }
        }
        ctx.tape.gather(x, Arc::new(map), &[b, he, we, c])?
    } else {
        x
    };
    let x = ctx.tape.reshape(x, &[b, he, we, 1, c])?;
    let cw = ctx.p(&format!("{name}.w"))?;
    let cb = ctx.p(&format!("{name}.b"))?;
    let y = ctx.tape.conv3d(x, cw, Some(cb), [2, 2, 1], [0, 0, 0])?;
    let cout = ctx.tape.shape(y)[4];
    ctx.tape.reshape(y, &[b, he / 2, we / 2, cout])
}

pub(crate) fn init_decoupled(store: &mut ParamStore, name: &str, c: usize, r: usize, rng: &mut Rng) -> Result<()> {
    init_conv3d(store, &format!("{name}.spatial"), [3, 3, 1], 1, 1, rng);
    init_channel_attention(store, &format!("{name}.spectral"), c, r, rng)?;
    init_linear(store, &format!("{name}.proj"), 2 * c, c, rng);
    Ok(())
}

/// Spatial gate `s: [B, H, W, 1]` from the channel-mean map through a
/// replicate-padded 3×3 convolution and a sigmoid.
pub fn spatial_gate(ctx: &mut Ctx, name: &str, x: Var) -> Result<Var> {
    let [b, h, w, _] = grid_dims(ctx, x, name)?;
    let m = ctx.tape.mean_axis(x, 3)?;
    let (hp, wp) = (h + 2, w + 2);
    let mut map = Vec::with_capacity(b * hp * wp);
    for bi in 0..b {
        for y in 0..hp {
            for xx in 0..wp {
                let sy = y.saturating_sub(1).min(h - 1);
                let sx = xx.saturating_sub(1).min(w - 1);
                map.push(Some((bi * h + sy) * w + sx));
            }
        }
    }
    let m = ctx.tape.gather(m, Arc::new(map), &[b, hp, wp, 1, 1])?;
    let cw = ctx.p(&format!("{name}.spatial.w"))?;
    let cb = ctx.p(&format!("{name}.spatial.b"))?;
    let s = ctx.tape.conv3d(m, cw, Some(cb), [1, 1, 1], [0, 0, 0])?;
    let s = ctx.tape.reshape(s, &[b, h, w, 1])?;
    ctx.tape.sigmoid(s)
}

/// Decoupled spatial/spectral attention: `proj([x ⊙ s, x ⊙ c])`.
pub fn decoupled_attention(ctx: &mut Ctx, name: &str, x: Var) -> Result<Var> {
    let s = spatial_gate(ctx, name, x)?;
    let xs = ctx.tape.mul(x, s)?;
    let (xc, _) = channel_attention(ctx, &format!("{name}.spectral"), x)?;
    let cat = ctx.tape.concat_last(&[xs, xc])?;
    ctx.linear(&format!("{name}.proj"), cat)
}
