use std::sync::Arc;

use super::{MixerSpec, TokenMixer};
use crate::error::{Error, Result};
use crate::params::{init_linear, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::Var;

fn check_heads(c: usize, heads: usize) -> Result<()> {
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "{heads} attention heads do not divide {c} channels"
        )));
    }
    Ok(())
}

pub fn init_attention(store: &mut ParamStore, prefix: &str, c: usize, heads: usize, rng: &mut Rng) -> Result<()> {
    check_heads(c, heads)?;
    for p in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{prefix}.{p}"), c, c, rng);
    }
    Ok(())
}

/// Multi-head scaled dot-product attention over `x: [G, T, C]`, each of the
/// `G` groups attended independently. Head width is `C / heads`.
///
/// Returns the output `[G, T, C]` and the attention probabilities `[G·heads, T, T]`.
pub fn mhsa_forward(ctx: &mut Ctx, prefix: &str, heads: usize, x: Var) -> Result<(Var, Var)> {
    let s = ctx.tape.shape(x).to_vec();
    let [g, t, c] = s[..] else {
        return Err(Error::Dimension(format!("attention expects [G, T, C], got {s:?}")));
    };
    check_heads(c, heads)?;
    let dh = c / heads;

    let split = |ctx: &mut Ctx, name: &str, axes: &[usize]| -> Result<Var> {
        let y = ctx.linear(&format!("{prefix}.{name}"), x)?;
        let y = ctx.tape.reshape(y, &[g, t, heads, dh])?;
        let y = ctx.tape.permute(y, axes)?;
        let s = ctx.tape.shape(y).to_vec();
        ctx.tape.reshape(y, &[g * heads, s[2], s[3]])
    };
    let q = split(ctx, "q", &[0, 2, 1, 3])?;
    let kt = split(ctx, "k", &[0, 2, 3, 1])?;
    let v = split(ctx, "v", &[0, 2, 1, 3])?;

    let scores = ctx.tape.bmm(q, kt)?;
    let scores = ctx.tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let probs = ctx.tape.softmax_last(scores)?;
    let o = ctx.tape.bmm(probs, v)?;
    let o = ctx.tape.reshape(o, &[g, heads, t, dh])?;
    let o = ctx.tape.permute(o, &[0, 2, 1, 3])?;
    let o = ctx.tape.reshape(o, &[g, t, c])?;
    let out = ctx.linear(&format!("{prefix}.o"), o)?;
    Ok((out, probs))
}

/// Tiling of an `h × w` grid into windows. The window side is clamped per
/// axis to the grid extent, so a window at least as large as the grid gives
/// a single tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub win_h: usize,
    pub win_w: usize,
    pub tiles_h: usize,
    pub tiles_w: usize,
}

impl WindowLayout {
    pub fn padded(&self) -> (usize, usize) {
        (self.win_h * self.tiles_h, self.win_w * self.tiles_w)
    }

    pub fn tiles(&self) -> usize {
        self.tiles_h * self.tiles_w
    }
}

pub fn window_extent(window: usize, h: usize, w: usize) -> Result<WindowLayout> {
    if window == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!("window {window} on a {h}×{w} grid")));
    }
    let win_h = window.min(h);
    let win_w = window.min(w);
    Ok(WindowLayout {
        win_h,
        win_w,
        tiles_h: h.div_ceil(win_h),
        tiles_w: w.div_ceil(win_w),
    })
}

/// Attention within non-overlapping windows of `x: [B, H, W, C]`. The grid is
/// zero-padded on the bottom and right to whole windows and cropped afterwards.
pub fn windowed_attention(ctx: &mut Ctx, prefix: &str, heads: usize, window: usize, x: Var) -> Result<Var> {
    let s = ctx.tape.shape(x).to_vec();
    let [b, h, w, c] = s[..] else {
        return Err(Error::Dimension(format!("windowed attention expects [B, H, W, C], got {s:?}")));
    };
    let lay = window_extent(window, h, w)?;
    let (wh, ww) = (lay.win_h, lay.win_w);
    let tok = wh * ww;
    let groups = b * lay.tiles();

    let mut to_win = Vec::with_capacity(groups * tok * c);
    for bi in 0..b {
        for i in 0..lay.tiles_h {
            for j in 0..lay.tiles_w {
                for r in 0..wh {
                    for q in 0..ww {
                        let (y, xx) = (i * wh + r, j * ww + q);
                        for ch in 0..c {
                            to_win.push((y < h && xx < w).then(|| ((bi * h + y) * w + xx) * c + ch));
                        }
                    }
                }
            }
        }
    }
    let tiles = ctx.tape.gather(x, Arc::new(to_win), &[groups, tok, c])?;
    let (out, _) = mhsa_forward(ctx, prefix, heads, tiles)?;

    let mut back = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let (i, r, j, q) = (y / wh, y % wh, xx / ww, xx % ww);
                let base = (((bi * lay.tiles_h + i) * lay.tiles_w + j) * tok + r * ww + q) * c;
                for ch in 0..c {
                    back.push(Some(base + ch));
                }
            }
        }
    }
    ctx.tape.gather(out, Arc::new(back), &s)
}

/// Windowed multi-head self-attention mixer.
pub struct WindowAttention;

impl TokenMixer for WindowAttention {
    fn name(&self) -> &str {
        "window-attention"
    }

    fn validate(&self, spec: &MixerSpec) -> Result<()> {
        check_heads(spec.channels, spec.heads)?;
        if spec.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        Ok(())
    }

    fn init(&self, store: &mut ParamStore, prefix: &str, spec: &MixerSpec, rng: &mut Rng) -> Result<()> {
        self.validate(spec)?;
        init_attention(store, prefix, spec.channels, spec.heads, rng)
    }

    fn forward(&self, ctx: &mut Ctx, prefix: &str, spec: &MixerSpec, x: Var) -> Result<Var> {
        windowed_attention(ctx, prefix, spec.heads, spec.window, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::grad_check_with_params;
    use crate::tensor::{Precision, Tensor};

    fn store(c: usize, heads: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        init_attention(&mut s, "a", c, heads, &mut Rng::new(seed, 1)).unwrap();
        s
    }

    fn global(s: &ParamStore, heads: usize, x: &Tensor) -> (Tensor, Tensor) {
        let mut ctx = Ctx::eval(s, Precision::F64);
        let xv = ctx.tape.constant(x.clone()).unwrap();
        let (o, p) = mhsa_forward(&mut ctx, "a", heads, xv).unwrap();
        (ctx.tape.value(o).clone(), ctx.tape.value(p).clone())
    }

    fn windowed(s: &ParamStore, heads: usize, window: usize, x: &Tensor) -> Tensor {
        let mut ctx = Ctx::eval(s, Precision::F64);
        let xv = ctx.tape.constant(x.clone()).unwrap();
        let o = windowed_attention(&mut ctx, "a", heads, window, xv).unwrap();
        ctx.tape.value(o).clone()
    }

    #[test]
    fn single_token_is_value_then_output_projection() {
        let s = store(8, 2, 1);
        let x = Tensor::randn(&[1, 1, 8], 1.0, &mut Rng::new(2, 0));
        let (o, _) = global(&s, 2, &x);
        let mut ctx = Ctx::eval(&s, Precision::F64);
        let xv = ctx.tape.constant(x).unwrap();
        let v = ctx.linear("a.v", xv).unwrap();
        let want = ctx.linear("a.o", v).unwrap();
        assert!(o.max_abs_diff(ctx.tape.value(want)) < 1e-12);
    }

    #[test]
    fn rows_are_stochastic() {
        let s = store(8, 4, 3);
        let x = Tensor::randn(&[2, 6, 8], 2.0, &mut Rng::new(4, 0));
        let (_, p) = global(&s, 4, &x);
        assert_eq!(p.shape(), &[8, 6, 6]);
        for row in p.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn permutation_equivariant() {
        let s = store(8, 2, 5);
        let mut rng = Rng::new(6, 0);
        let x = Tensor::randn(&[1, 7, 8], 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..7).collect();
        rng.shuffle(&mut perm);
        let px = Tensor::from_fn(&[1, 7, 8], |i| x.data()[perm[i / 8] * 8 + i % 8]);
        let (y, _) = global(&s, 2, &x);
        let (py, _) = global(&s, 2, &px);
        let want = Tensor::from_fn(&[1, 7, 8], |i| y.data()[perm[i / 8] * 8 + i % 8]);
        assert!(py.max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn heads_must_divide_channels() {
        let mut s = ParamStore::new();
        assert!(matches!(
            init_attention(&mut s, "a", 8, 3, &mut Rng::new(0, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn one_window_equals_global() {
        let s = store(8, 2, 7);
        let x = Tensor::randn(&[2, 5, 5, 8], 1.0, &mut Rng::new(8, 0));
        for window in [5, 7, 100] {
            let w = windowed(&s, 2, window, &x);
            let (g, _) = global(&s, 2, &x.clone().reshape(&[2, 25, 8]).unwrap());
            assert!(w.max_abs_diff(&g.reshape(&[2, 5, 5, 8]).unwrap()) < 1e-6);
        }
    }

    #[test]
    fn padding_arithmetic() {
        let lay = window_extent(4, 7, 7).unwrap();
        assert_eq!(lay.padded(), (8, 8));
        assert_eq!(lay.tiles(), 4);
        let s = store(4, 1, 9);
        let x = Tensor::randn(&[1, 7, 7, 4], 1.0, &mut Rng::new(1, 0));
        assert_eq!(windowed(&s, 1, 4, &x).shape(), &[1, 7, 7, 4]);
    }

    #[test]
    fn windows_are_isolated() {
        let s = store(4, 2, 10);
        let x = Tensor::randn(&[1, 6, 6, 4], 1.0, &mut Rng::new(2, 0));
        let mut xp = x.clone();
        // token (1, 1) lives in tile (0, 0) for window 3
        for ch in 0..4 {
            xp.data_mut()[(6 + 1) * 4 + ch] += 1.0;
        }
        let (a, b) = (windowed(&s, 2, 3, &x), windowed(&s, 2, 3, &xp));
        for y in 0..6 {
            for xx in 0..6 {
                let d: f64 = (0..4)
                    .map(|ch| (a.data()[(y * 6 + xx) * 4 + ch] - b.data()[(y * 6 + xx) * 4 + ch]).abs())
                    .fold(0.0, f64::max);
                if y < 3 && xx < 3 {
                    assert!(d > 1e-6, "({y},{xx})");
                } else {
                    assert_eq!(d, 0.0, "({y},{xx})");
                }
            }
        }
    }

    #[test]
    fn windowed_gradients() {
        let s = store(4, 2, 11);
        let x = Tensor::randn(&[1, 3, 3, 4], 1.0, &mut Rng::new(3, 0));
        let rep = grad_check_with_params(
            &s,
            &[x],
            |ctx, v| windowed_attention(ctx, "a", 2, 2, v[0]),
            1e-4,
            4,
            usize::MAX,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
