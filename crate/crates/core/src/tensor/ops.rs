//! Differentiable tensor ops recorded on a [`Tape`].

use std::sync::Arc;

use super::tape::{BackwardFn, Tape, Var};
use super::{strides, Tensor};
use crate::error::{Error, Result};

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// Flat index into `small` for every flat index of `big`, where `small` has
/// the same rank and each extent is either equal or 1.
fn broadcast_map(big: &[usize], small: &[usize]) -> Option<Vec<usize>> {
    if big.len() != small.len() {
        return None;
    }
    for (b, s) in big.iter().zip(small) {
        if s != b && *s != 1 {
            return None;
        }
    }
    let n: usize = big.iter().product();
    let ss = strides(small);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; big.len()];
    for _ in 0..n {
        let mut j = 0;
        for d in 0..big.len() {
            if small[d] != 1 {
                j += idx[d] * ss[d];
            }
        }
        out.push(j);
        for d in (0..big.len()).rev() {
            idx[d] += 1;
            if idx[d] < big[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(out)
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Tape {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let map = if sa == sb {
            None
        } else {
            Some(Arc::new(
                broadcast_map(&sa, &sb).ok_or_else(|| dim_err(name, &sa, &sb))?,
            ))
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let j = |i: usize| map.as_ref().map_or(i, |m| m[i]);
        let out: Vec<f64> = (0..av.len())
            .map(|i| match kind {
                Binary::Add => av[i] + bv[j(i)],
                Binary::Sub => av[i] - bv[j(i)],
                Binary::Mul => av[i] * bv[j(i)],
            })
            .collect();
        let value = Tensor::new(&sa, out)?;
        let bw: BackwardFn = Box::new(move |inp, _out, g| {
            let (a, b) = (inp[0], inp[1]);
            let j = |i: usize| map.as_ref().map_or(i, |m| m[i]);
            let gd = g.data();
            let mut ga = vec![0.0; gd.len()];
            let mut gb = vec![0.0; b.numel()];
            for i in 0..gd.len() {
                match kind {
                    Binary::Add => {
                        ga[i] = gd[i];
                        gb[j(i)] += gd[i];
                    }
                    Binary::Sub => {
                        ga[i] = gd[i];
                        gb[j(i)] -= gd[i];
                    }
                    Binary::Mul => {
                        ga[i] = gd[i] * b.data()[j(i)];
                        gb[j(i)] += gd[i] * a.data()[i];
                    }
                }
            }
            vec![
                Some(Tensor::new(a.shape(), ga).unwrap()),
                Some(Tensor::new(b.shape(), gb).unwrap()),
            ]
        });
        self.push(name, value, &[a, b], bw)
    }

    /// Elementwise sum. `b` may broadcast along axes where its extent is 1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Elementwise product. `b` may broadcast along axes where its extent is 1.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Adds a `[C]` bias along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let c = *sx.last().unwrap();
        if sb != [c] {
            return Err(dim_err("add_bias", &sx, &sb));
        }
        let mut shape = vec![1; sx.len()];
        shape[sx.len() - 1] = c;
        let b2 = self.reshape(bias, &shape)?;
        self.add(x, b2)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * s);
        self.push(
            "scale",
            value,
            &[x],
            Box::new(move |_, _, g| vec![Some(g.map(|v| v * s))]),
        )
    }

    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Var> {
        let value = self.value(x).map(f);
        let bw: BackwardFn = Box::new(move |inp, out, g| {
            let d = inp[0]
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape(), d).unwrap())]
        });
        self.push(op, value, &[x], bw)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    /// x * sigmoid(x).
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "silu",
            x,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, gelu, gelu_grad)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "relu",
            x,
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    /// ln(1 + e^x), stable for large |x|.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let orig = self.shape(x).to_vec();
        self.push(
            "reshape",
            value,
            &[x],
            Box::new(move |_, _, g| vec![Some(g.clone().reshape(&orig).unwrap())]),
        )
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Dimension(format!(
                "permute: axes {axes:?} invalid for shape {s:?}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
        let in_strides = strides(&s);
        let n = self.value(x).numel();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; s.len()];
        for _ in 0..n {
            map.push(
                idx.iter()
                    .zip(axes)
                    .map(|(&i, &a)| i * in_strides[a])
                    .sum::<usize>(),
            );
            for d in (0..s.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        self.gather(x, Arc::new(map.into_iter().map(Some).collect()), &out_shape)
    }

    /// `out[i] = x[map[i]]`, or zero where `map[i]` is `None`.
    /// Covers padding, slicing, window partitioning and transposition.
    pub fn gather(&mut self, x: Var, map: Arc<Vec<Option<usize>>>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x).data();
        let n: usize = shape.iter().product();
        if map.len() != n {
            return Err(Error::Dimension(format!(
                "gather: map of length {} for output shape {shape:?}",
                map.len()
            )));
        }
        if let Some(bad) = map.iter().flatten().find(|&&j| j >= xv.len()) {
            return Err(Error::Dimension(format!(
                "gather: source index {bad} out of range {}",
                xv.len()
            )));
        }
        let out = map.iter().map(|m| m.map_or(0.0, |j| xv[j])).collect();
        let value = Tensor::new(shape, out)?;
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let mut gx = vec![0.0; inp[0].numel()];
            for (m, gv) in map.iter().zip(g.data()) {
                if let Some(j) = m {
                    gx[*j] += gv;
                }
            }
            vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
        });
        self.push("gather", value, &[x], bw)
    }

    /// Contiguous range `[start, start+len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = *s.last().unwrap();
        if start + len > c || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_last: [{start}, {}) outside last extent {c}",
                start + len
            )));
        }
        let rows = self.value(x).numel() / c;
        let mut map = Vec::with_capacity(rows * len);
        for r in 0..rows {
            for k in 0..len {
                map.push(Some(r * c + start + k));
            }
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        self.gather(x, Arc::new(map), &shape)
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if &s[..s.len() - 1] != lead {
                return Err(dim_err("concat_last", &first, s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let v = self.value(x).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(&shape, out)?;
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let gd = g.data();
            let mut off = 0;
            inp.iter()
                .zip(&widths)
                .map(|(t, &w)| {
                    let mut gx = vec![0.0; rows * w];
                    for r in 0..rows {
                        gx[r * w..(r + 1) * w]
                            .copy_from_slice(&gd[r * total + off..r * total + off + w]);
                    }
                    off += w;
                    Some(Tensor::new(t.shape(), gx).unwrap())
                })
                .collect()
        });
        self.push("concat", value, xs, bw)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(
            "sum",
            value,
            &[x],
            Box::new(|inp, _, g| vec![Some(Tensor::full(inp[0].shape(), g.data()[0]))]),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean over one axis, kept with extent 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Dimension(format!("mean_axis: axis {axis} for shape {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0;
                for k in 0..len {
                    acc += xv[(o * len + k) * inner + i];
                }
                out[o * inner + i] = acc / len as f64;
            }
        }
        let mut shape = s.clone();
        shape[axis] = 1;
        let value = Tensor::new(&shape, out)?;
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let gd = g.data();
            let mut gx = vec![0.0; inp[0].numel()];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        gx[(o * len + k) * inner + i] = gd[o * inner + i] / len as f64;
                    }
                }
            }
            vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
        });
        self.push("mean_axis", value, &[x], bw)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", &sa, &sb));
        }
        let a3 = self.reshape(a, &[1, sa[0], sa[1]])?;
        let b3 = self.reshape(b, &[1, sb[0], sb[1]])?;
        let c = self.bmm(a3, b3)?;
        self.reshape(c, &[sa[0], sb[1]])
    }

    /// Batched matrix product of `[g, m, k]` and `[g, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err("bmm", &sa, &sb));
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let out = bmm_raw(self.value(a).data(), self.value(b).data(), g, m, k, n);
        let value = Tensor::new(&[g, m, n], out)?;
        let bw: BackwardFn = Box::new(move |inp, _, gr| {
            let (av, bv, gd) = (inp[0].data(), inp[1].data(), gr.data());
            let mut ga = vec![0.0; g * m * k];
            let mut gb = vec![0.0; g * k * n];
            for bi in 0..g {
                let ao = bi * m * k;
                let bo = bi * k * n;
                let go = bi * m * n;
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gd[go + i * n + j] * bv[bo + p * n + j];
                        }
                        ga[ao + i * k + p] = acc;
                    }
                }
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[ao + i * k + p];
                        for j in 0..n {
                            gb[bo + p * n + j] += aip * gd[go + i * n + j];
                        }
                    }
                }
            }
            vec![
                Some(Tensor::new(&[g, m, k], ga).unwrap()),
                Some(Tensor::new(&[g, k, n], gb).unwrap()),
            ]
        });
        self.push("bmm", value, &[a, b], bw)
    }

    /// Affine map over the last axis: `x[..., Cin] · w[Cin, Cout] + b[Cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let cin = *sx.last().unwrap();
        if sw.len() != 2 || sw[0] != cin {
            return Err(dim_err("linear", &sx, &sw));
        }
        let cout = sw[1];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(dim_err("linear bias", &sw, self.shape(b)));
            }
        }
        let rows = self.value(x).numel() / cin;
        let mut out = bmm_raw(self.value(x).data(), self.value(w).data(), 1, rows, cin, cout);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in 0..rows {
                for (o, bb) in out[r * cout..(r + 1) * cout].iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = cout;
        let value = Tensor::new(&shape, out)?;
        let has_bias = b.is_some();
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let (xv, wv, gd) = (inp[0].data(), inp[1].data(), g.data());
            let mut gx = vec![0.0; rows * cin];
            let mut gw = vec![0.0; cin * cout];
            for r in 0..rows {
                let gr = &gd[r * cout..(r + 1) * cout];
                for p in 0..cin {
                    let wrow = &wv[p * cout..(p + 1) * cout];
                    let mut acc = 0.0;
                    for (gj, wj) in gr.iter().zip(wrow) {
                        acc += gj * wj;
                    }
                    gx[r * cin + p] = acc;
                    let xp = xv[r * cin + p];
                    for (gwj, gj) in gw[p * cout..(p + 1) * cout].iter_mut().zip(gr) {
                        *gwj += xp * gj;
                    }
                }
            }
            let mut res = vec![
                Some(Tensor::new(inp[0].shape(), gx).unwrap()),
                Some(Tensor::new(inp[1].shape(), gw).unwrap()),
            ];
            if has_bias {
                let mut gb = vec![0.0; cout];
                for r in 0..rows {
                    for (b, gj) in gb.iter_mut().zip(&gd[r * cout..(r + 1) * cout]) {
                        *b += gj;
                    }
                }
                res.push(Some(Tensor::new(&[cout], gb).unwrap()));
            }
            res
        });
        let parents: Vec<Var> = match b {
            Some(b) => vec![x, w, b],
            None => vec![x, w],
        };
        self.push("linear", value, &parents, bw)
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = *s.last().unwrap();
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for (row, orow) in xv.chunks(c).zip(out.chunks_mut(c)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let value = Tensor::new(&s, out)?;
        let bw: BackwardFn = Box::new(move |_, y, g| {
            let mut gx = vec![0.0; y.numel()];
            for ((yr, gr), xr) in y.data().chunks(c).zip(g.data().chunks(c)).zip(gx.chunks_mut(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((x, &yv), &gv) in xr.iter_mut().zip(yr).zip(gr) {
                    *x = yv * (gv - dot);
                }
            }
            vec![Some(Tensor::new(y.shape(), gx).unwrap())]
        });
        self.push("softmax", value, &[x], bw)
    }

    /// Layer normalization over the last axis with affine `gain`, `bias` of shape `[C]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = *s.last().unwrap();
        if c < 2 {
            return Err(Error::Config(format!(
                "layer_norm needs at least 2 channels, got {c}"
            )));
        }
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(dim_err("layer_norm affine", &s, self.shape(gain)));
        }
        let xv = self.value(x).data();
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        let rows = xv.len() / c;
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for k in 0..c {
                let h = (row[k] - mean) * is;
                xhat[r * c + k] = h;
                out[r * c + k] = h * gv[k] + bv[k];
            }
        }
        let value = Tensor::new(&s, out)?;
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let gv = inp[1].data();
            let gd = g.data();
            let mut gx = vec![0.0; gd.len()];
            let mut ggain = vec![0.0; c];
            let mut gbias = vec![0.0; c];
            for r in 0..rows {
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for k in 0..c {
                    let i = r * c + k;
                    let gh = gd[i] * gv[k];
                    m1 += gh;
                    m2 += gh * xhat[i];
                    ggain[k] += gd[i] * xhat[i];
                    gbias[k] += gd[i];
                }
                m1 /= c as f64;
                m2 /= c as f64;
                for k in 0..c {
                    let i = r * c + k;
                    gx[i] = inv_std[r] * (gd[i] * gv[k] - m1 - xhat[i] * m2);
                }
            }
            vec![
                Some(Tensor::new(inp[0].shape(), gx).unwrap()),
                Some(Tensor::new(&[c], ggain).unwrap()),
                Some(Tensor::new(&[c], gbias).unwrap()),
            ]
        });
        self.push("layer_norm", value, &[x, gain, bias], bw)
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross_entropy: logits {s:?} for {} labels",
                labels.len()
            )));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Dimension(format!(
                "cross_entropy: label {bad} outside {k} classes"
            )));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &lv[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[labels[r]];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let value = Tensor::scalar(loss / b as f64);
        let labels = labels.to_vec();
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let scale = g.data()[0] / b as f64;
            let mut gx = probs.clone();
            for (r, &l) in labels.iter().enumerate() {
                gx[r * k + l] -= 1.0;
            }
            for v in &mut gx {
                *v *= scale;
            }
            vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
        });
        self.push("cross_entropy", value, &[logits], bw)
    }
}

fn bmm_raw(a: &[f64], b: &[f64], g: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; g * m * n];
    for bi in 0..g {
        let ao = bi * m * k;
        let bo = bi * k * n;
        let oo = bi * m * n;
        for i in 0..m {
            let orow = &mut out[oo + i * n..oo + (i + 1) * n];
            for p in 0..k {
                let aip = a[ao + i * k + p];
                let brow = &b[bo + p * n..bo + (p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64, _y: f64) -> f64 {
    let u = GELU_K * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * 0.044715 * x * x)
}
