//! Convolutions (cross-correlation, no kernel flip).

use serde::{Deserialize, Serialize};

use super::tape::{BackwardFn, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Temporal alignment of a 1D kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    /// Output at `t` sees inputs `t-K+1 ..= t`.
    Causal,
    /// Output at `t` sees the centered window `t-(K-1)/2 ..= t+(K-1)/2`. Needs odd `K`.
    #[default]
    Same,
}

impl ConvMode {
    fn offset(self, k: usize, ksize: usize) -> isize {
        match self {
            ConvMode::Causal => k as isize - (ksize as isize - 1),
            ConvMode::Same => k as isize - (ksize as isize - 1) / 2,
        }
    }

    fn check(self, ksize: usize) -> Result<()> {
        if self == ConvMode::Same && ksize.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "`same` convolution needs an odd kernel width, got {ksize}"
            )));
        }
        Ok(())
    }
}

/// Splits a `[T, C]` or `[B, T, C]` shape into `(B, T, C)`.
fn seq_dims(op: &str, s: &[usize]) -> Result<(usize, usize, usize)> {
    match *s {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::Dimension(format!("{op}: expected [T, C] or [B, T, C], got {s:?}"))),
    }
}

impl Tape {
    /// Dense 1D convolution over the sequence axis.
    /// `x: [T, Cin]` or `[B, T, Cin]`, `w: [K, Cin, Cout]`, optional `bias: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, mode: ConvMode) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (b, t, cin) = seq_dims("conv1d", &sx)?;
        if sw.len() != 3 || sw[1] != cin {
            return Err(Error::Dimension(format!(
                "conv1d: kernel {sw:?} does not match input {sx:?}"
            )));
        }
        let (ks, cout) = (sw[0], sw[2]);
        mode.check(ks)?;
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return Err(Error::Dimension("conv1d: bias extent".into()));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; b * t * cout];
        for bi in 0..b {
            for ti in 0..t {
                let orow = &mut out[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                for k in 0..ks {
                    let src = ti as isize + mode.offset(k, ks);
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let xrow = &xv[(bi * t + src as usize) * cin..][..cin];
                    for (ci, &xc) in xrow.iter().enumerate() {
                        let wrow = &wv[(k * cin + ci) * cout..][..cout];
                        for (o, wc) in orow.iter_mut().zip(wrow) {
                            *o += xc * wc;
                        }
                    }
                }
                if let Some(bv) = bias {
                    for (o, bb) in orow.iter_mut().zip(self.value(bv).data()) {
                        *o += bb;
                    }
                }
            }
        }
        let mut oshape = sx.clone();
        *oshape.last_mut().unwrap() = cout;
        let value = Tensor::new(&oshape, out)?;
        let has_bias = bias.is_some();
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let (xv, wv, gd) = (inp[0].data(), inp[1].data(), g.data());
            let mut gx = vec![0.0; xv.len()];
            let mut gw = vec![0.0; wv.len()];
            let mut gb = vec![0.0; cout];
            for bi in 0..b {
                for ti in 0..t {
                    let grow = &gd[(bi * t + ti) * cout..][..cout];
                    for (o, gv) in gb.iter_mut().zip(grow) {
                        *o += gv;
                    }
                    for k in 0..ks {
                        let src = ti as isize + mode.offset(k, ks);
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let xo = (bi * t + src as usize) * cin;
                        for ci in 0..cin {
                            let wo = (k * cin + ci) * cout;
                            let mut acc = 0.0;
                            let xc = xv[xo + ci];
                            for co in 0..cout {
                                acc += grow[co] * wv[wo + co];
                                gw[wo + co] += xc * grow[co];
                            }
                            gx[xo + ci] += acc;
                        }
                    }
                }
            }
            let mut res = vec![
                Some(Tensor::new(inp[0].shape(), gx).unwrap()),
                Some(Tensor::new(inp[1].shape(), gw).unwrap()),
            ];
            if has_bias {
                res.push(Some(Tensor::new(&[cout], gb).unwrap()));
            }
            res
        });
        let parents: Vec<Var> = match bias {
            Some(bv) => vec![x, w, bv],
            None => vec![x, w],
        };
        self.push("conv1d", value, &parents, bw)
    }

    /// Per-channel 1D convolution. `x: [B, T, C]` (or `[T, C]`), `w: [K, C]`, `bias: [C]`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, bias: Var, mode: ConvMode) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (b, t, c) = seq_dims("depthwise_conv1d", &sx)?;
        if sw.len() != 2 || sw[1] != c || self.shape(bias) != [c] {
            return Err(Error::Dimension(format!(
                "depthwise_conv1d: kernel {sw:?} does not match input {sx:?}"
            )));
        }
        let ks = sw[0];
        mode.check(ks)?;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(bias).data();
        let mut out = vec![0.0; b * t * c];
        for bi in 0..b {
            for ti in 0..t {
                let orow = &mut out[(bi * t + ti) * c..][..c];
                for k in 0..ks {
                    let src = ti as isize + mode.offset(k, ks);
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let xrow = &xv[(bi * t + src as usize) * c..][..c];
                    let wrow = &wv[k * c..][..c];
                    for ((o, xc), wc) in orow.iter_mut().zip(xrow).zip(wrow) {
                        *o += xc * wc;
                    }
                }
                for (o, bb) in orow.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let value = Tensor::new(&sx, out)?;
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let (xv, wv, gd) = (inp[0].data(), inp[1].data(), g.data());
            let mut gx = vec![0.0; xv.len()];
            let mut gw = vec![0.0; wv.len()];
            let mut gb = vec![0.0; c];
            for bi in 0..b {
                for ti in 0..t {
                    let grow = &gd[(bi * t + ti) * c..][..c];
                    for (o, gv) in gb.iter_mut().zip(grow) {
                        *o += gv;
                    }
                    for k in 0..ks {
                        let src = ti as isize + mode.offset(k, ks);
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let xo = (bi * t + src as usize) * c;
                        for ch in 0..c {
                            gx[xo + ch] += grow[ch] * wv[k * c + ch];
                            gw[k * c + ch] += grow[ch] * xv[xo + ch];
                        }
                    }
                }
            }
            vec![
                Some(Tensor::new(inp[0].shape(), gx).unwrap()),
                Some(Tensor::new(inp[1].shape(), gw).unwrap()),
                Some(Tensor::new(&[c], gb).unwrap()),
            ]
        });
        self.push("depthwise_conv1d", value, &[x, w, bias], bw)
    }

    /// 3D convolution (cross-correlation) with zero padding.
    ///
    /// `x: [D, H, W, Cin]` or `[B, D, H, W, Cin]`, `w: [kd, kh, kw, Cin, Cout]`,
    /// optional `bias: [Cout]`. Output extent per axis is `(n + 2·pad - k) / stride + 1`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (b, ins) = match *sx {
            [d, h, w, c] => (1, [d, h, w, c]),
            [b, d, h, w, c] => (b, [d, h, w, c]),
            _ => {
                return Err(Error::Dimension(format!(
                    "conv3d: expected rank 4 or 5 input, got {sx:?}"
                )))
            }
        };
        if sw.len() != 5 || sw[3] != ins[3] {
            return Err(Error::Dimension(format!(
                "conv3d: kernel {sw:?} does not match input {sx:?}"
            )));
        }
        if stride.contains(&0) {
            return Err(Error::Config("conv3d: stride must be positive".into()));
        }
        let geo = Conv3dGeometry::new(b, ins, [sw[0], sw[1], sw[2]], sw[4], stride, pad)?;
        if let Some(bv) = bias {
            if self.shape(bv) != [geo.cout] {
                return Err(Error::Dimension("conv3d: bias extent".into()));
            }
        }
        let mut out = geo.forward(self.value(x).data(), self.value(w).data());
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for row in out.chunks_mut(geo.cout) {
                for (o, bb) in row.iter_mut().zip(bd) {
                    *o += bb;
                }
            }
        }
        let mut oshape: Vec<usize> = geo.out.to_vec();
        oshape.push(geo.cout);
        if sx.len() == 5 {
            oshape.insert(0, b);
        }
        let value = Tensor::new(&oshape, out)?;
        let has_bias = bias.is_some();
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let (gx, gw) = geo.backward(inp[0].data(), inp[1].data(), g.data());
            let mut res = vec![
                Some(Tensor::new(inp[0].shape(), gx).unwrap()),
                Some(Tensor::new(inp[1].shape(), gw).unwrap()),
            ];
            if has_bias {
                let mut gb = vec![0.0; geo.cout];
                for row in g.data().chunks(geo.cout) {
                    for (o, gv) in gb.iter_mut().zip(row) {
                        *o += gv;
                    }
                }
                res.push(Some(Tensor::new(&[geo.cout], gb).unwrap()));
            }
            res
        });
        let parents: Vec<Var> = match bias {
            Some(bv) => vec![x, w, bv],
            None => vec![x, w],
        };
        self.push("conv3d", value, &parents, bw)
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv3dGeometry {
    batch: usize,
    input: [usize; 3],
    cin: usize,
    kernel: [usize; 3],
    cout: usize,
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
}

impl Conv3dGeometry {
    fn new(
        batch: usize,
        ins: [usize; 4],
        kernel: [usize; 3],
        cout: usize,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = ins[a] + 2 * pad[a];
            if span < kernel[a] {
                return Err(Error::Dimension(format!(
                    "conv3d: axis {a} has extent {} (padded {span}) smaller than kernel {}",
                    ins[a], kernel[a]
                )));
            }
            out[a] = (span - kernel[a]) / stride[a] + 1;
        }
        Ok(Self {
            batch,
            input: [ins[0], ins[1], ins[2]],
            cin: ins[3],
            kernel,
            cout,
            stride,
            pad,
            out,
        })
    }

    /// Input coordinate for output index `o` and kernel tap `k` on axis `a`.
    #[inline]
    fn src(&self, a: usize, o: usize, k: usize) -> Option<usize> {
        let p = (o * self.stride[a] + k) as isize - self.pad[a] as isize;
        (p >= 0 && (p as usize) < self.input[a]).then_some(p as usize)
    }

    fn x_index(&self, b: usize, d: usize, h: usize, w: usize) -> usize {
        (((b * self.input[0] + d) * self.input[1] + h) * self.input[2] + w) * self.cin
    }

    fn w_index(&self, kd: usize, kh: usize, kw: usize) -> usize {
        ((kd * self.kernel[1] + kh) * self.kernel[2] + kw) * self.cin * self.cout
    }

    fn forward(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let [od, oh, ow] = self.out;
        let mut out = vec![0.0; self.batch * od * oh * ow * self.cout];
        let mut pos = 0;
        for b in 0..self.batch {
            for d in 0..od {
                for h in 0..oh {
                    for wi in 0..ow {
                        let acc = &mut out[pos * self.cout..(pos + 1) * self.cout];
                        for kd in 0..self.kernel[0] {
                            let Some(sd) = self.src(0, d, kd) else { continue };
                            for kh in 0..self.kernel[1] {
                                let Some(sh) = self.src(1, h, kh) else { continue };
                                for kw in 0..self.kernel[2] {
                                    let Some(sw) = self.src(2, wi, kw) else { continue };
                                    let xo = self.x_index(b, sd, sh, sw);
                                    let wo = self.w_index(kd, kh, kw);
                                    for ci in 0..self.cin {
                                        let xv = x[xo + ci];
                                        let wrow = &w[wo + ci * self.cout..][..self.cout];
                                        for (a, wv) in acc.iter_mut().zip(wrow) {
                                            *a += xv * wv;
                                        }
                                    }
                                }
                            }
                        }
                        pos += 1;
                    }
                }
            }
        }
        out
    }

    fn backward(&self, x: &[f64], w: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let [od, oh, ow] = self.out;
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        let mut pos = 0;
        for b in 0..self.batch {
            for d in 0..od {
                for h in 0..oh {
                    for wi in 0..ow {
                        let grow = &g[pos * self.cout..(pos + 1) * self.cout];
                        for kd in 0..self.kernel[0] {
                            let Some(sd) = self.src(0, d, kd) else { continue };
                            for kh in 0..self.kernel[1] {
                                let Some(sh) = self.src(1, h, kh) else { continue };
                                for kw in 0..self.kernel[2] {
                                    let Some(sw) = self.src(2, wi, kw) else { continue };
                                    let xo = self.x_index(b, sd, sh, sw);
                                    let wo = self.w_index(kd, kh, kw);
                                    for ci in 0..self.cin {
                                        let xv = x[xo + ci];
                                        let base = wo + ci * self.cout;
                                        let mut acc = 0.0;
                                        for co in 0..self.cout {
                                            acc += grow[co] * w[base + co];
                                            gw[base + co] += xv * grow[co];
                                        }
                                        gx[xo + ci] += acc;
                                    }
                                }
                            }
                        }
                        pos += 1;
                    }
                }
            }
        }
        (gx, gw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{grad_check, Precision};

    /// Direct nested-loop reference, one output element at a time.
    fn naive_conv3d(
        x: &Tensor,
        w: &Tensor,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> (Vec<usize>, Vec<f64>) {
        let s = x.shape();
        let k = w.shape();
        let (d, h, wd, cin) = (s[0], s[1], s[2], s[3]);
        let cout = k[4];
        let od = (d + 2 * pad[0] - k[0]) / stride[0] + 1;
        let oh = (h + 2 * pad[1] - k[1]) / stride[1] + 1;
        let ow = (wd + 2 * pad[2] - k[2]) / stride[2] + 1;
        let mut out = Vec::new();
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    for co in 0..cout {
                        let mut acc = 0.0;
                        for a in 0..k[0] {
                            for b in 0..k[1] {
                                for c in 0..k[2] {
                                    let iz = (z * stride[0] + a) as isize - pad[0] as isize;
                                    let iy = (y * stride[1] + b) as isize - pad[1] as isize;
                                    let ix = (xx * stride[2] + c) as isize - pad[2] as isize;
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        acc += x.at(&[iz as usize, iy as usize, ix as usize, ci])
                                            * w.at(&[a, b, c, ci, co]);
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        (vec![od, oh, ow, cout], out)
    }

    #[test]
    fn conv3d_matches_naive_loops_exactly() {
        let mut rng = Rng::new(31, 0);
        for (shape, stride, pad) in [
            ([6, 6, 6, 4], [1, 1, 1], [1, 1, 1]),
            ([5, 6, 4, 2], [2, 1, 2], [0, 1, 1]),
            ([6, 5, 6, 3], [1, 2, 1], [0, 0, 0]),
        ] {
            let x = Tensor::randn(&shape, 1.0, &mut rng);
            let w = Tensor::randn(&[3, 3, 3, shape[3], 3], 1.0, &mut rng);
            let (oshape, want) = naive_conv3d(&x, &w, stride, pad);
            let mut tp = Tape::new(Precision::F64);
            let xv = tp.constant(x).unwrap();
            let wv = tp.constant(w).unwrap();
            let y = tp.conv3d(xv, wv, None, stride, pad).unwrap();
            assert_eq!(tp.shape(y), &oshape[..]);
            assert_eq!(tp.value(y).data(), &want[..]);
        }
    }

    #[test]
    fn conv3d_constant_field() {
        let c = 0.75;
        let cin = 2;
        let mut tp = Tape::new(Precision::F64);
        let x = tp.constant(Tensor::full(&[5, 5, 5, cin], c)).unwrap();
        let w = tp.constant(Tensor::ones(&[3, 3, 3, cin, 1])).unwrap();
        let y = tp.conv3d(x, w, None, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(tp.shape(y), &[3, 3, 3, 1]);
        for v in tp.value(y).data() {
            assert!((v - 27.0 * c * cin as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3d_pointwise_kernel_is_matmul() {
        let mut rng = Rng::new(2, 0);
        let x = Tensor::randn(&[3, 4, 2, 5], 1.0, &mut rng);
        let w = Tensor::randn(&[1, 1, 1, 5, 3], 1.0, &mut rng);
        let mut tp = Tape::new(Precision::F64);
        let xv = tp.constant(x.clone()).unwrap();
        let wv = tp.constant(w.clone()).unwrap();
        let y = tp.conv3d(xv, wv, None, [1, 1, 1], [0, 0, 0]).unwrap();
        let xf = tp.constant(x.reshape(&[24, 5]).unwrap()).unwrap();
        let wf = tp.constant(w.reshape(&[5, 3]).unwrap()).unwrap();
        let m = tp.matmul(xf, wf).unwrap();
        assert!(tp.value(y).clone().reshape(&[24, 3]).unwrap().max_abs_diff(tp.value(m)) < 1e-12);
    }

    #[test]
    fn conv3d_rejects_empty_output() {
        let mut tp = Tape::new(Precision::F64);
        let x = tp.constant(Tensor::zeros(&[2, 5, 5, 1])).unwrap();
        let w = tp.constant(Tensor::zeros(&[3, 3, 3, 1, 1])).unwrap();
        assert!(matches!(
            tp.conv3d(x, w, None, [1, 1, 1], [0, 0, 0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn conv3d_gradients() {
        let mut rng = Rng::new(8, 0);
        let x = Tensor::randn(&[2, 4, 3, 5, 2], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 3, 3, 2, 3], 0.5, &mut rng);
        let b = Tensor::randn(&[3], 0.5, &mut rng);
        let rep = grad_check(
            |tp, v| tp.conv3d(v[0], v[1], Some(v[2]), [1, 2, 2], [1, 1, 0]),
            &[x, w, b],
            1e-4,
            1,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut rng = Rng::new(1, 0);
        let x = Tensor::randn(&[7, 3], 1.0, &mut rng);
        for mode in [ConvMode::Causal, ConvMode::Same] {
            let mut tp = Tape::new(Precision::F64);
            let xv = tp.constant(x.clone()).unwrap();
            let w = tp.constant(Tensor::eye(3).reshape(&[1, 3, 3]).unwrap()).unwrap();
            let y = tp.conv1d(xv, w, None, mode).unwrap();
            assert_eq!(tp.value(y), &x);
        }
    }

    fn conv1d_probe(mode: ConvMode, t: usize) -> f64 {
        let mut rng = Rng::new(77, 0);
        let x = Tensor::randn(&[8, 2], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2, 2], 1.0, &mut rng);
        let mut xp = x.clone();
        xp.data_mut()[(t + 1) * 2] += 0.5;
        let mut tp = Tape::new(Precision::F64);
        let wv = tp.constant(w).unwrap();
        let a = tp.constant(x).unwrap();
        let b = tp.constant(xp).unwrap();
        let ya = tp.conv1d(a, wv, None, mode).unwrap();
        let yb = tp.conv1d(b, wv, None, mode).unwrap();
        (0..2)
            .map(|c| (tp.value(ya).at(&[t, c]) - tp.value(yb).at(&[t, c])).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv1d_causality_probe() {
        for t in 0..7 {
            assert_eq!(conv1d_probe(ConvMode::Causal, t), 0.0);
            assert!(conv1d_probe(ConvMode::Same, t) > 1e-6);
        }
    }

    #[test]
    fn conv1d_same_rejects_even_kernel() {
        let mut tp = Tape::new(Precision::F64);
        let x = tp.constant(Tensor::zeros(&[5, 2])).unwrap();
        let w = tp.constant(Tensor::zeros(&[2, 2, 2])).unwrap();
        assert!(matches!(tp.conv1d(x, w, None, ConvMode::Same), Err(Error::Config(_))));
        assert!(tp.conv1d(x, w, None, ConvMode::Causal).is_ok());
    }

    #[test]
    fn conv1d_gradients() {
        let mut rng = Rng::new(5, 0);
        for mode in [ConvMode::Causal, ConvMode::Same] {
            let x = Tensor::randn(&[2, 6, 3], 1.0, &mut rng);
            let w = Tensor::randn(&[3, 3, 4], 0.5, &mut rng);
            let b = Tensor::randn(&[4], 0.5, &mut rng);
            let rep = grad_check(|tp, v| tp.conv1d(v[0], v[1], Some(v[2]), mode), &[x, w, b], 1e-4, 3).unwrap();
            assert!(rep.passed, "{mode:?} {rep:?}");

            let x = Tensor::randn(&[2, 6, 3], 1.0, &mut rng);
            let w = Tensor::randn(&[3, 3], 0.5, &mut rng);
            let b = Tensor::randn(&[3], 0.5, &mut rng);
            let rep = grad_check(|tp, v| tp.depthwise_conv1d(v[0], v[1], v[2], mode), &[x, w, b], 1e-4, 4).unwrap();
            assert!(rep.passed, "depthwise {mode:?} {rep:?}");
        }
    }
}
