//! Input-dependent (selective) scan with a diagonal state matrix.
//!
//! Per channel `d` and state `n`, with `z = Δ_t[d] · a[d,n]`:
//!
//! ```text
//! ā = exp(z)
//! b̄ = Δ_t[d] · φ(z) · B_t[n]        φ(z) = (e^z − 1) / z,  φ(0) = 1
//! h_t[d,n] = ā h_{t−1}[d,n] + b̄ u_t[d]
//! y_t[d]   = Σ_n C_t[n] h_t[d,n]
//! ```
//!
//! `B_t`, `C_t` and `Δ_t` are projections of the token `u_t`; `Δ_t` passes
//! through softplus so it stays positive.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::softplus;
use crate::tensor::Tensor;

/// `(e^z − 1)/z`, regular at 0.
pub fn phi(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0)))
    } else {
        z.exp_m1() / z
    }
}

/// Derivative of [`phi`].
pub fn phi_prime(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z / 30.0))
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

/// Batch/sequence/channel/state extents of one scan call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

impl ScanDims {
    fn check(&self, u: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
        let btd = self.batch * self.len * self.channels;
        let btn = self.batch * self.len * self.state;
        if u.len() != btd
            || delta.len() != btd
            || a.len() != self.channels * self.state
            || b.len() != btn
            || c.len() != btn
        {
            return Err(Error::Dimension(format!(
                "selective scan: operand sizes do not match {self:?}"
            )));
        }
        Ok(())
    }
}

/// Forward selective scan.
///
/// Layouts: `u`, `delta`: `[B, T, D]`; `a`: `[D, N]`; `b`, `c`: `[B, T, N]`.
/// Returns `y: [B, T, D]` and every state `h: [B, T, D, N]` (for the backward pass).
pub fn selective_scan_core(
    dims: ScanDims,
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    dims.check(u, delta, a, b, c)?;
    let ScanDims {
        batch,
        len,
        channels: dd,
        state: nn,
    } = dims;
    if let Some(bad) = delta.iter().find(|v| !v.is_finite() || **v <= 0.0) {
        return Err(Error::numeric(
            "selective_scan",
            format!("step Δ(t) must be finite and positive, got {bad}"),
        ));
    }
    let mut y = vec![0.0; batch * len * dd];
    let mut states = vec![0.0; batch * len * dd * nn];
    for bi in 0..batch {
        for d in 0..dd {
            let mut h = vec![0.0; nn];
            for t in 0..len {
                let row = bi * len + t;
                let dl = delta[row * dd + d];
                let ut = u[row * dd + d];
                let bt = &b[row * nn..][..nn];
                let ct = &c[row * nn..][..nn];
                let mut acc = 0.0;
                for n in 0..nn {
                    let z = dl * a[d * nn + n];
                    h[n] = z.exp() * h[n] + dl * phi(z) * bt[n] * ut;
                    acc += ct[n] * h[n];
                }
                states[(row * dd + d) * nn..][..nn].copy_from_slice(&h);
                y[row * dd + d] = acc;
            }
        }
    }
    Ok((y, states))
}

/// Gradients of the selective scan w.r.t. each operand.
#[derive(Clone, Debug)]
pub struct SelectiveGrads {
    pub u: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Reverse pass through the recurrence given the output gradient `gy: [B, T, D]`
/// and the states saved by [`selective_scan_core`].
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_backward(
    dims: ScanDims,
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    states: &[f64],
    gy: &[f64],
) -> SelectiveGrads {
    let ScanDims {
        batch,
        len,
        channels: dd,
        state: nn,
    } = dims;
    let mut g = SelectiveGrads {
        u: vec![0.0; u.len()],
        delta: vec![0.0; delta.len()],
        a: vec![0.0; a.len()],
        b: vec![0.0; b.len()],
        c: vec![0.0; c.len()],
    };
    let mut gh = vec![0.0; nn];
    for bi in 0..batch {
        for d in 0..dd {
            gh.iter_mut().for_each(|v| *v = 0.0);
            for t in (0..len).rev() {
                let row = bi * len + t;
                let i = row * dd + d;
                let dl = delta[i];
                let ut = u[i];
                let gyt = gy[i];
                let h_t = &states[i * nn..][..nn];
                for n in 0..nn {
                    let an = a[d * nn + n];
                    let bt = b[row * nn + n];
                    let ct = c[row * nn + n];
                    let z = dl * an;
                    let ez = z.exp();
                    let ph = phi(z);
                    let h_prev = if t > 0 { states[(i - dd) * nn + n] } else { 0.0 };

                    g.c[row * nn + n] += gyt * h_t[n];
                    let ght = gh[n] + gyt * ct;

                    // h_t = ā h_prev + β u,  β = B Δ φ(z)
                    let beta = bt * dl * ph;
                    let g_abar = ght * h_prev;
                    let g_beta = ght * ut;
                    g.u[i] += ght * beta;
                    g.delta[i] += g_abar * an * ez + g_beta * bt * ez;
                    g.a[d * nn + n] += g_abar * dl * ez + g_beta * bt * dl * dl * phi_prime(z);
                    g.b[row * nn + n] += g_beta * dl * ph;
                    gh[n] = ght * ez;
                }
            }
        }
    }
    g
}

/// Learned parameters of a selective scan over `D` channels with `N` states.
///
/// `B_t`, `C_t` and a rank-`R` code for `Δ_t` come from one projection of the
/// token; the `Δ` code is lifted back to `D` channels by `dt_proj` + `dt_bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveParams {
    /// `[D, N]`; the state matrix is `A = −exp(a_log)` (always negative).
    pub a_log: Tensor,
    /// `[D, R + 2N]`, columns ordered `(Δ code, B, C)`.
    pub x_proj: Tensor,
    /// `[R, D]`.
    pub dt_proj: Tensor,
    /// `[D]`.
    pub dt_bias: Tensor,
}

impl SelectiveParams {
    /// Rank of the Δ projection for a given channel count.
    pub fn dt_rank(channels: usize) -> usize {
        channels.div_ceil(16)
    }

    /// Negative `A` diagonals log-spaced in `[−1, −1e−2]`, Δ initialised
    /// log-uniformly in `[1e−3, 1e−1]`.
    pub fn init(channels: usize, state: usize, rng: &mut Rng) -> Self {
        let r = Self::dt_rank(channels);
        let a_log = Tensor::from_fn(&[channels, state], |i| {
            let n = i % state;
            let frac = if state > 1 { n as f64 / (state - 1) as f64 } else { 0.0 };
            // |a| = 10^(-2 + 2·frac)
            (-2.0 + 2.0 * frac) * std::f64::consts::LN_10
        });
        let x_proj = Tensor::randn(&[channels, r + 2 * state], 1.0 / (channels as f64).sqrt(), rng);
        let dt_proj = Tensor::randn(&[r, channels], 1.0 / (r as f64).sqrt(), rng);
        let dt_bias = Tensor::from_fn(&[channels], |_| {
            let dt = (rng.uniform_range(1e-3f64.ln(), 1e-1f64.ln())).exp();
            // inverse softplus
            dt + (-(-dt).exp_m1()).ln()
        });
        Self {
            a_log,
            x_proj,
            dt_proj,
            dt_bias,
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn rank(&self) -> usize {
        self.dt_proj.shape()[0]
    }

    pub fn a(&self) -> Vec<f64> {
        self.a_log.data().iter().map(|v| -v.exp()).collect()
    }

    /// Per-token `(Δ, B, C)` for `u: [T, D]`, as `[T, D]`, `[T, N]`, `[T, N]`.
    pub fn project(&self, u: &Tensor) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (dd, nn, r) = (self.channels(), self.state(), self.rank());
        if u.rank() != 2 || u.shape()[1] != dd {
            return Err(Error::Dimension(format!(
                "selective scan: input {:?} for {dd} channels",
                u.shape()
            )));
        }
        let t = u.shape()[0];
        let width = r + 2 * nn;
        let (xp, dp, db) = (self.x_proj.data(), self.dt_proj.data(), self.dt_bias.data());
        let mut delta = vec![0.0; t * dd];
        let mut b = vec![0.0; t * nn];
        let mut c = vec![0.0; t * nn];
        for ti in 0..t {
            let row = &u.data()[ti * dd..][..dd];
            let mut proj = vec![0.0; width];
            for (k, &uk) in row.iter().enumerate() {
                for (p, w) in proj.iter_mut().zip(&xp[k * width..][..width]) {
                    *p += uk * w;
                }
            }
            for d in 0..dd {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += proj[k] * dp[k * dd + d];
                }
                delta[ti * dd + d] = softplus(acc + db[d]);
            }
            b[ti * nn..][..nn].copy_from_slice(&proj[r..r + nn]);
            c[ti * nn..][..nn].copy_from_slice(&proj[r + nn..]);
        }
        Ok((delta, b, c))
    }
}

/// Selective scan of `u: [T, D]` under `sp`.
pub fn selective_scan(sp: &SelectiveParams, u: &Tensor) -> Result<Tensor> {
    let (delta, b, c) = sp.project(u)?;
    let dims = ScanDims {
        batch: 1,
        len: u.shape()[0],
        channels: sp.channels(),
        state: sp.state(),
    };
    let (y, _) = selective_scan_core(dims, u.data(), &delta, &sp.a(), &b, &c)?;
    Tensor::new(u.shape(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{recurrent_scan, zoh_discretize, SsmParams};

    #[test]
    fn phi_is_continuous_at_series_switch() {
        for z in [0.999e-3f64, 1.001e-3, -0.999e-3, -1.001e-3] {
            let exact = z.exp_m1() / z;
            assert!((phi(z) - exact).abs() < 1e-14);
            let fd = (phi(z + 1e-6) - phi(z - 1e-6)) / 2e-6;
            assert!((phi_prime(z) - fd).abs() < 1e-8);
        }
        assert_eq!(phi(0.0), 1.0);
        assert_eq!(phi_prime(0.0), 0.5);
    }

    #[test]
    fn zero_readout_gives_zero_output() {
        let mut rng = Rng::new(3, 0);
        let mut sp = SelectiveParams::init(6, 4, &mut rng);
        // zero the B and C columns of the projection
        let width = sp.rank() + 8;
        for k in 0..6 {
            for j in sp.rank()..width {
                sp.x_proj.data_mut()[k * width + j] = 0.0;
            }
        }
        let u = Tensor::randn(&[12, 6], 1.0, &mut rng);
        let y = selective_scan(&sp, &u).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_projections_reduce_to_lti_scan() {
        let mut rng = Rng::new(12, 0);
        let (t, dd, nn) = (40, 3, 4);
        let a: Vec<f64> = (0..dd * nn).map(|_| -rng.uniform_range(0.05, 2.0)).collect();
        let bvec: Vec<f64> = (0..nn).map(|_| rng.normal()).collect();
        let cvec: Vec<f64> = (0..nn).map(|_| rng.normal()).collect();
        let steps: Vec<f64> = (0..dd).map(|_| rng.uniform_range(0.01, 0.5)).collect();
        let u: Vec<f64> = (0..t * dd).map(|_| rng.normal()).collect();
        let delta: Vec<f64> = (0..t * dd).map(|i| steps[i % dd]).collect();
        let b: Vec<f64> = (0..t).flat_map(|_| bvec.clone()).collect();
        let c: Vec<f64> = (0..t).flat_map(|_| cvec.clone()).collect();
        let dims = ScanDims { batch: 1, len: t, channels: dd, state: nn };
        let (y, _) = selective_scan_core(dims, &u, &delta, &a, &b, &c).unwrap();
        for d in 0..dd {
            let p = SsmParams::diagonal(a[d * nn..(d + 1) * nn].to_vec(), bvec.clone(), cvec.clone(), steps[d]).unwrap();
            let disc = zoh_discretize(&p).unwrap();
            let x: Vec<f64> = (0..t).map(|ti| u[ti * dd + d]).collect();
            let want = recurrent_scan(&disc, &x);
            let scale = want.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            for ti in 0..t {
                assert!((y[ti * dd + d] - want[ti]).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn selective_scan_is_causal() {
        let mut rng = Rng::new(8, 0);
        let sp = SelectiveParams::init(4, 3, &mut rng);
        let u = Tensor::randn(&[10, 4], 1.0, &mut rng);
        let y = selective_scan(&sp, &u).unwrap();
        for t in 0..9 {
            let mut up = u.clone();
            for d in 0..4 {
                up.data_mut()[(t + 1) * 4 + d] += 0.3;
            }
            let yp = selective_scan(&sp, &up).unwrap();
            for s in 0..=t {
                for d in 0..4 {
                    assert_eq!(y.at(&[s, d]), yp.at(&[s, d]));
                }
            }
        }
    }

    #[test]
    fn non_finite_step_is_numeric_error() {
        let dims = ScanDims { batch: 1, len: 1, channels: 1, state: 1 };
        let r = selective_scan_core(dims, &[1.0], &[f64::NAN], &[-1.0], &[1.0], &[1.0]);
        assert!(matches!(r, Err(Error::Numeric { .. })));
    }

    #[test]
    fn init_a_is_negative_and_log_spaced() {
        let mut rng = Rng::new(0, 0);
        let sp = SelectiveParams::init(2, 3, &mut rng);
        let a = sp.a();
        assert!(a.iter().all(|&v| v < 0.0));
        assert!((a[0] + 1e-2).abs() < 1e-15);
        assert!((a[1] + 1e-1).abs() < 1e-15);
        assert!((a[2] + 1.0).abs() < 1e-15);
    }
}
