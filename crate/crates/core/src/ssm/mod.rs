//! Linear state-space models.
//!
//! Continuous form `h'(t) = A h(t) + B x(t)`, `y(t) = C h(t)`, discretized with a
//! zero-order hold of step `Δ`:
//!
//! ```text
//! Ā = exp(ΔA)
//! B̄ = (ΔA)⁻¹ (exp(ΔA) − I) ΔB  =  Δ · Σ_k (ΔA)^k / (k+1)! · B
//! C̄ = C
//! ```
//!
//! The discrete system can be evaluated as a recurrence (`h_t = Ā h_{t−1} + B̄ x_t`)
//! or as a causal convolution with kernel `K = (C̄B̄, C̄ĀB̄, …, C̄Ā^{T−1}B̄)`.
//! Both paths live here and are exposed through [`SequencePath`] so callers can
//! pick one by name.

mod paths;
mod selective;

pub use paths::{KernelPath, PathRegistry, RecurrentPath, SequencePath};
pub use selective::{
    phi, phi_prime, selective_scan, selective_scan_backward, selective_scan_core, ScanDims,
    SelectiveGrads, SelectiveParams,
};

use crate::error::{Error, Result};

/// Maximum number of series terms used by [`zoh_discretize`].
pub const SERIES_TERMS: usize = 30;

/// Continuous single-input single-output state-space parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    state: usize,
    /// `M×M`, row-major.
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    delta: f64,
    diagonal: bool,
}

impl SsmParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delta: f64) -> Result<Self> {
        let m = b.len();
        if m == 0 || a.len() != m * m || c.len() != m {
            return Err(Error::Dimension(format!(
                "ssm: A has {} entries, B {}, C {}; need M×M, M, M",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("ssm: step Δ must be positive, got {delta}")));
        }
        Ok(Self {
            state: m,
            a,
            b,
            c,
            delta,
            diagonal: false,
        })
    }

    /// Diagonal `A` given by its diagonal entries.
    pub fn diagonal(a_diag: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delta: f64) -> Result<Self> {
        let m = a_diag.len();
        let mut a = vec![0.0; m * m];
        for (i, v) in a_diag.iter().enumerate() {
            a[i * m + i] = *v;
        }
        let mut p = Self::new(a, b, c, delta)?;
        p.diagonal = true;
        Ok(p)
    }

    pub fn state_dim(&self) -> usize {
        self.state
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }
}

/// Discretized parameters `(Ā, B̄, C̄)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmDiscrete {
    pub state: usize,
    /// `M×M`, row-major.
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c_bar: Vec<f64>,
    pub diagonal: bool,
}

impl SsmDiscrete {
    pub fn new(a_bar: Vec<f64>, b_bar: Vec<f64>, c_bar: Vec<f64>) -> Result<Self> {
        let m = b_bar.len();
        if m == 0 || a_bar.len() != m * m || c_bar.len() != m {
            return Err(Error::Dimension("ssm: inconsistent discrete extents".into()));
        }
        Ok(Self {
            state: m,
            a_bar,
            b_bar,
            c_bar,
            diagonal: false,
        })
    }

    /// Largest absolute row sum of Ā (an upper bound on its spectral radius).
    pub fn a_bar_inf_norm(&self) -> f64 {
        self.a_bar
            .chunks(self.state)
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn matmul_sq(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            for j in 0..m {
                out[i * m + j] += aik * b[k * m + j];
            }
        }
    }
    out
}

fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let m = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * m..(i + 1) * m];
        *o = row.iter().zip(x).map(|(r, v)| r * v).sum();
    }
}

/// Zero-order-hold discretization.
///
/// `Ā` and `B̄` come from one truncated power series in `ΔA`, so `A = 0` needs
/// no special case: the series reduces to `Ā = I`, `B̄ = ΔB`.
pub fn zoh_discretize(p: &SsmParams) -> Result<SsmDiscrete> {
    let m = p.state;
    let za: Vec<f64> = p.a.iter().map(|v| v * p.delta).collect();
    let eye: Vec<f64> = (0..m * m).map(|i| if i / m == i % m { 1.0 } else { 0.0 }).collect();
    let mut term = eye.clone();
    let mut a_bar = eye.clone();
    let mut phi = eye;
    let mut converged = false;
    for k in 1..SERIES_TERMS {
        term = matmul_sq(&term, &za, m);
        for v in &mut term {
            *v /= k as f64;
        }
        for ((ab, ph), t) in a_bar.iter_mut().zip(phi.iter_mut()).zip(&term) {
            *ab += t;
            *ph += t / (k + 1) as f64;
        }
        let tmax = term.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let amax = a_bar.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        if tmax <= f64::EPSILON * 1e-2 * amax {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numeric(
            "zoh_discretize",
            format!("series did not converge in {SERIES_TERMS} terms; ‖ΔA‖ too large"),
        ));
    }
    let mut b_bar = vec![0.0; m];
    matvec(&phi, &p.b, &mut b_bar);
    for v in &mut b_bar {
        *v *= p.delta;
    }
    Ok(SsmDiscrete {
        state: m,
        a_bar,
        b_bar,
        c_bar: p.c.clone(),
        diagonal: p.diagonal,
    })
}

/// Recurrence `h_t = Ā h_{t−1} + B̄ x_t`, `y_t = C̄ h_t` from `h_{−1} = 0`. Linear in `T`.
pub fn recurrent_scan(d: &SsmDiscrete, x: &[f64]) -> Vec<f64> {
    let m = d.state;
    let mut h = vec![0.0; m];
    let mut next = vec![0.0; m];
    let mut y = Vec::with_capacity(x.len());
    for &xt in x {
        if d.diagonal {
            for i in 0..m {
                next[i] = d.a_bar[i * m + i] * h[i] + d.b_bar[i] * xt;
            }
        } else {
            matvec(&d.a_bar, &h, &mut next);
            for (n, b) in next.iter_mut().zip(&d.b_bar) {
                *n += b * xt;
            }
        }
        std::mem::swap(&mut h, &mut next);
        y.push(d.c_bar.iter().zip(&h).map(|(c, v)| c * v).sum());
    }
    y
}

/// Convolution kernel `K[k] = C̄ Ā^k B̄` for `k < len`.
pub fn conv_kernel(d: &SsmDiscrete, len: usize) -> Result<Vec<f64>> {
    if len < 1 {
        return Err(Error::Config("conv_kernel: length must be at least 1".into()));
    }
    let m = d.state;
    let mut v = d.b_bar.clone();
    let mut next = vec![0.0; m];
    let mut k = Vec::with_capacity(len);
    for i in 0..len {
        k.push(d.c_bar.iter().zip(&v).map(|(c, x)| c * x).sum());
        if i + 1 < len {
            matvec(&d.a_bar, &v, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
    }
    Ok(k)
}

/// Causal convolution `y[t] = Σ_{s≤t} K[t−s] x[s]`. Quadratic in `T`.
pub fn kernel_apply(kernel: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() < x.len() {
        return Err(Error::Dimension(format!(
            "kernel_apply: kernel of length {} for sequence of length {}",
            kernel.len(),
            x.len()
        )));
    }
    Ok((0..x.len())
        .map(|t| {
            let mut acc = 0.0;
            for s in 0..=t {
                acc += kernel[t - s] * x[s];
            }
            acc
        })
        .collect())
}
