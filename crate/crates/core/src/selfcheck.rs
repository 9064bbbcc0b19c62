//! Invariant suite run by `mvnet selfcheck`.
//!
//! Each [`Check`] measures one number and compares it against a fixed
//! [`Bound`]. The probes are public so tests can call them directly.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mixers::{
    init_attention, init_hsi_layer, hsi_layer_forward, mhsa_forward, mixer_branches, mixer_forward, parity_report,
    windowed_attention, LayerSpec, MambaVisionMixer, MixerRegistry, MixerSpec, TokenMixer,
};
use crate::params::{grad_check_with_params, Ctx, ParamStore};
use crate::rng::{streams, Rng};
use crate::ssm::{kernel_apply, conv_kernel, zoh_discretize, PathRegistry, SequencePath, SsmDiscrete, SsmParams};
use crate::tensor::{grad_check, grad_check_sampled, ConvMode, GradCheckReport, Precision, Tape, Tensor, Var};
use crate::training::{compute_metrics, Confusion};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(t) => v <= t,
            Bound::AtLeast(t) => v >= t,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(t) => write!(f, "<= {t:e}"),
            Bound::AtLeast(t) => write!(f, ">= {t:e}"),
        }
    }
}

/// What a check can see: the sequence paths under test and the seed.
pub struct CheckEnv {
    pub paths: PathRegistry,
    pub seed: u64,
}

impl Default for CheckEnv {
    fn default() -> Self {
        Self {
            paths: PathRegistry::with_defaults(),
            seed: 0,
        }
    }
}

pub trait Check: Send + Sync {
    fn name(&self) -> &str;
    fn bound(&self) -> Bound;
    fn measure(&self, env: &CheckEnv) -> Result<f64>;
}

type Probe = fn(&CheckEnv) -> Result<f64>;

struct FnCheck {
    name: &'static str,
    bound: Bound,
    f: Probe,
}

impl Check for FnCheck {
    fn name(&self) -> &str {
        self.name
    }

    fn bound(&self) -> Bound {
        self.bound
    }

    fn measure(&self, env: &CheckEnv) -> Result<f64> {
        (self.f)(env)
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub bound: Bound,
    /// `None` when the probe itself errored.
    pub measured: Option<f64>,
    pub error: Option<String>,
    pub passed: bool,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        match (&self.measured, &self.error) {
            (Some(m), _) => write!(f, "{status} {:<32} measured {m:.3e}  bound {}", self.name, self.bound),
            (None, Some(e)) => write!(f, "{status} {:<32} error: {e}  bound {}", self.name, self.bound),
            (None, None) => write!(f, "{status} {}", self.name),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub outcomes: Vec<CheckOutcome>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            writeln!(f, "{o}")?;
        }
        let failed = self.outcomes.iter().filter(|o| !o.passed).count();
        write!(f, "{} checks, {failed} failed", self.outcomes.len())
    }
}

pub struct CheckRegistry {
    checks: Vec<Box<dyn Check>>,
}

impl CheckRegistry {
    pub fn empty() -> Self {
        Self { checks: Vec::new() }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        let defaults: [(&'static str, Bound, Probe); 14] = [
            ("ssm.duality", Bound::AtMost(1e-6), |e| duality_error(&e.paths, 200, e.seed)),
            ("ssm.zoh-scalar", Bound::AtMost(1e-12), |_| zoh_scalar_error()),
            ("ssm.zoh-oracle-4x4", Bound::AtMost(1e-10), |e| zoh_oracle_error(20, e.seed)),
            ("ssm.zoh-continuity", Bound::AtMost(1e-12), |e| zoh_continuity_error(e.seed)),
            ("grad.ops", Bound::AtMost(1e-4), |e| worst(&gradient_suite(e.seed)?)),
            ("grad.layers", Bound::AtMost(1e-4), |e| worst(&layer_gradient_suite(e.seed)?)),
            ("mixer.future-token", Bound::AtLeast(1e-6), |e| Ok(future_token_effect(ConvMode::Same, e.seed)?.1)),
            ("mixer.causal-ablation", Bound::AtMost(1e-12), |e| Ok(future_token_effect(ConvMode::Causal, e.seed)?.1)),
            ("mixer.parity-min", Bound::AtLeast(0.8), |_| Ok(parity_ratios()?.iter().map(|r| r.1).fold(f64::INFINITY, f64::min))),
            ("mixer.parity-max", Bound::AtMost(1.25), |_| Ok(parity_ratios()?.iter().map(|r| r.1).fold(0.0, f64::max))),
            ("attention.row-stochastic", Bound::AtMost(1e-6), |e| attention_row_sum_error(e.seed)),
            ("attention.permutation", Bound::AtMost(1e-6), |e| attention_permutation_error(e.seed)),
            ("attention.window-global", Bound::AtMost(1e-6), |e| window_global_error(e.seed)),
            ("metrics.oracle", Bound::AtMost(0.0), |_| metrics_oracle_error()),
        ];
        for (name, bound, f) in defaults {
            r.register(Box::new(FnCheck { name, bound, f }));
        }
        r
    }

    pub fn register(&mut self, check: Box<dyn Check>) {
        self.checks.push(check);
    }

    pub fn names(&self) -> Vec<&str> {
        self.checks.iter().map(|c| c.name()).collect()
    }

    pub fn run(&self, env: &CheckEnv) -> Report {
        let outcomes = self
            .checks
            .iter()
            .map(|c| {
                let bound = c.bound();
                match c.measure(env) {
                    Ok(m) => CheckOutcome {
                        name: c.name().to_string(),
                        bound,
                        measured: Some(m),
                        error: None,
                        passed: m.is_finite() && bound.holds(m),
                    },
                    Err(e) => CheckOutcome {
                        name: c.name().to_string(),
                        bound,
                        measured: None,
                        error: Some(e.to_string()),
                        passed: false,
                    },
                }
            })
            .collect();
        Report { outcomes }
    }
}

/// Kernel path with its output negated. Used to confirm the duality check
/// catches a broken evaluation path.
pub struct SignFlippedKernel;

impl SequencePath for SignFlippedKernel {
    fn name(&self) -> &str {
        "kernel"
    }

    fn eval(&self, d: &SsmDiscrete, x: &[f64]) -> Result<Vec<f64>> {
        let k = conv_kernel(d, x.len().max(1))?;
        Ok(kernel_apply(&k, x)?.into_iter().map(|v| -v).collect())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `max|a − b| / max|a|`, or 0 when both are identically zero.
pub fn relative_max_error(a: &[f64], b: &[f64]) -> f64 {
    let d = max_abs_diff(a, b);
    if d == 0.0 {
        0.0
    } else {
        d / max_abs(a).max(f64::MIN_POSITIVE)
    }
}

/// Random dense LTI system with `1 ≤ M ≤ 8`, `‖Ā‖∞ < 1` (hence spectral
/// radius < 1), and a random input of length `1 ≤ T ≤ 64`.
pub fn random_lti(rng: &mut Rng) -> (SsmDiscrete, Vec<f64>) {
    let m = 1 + rng.below(8);
    let t = 1 + rng.below(64);
    let mut a: Vec<f64> = (0..m * m).map(|_| rng.normal()).collect();
    let norm = a.chunks(m).map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let target = rng.uniform_range(0.05, 0.95);
    for v in &mut a {
        *v *= target / norm;
    }
    let b = (0..m).map(|_| rng.normal()).collect();
    let c = (0..m).map(|_| rng.normal()).collect();
    let x = (0..t).map(|_| rng.normal()).collect();
    (SsmDiscrete::new(a, b, c).expect("consistent extents"), x)
}

/// Worst relative disagreement between the `recurrent` and `kernel` paths over
/// `trials` random systems.
pub fn duality_error(paths: &PathRegistry, trials: usize, seed: u64) -> Result<f64> {
    let scan = paths.get("recurrent")?;
    let kern = paths.get("kernel")?;
    let mut rng = Rng::new(seed, streams::CHECKS);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (d, x) = random_lti(&mut rng);
        worst = worst.max(relative_max_error(&scan.eval(&d, &x)?, &kern.eval(&d, &x)?));
    }
    Ok(worst)
}

/// `a = −1, Δ = ln 2`: `Ā = ½` and `B̄ = ½·b` exactly.
pub fn zoh_scalar_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for b in [1.0, -2.5, 0.3] {
        let d = zoh_discretize(&SsmParams::new(vec![-1.0], vec![b], vec![1.0], 2f64.ln())?)?;
        worst = worst.max((d.a_bar[0] - 0.5).abs()).max((d.b_bar[0] - 0.5 * b).abs());
    }
    Ok(worst)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                out[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    out
}

/// Matrix exponential by scaling and squaring with a 30-term Taylor sum.
pub fn expm(m: &[f64], n: usize) -> Vec<f64> {
    let norm = m.chunks(n).map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let scaled: Vec<f64> = m.iter().map(|v| v / 2f64.powi(s)).collect();
    let eye: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
    let mut sum = eye.clone();
    let mut term = eye;
    for k in 1..=30 {
        term = matmul(&term, &scaled, n);
        term.iter_mut().for_each(|v| *v /= k as f64);
        sum.iter_mut().zip(&term).for_each(|(a, t)| *a += t);
    }
    for _ in 0..s {
        sum = matmul(&sum, &sum, n);
    }
    sum
}

/// Zero-order hold through the block exponential
/// `exp([[ΔA, ΔB], [0, 0]]) = [[Ā, B̄], [0, 1]]`.
pub fn van_loan_zoh(a: &[f64], b: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>) {
    let m = b.len();
    let n = m + 1;
    let mut blk = vec![0.0; n * n];
    for i in 0..m {
        for j in 0..m {
            blk[i * n + j] = delta * a[i * m + j];
        }
        blk[i * n + m] = delta * b[i];
    }
    let e = expm(&blk, n);
    let a_bar = (0..m * m).map(|k| e[(k / m) * n + k % m]).collect();
    let b_bar = (0..m).map(|i| e[i * n + m]).collect();
    (a_bar, b_bar)
}

/// Worst entrywise disagreement between [`zoh_discretize`] and
/// [`van_loan_zoh`] on random 4×4 systems.
pub fn zoh_oracle_error(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed, streams::CHECKS);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let delta = rng.uniform_range(0.05, 0.5);
        let d = zoh_discretize(&SsmParams::new(a.clone(), b.clone(), vec![1.0; 4], delta)?)?;
        let (ao, bo) = van_loan_zoh(&a, &b, delta);
        worst = worst.max(max_abs_diff(&d.a_bar, &ao)).max(max_abs_diff(&d.b_bar, &bo));
    }
    Ok(worst)
}

/// Distance of `zoh(εR)` from its first-order expansion
/// `(I + εΔR, ΔB + ½εΔ²RB)` for ε from 1e-7 down to 0.
pub fn zoh_continuity_error(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed, streams::CHECKS);
    let m = 4;
    let r: Vec<f64> = (0..m * m).map(|_| rng.normal()).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
    let delta = 0.7;
    let mut worst = 0.0f64;
    for eps in [1e-7, 1e-9, 1e-12, 1e-15, 0.0] {
        let a: Vec<f64> = r.iter().map(|v| v * eps).collect();
        let d = zoh_discretize(&SsmParams::new(a.clone(), b.clone(), vec![1.0; m], delta)?)?;
        for i in 0..m {
            for j in 0..m {
                let want = f64::from(u8::from(i == j)) + delta * a[i * m + j];
                worst = worst.max((d.a_bar[i * m + j] - want).abs());
            }
            let rb: f64 = (0..m).map(|j| a[i * m + j] * b[j]).sum();
            worst = worst.max((d.b_bar[i] - (delta * b[i] + 0.5 * delta * delta * rb)).abs());
        }
    }
    Ok(worst)
}

fn worst(reports: &[(String, GradCheckReport)]) -> Result<f64> {
    Ok(reports.iter().map(|r| r.1.max_rel_err).fold(0.0, f64::max))
}

type Unary = fn(&mut Tape, Var) -> Result<Var>;

/// Finite-difference checks of every differentiable tape op in 64-bit mode.
pub fn gradient_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = Rng::new(seed, streams::CHECKS);
    let tol = 1e-4;
    let x = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
    let y = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
    let g = Tensor::randn(&[2, 1, 4], 1.0, &mut rng);
    let bias = Tensor::randn(&[4], 1.0, &mut rng);
    let w = Tensor::randn(&[4, 5], 1.0, &mut rng);
    let wb = Tensor::randn(&[5], 1.0, &mut rng);
    let m1 = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let m2 = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let logits = Tensor::randn(&[3, 5], 1.0, &mut rng);
    let mut out = Vec::new();
    let mut push = |name: &str, r: GradCheckReport| out.push((name.to_string(), r));

    let unary: [(&str, Unary); 8] = [
        ("sigmoid", Tape::sigmoid),
        ("silu", Tape::silu),
        ("gelu", Tape::gelu),
        ("relu", Tape::relu),
        ("softplus", Tape::softplus),
        ("exp", Tape::exp),
        ("softmax_last", Tape::softmax_last),
        ("sum_all", Tape::sum_all),
    ];
    for (i, (name, f)) in unary.iter().enumerate() {
        push(name, grad_check(|tp, v| f(tp, v[0]), std::slice::from_ref(&x), tol, seed + i as u64)?);
    }
    push("mean_all", grad_check(|tp, v| tp.mean_all(v[0]), std::slice::from_ref(&x), tol, seed)?);
    push("add", grad_check(|tp, v| tp.add(v[0], v[1]), &[x.clone(), g.clone()], tol, seed)?);
    push("sub", grad_check(|tp, v| tp.sub(v[0], v[1]), &[x.clone(), y.clone()], tol, seed)?);
    push("mul", grad_check(|tp, v| tp.mul(v[0], v[1]), &[x.clone(), g.clone()], tol, seed)?);
    push("add_bias", grad_check(|tp, v| tp.add_bias(v[0], v[1]), &[x.clone(), bias.clone()], tol, seed)?);
    push("scale", grad_check(|tp, v| tp.scale(v[0], -1.7), std::slice::from_ref(&x), tol, seed)?);
    push("reshape", grad_check(|tp, v| tp.reshape(v[0], &[6, 4]), std::slice::from_ref(&x), tol, seed)?);
    push("permute", grad_check(|tp, v| tp.permute(v[0], &[2, 0, 1]), std::slice::from_ref(&x), tol, seed)?);
    let map: Arc<Vec<Option<usize>>> = Arc::new((0..30).map(|i| (i % 7 != 3).then_some((i * 5) % 24)).collect());
    push("gather", grad_check(|tp, v| tp.gather(v[0], map.clone(), &[5, 6]), std::slice::from_ref(&x), tol, seed)?);
    push("slice_last", grad_check(|tp, v| tp.slice_last(v[0], 1, 2), std::slice::from_ref(&x), tol, seed)?);
    push("concat_last", grad_check(|tp, v| tp.concat_last(&[v[0], v[1]]), &[x.clone(), y.clone()], tol, seed)?);
    push("mean_axis", grad_check(|tp, v| tp.mean_axis(v[0], 1), std::slice::from_ref(&x), tol, seed)?);
    push("matmul", grad_check(|tp, v| tp.matmul(v[0], v[1]), &[m1, m2], tol, seed)?);
    push(
        "bmm",
        grad_check(
            |tp, v| {
                let yt = tp.permute(v[1], &[0, 2, 1])?;
                tp.bmm(v[0], yt)
            },
            &[x.clone(), y.clone()],
            tol,
            seed,
        )?,
    );
    push("linear", grad_check(|tp, v| tp.linear(v[0], v[1], Some(v[2])), &[x.clone(), w, wb], tol, seed)?);
    push(
        "layer_norm",
        grad_check(|tp, v| tp.layer_norm(v[0], v[1], v[2], 1e-5), &[x.clone(), bias.clone(), bias.map(|v| 0.3 * v)], tol, seed)?,
    );
    push("cross_entropy", grad_check(|tp, v| tp.cross_entropy(v[0], &[0, 4, 2]), &[logits], tol, seed)?);

    let seq = Tensor::randn(&[2, 6, 3], 1.0, &mut rng);
    for (tag, mode) in [("causal", ConvMode::Causal), ("same", ConvMode::Same)] {
        let cw = Tensor::randn(&[3, 3, 2], 0.5, &mut rng);
        let cb = Tensor::randn(&[2], 0.5, &mut rng);
        push(
            &format!("conv1d/{tag}"),
            grad_check(|tp, v| tp.conv1d(v[0], v[1], Some(v[2]), mode), &[seq.clone(), cw, cb], tol, seed)?,
        );
        let dw = Tensor::randn(&[3, 3], 0.5, &mut rng);
        let db = Tensor::randn(&[3], 0.5, &mut rng);
        push(
            &format!("depthwise_conv1d/{tag}"),
            grad_check(|tp, v| tp.depthwise_conv1d(v[0], v[1], v[2], mode), &[seq.clone(), dw, db], tol, seed)?,
        );
    }
    let vol = Tensor::randn(&[1, 4, 3, 5, 2], 1.0, &mut rng);
    let k3 = Tensor::randn(&[3, 3, 3, 2, 2], 0.5, &mut rng);
    let b3 = Tensor::randn(&[2], 0.5, &mut rng);
    push(
        "conv3d",
        grad_check_sampled(
            |tp, v| tp.conv3d(v[0], v[1], Some(v[2]), [1, 2, 2], [1, 1, 0]),
            &[vol, k3, b3],
            tol,
            seed,
            40,
        )?,
    );
    let (b, t, d, n) = (2, 6, 3, 4);
    let u = Tensor::randn(&[b, t, d], 1.0, &mut rng);
    let delta = Tensor::uniform(&[b, t, d], 0.05, 0.8, &mut rng);
    let a = Tensor::uniform(&[d, n], -1.5, -0.01, &mut rng);
    let bm = Tensor::randn(&[b, t, n], 1.0, &mut rng);
    let cm = Tensor::randn(&[b, t, n], 1.0, &mut rng);
    push(
        "selective_scan",
        grad_check(|tp, v| tp.selective_scan(v[0], v[1], v[2], v[3], v[4]), &[u, delta, a, bm, cm], tol, seed)?,
    );
    Ok(out)
}

/// Finite-difference checks of one full residual layer per mixer, all
/// parameters included.
pub fn layer_gradient_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let reg = MixerRegistry::with_defaults();
    let mut out = Vec::new();
    for name in ["mambavision", "window-attention"] {
        let mut spec = MixerSpec::new(4);
        spec.heads = 2;
        spec.window = 2;
        spec.state_dim = 2;
        let layer = LayerSpec {
            mixer: reg.get(name)?,
            mixer_spec: spec,
            mlp_ratio: 2,
            drop_rate: 0.0,
        };
        let mut store = ParamStore::new();
        init_hsi_layer(&mut store, "l", &layer, &mut Rng::new(seed, streams::INIT))?;
        let x = Tensor::randn(&[1, 2, 3, 4], 1.0, &mut Rng::new(seed, streams::CHECKS));
        let rep = grad_check_with_params(&store, &[x], |ctx, v| hsi_layer_forward(ctx, "l", &layer, v[0]), 1e-4, seed, 12)?;
        out.push((format!("layer/{name}"), rep));
    }
    Ok(out)
}

/// Response at token `t` of the mixer output and of its symmetric branch to a
/// perturbation of token `t + 1`.
pub fn future_token_effect(mode: ConvMode, seed: u64) -> Result<(f64, f64)> {
    let (c, t, pos) = (8, 9, 4);
    let mut spec = MixerSpec::new(c);
    spec.conv_mode = mode;
    let mut store = ParamStore::new();
    MambaVisionMixer.init(&mut store, "m", &spec, &mut Rng::new(seed, streams::INIT))?;
    let x = Tensor::randn(&[1, t, c], 1.0, &mut Rng::new(seed, streams::CHECKS));
    let mut xp = x.clone();
    for k in 0..c {
        xp.data_mut()[(pos + 1) * c + k] += 0.5;
    }
    let run = |x: &Tensor| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut ctx = Ctx::eval(&store, Precision::F64);
        let xv = ctx.tape.constant(x.clone())?;
        let (_, sym) = mixer_branches(&mut ctx, "m", &spec, xv)?;
        let y = mixer_forward(&mut ctx, "m", &spec, xv)?;
        let h = c / 2;
        Ok((
            ctx.tape.value(y).data()[pos * c..(pos + 1) * c].to_vec(),
            ctx.tape.value(sym).data()[pos * h..(pos + 1) * h].to_vec(),
        ))
    };
    let (y0, s0) = run(&x)?;
    let (y1, s1) = run(&xp)?;
    Ok((max_abs_diff(&y0, &y1), max_abs_diff(&s0, &s1)))
}

/// Dual-branch / single-branch parameter ratio for C ∈ {16, 32, 80}.
pub fn parity_ratios() -> Result<Vec<(usize, f64)>> {
    [16, 32, 80]
        .into_iter()
        .map(|c| Ok((c, parity_report(&MixerSpec::new(c))?.ratio)))
        .collect()
}

fn attention_store(c: usize, heads: usize, seed: u64) -> Result<ParamStore> {
    let mut s = ParamStore::new();
    init_attention(&mut s, "a", c, heads, &mut Rng::new(seed, streams::INIT))?;
    Ok(s)
}

fn global_attention(s: &ParamStore, heads: usize, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut ctx = Ctx::eval(s, Precision::F64);
    let xv = ctx.tape.constant(x.clone())?;
    let (o, p) = mhsa_forward(&mut ctx, "a", heads, xv)?;
    Ok((ctx.tape.value(o).clone(), ctx.tape.value(p).clone()))
}

/// Largest `|Σ_j P_ij − 1|` over all attention rows.
pub fn attention_row_sum_error(seed: u64) -> Result<f64> {
    let s = attention_store(8, 4, seed)?;
    let x = Tensor::randn(&[2, 9, 8], 3.0, &mut Rng::new(seed, streams::CHECKS));
    let (_, p) = global_attention(&s, 4, &x)?;
    let t = p.shape()[2];
    let mut worst = 0.0f64;
    for row in p.data().chunks(t) {
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::numeric("attention", "negative attention weight"));
        }
        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(worst)
}

/// `max |f(Px) − P f(x)|` for a random token permutation `P`.
pub fn attention_permutation_error(seed: u64) -> Result<f64> {
    let (t, c) = (11, 8);
    let s = attention_store(c, 2, seed)?;
    let mut rng = Rng::new(seed, streams::CHECKS);
    let x = Tensor::randn(&[1, t, c], 1.0, &mut rng);
    let mut perm: Vec<usize> = (0..t).collect();
    rng.shuffle(&mut perm);
    let permute = |z: &Tensor| Tensor::from_fn(&[1, t, c], |i| z.data()[perm[i / c] * c + i % c]);
    let (y, _) = global_attention(&s, 2, &x)?;
    let (py, _) = global_attention(&s, 2, &permute(&x))?;
    Ok(py.max_abs_diff(&permute(&y)))
}

/// Windowed attention with one window covering the grid against global attention.
pub fn window_global_error(seed: u64) -> Result<f64> {
    let (h, w, c) = (5, 5, 8);
    let s = attention_store(c, 2, seed)?;
    let x = Tensor::randn(&[2, h, w, c], 1.0, &mut Rng::new(seed, streams::CHECKS));
    let (g, _) = global_attention(&s, 2, &x.clone().reshape(&[2, h * w, c])?)?;
    let g = g.reshape(&[2, h, w, c])?;
    let mut worst = 0.0f64;
    for window in [5, 7] {
        let mut ctx = Ctx::eval(&s, Precision::F64);
        let xv = ctx.tape.constant(x.clone())?;
        let o = windowed_attention(&mut ctx, "a", 2, window, xv)?;
        worst = worst.max(ctx.tape.value(o).max_abs_diff(&g));
    }
    Ok(worst)
}

/// Sum of deviations from the hand-computed metric values of
/// `[[40, 10], [20, 30]]` (0.7, 0.7, 0.4) and of a diagonal matrix (1, 1, 1).
pub fn metrics_oracle_error() -> Result<f64> {
    let m = compute_metrics(&Confusion::from_rows(&[vec![40, 10], vec![20, 30]])?)?;
    let d = compute_metrics(&Confusion::from_rows(&[vec![12, 0, 0], vec![0, 5, 0], vec![0, 0, 9]])?)?;
    Ok((m.oa - 0.7).abs()
        + (m.aa - 0.7).abs()
        + (m.kappa - 0.4).abs()
        + (d.oa - 1.0).abs()
        + (d.aa - 1.0).abs()
        + (d.kappa - 1.0).abs())
}
