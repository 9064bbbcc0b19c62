use super::{Precision, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// Central-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;

/// Lower bound on the relative-error denominator. Keeps structurally zero
/// gradients (where both sides are pure rounding noise) from reading as 100% error.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all inputs:
    /// `max|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`
    /// with the maxima taken over the probed elements of each input.
    pub max_rel_err: f64,
    pub per_input: Vec<f64>,
    pub probes: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares tape gradients of `f` against central finite differences in 64-bit mode.
///
/// `f` may return any shape; it is reduced to a scalar through a fixed random
/// projection so that every output element contributes a distinct weight.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tol: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_sampled(f, inputs, tol, seed, usize::MAX)
}

/// Like [`grad_check`] but probes at most `max_probes` elements per input,
/// chosen by a seeded shuffle.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    tol: f64,
    seed: u64,
    max_probes: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = Rng::new(seed, crate::rng::streams::CHECKS);
    let mut projection: Option<Tensor> = None;

    let mut eval = |xs: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new(Precision::F64);
        let vars = xs
            .iter()
            .map(|x| tape.leaf(x.clone(), want_grad))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        let proj = projection
            .get_or_insert_with(|| Tensor::randn(tape.shape(out), 1.0, &mut rng))
            .clone();
        let p = tape.constant(proj)?;
        let prod = tape.mul(out, p)?;
        let loss = tape.sum_all(prod)?;
        let value = tape.value(loss).data()[0];
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(loss)?;
            for (v, x) in vars.iter().zip(xs) {
                grads.push(tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())));
            }
        }
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut probe_rng = Rng::new(seed ^ 0x5EED, crate::rng::streams::CHECKS);
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut probes = 0;
    let mut xs = inputs.to_vec();
    for (i, an) in analytic.iter().enumerate() {
        let mut idx: Vec<usize> = (0..xs[i].numel()).collect();
        if idx.len() > max_probes {
            probe_rng.shuffle(&mut idx);
            idx.truncate(max_probes);
        }
        let mut max_diff = 0.0f64;
        let mut scale = 0.0f64;
        for &k in &idx {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + FD_STEP;
            let (fp, _) = eval(&xs, false)?;
            xs[i].data_mut()[k] = orig - FD_STEP;
            let (fm, _) = eval(&xs, false)?;
            xs[i].data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = an.data()[k];
            max_diff = max_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
            probes += 1;
        }
        per_input.push(max_diff / scale.max(REL_FLOOR));
    }
    let max_rel_err = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        per_input,
        probes,
        tol,
        passed: max_rel_err <= tol,
    })
}
