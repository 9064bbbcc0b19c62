use std::sync::Arc;

use super::tape::{BackwardFn, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::ssm::{selective_scan_backward, selective_scan_core, ScanDims};

impl Tape {
    /// Differentiable selective scan.
    ///
    /// `u`, `delta`: `[B, T, D]`; `a`: `[D, N]` (negative entries); `b`, `c`: `[B, T, N]`.
    /// Output `[B, T, D]`. See [`crate::ssm::selective_scan_core`] for the recurrence.
    pub fn selective_scan(&mut self, u: Var, delta: Var, a: Var, b: Var, c: Var) -> Result<Var> {
        let su = self.shape(u).to_vec();
        let sa = self.shape(a).to_vec();
        if su.len() != 3 || sa.len() != 2 || sa[0] != su[2] {
            return Err(Error::Dimension(format!(
                "selective_scan: u {su:?} with A {sa:?}"
            )));
        }
        let dims = ScanDims {
            batch: su[0],
            len: su[1],
            channels: su[2],
            state: sa[1],
        };
        let (y, states) = selective_scan_core(
            dims,
            self.value(u).data(),
            self.value(delta).data(),
            self.value(a).data(),
            self.value(b).data(),
            self.value(c).data(),
        )?;
        let states = Arc::new(states);
        let value = Tensor::new(&su, y)?;
        let bw: BackwardFn = Box::new(move |inp, _, g| {
            let gr = selective_scan_backward(
                dims,
                inp[0].data(),
                inp[1].data(),
                inp[2].data(),
                inp[3].data(),
                inp[4].data(),
                &states,
                g.data(),
            );
            vec![
                Some(Tensor::new(inp[0].shape(), gr.u).unwrap()),
                Some(Tensor::new(inp[1].shape(), gr.delta).unwrap()),
                Some(Tensor::new(inp[2].shape(), gr.a).unwrap()),
                Some(Tensor::new(inp[3].shape(), gr.b).unwrap()),
                Some(Tensor::new(inp[4].shape(), gr.c).unwrap()),
            ]
        });
        self.push("selective_scan", value, &[u, delta, a, b, c], bw)
    }
}

#[cfg(test)]
mod tests {
    use crate::rng::Rng;
    use crate::tensor::{grad_check, Tensor};

    #[test]
    fn selective_scan_gradients() {
        let mut rng = Rng::new(17, 0);
        let (b, t, d, n) = (2, 7, 3, 4);
        let u = Tensor::randn(&[b, t, d], 1.0, &mut rng);
        let delta = Tensor::uniform(&[b, t, d], 0.05, 0.8, &mut rng);
        let a = Tensor::uniform(&[d, n], -1.5, -0.01, &mut rng);
        let bm = Tensor::randn(&[b, t, n], 1.0, &mut rng);
        let cm = Tensor::randn(&[b, t, n], 1.0, &mut rng);
        let rep = grad_check(
            |tp, v| tp.selective_scan(v[0], v[1], v[2], v[3], v[4]),
            &[u, delta, a, bm, cm],
            1e-4,
            2,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn selective_scan_gradient_near_zero_a() {
        let mut rng = Rng::new(18, 0);
        let u = Tensor::randn(&[1, 5, 2], 1.0, &mut rng);
        let delta = Tensor::uniform(&[1, 5, 2], 0.1, 0.3, &mut rng);
        let a = Tensor::new(&[2, 2], vec![-1e-4, -2e-3, -5e-4, -1e-5]).unwrap();
        let bm = Tensor::randn(&[1, 5, 2], 1.0, &mut rng);
        let cm = Tensor::randn(&[1, 5, 2], 1.0, &mut rng);
        let rep = grad_check(
            |tp, v| tp.selective_scan(v[0], v[1], v[2], v[3], v[4]),
            &[u, delta, a, bm, cm],
            1e-4,
            5,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
