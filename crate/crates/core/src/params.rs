//! Named parameter storage and the forward-pass context that binds it to a tape.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{grad_check_sampled, GradCheckReport, Precision, Tape, Tensor, Var};

/// Epsilon used by every layer norm in the model.
pub const LN_EPS: f64 = 1e-5;

/// Inserts `{name}.w: [cin, cout]` drawn from N(0, 1/cin) and `{name}.b = 0`.
pub fn init_linear(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut Rng) {
    let std = 1.0 / (cin as f64).sqrt();
    store.insert(format!("{name}.w"), Tensor::randn(&[cin, cout], std, rng));
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
}

/// Inserts `{name}.g = 1` and `{name}.b = 0`.
pub fn init_norm(store: &mut ParamStore, name: &str, c: usize) {
    store.insert(format!("{name}.g"), Tensor::ones(&[c]));
    store.insert(format!("{name}.b"), Tensor::zeros(&[c]));
}

/// Ordered collection of named tensors. Insertion order is the checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::Config(format!("missing parameter `{name}`"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Round every value to `f32`, matching what a checkpoint stores.
    pub fn round_f32(&mut self) {
        for (_, t) in &mut self.entries {
            t.round_f32();
        }
    }
}

/// State for one forward pass: the tape, the bound parameters, and the
/// train/eval switch that controls dropout.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    dropout_rng: Option<Rng>,
}

impl<'a> Ctx<'a> {
    /// Evaluation mode: dropout is the identity.
    pub fn eval(store: &'a ParamStore, precision: Precision) -> Self {
        Self {
            tape: Tape::new(precision),
            store,
            dropout_rng: None,
        }
    }

    /// Training mode with dropout masks drawn from `rng`.
    pub fn train(store: &'a ParamStore, precision: Precision, rng: Rng) -> Self {
        Self {
            tape: Tape::new(precision),
            store,
            dropout_rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Binds parameter `name` as a trainable leaf.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        let t = self.store.get(name)?;
        self.tape.param(name, t)
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    /// Affine map using `{name}.w` and `{name}.b`.
    pub fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        self.tape.linear(x, w, Some(b))
    }

    /// Layer norm over the last axis using `{name}.g` and `{name}.b`.
    pub fn layer_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let g = self.p(&format!("{name}.g"))?;
        let b = self.p(&format!("{name}.b"))?;
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    /// Inverted dropout; identity in eval mode or for `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate must be < 1, got {rate}")));
        }
        let keep = 1.0 - rate;
        let shape = self.tape.shape(x).to_vec();
        let mask = Tensor::from_fn(&shape, |_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 });
        let m = self.tape.constant(mask)?;
        self.tape.mul(x, m)
    }
}

/// Gradient check of `f` with respect to both `inputs` and every tensor in
/// `store`. Inside `f` the parameters are reachable through [`Ctx::p`] as
/// usual; the context is in eval mode.
pub fn grad_check_with_params<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    f: F,
    tol: f64,
    seed: u64,
    max_probes: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx, &[Var]) -> Result<Var>,
{
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let mut all: Vec<Tensor> = inputs.to_vec();
    all.extend(store.iter().map(|(_, t)| t.clone()));
    let n_in = inputs.len();
    grad_check_sampled(
        |tape, vars| {
            let taken = std::mem::replace(tape, Tape::new(tape.precision()));
            let mut ctx = Ctx {
                tape: taken,
                store,
                dropout_rng: None,
            };
            for (name, &v) in names.iter().zip(&vars[n_in..]) {
                ctx.tape.bind_param(name, v);
            }
            let out = f(&mut ctx, &vars[..n_in]);
            *tape = ctx.into_tape();
            out
        },
        &all,
        tol,
        seed,
        max_probes,
    )
}
