use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Element precision of op outputs recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Computes parent gradients from (parent values, output value, output gradient).
/// Returns one entry per parent; `None` means "no contribution".
pub(crate) type BackwardFn =
    Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>> + Send + Sync>;

struct Node {
    op: &'static str,
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Linear record of a forward computation, replayed in reverse by [`Tape::backward`].
///
/// Tapes are single-use: build one per forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
            params: Vec::new(),
            param_index: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf value. Gradients are collected for it when `requires_grad` is set.
    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Result<Var> {
        if self.precision == Precision::F32 {
            value.round_f32();
        }
        if !value.is_finite() {
            return Err(Error::numeric("leaf", "non-finite input value"));
        }
        self.nodes.push(Node {
            op: "leaf",
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Named trainable leaf. Binding the same name twice returns the same var.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let v = self.leaf(value.clone(), true)?;
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers an existing var under a parameter name, so later
    /// [`Tape::param`] calls with that name return it.
    pub fn bind_param(&mut self, name: &str, v: Var) {
        if self.param_index.insert(name.to_string(), v).is_none() {
            self.params.push((name.to_string(), v));
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(
        &mut self,
        op: &'static str,
        mut value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        if self.precision == Precision::F32 {
            value.round_f32();
        }
        if !value.is_finite() {
            return Err(Error::numeric(op, "non-finite value in forward output"));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar loss. Afterwards [`Tape::grad`] answers
    /// `d loss / d v` for every var that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(bw) = &node.backward {
                let inputs: Vec<&Tensor> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let pgrads = bw(&inputs, &node.value, &g);
                debug_assert_eq!(pgrads.len(), node.parents.len(), "op {}", node.op);
                for (&p, pg) in node.parents.iter().zip(pgrads) {
                    let Some(pg) = pg else { continue };
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    if !pg.is_finite() {
                        return Err(Error::numeric(node.op, "non-finite gradient"));
                    }
                    debug_assert_eq!(pg.shape(), self.nodes[p].value.shape(), "op {}", node.op);
                    match &mut grads[p] {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                                *a += b;
                            }
                        }
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every named parameter bound on this tape, in binding order.
    /// Parameters unreachable from the loss get a zero gradient.
    pub fn param_grads(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(name, v)| {
                let g = self
                    .grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
