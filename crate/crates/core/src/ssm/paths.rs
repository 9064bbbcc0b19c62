use std::collections::BTreeMap;

use super::{conv_kernel, kernel_apply, recurrent_scan, SsmDiscrete};
use crate::error::{Error, Result};

/// One way of evaluating a discrete LTI system on a sequence.
pub trait SequencePath: Send + Sync {
    fn name(&self) -> &str;
    fn eval(&self, d: &SsmDiscrete, x: &[f64]) -> Result<Vec<f64>>;
}

/// Step-by-step recurrence.
pub struct RecurrentPath;

impl SequencePath for RecurrentPath {
    fn name(&self) -> &str {
        "recurrent"
    }

    fn eval(&self, d: &SsmDiscrete, x: &[f64]) -> Result<Vec<f64>> {
        Ok(recurrent_scan(d, x))
    }
}

/// Materialized kernel followed by a direct causal convolution.
pub struct KernelPath;

impl SequencePath for KernelPath {
    fn name(&self) -> &str {
        "kernel"
    }

    fn eval(&self, d: &SsmDiscrete, x: &[f64]) -> Result<Vec<f64>> {
        let k = conv_kernel(d, x.len().max(1))?;
        kernel_apply(&k, x)
    }
}

/// Named evaluation paths.
pub struct PathRegistry {
    paths: BTreeMap<String, Box<dyn SequencePath>>,
}

impl PathRegistry {
    pub fn empty() -> Self {
        Self {
            paths: BTreeMap::new(),
        }
    }

    /// `recurrent` and `kernel`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(RecurrentPath));
        r.register(Box::new(KernelPath));
        r
    }

    /// Adds or replaces a path under its own name.
    pub fn register(&mut self, path: Box<dyn SequencePath>) {
        self.paths.insert(path.name().to_string(), path);
    }

    pub fn get(&self, name: &str) -> Result<&dyn SequencePath> {
        self.paths.get(name).map(|p| p.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown sequence path `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.paths.keys().map(|s| s.as_str()).collect()
    }
}
