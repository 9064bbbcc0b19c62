//! Hyperspectral pixel classification with a hybrid 3D-CNN, selective
//! state-space and windowed-attention backbone.
//!
//! Layout:
//! - [`tensor`]: dense tensors, reverse-mode tape, gradient checking
//! - [`ssm`]: zero-order-hold discretization, recurrent and kernel evaluation, selective scan
//! - [`mixers`]: token mixers (dual-branch state-space mixer, windowed attention) and the residual layer
//! - [`backbone`]: model configuration, parameter initialisation and the forward pass
//! - [`data`]: HSIC cube files, padding, patch extraction, stratified splits, synthetic cubes
//! - [`training`]: Adam, training loop, evaluation and OA/AA/Kappa metrics
//! - [`selfcheck`], [`bench`]: invariant suite and scan/kernel timing

pub mod backbone;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod mixers;
pub mod params;
pub mod rng;
pub mod selfcheck;
pub mod ssm;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Precision, Tape, Tensor, Var};
