//! Robust multi-modal sensor fusion.
//!
//! Per-modality generator networks map raw sensor observations into a shared
//! hidden space, trained with a Wasserstein adversarial objective, a
//! commutation penalty on the final square operators, a column-sparse
//! selection norm, and per-modality classification losses. Decisions are
//! fused by an uncertainty-aware event-driven rule; damaged sensors are
//! detected from hidden-space deviations and their features reconstructed
//! from surviving modalities.
//!
//! Modules mirror the pipeline: [`tensor`] (autodiff engine), [`nets`]
//! (model definitions), [`objective`] (losses and the training schedule),
//! [`fusion`] (event-driven decision fusion), [`failure`] (damage detection
//! and recovery), [`baselines`] (reference fusion rules), [`simdata`]
//! (synthetic scenario generator), and [`container`] (checkpoint/dataset
//! persistence).

pub mod baselines;
pub mod container;
pub mod error;
pub mod failure;
pub mod fusion;
pub mod nets;
pub mod objective;
pub mod rng;
pub mod simdata;
pub mod tensor;
#[doc(hidden)]
pub mod testkit;

pub use error::{Error, Result};
pub use tensor::{sgd_step, Tape, Tensor, Var};
