//! Redundancy-reduced cost-map segmentation, desk scale.
//!
//! The crate builds per-class pixel-text cost maps from a synthetic
//! encoder, prunes vocabulary classes that a training-free scoring pass
//! marks as absent, aggregates the surviving cost volume with
//! sequence-reduced spatial and class attention, and decodes per-class
//! logits — all on a deterministic f64 tensor kernel with reverse-mode
//! gradients. The `analysis` module carries the numeric verification
//! side: contribution-ratio oracles for the class-reduction property,
//! instrumented MAC accounting against the analytic savings formulas,
//! and vocabulary statistics.

// index arithmetic over parallel buffers and `x % r != 0` divisibility
// guards read better here than iterator adaptors and `is_multiple_of`;
// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod analysis;
pub mod cost;
pub mod decoder;
pub mod error;
pub mod flops;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ParamId, ParamStore, Tape, Tensor, TensorId};
