//! Desk-scale next-scale autoregressive image decoder with cached token
//! pruning.
//!
//! The crate decodes an image as a sequence of token maps of increasing
//! resolution. Each step predicts a residual map, adds it to an upsampled
//! running reconstruction, and feeds the result forward. The pruning path
//! forwards only the most informative tokens of the late (texture) steps
//! through the transformer and restores the rest from upsampled caches, which
//! cuts the dominant cost of the large scales without retraining.
//!
//! Module map:
//! * [`numkern`] - dense f32 kernels (matmul, softmax, resize, top-k,
//!   gather/scatter) with fixed summation order for reproducibility.
//! * [`pyramid`] - scale schedules and residual pyramids; the recursive and
//!   cumulative reconstruction forms.
//! * [`varnet`] - the toy transformer: weights, blocked-causal attention with
//!   a KV cache, FFN, sampling, and the per-step decode loop.
//! * [`fastvar`] - token selection, the per-layer output cache, restoration,
//!   and prune schedules.
//! * [`bench`] - FLOP accounting, wall-clock measurement, spectrum profiles,
//!   mask export, metrics reports.
//! * [`cli`] - command-line front end (`generate`, `bench`, `analyze`,
//!   `compare`) and the on-disk tensor format.

pub mod bench;
pub mod cli;
pub mod error;
pub mod fastvar;
pub mod numkern;
pub mod pyramid;
pub mod varnet;

pub use error::{FastVarError, Result};
