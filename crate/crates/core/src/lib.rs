//! Temporal sentence grounding as a tracking problem, trainable at desk scale.
//!
//! The pipeline localizes the video segment matching a natural-language query
//! by (1) encoding per-frame object/activity features together with word and
//! sentence embeddings, (2) generating cross-modal tracking templates and
//! search spaces, (3) tracking the templates across frames with a dynamic
//! template updater (FNN + GRU), and (4) scoring and refining segment
//! proposals over the fused track features.
//!
//! Everything in this crate is pure computation over row-major `f32`/`f64`
//! tensors: no I/O, no threads, no global state. Gradients come from a small
//! reverse-mode tape ([`tape::Tape`]) and are verified against central
//! differences ([`gradcheck`]). The companion `tstnet` crate adds file
//! formats, synthetic data and the CLI.
//!
//! The crate is `no_std`-compatible (`alloc` required): disable the default
//! `std` feature to build without the standard library.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod encoder;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod inputs;
pub mod localizer;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod tracker;

pub use error::CoreError;
pub use tensor::Tensor;

/// Floating point scalar the tape and model are generic over.
///
/// `f32` is the training dtype; `f64` backs the gradient-check path.
pub trait Real: num_traits::Float + core::fmt::Debug + core::fmt::Display + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
