//! Knowledge distillation for parametric hand reconstruction, at desk scale.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation:
//! a reverse-mode tensor engine ([`ad`]), a MANO-style differentiable hand
//! ([`hand`]), pinhole projection ([`camera`]), the ground-truth and
//! distillation objectives ([`losses`]), toy teacher/student networks
//! ([`nets`]), a synthetic dataset ([`data`]), the optimisation loop
//! ([`train`]), Procrustes-aligned metrics ([`metrics`]) and the binary
//! artifact codecs ([`codec`]). File IO, timing and the CLI live in the
//! `handkd` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod ad;
pub mod camera;
pub mod codec;
pub mod data;
mod error;
pub mod hand;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod train;

pub use ad::{AdError, Graph, Tensor, Var};
pub use error::Error;
