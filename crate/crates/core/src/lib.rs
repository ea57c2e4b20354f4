//! Critically-damped higher-order Langevin diffusion (HOLD++) on `n` stacked
//! variable blocks, the deterministic membership-inference attack against it,
//! and a Rényi-DP accountant for its forward mechanism.
//!
//! Every drift, diffusion and covariance matrix in the process has the form
//! `A ⊗ I_d`, so all of the algebra here is carried out on the `n × n`
//! factor [`BlockMatrix`] and applied block-wise to a [`State`].
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, the experiment harness and the CLI live in the
//! companion `holdpp` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

mod error;
mod math;

pub mod attack;
pub mod data;
pub mod linalg;
pub mod model;
pub mod network;
pub mod optim;
pub mod privacy;
pub mod process;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{BlockMatrix, State};
pub use model::ScoreModel;
pub use network::{Architecture, ScoreNetwork};
pub use process::{GaussianMoments, HoldParams};
