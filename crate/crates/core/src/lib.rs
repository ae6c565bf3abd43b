//! Joint generative engine for weekly mobile-traffic time series and
//! discrete location trajectories.
//!
//! The crate is organized around a hybrid diffusion process: traffic series
//! are decomposed into multi-resolution wavelet coefficients and corrupted
//! with Gaussian noise, while location sequences are corrupted by a
//! continuous-time Markov transition kernel built from knowledge-graph
//! embedding similarity. A single multi-scale transformer denoises both
//! modalities jointly.
//!
//! Everything in here is pure computation over [`num::Tensor`] values and a
//! seeded [`num::Rng`]; file formats, dataset synthesis and the command-line
//! pipeline live in the companion `mobigen` crate. The crate is
//! `no_std`-compatible (with `alloc`) when built without the default `std`
//! feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod denoiser;
pub mod diffusion;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod num;
pub mod ukg;
pub mod vqvae;
pub mod wavelet;

pub use error::{Error, Result};
pub use num::{Rng, Tensor};
