//! Low-rank iterative diffusion purification.
//!
//! The crate bundles the pieces needed to purify inputs with a truncated
//! Tucker projection followed by repeated short diffusion/denoising loops,
//! plus the numerical checks that relate the purification error to the
//! Gaussian-channel MMSE.

pub mod error;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod tucker;

pub mod diffusion;
pub mod purify;
pub mod analysis;
pub mod attacks;
pub mod data;
pub mod io;
pub mod lab;

pub use error::{LoridError, Result};
pub use diffusion::{Denoiser, Sampler, Schedule};
pub use io::RunConfig;
pub use purify::LoridConfig;
pub use tensor::{Matrix, Tensor};
pub use tucker::{RankPolicy, TuckerBasis};
