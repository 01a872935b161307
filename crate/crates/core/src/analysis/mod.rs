//! Numerical counterparts of the theory: MMSE functions, the loop curve,
//! KL contraction under forward diffusion, and Monte Carlo bound checks.

pub mod bounds;
pub mod curves;
pub mod kl;
pub mod mmse;
pub mod suite;

pub use bounds::{purification_mse, verify_bounds, BoundReport, BoundSetup};
pub use curves::{loop_bound_curve, CurvePoint};
pub use kl::{kl_gaussian, kl_gaussian_forward, kl_quadrature_forward, GaussianParams, Grid1d};
pub use mmse::{effective_snr, mmse_binary, mmse_gaussian, mmse_gaussian_spectrum};
