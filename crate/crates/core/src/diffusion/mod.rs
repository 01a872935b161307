//! DDPM machinery: variance schedule, forward diffusion, reverse samplers
//! and noise predictors.

pub mod denoiser;
pub mod mlp;
pub mod sampler;
pub mod schedule;

pub use denoiser::{Denoiser, GaussianOracleDenoiser, KnownSignalDenoiser, ZeroDenoiser};
pub use mlp::{train_mlp_denoiser, MlpDenoiser, TrainConfig, TrainReport};
pub use sampler::{
    diffuse, one_shot_recover, reverse, reverse_ancestral, reverse_skip, Sampler,
};
pub use schedule::{make_linear_schedule, Schedule};
