//! Random forcing: localised kicks and multiplicative Wiener noise.

pub mod localised;
pub mod multiplicative;

pub use localised::{
    eval_eta, Kick, KickProcess, KickSample, LocalisedNoiseConfig, LocalisedNoiseSpec, QBasis, Window,
};
pub use multiplicative::{
    stochastic_step, stochastic_step_with, Growth, MultiplicativeNoiseConfig, MultiplicativeNoiseSpec, NoiseConstants,
};
