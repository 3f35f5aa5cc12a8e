//! Numerical laboratory for the KdV-Burgers equation on the torus
//! `u_t + u_xxx - u_xx + u + u u_x = f`, with kick and multiplicative noise,
//! Foias-Prodi nudging, Carleman weights, observability and squeezing
//! controls, and Markov chain mixing diagnostics.

pub mod carleman;
pub mod control;
pub mod dynamics;
pub mod ergodic;
pub mod error;
pub mod io;
pub mod noise;
pub mod quadrature;
pub mod rng;
pub mod source;
pub mod spectral;
pub mod stats;
pub mod sync;

pub use error::{Error, Result};
pub use spectral::{EigenBasis, Field, TorusGrid};
