//! Numerics for mean-field coupled Pomeau–Manneville maps
//! `T_{εh}(x) = x(1 + x^{γ* + ε γ_h}) + ε φ_h(x) mod 1`.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*64` aliases
//! below are what the command line tool and the tests use.

// `!(x > 0)` is the NaN-rejecting form used by all parameter checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod ensemble;
mod error;
pub mod map_family;
pub mod rates;
mod roots;
mod scalar;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MapSpec64 = map_family::MapSpec<f64>;
pub type ParameterBox64 = map_family::ParameterBox<f64>;
pub type GradedGrid64 = density::GradedGrid<f64>;
pub type Density64 = density::Density<f64>;
pub type ConeParams64 = density::ConeParams<f64>;
pub type TransferContext64 = transfer::TransferContext<f64>;
pub type Ensemble64 = ensemble::Ensemble<f64>;
