//! Stabilization of linear plants across block-fading AWGN channels.
//!
//! The crate decides mean-square stabilizability of a plant whose state is
//! sent over a fading channel with per-state power adaptation, computes the
//! minimum average transmit power by geometric programming, and simulates
//! the closed loop with a linear feedback coding scheme.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

pub mod fading;
pub mod gp;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod schema;
pub mod sim;
pub mod stability;

pub use scalar::Scalar;

pub type Plant = model::Plant<f64>;
pub type Channel = model::Channel<f64>;
pub type FadingProcess = model::FadingProcess<f64>;
pub type PowerPolicy = model::PowerPolicy<f64>;
pub type Problem = model::Problem<f64>;
pub type StationaryDistribution = fading::StationaryDistribution<f64>;
pub type ContractionDiagonal = stability::ContractionDiagonal<f64>;
pub type StabilityVerdict = stability::StabilityVerdict<f64>;
pub type GeometricProgram = gp::GeometricProgram<f64>;
pub type PowerSolution = gp::PowerSolution<f64>;
pub type SimTrace = sim::SimTrace<f64>;

pub type Plant32 = model::Plant<f32>;
pub type Problem32 = model::Problem<f32>;
pub type PowerPolicy32 = model::PowerPolicy<f32>;
