//! Decentralized target-motion learning for mobile sensor networks.
//!
//! Each sensor learns a spatio-temporal GP of every target's velocity field
//! from its own measurements ([`gp`]), predicts the target's trajectory over
//! a short horizon as a block-diagonal Gaussian ([`trajectory`]), fuses the
//! local predictions over a spanning tree with Chernoff-weighted exponential
//! products ([`fusion`]), and plans its own sensing path sequentially using
//! constant-size detection-count messages ([`planner`]). [`network`] provides
//! the simulated message layer with byte accounting and [`wire`] the message
//! layouts.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the `*F64`
//! aliases below name the common instantiations.

pub mod error;
pub mod fusion;
pub mod gp;
pub mod linalg;
pub mod network;
pub mod planner;
pub mod rng;
pub mod scalar;
pub mod trajectory;
pub mod wire;
pub mod world;

pub use error::{Error, Result};
pub use linalg::{Sym2, Vec2};
pub use scalar::Real;
pub use world::{SensorId, TargetId};

pub type Vec2F64 = linalg::Vec2<f64>;
pub type Sym2F64 = linalg::Sym2<f64>;
pub type KernelParamsF64 = gp::KernelParams<f64>;
pub type GpModelF64 = gp::GpModel<f64>;
pub type GpModelF32 = gp::GpModel<f32>;
pub type TrajectoryGaussianF64 = trajectory::TrajectoryGaussian<f64>;
pub type TrajectoryGaussianF32 = trajectory::TrajectoryGaussian<f32>;
pub type FusedTrajectoryF64 = fusion::FusedTrajectory<f64>;
pub type SensorStateF64 = world::SensorState<f64>;
pub type TargetStateF64 = world::TargetState<f64>;
pub type ControlInputF64 = world::ControlInput<f64>;
pub type SensorLimitsF64 = world::SensorLimits<f64>;
pub type MeasurementF64 = world::Measurement<f64>;
pub type PlanResultF64 = planner::PlanResult<f64>;
