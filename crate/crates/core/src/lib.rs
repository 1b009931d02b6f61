//! Discrete-time energy-based feedback for fully actuated mechanical systems.
//!
//! Control laws are obtained by discretizing a desired closed-loop
//! Hamiltonian or Lagrangian system with the implicit midpoint rule and
//! solving for the input that makes the sampled plant follow that map. The
//! crate contains the model contract, the integrators, the control laws, two
//! benchmark systems and a sampled-loop simulation harness.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

// `!(x > 0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod integrators;
pub mod linalg;
pub mod models;
pub mod scalar;

pub use error::{ControlError, IntegrationError, LinalgError, ModelError, SimError};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type HamiltonianState64 = dynamics::HamiltonianState<f64>;
pub type LagrangianState64 = dynamics::LagrangianState<f64>;
pub type NewtonConfig64 = integrators::NewtonConfig<f64>;
pub type MassSpring64 = models::MassSpring<f64>;
pub type TwoLink64 = models::TwoLink<f64>;
pub type TwoLink32 = models::TwoLink<f32>;
pub type TwoLinkParams64 = models::TwoLinkParams<f64>;
pub type CircleReference64 = models::CircleReference<f64>;
