//! Benchmark systems: a scalar mass on a spring and a planar two-link arm.

mod kinematics;
mod mass_spring;
mod two_link;

pub use kinematics::{
    forward_kinematics, inverse_kinematics, jacobian_rate_product, kinematic_jacobian,
    CircleReference, Elbow,
};
pub use mass_spring::{mass_spring_model, MassSpring, MassSpringParams};
pub use two_link::{two_link_model, TwoLink, TwoLinkParams};
