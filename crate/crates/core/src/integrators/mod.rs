//! Time stepping: implicit midpoint, Störmer-Verlet, the Newton solver behind
//! the implicit schemes, and the adaptive propagator used as the true plant.

mod midpoint;
mod newton;
mod plant;
mod verlet;

pub use midpoint::{implicit_midpoint_stage, implicit_midpoint_step};
pub use newton::{
    finite_difference_jacobian, newton_solve, newton_solve_fd, NewtonConfig, StepReport,
};
pub use plant::{
    midpoint_sampling_step, plant_rhs, propagate_plant, propagate_plant_with, PlantPropagator,
    PlantTolerances,
};
pub use verlet::{
    stormer_verlet_one_step, stormer_verlet_partitioned_step, stormer_verlet_two_step,
};
