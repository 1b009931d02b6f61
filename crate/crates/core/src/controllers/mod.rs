//! Discrete-time control laws: symplectic implicit laws with per-sample stage
//! solves, and their quasi-continuous counterparts.

mod laws;
mod runtime;
mod stage;

pub use laws::{
    control_computed_torque, control_general_hamiltonian, control_lagrangian, control_pd_gravity,
    control_potential_shaping, control_quasi_continuous_hamiltonian, ComputedTorqueGains, PdGains,
};
pub use runtime::{
    pd_target, BaselineVelocity, ControlDesign, ControlOutput, Controller, ControllerSpec,
    Feedback, Law, Mode,
};
pub use stage::{
    solve_stage_hamiltonian, solve_stage_hamiltonian_position_only, solve_stage_lagrangian,
    ControllerState, Stage,
};
