//! Ready-made closed loops for the benchmark systems.

use std::sync::Arc;

use crate::controllers::{
    pd_target, ComputedTorqueGains, ControlDesign, ControllerSpec, Feedback, Mode, PdGains,
};
use crate::dynamics::{
    build_ida_pbc_target, HamiltonianState, IdaPbcTarget, InertiaShape, LagrangianState,
    MechanicalModel, QuadraticPotential, StructureMatrix, TrajectoryReference,
};
use crate::error::{ModelError, SimError};
use crate::linalg::{vec, Matrix};
use crate::models::{
    forward_kinematics, mass_spring_model, two_link_model, CircleReference, Elbow,
    MassSpringParams, TwoLinkParams,
};
use crate::scalar::Scalar;

use super::sampled::{LoopConfig, SimulationTrace};

/// Mass-spring damping injected by the controller.
pub const MASS_SPRING_DAMPING: f64 = 0.1;
pub const MASS_SPRING_Q0: f64 = 1.0;
pub const MASS_SPRING_HORIZON: f64 = 100.0;

/// Swing-up horizon for the PD set-point task.
pub const PD_HORIZON: f64 = 20.0;

/// Angular rate of the tracked circle [rad/s].
pub const CIRCLE_OMEGA: f64 = 0.1;

/// Two periods of the circle.
pub fn tracking_horizon(omega: f64) -> f64 {
    4.0 * std::f64::consts::PI / omega
}

/// Mass-spring target: `M_d = M`, `V_d = ½ c q²`, `R2 = d`.
pub fn mass_spring_target<T: Scalar>(
    model: Arc<dyn MechanicalModel<T>>,
    c: T,
    d: T,
) -> Result<IdaPbcTarget<T>, ModelError> {
    if !(c >= T::zero()) || !(d >= T::zero()) {
        return Err(ModelError::InvalidParameter {
            name: "c",
            reason: "stiffness and damping must be nonnegative".into(),
        });
    }
    build_ida_pbc_target(
        model,
        InertiaShape::Plant,
        Arc::new(QuadraticPotential::new(
            Matrix::from_diagonal(&[c]),
            vec![T::zero()],
        )),
        StructureMatrix::Zero,
        StructureMatrix::Constant(Matrix::from_diagonal(&[d])),
    )
}

/// Mass-spring released from rest at `q0` under the shaped target `(c, d)`.
#[allow(clippy::too_many_arguments)]
pub fn mass_spring_loop<T: Scalar>(
    params: MassSpringParams<T>,
    c: T,
    d: T,
    q0: T,
    h: T,
    horizon: T,
    mode: Mode,
    feedback: Feedback,
) -> Result<LoopConfig<T>, SimError> {
    let model: Arc<dyn MechanicalModel<T>> = Arc::new(mass_spring_model(params));
    let target = Arc::new(mass_spring_target(model.clone(), c, d)?);
    let spec = ControllerSpec::new(ControlDesign::GeneralHamiltonian { target }, mode, feedback);
    Ok(LoopConfig::new(
        model,
        spec,
        HamiltonianState::at_rest(vec![q0], T::zero()),
        h,
        horizon,
    ))
}

/// `K = D = 0.1 I`, upright set point.
pub fn two_link_pd_gains<T: Scalar>() -> PdGains<T> {
    let g = Matrix::from_diagonal(&[T::c(0.1), T::c(0.1)]);
    PdGains {
        stiffness: g.clone(),
        damping: g,
        setpoint: vec![T::zero(), T::zero()],
    }
}

/// Hanging start `(π, 0)` at rest.
pub fn two_link_pd_start<T: Scalar>() -> HamiltonianState<T> {
    HamiltonianState::at_rest(vec![T::PI(), T::zero()], T::zero())
}

pub fn two_link_pd_loop<T: Scalar>(
    params: TwoLinkParams<T>,
    gains: PdGains<T>,
    start: HamiltonianState<T>,
    h: T,
    horizon: T,
    mode: Mode,
    feedback: Feedback,
) -> Result<LoopConfig<T>, SimError> {
    let model: Arc<dyn MechanicalModel<T>> = Arc::new(two_link_model(params));
    let spec = ControllerSpec::new(ControlDesign::PdGravity(gains), mode, feedback);
    Ok(LoopConfig::new(model, spec, start, h, horizon))
}

/// The target system the PD loop is meant to reproduce.
#[allow(clippy::type_complexity)]
pub fn two_link_pd_target<T: Scalar>(
    params: TwoLinkParams<T>,
    gains: &PdGains<T>,
) -> Result<(Arc<dyn MechanicalModel<T>>, IdaPbcTarget<T>), ModelError> {
    let model: Arc<dyn MechanicalModel<T>> = Arc::new(two_link_model(params));
    let target = pd_target(model.clone(), gains)?;
    Ok((model, target))
}

/// `M_d = diag(0.1, 0.013)`, `K = D = diag(0.3, 0.03)`.
pub fn two_link_tracking_gains<T: Scalar>() -> ComputedTorqueGains<T> {
    ComputedTorqueGains {
        inertia: Matrix::from_diagonal(&[T::c(0.1), T::c(0.013)]),
        stiffness: Matrix::from_diagonal(&[T::c(0.3), T::c(0.03)]),
        damping: Matrix::from_diagonal(&[T::c(0.3), T::c(0.03)]),
    }
}

/// Circle tracking started on the reference with its initial velocity.
#[allow(clippy::too_many_arguments)]
pub fn two_link_tracking_loop<T: Scalar>(
    params: TwoLinkParams<T>,
    gains: ComputedTorqueGains<T>,
    omega: T,
    elbow: Elbow,
    h: T,
    horizon: T,
    mode: Mode,
    feedback: Feedback,
) -> Result<(LoopConfig<T>, Arc<CircleReference<T>>), SimError> {
    let reference = Arc::new(CircleReference::new(params.l1, params.l2, omega, elbow)?);
    let model: Arc<dyn MechanicalModel<T>> = Arc::new(two_link_model(params));
    let r0 = reference.sample(T::zero())?;
    let spec = ControllerSpec::new(
        ControlDesign::ComputedTorque {
            gains,
            reference: reference.clone(),
        },
        mode,
        feedback,
    )
    .with_initial_velocity(r0.qd.clone());
    let start = LagrangianState::new(r0.q, r0.qd, T::zero());
    Ok((LoopConfig::new(model, spec, start, h, horizon), reference))
}

/// Task-space distance `‖ξ(q_k) − ξ_d(t_k)‖` at every sample.
pub fn tracking_errors<T: Scalar>(
    trace: &SimulationTrace<T>,
    reference: &CircleReference<T>,
) -> Vec<T> {
    trace
        .t
        .iter()
        .zip(&trace.q)
        .map(|(&t, q)| {
            let xi = forward_kinematics(reference.l1, reference.l2, q);
            let [xd, _, _] = reference.task_space(t);
            vec::norm2(&[xi[0] - xd[0], xi[1] - xd[1]])
        })
        .collect()
}
