//! Control laws evaluated at stage values (symplectic) or sample values
//! (quasi-continuous).

use crate::dynamics::{
    hamiltonian_q_gradient, open_loop_acceleration, MechanicalModel, ShapedPotential,
    TargetDynamics, TrajectoryReference,
};
use crate::error::{ControlError, ModelError};
use crate::linalg::{vec, Matrix};
use crate::scalar::Scalar;

/// Set-point PD gains, `u = ∇V(q) − D q̇ − K (q − q_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PdGains<T> {
    pub stiffness: Matrix<T>,
    pub damping: Matrix<T>,
    pub setpoint: Vec<T>,
}

/// Computed-torque error dynamics `M_d ë + D ė + K e = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputedTorqueGains<T> {
    pub inertia: Matrix<T>,
    pub stiffness: Matrix<T>,
    pub damping: Matrix<T>,
}

fn check_square<T: Scalar>(name: &str, m: &Matrix<T>, n: usize) -> Result<(), ControlError> {
    if m.rows() != n || m.cols() != n {
        return Err(ControlError::InvalidDesign(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_psd<T: Scalar>(
    name: &str,
    m: &Matrix<T>,
    n: usize,
) -> Result<(), ControlError> {
    check_square(name, m, n)?;
    if !m.is_symmetric(T::c(1e-12)) {
        return Err(ControlError::InvalidDesign(format!(
            "{name} is not symmetric"
        )));
    }
    if !m.is_psd(T::c(1e-12)) {
        return Err(ControlError::InvalidDesign(format!(
            "{name} is not positive semidefinite"
        )));
    }
    Ok(())
}

pub(crate) fn check_pd<T: Scalar>(name: &str, m: &Matrix<T>, n: usize) -> Result<(), ControlError> {
    check_square(name, m, n)?;
    if !m.is_spd(T::c(1e-12)) {
        return Err(ControlError::InvalidDesign(format!(
            "{name} is not symmetric positive definite"
        )));
    }
    Ok(())
}

impl<T: Scalar> PdGains<T> {
    pub fn new(
        stiffness: Matrix<T>,
        damping: Matrix<T>,
        setpoint: Vec<T>,
    ) -> Result<Self, ControlError> {
        let n = setpoint.len();
        check_psd("K", &stiffness, n)?;
        check_psd("D", &damping, n)?;
        Ok(Self {
            stiffness,
            damping,
            setpoint,
        })
    }
}

impl<T: Scalar> ComputedTorqueGains<T> {
    pub fn new(
        inertia: Matrix<T>,
        stiffness: Matrix<T>,
        damping: Matrix<T>,
    ) -> Result<Self, ControlError> {
        let n = inertia.rows();
        check_pd("M_d", &inertia, n)?;
        check_psd("K", &stiffness, n)?;
        check_psd("D", &damping, n)?;
        Ok(Self {
            inertia,
            stiffness,
            damping,
        })
    }
}

/// `u = ∇V(q) − ∇V_d(q)`.
pub fn control_potential_shaping<T, M, P>(model: &M, shaped: &P, q: &[T]) -> Vec<T>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    P: ShapedPotential<T> + ?Sized,
{
    vec::sub(&model.potential_gradient(q), &shaped.gradient(q))
}

/// `u = ∇_q H(q, p) + b_d(q, p, t)`.
pub fn control_general_hamiltonian<T, M, D>(
    model: &M,
    target: &D,
    q: &[T],
    p: &[T],
    t: T,
) -> Result<Vec<T>, ModelError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    D: TargetDynamics<T> + ?Sized,
{
    let grad = hamiltonian_q_gradient(model, q, p)?;
    Ok(vec::add(&grad, &target.rhs(q, p, t)?))
}

/// `u = M(q) (f_d(q, v, t) − f(q, v))` with the open-loop drift
/// `f = −M⁻¹(C v + ∇V)`.
pub fn control_lagrangian<T, M, D>(
    model: &M,
    target: &D,
    q: &[T],
    v: &[T],
    t: T,
) -> Result<Vec<T>, ModelError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    D: TargetDynamics<T> + ?Sized,
{
    let f_d = target.rhs(q, v, t)?;
    let f = open_loop_acceleration(model, q, v)?;
    Ok(model.mass_matrix(q).mul_vec(&vec::sub(&f_d, &f)))
}

/// `u = ∇V(q) − D v − K (q − q_d)`, at stage values for the symplectic law
/// and at sample values for the quasi-continuous one.
pub fn control_pd_gravity<T, M>(model: &M, gains: &PdGains<T>, q: &[T], v: &[T]) -> Vec<T>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
{
    let e = vec::sub(q, &gains.setpoint);
    let grad = model.potential_gradient(q);
    let dv = gains.damping.mul_vec(v);
    let ke = gains.stiffness.mul_vec(&e);
    (0..q.len()).map(|i| grad[i] - dv[i] - ke[i]).collect()
}

/// `u = C(q,v) v + ∇V(q) + M(q) (q̈_d + M_d⁻¹(−K e − D ė))`.
pub fn control_computed_torque<T, M, R>(
    model: &M,
    gains: &ComputedTorqueGains<T>,
    reference: &R,
    q: &[T],
    v: &[T],
    t: T,
) -> Result<Vec<T>, ModelError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    R: TrajectoryReference<T> + ?Sized,
{
    let r = reference.sample(t)?;
    let e = vec::sub(q, &r.q);
    let ed = vec::sub(v, &r.qd);
    let feedback = vec::neg(&vec::add(
        &gains.stiffness.mul_vec(&e),
        &gains.damping.mul_vec(&ed),
    ));
    let acc = vec::add(&r.qdd, &gains.inertia.solve(&feedback)?);
    let cv = model.coriolis(q, v).mul_vec(v);
    let grad = model.potential_gradient(q);
    let m_acc = model.mass_matrix(q).mul_vec(&acc);
    Ok((0..q.len()).map(|i| cv[i] + grad[i] + m_acc[i]).collect())
}

/// Continuous Hamiltonian law `∇_q H + b_d` evaluated at the sample
/// `(q_k, p_k)` and held over the interval.
pub fn control_quasi_continuous_hamiltonian<T, M, D>(
    model: &M,
    target: &D,
    q_k: &[T],
    p_k: &[T],
    t_k: T,
) -> Result<Vec<T>, ModelError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    D: TargetDynamics<T> + ?Sized,
{
    control_general_hamiltonian(model, target, q_k, p_k, t_k)
}
