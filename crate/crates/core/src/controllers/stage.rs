//! Per-sample stage solves of the implicit control laws.
//!
//! Hamiltonian frame, unknowns `(q½, p½)`:
//!
//! ```text
//! M(q½)(q½ − q_k) − h/2 p½ = 0
//! p½ − p_k − h/2 b_d(q½, p½, t½) = 0
//! ```
//!
//! Lagrangian frame, unknown `q½` with `v½ = 2(q½ − q_k)/h` substituted:
//!
//! ```text
//! v½ − v_k − h/2 f_d(q½, v½, t½) = 0
//! ```
//!
//! With position-only feedback the sample momentum or velocity is replaced
//! by its reconstruction from the previous stage value,
//! `p_k = M(q_k)(q½ − q_{k−½})/h` and `v_k = (q½ − q_{k−½})/h`.

use std::cell::RefCell;

use crate::dynamics::{MechanicalModel, TargetDynamics, TargetKind};
use crate::error::{ControlError, ModelError};
use crate::integrators::{finite_difference_jacobian, newton_solve, NewtonConfig, StepReport};
use crate::linalg::{vec, Matrix};
use crate::scalar::Scalar;

/// Memory of a discrete controller between sampling instants.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState<T> {
    /// Stage position of the preceding interval, `q_{k−½}`.
    pub q_half_prev: Vec<T>,
    /// Initial momentum or velocity used in place of reconstruction on the
    /// first step.
    pub v0_or_p0: Option<Vec<T>>,
    pub first_step: bool,
    /// Second stage component of the preceding interval (`p½` or `v½`).
    pub rate_half_prev: Vec<T>,
    /// Previous position sample, for backward differences.
    pub q_prev_sample: Vec<T>,
}

impl<T: Scalar> ControllerState<T> {
    pub fn new(v0_or_p0: Option<Vec<T>>) -> Self {
        Self {
            q_half_prev: Vec::new(),
            v0_or_p0,
            first_step: true,
            rate_half_prev: Vec::new(),
            q_prev_sample: Vec::new(),
        }
    }

    fn previous_stage(&self) -> Option<(&[T], &[T])> {
        if self.first_step || self.q_half_prev.is_empty() {
            None
        } else {
            Some((&self.q_half_prev, &self.rate_half_prev))
        }
    }

    fn initial_rate(&self, n: usize, what: &'static str) -> Result<Vec<T>, ControlError> {
        match &self.v0_or_p0 {
            Some(x) if x.len() == n => Ok(x.clone()),
            Some(x) => Err(ModelError::DimensionMismatch {
                expected: n,
                got: x.len(),
            }
            .into()),
            None => Err(ControlError::MissingInitialValue(what)),
        }
    }

    fn record(&mut self, q_half: &[T], rate_half: &[T]) {
        self.q_half_prev = q_half.to_vec();
        self.rate_half_prev = rate_half.to_vec();
        self.first_step = false;
    }
}

/// Solved stage `(q½, x½)` where `x` is momentum or velocity depending on the
/// frame, together with the sample value `x_k` that entered the equations.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage<T> {
    pub q_half: Vec<T>,
    pub rate_half: Vec<T>,
    pub rate_k: Vec<T>,
    pub report: StepReport,
}

enum Rate<'a, T: Scalar> {
    Measured(&'a [T]),
    Reconstructed {
        scale: Matrix<T>,
        q_half_prev: &'a [T],
    },
}

impl<T: Scalar> Rate<'_, T> {
    fn at(&self, q_half: &[T], h: T) -> Vec<T> {
        match self {
            Rate::Measured(x) => x.to_vec(),
            Rate::Reconstructed { scale, q_half_prev } => {
                vec::scale(&scale.mul_vec(&vec::sub(q_half, q_half_prev)), T::one() / h)
            }
        }
    }

    fn q_derivative(&self, n: usize, h: T) -> Option<Matrix<T>> {
        match self {
            Rate::Measured(_) => None,
            Rate::Reconstructed { scale, .. } => {
                debug_assert_eq!(scale.rows(), n);
                Some(scale.scale(T::one() / h))
            }
        }
    }
}

/// First model error raised inside a Newton callback; the callback itself
/// returns NaN so the iteration stops.
struct Fault(RefCell<Option<ModelError>>);

impl Fault {
    fn new() -> Self {
        Self(RefCell::new(None))
    }

    fn catch<V>(&self, r: Result<V, ModelError>, fallback: impl FnOnce() -> V) -> V {
        match r {
            Ok(v) => v,
            Err(e) => {
                self.0.borrow_mut().get_or_insert(e);
                fallback()
            }
        }
    }

    fn take(self) -> Option<ModelError> {
        self.0.into_inner()
    }
}

fn nan_vec<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::nan(); n]
}

fn check_target<T: Scalar, D: TargetDynamics<T> + ?Sized>(
    target: &D,
    kind: TargetKind,
    n: usize,
) -> Result<(), ControlError> {
    if target.kind() != kind {
        return Err(ControlError::InvalidDesign(format!(
            "expected a {kind:?} target, got {:?}",
            target.kind()
        )));
    }
    if target.dof() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            got: target.dof(),
        }
        .into());
    }
    Ok(())
}

fn stage_error<T: Scalar>(fault: Fault, t: T, report: StepReport) -> ControlError {
    match fault.take() {
        Some(e) => ControlError::Model(e),
        None => ControlError::StageSolve {
            t: t.to_f64_lossy(),
            report,
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_hamiltonian<T, M, D>(
    model: &M,
    target: &D,
    q_k: &[T],
    rate: Rate<'_, T>,
    t_k: T,
    h: T,
    cfg: &NewtonConfig<T>,
    guess: Option<(&[T], &[T])>,
) -> Result<Stage<T>, ControlError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    D: TargetDynamics<T> + ?Sized,
{
    let n = model.dof();
    check_target(target, TargetKind::HamiltonianBd, n)?;
    if q_k.len() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            got: q_k.len(),
        }
        .into());
    }
    let half = h * T::c(0.5);
    let t_half = t_k + half;
    let fault = Fault::new();

    let z0 = match guess {
        Some((q, p)) => vec::stack(q, p),
        None => {
            // explicit Euler predictor from the sample
            let p_k = rate.at(q_k, h);
            let a = model
                .mass_matrix(q_k)
                .solve(&p_k)
                .map_err(ModelError::from)?;
            let b = target.rhs(q_k, &p_k, t_k)?;
            vec::stack(&vec::axpy(q_k, half, &a), &vec::axpy(&p_k, half, &b))
        }
    };

    let residual = |z: &[T]| -> Vec<T> {
        let (q, p) = z.split_at(n);
        let b = fault.catch(target.rhs(q, p, t_half), || nan_vec(n));
        let p_k = rate.at(q, h);
        let r1 = vec::axpy(&model.mass_matrix(q).mul_vec(&vec::sub(q, q_k)), -half, p);
        let r2: Vec<T> = (0..n).map(|i| p[i] - p_k[i] - half * b[i]).collect();
        vec::stack(&r1, &r2)
    };
    let jacobian = |z: &[T]| -> Matrix<T> {
        let (q, p) = z.split_at(n);
        let (b_q, b_p) = match target.jacobian(q, p, t_half) {
            Some(r) => fault.catch(r, || {
                (Matrix::zeros(n, n).scale(T::nan()), Matrix::zeros(n, n))
            }),
            None => {
                let mut res = &residual;
                let r0 = res(z);
                return finite_difference_jacobian(&mut res, z, &r0);
            }
        };
        let mut jac = Matrix::zeros(2 * n, 2 * n);
        let mass = model.mass_matrix(q);
        let dq = vec::sub(q, q_k);
        for j in 0..n {
            let col = vec::add(
                &mass.column(j),
                &model.mass_matrix_partial(q, j).mul_vec(&dq),
            );
            for i in 0..n {
                jac[(i, j)] = col[i];
            }
            jac[(j, n + j)] = -half;
        }
        let d_rate = rate.q_derivative(n, h);
        for i in 0..n {
            for j in 0..n {
                let mut lower_left = -half * b_q[(i, j)];
                if let Some(d) = &d_rate {
                    lower_left -= d[(i, j)];
                }
                jac[(n + i, j)] = lower_left;
                let delta = if i == j { T::one() } else { T::zero() };
                jac[(n + i, n + j)] = delta - half * b_p[(i, j)];
            }
        }
        jac
    };

    let (z, report) = newton_solve(&residual, Some(jacobian), &z0, cfg);
    if !report.converged {
        return Err(stage_error(fault, t_k, report));
    }
    let (q_half, p_half) = z.split_at(n);
    let rate_k = rate.at(q_half, h);
    Ok(Stage {
        q_half: q_half.to_vec(),
        rate_half: p_half.to_vec(),
        rate_k,
        report,
    })
}

/// Full-state Hamiltonian stage solve with measured `p_k`.
#[allow(clippy::too_many_arguments)]
pub fn solve_stage_hamiltonian<T, M, D>(
    model: &M,
    target: &D,
    q_k: &[T],
    p_k: &[T],
    t_k: T,
    h: T,
    cfg: &NewtonConfig<T>,
    guess: Option<(&[T], &[T])>,
) -> Result<Stage<T>, ControlError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    D: TargetDynamics<T> + ?Sized,
{
    if p_k.len() != model.dof() {
        return Err(ModelError::DimensionMismatch {
            expected: model.dof(),
            got: p_k.len(),
        }
        .into());
    }
    solve_hamiltonian(model, target, q_k, Rate::Measured(p_k), t_k, h, cfg, guess)
}

/// Position-only Hamiltonian stage solve. On the first step the stored
/// initial momentum stands in for the reconstruction. Updates `state` on
/// success; the returned [`Stage::rate_k`] is the reconstructed `p_k`.
pub fn solve_stage_hamiltonian_position_only<T, M, D>(
    model: &M,
    target: &D,
    q_k: &[T],
    state: &mut ControllerState<T>,
    t_k: T,
    h: T,
    cfg: &NewtonConfig<T>,
) -> Result<Stage<T>, ControlError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    D: TargetDynamics<T> + ?Sized,
{
    let n = model.dof();
    let stage = if state.first_step {
        let p0 = state.initial_rate(n, "momentum")?;
        solve_hamiltonian(model, target, q_k, Rate::Measured(&p0), t_k, h, cfg, None)?
    } else {
        let rate = Rate::Reconstructed {
            scale: model.mass_matrix(q_k),
            q_half_prev: &state.q_half_prev,
        };
        solve_hamiltonian(
            model,
            target,
            q_k,
            rate,
            t_k,
            h,
            cfg,
            state.previous_stage(),
        )?
    };
    state.record(&stage.q_half, &stage.rate_half);
    Ok(stage)
}

#[allow(clippy::too_many_arguments)]
fn solve_lagrangian<T, M, D>(
    model: &M,
    target: &D,
    q_k: &[T],
    rate: Rate<'_, T>,
    t_k: T,
    h: T,
    cfg: &NewtonConfig<T>,
    guess: Option<&[T]>,
) -> Result<Stage<T>, ControlError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    D: TargetDynamics<T> + ?Sized,
{
    let n = model.dof();
    check_target(target, TargetKind::LagrangianFd, n)?;
    if q_k.len() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            got: q_k.len(),
        }
        .into());
    }
    let half = h * T::c(0.5);
    let two_over_h = T::c(2.0) / h;
    let t_half = t_k + half;
    let fault = Fault::new();
    let stage_velocity = |q: &[T]| vec::scale(&vec::sub(q, q_k), two_over_h);

    let z0 = match guess {
        Some(q) => q.to_vec(),
        None => vec::axpy(q_k, half, &rate.at(q_k, h)),
    };
    let residual = |q: &[T]| -> Vec<T> {
        let v = stage_velocity(q);
        let f = fault.catch(target.rhs(q, &v, t_half), || nan_vec(n));
        let v_k = rate.at(q, h);
        (0..n).map(|i| v[i] - v_k[i] - half * f[i]).collect()
    };
    let jacobian = |q: &[T]| -> Matrix<T> {
        let v = stage_velocity(q);
        let (f_q, f_v) = match target.jacobian(q, &v, t_half) {
            Some(r) => fault.catch(r, || {
                (Matrix::zeros(n, n).scale(T::nan()), Matrix::zeros(n, n))
            }),
            None => {
                let mut res = &residual;
                let r0 = res(q);
                return finite_difference_jacobian(&mut res, q, &r0);
            }
        };
        let mut jac = Matrix::identity(n)
            .scale(two_over_h)
            .sub(&f_q.scale(half))
            .sub(&f_v);
        if let Some(d) = rate.q_derivative(n, h) {
            jac = jac.sub(&d);
        }
        jac
    };

    let (q_half, report) = newton_solve(&residual, Some(jacobian), &z0, cfg);
    if !report.converged {
        return Err(stage_error(fault, t_k, report));
    }
    let v_half = stage_velocity(&q_half);
    let rate_k = rate.at(&q_half, h);
    Ok(Stage {
        q_half,
        rate_half: v_half,
        rate_k,
        report,
    })
}

/// Lagrangian stage solve. With `measured_v` the sample velocity is used
/// directly; otherwise it is reconstructed from `state` (position-only),
/// the stored initial velocity standing in on the first step. `state` is
/// updated on success in both cases.
#[allow(clippy::too_many_arguments)]
pub fn solve_stage_lagrangian<T, M, D>(
    model: &M,
    target: &D,
    q_k: &[T],
    measured_v: Option<&[T]>,
    state: &mut ControllerState<T>,
    t_k: T,
    h: T,
    cfg: &NewtonConfig<T>,
) -> Result<Stage<T>, ControlError>
where
    T: Scalar,
    M: MechanicalModel<T> + ?Sized,
    D: TargetDynamics<T> + ?Sized,
{
    let n = model.dof();
    let guess = state.previous_stage().map(|(q, _)| q.to_vec());
    let stage = match measured_v {
        Some(v) => {
            if v.len() != n {
                return Err(ModelError::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                }
                .into());
            }
            solve_lagrangian(
                model,
                target,
                q_k,
                Rate::Measured(v),
                t_k,
                h,
                cfg,
                guess.as_deref(),
            )?
        }
        None if state.first_step => {
            let v0 = state.initial_rate(n, "velocity")?;
            solve_lagrangian(model, target, q_k, Rate::Measured(&v0), t_k, h, cfg, None)?
        }
        None => {
            let rate = Rate::Reconstructed {
                scale: Matrix::identity(n),
                q_half_prev: &state.q_half_prev,
            };
            solve_lagrangian(model, target, q_k, rate, t_k, h, cfg, guess.as_deref())?
        }
    };
    state.record(&stage.q_half, &stage.rate_half);
    Ok(stage)
}
