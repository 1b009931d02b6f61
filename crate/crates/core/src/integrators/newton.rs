//! Damped Newton iteration for the small implicit systems solved every
//! sampling step.

use serde::{Deserialize, Serialize};

use crate::linalg::{vec, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig<T> {
    /// Converged once `‖residual‖∞ ≤ abs_tol`.
    pub abs_tol: T,
    pub max_iter: usize,
    /// Step shrink factor of the backtracking line search.
    pub damping: T,
    pub max_halvings: usize,
}

impl<T: Scalar> Default for NewtonConfig<T> {
    fn default() -> Self {
        Self {
            abs_tol: T::default_abs_tol(),
            max_iter: 50,
            damping: T::c(0.5),
            max_halvings: 20,
        }
    }
}

impl<T: Scalar> NewtonConfig<T> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.abs_tol > T::zero()) {
            return Err("newton.abs_tol must be positive".into());
        }
        if self.max_iter < 1 {
            return Err("newton.max_iter must be at least 1".into());
        }
        if !(self.damping > T::zero() && self.damping < T::one()) {
            return Err("newton.damping must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

impl StepReport {
    /// Combines the reports of consecutive solves within one step.
    pub fn merge(self, other: StepReport) -> StepReport {
        StepReport {
            iterations: self.iterations + other.iterations,
            final_residual: self.final_residual.max(other.final_residual),
            converged: self.converged && other.converged,
        }
    }
}

/// Forward-difference Jacobian with step `max(1e-7, 1e-7·|xᵢ|)`.
pub fn finite_difference_jacobian<T: Scalar>(
    residual: &mut impl FnMut(&[T]) -> Vec<T>,
    x: &[T],
    r0: &[T],
) -> Matrix<T> {
    let m = x.len();
    let base = T::c(1e-7).max(T::epsilon().sqrt());
    let mut jac = Matrix::zeros(r0.len(), m);
    let mut xp = x.to_vec();
    for j in 0..m {
        let step = base.max(base * x[j].abs());
        xp[j] = x[j] + step;
        // use the representable increment
        let dx = xp[j] - x[j];
        let rp = residual(&xp);
        for i in 0..r0.len() {
            jac[(i, j)] = (rp[i] - r0[i]) / dx;
        }
        xp[j] = x[j];
    }
    jac
}

fn newton_direction<T: Scalar>(jac: &Matrix<T>, r: &[T]) -> (Vec<T>, bool) {
    if let Ok(dx) = jac.solve(r) {
        if vec::is_finite(&dx) {
            return (vec::neg(&dx), true);
        }
    }
    // Levenberg-regularised pseudo-step (JᵀJ + μI) dx = −Jᵀ r
    let jt = jac.transpose();
    let mut normal = jt.mul_mat(jac);
    let mu = T::c(1e-8) * (T::one() + normal.max_abs());
    for i in 0..normal.rows() {
        normal[(i, i)] += mu;
    }
    let rhs = vec::neg(&jt.mul_vec(r));
    match normal.solve(&rhs) {
        Ok(dx) => (dx, false),
        Err(_) => (vec::neg(&jt.mul_vec(r)), false),
    }
}

/// Solves `residual(x) = 0` from `x0`.
///
/// Each iteration takes the full Newton step when it reduces `‖r‖∞`
/// (Armijo with constant 1e-4), otherwise shrinks it by `cfg.damping` up to
/// `cfg.max_halvings` times. A singular Jacobian falls back to a regularised
/// least-squares step; three such steps in a row abort. Non-convergence is
/// reported in the [`StepReport`], never panics.
pub fn newton_solve<T: Scalar, R, J>(
    mut residual: R,
    mut jacobian: Option<J>,
    x0: &[T],
    cfg: &NewtonConfig<T>,
) -> (Vec<T>, StepReport)
where
    R: FnMut(&[T]) -> Vec<T>,
    J: FnMut(&[T]) -> Matrix<T>,
{
    let mut x = x0.to_vec();
    let mut r = residual(&x);
    let mut norm = vec::norm_inf(&r);
    let mut iterations = 0;
    let mut singular_streak = 0;
    let armijo = T::c(1e-4);

    while iterations < cfg.max_iter {
        if !norm.is_finite() {
            break;
        }
        if norm <= cfg.abs_tol {
            break;
        }
        iterations += 1;
        let jac = match jacobian.as_mut() {
            Some(j) => j(&x),
            None => finite_difference_jacobian(&mut residual, &x, &r),
        };
        let (dx, regular) = newton_direction(&jac, &r);
        singular_streak = if regular { 0 } else { singular_streak + 1 };
        if singular_streak >= 3 {
            break;
        }

        let mut lambda = T::one();
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial = vec::axpy(&x, lambda, &dx);
            let r_trial = residual(&trial);
            let n_trial = vec::norm_inf(&r_trial);
            if n_trial.is_finite() && n_trial <= (T::one() - armijo * lambda) * norm {
                x = trial;
                r = r_trial;
                norm = n_trial;
                accepted = true;
                break;
            }
            lambda *= cfg.damping;
        }
        if !accepted {
            // no decrease along the direction: take the smallest trial step so
            // the iteration can leave a flat region, then let the norm decide
            let trial = vec::axpy(&x, lambda, &dx);
            let r_trial = residual(&trial);
            let n_trial = vec::norm_inf(&r_trial);
            if !n_trial.is_finite() {
                break;
            }
            x = trial;
            r = r_trial;
            norm = n_trial;
        }
    }

    let converged = norm.is_finite() && norm <= cfg.abs_tol;
    (
        x,
        StepReport {
            iterations,
            final_residual: norm.to_f64_lossy(),
            converged,
        },
    )
}

/// Newton without an analytic Jacobian.
pub fn newton_solve_fd<T: Scalar, R>(
    residual: R,
    x0: &[T],
    cfg: &NewtonConfig<T>,
) -> (Vec<T>, StepReport)
where
    R: FnMut(&[T]) -> Vec<T>,
{
    newton_solve(residual, None::<fn(&[T]) -> Matrix<T>>, x0, cfg)
}
