//! Störmer-Verlet in two-step, staggered one-step and general partitioned form.

use crate::error::IntegrationError;
use crate::integrators::newton::{newton_solve_fd, NewtonConfig, StepReport};
use crate::linalg::vec;
use crate::scalar::Scalar;

/// `q_{k+1} = 2 q_k − q_{k−1} + h² f(q_k)`
pub fn stormer_verlet_two_step<T: Scalar>(
    f: impl Fn(&[T]) -> Vec<T>,
    q_k: &[T],
    q_prev: &[T],
    h: T,
) -> Vec<T> {
    let acc = f(q_k);
    let h2 = h * h;
    q_k.iter()
        .zip(q_prev)
        .zip(&acc)
        .map(|((&q, &qp), &a)| (q + q) - qp + h2 * a)
        .collect()
}

/// Staggered-grid step `(q_k, v_{k−½}) ↦ (q_{k+1}, v_{k+½})`:
/// `v_{k+½} = v_{k−½} + h f(q_k)`, `q_{k+1} = q_k + h v_{k+½}`.
pub fn stormer_verlet_one_step<T: Scalar>(
    f: impl Fn(&[T]) -> Vec<T>,
    q_k: &[T],
    v_prev_half: &[T],
    h: T,
) -> (Vec<T>, Vec<T>) {
    let v_next = vec::axpy(v_prev_half, h, &f(q_k));
    let q_next = vec::axpy(q_k, h, &v_next);
    (q_next, v_next)
}

/// Störmer-Verlet for `q̇ = a(q,p)`, `ṗ = b(q,p)` on staggered grids:
///
/// ```text
/// q_{k+½} = q_{k−½} + h/2 (a(q_{k−½}, p_k) + a(q_{k+½}, p_k))
/// p_{k+1} = p_k + h/2 (b(q_{k+½}, p_k) + b(q_{k+½}, p_{k+1}))
/// ```
///
/// Both implicit halves are solved by Newton with numerical Jacobians.
pub fn stormer_verlet_partitioned_step<T, A, B>(
    a: A,
    b: B,
    q_prev_half: &[T],
    p_k: &[T],
    h: T,
    cfg: &NewtonConfig<T>,
) -> Result<(Vec<T>, Vec<T>, StepReport), IntegrationError>
where
    T: Scalar,
    A: Fn(&[T], &[T]) -> Vec<T>,
    B: Fn(&[T], &[T]) -> Vec<T>,
{
    assert!(h > T::zero(), "step size must be positive");
    let half = h * T::c(0.5);

    let a_old = a(q_prev_half, p_k);
    let guess_q = vec::axpy(q_prev_half, h, &a_old);
    let (q_half, rep_q) = newton_solve_fd(
        |q: &[T]| {
            let a_new = a(q, p_k);
            (0..q.len())
                .map(|i| q[i] - q_prev_half[i] - half * (a_old[i] + a_new[i]))
                .collect()
        },
        &guess_q,
        cfg,
    );
    if !rep_q.converged {
        return Err(IntegrationError::NewtonFailed(rep_q));
    }

    let b_old = b(&q_half, p_k);
    let guess_p = vec::axpy(p_k, h, &b_old);
    let (p_next, rep_p) = newton_solve_fd(
        |p: &[T]| {
            let b_new = b(&q_half, p);
            (0..p.len())
                .map(|i| p[i] - p_k[i] - half * (b_old[i] + b_new[i]))
                .collect()
        },
        &guess_p,
        cfg,
    );
    if !rep_p.converged {
        return Err(IntegrationError::NewtonFailed(rep_p));
    }
    Ok((q_half, p_next, rep_q.merge(rep_p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_particle_two_step() {
        let rest = stormer_verlet_two_step(|q: &[f64]| vec![0.0; q.len()], &[0.7], &[0.7], 0.3);
        assert_eq!(rest, vec![0.7]);
        let drift = stormer_verlet_two_step(|q: &[f64]| vec![0.0; q.len()], &[1.0], &[0.0], 123.0);
        assert_eq!(drift, vec![2.0]);
    }

    #[test]
    fn harmonic_two_step_substitution() {
        let q = stormer_verlet_two_step(|q: &[f64]| vec![-q[0]], &[1.0], &[1.0], 0.1);
        assert!((q[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn one_step_mirrors_two_step_examples() {
        // q_{k−1}=0, q_k=1 corresponds to v_{k−½} = (q_k − q_{k−1})/h
        let h = 0.5;
        let (q, v) = stormer_verlet_one_step(|q: &[f64]| vec![0.0; q.len()], &[1.0], &[1.0 / h], h);
        assert_eq!(q, vec![2.0]);
        assert_eq!(v, vec![2.0]);
        let (q, _) = stormer_verlet_one_step(|q: &[f64]| vec![-q[0]], &[1.0], &[0.0], 0.1);
        assert!((q[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn partitioned_linear_step_matches_hand_solve() {
        // a = p/m, b = −c q − (d/m) p with m = 1, c = 1, d = 0.1, h = 0.1:
        // q½ = q_{−½} + h p_k (a independent of q);
        // p₁ (1 + h d /2) = p_k (1 − h d /2) − h c q½
        let (m, c, d, h) = (1.0, 1.0, 0.1, 0.1);
        let cfg = NewtonConfig::default();
        let (qh, p1, rep) = stormer_verlet_partitioned_step(
            |_q: &[f64], p: &[f64]| vec![p[0] / m],
            |q: &[f64], p: &[f64]| vec![-c * q[0] - d / m * p[0]],
            &[1.0],
            &[0.0],
            h,
            &cfg,
        )
        .unwrap();
        assert!(rep.converged);
        assert!((qh[0] - 1.0).abs() < 1e-12);
        let expected = (0.0 * (1.0 - h * d / 2.0) - h * c * 1.0) / (1.0 + h * d / 2.0);
        assert!((p1[0] - expected).abs() < 1e-12);
    }
}
