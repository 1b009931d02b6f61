//! Signal norms and the exponential-tube stability test.

use crate::scalar::Scalar;

/// `(h Σ_{k=0}^{N} ‖x_k‖²)^½`, both endpoints included.
pub fn discrete_l2_norm<T: Scalar, V: AsRef<[T]>>(signal: &[V], h: T) -> T {
    assert!(!signal.is_empty(), "signal must be nonempty");
    let sum: T = signal
        .iter()
        .map(|x| x.as_ref().iter().map(|&v| v * v).sum::<T>())
        .sum();
    (h * sum).sqrt()
}

/// Same as [`discrete_l2_norm`] for a scalar signal.
pub fn discrete_l2_norm_scalar<T: Scalar>(signal: &[T], h: T) -> T {
    assert!(!signal.is_empty(), "signal must be nonempty");
    (h * signal.iter().map(|&v| v * v).sum::<T>()).sqrt()
}

/// `max_k |e^{α k h} q_k| < 1.1 q_0`. Non-finite samples fail.
pub fn tube_criterion<T: Scalar>(q: &[T], alpha: T, q0: T, h: T) -> bool {
    let bound = T::c(1.1) * q0.abs();
    q.iter().enumerate().all(|(k, &qk)| {
        let weighted = (alpha * T::from_count(k) * h).exp() * qk;
        weighted.is_finite() && weighted.abs() < bound
    })
}

/// Tube decay rate `α = 0.1 d/m`.
pub fn tube_rate<T: Scalar>(d: T, m: T) -> T {
    T::c(0.1) * d / m
}

/// Largest `‖a_k − b_k‖∞` over the common prefix of two sequences.
pub fn max_deviation<T: Scalar, A: AsRef<[T]>, B: AsRef<[T]>>(a: &[A], b: &[B]) -> T {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            x.as_ref()
                .iter()
                .zip(y.as_ref())
                .map(|(&u, &v)| (u - v).abs())
        })
        .fold(T::zero(), |m, d| if d > m || d.is_nan() { d } else { m })
}

/// Largest `|x|` over all entries.
pub fn max_abs<T: Scalar, A: AsRef<[T]>>(a: &[A]) -> T {
    a.iter()
        .flat_map(|x| x.as_ref().iter().map(|v| v.abs()))
        .fold(T::zero(), |m, d| if d > m || d.is_nan() { d } else { m })
}
