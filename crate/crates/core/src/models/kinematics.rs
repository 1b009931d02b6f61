use serde::{Deserialize, Serialize};

use crate::dynamics::{ReferenceSample, TrajectoryReference};
use crate::error::ModelError;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Which of the two inverse-kinematics solutions to take.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Elbow {
    /// `q₂ > 0`
    Up,
    /// `q₂ < 0`
    #[default]
    Down,
}

/// Tool-centre point `ξ = (L1 sin q1 + L2 sin(q1+q2), L1 cos q1 + L2 cos(q1+q2))`.
pub fn forward_kinematics<T: Scalar>(l1: T, l2: T, q: &[T]) -> [T; 2] {
    let q12 = q[0] + q[1];
    [
        l1 * q[0].sin() + l2 * q12.sin(),
        l1 * q[0].cos() + l2 * q12.cos(),
    ]
}

/// Kinematic Jacobian `∂ξ/∂q`.
pub fn kinematic_jacobian<T: Scalar>(l1: T, l2: T, q: &[T]) -> Matrix<T> {
    let q12 = q[0] + q[1];
    let (s1, c1, s12, c12) = (q[0].sin(), q[0].cos(), q12.sin(), q12.cos());
    Matrix::from_row_major(
        2,
        2,
        vec![l1 * c1 + l2 * c12, l2 * c12, -l1 * s1 - l2 * s12, -l2 * s12],
    )
}

/// Velocity-product term `J̇(q, q̇) q̇`.
pub fn jacobian_rate_product<T: Scalar>(l1: T, l2: T, q: &[T], qd: &[T]) -> [T; 2] {
    let q12 = q[0] + q[1];
    let w1 = qd[0] * qd[0];
    let w12 = (qd[0] + qd[1]) * (qd[0] + qd[1]);
    [
        -l1 * q[0].sin() * w1 - l2 * q12.sin() * w12,
        -l1 * q[0].cos() * w1 - l2 * q12.cos() * w12,
    ]
}

/// Joint angles reaching `xi` on the requested elbow branch.
///
/// Points strictly inside `1e-9` of the workspace boundary are rejected as
/// near-singular; a point exactly on the boundary (to rounding) is resolved
/// to the stretched or folded configuration.
pub fn inverse_kinematics<T: Scalar>(
    l1: T,
    l2: T,
    xi: [T; 2],
    elbow: Elbow,
) -> Result<[T; 2], ModelError> {
    let [x, y] = xi;
    let r = x.hypot(y);
    let outer = l1 + l2;
    let inner = (l1 - l2).abs();
    let exact = T::c(4.0) * T::epsilon() * outer;
    let margin = T::c(1e-9);
    let sign = match elbow {
        Elbow::Up => T::one(),
        Elbow::Down => -T::one(),
    };

    if (r - outer).abs() <= exact {
        return Ok([x.atan2(y), T::zero()]);
    }
    if (r - inner).abs() <= exact {
        // folded arm; at the origin the first angle is arbitrary
        let q1 = if r <= exact { T::zero() } else { x.atan2(y) };
        let q1 = if l1 >= l2 { q1 } else { q1 + T::PI() };
        return Ok([q1, sign * T::PI()]);
    }
    if r > outer || r < inner {
        return Err(ModelError::Unreachable {
            x: x.to_f64_lossy(),
            y: y.to_f64_lossy(),
            inner: inner.to_f64_lossy(),
            outer: outer.to_f64_lossy(),
        });
    }
    if outer - r < margin || r - inner < margin {
        return Err(ModelError::NearSingular {
            radius: r.to_f64_lossy(),
        });
    }

    let cos2 = ((r * r - l1 * l1 - l2 * l2) / (T::c(2.0) * l1 * l2))
        .max(-T::one())
        .min(T::one());
    let q2 = sign * cos2.acos();
    let q1 = x.atan2(y) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    Ok([q1, q2])
}

/// Task-space circle `ξ_d(t) = (L1 + L2/2 cos Ωt, L1 + L2/2 sin Ωt)` mapped to
/// joint space on a fixed elbow branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleReference<T> {
    pub l1: T,
    pub l2: T,
    pub omega: T,
    pub elbow: Elbow,
}

impl<T: Scalar> CircleReference<T> {
    pub fn new(l1: T, l2: T, omega: T, elbow: Elbow) -> Result<Self, ModelError> {
        if !(l1 > T::zero()) || !(l2 > T::zero()) {
            return Err(ModelError::InvalidParameter {
                name: "L",
                reason: "link lengths must be positive".into(),
            });
        }
        if !omega.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "omega",
                reason: "must be finite".into(),
            });
        }
        // distance from the origin ranges over |centre| ± radius
        let centre = (l1 * l1 + l1 * l1).sqrt();
        let radius = T::c(0.5) * l2;
        let (near, far) = (centre - radius, centre + radius);
        let (inner, outer) = ((l1 - l2).abs(), l1 + l2);
        if !(near > inner) || !(far < outer) {
            return Err(ModelError::InvalidParameter {
                name: "L",
                reason: format!(
                    "circle spans radii [{near}, {far}] outside the workspace ({inner}, {outer})"
                ),
            });
        }
        Ok(Self {
            l1,
            l2,
            omega,
            elbow,
        })
    }

    pub fn radius(&self) -> T {
        T::c(0.5) * self.l2
    }

    pub fn centre(&self) -> [T; 2] {
        [self.l1, self.l1]
    }

    /// `(ξ_d, ξ̇_d, ξ̈_d)` at time `t`.
    pub fn task_space(&self, t: T) -> [[T; 2]; 3] {
        let r = self.radius();
        let w = self.omega;
        let (s, c) = (w * t).sin_cos();
        [
            [self.l1 + r * c, self.l1 + r * s],
            [-r * w * s, r * w * c],
            [-r * w * w * c, -r * w * w * s],
        ]
    }
}

impl<T: Scalar> TrajectoryReference<T> for CircleReference<T> {
    fn sample(&self, t: T) -> Result<ReferenceSample<T>, ModelError> {
        if !t.is_finite() || t < T::zero() {
            return Err(ModelError::ReferenceUndefined {
                t: t.to_f64_lossy(),
            });
        }
        let [xi, xi_d, xi_dd] = self.task_space(t);
        let q = inverse_kinematics(self.l1, self.l2, xi, self.elbow)?;
        let jac = kinematic_jacobian(self.l1, self.l2, &q);
        let det = jac[(0, 0)] * jac[(1, 1)] - jac[(0, 1)] * jac[(1, 0)];
        if det.abs() < T::c(1e-10) {
            return Err(ModelError::SingularJacobian {
                det: det.to_f64_lossy(),
            });
        }
        let lu = jac.lu()?;
        let qd = lu.solve(&xi_d);
        let bias = jacobian_rate_product(self.l1, self.l2, &q, &qd);
        let qdd = lu.solve(&[xi_dd[0] - bias[0], xi_dd[1] - bias[1]]);
        Ok(ReferenceSample {
            q: q.to_vec(),
            qd,
            qdd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn forward_examples() {
        let [x, y] = forward_kinematics::<f64>(0.2, 0.2, &[0.0, 0.0]);
        assert_eq!((x, y), (0.0, 0.4));
        let [x, y] = forward_kinematics::<f64>(0.2, 0.2, &[PI / 2.0, 0.0]);
        assert!((x - 0.4).abs() < 1e-15 && y.abs() < 1e-15);
        let [x, y] = forward_kinematics::<f64>(0.2, 0.2, &[0.0, PI]);
        assert!(x.abs() < 1e-15 && y.abs() < 1e-15);
    }

    #[test]
    fn stretched_boundary_is_exact() {
        for elbow in [Elbow::Up, Elbow::Down] {
            assert_eq!(
                inverse_kinematics(0.2, 0.2, [0.0, 0.4], elbow).unwrap(),
                [0.0, 0.0]
            );
        }
    }

    #[test]
    fn rejects_unreachable_and_near_boundary() {
        assert!(matches!(
            inverse_kinematics(0.2, 0.2, [0.0, 0.5], Elbow::Down),
            Err(ModelError::Unreachable { .. })
        ));
        let r = inverse_kinematics(0.2, 0.2, [0.0, 0.4 - 1e-10], Elbow::Down);
        assert!(matches!(r, Err(ModelError::NearSingular { .. })));
    }

    #[test]
    fn circle_start_derivatives() {
        let c = CircleReference::<f64>::new(0.2, 0.2, 0.1, Elbow::Down).unwrap();
        let [xi, xi_d, xi_dd] = c.task_space(0.0);
        assert!((xi[0] - 0.3).abs() < 1e-15 && xi[1] == 0.2);
        assert!(xi_d[0].abs() < 1e-18 && (xi_d[1] - 0.01).abs() < 1e-15);
        assert!((xi_dd[0] + 0.001).abs() < 1e-15 && xi_dd[1].abs() < 1e-18);
        let s = c.sample(0.0).unwrap();
        let [x, y] = forward_kinematics(0.2, 0.2, &s.q);
        assert!((x - 0.3).abs() < 1e-12 && (y - 0.2).abs() < 1e-12);
        assert!(s.q[1] < 0.0);
    }

    #[test]
    fn rejects_negative_time() {
        let c = CircleReference::<f64>::new(0.2, 0.2, 0.1, Elbow::Down).unwrap();
        assert!(matches!(
            c.sample(-1.0),
            Err(ModelError::ReferenceUndefined { .. })
        ));
    }

    #[test]
    fn rejects_circle_outside_workspace() {
        assert!(CircleReference::new(0.2, 0.05, 0.1, Elbow::Down).is_err());
    }
}
