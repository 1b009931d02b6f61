use serde::{Deserialize, Serialize};

use crate::dynamics::MechanicalModel;
use crate::error::ModelError;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSpringParams<T> {
    /// Mass [kg].
    pub m: T,
    /// Spring stiffness [N/m].
    pub k: T,
}

impl<T: Scalar> MassSpringParams<T> {
    pub fn new(m: T, k: T) -> Result<Self, ModelError> {
        if !(m > T::zero()) {
            return Err(ModelError::InvalidParameter {
                name: "m",
                reason: format!("must be positive, got {m}"),
            });
        }
        if !(k >= T::zero()) {
            return Err(ModelError::InvalidParameter {
                name: "k",
                reason: format!("must be non-negative, got {k}"),
            });
        }
        Ok(Self { m, k })
    }
}

impl<T: Scalar> Default for MassSpringParams<T> {
    /// m = 1 kg, k = 0.5 N/m.
    fn default() -> Self {
        Self {
            m: T::one(),
            k: T::c(0.5),
        }
    }
}

/// One-dimensional mass on a linear spring, `H = ½ k q² + p²/(2m)`.
#[derive(Clone, Debug)]
pub struct MassSpring<T> {
    pub params: MassSpringParams<T>,
}

pub fn mass_spring_model<T: Scalar>(params: MassSpringParams<T>) -> MassSpring<T> {
    MassSpring { params }
}

impl<T: Scalar> MechanicalModel<T> for MassSpring<T> {
    fn dof(&self) -> usize {
        1
    }

    fn mass_matrix(&self, _q: &[T]) -> Matrix<T> {
        Matrix::from_diagonal(&[self.params.m])
    }

    fn mass_matrix_partial(&self, _q: &[T], _i: usize) -> Matrix<T> {
        Matrix::zeros(1, 1)
    }

    fn mass_matrix_second_partial(&self, _q: &[T], _i: usize, _j: usize) -> Matrix<T> {
        Matrix::zeros(1, 1)
    }

    fn potential(&self, q: &[T]) -> T {
        T::c(0.5) * self.params.k * q[0] * q[0]
    }

    fn potential_gradient(&self, q: &[T]) -> Vec<T> {
        vec![self.params.k * q[0]]
    }

    fn potential_hessian(&self, _q: &[T]) -> Matrix<T> {
        Matrix::from_diagonal(&[self.params.k])
    }

    fn coriolis(&self, _q: &[T], _v: &[T]) -> Matrix<T> {
        Matrix::zeros(1, 1)
    }

    fn has_constant_mass(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "mass-spring"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{hamiltonian, HamiltonianState};

    #[test]
    fn energy_and_gradient() {
        let model = mass_spring_model(MassSpringParams::<f64>::default());
        let h = hamiltonian(&model, &HamiltonianState::new(vec![1.0], vec![0.0], 0.0)).unwrap();
        assert!((h - 0.25).abs() < 1e-15);
        assert!((model.potential_gradient(&[1.0])[0] - 0.5).abs() < 1e-15);
        assert_eq!(model.coriolis(&[0.3], &[2.0]).max_abs(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_mass() {
        assert!(MassSpringParams::new(0.0, 1.0).is_err());
        assert!(MassSpringParams::new(1.0, -1.0).is_err());
    }
}
