use serde::{Deserialize, Serialize};

use crate::dynamics::MechanicalModel;
use crate::error::ModelError;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Planar two-link arm with a motor mass at the elbow. Joint angles are
/// measured from the upward vertical.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkParams<T> {
    pub m1: T,
    pub m2: T,
    /// Link inertias about the centres of gravity [kg·m²].
    pub j1: T,
    pub j2: T,
    /// Link lengths [m].
    pub l1: T,
    pub l2: T,
    /// Joint-to-COG distances [m].
    pub lc1: T,
    pub lc2: T,
    /// Motor (stator) mass at the second joint [kg].
    pub m_motor: T,
    pub g: T,
    constants: [T; 5],
}

impl<T: Scalar> TwoLinkParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m1: T,
        m2: T,
        j1: T,
        j2: T,
        l1: T,
        l2: T,
        lc1: T,
        lc2: T,
        m_motor: T,
        g: T,
    ) -> Result<Self, ModelError> {
        let named = [
            ("m1", m1),
            ("m2", m2),
            ("J1", j1),
            ("J2", j2),
            ("L1", l1),
            ("L2", l2),
            ("l1", lc1),
            ("l2", lc2),
            ("mM", m_motor),
            ("g", g),
        ];
        for (name, value) in named {
            if !(value > T::zero()) || !value.is_finite() {
                return Err(ModelError::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {value}"),
                });
            }
        }
        let constants = Self::derive_constants(m1, m2, j1, j2, l1, lc1, lc2, m_motor);
        Ok(Self {
            m1,
            m2,
            j1,
            j2,
            l1,
            l2,
            lc1,
            lc2,
            m_motor,
            g,
            constants,
        })
    }

    /// m₁ = m₂ = 0.885 kg, J₁ = J₂ = 3.27e-3 kg·m², L₁ = L₂ = 0.2 m,
    /// l₁ = l₂ = 0.1 m, m_M = 1.0 kg, g = 9.81 m/s².
    pub fn benchmark() -> Self {
        let c = T::c;
        Self::new(
            c(0.885),
            c(0.885),
            c(3.27e-3),
            c(3.27e-3),
            c(0.2),
            c(0.2),
            c(0.1),
            c(0.1),
            c(1.0),
            c(9.81),
        )
        .expect("benchmark parameters are valid")
    }

    #[allow(clippy::too_many_arguments)]
    fn derive_constants(m1: T, m2: T, j1: T, j2: T, l1: T, lc1: T, lc2: T, m_motor: T) -> [T; 5] {
        let outer = m_motor + m2;
        [
            j1 + m1 * lc1 * lc1 + outer * l1 * l1,
            j2 + m2 * lc2 * lc2,
            m2 * l1 * lc2,
            m1 * lc1 + outer * l1,
            m2 * lc2,
        ]
    }

    /// Lumped constants `[c1, c2, c3, c4, c5]`.
    pub fn constants(&self) -> [T; 5] {
        self.constants
    }

    /// Recomputes the lumped constants from the primitive parameters.
    pub fn recompute_constants(&self) -> [T; 5] {
        Self::derive_constants(
            self.m1,
            self.m2,
            self.j1,
            self.j2,
            self.l1,
            self.lc1,
            self.lc2,
            self.m_motor,
        )
    }
}

impl<T: Scalar> Default for TwoLinkParams<T> {
    fn default() -> Self {
        Self::benchmark()
    }
}

#[derive(Clone, Debug)]
pub struct TwoLink<T> {
    pub params: TwoLinkParams<T>,
}

pub fn two_link_model<T: Scalar>(params: TwoLinkParams<T>) -> TwoLink<T> {
    TwoLink { params }
}

impl<T: Scalar> TwoLink<T> {
    // [[2, 1], [1, 0]] scaled by s
    fn elbow_pattern(s: T) -> Matrix<T> {
        let two = s + s;
        Matrix::from_row_major(2, 2, vec![two, s, s, T::zero()])
    }
}

impl<T: Scalar> MechanicalModel<T> for TwoLink<T> {
    fn dof(&self) -> usize {
        2
    }

    fn mass_matrix(&self, q: &[T]) -> Matrix<T> {
        let [c1, c2, c3, _, _] = self.params.constants;
        let cos2 = q[1].cos();
        let off = c2 + c3 * cos2;
        Matrix::from_row_major(2, 2, vec![c1 + c2 + (c3 + c3) * cos2, off, off, c2])
    }

    fn mass_matrix_partial(&self, q: &[T], i: usize) -> Matrix<T> {
        match i {
            0 => Matrix::zeros(2, 2),
            1 => Self::elbow_pattern(-self.params.constants[2] * q[1].sin()),
            _ => panic!("joint index {i} out of range"),
        }
    }

    fn mass_matrix_second_partial(&self, q: &[T], i: usize, j: usize) -> Matrix<T> {
        match (i, j) {
            (1, 1) => Self::elbow_pattern(-self.params.constants[2] * q[1].cos()),
            (a, b) if a < 2 && b < 2 => Matrix::zeros(2, 2),
            _ => panic!("joint index ({i}, {j}) out of range"),
        }
    }

    fn potential(&self, q: &[T]) -> T {
        let [_, _, _, c4, c5] = self.params.constants;
        let g = self.params.g;
        c4 * g * q[0].cos() + c5 * g * (q[0] + q[1]).cos()
    }

    fn potential_gradient(&self, q: &[T]) -> Vec<T> {
        let [_, _, _, c4, c5] = self.params.constants;
        let g = self.params.g;
        let s12 = c5 * g * (q[0] + q[1]).sin();
        vec![-c4 * g * q[0].sin() - s12, -s12]
    }

    fn potential_hessian(&self, q: &[T]) -> Matrix<T> {
        let [_, _, _, c4, c5] = self.params.constants;
        let g = self.params.g;
        let c12 = c5 * g * (q[0] + q[1]).cos();
        Matrix::from_row_major(2, 2, vec![-c4 * g * q[0].cos() - c12, -c12, -c12, -c12])
    }

    fn name(&self) -> &str {
        "two-link"
    }
}
