//! Mechanical system contract, states, energies and target dynamics.
//!
//! A [`MechanicalModel`] describes a fully actuated system
//!
//! ```text
//! q̇ = M(q)⁻¹ p
//! ṗ = −∇_q H(q, p) + u,        H(q, p) = ½ pᵀ M(q)⁻¹ p + V(q)
//! ```
//!
//! or equivalently `M(q) q̈ + C(q, q̇) q̇ + ∇V(q) = u`. Models provide
//! analytic first and second partial derivatives of the mass matrix; every
//! derived quantity (kinetic gradients, Christoffel Coriolis matrix, target
//! Jacobians) is assembled from those here.

use std::sync::Arc;

use crate::error::ModelError;
use crate::linalg::{vec, Matrix};
use crate::scalar::Scalar;

pub trait MechanicalModel<T: Scalar>: Send + Sync {
    /// Degrees of freedom `n`.
    fn dof(&self) -> usize;

    fn mass_matrix(&self, q: &[T]) -> Matrix<T>;

    /// `∂M/∂q_i`.
    fn mass_matrix_partial(&self, q: &[T], i: usize) -> Matrix<T>;

    /// `∂²M/∂q_i∂q_j`.
    fn mass_matrix_second_partial(&self, q: &[T], i: usize, j: usize) -> Matrix<T>;

    fn potential(&self, q: &[T]) -> T;

    fn potential_gradient(&self, q: &[T]) -> Vec<T>;

    fn potential_hessian(&self, q: &[T]) -> Matrix<T>;

    /// Directional derivative `Σ_i dirᵢ ∂M/∂q_i`, i.e. `Ṁ` when `dir = q̇`.
    fn mass_matrix_qderiv(&self, q: &[T], direction: &[T]) -> Matrix<T> {
        let n = self.dof();
        let mut out = Matrix::zeros(n, n);
        for (i, &d) in direction.iter().enumerate() {
            if d != T::zero() {
                out.add_assign_scaled(&self.mass_matrix_partial(q, i), d);
            }
        }
        out
    }

    /// Coriolis matrix from Christoffel symbols of the first kind,
    /// `C_ij = Σ_k ½(∂M_ij/∂q_k + ∂M_ik/∂q_j − ∂M_jk/∂q_i) v_k`.
    fn coriolis(&self, q: &[T], v: &[T]) -> Matrix<T> {
        let partials: Vec<_> = (0..self.dof())
            .map(|i| self.mass_matrix_partial(q, i))
            .collect();
        christoffel_coriolis(&partials, v)
    }

    /// True when `M` does not depend on `q`.
    fn has_constant_mass(&self) -> bool {
        false
    }

    fn name(&self) -> &str {
        "mechanical-model"
    }
}

/// Christoffel-symbol Coriolis matrix from precomputed mass-matrix partials.
pub fn christoffel_coriolis<T: Scalar>(partials: &[Matrix<T>], v: &[T]) -> Matrix<T> {
    let n = partials.len();
    let half = T::c(0.5);
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = T::zero();
            for (k, &vk) in v.iter().enumerate() {
                s += (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)]) * vk;
            }
            c[(i, j)] = half * s;
        }
    }
    c
}

/// `∂(C(q,v) v)/∂q` assembled from second partials of `M`.
pub fn coriolis_force_q_jacobian<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    q: &[T],
    v: &[T],
) -> Matrix<T> {
    let n = model.dof();
    let half = T::c(0.5);
    let second: Vec<Vec<Matrix<T>>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| model.mass_matrix_second_partial(q, a, b))
                .collect()
        })
        .collect();
    let mut jac = Matrix::zeros(n, n);
    for l in 0..n {
        // ∂C_ij/∂q_l = Σ_k ½(M_ij,kl + M_ik,jl − M_jk,il) v_k
        for i in 0..n {
            let mut s = T::zero();
            for j in 0..n {
                for k in 0..n {
                    let dc = second[k][l][(i, j)] + second[j][l][(i, k)] - second[i][l][(j, k)];
                    s += half * dc * v[k] * v[j];
                }
            }
            jac[(i, l)] = s;
        }
    }
    jac
}

/// `∂(C(q,v) v)/∂v`. `C` is linear in `v`, so this is `C(q,v) + [C(q,e_l) v]_l`.
pub fn coriolis_force_v_jacobian<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    q: &[T],
    v: &[T],
) -> Matrix<T> {
    let n = model.dof();
    let partials: Vec<_> = (0..n).map(|i| model.mass_matrix_partial(q, i)).collect();
    let mut jac = christoffel_coriolis(&partials, v);
    let mut e = vec![T::zero(); n];
    for l in 0..n {
        e[l] = T::one();
        let col = christoffel_coriolis(&partials, &e).mul_vec(v);
        e[l] = T::zero();
        for i in 0..n {
            jac[(i, l)] += col[i];
        }
    }
    jac
}

/// Canonical state `(q, p)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianState<T> {
    pub q: Vec<T>,
    pub p: Vec<T>,
    pub t: T,
}

impl<T: Scalar> HamiltonianState<T> {
    pub fn new(q: Vec<T>, p: Vec<T>, t: T) -> Self {
        assert_eq!(q.len(), p.len(), "q and p dimensions differ");
        Self { q, p, t }
    }

    pub fn at_rest(q: Vec<T>, t: T) -> Self {
        let p = vec![T::zero(); q.len()];
        Self { q, p, t }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        vec::is_finite(&self.q) && vec::is_finite(&self.p) && self.t.is_finite()
    }

    /// Stacked `(q, p)`.
    pub fn to_vector(&self) -> Vec<T> {
        vec::stack(&self.q, &self.p)
    }

    pub fn from_vector(x: &[T], t: T) -> Self {
        let n = x.len() / 2;
        Self {
            q: x[..n].to_vec(),
            p: x[n..].to_vec(),
            t,
        }
    }
}

/// Velocity state `(q, v)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianState<T> {
    pub q: Vec<T>,
    pub v: Vec<T>,
    pub t: T,
}

impl<T: Scalar> LagrangianState<T> {
    pub fn new(q: Vec<T>, v: Vec<T>, t: T) -> Self {
        assert_eq!(q.len(), v.len(), "q and v dimensions differ");
        Self { q, v, t }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { expected, got })
    }
}

/// `H(q, p) = ½ pᵀ M(q)⁻¹ p + V(q)`.
pub fn hamiltonian<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    state: &HamiltonianState<T>,
) -> Result<T, ModelError> {
    check_dim(model.dof(), state.q.len())?;
    check_dim(model.dof(), state.p.len())?;
    let a = model.mass_matrix(&state.q).solve(&state.p)?;
    Ok(T::c(0.5) * vec::dot(&state.p, &a) + model.potential(&state.q))
}

/// `∇_q H(q, p)`; the kinetic part is `−½ aᵀ (∂M/∂qᵢ) a` with `a = M⁻¹p`.
pub fn hamiltonian_q_gradient<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    q: &[T],
    p: &[T],
) -> Result<Vec<T>, ModelError> {
    check_dim(model.dof(), q.len())?;
    check_dim(model.dof(), p.len())?;
    let mut grad = model.potential_gradient(q);
    if !model.has_constant_mass() {
        let kin = KineticTerms::plant(model, q, p)?;
        for (g, k) in grad.iter_mut().zip(kin.gradient()) {
            *g += k;
        }
    }
    Ok(grad)
}

/// Open-loop drift `f(q, v) = −M⁻¹(C(q,v) v + ∇V(q))` of the velocity form.
pub fn open_loop_acceleration<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    q: &[T],
    v: &[T],
) -> Result<Vec<T>, ModelError> {
    let force = vec::add(
        &model.coriolis(q, v).mul_vec(v),
        &model.potential_gradient(q),
    );
    Ok(vec::neg(&model.mass_matrix(q).solve(&force)?))
}

/// `p = M(q) v`.
pub fn legendre_to_hamiltonian<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    state: &LagrangianState<T>,
) -> HamiltonianState<T> {
    let p = model.mass_matrix(&state.q).mul_vec(&state.v);
    HamiltonianState {
        q: state.q.clone(),
        p,
        t: state.t,
    }
}

/// `v = M(q)⁻¹ p`.
pub fn legendre_to_lagrangian<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    state: &HamiltonianState<T>,
) -> Result<LagrangianState<T>, ModelError> {
    let v = model.mass_matrix(&state.q).solve(&state.p)?;
    Ok(LagrangianState {
        q: state.q.clone(),
        v,
        t: state.t,
    })
}

/// Configuration-dependent inertia used as a kinetic-energy metric.
pub trait InertiaMap<T: Scalar>: Send + Sync {
    fn matrix(&self, q: &[T]) -> Matrix<T>;
    fn partial(&self, q: &[T], i: usize) -> Matrix<T>;
    fn second_partial(&self, q: &[T], i: usize, j: usize) -> Matrix<T>;
}

/// Choice of the shaped inertia `M_d`.
#[derive(Clone)]
pub enum InertiaShape<T: Scalar> {
    /// `M_d = M`, no kinetic energy shaping.
    Plant,
    Constant(Matrix<T>),
    Custom(Arc<dyn InertiaMap<T>>),
}

/// Evaluated kinetic-energy terms `T(q,p) = ½ pᵀ N(q)⁻¹ p` for some inertia `N`.
pub struct KineticTerms<T: Scalar> {
    pub inertia: Matrix<T>,
    /// `a = N⁻¹ p`
    pub a: Vec<T>,
    pub partials: Vec<Matrix<T>>,
    constant: bool,
}

impl<T: Scalar> KineticTerms<T> {
    pub fn plant<M: MechanicalModel<T> + ?Sized>(
        model: &M,
        q: &[T],
        p: &[T],
    ) -> Result<Self, ModelError> {
        let inertia = model.mass_matrix(q);
        let a = inertia.solve(p)?;
        let constant = model.has_constant_mass();
        let partials = if constant {
            Vec::new()
        } else {
            (0..model.dof())
                .map(|i| model.mass_matrix_partial(q, i))
                .collect()
        };
        Ok(Self {
            inertia,
            a,
            partials,
            constant,
        })
    }

    pub fn shaped<M: MechanicalModel<T> + ?Sized>(
        shape: &InertiaShape<T>,
        model: &M,
        q: &[T],
        p: &[T],
    ) -> Result<Self, ModelError> {
        match shape {
            InertiaShape::Plant => Self::plant(model, q, p),
            InertiaShape::Constant(m) => {
                let a = m.solve(p)?;
                Ok(Self {
                    inertia: m.clone(),
                    a,
                    partials: Vec::new(),
                    constant: true,
                })
            }
            InertiaShape::Custom(map) => {
                let inertia = map.matrix(q);
                let a = inertia.solve(p)?;
                let partials = (0..q.len()).map(|i| map.partial(q, i)).collect();
                Ok(Self {
                    inertia,
                    a,
                    partials,
                    constant: false,
                })
            }
        }
    }

    pub fn energy(&self, p: &[T]) -> T {
        T::c(0.5) * vec::dot(p, &self.a)
    }

    /// `∂T/∂q_i = −½ aᵀ Nᵢ a`
    pub fn gradient(&self) -> Vec<T> {
        let n = self.a.len();
        if self.constant {
            return vec![T::zero(); n];
        }
        self.partials
            .iter()
            .map(|ni| -T::c(0.5) * ni.quad_form(&self.a, &self.a))
            .collect()
    }

    /// `∂²T/∂q_i∂q_j = aᵀ Nᵢ N⁻¹ Nⱼ a − ½ aᵀ Nᵢⱼ a`
    pub fn q_hessian(
        &self,
        second: impl Fn(usize, usize) -> Matrix<T>,
    ) -> Result<Matrix<T>, ModelError> {
        let n = self.a.len();
        let mut h = Matrix::zeros(n, n);
        if self.constant {
            return Ok(h);
        }
        let lu = self.inertia.lu()?;
        let na: Vec<Vec<T>> = self.partials.iter().map(|ni| ni.mul_vec(&self.a)).collect();
        let inv_na: Vec<Vec<T>> = na.iter().map(|x| lu.solve(x)).collect();
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] = vec::dot(&na[i], &inv_na[j])
                    - T::c(0.5) * second(i, j).quad_form(&self.a, &self.a);
            }
        }
        Ok(h)
    }

    /// `∂(∇_q T)/∂p`, row `i` equal to `−(N⁻¹ Nᵢ a)ᵀ`.
    pub fn gradient_p_jacobian(&self) -> Result<Matrix<T>, ModelError> {
        let n = self.a.len();
        let mut jac = Matrix::zeros(n, n);
        if self.constant {
            return Ok(jac);
        }
        let lu = self.inertia.lu()?;
        for i in 0..n {
            let row = lu.solve(&self.partials[i].mul_vec(&self.a));
            for j in 0..n {
                jac[(i, j)] = -row[j];
            }
        }
        Ok(jac)
    }
}

/// Shaped potential energy `V_d`.
pub trait ShapedPotential<T: Scalar>: Send + Sync {
    fn value(&self, q: &[T]) -> T;
    fn gradient(&self, q: &[T]) -> Vec<T>;
    fn hessian(&self, q: &[T]) -> Matrix<T>;
}

/// `V_d(q) = ½ (q − q*)ᵀ K (q − q*) + offset`.
#[derive(Clone, Debug)]
pub struct QuadraticPotential<T: Scalar> {
    pub stiffness: Matrix<T>,
    pub minimum: Vec<T>,
    pub offset: T,
}

impl<T: Scalar> QuadraticPotential<T> {
    pub fn new(stiffness: Matrix<T>, minimum: Vec<T>) -> Self {
        assert_eq!(stiffness.rows(), minimum.len());
        Self {
            stiffness,
            minimum,
            offset: T::zero(),
        }
    }
}

impl<T: Scalar> ShapedPotential<T> for QuadraticPotential<T> {
    fn value(&self, q: &[T]) -> T {
        let e = vec::sub(q, &self.minimum);
        T::c(0.5) * self.stiffness.quad_form(&e, &e) + self.offset
    }

    fn gradient(&self, q: &[T]) -> Vec<T> {
        self.stiffness.mul_vec(&vec::sub(q, &self.minimum))
    }

    fn hessian(&self, _q: &[T]) -> Matrix<T> {
        self.stiffness.clone()
    }
}

/// `V_d = V`: the plant's own potential.
pub struct PlantPotential<T: Scalar>(pub Arc<dyn MechanicalModel<T>>);

impl<T: Scalar> ShapedPotential<T> for PlantPotential<T> {
    fn value(&self, q: &[T]) -> T {
        self.0.potential(q)
    }
    fn gradient(&self, q: &[T]) -> Vec<T> {
        self.0.potential_gradient(q)
    }
    fn hessian(&self, q: &[T]) -> Matrix<T> {
        self.0.potential_hessian(q)
    }
}

type StateMatrixFn<T> = dyn Fn(&[T], &[T]) -> Matrix<T> + Send + Sync;

/// Interconnection (`J2`) or damping (`R2`) matrix of a target structure.
#[derive(Clone)]
pub enum StructureMatrix<T: Scalar> {
    Zero,
    Constant(Matrix<T>),
    StateDependent(Arc<StateMatrixFn<T>>),
}

impl<T: Scalar> StructureMatrix<T> {
    pub fn evaluate(&self, n: usize, q: &[T], p: &[T]) -> Matrix<T> {
        match self {
            StructureMatrix::Zero => Matrix::zeros(n, n),
            StructureMatrix::Constant(m) => m.clone(),
            StructureMatrix::StateDependent(f) => f(q, p),
        }
    }

    fn is_state_dependent(&self) -> bool {
        matches!(self, StructureMatrix::StateDependent(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Momentum right-hand side `b_d(q, p, t)` of `q̇ = M⁻¹p, ṗ = b_d`.
    HamiltonianBd,
    /// Acceleration right-hand side `f_d(q, v, t)` of `q̇ = v, v̇ = f_d`.
    LagrangianFd,
}

/// `(∂rhs/∂q, ∂rhs/∂x)` of a target.
pub type StateJacobians<T> = (Matrix<T>, Matrix<T>);

/// Desired closed-loop second equation.
pub trait TargetDynamics<T: Scalar>: Send + Sync {
    fn kind(&self) -> TargetKind;

    fn dof(&self) -> usize;

    fn time_varying(&self) -> bool;

    /// `b_d(q, p, t)` or `f_d(q, v, t)`.
    fn rhs(&self, q: &[T], x: &[T], t: T) -> Result<Vec<T>, ModelError>;

    /// `(∂rhs/∂q, ∂rhs/∂x)` when available analytically.
    fn jacobian(&self, _q: &[T], _x: &[T], _t: T) -> Option<Result<StateJacobians<T>, ModelError>> {
        None
    }
}

/// IDA-PBC target `b_d = −M_d M⁻¹ ∇_q H_d + (J2 − R2) M_d⁻¹ p` with
/// `H_d = ½ pᵀ M_d⁻¹ p + V_d`.
#[derive(Clone)]
pub struct IdaPbcTarget<T: Scalar> {
    model: Arc<dyn MechanicalModel<T>>,
    inertia: InertiaShape<T>,
    potential: Arc<dyn ShapedPotential<T>>,
    j2: StructureMatrix<T>,
    r2: StructureMatrix<T>,
}

/// Assembles the IDA-PBC momentum target. Constant `J2`/`R2` are checked for
/// skew symmetry / positive semidefiniteness here; state-dependent ones are
/// checked at every evaluation in debug builds.
pub fn build_ida_pbc_target<T: Scalar>(
    model: Arc<dyn MechanicalModel<T>>,
    inertia: InertiaShape<T>,
    potential: Arc<dyn ShapedPotential<T>>,
    j2: StructureMatrix<T>,
    r2: StructureMatrix<T>,
) -> Result<IdaPbcTarget<T>, ModelError> {
    let n = model.dof();
    let tol = T::c(1e-12).max(T::epsilon() * T::c(16.0));
    if let InertiaShape::Constant(m) = &inertia {
        check_dim(n, m.rows())?;
        if !m.is_spd(tol) {
            return Err(ModelError::InvalidParameter {
                name: "M_d",
                reason: "not symmetric positive definite".into(),
            });
        }
    }
    if let StructureMatrix::Constant(j) = &j2 {
        check_dim(n, j.rows())?;
        if !j.is_skew_symmetric(tol) {
            return Err(ModelError::InvalidParameter {
                name: "J2",
                reason: "not skew-symmetric".into(),
            });
        }
    }
    if let StructureMatrix::Constant(r) = &r2 {
        check_dim(n, r.rows())?;
        if !r.is_psd(tol) {
            return Err(ModelError::InvalidParameter {
                name: "R2",
                reason: "not symmetric positive semidefinite".into(),
            });
        }
    }
    Ok(IdaPbcTarget {
        model,
        inertia,
        potential,
        j2,
        r2,
    })
}

impl<T: Scalar> IdaPbcTarget<T> {
    pub fn shaped_hamiltonian(&self, q: &[T], p: &[T]) -> Result<T, ModelError> {
        let kin = KineticTerms::shaped(&self.inertia, self.model.as_ref(), q, p)?;
        Ok(kin.energy(p) + self.potential.value(q))
    }

    pub fn shaped_q_gradient(&self, q: &[T], p: &[T]) -> Result<Vec<T>, ModelError> {
        let kin = KineticTerms::shaped(&self.inertia, self.model.as_ref(), q, p)?;
        Ok(vec::add(&self.potential.gradient(q), &kin.gradient()))
    }

    pub fn potential(&self) -> &Arc<dyn ShapedPotential<T>> {
        &self.potential
    }

    fn structure(&self, q: &[T], p: &[T]) -> Matrix<T> {
        let n = self.model.dof();
        let j2 = self.j2.evaluate(n, q, p);
        let r2 = self.r2.evaluate(n, q, p);
        if cfg!(debug_assertions) && (self.j2.is_state_dependent() || self.r2.is_state_dependent())
        {
            let tol = T::c(1e-9);
            debug_assert!(j2.is_skew_symmetric(tol), "J2 lost skew symmetry");
            debug_assert!(r2.is_psd(tol), "R2 lost positive semidefiniteness");
        }
        j2.sub(&r2)
    }

    fn inertia_second_partial(&self, q: &[T], i: usize, j: usize) -> Matrix<T> {
        match &self.inertia {
            InertiaShape::Plant => self.model.mass_matrix_second_partial(q, i, j),
            InertiaShape::Constant(m) => Matrix::zeros(m.rows(), m.cols()),
            InertiaShape::Custom(map) => map.second_partial(q, i, j),
        }
    }
}

impl<T: Scalar> TargetDynamics<T> for IdaPbcTarget<T> {
    fn kind(&self) -> TargetKind {
        TargetKind::HamiltonianBd
    }

    fn dof(&self) -> usize {
        self.model.dof()
    }

    fn time_varying(&self) -> bool {
        false
    }

    fn rhs(&self, q: &[T], p: &[T], _t: T) -> Result<Vec<T>, ModelError> {
        let kin = KineticTerms::shaped(&self.inertia, self.model.as_ref(), q, p)?;
        let grad_hd = vec::add(&self.potential.gradient(q), &kin.gradient());
        let plant_mass = self.model.mass_matrix(q);
        let conservative = kin.inertia.mul_vec(&plant_mass.solve(&grad_hd)?);
        let gyro_damp = self.structure(q, p).mul_vec(&kin.a);
        Ok(vec::sub(&gyro_damp, &conservative))
    }

    fn jacobian(&self, q: &[T], p: &[T], _t: T) -> Option<Result<StateJacobians<T>, ModelError>> {
        if self.j2.is_state_dependent() || self.r2.is_state_dependent() {
            return None;
        }
        Some(self.analytic_jacobian(q, p))
    }
}

impl<T: Scalar> IdaPbcTarget<T> {
    fn analytic_jacobian(&self, q: &[T], p: &[T]) -> Result<StateJacobians<T>, ModelError> {
        let n = self.model.dof();
        let kin = KineticTerms::shaped(&self.inertia, self.model.as_ref(), q, p)?;
        let grad_hd = vec::add(&self.potential.gradient(q), &kin.gradient());
        let hess_q = self
            .potential
            .hessian(q)
            .add(&kin.q_hessian(|i, j| self.inertia_second_partial(q, i, j))?);
        let grad_p = kin.gradient_p_jacobian()?;
        let plant_lu = self.model.mass_matrix(q).lu()?;
        let shaped_lu = kin.inertia.lu()?;
        let structure = self.structure(q, p);

        // ∂b/∂p = −M_d M⁻¹ ∂(∇_q H_d)/∂p + F M_d⁻¹
        let mut d_p = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col_grad = grad_p.column(j);
            let cons = kin.inertia.mul_vec(&plant_lu.solve(&col_grad));
            let gyro = structure.mul_vec(&shaped_lu.solve(&e));
            d_p.set_column(j, &vec::sub(&gyro, &cons));
            e[j] = T::zero();
        }

        // ∂b/∂q_j = −(N_j M⁻¹ − M_d M⁻¹ M_j M⁻¹) g − M_d M⁻¹ ∂g/∂q_j − F M_d⁻¹ N_j a
        let minv_g = plant_lu.solve(&grad_hd);
        let mut d_q = Matrix::zeros(n, n);
        for j in 0..n {
            let plant_partial = self.model.mass_matrix_partial(q, j);
            let shaped_partial = match &self.inertia {
                InertiaShape::Plant => Some(plant_partial.clone()),
                InertiaShape::Constant(_) => None,
                InertiaShape::Custom(map) => Some(map.partial(q, j)),
            };
            let mut col = vec![T::zero(); n];
            if let Some(nj) = &shaped_partial {
                col = vec::sub(&col, &nj.mul_vec(&minv_g));
            }
            let dm_term = kin
                .inertia
                .mul_vec(&plant_lu.solve(&plant_partial.mul_vec(&minv_g)));
            col = vec::add(&col, &dm_term);
            let hess_col = hess_q.column(j);
            col = vec::sub(&col, &kin.inertia.mul_vec(&plant_lu.solve(&hess_col)));
            if let Some(nj) = &shaped_partial {
                let dinv_p = shaped_lu.solve(&nj.mul_vec(&kin.a));
                col = vec::sub(&col, &structure.mul_vec(&dinv_p));
            }
            d_q.set_column(j, &col);
        }
        Ok((d_q, d_p))
    }
}

type RhsFn<T> = dyn Fn(&[T], &[T], T) -> Vec<T> + Send + Sync;

/// Target given by a plain closure, without an analytic Jacobian.
#[derive(Clone)]
pub struct FnTarget<T: Scalar> {
    kind: TargetKind,
    dof: usize,
    time_varying: bool,
    rhs: Arc<RhsFn<T>>,
}

impl<T: Scalar> FnTarget<T> {
    pub fn new(
        kind: TargetKind,
        dof: usize,
        time_varying: bool,
        rhs: impl Fn(&[T], &[T], T) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind,
            dof,
            time_varying,
            rhs: Arc::new(rhs),
        }
    }
}

impl<T: Scalar> TargetDynamics<T> for FnTarget<T> {
    fn kind(&self) -> TargetKind {
        self.kind
    }
    fn dof(&self) -> usize {
        self.dof
    }
    fn time_varying(&self) -> bool {
        self.time_varying
    }
    fn rhs(&self, q: &[T], x: &[T], t: T) -> Result<Vec<T>, ModelError> {
        // time-invariant targets never see t, so repeated calls are bit-identical
        let t = if self.time_varying { t } else { T::zero() };
        Ok((self.rhs)(q, x, t))
    }
}

/// Lagrangian PD target `M q̈ + (C + D) q̇ + K (q − q_d) = 0`.
#[derive(Clone)]
pub struct PdLagrangianTarget<T: Scalar> {
    pub model: Arc<dyn MechanicalModel<T>>,
    pub stiffness: Matrix<T>,
    pub damping: Matrix<T>,
    pub setpoint: Vec<T>,
}

impl<T: Scalar> PdLagrangianTarget<T> {
    fn generalized_force(&self, q: &[T], v: &[T]) -> Vec<T> {
        let cv = self.model.coriolis(q, v).mul_vec(v);
        let dv = self.damping.mul_vec(v);
        let ke = self.stiffness.mul_vec(&vec::sub(q, &self.setpoint));
        vec::add(&vec::add(&cv, &dv), &ke)
    }
}

impl<T: Scalar> TargetDynamics<T> for PdLagrangianTarget<T> {
    fn kind(&self) -> TargetKind {
        TargetKind::LagrangianFd
    }
    fn dof(&self) -> usize {
        self.model.dof()
    }
    fn time_varying(&self) -> bool {
        false
    }
    fn rhs(&self, q: &[T], v: &[T], _t: T) -> Result<Vec<T>, ModelError> {
        let w = self.generalized_force(q, v);
        Ok(vec::neg(&self.model.mass_matrix(q).solve(&w)?))
    }

    fn jacobian(&self, q: &[T], v: &[T], _t: T) -> Option<Result<StateJacobians<T>, ModelError>> {
        Some((|| {
            let n = self.model.dof();
            let lu = self.model.mass_matrix(q).lu()?;
            let w = self.generalized_force(q, v);
            let minv_w = lu.solve(&w);
            let dcv_dq = coriolis_force_q_jacobian(self.model.as_ref(), q, v);
            let dcv_dv = coriolis_force_v_jacobian(self.model.as_ref(), q, v);
            let mut d_q = Matrix::zeros(n, n);
            let mut d_v = Matrix::zeros(n, n);
            for l in 0..n {
                let ml = self.model.mass_matrix_partial(q, l);
                let first = lu.solve(&ml.mul_vec(&minv_w));
                let dw = vec::add(&dcv_dq.column(l), &self.stiffness.column(l));
                d_q.set_column(l, &vec::sub(&first, &lu.solve(&dw)));
                let dwv = vec::add(&dcv_dv.column(l), &self.damping.column(l));
                d_v.set_column(l, &vec::neg(&lu.solve(&dwv)));
            }
            Ok((d_q, d_v))
        })())
    }
}

/// Desired joint trajectory sample `(q_d, q̇_d, q̈_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSample<T> {
    pub q: Vec<T>,
    pub qd: Vec<T>,
    pub qdd: Vec<T>,
}

pub trait TrajectoryReference<T: Scalar>: Send + Sync {
    fn sample(&self, t: T) -> Result<ReferenceSample<T>, ModelError>;
}

/// Constant set point.
#[derive(Clone, Debug)]
pub struct SetPoint<T>(pub Vec<T>);

impl<T: Scalar> TrajectoryReference<T> for SetPoint<T> {
    fn sample(&self, _t: T) -> Result<ReferenceSample<T>, ModelError> {
        let z = vec![T::zero(); self.0.len()];
        Ok(ReferenceSample {
            q: self.0.clone(),
            qd: z.clone(),
            qdd: z,
        })
    }
}

/// Computed-torque error dynamics `M_d ë + D ė + K e = 0` written as
/// `f_d = q̈_d + M_d⁻¹(−K e − D ė)`.
#[derive(Clone)]
pub struct ComputedTorqueTarget<T: Scalar> {
    pub inertia: Matrix<T>,
    pub stiffness: Matrix<T>,
    pub damping: Matrix<T>,
    pub reference: Arc<dyn TrajectoryReference<T>>,
}

impl<T: Scalar> TargetDynamics<T> for ComputedTorqueTarget<T> {
    fn kind(&self) -> TargetKind {
        TargetKind::LagrangianFd
    }
    fn dof(&self) -> usize {
        self.inertia.rows()
    }
    fn time_varying(&self) -> bool {
        true
    }
    fn rhs(&self, q: &[T], v: &[T], t: T) -> Result<Vec<T>, ModelError> {
        let r = self.reference.sample(t)?;
        let e = vec::sub(q, &r.q);
        let ed = vec::sub(v, &r.qd);
        let force = vec::neg(&vec::add(
            &self.stiffness.mul_vec(&e),
            &self.damping.mul_vec(&ed),
        ));
        Ok(vec::add(&r.qdd, &self.inertia.solve(&force)?))
    }

    fn jacobian(&self, _q: &[T], _v: &[T], _t: T) -> Option<Result<StateJacobians<T>, ModelError>> {
        Some((|| {
            let inv = self.inertia.inverse()?;
            Ok((
                inv.mul_mat(&self.stiffness).scale(-T::one()),
                inv.mul_mat(&self.damping).scale(-T::one()),
            ))
        })())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{two_link_model, CircleReference, Elbow, TwoLinkParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arm() -> Arc<dyn MechanicalModel<f64>> {
        Arc::new(two_link_model(TwoLinkParams::benchmark()))
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    // central differences of a vector map, column j = ∂f/∂x_j
    fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Matrix<f64> {
        let eps = 1e-6;
        let r = f(x).len();
        let mut jac = Matrix::zeros(r, x.len());
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += eps;
            xm[j] -= eps;
            let (fp, fm) = (f(&xp), f(&xm));
            for i in 0..r {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * eps);
            }
        }
        jac
    }

    fn assert_close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        let diff = a.sub(b).max_abs();
        assert!(
            diff <= tol * (1.0 + b.max_abs()),
            "difference {diff:e}\n{a:?}\n{b:?}"
        );
    }

    #[test]
    fn coriolis_skew_property() {
        let model = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let q = random_vec(&mut rng, 2, 3.0);
            let v = random_vec(&mut rng, 2, 2.0);
            let z = random_vec(&mut rng, 2, 1.0);
            let n = model
                .mass_matrix_qderiv(&q, &v)
                .sub(&model.coriolis(&q, &v).scale(2.0));
            assert!(n.quad_form(&z, &z).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_energy_differences() {
        let model = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = random_vec(&mut rng, 2, 3.0);
            let p = random_vec(&mut rng, 2, 0.1);
            let grad = hamiltonian_q_gradient(model.as_ref(), &q, &p).unwrap();
            let fd = fd_jacobian(
                |x| {
                    vec![hamiltonian(
                        model.as_ref(),
                        &HamiltonianState::new(x.to_vec(), p.clone(), 0.0),
                    )
                    .unwrap()]
                },
                &q,
            );
            for i in 0..2 {
                assert!((grad[i] - fd[(0, i)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn legendre_roundtrip() {
        let model = arm();
        let s = LagrangianState::new(vec![0.3, -1.2], vec![0.5, 2.0], 1.0);
        let back =
            legendre_to_lagrangian(model.as_ref(), &legendre_to_hamiltonian(model.as_ref(), &s))
                .unwrap();
        for i in 0..2 {
            assert!((back.v[i] - s.v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn coriolis_force_jacobians() {
        let model = arm();
        let (q, v) = (vec![0.4, 1.1], vec![-0.7, 0.3]);
        let cv = |q: &[f64], v: &[f64]| model.coriolis(q, v).mul_vec(v);
        assert_close(
            &coriolis_force_q_jacobian(model.as_ref(), &q, &v),
            &fd_jacobian(|x| cv(x, &v), &q),
            1e-8,
        );
        assert_close(
            &coriolis_force_v_jacobian(model.as_ref(), &q, &v),
            &fd_jacobian(|x| cv(&q, x), &v),
            1e-8,
        );
    }

    fn check_target_jacobian(target: &dyn TargetDynamics<f64>, q: &[f64], x: &[f64], t: f64) {
        let (d_q, d_x) = target
            .jacobian(q, x, t)
            .expect("analytic jacobian")
            .unwrap();
        assert_close(
            &d_q,
            &fd_jacobian(|y| target.rhs(y, x, t).unwrap(), q),
            1e-7,
        );
        assert_close(
            &d_x,
            &fd_jacobian(|y| target.rhs(q, y, t).unwrap(), x),
            1e-7,
        );
    }

    #[test]
    fn ida_pbc_jacobian_with_plant_inertia() {
        let target = build_ida_pbc_target(
            arm(),
            InertiaShape::Plant,
            Arc::new(QuadraticPotential::new(
                Matrix::from_diagonal(&[0.1, 0.2]),
                vec![0.1, -0.2],
            )),
            StructureMatrix::Constant(Matrix::from_rows(&[&[0.0, 0.05], &[-0.05, 0.0]])),
            StructureMatrix::Constant(Matrix::from_diagonal(&[0.1, 0.1])),
        )
        .unwrap();
        check_target_jacobian(&target, &[0.7, -0.4], &[0.02, -0.01], 0.0);
        check_target_jacobian(&target, &[3.0, 1.0], &[-0.05, 0.03], 0.0);
    }

    #[test]
    fn ida_pbc_jacobian_with_constant_inertia() {
        let target = build_ida_pbc_target(
            arm(),
            InertiaShape::Constant(Matrix::from_rows(&[&[0.2, 0.01], &[0.01, 0.05]])),
            Arc::new(PlantPotential(arm())),
            StructureMatrix::Zero,
            StructureMatrix::Constant(Matrix::from_diagonal(&[0.3, 0.0])),
        )
        .unwrap();
        check_target_jacobian(&target, &[0.7, -0.4], &[0.02, -0.01], 0.0);
    }

    #[test]
    fn lagrangian_target_jacobians() {
        let pd = PdLagrangianTarget {
            model: arm(),
            stiffness: Matrix::from_diagonal(&[0.1, 0.1]),
            damping: Matrix::from_diagonal(&[0.1, 0.1]),
            setpoint: vec![0.0, 0.0],
        };
        check_target_jacobian(&pd, &[2.0, -0.5], &[0.3, 1.0], 0.0);
        let ct = ComputedTorqueTarget {
            inertia: Matrix::from_diagonal(&[0.1, 0.013]),
            stiffness: Matrix::from_diagonal(&[0.3, 0.03]),
            damping: Matrix::from_diagonal(&[0.3, 0.03]),
            reference: Arc::new(CircleReference::new(0.2, 0.2, 0.1, Elbow::Down).unwrap()),
        };
        check_target_jacobian(&ct, &[0.5, -1.0], &[0.1, 0.2], 3.0);
    }

    #[test]
    fn rejects_invalid_structure() {
        let potential: Arc<dyn ShapedPotential<f64>> = Arc::new(PlantPotential(arm()));
        let bad_inertia = InertiaShape::Constant(Matrix::from_diagonal(&[1.0, -1.0]));
        assert!(build_ida_pbc_target(
            arm(),
            bad_inertia,
            potential.clone(),
            StructureMatrix::Zero,
            StructureMatrix::Zero
        )
        .is_err());
        let not_skew = StructureMatrix::Constant(Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert!(build_ida_pbc_target(
            arm(),
            InertiaShape::Plant,
            potential.clone(),
            not_skew,
            StructureMatrix::Zero
        )
        .is_err());
        let not_psd = StructureMatrix::Constant(Matrix::from_diagonal(&[0.1, -0.1]));
        assert!(build_ida_pbc_target(
            arm(),
            InertiaShape::Plant,
            potential,
            StructureMatrix::Zero,
            not_psd
        )
        .is_err());
    }

    #[test]
    fn hanging_arm_energy() {
        let model = arm();
        // (c4 + c5) g = 0.554 · 9.81
        let h = hamiltonian(
            model.as_ref(),
            &HamiltonianState::at_rest(vec![0.0, 0.0], 0.0),
        )
        .unwrap();
        assert!((h - 5.43474).abs() < 1e-12);
    }
}
