//! Controller specification and the stateful controller used in a sampled loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controllers::laws::{
    control_computed_torque, control_general_hamiltonian, control_lagrangian, control_pd_gravity,
    control_potential_shaping, ComputedTorqueGains, PdGains,
};
use crate::controllers::stage::{
    solve_stage_hamiltonian, solve_stage_hamiltonian_position_only, solve_stage_lagrangian,
    ControllerState, Stage,
};
use crate::dynamics::{
    build_ida_pbc_target, ComputedTorqueTarget, InertiaShape, MechanicalModel, QuadraticPotential,
    ShapedPotential, StructureMatrix, TargetDynamics, TargetKind, TrajectoryReference,
};
use crate::error::{ControlError, ModelError};
use crate::integrators::{NewtonConfig, StepReport};
use crate::linalg::vec;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    PotentialShaping,
    GeneralHamiltonian,
    LagrangianGeneral,
    PdGravity,
    ComputedTorque,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Symplectic,
    QuasiContinuous,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    FullState,
    #[default]
    PositionOnly,
}

/// Velocity estimate used by quasi-continuous laws under position-only
/// feedback.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVelocity {
    /// Use the measured velocity even in position-only mode.
    #[default]
    Measured,
    /// Backward difference `(q_k − q_{k−1})/h`.
    BackwardDifference,
}

/// What the controller is asked to achieve.
#[derive(Clone)]
pub enum ControlDesign<T: Scalar> {
    /// `M_d = M`, shaped potential, no damping.
    PotentialShaping {
        potential: Arc<dyn ShapedPotential<T>>,
    },
    GeneralHamiltonian {
        target: Arc<dyn TargetDynamics<T>>,
    },
    LagrangianGeneral {
        target: Arc<dyn TargetDynamics<T>>,
    },
    PdGravity(PdGains<T>),
    ComputedTorque {
        gains: ComputedTorqueGains<T>,
        reference: Arc<dyn TrajectoryReference<T>>,
    },
}

impl<T: Scalar> ControlDesign<T> {
    pub fn law(&self) -> Law {
        match self {
            ControlDesign::PotentialShaping { .. } => Law::PotentialShaping,
            ControlDesign::GeneralHamiltonian { .. } => Law::GeneralHamiltonian,
            ControlDesign::LagrangianGeneral { .. } => Law::LagrangianGeneral,
            ControlDesign::PdGravity(_) => Law::PdGravity,
            ControlDesign::ComputedTorque { .. } => Law::ComputedTorque,
        }
    }
}

#[derive(Clone)]
pub struct ControllerSpec<T: Scalar> {
    pub design: ControlDesign<T>,
    pub mode: Mode,
    pub feedback: Feedback,
    pub baseline_velocity: BaselineVelocity,
    /// Velocity assumed at the first sample when it is not measured
    /// (zero when absent).
    pub initial_velocity: Option<Vec<T>>,
}

impl<T: Scalar> ControllerSpec<T> {
    pub fn new(design: ControlDesign<T>, mode: Mode, feedback: Feedback) -> Self {
        Self {
            design,
            mode,
            feedback,
            baseline_velocity: BaselineVelocity::default(),
            initial_velocity: None,
        }
    }

    pub fn law(&self) -> Law {
        self.design.law()
    }

    pub fn with_initial_velocity(mut self, v0: Vec<T>) -> Self {
        self.initial_velocity = Some(v0);
        self
    }

    pub fn with_baseline_velocity(mut self, b: BaselineVelocity) -> Self {
        self.baseline_velocity = b;
        self
    }
}

/// One controller evaluation. For symplectic laws `q_half`/`rate_half` are
/// the stage values; for quasi-continuous laws they repeat the sample values.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput<T> {
    pub u: Vec<T>,
    pub q_half: Vec<T>,
    /// `p½` in the Hamiltonian frame, `v½` in the Lagrangian frame.
    pub rate_half: Vec<T>,
    /// Measured or reconstructed `p_k` / `v_k` that entered the law.
    pub rate_k: Vec<T>,
    pub report: StepReport,
}

enum Frame<T: Scalar> {
    Hamiltonian(Arc<dyn TargetDynamics<T>>),
    Lagrangian(Arc<dyn TargetDynamics<T>>),
}

/// Discrete controller with its inter-sample memory.
pub struct Controller<T: Scalar> {
    model: Arc<dyn MechanicalModel<T>>,
    spec: ControllerSpec<T>,
    frame: Frame<T>,
    state: ControllerState<T>,
    newton: NewtonConfig<T>,
    h: T,
    initial_velocity: Vec<T>,
}

impl<T: Scalar> Controller<T> {
    pub fn new(
        model: Arc<dyn MechanicalModel<T>>,
        spec: ControllerSpec<T>,
        h: T,
        newton: NewtonConfig<T>,
    ) -> Result<Self, ControlError> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(ControlError::InvalidDesign(format!(
                "sampling time must be positive, got {h}"
            )));
        }
        newton.validate().map_err(ControlError::InvalidDesign)?;
        let n = model.dof();
        let frame = build_frame(&model, &spec.design)?;
        let initial_velocity = match &spec.initial_velocity {
            Some(v) if v.len() == n => v.clone(),
            Some(v) => {
                return Err(ModelError::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                }
                .into())
            }
            None => vec![T::zero(); n],
        };
        Ok(Self {
            model,
            spec,
            frame,
            state: ControllerState::new(None),
            newton,
            h,
            initial_velocity,
        })
    }

    pub fn spec(&self) -> &ControllerSpec<T> {
        &self.spec
    }

    pub fn state(&self) -> &ControllerState<T> {
        &self.state
    }

    pub fn sampling_time(&self) -> T {
        self.h
    }

    /// Target dynamics the symplectic law discretizes.
    pub fn target(&self) -> &Arc<dyn TargetDynamics<T>> {
        match &self.frame {
            Frame::Hamiltonian(t) | Frame::Lagrangian(t) => t,
        }
    }

    pub fn target_kind(&self) -> TargetKind {
        match &self.frame {
            Frame::Hamiltonian(_) => TargetKind::HamiltonianBd,
            Frame::Lagrangian(_) => TargetKind::LagrangianFd,
        }
    }

    /// Forgets all inter-sample memory.
    pub fn reset(&mut self) {
        self.state = ControllerState::new(None);
    }

    /// Computes `u_k` from the sample at `t_k`. `p_k` is the measured
    /// momentum, required with full-state feedback and ignored otherwise
    /// (except by quasi-continuous laws set to use measured velocity).
    pub fn step(
        &mut self,
        t_k: T,
        q_k: &[T],
        p_k: Option<&[T]>,
    ) -> Result<ControlOutput<T>, ControlError> {
        let n = self.model.dof();
        if q_k.len() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                got: q_k.len(),
            }
            .into());
        }
        let out = match self.spec.mode {
            Mode::Symplectic => self.step_symplectic(t_k, q_k, p_k)?,
            Mode::QuasiContinuous => self.step_quasi(t_k, q_k, p_k)?,
        };
        if !vec::is_finite(&out.u) {
            return Err(ControlError::StageSolve {
                t: t_k.to_f64_lossy(),
                report: out.report,
            });
        }
        Ok(out)
    }

    fn measured(&self, p_k: Option<&[T]>) -> Result<Vec<T>, ControlError> {
        match p_k {
            Some(p) if p.len() == self.model.dof() => Ok(p.to_vec()),
            Some(p) => Err(ModelError::DimensionMismatch {
                expected: self.model.dof(),
                got: p.len(),
            }
            .into()),
            None => Err(ControlError::MissingMeasurement),
        }
    }

    fn step_symplectic(
        &mut self,
        t_k: T,
        q_k: &[T],
        p_k: Option<&[T]>,
    ) -> Result<ControlOutput<T>, ControlError> {
        let model = self.model.as_ref();
        let h = self.h;
        let t_half = t_k + h * T::c(0.5);
        let full = self.spec.feedback == Feedback::FullState;
        let stage: Stage<T> = match &self.frame {
            Frame::Hamiltonian(target) => {
                if full {
                    let p = self.measured(p_k)?;
                    let guess = if self.state.first_step {
                        None
                    } else {
                        Some((
                            self.state.q_half_prev.as_slice(),
                            self.state.rate_half_prev.as_slice(),
                        ))
                    };
                    let s = solve_stage_hamiltonian(
                        model,
                        target.as_ref(),
                        q_k,
                        &p,
                        t_k,
                        h,
                        &self.newton,
                        guess,
                    )?;
                    self.state.q_half_prev = s.q_half.clone();
                    self.state.rate_half_prev = s.rate_half.clone();
                    self.state.first_step = false;
                    s
                } else {
                    if self.state.first_step {
                        let p0 = model.mass_matrix(q_k).mul_vec(&self.initial_velocity);
                        self.state.v0_or_p0 = Some(p0);
                    }
                    solve_stage_hamiltonian_position_only(
                        model,
                        target.as_ref(),
                        q_k,
                        &mut self.state,
                        t_k,
                        h,
                        &self.newton,
                    )?
                }
            }
            Frame::Lagrangian(target) => {
                let v = if full {
                    let p = self.measured(p_k)?;
                    Some(model.mass_matrix(q_k).solve(&p).map_err(ModelError::from)?)
                } else {
                    if self.state.first_step {
                        self.state.v0_or_p0 = Some(self.initial_velocity.clone());
                    }
                    None
                };
                solve_stage_lagrangian(
                    model,
                    target.as_ref(),
                    q_k,
                    v.as_deref(),
                    &mut self.state,
                    t_k,
                    h,
                    &self.newton,
                )?
            }
        };

        let (q, x) = (&stage.q_half, &stage.rate_half);
        let u = match &self.spec.design {
            ControlDesign::PotentialShaping { potential } => {
                control_potential_shaping(model, potential.as_ref(), q)
            }
            ControlDesign::PdGravity(gains) => {
                // v½ = M(q½)⁻¹ p½ = 2(q½ − q_k)/h by the first stage equation
                let v = model.mass_matrix(q).solve(x).map_err(ModelError::from)?;
                control_pd_gravity(model, gains, q, &v)
            }
            ControlDesign::ComputedTorque { gains, reference } => {
                control_computed_torque(model, gains, reference.as_ref(), q, x, t_half)?
            }
            ControlDesign::GeneralHamiltonian { target } => {
                control_general_hamiltonian(model, target.as_ref(), q, x, t_half)?
            }
            ControlDesign::LagrangianGeneral { target } => {
                control_lagrangian(model, target.as_ref(), q, x, t_half)?
            }
        };
        Ok(ControlOutput {
            u,
            q_half: stage.q_half,
            rate_half: stage.rate_half,
            rate_k: stage.rate_k,
            report: stage.report,
        })
    }

    fn step_quasi(
        &mut self,
        t_k: T,
        q_k: &[T],
        p_k: Option<&[T]>,
    ) -> Result<ControlOutput<T>, ControlError> {
        let model = self.model.as_ref();
        let mass = model.mass_matrix(q_k);
        let estimate = self.spec.feedback == Feedback::PositionOnly
            && self.spec.baseline_velocity == BaselineVelocity::BackwardDifference;
        let v_k = if estimate {
            if self.state.first_step {
                self.initial_velocity.clone()
            } else {
                vec::scale(&vec::sub(q_k, &self.state.q_prev_sample), T::one() / self.h)
            }
        } else {
            let p = self.measured(p_k)?;
            mass.solve(&p).map_err(ModelError::from)?
        };
        self.state.q_prev_sample = q_k.to_vec();
        self.state.first_step = false;

        let (u, rate_k) = match &self.spec.design {
            ControlDesign::PotentialShaping { potential } => (
                control_potential_shaping(model, potential.as_ref(), q_k),
                mass.mul_vec(&v_k),
            ),
            ControlDesign::PdGravity(gains) => (control_pd_gravity(model, gains, q_k, &v_k), v_k),
            ControlDesign::ComputedTorque { gains, reference } => (
                control_computed_torque(model, gains, reference.as_ref(), q_k, &v_k, t_k)?,
                v_k,
            ),
            ControlDesign::GeneralHamiltonian { target } => {
                let p = mass.mul_vec(&v_k);
                (
                    control_general_hamiltonian(model, target.as_ref(), q_k, &p, t_k)?,
                    p,
                )
            }
            ControlDesign::LagrangianGeneral { target } => (
                control_lagrangian(model, target.as_ref(), q_k, &v_k, t_k)?,
                v_k,
            ),
        };
        let report = StepReport {
            iterations: 0,
            final_residual: 0.0,
            converged: true,
        };
        Ok(ControlOutput {
            u,
            q_half: q_k.to_vec(),
            rate_half: rate_k.clone(),
            rate_k,
            report,
        })
    }
}

fn build_frame<T: Scalar>(
    model: &Arc<dyn MechanicalModel<T>>,
    design: &ControlDesign<T>,
) -> Result<Frame<T>, ControlError> {
    let n = model.dof();
    let check =
        |target: &Arc<dyn TargetDynamics<T>>, kind: TargetKind| -> Result<(), ControlError> {
            if target.kind() != kind {
                return Err(ControlError::InvalidDesign(format!(
                    "law needs a {kind:?} target, got {:?}",
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
        };
    Ok(match design {
        ControlDesign::PotentialShaping { potential } => {
            Frame::Hamiltonian(Arc::new(build_ida_pbc_target(
                model.clone(),
                InertiaShape::Plant,
                potential.clone(),
                StructureMatrix::Zero,
                StructureMatrix::Zero,
            )?))
        }
        ControlDesign::GeneralHamiltonian { target } => {
            check(target, TargetKind::HamiltonianBd)?;
            Frame::Hamiltonian(target.clone())
        }
        ControlDesign::LagrangianGeneral { target } => {
            check(target, TargetKind::LagrangianFd)?;
            Frame::Lagrangian(target.clone())
        }
        ControlDesign::PdGravity(gains) => {
            if gains.setpoint.len() != n {
                return Err(ModelError::DimensionMismatch {
                    expected: n,
                    got: gains.setpoint.len(),
                }
                .into());
            }
            Frame::Hamiltonian(Arc::new(pd_target(model.clone(), gains)?))
        }
        ControlDesign::ComputedTorque { gains, reference } => {
            if gains.inertia.rows() != n {
                return Err(ModelError::DimensionMismatch {
                    expected: n,
                    got: gains.inertia.rows(),
                }
                .into());
            }
            Frame::Lagrangian(Arc::new(ComputedTorqueTarget {
                inertia: gains.inertia.clone(),
                stiffness: gains.stiffness.clone(),
                damping: gains.damping.clone(),
                reference: reference.clone(),
            }))
        }
    })
}

/// Hamiltonian PD target: `M_d = M`, `V_d = ½ (q − q_d)ᵀ K (q − q_d)`,
/// damping `R2 = D`.
pub fn pd_target<T: Scalar>(
    model: Arc<dyn MechanicalModel<T>>,
    gains: &PdGains<T>,
) -> Result<crate::dynamics::IdaPbcTarget<T>, ModelError> {
    build_ida_pbc_target(
        model,
        InertiaShape::Plant,
        Arc::new(QuadraticPotential::new(
            gains.stiffness.clone(),
            gains.setpoint.clone(),
        )),
        StructureMatrix::Zero,
        StructureMatrix::Constant(gains.damping.clone()),
    )
}
