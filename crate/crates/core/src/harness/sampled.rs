//! Sampled-data loop: continuous plant, sampler, discrete controller and
//! zero-order hold.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::controllers::{BaselineVelocity, Controller, ControllerSpec, Feedback, Law, Mode};
use crate::dynamics::{
    legendre_to_hamiltonian, HamiltonianState, LagrangianState, MechanicalModel, TargetDynamics,
    TargetKind,
};
use crate::error::{IntegrationError, SimError};
use crate::integrators::{
    implicit_midpoint_stage, midpoint_sampling_step, NewtonConfig, PlantPropagator, PlantTolerances,
};
use crate::linalg::{vec, Matrix};
use crate::scalar::Scalar;

/// Initial plant state in either coordinate set.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialState<T> {
    Hamiltonian(HamiltonianState<T>),
    Lagrangian(LagrangianState<T>),
}

impl<T: Scalar> InitialState<T> {
    pub fn to_hamiltonian<M: MechanicalModel<T> + ?Sized>(&self, model: &M) -> HamiltonianState<T> {
        match self {
            InitialState::Hamiltonian(s) => s.clone(),
            InitialState::Lagrangian(s) => legendre_to_hamiltonian(model, s),
        }
    }
}

impl<T> From<HamiltonianState<T>> for InitialState<T> {
    fn from(s: HamiltonianState<T>) -> Self {
        InitialState::Hamiltonian(s)
    }
}

impl<T> From<LagrangianState<T>> for InitialState<T> {
    fn from(s: LagrangianState<T>) -> Self {
        InitialState::Lagrangian(s)
    }
}

/// What stands in for the real system between samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// Continuous dynamics under zero-order hold, adaptive integration.
    #[default]
    Continuous,
    /// The implicit-midpoint sampling model itself; isolates the controller
    /// from the sampling-model mismatch.
    SamplingModel,
}

#[derive(Clone)]
pub struct LoopConfig<T: Scalar> {
    pub h: T,
    /// Horizon `T`.
    pub horizon: T,
    pub model: Arc<dyn MechanicalModel<T>>,
    pub controller: ControllerSpec<T>,
    pub initial: InitialState<T>,
    pub newton: NewtonConfig<T>,
    pub plant_tol: PlantTolerances<T>,
    pub plant: PlantKind,
}

impl<T: Scalar> LoopConfig<T> {
    pub fn new(
        model: Arc<dyn MechanicalModel<T>>,
        controller: ControllerSpec<T>,
        initial: impl Into<InitialState<T>>,
        h: T,
        horizon: T,
    ) -> Self {
        Self {
            h,
            horizon,
            model,
            controller,
            initial: initial.into(),
            newton: NewtonConfig::default(),
            plant_tol: PlantTolerances::default(),
            plant: PlantKind::default(),
        }
    }

    /// Number of sampling intervals `N = round(T/h)`.
    pub fn steps(&self) -> Result<usize, SimError> {
        validate_grid(self.h, self.horizon)
    }

    pub fn validate(&self) -> Result<usize, SimError> {
        let n = validate_grid(self.h, self.horizon)?;
        self.newton.validate().map_err(SimError::Config)?;
        if !(self.plant_tol.rtol > T::zero()) || !(self.plant_tol.atol > T::zero()) {
            return Err(SimError::Config("plant tolerances must be positive".into()));
        }
        let dof = self.model.dof();
        let (q, x) = match &self.initial {
            InitialState::Hamiltonian(s) => (&s.q, &s.p),
            InitialState::Lagrangian(s) => (&s.q, &s.v),
        };
        if q.len() != dof || x.len() != dof {
            return Err(SimError::Config(format!(
                "initial state must have {dof} coordinates"
            )));
        }
        Ok(n)
    }

    fn summary(&self) -> LoopSummary {
        let s = self.initial.to_hamiltonian(self.model.as_ref());
        LoopSummary {
            model: self.model.name().to_string(),
            law: self.controller.law(),
            mode: self.controller.mode,
            feedback: self.controller.feedback,
            baseline_velocity: self.controller.baseline_velocity,
            h: self.h.to_f64_lossy(),
            horizon: self.horizon.to_f64_lossy(),
            q0: vec::to_f64(&s.q),
            p0: vec::to_f64(&s.p),
            t0: s.t.to_f64_lossy(),
            newton_abs_tol: self.newton.abs_tol.to_f64_lossy(),
            newton_max_iter: self.newton.max_iter,
            plant_rtol: self.plant_tol.rtol.to_f64_lossy(),
            plant_atol: self.plant_tol.atol.to_f64_lossy(),
            plant: self.plant,
        }
    }
}

pub(crate) fn validate_grid<T: Scalar>(h: T, horizon: T) -> Result<usize, SimError> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(SimError::Config(format!("h must be positive, got {h}")));
    }
    if !(horizon >= h) || !horizon.is_finite() {
        return Err(SimError::Config(format!(
            "T must be at least h, got T = {horizon}, h = {h}"
        )));
    }
    let ratio = (horizon / h).round();
    if ratio.to_f64_lossy() >= 2f64.powi(31) {
        return Err(SimError::Config("T/h exceeds 2^31 steps".into()));
    }
    Ok(ratio.to_f64_lossy() as usize)
}

/// Loop settings echoed into trace metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub model: String,
    pub law: Law,
    pub mode: Mode,
    pub feedback: Feedback,
    pub baseline_velocity: BaselineVelocity,
    pub h: f64,
    pub horizon: f64,
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    pub t0: f64,
    pub newton_abs_tol: f64,
    pub newton_max_iter: usize,
    pub plant_rtol: f64,
    pub plant_atol: f64,
    #[serde(default)]
    pub plant: PlantKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    /// What produced the trace: `"closed_loop"` or `"target_map"`.
    pub source: String,
    pub summary: Option<LoopSummary>,
    /// Frame of the stage columns (`p½` or `v½`).
    pub frame: Option<TargetKind>,
    pub config_hash: String,
}

/// Controller failure that truncated a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub k: usize,
    pub t: f64,
    pub message: String,
}

/// Per-sample record of a run. Row `k` holds the plant state at `t_k`, the
/// input held over `[t_k, t_{k+1})` and the stage values behind it.
#[derive(Clone, Debug)]
pub struct SimulationTrace<T> {
    pub t: Vec<T>,
    pub q: Vec<Vec<T>>,
    pub p: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
    pub q_half: Vec<Vec<T>>,
    pub rate_half: Vec<Vec<T>>,
    pub newton_iters: Vec<usize>,
    pub residual: Vec<f64>,
    /// Wall time of each controller evaluation [s]; not part of equality
    /// checks between runs.
    pub solve_seconds: Vec<f64>,
    pub metadata: TraceMetadata,
    pub failure: Option<FailureRecord>,
}

impl<T: Scalar> SimulationTrace<T> {
    fn with_capacity(n: usize, metadata: TraceMetadata) -> Self {
        Self {
            t: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            q_half: Vec::with_capacity(n),
            rate_half: Vec::with_capacity(n),
            newton_iters: Vec::with_capacity(n),
            residual: Vec::with_capacity(n),
            solve_seconds: Vec::with_capacity(n),
            metadata,
            failure: None,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    /// Coordinate `i` of every position sample.
    pub fn position(&self, i: usize) -> Vec<T> {
        self.q.iter().map(|q| q[i]).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_solve_seconds(&self) -> f64 {
        if self.solve_seconds.is_empty() {
            0.0
        } else {
            self.solve_seconds.iter().sum::<f64>() / self.solve_seconds.len() as f64
        }
    }

    /// True when every numeric column matches `other` bit for bit.
    pub fn same_numbers(&self, other: &Self) -> bool {
        self.t == other.t
            && self.q == other.q
            && self.p == other.p
            && self.u == other.u
            && self.q_half == other.q_half
            && self.rate_half == other.rate_half
            && self.newton_iters == other.newton_iters
            && self.residual == other.residual
    }
}

fn hash_summary(summary: &LoopSummary) -> String {
    let mut hasher = DefaultHasher::new();
    serde_json::to_string(summary)
        .unwrap_or_default()
        .hash(&mut hasher);
    format!("{:016x}", hasher.finish())
}

/// Runs the sampled closed loop for `N = round(T/h)` intervals.
///
/// At every `t_k` the controller sees `q_k` (and `p_k` only under full-state
/// feedback or a measured-velocity baseline), computes `u_k`, and the plant
/// is advanced to `t_{k+1}` with `u_k` held. The input at the final sample
/// `t_N` is computed as well so norms can include both endpoints. A failed
/// stage solve truncates the trace and is recorded; a plant failure is an
/// error.
pub fn run_sampled_loop<T: Scalar>(cfg: &LoopConfig<T>) -> Result<SimulationTrace<T>, SimError> {
    run_sampled_loop_until(cfg, |_| true)
}

/// Same as [`run_sampled_loop`], but `keep_going` is asked after every
/// logged sample and the run stops as soon as it returns false. The trace
/// then simply ends early; no failure is recorded.
pub fn run_sampled_loop_until<T: Scalar>(
    cfg: &LoopConfig<T>,
    mut keep_going: impl FnMut(&SimulationTrace<T>) -> bool,
) -> Result<SimulationTrace<T>, SimError> {
    let steps = cfg.validate()?;
    let summary = cfg.summary();
    let metadata = TraceMetadata {
        source: "closed_loop".into(),
        config_hash: hash_summary(&summary),
        summary: Some(summary),
        frame: None,
    };
    let mut controller =
        Controller::new(cfg.model.clone(), cfg.controller.clone(), cfg.h, cfg.newton)?;
    let mut trace = SimulationTrace::with_capacity(steps + 1, metadata);
    trace.metadata.frame = Some(controller.target_kind());

    let spec = &cfg.controller;
    let sees_momentum = spec.feedback == Feedback::FullState
        || (spec.mode == Mode::QuasiContinuous
            && spec.baseline_velocity == BaselineVelocity::Measured);

    let model = cfg.model.as_ref();
    let mut plant = PlantPropagator::new(cfg.plant_tol);
    let mut state = cfg.initial.to_hamiltonian(model);
    let t0 = state.t;

    for k in 0..=steps {
        let t_k = t0 + T::from_count(k) * cfg.h;
        state.t = t_k;
        let started = Instant::now();
        let out = controller.step(
            t_k,
            &state.q,
            if sees_momentum { Some(&state.p) } else { None },
        );
        let elapsed = started.elapsed().as_secs_f64();
        let out = match out {
            Ok(out) => out,
            Err(e) => {
                trace.failure = Some(FailureRecord {
                    k,
                    t: t_k.to_f64_lossy(),
                    message: e.to_string(),
                });
                break;
            }
        };
        trace.t.push(t_k);
        trace.q.push(state.q.clone());
        trace.p.push(state.p.clone());
        trace.u.push(out.u.clone());
        trace.q_half.push(out.q_half);
        trace.rate_half.push(out.rate_half);
        trace.newton_iters.push(out.report.iterations);
        trace.residual.push(out.report.final_residual);
        trace.solve_seconds.push(elapsed);
        if k == steps || !keep_going(&trace) {
            break;
        }
        let next = match cfg.plant {
            PlantKind::Continuous => plant.advance(model, &state, &out.u, cfg.h)?,
            PlantKind::SamplingModel => {
                midpoint_sampling_step(model, &state, &out.u, cfg.h, &cfg.newton)?
            }
        };
        if !next.is_finite() {
            return Err(IntegrationError::NonFinite {
                t: next.t.to_f64_lossy(),
            }
            .into());
        }
        state = next;
    }
    Ok(trace)
}

/// Iterates the implicit-midpoint discretization of a target system,
/// `q̇ = M⁻¹p, ṗ = b_d` or `q̇ = v, v̇ = f_d`, from `initial` (given in
/// canonical coordinates). The `p` column always holds momenta; stage
/// columns hold the midpoint stage in the target's own frame.
pub fn run_target_reference<T: Scalar>(
    model: &Arc<dyn MechanicalModel<T>>,
    target: &Arc<dyn TargetDynamics<T>>,
    initial: &HamiltonianState<T>,
    h: T,
    horizon: T,
    newton: &NewtonConfig<T>,
) -> Result<SimulationTrace<T>, SimError> {
    let steps = validate_grid(h, horizon)?;
    newton.validate().map_err(SimError::Config)?;
    let n = model.dof();
    if target.dof() != n || initial.q.len() != n || initial.p.len() != n {
        return Err(SimError::Config(format!(
            "target and initial state must have {n} coordinates"
        )));
    }
    let kind = target.kind();
    let metadata = TraceMetadata {
        source: "target_map".into(),
        summary: None,
        frame: Some(kind),
        config_hash: {
            let mut hasher = DefaultHasher::new();
            (
                format!("{kind:?}"),
                h.to_f64_lossy().to_bits(),
                horizon.to_f64_lossy().to_bits(),
            )
                .hash(&mut hasher);
            vec::to_f64(&initial.q)
                .iter()
                .chain(&vec::to_f64(&initial.p))
                .for_each(|x| x.to_bits().hash(&mut hasher));
            format!("{:016x}", hasher.finish())
        },
    };
    let mut trace = SimulationTrace::with_capacity(steps + 1, metadata);

    let m = model.as_ref();
    let tgt = target.as_ref();
    let rhs = |x: &[T], t: T| -> Vec<T> {
        let (q, y) = x.split_at(n);
        let dq = match kind {
            TargetKind::HamiltonianBd => m
                .mass_matrix(q)
                .solve(y)
                .unwrap_or_else(|_| vec![T::nan(); n]),
            TargetKind::LagrangianFd => y.to_vec(),
        };
        let dy = tgt.rhs(q, y, t).unwrap_or_else(|_| vec![T::nan(); n]);
        vec::stack(&dq, &dy)
    };
    let jac = |x: &[T], t: T| -> Matrix<T> {
        let (q, y) = x.split_at(n);
        let mut out = Matrix::zeros(2 * n, 2 * n);
        match kind {
            TargetKind::HamiltonianBd => {
                let mass = m.mass_matrix(q);
                match (mass.lu(), mass.inverse()) {
                    (Ok(lu), Ok(inv)) => {
                        let a = lu.solve(y);
                        for j in 0..n {
                            let col = vec::neg(&lu.solve(&m.mass_matrix_partial(q, j).mul_vec(&a)));
                            for i in 0..n {
                                out[(i, j)] = col[i];
                                out[(i, n + j)] = inv[(i, j)];
                            }
                        }
                    }
                    _ => return out.scale(T::nan()),
                }
            }
            TargetKind::LagrangianFd => {
                for i in 0..n {
                    out[(i, n + i)] = T::one();
                }
            }
        }
        match tgt.jacobian(q, y, t) {
            Some(Ok((d_q, d_y))) => {
                for i in 0..n {
                    for j in 0..n {
                        out[(n + i, j)] = d_q[(i, j)];
                        out[(n + i, n + j)] = d_y[(i, j)];
                    }
                }
                out
            }
            _ => out.scale(T::nan()),
        }
    };

    let mut x = match kind {
        TargetKind::HamiltonianBd => initial.to_vector(),
        TargetKind::LagrangianFd => {
            let v = m
                .mass_matrix(&initial.q)
                .solve(&initial.p)
                .map_err(crate::error::ModelError::from)?;
            vec::stack(&initial.q, &v)
        }
    };
    let analytic = tgt.jacobian(&x[..n], &x[n..], initial.t).is_some();
    let mut guess: Option<Vec<T>> = None;
    for k in 0..=steps {
        let t_k = initial.t + T::from_count(k) * h;
        let (q, y) = x.split_at(n);
        let p = match kind {
            TargetKind::HamiltonianBd => y.to_vec(),
            TargetKind::LagrangianFd => m.mass_matrix(q).mul_vec(y),
        };
        trace.t.push(t_k);
        trace.q.push(q.to_vec());
        trace.p.push(p);
        trace.u.push(vec![T::zero(); n]);
        if k == steps {
            trace.q_half.push(q.to_vec());
            trace.rate_half.push(y.to_vec());
            trace.newton_iters.push(0);
            trace.residual.push(0.0);
            trace.solve_seconds.push(0.0);
            break;
        }
        let started = Instant::now();
        let result = if analytic {
            implicit_midpoint_stage(rhs, Some(&jac), &x, t_k, h, newton, guess.as_deref())
        } else {
            implicit_midpoint_stage(
                rhs,
                None::<fn(&[T], T) -> Matrix<T>>,
                &x,
                t_k,
                h,
                newton,
                guess.as_deref(),
            )
        };
        let (stage, report) = match result {
            Ok(r) => r,
            Err(IntegrationError::NewtonFailed(report)) => {
                trace.q_half.push(q.to_vec());
                trace.rate_half.push(y.to_vec());
                trace.newton_iters.push(report.iterations);
                trace.residual.push(report.final_residual);
                trace.solve_seconds.push(started.elapsed().as_secs_f64());
                return Err(IntegrationError::NewtonFailed(report).into());
            }
            Err(e) => return Err(e.into()),
        };
        trace.q_half.push(stage[..n].to_vec());
        trace.rate_half.push(stage[n..].to_vec());
        trace.newton_iters.push(report.iterations);
        trace.residual.push(report.final_residual);
        trace.solve_seconds.push(started.elapsed().as_secs_f64());
        let next: Vec<T> = stage.iter().zip(&x).map(|(&s, &xi)| s + s - xi).collect();
        if !vec::is_finite(&next) {
            return Err(IntegrationError::NonFinite {
                t: t_k.to_f64_lossy(),
            }
            .into());
        }
        guess = Some(stage);
        x = next;
    }
    Ok(trace)
}
