//! Empirical convergence orders from errors on a halving sequence of
//! sampling times.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controllers::{Feedback, Mode};
use crate::dynamics::{HamiltonianState, MechanicalModel, TargetDynamics};
use crate::error::{IntegrationError, SimError};
use crate::integrators::{midpoint_sampling_step, NewtonConfig, PlantPropagator, PlantTolerances};
use crate::linalg::vec;
use crate::models::{two_link_model, TwoLinkParams};

use super::experiments::{
    two_link_pd_gains, two_link_pd_loop, two_link_pd_start, two_link_pd_target,
};
use super::sampled::run_sampled_loop;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub label: String,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log₂(e_i / e_{i+1})`, one fewer than `h`.
    pub orders: Vec<f64>,
}

impl ConvergenceResult {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.orders.iter().all(|&p| p >= lo && p <= hi)
    }
}

/// `log₂` of successive error ratios.
pub fn empirical_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Checks that `h_list` has at least three entries, each half the previous.
pub fn validate_halving(h_list: &[f64]) -> Result<(), SimError> {
    if h_list.len() < 3 {
        return Err(SimError::Config(format!(
            "need at least 3 h values, got {}",
            h_list.len()
        )));
    }
    if h_list.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
        return Err(SimError::Config("h values must be positive".into()));
    }
    for w in h_list.windows(2) {
        if (w[1] - 0.5 * w[0]).abs() > 1e-9 * w[0] {
            return Err(SimError::Config(format!(
                "h values must halve: {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Evaluates `error_at(h)` on every `h` of a halving sequence.
pub fn convergence_study(
    label: impl Into<String>,
    h_list: &[f64],
    mut error_at: impl FnMut(f64) -> Result<f64, SimError>,
) -> Result<ConvergenceResult, SimError> {
    validate_halving(h_list)?;
    let errors = h_list
        .iter()
        .map(|&h| error_at(h))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ConvergenceResult {
        label: label.into(),
        h: h_list.to_vec(),
        orders: empirical_orders(&errors),
        errors,
    })
}

/// Built-in studies on the two-link arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceCase {
    /// Largest one-step implicit-midpoint error of the plant with held input.
    MidpointLocal,
    /// Implicit midpoint over the horizon with held input.
    MidpointGlobal,
    /// Symplectic PD closed loop against the continuous target.
    SymplecticPd,
    /// Quasi-continuous PD closed loop against the continuous target.
    QuasiPd,
}

impl ConvergenceCase {
    pub const ALL: [ConvergenceCase; 4] = [
        ConvergenceCase::MidpointLocal,
        ConvergenceCase::MidpointGlobal,
        ConvergenceCase::SymplecticPd,
        ConvergenceCase::QuasiPd,
    ];

    /// Acceptance band for the empirical order.
    pub fn band(self) -> (f64, f64) {
        match self {
            ConvergenceCase::MidpointLocal => (2.8, 3.2),
            ConvergenceCase::MidpointGlobal | ConvergenceCase::SymplecticPd => (1.8, 2.2),
            ConvergenceCase::QuasiPd => (0.8, 1.2),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ConvergenceCase::MidpointLocal => "midpoint_local",
            ConvergenceCase::MidpointGlobal => "midpoint_global",
            ConvergenceCase::SymplecticPd => "symplectic_pd",
            ConvergenceCase::QuasiPd => "quasi_pd",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSettings {
    pub h_list: Vec<f64>,
    /// Horizon of the global midpoint study.
    pub midpoint_horizon: f64,
    /// Window over which the largest one-step error is taken.
    pub local_window: f64,
    /// Horizon of the closed-loop studies.
    pub loop_horizon: f64,
    /// Initial state of the midpoint studies.
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    /// Input held over the whole midpoint study.
    pub held_input: Vec<f64>,
    pub feedback: Feedback,
    pub reference_tol: PlantTolerances<f64>,
    pub newton: NewtonConfig<f64>,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            h_list: vec![0.02, 0.01, 0.005],
            midpoint_horizon: 1.0,
            local_window: 0.2,
            loop_horizon: 2.0,
            q0: vec![2.8, 0.3],
            p0: vec![0.01, -0.002],
            held_input: vec![0.05, -0.02],
            feedback: Feedback::FullState,
            reference_tol: PlantTolerances::new(1e-10, 1e-12),
            newton: NewtonConfig {
                abs_tol: 1e-13,
                ..NewtonConfig::default()
            },
        }
    }
}

/// Continuous target solution at the given times, starting at `times[0]`.
pub fn continuous_target_samples(
    model: &dyn MechanicalModel<f64>,
    target: &dyn TargetDynamics<f64>,
    initial: &HamiltonianState<f64>,
    times: &[f64],
    tol: PlantTolerances<f64>,
) -> Result<Vec<HamiltonianState<f64>>, SimError> {
    let n = model.dof();
    let mut prop = PlantPropagator::new(tol);
    let rhs = |y: &[f64], t: f64| -> Result<Vec<f64>, IntegrationError> {
        let (q, p) = y.split_at(n);
        let dq = model.mass_matrix(q).solve(p)?;
        let dp = target.rhs(q, p, t).map_err(IntegrationError::Model)?;
        Ok(vec::stack(&dq, &dp))
    };
    let mut out = Vec::with_capacity(times.len());
    let mut y = initial.to_vector();
    let mut t = initial.t;
    for &ti in times {
        if ti > t {
            y = prop.advance_ode(&rhs, &y, t, ti - t)?;
            t = ti;
        }
        out.push(HamiltonianState::from_vector(&y, t));
    }
    Ok(out)
}

/// Error of one built-in case at sampling time `h`.
pub fn case_error(case: ConvergenceCase, h: f64, s: &ConvergenceSettings) -> Result<f64, SimError> {
    let params = TwoLinkParams::<f64>::benchmark();
    match case {
        ConvergenceCase::MidpointLocal | ConvergenceCase::MidpointGlobal => {
            let model = two_link_model(params);
            if s.q0.len() != 2 || s.p0.len() != 2 || s.held_input.len() != 2 {
                return Err(SimError::Config(
                    "q0, p0 and held_input must have 2 entries".into(),
                ));
            }
            let x0 = vec::stack(&s.q0, &s.p0);
            if case == ConvergenceCase::MidpointLocal {
                // largest one-step defect along the exact solution over the window
                let steps = super::sampled::validate_grid(h, s.local_window.max(h))?;
                let mut exact = PlantPropagator::new(s.reference_tol);
                let mut state = HamiltonianState::from_vector(&x0, 0.0);
                let mut worst: f64 = 0.0;
                for _ in 0..steps {
                    let stepped =
                        midpoint_sampling_step(&model, &state, &s.held_input, h, &s.newton)?
                            .to_vector();
                    state = exact.advance(&model, &state, &s.held_input, h)?;
                    worst = worst.max(vec::norm_inf(&vec::sub(&stepped, &state.to_vector())));
                }
                return Ok(worst);
            }
            let steps = super::sampled::validate_grid(h, s.midpoint_horizon)?;
            let start = HamiltonianState::from_vector(&x0, 0.0);
            let mut x = start.clone();
            for _ in 0..steps {
                x = midpoint_sampling_step(&model, &x, &s.held_input, h, &s.newton)?;
            }
            let exact = PlantPropagator::new(s.reference_tol).advance(
                &model,
                &start,
                &s.held_input,
                steps as f64 * h,
            )?;
            Ok(vec::norm_inf(&vec::sub(&x.to_vector(), &exact.to_vector())))
        }
        ConvergenceCase::SymplecticPd | ConvergenceCase::QuasiPd => {
            let mode = if case == ConvergenceCase::SymplecticPd {
                Mode::Symplectic
            } else {
                Mode::QuasiContinuous
            };
            let gains = two_link_pd_gains();
            let mut cfg = two_link_pd_loop(
                params,
                gains.clone(),
                two_link_pd_start(),
                h,
                s.loop_horizon,
                mode,
                s.feedback,
            )?;
            cfg.plant_tol = s.reference_tol;
            cfg.newton = s.newton;
            let trace = run_sampled_loop(&cfg)?;
            if let Some(f) = &trace.failure {
                return Err(SimError::Config(format!(
                    "closed loop failed at k = {}: {}",
                    f.k, f.message
                )));
            }
            let (model, target): (Arc<dyn MechanicalModel<f64>>, _) =
                two_link_pd_target(params, &gains)?;
            let exact = continuous_target_samples(
                model.as_ref(),
                &target,
                &two_link_pd_start(),
                &trace.t,
                s.reference_tol,
            )?;
            Ok(trace
                .q
                .iter()
                .zip(&exact)
                .map(|(q, e)| vec::norm_inf(&vec::sub(q, &e.q)))
                .fold(0.0, f64::max))
        }
    }
}

/// Runs one built-in case over `s.h_list`.
pub fn run_case(
    case: ConvergenceCase,
    s: &ConvergenceSettings,
) -> Result<ConvergenceResult, SimError> {
    convergence_study(case.label(), &s.h_list, |h| case_error(case, h, s))
}
