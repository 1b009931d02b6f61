//! JSON experiment configuration. Every key is optional; missing keys take
//! the benchmark defaults below, and command-line flags override the file.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sympctl::controllers::{BaselineVelocity, Feedback, Mode};
use sympctl::harness::experiments::{
    tracking_horizon, CIRCLE_OMEGA, MASS_SPRING_DAMPING, MASS_SPRING_HORIZON, MASS_SPRING_Q0,
    PD_HORIZON,
};
use sympctl::harness::{uniform_grid, ConvergenceCase, ConvergenceSettings, SweepSettings};
use sympctl::integrators::{NewtonConfig, PlantTolerances};
use sympctl::models::Elbow;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    MassSpringImpedance,
    #[default]
    TwoLinkPd,
    TwoLinkComputedTorque,
    Sweep,
    Convergence,
    Custom,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeSel {
    Symplectic,
    Quasi,
    #[default]
    Both,
}

impl ModeSel {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeSel::Symplectic => vec![Mode::Symplectic],
            ModeSel::Quasi => vec![Mode::QuasiContinuous],
            ModeSel::Both => vec![Mode::Symplectic, Mode::QuasiContinuous],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSel {
    #[default]
    Position,
    Full,
}

impl From<FeedbackSel> for Feedback {
    fn from(f: FeedbackSel) -> Self {
        match f {
            FeedbackSel::Position => Feedback::PositionOnly,
            FeedbackSel::Full => Feedback::FullState,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSection {
    /// Residual ∞-norm at which a stage solve counts as converged.
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Backtracking shrink factor.
    pub damping: f64,
    pub max_halvings: usize,
}

impl Default for NewtonSection {
    fn default() -> Self {
        let d = NewtonConfig::<f64>::default();
        Self {
            abs_tol: d.abs_tol,
            max_iter: d.max_iter,
            damping: d.damping,
            max_halvings: d.max_halvings,
        }
    }
}

impl NewtonSection {
    pub fn to_config(&self) -> NewtonConfig<f64> {
        NewtonConfig {
            abs_tol: self.abs_tol,
            max_iter: self.max_iter,
            damping: self.damping,
            max_halvings: self.max_halvings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    /// Relative tolerance of the adaptive plant integrator (1e-6).
    pub rtol: f64,
    pub atol: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let d = PlantTolerances::<f64>::default();
        Self {
            rtol: d.rtol,
            atol: d.atol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassSpringSection {
    /// Mass [kg].
    pub m: f64,
    /// Physical spring [N/m].
    pub k: f64,
    /// Assigned stiffness [N/m].
    pub c: f64,
    /// Injected damping [Ns/m].
    pub d: f64,
    /// Initial displacement [m], released from rest.
    pub q0: f64,
}

impl Default for MassSpringSection {
    fn default() -> Self {
        Self {
            m: 1.0,
            k: 0.5,
            c: 2.0,
            d: MASS_SPRING_DAMPING,
            q0: MASS_SPRING_Q0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdSection {
    /// Diagonal of the stiffness K [N/rad].
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    /// Diagonal of the damping D [Ns/rad].
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    pub setpoint: Vec<f64>,
    /// Initial joint angles, at rest; hanging down by default.
    pub q0: Vec<f64>,
}

impl Default for PdSection {
    fn default() -> Self {
        Self {
            k: vec![0.1, 0.1],
            d: vec![0.1, 0.1],
            setpoint: vec![0.0, 0.0],
            q0: vec![PI, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSection {
    /// Diagonal of the error-dynamics inertia M_d [kgm²].
    #[serde(rename = "M_d")]
    pub m_d: Vec<f64>,
    /// Diagonal of K [N/rad].
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    /// Diagonal of D [Ns/rad].
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    /// Angular rate of the circle [rad/s].
    pub omega: f64,
    pub elbow: Elbow,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self {
            m_d: vec![0.1, 0.013],
            k: vec![0.3, 0.03],
            d: vec![0.3, 0.03],
            omega: CIRCLE_OMEGA,
            elbow: Elbow::Down,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub h_grid: Vec<f64>,
    pub c_start: f64,
    pub c_stop: f64,
    pub c_step: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub feedback: FeedbackSel,
    /// Worker threads; `SIMCTL_THREADS` takes precedence.
    pub threads: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            h_grid: uniform_grid(0.02, 0.2, 0.02),
            c_start: 0.05,
            c_stop: 20.0,
            c_step: 0.05,
            horizon: MASS_SPRING_HORIZON,
            feedback: FeedbackSel::Full,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub h_list: Vec<f64>,
    pub cases: Vec<ConvergenceCase>,
    pub midpoint_horizon: f64,
    pub local_window: f64,
    pub loop_horizon: f64,
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    pub held_input: Vec<f64>,
    pub feedback: FeedbackSel,
    /// Tolerances of the reference solutions.
    pub reference_rtol: f64,
    pub reference_atol: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        let d = ConvergenceSettings::default();
        Self {
            h_list: d.h_list,
            cases: ConvergenceCase::ALL.to_vec(),
            midpoint_horizon: d.midpoint_horizon,
            local_window: d.local_window,
            loop_horizon: d.loop_horizon,
            q0: d.q0,
            p0: d.p0,
            held_input: d.held_input,
            feedback: FeedbackSel::Full,
            reference_rtol: d.reference_tol.rtol,
            reference_atol: d.reference_tol.atol,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomModel {
    MassSpring,
    #[default]
    TwoLink,
}

/// General energy-shaping target `M_d` (constant or plant), quadratic `V_d`
/// and constant damping, on either benchmark plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomSection {
    pub model: CustomModel,
    /// Row-major `V_d` stiffness.
    pub stiffness: Vec<Vec<f64>>,
    pub minimum: Vec<f64>,
    /// Row-major `R2`.
    pub damping: Vec<Vec<f64>>,
    /// Row-major constant `M_d`; the plant inertia when absent.
    pub inertia: Option<Vec<Vec<f64>>>,
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
}

impl Default for CustomSection {
    fn default() -> Self {
        Self {
            model: CustomModel::TwoLink,
            stiffness: vec![vec![0.1, 0.0], vec![0.0, 0.1]],
            minimum: vec![0.0, 0.0],
            damping: vec![vec![0.1, 0.0], vec![0.0, 0.1]],
            inertia: None,
            q0: vec![0.5, -0.3],
            p0: vec![0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub mode: ModeSel,
    pub feedback: FeedbackSel,
    /// Sampling time [s]; per-experiment default when absent.
    pub h: Option<f64>,
    /// Horizon [s]; per-experiment default when absent.
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub out: PathBuf,
    pub baseline_velocity: BaselineVelocity,
    pub newton: NewtonSection,
    pub plant_tol: PlantSection,
    pub mass_spring: MassSpringSection,
    pub pd: PdSection,
    pub tracking: TrackingSection,
    pub sweep: SweepSection,
    pub convergence: ConvergenceSection,
    pub custom: CustomSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::default(),
            mode: ModeSel::default(),
            feedback: FeedbackSel::default(),
            h: None,
            horizon: None,
            out: PathBuf::from("out"),
            baseline_velocity: BaselineVelocity::default(),
            newton: NewtonSection::default(),
            plant_tol: PlantSection::default(),
            mass_spring: MassSpringSection::default(),
            pd: PdSection::default(),
            tracking: TrackingSection::default(),
            sweep: SweepSection::default(),
            convergence: ConvergenceSection::default(),
            custom: CustomSection::default(),
        }
    }
}

/// A configuration problem, reported with exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn positive(name: &str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ConfigError(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

fn len2(name: &str, v: &[f64]) -> Result<(), ConfigError> {
    if v.len() == 2 && v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ConfigError(format!(
            "{name} must have 2 finite entries, got {v:?}"
        )))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    /// Sampling time of single runs.
    pub fn sampling_time(&self) -> f64 {
        self.h.unwrap_or(match self.experiment {
            Experiment::MassSpringImpedance => 0.1,
            Experiment::TwoLinkComputedTorque => 0.04,
            _ => 0.02,
        })
    }

    pub fn run_horizon(&self) -> f64 {
        self.horizon.unwrap_or(match self.experiment {
            Experiment::MassSpringImpedance => MASS_SPRING_HORIZON,
            Experiment::TwoLinkComputedTorque => tracking_horizon(self.tracking.omega),
            _ => PD_HORIZON,
        })
    }

    /// Checks everything the selected experiment uses.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(h) = self.h {
            positive("h", h)?;
        }
        if let Some(t) = self.horizon {
            positive("T", t)?;
        }
        positive("newton.abs_tol", self.newton.abs_tol)?;
        positive("plant_tol.rtol", self.plant_tol.rtol)?;
        positive("plant_tol.atol", self.plant_tol.atol)?;
        match self.experiment {
            Experiment::MassSpringImpedance => {
                let m = &self.mass_spring;
                positive("mass_spring.m", m.m)?;
                if !(m.c >= 0.0) || !(m.d >= 0.0) || !(m.k >= 0.0) {
                    return Err(ConfigError(
                        "mass_spring.k, c and d must be nonnegative".into(),
                    ));
                }
            }
            Experiment::TwoLinkPd => {
                len2("pd.K", &self.pd.k)?;
                len2("pd.D", &self.pd.d)?;
                len2("pd.setpoint", &self.pd.setpoint)?;
                len2("pd.q0", &self.pd.q0)?;
            }
            Experiment::TwoLinkComputedTorque => {
                len2("tracking.M_d", &self.tracking.m_d)?;
                len2("tracking.K", &self.tracking.k)?;
                len2("tracking.D", &self.tracking.d)?;
                positive("tracking.omega", self.tracking.omega)?;
            }
            Experiment::Sweep => {
                let s = &self.sweep;
                if s.h_grid.is_empty() && self.h.is_none() {
                    return Err(ConfigError("sweep.h_grid is empty".into()));
                }
                for &h in &s.h_grid {
                    positive("sweep.h_grid entry", h)?;
                }
                positive("sweep.c_step", s.c_step)?;
                positive("sweep.T", s.horizon)?;
                if !(s.c_start >= 0.0) || !(s.c_stop >= s.c_start) {
                    return Err(ConfigError(
                        "sweep c range must satisfy 0 <= c_start <= c_stop".into(),
                    ));
                }
            }
            Experiment::Convergence => {
                if self.convergence.cases.is_empty() {
                    return Err(ConfigError("convergence.cases is empty".into()));
                }
                sympctl::harness::validate_halving(&self.convergence_h_list())
                    .map_err(|e| ConfigError(format!("convergence.h_list: {e}")))?;
            }
            Experiment::Custom => {
                let c = &self.custom;
                let n = match c.model {
                    CustomModel::MassSpring => 1,
                    CustomModel::TwoLink => 2,
                };
                let square = |name: &str, m: &[Vec<f64>]| {
                    if m.len() == n && m.iter().all(|r| r.len() == n) {
                        Ok(())
                    } else {
                        Err(ConfigError(format!("custom.{name} must be {n}x{n}")))
                    }
                };
                square("stiffness", &c.stiffness)?;
                square("damping", &c.damping)?;
                if let Some(m) = &c.inertia {
                    square("inertia", m)?;
                }
                for (name, v) in [("minimum", &c.minimum), ("q0", &c.q0), ("p0", &c.p0)] {
                    if v.len() != n {
                        return Err(ConfigError(format!("custom.{name} must have {n} entries")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn newton_config(&self) -> NewtonConfig<f64> {
        self.newton.to_config()
    }

    pub fn plant_tolerances(&self) -> PlantTolerances<f64> {
        PlantTolerances::new(self.plant_tol.rtol, self.plant_tol.atol)
    }

    /// `--h` on a convergence study starts the halving sequence there.
    pub fn convergence_h_list(&self) -> Vec<f64> {
        match self.h {
            Some(h) => vec![h, h / 2.0, h / 4.0],
            None => self.convergence.h_list.clone(),
        }
    }

    pub fn sweep_settings(&self, threads: Option<usize>) -> SweepSettings {
        let s = &self.sweep;
        SweepSettings {
            h_grid: self.h.map_or_else(|| s.h_grid.clone(), |h| vec![h]),
            c_grid: uniform_grid(s.c_start, s.c_stop, s.c_step),
            mass: self.mass_spring.m,
            spring: self.mass_spring.k,
            damping: self.mass_spring.d,
            q0: self.mass_spring.q0,
            horizon: self.horizon.unwrap_or(s.horizon),
            alpha: None,
            feedback: s.feedback.into(),
            newton: self.newton_config(),
            plant_tol: self.plant_tolerances(),
            threads: threads.or(s.threads),
        }
    }

    pub fn convergence_settings(&self) -> ConvergenceSettings {
        let c = &self.convergence;
        ConvergenceSettings {
            h_list: self.convergence_h_list(),
            midpoint_horizon: c.midpoint_horizon,
            local_window: c.local_window,
            loop_horizon: self.horizon.unwrap_or(c.loop_horizon),
            q0: c.q0.clone(),
            p0: c.p0.clone(),
            held_input: c.held_input.clone(),
            feedback: c.feedback.into(),
            reference_tol: PlantTolerances::new(c.reference_rtol, c.reference_atol),
            newton: NewtonConfig {
                abs_tol: self.newton.abs_tol.min(1e-13),
                ..self.newton_config()
            },
        }
    }
}
