//! Largest assignable stiffness under the tube criterion, quasi-continuous
//! against symplectic, at equal input energy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{Feedback, Mode};
use crate::error::SimError;
use crate::integrators::{NewtonConfig, PlantTolerances};
use crate::models::MassSpringParams;

use super::experiments::{
    mass_spring_loop, MASS_SPRING_DAMPING, MASS_SPRING_HORIZON, MASS_SPRING_Q0,
};
use super::metrics::{discrete_l2_norm, tube_rate};
use super::sampled::run_sampled_loop_until;

/// Environment variable capping the number of sweep worker threads.
pub const THREADS_ENV: &str = "SIMCTL_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub h_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub mass: f64,
    pub spring: f64,
    /// Injected damping `d`.
    pub damping: f64,
    pub q0: f64,
    pub horizon: f64,
    /// Tube decay rate; `0.1 d/m` when absent.
    pub alpha: Option<f64>,
    pub feedback: Feedback,
    pub newton: NewtonConfig<f64>,
    pub plant_tol: PlantTolerances<f64>,
    /// Worker threads; all available when absent.
    pub threads: Option<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            h_grid: uniform_grid(0.02, 0.2, 0.02),
            c_grid: uniform_grid(0.05, 20.0, 0.05),
            mass: 1.0,
            spring: 0.5,
            damping: MASS_SPRING_DAMPING,
            q0: MASS_SPRING_Q0,
            horizon: MASS_SPRING_HORIZON,
            alpha: None,
            feedback: Feedback::FullState,
            newton: NewtonConfig::default(),
            plant_tol: PlantTolerances::default(),
            threads: None,
        }
    }
}

/// `start, start + step, …` up to and including `stop` (to rounding).
pub fn uniform_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    // snap to 1e-9 so grid values print cleanly
    (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

/// Reads [`THREADS_ENV`]; unset, empty or zero means no cap.
pub fn threads_from_env() -> Result<Option<usize>, SimError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) if s.trim().is_empty() => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(SimError::Config(format!(
                "{THREADS_ENV} must be a nonnegative integer, got {s:?}"
            ))),
        },
    }
}

/// Outcome of one `(h, c, mode)` run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub h: f64,
    pub c: f64,
    pub mode: Mode,
    pub passed: bool,
    /// `‖u_k‖_h`, only meaningful when the run passed.
    pub u_norm: f64,
    pub q_norm: f64,
}

/// One row per sampling time. `None` marks "no stiffness on the grid
/// passed" (below the grid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: f64,
    pub c_max_qc: Option<f64>,
    pub c_max_symp: Option<f64>,
    /// Input energy bound `E = ‖u_k‖_h` of the quasi-continuous loop at its
    /// `c_max`.
    pub u_norm: Option<f64>,
    pub u_norm_symp: Option<f64>,
    pub q_norm_qc: Option<f64>,
    pub q_norm_symp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub settings: SweepSettings,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn row(&self, h: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| (r.h - h).abs() <= 1e-12 * h.max(1.0))
    }
}

fn validate(s: &SweepSettings) -> Result<(), SimError> {
    if s.h_grid.is_empty() {
        return Err(SimError::Config("h grid is empty".into()));
    }
    if s.c_grid.is_empty() {
        return Err(SimError::Config("c grid is empty".into()));
    }
    if s.h_grid.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
        return Err(SimError::Config("h grid entries must be positive".into()));
    }
    if s.c_grid.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(SimError::Config(
            "c grid entries must be nonnegative".into(),
        ));
    }
    if !(s.damping >= 0.0) || !(s.q0 != 0.0) || !s.q0.is_finite() {
        return Err(SimError::Config(
            "damping must be nonnegative and q0 nonzero".into(),
        ));
    }
    if s.threads == Some(0) {
        return Err(SimError::Config("threads must be positive".into()));
    }
    MassSpringParams::new(s.mass, s.spring)?;
    Ok(())
}

fn run_cell(
    s: &SweepSettings,
    h: f64,
    c: f64,
    mode: Mode,
    alpha: f64,
) -> Result<SweepCell, SimError> {
    let params = MassSpringParams::new(s.mass, s.spring)?;
    let mut cfg = mass_spring_loop(params, c, s.damping, s.q0, h, s.horizon, mode, s.feedback)?;
    cfg.newton = s.newton;
    cfg.plant_tol = s.plant_tol;
    let bound = 1.1 * s.q0.abs();
    let mut inside = true;
    // stop as soon as the reweighted output leaves the tube
    let trace = run_sampled_loop_until(&cfg, |tr| {
        let k = tr.len() - 1;
        let w = (alpha * k as f64 * h).exp() * tr.q[k][0];
        inside = w.is_finite() && w.abs() < bound;
        inside
    })?;
    let passed = inside && trace.completed();
    let (u_norm, q_norm) = if passed {
        (discrete_l2_norm(&trace.u, h), discrete_l2_norm(&trace.q, h))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SweepCell {
        h,
        c,
        mode,
        passed,
        u_norm,
        q_norm,
    })
}

fn summarize(h: f64, cells: &[SweepCell]) -> SweepRow {
    let best = |mode: Mode, energy: Option<f64>| {
        cells
            .iter()
            .filter(|x| x.mode == mode && x.passed && energy.is_none_or(|e| x.u_norm <= e))
            .max_by(|a, b| a.c.total_cmp(&b.c))
    };
    let qc = best(Mode::QuasiContinuous, None);
    let energy = qc.map(|x| x.u_norm);
    let symp = best(Mode::Symplectic, energy);
    SweepRow {
        h,
        c_max_qc: qc.map(|x| x.c),
        c_max_symp: symp.map(|x| x.c),
        u_norm: energy,
        u_norm_symp: symp.map(|x| x.u_norm),
        q_norm_qc: qc.map(|x| x.q_norm),
        q_norm_symp: symp.map(|x| x.q_norm),
    }
}

/// For every `h`: `c_max_qc` is the largest grid stiffness whose
/// quasi-continuous loop stays in the tube, `E` its input norm, and
/// `c_max_symp` the largest stiffness whose symplectic loop stays in the tube
/// with `‖u_k‖_h ≤ E`. Without a passing quasi-continuous stiffness the
/// symplectic search is unconstrained. A failed stage solve fails the cell.
/// Cells run in parallel; results do not depend on the thread count.
pub fn sweep_max_stiffness(settings: &SweepSettings) -> Result<SweepResult, SimError> {
    validate(settings)?;
    let alpha = settings
        .alpha
        .unwrap_or_else(|| tube_rate(settings.damping, settings.mass));
    let jobs: Vec<(f64, f64, Mode)> = settings
        .h_grid
        .iter()
        .flat_map(|&h| {
            settings
                .c_grid
                .iter()
                .flat_map(move |&c| [(h, c, Mode::QuasiContinuous), (h, c, Mode::Symplectic)])
        })
        .collect();
    let work = || -> Result<Vec<SweepCell>, SimError> {
        jobs.par_iter()
            .map(|&(h, c, mode)| run_cell(settings, h, c, mode, alpha))
            .collect()
    };
    let cells = match settings.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SimError::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let rows = settings
        .h_grid
        .iter()
        .map(|&h| {
            let mine: Vec<SweepCell> = cells.iter().filter(|x| x.h == h).copied().collect();
            summarize(h, &mine)
        })
        .collect();
    Ok(SweepResult {
        settings: settings.clone(),
        rows,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(c: f64, mode: Mode, passed: bool, u: f64) -> SweepCell {
        SweepCell {
            h: 0.1,
            c,
            mode,
            passed,
            u_norm: u,
            q_norm: 1.0,
        }
    }

    #[test]
    fn grid_includes_endpoint() {
        let g = uniform_grid(0.05, 1.0, 0.05);
        assert_eq!(g.len(), 20);
        assert!((g[19] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_applies_energy_bound() {
        let cells = [
            cell(1.0, Mode::QuasiContinuous, true, 2.0),
            cell(2.0, Mode::QuasiContinuous, false, f64::NAN),
            cell(1.0, Mode::Symplectic, true, 1.5),
            cell(2.0, Mode::Symplectic, true, 1.9),
            cell(3.0, Mode::Symplectic, true, 2.1),
        ];
        let row = summarize(0.1, &cells);
        assert_eq!(row.c_max_qc, Some(1.0));
        assert_eq!(row.u_norm, Some(2.0));
        assert_eq!(row.c_max_symp, Some(2.0));
    }

    #[test]
    fn nothing_passing_is_below_grid() {
        let cells = [
            cell(1.0, Mode::QuasiContinuous, false, f64::NAN),
            cell(1.0, Mode::Symplectic, false, f64::NAN),
        ];
        let row = summarize(0.1, &cells);
        assert_eq!((row.c_max_qc, row.c_max_symp), (None, None));
    }

    #[test]
    fn empty_grids_are_rejected() {
        let s = SweepSettings {
            h_grid: vec![],
            ..SweepSettings::default()
        };
        assert!(matches!(sweep_max_stiffness(&s), Err(SimError::Config(_))));
        let s = SweepSettings {
            c_grid: vec![],
            ..SweepSettings::default()
        };
        assert!(matches!(sweep_max_stiffness(&s), Err(SimError::Config(_))));
    }
}
