use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};
use sympctl::controllers::{
    pd_target, ComputedTorqueGains, ControlDesign, ControllerSpec, Feedback, Mode, PdGains,
};
use sympctl::dynamics::{
    build_ida_pbc_target, ComputedTorqueTarget, HamiltonianState, InertiaShape, MechanicalModel,
    QuadraticPotential, StructureMatrix, TargetDynamics,
};
use sympctl::error::{ControlError, ModelError, SimError};
use sympctl::harness::experiments::{
    mass_spring_loop, mass_spring_target, tracking_errors, two_link_pd_loop, two_link_tracking_loop,
};
use sympctl::harness::{
    discrete_l2_norm, git_revision, max_deviation, run_case, run_sampled_loop,
    run_target_reference, sweep_max_stiffness, threads_from_env, write_convergence_csv,
    write_sweep_csv, write_tcp_csv, write_trace_files, LoopConfig, SimulationTrace,
};
use sympctl::linalg::Matrix;
use sympctl::models::{
    mass_spring_model, two_link_model, CircleReference, MassSpringParams, TwoLinkParams,
};

use crate::config::{ConfigError, CustomModel, Experiment, ExperimentConfig};

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let config = match &e {
            SimError::Config(_) | SimError::Io(_) | SimError::Json(_) | SimError::Csv(_) => true,
            SimError::Model(m) | SimError::Control(ControlError::Model(m)) => {
                is_config_model_error(m)
            }
            SimError::Control(c) => matches!(
                c,
                ControlError::InvalidDesign(_)
                    | ControlError::MissingInitialValue(_)
                    | ControlError::MissingMeasurement
            ),
            SimError::Plant(_) => false,
        };
        if config {
            CliError::Config(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        SimError::from(e).into()
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        SimError::from(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

fn is_config_model_error(m: &ModelError) -> bool {
    matches!(
        m,
        ModelError::InvalidParameter { .. }
            | ModelError::DimensionMismatch { .. }
            | ModelError::Unreachable { .. }
            | ModelError::NearSingular { .. }
    )
}

fn mode_stem(mode: Mode) -> &'static str {
    match mode {
        Mode::Symplectic => "symplectic",
        Mode::QuasiContinuous => "quasi",
    }
}

fn diag(v: &[f64]) -> Matrix<f64> {
    Matrix::from_diagonal(v)
}

fn rows(m: &[Vec<f64>]) -> Matrix<f64> {
    let r: Vec<&[f64]> = m.iter().map(Vec::as_slice).collect();
    Matrix::from_rows(&r)
}

/// Everything a single-run experiment needs.
struct Plan {
    model: Arc<dyn MechanicalModel<f64>>,
    target: Arc<dyn TargetDynamics<f64>>,
    start: HamiltonianState<f64>,
    loops: Vec<(Mode, LoopConfig<f64>)>,
    setpoint: Option<Vec<f64>>,
    circle: Option<Arc<CircleReference<f64>>>,
}

fn plan(cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    let h = cfg.sampling_time();
    let horizon = cfg.run_horizon();
    let feedback: Feedback = cfg.feedback.into();
    let modes = cfg.mode.modes();
    let mut loops = Vec::new();
    let plan = match cfg.experiment {
        Experiment::MassSpringImpedance => {
            let m = &cfg.mass_spring;
            let params = MassSpringParams::new(m.m, m.k)?;
            for &mode in &modes {
                loops.push((
                    mode,
                    mass_spring_loop(params, m.c, m.d, m.q0, h, horizon, mode, feedback)?,
                ));
            }
            let model: Arc<dyn MechanicalModel<f64>> = Arc::new(mass_spring_model(params));
            let target = Arc::new(mass_spring_target(model.clone(), m.c, m.d)?);
            let start = HamiltonianState::at_rest(vec![m.q0], 0.0);
            Plan {
                model,
                target,
                start,
                loops,
                setpoint: Some(vec![0.0]),
                circle: None,
            }
        }
        Experiment::TwoLinkPd => {
            let p = &cfg.pd;
            let gains = PdGains::new(diag(&p.k), diag(&p.d), p.setpoint.clone())?;
            let start = HamiltonianState::at_rest(p.q0.clone(), 0.0);
            for &mode in &modes {
                let l = two_link_pd_loop(
                    TwoLinkParams::benchmark(),
                    gains.clone(),
                    start.clone(),
                    h,
                    horizon,
                    mode,
                    feedback,
                )?;
                loops.push((mode, l));
            }
            let model: Arc<dyn MechanicalModel<f64>> =
                Arc::new(two_link_model(TwoLinkParams::benchmark()));
            let target = Arc::new(pd_target(model.clone(), &gains)?);
            Plan {
                model,
                target,
                start,
                loops,
                setpoint: Some(p.setpoint.clone()),
                circle: None,
            }
        }
        Experiment::TwoLinkComputedTorque => {
            let t = &cfg.tracking;
            let gains = ComputedTorqueGains::new(diag(&t.m_d), diag(&t.k), diag(&t.d))?;
            let mut circle = None;
            for &mode in &modes {
                let (l, reference) = two_link_tracking_loop(
                    TwoLinkParams::benchmark(),
                    gains.clone(),
                    t.omega,
                    t.elbow,
                    h,
                    horizon,
                    mode,
                    feedback,
                )?;
                circle = Some(reference);
                loops.push((mode, l));
            }
            let params = TwoLinkParams::benchmark();
            let reference = match circle.clone() {
                Some(r) => r,
                None => Arc::new(CircleReference::new(
                    params.l1, params.l2, t.omega, t.elbow,
                )?),
            };
            let model: Arc<dyn MechanicalModel<f64>> = Arc::new(two_link_model(params));
            let start = loops
                .first()
                .map(|(_, l)| l.initial.to_hamiltonian(model.as_ref()))
                .ok_or_else(|| CliError::Config("no mode selected".into()))?;
            let target = Arc::new(ComputedTorqueTarget {
                inertia: gains.inertia.clone(),
                stiffness: gains.stiffness.clone(),
                damping: gains.damping.clone(),
                reference: reference.clone(),
            });
            Plan {
                model,
                target,
                start,
                loops,
                setpoint: None,
                circle: Some(reference),
            }
        }
        Experiment::Custom => {
            let c = &cfg.custom;
            let model: Arc<dyn MechanicalModel<f64>> = match c.model {
                CustomModel::MassSpring => Arc::new(mass_spring_model(MassSpringParams::new(
                    cfg.mass_spring.m,
                    cfg.mass_spring.k,
                )?)),
                CustomModel::TwoLink => Arc::new(two_link_model(TwoLinkParams::benchmark())),
            };
            let inertia = c
                .inertia
                .as_ref()
                .map_or(InertiaShape::Plant, |m| InertiaShape::Constant(rows(m)));
            let target: Arc<dyn TargetDynamics<f64>> = Arc::new(build_ida_pbc_target(
                model.clone(),
                inertia,
                Arc::new(QuadraticPotential::new(
                    rows(&c.stiffness),
                    c.minimum.clone(),
                )),
                StructureMatrix::Zero,
                StructureMatrix::Constant(rows(&c.damping)),
            )?);
            let start = HamiltonianState::new(c.q0.clone(), c.p0.clone(), 0.0);
            for &mode in &modes {
                let spec = ControllerSpec::new(
                    ControlDesign::GeneralHamiltonian {
                        target: target.clone(),
                    },
                    mode,
                    feedback,
                );
                let v0 = model
                    .mass_matrix(&c.q0)
                    .solve(&c.p0)
                    .map_err(ModelError::from)?;
                let spec = spec.with_initial_velocity(v0);
                loops.push((
                    mode,
                    LoopConfig::new(model.clone(), spec, start.clone(), h, horizon),
                ));
            }
            Plan {
                model,
                target,
                start,
                loops,
                setpoint: Some(c.minimum.clone()),
                circle: None,
            }
        }
        Experiment::Sweep | Experiment::Convergence => {
            return Err(CliError::Config(format!(
                "experiment {:?} is not a single run; use the matching subcommand",
                cfg.experiment
            )))
        }
    };
    Ok(plan)
}

fn run_metrics(
    trace: &SimulationTrace<f64>,
    h: f64,
    target: Option<&SimulationTrace<f64>>,
    plan: &Plan,
) -> Value {
    let mut m = json!({
        "rows": trace.len(),
        "completed": trace.completed(),
        "failure": trace.failure,
        "max_residual": trace.max_residual(),
        "mean_solve_seconds": trace.mean_solve_seconds(),
        "q_norm_h": discrete_l2_norm(&trace.q, h),
        "u_norm_h": discrete_l2_norm(&trace.u, h),
    });
    if let (Some(sp), Some(q)) = (&plan.setpoint, trace.q.last()) {
        let e = q
            .iter()
            .zip(sp)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        m["final_error_inf"] = json!(e);
    }
    if let Some(t) = target {
        m["max_deviation_from_target"] = json!(max_deviation(&trace.q, &t.q));
    }
    if let Some(circle) = &plan.circle {
        let e = tracking_errors(trace, circle);
        let period = (2.0 * std::f64::consts::PI / circle.omega / h).round() as usize;
        m["max_tcp_error"] = json!(e.iter().copied().fold(0.0, f64::max));
        m["max_tcp_error_after_one_period"] =
            json!(e.iter().skip(period).copied().fold(0.0, f64::max));
        m["circle_radius"] = json!(circle.radius());
    }
    m
}

/// Resolved configuration, so re-running the echo reproduces the run.
fn echo(cfg: &ExperimentConfig) -> Value {
    let mut resolved = cfg.clone();
    if matches!(
        cfg.experiment,
        Experiment::MassSpringImpedance
            | Experiment::TwoLinkPd
            | Experiment::TwoLinkComputedTorque
            | Experiment::Custom
    ) {
        resolved.h = Some(cfg.sampling_time());
        resolved.horizon = Some(cfg.run_horizon());
    }
    serde_json::to_value(resolved).unwrap_or(Value::Null)
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(|e| CliError::Config(format!("json: {e}")))
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let plan = plan(cfg)?;
    let h = cfg.sampling_time();
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let config = echo(cfg);
    let mut summary =
        json!({ "experiment": cfg.experiment, "h": h, "T": cfg.run_horizon(), "runs": {} });

    let target = run_target_reference(
        &plan.model,
        &plan.target,
        &plan.start,
        h,
        cfg.run_horizon(),
        &cfg.newton_config(),
    )
    .map_err(CliError::from)?;
    let target_metrics = run_metrics(&target, h, None, &plan);
    write_trace_files(&target, out, "target", &config, &target_metrics)?;
    if let Some(circle) = &plan.circle {
        write_tcp_csv(
            &target,
            circle,
            BufWriter::new(File::create(out.join("tcp_target.csv"))?),
        )?;
    }
    summary["runs"]["target"] = target_metrics;

    let mut failures = Vec::new();
    for (mode, mut l) in plan.loops.iter().cloned() {
        l.newton = cfg.newton_config();
        l.plant_tol = cfg.plant_tolerances();
        l.controller.baseline_velocity = cfg.baseline_velocity;
        let trace = run_sampled_loop(&l)?;
        let stem = mode_stem(mode);
        let metrics = run_metrics(&trace, h, Some(&target), &plan);
        write_trace_files(&trace, out, stem, &config, &metrics)?;
        if let Some(circle) = &plan.circle {
            write_tcp_csv(
                &trace,
                circle,
                BufWriter::new(File::create(out.join(format!("tcp_{stem}.csv")))?),
            )?;
        }
        if let Some(f) = &trace.failure {
            failures.push(format!("{stem}: k = {}, t = {}: {}", f.k, f.t, f.message));
        }
        summary["runs"][stem] = metrics;
    }
    summary["config"] = config;
    summary["git_revision"] = json!(git_revision());
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary["runs"]).unwrap_or_default()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solver(failures.join("; ")))
    }
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    cfg.experiment = Experiment::Sweep;
    cfg.validate()?;
    let threads = threads_from_env()?;
    let settings = cfg.sweep_settings(threads);
    let result = sweep_max_stiffness(&settings)?;
    fs::create_dir_all(&cfg.out)?;
    write_sweep_csv(
        &result,
        BufWriter::new(File::create(cfg.out.join("sweep.csv"))?),
    )?;
    let meta = json!({
        "config": echo(&cfg),
        "git_revision": git_revision(),
        "result": result,
    });
    write_json(&cfg.out.join("sweep.json"), &meta)?;
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "h", "c_max_qc", "c_max_symp", "u_norm", "q_norm_qc", "q_norm_symp"
    );
    let show = |x: Option<f64>| x.map_or_else(|| "below".to_string(), |v| format!("{v:.4}"));
    for r in &result.rows {
        println!(
            "{:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
            r.h,
            show(r.c_max_qc),
            show(r.c_max_symp),
            show(r.u_norm),
            show(r.q_norm_qc),
            show(r.q_norm_symp)
        );
    }
    Ok(())
}

pub fn cmd_convergence(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    cfg.experiment = Experiment::Convergence;
    cfg.validate()?;
    let settings = cfg.convergence_settings();
    let mut results = Vec::new();
    let mut outside = Vec::new();
    for &case in &cfg.convergence.cases {
        let r = run_case(case, &settings)?;
        let (lo, hi) = case.band();
        println!(
            "{:<16} errors {:?} orders {:?} band [{lo}, {hi}]",
            r.label, r.errors, r.orders
        );
        if !r.within(lo, hi) {
            outside.push(format!(
                "{} orders {:?} outside [{lo}, {hi}]",
                r.label, r.orders
            ));
        }
        results.push((r, (lo, hi)));
    }
    fs::create_dir_all(&cfg.out)?;
    write_convergence_csv(
        &results,
        BufWriter::new(File::create(cfg.out.join("convergence.csv"))?),
    )?;
    let meta = json!({
        "config": echo(&cfg),
        "git_revision": git_revision(),
        "results": results.iter().map(|(r, _)| r).collect::<Vec<_>>(),
    });
    write_json(&cfg.out.join("convergence.json"), &meta)?;
    if outside.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solver(outside.join("; ")))
    }
}
