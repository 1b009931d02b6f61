//! Sampled-data closed loop, discrete metrics, parameter sweeps and export.

mod convergence;
pub mod experiments;
mod export;
mod metrics;
mod sampled;
mod sweep;

pub use convergence::{
    case_error, continuous_target_samples, convergence_study, empirical_orders, run_case,
    validate_halving, ConvergenceCase, ConvergenceResult, ConvergenceSettings,
};
pub use export::{
    git_revision, read_csv_table, trace_header, write_convergence_csv, write_sweep_csv,
    write_tcp_csv, write_trace_csv, write_trace_files, BELOW_GRID,
};
pub use metrics::{
    discrete_l2_norm, discrete_l2_norm_scalar, max_abs, max_deviation, tube_criterion, tube_rate,
};
pub use sampled::{
    run_sampled_loop, run_sampled_loop_until, run_target_reference, FailureRecord, InitialState,
    LoopConfig, LoopSummary, PlantKind, SimulationTrace, TraceMetadata,
};
pub use sweep::{
    sweep_max_stiffness, threads_from_env, uniform_grid, SweepCell, SweepResult, SweepRow,
    SweepSettings, THREADS_ENV,
};
