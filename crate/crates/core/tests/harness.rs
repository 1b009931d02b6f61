//! Closed-loop harness behaviour: reproducibility, precision, export and
//! failure handling.

use sympctl::controllers::{Feedback, Mode};
use sympctl::harness::experiments::{
    mass_spring_loop, two_link_pd_gains, two_link_pd_loop, two_link_pd_start,
};
use sympctl::harness::{
    read_csv_table, run_sampled_loop, sweep_max_stiffness, trace_header, uniform_grid,
    write_trace_csv, SweepSettings,
};
use sympctl::integrators::NewtonConfig;
use sympctl::models::{MassSpringParams, TwoLinkParams};
use sympctl::SimError;

fn pd(mode: Mode, feedback: Feedback) -> sympctl::harness::LoopConfig<f64> {
    two_link_pd_loop(
        TwoLinkParams::benchmark(),
        two_link_pd_gains(),
        two_link_pd_start(),
        0.05,
        4.0,
        mode,
        feedback,
    )
    .unwrap()
}

#[test]
fn runs_are_bitwise_reproducible() {
    for mode in [Mode::Symplectic, Mode::QuasiContinuous] {
        for feedback in [Feedback::FullState, Feedback::PositionOnly] {
            let cfg = pd(mode, feedback);
            let a = run_sampled_loop(&cfg).unwrap();
            let b = run_sampled_loop(&cfg).unwrap();
            assert!(a.same_numbers(&b), "{mode:?} {feedback:?}");
            assert_eq!(a.metadata.config_hash, b.metadata.config_hash);
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let run32 = run_sampled_loop(
        &two_link_pd_loop(
            TwoLinkParams::<f32>::benchmark(),
            two_link_pd_gains(),
            two_link_pd_start(),
            0.05,
            4.0,
            Mode::Symplectic,
            Feedback::FullState,
        )
        .unwrap(),
    )
    .unwrap();
    let run64 = run_sampled_loop(&pd(Mode::Symplectic, Feedback::FullState)).unwrap();
    assert!(run32.completed());
    let worst = run32
        .q
        .iter()
        .zip(&run64.q)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn csv_round_trips_every_number() {
    let trace = run_sampled_loop(&pd(Mode::Symplectic, Feedback::PositionOnly)).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf).unwrap();
    let (header, rows) = read_csv_table(buf.as_slice()).unwrap();
    assert_eq!(header, trace_header(2));
    assert_eq!(rows.len(), trace.len());
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0].to_bits(), trace.t[k].to_bits());
        assert_eq!(&row[1..3], trace.q[k].as_slice());
        assert_eq!(&row[3..5], trace.p[k].as_slice());
        assert_eq!(&row[5..7], trace.u[k].as_slice());
        assert_eq!(row[11] as usize, trace.newton_iters[k]);
    }
}

#[test]
fn sweep_does_not_depend_on_thread_count() {
    let settings = |threads| SweepSettings {
        h_grid: vec![0.1, 0.2],
        c_grid: uniform_grid(0.5, 3.0, 0.5),
        horizon: 30.0,
        threads: Some(threads),
        ..SweepSettings::default()
    };
    let one = sweep_max_stiffness(&settings(1)).unwrap();
    let three = sweep_max_stiffness(&settings(3)).unwrap();
    assert_eq!(one.rows, three.rows);
    for row in &one.rows {
        assert!(row.c_max_symp.unwrap_or(0.0) >= row.c_max_qc.unwrap_or(0.0));
    }
}

#[test]
fn starved_newton_truncates_the_trace() {
    let mut cfg = pd(Mode::Symplectic, Feedback::FullState);
    cfg.newton = NewtonConfig {
        max_iter: 1,
        abs_tol: 1e-300,
        ..NewtonConfig::default()
    };
    let trace = run_sampled_loop(&cfg).unwrap();
    let failure = trace.failure.as_ref().expect("failure recorded");
    assert_eq!(failure.k, 0);
    assert!(!trace.completed());
}

#[test]
fn bad_grids_are_config_errors() {
    let cfg = mass_spring_loop(
        MassSpringParams::default(),
        1.0,
        0.1,
        1.0,
        -0.1,
        1.0,
        Mode::Symplectic,
        Feedback::FullState,
    )
    .unwrap();
    assert!(matches!(run_sampled_loop(&cfg), Err(SimError::Config(_))));
    let cfg = mass_spring_loop(
        MassSpringParams::default(),
        1.0,
        0.1,
        1.0,
        0.1,
        0.01,
        Mode::Symplectic,
        Feedback::FullState,
    )
    .unwrap();
    assert!(matches!(run_sampled_loop(&cfg), Err(SimError::Config(_))));
}

#[test]
fn position_only_follows_full_state_on_constant_mass() {
    // both reconstruct the same target; they differ only at second order
    let run = |feedback, h| {
        let cfg = mass_spring_loop(
            MassSpringParams::default(),
            2.0,
            0.1,
            1.0,
            h,
            10.0,
            Mode::Symplectic,
            feedback,
        )
        .unwrap();
        let t = run_sampled_loop(&cfg).unwrap();
        t.q.iter().map(|q| q[0]).collect::<Vec<f64>>()
    };
    let gap = |h| {
        run(Feedback::FullState, h)
            .iter()
            .zip(run(Feedback::PositionOnly, h))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (gap(0.1), gap(0.05));
    assert!(coarse < 1e-2 && fine < coarse / 3.0, "{coarse} {fine}");
}
