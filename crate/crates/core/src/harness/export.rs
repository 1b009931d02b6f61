//! CSV traces, JSON sidecars and sweep/convergence tables.
//!
//! Floats are written with `Display`, which is the shortest decimal that
//! parses back to the same value.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;

use crate::error::SimError;
use crate::models::{forward_kinematics, CircleReference};
use crate::scalar::Scalar;

use super::convergence::ConvergenceResult;
use super::sampled::{SimulationTrace, TraceMetadata};
use super::sweep::SweepResult;

/// Written in place of a stiffness when nothing on the grid passed.
pub const BELOW_GRID: &str = "below_grid";

/// `t,q1..qn,p1..pn,u1..un,q_half_1..,p_half_1..,newton_iters,residual`
pub fn trace_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["q", "p", "u"] {
        h.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
    for prefix in ["q_half_", "p_half_"] {
        h.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
    h.push("newton_iters".into());
    h.push("residual".into());
    h
}

fn check_columns<T: Scalar>(trace: &SimulationTrace<T>) -> Result<usize, SimError> {
    let rows = trace.len();
    let n = trace.dof();
    let lens = [
        trace.q.len(),
        trace.p.len(),
        trace.u.len(),
        trace.q_half.len(),
        trace.rate_half.len(),
        trace.newton_iters.len(),
        trace.residual.len(),
    ];
    if lens.iter().any(|&l| l != rows) {
        return Err(SimError::Config(format!(
            "trace columns have unequal lengths {lens:?}, t has {rows}"
        )));
    }
    // one held input per interval, each of full width
    for (k, row) in trace
        .q
        .iter()
        .zip(&trace.p)
        .zip(&trace.u)
        .zip(&trace.q_half)
        .zip(&trace.rate_half)
        .enumerate()
    {
        let ((((q, p), u), qh), rh) = row;
        if [q.len(), p.len(), u.len(), qh.len(), rh.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(SimError::Config(format!(
                "trace row {k} does not have {n} entries per block"
            )));
        }
    }
    Ok(n)
}

pub fn write_trace_csv<T: Scalar, W: Write>(
    trace: &SimulationTrace<T>,
    out: W,
) -> Result<(), SimError> {
    let n = check_columns(trace)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n))?;
    let mut record = Vec::with_capacity(5 * n + 3);
    for k in 0..trace.len() {
        record.clear();
        record.push(trace.t[k].to_string());
        for block in [
            &trace.q[k],
            &trace.p[k],
            &trace.u[k],
            &trace.q_half[k],
            &trace.rate_half[k],
        ] {
            record.extend(block.iter().map(|x| x.to_string()));
        }
        record.push(trace.newton_iters[k].to_string());
        record.push(trace.residual[k].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric rows of a CSV written by this module.
pub fn read_csv_table<R: Read>(input: R) -> Result<(Vec<String>, Vec<Vec<f64>>), SimError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                if s == BELOW_GRID {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>()
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SimError::Config(format!("bad number in csv: {e}")))?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Current commit of the working directory, if any.
pub fn git_revision() -> Option<String> {
    let out = Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let rev = String::from_utf8(out.stdout).ok()?.trim().to_string();
    (!rev.is_empty()).then_some(rev)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    trace: &'a TraceMetadata,
    config: &'a serde_json::Value,
    git_revision: Option<String>,
    rows: usize,
    completed: bool,
    failure: &'a Option<super::sampled::FailureRecord>,
    max_residual: f64,
    mean_solve_seconds: f64,
    solve_seconds: &'a [f64],
    results: &'a serde_json::Value,
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`. `config` is echoed
/// verbatim; `results` holds caller-computed summary numbers.
pub fn write_trace_files<T: Scalar>(
    trace: &SimulationTrace<T>,
    dir: &Path,
    stem: &str,
    config: &serde_json::Value,
    results: &serde_json::Value,
) -> Result<(PathBuf, PathBuf), SimError> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_trace_csv(trace, BufWriter::new(File::create(&csv_path)?))?;
    let sidecar = Sidecar {
        trace: &trace.metadata,
        config,
        git_revision: git_revision(),
        rows: trace.len(),
        completed: trace.completed(),
        failure: &trace.failure,
        max_residual: trace.max_residual(),
        mean_solve_seconds: trace.mean_solve_seconds(),
        solve_seconds: &trace.solve_seconds,
        results,
    };
    let mut f = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.flush()?;
    Ok((csv_path, json_path))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| BELOW_GRID.to_string(), |v| v.to_string())
}

/// `h,c_max_qc,c_max_symp,u_norm,q_norm_qc,q_norm_symp`
pub fn write_sweep_csv<W: Write>(result: &SweepResult, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "h",
        "c_max_qc",
        "c_max_symp",
        "u_norm",
        "q_norm_qc",
        "q_norm_symp",
    ])?;
    for r in &result.rows {
        w.write_record([
            r.h.to_string(),
            opt(r.c_max_qc),
            opt(r.c_max_symp),
            opt(r.u_norm),
            opt(r.q_norm_qc),
            opt(r.q_norm_symp),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `case,h,error,order,lo,hi`; the order column is empty on the first row of
/// each case.
pub fn write_convergence_csv<W: Write>(
    results: &[(ConvergenceResult, (f64, f64))],
    out: W,
) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case", "h", "error", "order", "lo", "hi"])?;
    for (r, (lo, hi)) in results {
        for (i, (&h, &e)) in r.h.iter().zip(&r.errors).enumerate() {
            let order = if i == 0 {
                String::new()
            } else {
                r.orders[i - 1].to_string()
            };
            w.write_record([
                r.label.clone(),
                h.to_string(),
                e.to_string(),
                order,
                lo.to_string(),
                hi.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t,x_tcp,y_tcp,x_ref,y_ref` for a tracking run.
pub fn write_tcp_csv<T: Scalar, W: Write>(
    trace: &SimulationTrace<T>,
    reference: &CircleReference<T>,
    out: W,
) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x_tcp", "y_tcp", "x_ref", "y_ref"])?;
    for (&t, q) in trace.t.iter().zip(&trace.q) {
        let [x, y] = forward_kinematics(reference.l1, reference.l2, q);
        let [xd, _, _] = reference.task_space(t);
        w.write_record([
            t.to_string(),
            x.to_string(),
            y.to_string(),
            xd[0].to_string(),
            xd[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
