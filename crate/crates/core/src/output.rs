//! CSV tables written by the command line tool.
//!
//! Floats use 17 significant digits so that files round-trip exactly. Modes
//! are 1-based in every table.

use std::fmt::Write as _;

use crate::evaluator::EvalReport;
use crate::lattice::Lattice;
use crate::solver::SolutionField;
use crate::strategy::{Action, ControlTable, Policy};

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// `mode,n,k,t,x,Y,Z,dK`, Z and dK empty on the terminal layer.
pub fn solution_csv(lat: &Lattice, sol: &SolutionField) -> String {
    let mut out = String::from("mode,n,k,t,x,Y,Z,dK\n");
    let steps = sol.steps();
    for j in 0..sol.modes() {
        for n in 0..=steps {
            let t = fmt_f64(lat.time(n));
            for k in 0..=n {
                let _ = write!(
                    out,
                    "{},{n},{k},{t},{},{}",
                    j + 1,
                    fmt_f64(lat.state(n, k)),
                    fmt_f64(sol.y(j, n, k))
                );
                if n < steps {
                    let _ = writeln!(out, ",{},{}", fmt_f64(sol.z(j, n, k)), fmt_f64(sol.dk(j, n, k)));
                } else {
                    out.push_str(",,\n");
                }
            }
        }
    }
    out
}

/// `n,k,mode,action,target` for every interior node and mode.
pub fn policy_csv(pol: &Policy) -> String {
    let mut out = String::from("n,k,mode,action,target\n");
    for n in 0..pol.steps() {
        for k in 0..=n {
            for j in 0..pol.modes() {
                match pol.action(n, k, j) {
                    Action::Stay => {
                        let _ = writeln!(out, "{n},{k},{},stay,", j + 1);
                    }
                    Action::SwitchTo(i) => {
                        let _ = writeln!(out, "{n},{k},{},switch,{}", j + 1, i + 1);
                    }
                }
            }
        }
    }
    out
}

/// `n,k,mode,u` for every interior node and mode.
pub fn control_csv(ctl: &ControlTable) -> String {
    let mut out = String::from("n,k,mode,u\n");
    for n in 0..ctl.steps() {
        for k in 0..=n {
            for j in 0..ctl.modes() {
                let _ = writeln!(out, "{n},{k},{},{}", j + 1, fmt_f64(ctl.drift(n, k, j)));
            }
        }
    }
    out
}

pub fn eval_csv(rep: &EvalReport) -> String {
    format!(
        "method,estimate,stderr,paths,seed\n{},{},{},{},{}\n",
        rep.method.as_str(),
        fmt_f64(rep.estimate),
        fmt_f64(rep.stderr),
        rep.paths,
        rep.seed
    )
}

/// One [`EvalReport`] per labelled row: `row,method,estimate,stderr,paths,seed`.
pub fn simulate_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("row,method,estimate,stderr,paths,seed\n");
    for (label, rep) in rows {
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{}",
            rep.method.as_str(),
            fmt_f64(rep.estimate),
            fmt_f64(rep.stderr),
            rep.paths,
            rep.seed
        );
    }
    out
}

/// `N,Y0,delta_to_previous`, the delta empty on the first row.
pub fn sweep_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("N,Y0,delta_to_previous\n");
    let mut prev: Option<f64> = None;
    for &(n, y) in rows {
        match prev {
            Some(p) => {
                let _ = writeln!(out, "{n},{},{}", fmt_f64(y), fmt_f64((y - p).abs()));
            }
            None => {
                let _ = writeln!(out, "{n},{},", fmt_f64(y));
            }
        }
        prev = Some(y);
    }
    out
}

/// `mode,solver,oracle,abs_diff` per mode at the root.
pub fn oracle_csv(solver: &[f64], oracle: &[f64]) -> String {
    let mut out = String::from("mode,solver,oracle,abs_diff\n");
    for (j, (a, b)) in solver.iter().zip(oracle).enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            j + 1,
            fmt_f64(*a),
            fmt_f64(*b),
            fmt_f64((a - b).abs())
        );
    }
    out
}

/// Minimal reader for the tables above: header plus rows of raw fields.
pub fn read_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|h| h.split(',').map(str::to_owned).collect())
        .unwrap_or_default();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    (header, rows)
}
