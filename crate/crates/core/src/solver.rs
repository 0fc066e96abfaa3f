//! Discrete system of reflected backward equations with interconnected obstacles.
//!
//! On node `(n, k)` every mode first takes a driver step
//!
//! ```text
//! E  = (Y_up + Y_dn) / 2
//! Z  = (Y_up - Y_dn) / (2 sqrt(dt))
//! Ỹ  = E + dt * (psi(t_n, x) + H*(Z))
//! ```
//!
//! and the per-node vector `Ỹ` is then pushed up to the least fixed point of
//! `y_j = max(Ỹ_j, max_{i in A_j} (y_i - c_{j,i}))`. The push `Y - Ỹ` is the
//! reflection increment. [`solve_picard`] reaches the same field by freezing the
//! obstacles at the previous iterate and solving single-obstacle problems.

use thiserror::Error;

use crate::ambiguity::{hstar, AmbiguityModel};
use crate::exec::Execution;
use crate::lattice::{check_step_size, node_index, nodes_through, Lattice, LatticeError};
use crate::problem_model::{validate, CostMatrix, NodeEvalError, NodeTables, ProblemSpec, ValidationReport};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

// Nodes per rayon task inside one layer.
const LAYER_MIN_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Direct,
    Picard,
}

impl SolveMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveMethod::Direct => "direct",
            SolveMethod::Picard => "picard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveMeta {
    pub method: SolveMethod,
    pub tol: f64,
    pub iterations: usize,
}

/// One Picard iterate compared with its predecessor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardStep {
    /// `max |Y^{n} - Y^{n-1}|` over modes and nodes.
    pub sup_delta: f64,
    /// `min (Y^{n} - Y^{n-1})`; negative values would break monotonicity.
    pub min_increment: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("reflection did not settle")]
pub struct ReflectionDiverged;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("problem rejected by validation:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Eval(#[from] NodeEvalError),
    #[error("reflection did not settle at node (n={n}, k={k})")]
    ReflectionDiverged { n: usize, k: usize },
    #[error("Picard iteration did not reach tolerance after {} iterations", trace.len())]
    NoConvergence { trace: Vec<PicardStep> },
}

impl SolveError {
    pub fn code(&self) -> &'static str {
        match self {
            SolveError::Invalid(_) => "ValidationFailed",
            SolveError::Lattice(LatticeError::StepTooCoarse { .. }) => "StepTooCoarse",
            SolveError::Lattice(_) => "LatticeError",
            SolveError::Eval(_) => "EvalError",
            SolveError::ReflectionDiverged { .. } => "ReflectionDiverged",
            SolveError::NoConvergence { .. } => "NoConvergence",
        }
    }
}

/// Values, martingale coefficients and reflection increments on every node.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    modes: usize,
    steps: usize,
    // node-major: value of mode j at node (n, k) lives at node_index(n, k) * modes + j
    y: Vec<f64>,
    z: Vec<f64>,
    dk: Vec<f64>,
    pub meta: SolveMeta,
}

impl SolutionField {
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn y(&self, j: usize, n: usize, k: usize) -> f64 {
        self.y[node_index(n, k) * self.modes + j]
    }

    /// Values of all modes at node `(n, k)`.
    #[inline]
    pub fn y_node(&self, n: usize, k: usize) -> &[f64] {
        let at = node_index(n, k) * self.modes;
        &self.y[at..at + self.modes]
    }

    /// Defined for `n < N`.
    #[inline]
    pub fn z(&self, j: usize, n: usize, k: usize) -> f64 {
        debug_assert!(n < self.steps);
        self.z[node_index(n, k) * self.modes + j]
    }

    /// Defined for `n < N`.
    #[inline]
    pub fn dk(&self, j: usize, n: usize, k: usize) -> f64 {
        debug_assert!(n < self.steps);
        self.dk[node_index(n, k) * self.modes + j]
    }

    /// Root value of mode `j`.
    pub fn value(&self, j: usize) -> f64 {
        self.y[j]
    }

    /// Largest node-wise `|Y - Y'|` over all modes.
    pub fn max_abs_diff(&self, other: &SolutionField) -> f64 {
        assert_eq!((self.modes, self.steps), (other.modes, other.steps));
        self.y
            .iter()
            .zip(&other.y)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Output of [`reflect_layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
}

/// Least fixed point above `pre` of `y_j = max(pre_j, max_{i in A_j} (y_i - c_{j,i}))`.
pub fn reflect_layer(
    pre: &[f64],
    costs: &CostMatrix,
    switch_sets: &[Vec<usize>],
) -> Result<Reflection, ReflectionDiverged> {
    let mut values = pre.to_vec();
    reflect_in_place(&mut values, costs.as_slice(), switch_sets, 0..pre.len())?;
    let increments = values.iter().zip(pre).map(|(y, p)| y - p).collect();
    Ok(Reflection { values, increments })
}

/// Gauss-Seidel sweeps in the order given by `order`. Under the no-free-loop
/// condition at most `m` sweeps change anything.
pub(crate) fn reflect_in_place<I>(
    values: &mut [f64],
    costs: &[f64],
    switch_sets: &[Vec<usize>],
    order: I,
) -> Result<(), ReflectionDiverged>
where
    I: Iterator<Item = usize> + Clone,
{
    let m = values.len();
    for _ in 0..=m {
        let mut changed = false;
        for j in order.clone() {
            for &i in &switch_sets[j] {
                let candidate = values[i] - costs[j * m + i];
                if candidate > values[j] {
                    values[j] = candidate;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(());
        }
    }
    Err(ReflectionDiverged)
}

#[inline]
fn driver_step(amb: &AmbiguityModel, lat: &Lattice, t: f64, x: f64, psi: f64, up: f64, dn: f64) -> (f64, f64) {
    let z = (up - dn) / (2.0 * lat.sqrt_dt());
    let pre = 0.5 * (up + dn) + lat.dt() * (psi + hstar(amb, t, x, z).value);
    (pre, z)
}

fn prepare(spec: &ProblemSpec, lat: &Lattice, exec: Execution) -> Result<NodeTables, SolveError> {
    let report = validate(spec, lat);
    if !report.is_accepted() {
        return Err(SolveError::Invalid(report));
    }
    check_step_size(lat, spec.ambiguity())?;
    Ok(NodeTables::build(spec, lat, exec)?)
}

fn terminal_layer(tabs: &NodeTables, m: usize, steps: usize, y: &mut [f64]) {
    for k in 0..=steps {
        let at = node_index(steps, k) * m;
        y[at..at + m].copy_from_slice(tabs.terminal(k));
    }
}

/// Backward induction with per-node oblique reflection.
pub fn solve_direct(spec: &ProblemSpec, lat: &Lattice) -> Result<SolutionField, SolveError> {
    solve_direct_with(spec, lat, Execution::default())
}

pub fn solve_direct_with(spec: &ProblemSpec, lat: &Lattice, exec: Execution) -> Result<SolutionField, SolveError> {
    let tabs = prepare(spec, lat, exec)?;
    let m = spec.mode_count();
    let steps = lat.steps();
    let amb = spec.ambiguity();
    let sets = spec.switch_sets();

    let mut y = vec![0.0; nodes_through(steps) * m];
    let mut z = vec![0.0; nodes_through(steps - 1) * m];
    let mut dk = vec![0.0; nodes_through(steps - 1) * m];
    terminal_layer(&tabs, m, steps, &mut y);

    // per node: [y (m) | z (m) | dk (m)]
    let mut buf = vec![0.0; (steps + 1) * 3 * m];
    for n in (0..steps).rev() {
        let t = lat.time(n);
        let (head, tail) = y.split_at_mut(node_index(n + 1, 0) * m);
        let next: &[f64] = &tail[..(n + 2) * m];
        let layer_buf = &mut buf[..(n + 1) * 3 * m];
        exec.try_chunks_mut(layer_buf, 3 * m, LAYER_MIN_LEN, |k, out| {
            let x = lat.state(n, k);
            let psi = tabs.psi(n, k);
            let (vals, rest) = out.split_at_mut(m);
            let (zs, dks) = rest.split_at_mut(m);
            for j in 0..m {
                let (pre, zj) = driver_step(amb, lat, t, x, psi[j], next[(k + 1) * m + j], next[k * m + j]);
                vals[j] = pre;
                zs[j] = zj;
                dks[j] = pre;
            }
            reflect_in_place(vals, tabs.costs(n, k), sets, 0..m)
                .map_err(|_| SolveError::ReflectionDiverged { n, k })?;
            for j in 0..m {
                dks[j] = vals[j] - dks[j];
            }
            Ok::<_, SolveError>(())
        })?;
        let base = node_index(n, 0) * m;
        for k in 0..=n {
            let chunk = &layer_buf[k * 3 * m..(k + 1) * 3 * m];
            let at = base + k * m;
            head[at..at + m].copy_from_slice(&chunk[..m]);
            z[at..at + m].copy_from_slice(&chunk[m..2 * m]);
            dk[at..at + m].copy_from_slice(&chunk[2 * m..]);
        }
    }

    Ok(SolutionField {
        modes: m,
        steps,
        y,
        z,
        dk,
        meta: SolveMeta {
            method: SolveMethod::Direct,
            tol: 0.0,
            iterations: 1,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub field: SolutionField,
    pub trace: Vec<PicardStep>,
}

/// One backward pass in which mode `j` is clipped at
/// `max_{i in A_j} (prev_i - c_{j,i})`; no clipping when `prev` is `None`.
fn picard_pass(
    spec: &ProblemSpec,
    lat: &Lattice,
    tabs: &NodeTables,
    prev: Option<&[f64]>,
    exec: Execution,
) -> Vec<f64> {
    let m = spec.mode_count();
    let steps = lat.steps();
    let amb = spec.ambiguity();
    let sets = spec.switch_sets();
    let mut y = vec![0.0; nodes_through(steps) * m];
    terminal_layer(tabs, m, steps, &mut y);
    for n in (0..steps).rev() {
        let t = lat.time(n);
        let (head, tail) = y.split_at_mut(node_index(n + 1, 0) * m);
        let next: &[f64] = &tail[..(n + 2) * m];
        let base = node_index(n, 0) * m;
        let layer = &mut head[base..base + (n + 1) * m];
        exec.try_chunks_mut(layer, m, LAYER_MIN_LEN, |k, vals| {
            let x = lat.state(n, k);
            let psi = tabs.psi(n, k);
            let costs = tabs.costs(n, k);
            for j in 0..m {
                let (pre, _) = driver_step(amb, lat, t, x, psi[j], next[(k + 1) * m + j], next[k * m + j]);
                let obstacle = match prev {
                    Some(p) => {
                        let at = base + k * m;
                        sets[j]
                            .iter()
                            .map(|&i| p[at + i] - costs[j * m + i])
                            .fold(f64::NEG_INFINITY, f64::max)
                    }
                    None => f64::NEG_INFINITY,
                };
                vals[j] = pre.max(obstacle);
            }
            Ok::<_, ()>(())
        })
        .expect("infallible");
    }
    y
}

/// Global Picard iteration: iterate 0 ignores the obstacles, iterate `n`
/// freezes them at iterate `n - 1`. Stops once the sup-norm change drops
/// below `tol`.
pub fn solve_picard(spec: &ProblemSpec, lat: &Lattice, tol: f64, max_iter: usize) -> Result<PicardOutcome, SolveError> {
    solve_picard_with(spec, lat, tol, max_iter, Execution::default())
}

pub fn solve_picard_with(
    spec: &ProblemSpec,
    lat: &Lattice,
    tol: f64,
    max_iter: usize,
    exec: Execution,
) -> Result<PicardOutcome, SolveError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let tabs = prepare(spec, lat, exec)?;
    let mut prev = picard_pass(spec, lat, &tabs, None, exec);
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let next = picard_pass(spec, lat, &tabs, Some(&prev), exec);
        let (sup_delta, min_increment) = next
            .iter()
            .zip(&prev)
            .fold((0.0f64, f64::INFINITY), |(sup, low), (a, b)| {
                (sup.max((a - b).abs()), low.min(a - b))
            });
        trace.push(PicardStep {
            sup_delta,
            min_increment,
        });
        prev = next;
        if sup_delta < tol {
            let field = finish_field(spec, lat, &tabs, prev, tol, trace.len(), exec);
            return Ok(PicardOutcome { field, trace });
        }
    }
    Err(SolveError::NoConvergence { trace })
}

/// Rebuilds `Z` and the reflection increments from a converged value field.
fn finish_field(
    spec: &ProblemSpec,
    lat: &Lattice,
    tabs: &NodeTables,
    y: Vec<f64>,
    tol: f64,
    iterations: usize,
    exec: Execution,
) -> SolutionField {
    let m = spec.mode_count();
    let steps = lat.steps();
    let amb = spec.ambiguity();
    let interior = nodes_through(steps - 1);
    let mut zdk = vec![0.0; interior * 2 * m];
    exec.try_chunks_mut(&mut zdk, 2 * m, LAYER_MIN_LEN, |idx, out| {
        let (n, k) = crate::problem_model::node_coords(idx);
        let next = node_index(n + 1, 0) * m;
        let here = idx * m;
        let psi = tabs.psi(n, k);
        for j in 0..m {
            let up = y[next + (k + 1) * m + j];
            let dn = y[next + k * m + j];
            let (pre, zj) = driver_step(amb, lat, lat.time(n), lat.state(n, k), psi[j], up, dn);
            out[j] = zj;
            out[m + j] = y[here + j] - pre;
        }
        Ok::<_, ()>(())
    })
    .expect("infallible");
    let mut z = Vec::with_capacity(interior * m);
    let mut dk = Vec::with_capacity(interior * m);
    for chunk in zdk.chunks(2 * m) {
        z.extend_from_slice(&chunk[..m]);
        dk.extend_from_slice(&chunk[m..]);
    }
    SolutionField {
        modes: m,
        steps,
        y,
        z,
        dk,
        meta: SolveMeta {
            method: SolveMethod::Picard,
            tol,
            iterations,
        },
    }
}
