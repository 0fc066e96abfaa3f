//! Brute-force verifiers for the solver.
//!
//! Nothing here calls into `solver`, `ambiguity` or `evaluator`: transition
//! probabilities, the inner minimization over drifts and the switching fold
//! are all spelled out again so that agreement with the solver means something.

use thiserror::Error;

use crate::ambiguity::AmbiguityModel;
use crate::exec::Execution;
use crate::lattice::{node_index, nodes_through, Lattice};
use crate::problem_model::{NodeEvalError, ProblemSpec};
use crate::strategy::{Action, Policy};

/// Upper bound on the number of Markov policies [`enumerate_policies`] will visit.
pub const MAX_SEARCH_SPACE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("drift {u} with dt {dt} gives a degenerate step probability")]
    StepTooCoarse { u: f64, dt: f64 },
    #[error("drift grid must contain {0} from the prior set")]
    GridMissingExtremes(String),
    #[error("drift {0} of the grid is outside the prior set")]
    GridOutsideSet(f64),
    #[error("search space of {size} policies exceeds {MAX_SEARCH_SPACE}")]
    SearchSpaceTooLarge { size: u128 },
    #[error(transparent)]
    Eval(#[from] NodeEvalError),
    #[error("switching fold did not settle at node (n={n}, k={k})")]
    FoldDiverged { n: usize, k: usize },
}

impl OracleError {
    pub fn code(&self) -> &'static str {
        match self {
            OracleError::StepTooCoarse { .. } => "StepTooCoarse",
            OracleError::GridMissingExtremes(_) | OracleError::GridOutsideSet(_) => "BadGrid",
            OracleError::SearchSpaceTooLarge { .. } => "SearchSpaceTooLarge",
            OracleError::Eval(_) => "EvalError",
            OracleError::FoldDiverged { .. } => "FoldDiverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Root value for each starting mode.
    pub values: Vec<f64>,
    /// Node-major values (`node_index(n, k) * modes + j`); filled by [`game_dp`].
    pub field: Option<Vec<f64>>,
    /// Maximizing policy for the problem's start mode; filled by [`enumerate_policies`].
    pub best_policy: Option<Policy>,
    pub grid_size: usize,
    /// Number of policies visited by the enumeration.
    pub searched: u64,
}

impl OracleResult {
    pub fn node_value(&self, modes: usize, j: usize, n: usize, k: usize) -> Option<f64> {
        self.field.as_ref().map(|f| f[node_index(n, k) * modes + j])
    }
}

/// Default drift grid: interval endpoints and zero, or the whole finite set.
pub fn default_grid(amb: &AmbiguityModel) -> Vec<f64> {
    match amb {
        AmbiguityModel::KappaIgnorance { kappa } if *kappa == 0.0 => vec![0.0],
        AmbiguityModel::KappaIgnorance { kappa } => vec![-kappa, 0.0, *kappa],
        AmbiguityModel::FiniteSet { values } => values.clone(),
    }
}

/// `(1 + u sqrt(dt)) / 2` for every grid drift.
fn grid_probabilities(spec: &ProblemSpec, lat: &Lattice, grid: &[f64]) -> Result<Vec<f64>, OracleError> {
    match spec.ambiguity() {
        AmbiguityModel::KappaIgnorance { kappa } => {
            for u in grid {
                if u.abs() > *kappa {
                    return Err(OracleError::GridOutsideSet(*u));
                }
            }
            for end in [-kappa, *kappa] {
                if !grid.contains(&end) {
                    return Err(OracleError::GridMissingExtremes(format!("{end}")));
                }
            }
        }
        AmbiguityModel::FiniteSet { values } => {
            for u in grid {
                if !values.contains(u) {
                    return Err(OracleError::GridOutsideSet(*u));
                }
            }
            for v in values {
                if !grid.contains(v) {
                    return Err(OracleError::GridMissingExtremes(format!("{v}")));
                }
            }
        }
    }
    let root_dt = (lat.horizon() / lat.steps() as f64).sqrt();
    grid.iter()
        .map(|&u| {
            let p = 0.5 + 0.5 * u * root_dt;
            if p <= 0.0 || p >= 1.0 {
                Err(OracleError::StepTooCoarse {
                    u,
                    dt: root_dt * root_dt,
                })
            } else {
                Ok(p)
            }
        })
        .collect()
}

struct NodeInputs {
    // psi * dt per mode
    running: Vec<f64>,
    // (from, to, cost) for every allowed switch
    edges: Vec<(usize, usize, f64)>,
}

fn node_inputs(spec: &ProblemSpec, lat: &Lattice, n: usize, k: usize) -> Result<NodeInputs, OracleError> {
    let t = lat.time(n);
    let x = lat.state(n, k);
    let dt = lat.horizon() / lat.steps() as f64;
    let m = spec.mode_count();
    let mut running = Vec::with_capacity(m);
    let mut edges = Vec::new();
    for j in 0..m {
        let psi = spec.psi_at(j, t, x).map_err(|source| NodeEvalError {
            what: format!("psi of mode {}", j + 1),
            n,
            k,
            source,
        })?;
        running.push(psi * dt);
        for &i in spec.switch_set(j) {
            let c = spec
                .cost_expr(j, i)
                .expect("edge has a cost")
                .eval(t, x)
                .map_err(|source| NodeEvalError {
                    what: format!("cost {}->{}", j + 1, i + 1),
                    n,
                    k,
                    source,
                })?;
            edges.push((j, i, c));
        }
    }
    Ok(NodeInputs { running, edges })
}

fn terminal_row(spec: &ProblemSpec, lat: &Lattice, k: usize) -> Result<Vec<f64>, OracleError> {
    let x = lat.state(lat.steps(), k);
    (0..spec.mode_count())
        .map(|j| {
            spec.mode(j).xi.eval(spec.horizon(), x).map_err(|source| {
                OracleError::Eval(NodeEvalError {
                    what: format!("xi of mode {}", j + 1),
                    n: lat.steps(),
                    k,
                    source,
                })
            })
        })
        .collect()
}

/// Backward game recursion: the switcher maximizes, nature picks the
/// drift from `grid` by explicit enumeration.
pub fn game_dp(spec: &ProblemSpec, lat: &Lattice, u_grid: &[f64]) -> Result<OracleResult, OracleError> {
    game_dp_with(spec, lat, u_grid, Execution::default())
}

pub fn game_dp_with(
    spec: &ProblemSpec,
    lat: &Lattice,
    u_grid: &[f64],
    exec: Execution,
) -> Result<OracleResult, OracleError> {
    let probs = grid_probabilities(spec, lat, u_grid)?;
    let m = spec.mode_count();
    let steps = lat.steps();
    let mut field = vec![0.0; nodes_through(steps) * m];
    for k in 0..=steps {
        let at = node_index(steps, k) * m;
        field[at..at + m].copy_from_slice(&terminal_row(spec, lat, k)?);
    }
    for n in (0..steps).rev() {
        let next_base = node_index(n + 1, 0) * m;
        let next = &field[next_base..next_base + (n + 2) * m];
        let layer = exec.try_map(n + 1, 32, |k| {
            let inputs = node_inputs(spec, lat, n, k)?;
            let mut v: Vec<f64> = (0..m)
                .map(|j| {
                    let up = next[(k + 1) * m + j];
                    let dn = next[k * m + j];
                    let worst = probs
                        .iter()
                        .map(|p| p * up + (1.0 - p) * dn)
                        .fold(f64::INFINITY, f64::min);
                    worst + inputs.running[j]
                })
                .collect();
            // Jacobi rounds of the switching option until nothing improves.
            let mut settled = false;
            for _ in 0..=m + 1 {
                let snapshot = v.clone();
                let mut changed = false;
                for &(j, i, c) in &inputs.edges {
                    if snapshot[i] - c > v[j] {
                        v[j] = snapshot[i] - c;
                        changed = true;
                    }
                }
                if !changed {
                    settled = true;
                    break;
                }
            }
            if !settled {
                return Err(OracleError::FoldDiverged { n, k });
            }
            Ok(v)
        })?;
        let base = node_index(n, 0) * m;
        for (k, v) in layer.into_iter().enumerate() {
            field[base + k * m..base + (k + 1) * m].copy_from_slice(&v);
        }
    }
    Ok(OracleResult {
        values: field[..m].to_vec(),
        field: Some(field),
        best_policy: None,
        grid_size: u_grid.len(),
        searched: 0,
    })
}

/// Every joint action profile of one node that has no instantaneous cycle.
/// Entry `j` of a profile is `None` for stay or `Some(target)`.
fn acyclic_profiles(spec: &ProblemSpec) -> Vec<Vec<Option<usize>>> {
    let m = spec.mode_count();
    let choices: Vec<Vec<Option<usize>>> = (0..m)
        .map(|j| {
            std::iter::once(None)
                .chain(spec.switch_set(j).iter().map(|&i| Some(i)))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut digits = vec![0usize; m];
    loop {
        let profile: Vec<Option<usize>> = (0..m).map(|j| choices[j][digits[j]]).collect();
        let acyclic = (0..m).all(|start| {
            let mut cur = start;
            for _ in 0..m {
                match profile[cur] {
                    None => return true,
                    Some(next) => cur = next,
                }
            }
            false
        });
        if acyclic {
            out.push(profile);
        }
        // odometer, last mode fastest
        let mut p = m;
        loop {
            if p == 0 {
                return out;
            }
            p -= 1;
            digits[p] += 1;
            if digits[p] < choices[p].len() {
                break;
            }
            digits[p] = 0;
        }
    }
}

/// Per node and profile: the continuation mode and cost paid from each start mode.
type Resolved = Vec<(usize, f64)>;

/// Exhaustive search over Markov switching policies; each policy is valued
/// against the worst Markov drift from `u_grid`.
pub fn enumerate_policies(spec: &ProblemSpec, lat: &Lattice, u_grid: &[f64]) -> Result<OracleResult, OracleError> {
    enumerate_policies_with(spec, lat, u_grid, Execution::default())
}

pub fn enumerate_policies_with(
    spec: &ProblemSpec,
    lat: &Lattice,
    u_grid: &[f64],
    exec: Execution,
) -> Result<OracleResult, OracleError> {
    let probs = grid_probabilities(spec, lat, u_grid)?;
    let m = spec.mode_count();
    let steps = lat.steps();
    let profiles = acyclic_profiles(spec);
    let interior = nodes_through(steps - 1);
    let size = (profiles.len() as u128)
        .checked_pow(interior as u32)
        .unwrap_or(u128::MAX);
    if size > MAX_SEARCH_SPACE as u128 {
        return Err(OracleError::SearchSpaceTooLarge { size });
    }
    let size = size as u64;

    let mut inputs = Vec::with_capacity(interior);
    let mut resolved: Vec<Vec<Resolved>> = Vec::with_capacity(interior);
    for n in 0..steps {
        for k in 0..=n {
            let inp = node_inputs(spec, lat, n, k)?;
            let cost = |j: usize, i: usize| {
                inp.edges
                    .iter()
                    .find(|e| e.0 == j && e.1 == i)
                    .map(|e| e.2)
                    .expect("profile uses an allowed edge")
            };
            let per_profile = profiles
                .iter()
                .map(|prof| {
                    (0..m)
                        .map(|j| {
                            let (mut cur, mut paid) = (j, 0.0);
                            while let Some(next) = prof[cur] {
                                paid += cost(cur, next);
                                cur = next;
                            }
                            (cur, paid)
                        })
                        .collect()
                })
                .collect();
            resolved.push(per_profile);
            inputs.push(inp);
        }
    }
    let terminal: Vec<f64> = (0..=steps)
        .map(|k| terminal_row(spec, lat, k))
        .collect::<Result<Vec<_>, _>>()?
        .concat();

    // policy index = sum digit[node] * R^(interior - 1 - node): node 0 is the
    // most significant digit, so a smaller index is lexicographically smaller.
    let radix = profiles.len() as u64;
    let value_of = |digits: &[usize]| -> Vec<f64> {
        let mut next = terminal.clone();
        let mut cont = vec![0.0; m];
        for n in (0..steps).rev() {
            let mut cur = vec![0.0; (n + 1) * m];
            for k in 0..=n {
                let node = node_index(n, k);
                for j in 0..m {
                    let up = next[(k + 1) * m + j];
                    let dn = next[k * m + j];
                    let worst = probs
                        .iter()
                        .map(|p| p * up + (1.0 - p) * dn)
                        .fold(f64::INFINITY, f64::min);
                    cont[j] = inputs[node].running[j] + worst;
                }
                let res = &resolved[node][digits[node]];
                for j in 0..m {
                    let (end, paid) = res[j];
                    cur[k * m + j] = cont[end] - paid;
                }
            }
            next = cur;
        }
        next
    };

    const CHUNK: u64 = 2048;
    let chunks = size.div_ceil(CHUNK) as usize;
    let partial = exec.map(chunks, 1, |c| {
        let lo = c as u64 * CHUNK;
        let hi = (lo + CHUNK).min(size);
        let mut digits = vec![0usize; interior];
        let mut rest = lo;
        for d in digits.iter_mut().rev() {
            *d = (rest % radix) as usize;
            rest /= radix;
        }
        let mut best = vec![(f64::NEG_INFINITY, u64::MAX); m];
        for idx in lo..hi {
            let v = value_of(&digits);
            for j in 0..m {
                if v[j] > best[j].0 {
                    best[j] = (v[j], idx);
                }
            }
            for d in digits.iter_mut().rev() {
                *d += 1;
                if (*d as u64) < radix {
                    break;
                }
                *d = 0;
            }
        }
        best
    });
    let mut best = vec![(f64::NEG_INFINITY, u64::MAX); m];
    for chunk_best in partial {
        for j in 0..m {
            if chunk_best[j].0 > best[j].0 {
                best[j] = chunk_best[j];
            }
        }
    }

    let start = spec.start_mode();
    let mut digits = vec![0usize; interior];
    let mut rest = best[start].1;
    for d in digits.iter_mut().rev() {
        *d = (rest % radix) as usize;
        rest /= radix;
    }
    let mut policy = Policy::all_stay(m, steps);
    for n in 0..steps {
        for k in 0..=n {
            let prof = &profiles[digits[node_index(n, k)]];
            for (j, target) in prof.iter().enumerate() {
                if let Some(i) = target {
                    policy.set(n, k, j, Action::SwitchTo(*i));
                }
            }
        }
    }

    Ok(OracleResult {
        values: best.iter().map(|b| b.0).collect(),
        field: None,
        best_policy: Some(policy),
        grid_size: u_grid.len(),
        searched: size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::lattice::build_lattice;
    use crate::problem_model::{FactorKind, FactorModel, ModeSpec};

    fn two_mode(psi1: &str, psi2: &str, cost: f64, kappa: f64) -> ProblemSpec {
        let f = FactorModel::new(FactorKind::Arithmetic, 0.0, 0.0, 1.0).unwrap();
        ProblemSpec::new(
            1.0,
            0,
            vec![
                ModeSpec {
                    psi: psi1.parse().unwrap(),
                    xi: Expr::lit(0.0),
                },
                ModeSpec {
                    psi: psi2.parse().unwrap(),
                    xi: Expr::lit(0.0),
                },
            ],
            vec![(0, 1, Expr::lit(cost)), (1, 0, Expr::lit(cost))],
            f,
            AmbiguityModel::kappa(kappa).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn profiles_exclude_cycles() {
        let spec = two_mode("0", "1", 0.1, 0.0);
        let p = acyclic_profiles(&spec);
        assert_eq!(p, vec![vec![None, None], vec![None, Some(0)], vec![Some(1), None]]);
    }

    #[test]
    fn deterministic_example() {
        let spec = two_mode("0", "1", 0.1, 0.0);
        let lat = build_lattice(spec.factor(), 1.0, 3).unwrap();
        let dp = game_dp(&spec, &lat, &[0.0]).unwrap();
        assert!((dp.values[0] - 0.9).abs() < 1e-12);
        assert!((dp.values[1] - 1.0).abs() < 1e-12);
        let en = enumerate_policies(&spec, &lat, &[0.0]).unwrap();
        assert_eq!(en.searched, 3u64.pow(6));
        assert!((en.values[0] - 0.9).abs() < 1e-12);
        let best = en.best_policy.unwrap();
        assert_eq!(best.action(0, 0, 0), Action::SwitchTo(1));
    }

    #[test]
    fn linear_terminal_single_mode() {
        let f = FactorModel::new(FactorKind::Arithmetic, 0.0, 0.0, 1.0).unwrap();
        let spec = ProblemSpec::new(
            1.0,
            0,
            vec![ModeSpec {
                psi: Expr::lit(0.0),
                xi: Expr::x(),
            }],
            vec![],
            f,
            AmbiguityModel::kappa(0.5).unwrap(),
        )
        .unwrap();
        let lat = build_lattice(spec.factor(), 1.0, 4).unwrap();
        let dp = game_dp(&spec, &lat, &[-0.5, 0.0, 0.5]).unwrap();
        assert!((dp.values[0] + 0.5).abs() < 1e-12);
        let en = enumerate_policies(&spec, &lat, &[-0.5, 0.5]).unwrap();
        assert_eq!(en.searched, 1);
        assert!((en.values[0] - dp.values[0]).abs() < 1e-12);
    }

    #[test]
    fn grid_checks() {
        let spec = two_mode("x", "0", 0.3, 0.5);
        let lat = build_lattice(spec.factor(), 1.0, 4).unwrap();
        assert!(matches!(
            game_dp(&spec, &lat, &[-0.5, 0.0]),
            Err(OracleError::GridMissingExtremes(_))
        ));
        assert!(matches!(
            game_dp(&spec, &lat, &[-0.5, 0.7, 0.5]),
            Err(OracleError::GridOutsideSet(_))
        ));
        let coarse = two_mode("x", "0", 0.3, 3.0);
        assert!(matches!(
            game_dp(&coarse, &lat, &[-3.0, 3.0]),
            Err(OracleError::StepTooCoarse { .. })
        ));
    }

    #[test]
    fn search_space_guard() {
        let spec = two_mode("x", "0", 0.3, 0.5);
        let lat = build_lattice(spec.factor(), 1.0, 5).unwrap();
        assert!(matches!(
            enumerate_policies(&spec, &lat, &[-0.5, 0.5]),
            Err(OracleError::SearchSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn larger_grid_never_raises_value() {
        let spec = two_mode("x", "0.1 - x", 0.25, 0.6);
        let lat = build_lattice(spec.factor(), 1.0, 8).unwrap();
        let small = game_dp(&spec, &lat, &[-0.6, 0.6]).unwrap();
        let large = game_dp(&spec, &lat, &[-0.6, -0.2, 0.0, 0.3, 0.6]).unwrap();
        for j in 0..2 {
            assert!(large.values[j] <= small.values[j] + 1e-12);
        }
    }

    #[test]
    fn sequential_and_parallel_enumeration_agree() {
        let spec = two_mode("x", "0.1 - x", 0.25, 0.6);
        let lat = build_lattice(spec.factor(), 1.0, 4).unwrap();
        let a = enumerate_policies_with(&spec, &lat, &[-0.6, 0.0, 0.6], Execution::Sequential).unwrap();
        let b = enumerate_policies_with(&spec, &lat, &[-0.6, 0.0, 0.6], Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
