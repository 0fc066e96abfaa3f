//! Yield of a policy/drift pair: exact expectation on the lattice and Monte
//! Carlo under the drifted dynamics.
//!
//! Running utility accrues by the left-endpoint rule `psi(t_n, x_n) * dt` and a
//! switch at step `n < N` pays `c(t_n, x_n)`. The terminal reward of the final
//! mode is added at `T`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::{pairwise_sum, Execution};
use crate::lattice::{check_step_size, controlled_up_probability, Lattice, LatticeError, Move};
use crate::problem_model::{NodeEvalError, NodeTables, ProblemSpec};
use crate::strategy::{realize_strategy, ControlTable, Policy, StrategyError, SwitchingStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethod {
    Exact,
    MonteCarlo,
}

impl EvalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMethod::Exact => "exact",
            EvalMethod::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub estimate: f64,
    pub stderr: f64,
    pub method: EvalMethod,
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Eval(#[from] NodeEvalError),
    #[error("policy or control table does not match the problem ({0})")]
    Mismatch(&'static str),
    #[error("at least one path is required")]
    NoPaths,
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::Lattice(LatticeError::StepTooCoarse { .. }) => "StepTooCoarse",
            EvalError::Lattice(_) => "LatticeError",
            EvalError::Strategy(StrategyError::InstantaneousCycle { .. }) => "InstantaneousCycle",
            EvalError::Strategy(_) => "StrategyError",
            EvalError::Eval(_) => "EvalError",
            EvalError::Mismatch(_) => "Mismatch",
            EvalError::NoPaths => "NoPaths",
        }
    }
}

fn check_shapes(spec: &ProblemSpec, lat: &Lattice, pol: &Policy, ctl: Option<&ControlTable>) -> Result<(), EvalError> {
    let m = spec.mode_count();
    if pol.modes() != m || pol.steps() != lat.steps() {
        return Err(EvalError::Mismatch("policy shape"));
    }
    if !pol.respects(spec) {
        return Err(EvalError::Mismatch("policy switches outside the switch sets"));
    }
    if let Some(ctl) = ctl {
        if ctl.modes() != m || ctl.steps() != lat.steps() {
            return Err(EvalError::Mismatch("control table shape"));
        }
    }
    Ok(())
}

/// Backward induction of the policy's value under a chosen continuation
/// rule. `step(n, k, mode, up, down)` returns the controlled expectation.
fn policy_value<F>(
    spec: &ProblemSpec,
    lat: &Lattice,
    tabs: &NodeTables,
    pol: &Policy,
    mut step: F,
) -> Result<Vec<f64>, EvalError>
where
    F: FnMut(usize, usize, usize, f64, f64) -> Result<f64, EvalError>,
{
    let m = spec.mode_count();
    let steps = lat.steps();
    let dt = lat.dt();
    let mut next: Vec<f64> = (0..=steps).flat_map(|k| tabs.terminal(k).to_vec()).collect();
    let mut cont = vec![0.0; m];
    for n in (0..steps).rev() {
        let mut cur = vec![0.0; (n + 1) * m];
        for k in 0..=n {
            let psi = tabs.psi(n, k);
            for j in 0..m {
                let e = step(n, k, j, next[(k + 1) * m + j], next[k * m + j])?;
                cont[j] = psi[j] * dt + e;
            }
            let costs = tabs.costs(n, k);
            for j in 0..m {
                let (end, chain) = pol.resolve(n, k, j)?;
                let mut from = j;
                let mut paid = 0.0;
                for to in chain {
                    paid += costs[from * m + to];
                    from = to;
                }
                cur[k * m + j] = cont[end] - paid;
            }
        }
        next = cur;
    }
    Ok(next)
}

/// Exact `E^u[ sum psi dt - switching costs + xi ]` by backward induction.
pub fn evaluate_exact(
    spec: &ProblemSpec,
    lat: &Lattice,
    pol: &Policy,
    ctl: &ControlTable,
) -> Result<EvalReport, EvalError> {
    check_shapes(spec, lat, pol, Some(ctl))?;
    let tabs = NodeTables::build(spec, lat, Execution::Sequential)?;
    let amb = spec.ambiguity();
    let root = policy_value(spec, lat, &tabs, pol, |n, k, j, up, dn| {
        let p = controlled_up_probability(lat, amb, ctl.drift(n, k, j), lat.time(n), lat.state(n, k))?;
        Ok(p * up + (1.0 - p) * dn)
    })?;
    Ok(EvalReport {
        estimate: root[spec.start_mode()],
        stderr: 0.0,
        method: EvalMethod::Exact,
        paths: 0,
        seed: 0,
    })
}

/// Value of the policy against the worst Markov drift drawn from `grid`
/// (node-wise minimum, which is exact because the inner problem decouples).
pub fn evaluate_worst_on_grid(
    spec: &ProblemSpec,
    lat: &Lattice,
    pol: &Policy,
    grid: &[f64],
) -> Result<EvalReport, EvalError> {
    check_shapes(spec, lat, pol, None)?;
    let tabs = NodeTables::build(spec, lat, Execution::Sequential)?;
    let amb = spec.ambiguity();
    let probs: Vec<f64> = grid
        .iter()
        .map(|&u| controlled_up_probability(lat, amb, u, 0.0, 0.0))
        .collect::<Result<_, _>>()?;
    let root = policy_value(spec, lat, &tabs, pol, |_, _, _, up, dn| {
        Ok(probs
            .iter()
            .map(|p| p * up + (1.0 - p) * dn)
            .fold(f64::INFINITY, f64::min))
    })?;
    Ok(EvalReport {
        estimate: root[spec.start_mode()],
        stderr: 0.0,
        method: EvalMethod::Exact,
        paths: 0,
        seed: 0,
    })
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub moves: Vec<Move>,
    /// Factor values `x_0..x_N` along the path.
    pub states: Vec<f64>,
    pub strategy: SwitchingStrategy,
    /// `sum psi dt` over the path.
    pub running: f64,
    /// Total switching cost paid before `T`.
    pub switching_cost: f64,
    pub terminal: f64,
    pub payoff: f64,
    /// Density of the drifted measure against the reference one (diagnostic).
    pub weight: f64,
}

/// Reusable sampler holding the node tables of one problem/lattice pair.
pub struct PathSimulator<'a> {
    spec: &'a ProblemSpec,
    lat: &'a Lattice,
    pol: &'a Policy,
    ctl: &'a ControlTable,
    tabs: NodeTables,
}

impl<'a> PathSimulator<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        lat: &'a Lattice,
        pol: &'a Policy,
        ctl: &'a ControlTable,
        exec: Execution,
    ) -> Result<Self, EvalError> {
        check_shapes(spec, lat, pol, Some(ctl))?;
        check_step_size(lat, spec.ambiguity())?;
        let tabs = NodeTables::build(spec, lat, exec)?;
        Ok(PathSimulator {
            spec,
            lat,
            pol,
            ctl,
            tabs,
        })
    }

    /// Payoff only, without recording the path.
    pub fn payoff<R: Rng>(&self, rng: &mut R) -> Result<f64, EvalError> {
        let m = self.spec.mode_count();
        let steps = self.lat.steps();
        let dt = self.lat.dt();
        let amb = self.spec.ambiguity();
        let mut mode = self.spec.start_mode();
        let mut k = 0;
        let mut running = 0.0;
        let mut cost = 0.0;
        for n in 0..steps {
            let (end, chain) = self.pol.resolve(n, k, mode)?;
            let costs = self.tabs.costs(n, k);
            let mut from = mode;
            for to in chain {
                cost += costs[from * m + to];
                from = to;
            }
            mode = end;
            running += self.tabs.psi(n, k)[mode] * dt;
            let u = self.ctl.drift(n, k, mode);
            let p = controlled_up_probability(self.lat, amb, u, self.lat.time(n), self.lat.state(n, k))?;
            if rng.random::<f64>() < p {
                k += 1;
            }
        }
        Ok(running - cost + self.tabs.terminal(k)[mode])
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<PathSample, EvalError> {
        let m = self.spec.mode_count();
        let steps = self.lat.steps();
        let dt = self.lat.dt();
        let amb = self.spec.ambiguity();
        let mut mode = self.spec.start_mode();
        let mut k = 0;
        let mut moves = Vec::with_capacity(steps);
        let mut states = Vec::with_capacity(steps + 1);
        let mut running = 0.0;
        let mut cost = 0.0;
        let mut weight = 1.0;
        for n in 0..steps {
            states.push(self.lat.state(n, k));
            let (end, chain) = self.pol.resolve(n, k, mode)?;
            let costs = self.tabs.costs(n, k);
            let mut from = mode;
            for to in chain {
                cost += costs[from * m + to];
                from = to;
            }
            mode = end;
            running += self.tabs.psi(n, k)[mode] * dt;
            let u = self.ctl.drift(n, k, mode);
            let p = controlled_up_probability(self.lat, amb, u, self.lat.time(n), self.lat.state(n, k))?;
            if rng.random::<f64>() < p {
                moves.push(Move::Up);
                weight *= 2.0 * p;
                k += 1;
            } else {
                moves.push(Move::Down);
                weight *= 2.0 * (1.0 - p);
            }
        }
        states.push(self.lat.state(steps, k));
        let strategy = realize_strategy(self.pol, &moves, self.spec.start_mode())?;
        let terminal = self.tabs.terminal(k)[mode];
        Ok(PathSample {
            moves,
            states,
            strategy,
            running,
            switching_cost: cost,
            terminal,
            payoff: running - cost + terminal,
            weight,
        })
    }
}

/// Random stream for path `index` under `seed`.
pub fn path_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates one path with the given random stream.
pub fn simulate_path<R: Rng>(
    spec: &ProblemSpec,
    lat: &Lattice,
    pol: &Policy,
    ctl: &ControlTable,
    stream: &mut R,
) -> Result<PathSample, EvalError> {
    PathSimulator::new(spec, lat, pol, ctl, Execution::Sequential)?.sample(stream)
}

pub fn evaluate_mc(
    spec: &ProblemSpec,
    lat: &Lattice,
    pol: &Policy,
    ctl: &ControlTable,
    paths: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    evaluate_mc_with(spec, lat, pol, ctl, paths, seed, Execution::default())
}

/// Monte Carlo estimate under the drifted measure; path `p` uses
/// [`path_stream`]`(seed, p)`, so the result does not depend on scheduling.
pub fn evaluate_mc_with(
    spec: &ProblemSpec,
    lat: &Lattice,
    pol: &Policy,
    ctl: &ControlTable,
    paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    if paths == 0 {
        return Err(EvalError::NoPaths);
    }
    let sim = PathSimulator::new(spec, lat, pol, ctl, exec)?;
    let payoffs = exec.try_map(paths, 1024, |p| sim.payoff(&mut path_stream(seed, p as u64)))?;
    let (estimate, stderr) = mean_and_stderr(&payoffs);
    Ok(EvalReport {
        estimate,
        stderr,
        method: EvalMethod::MonteCarlo,
        paths,
        seed,
    })
}

/// Sample mean and standard error, computed on values shifted by the first
/// sample so that identical samples give an exactly zero error.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let shift = values[0];
    let shifted: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let mean_shifted = pairwise_sum(&shifted) / n as f64;
    if n < 2 {
        return (shift + mean_shifted, 0.0);
    }
    let sq: Vec<f64> = shifted
        .iter()
        .map(|d| (d - mean_shifted) * (d - mean_shifted))
        .collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (shift + mean_shifted, (var / n as f64).sqrt())
}
