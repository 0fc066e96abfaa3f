//! Switching policies, worst-case controls and their realization on paths.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ambiguity::hstar;
use crate::lattice::{node_index, nodes_through, Lattice, Move};
use crate::problem_model::{NodeEvalError, ProblemSpec};
use crate::solver::SolutionField;

pub const DEFAULT_SWITCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Stay,
    SwitchTo(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("instantaneous switching cycle through mode {} at step {step}", mode + 1)]
    InstantaneousCycle { step: usize, mode: usize },
    #[error("path has {got} moves, lattice has {expected} steps")]
    PathLength { expected: usize, got: usize },
}

/// Markov action table over `(n, k, mode)`; every action on layer `N` is `Stay`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    modes: usize,
    steps: usize,
    actions: Vec<Action>,
}

impl Policy {
    pub fn all_stay(modes: usize, steps: usize) -> Self {
        Policy {
            modes,
            steps,
            actions: vec![Action::Stay; nodes_through(steps) * modes],
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn action(&self, n: usize, k: usize, mode: usize) -> Action {
        self.actions[node_index(n, k) * self.modes + mode]
    }

    pub fn set(&mut self, n: usize, k: usize, mode: usize, action: Action) {
        assert!(
            n < self.steps || action == Action::Stay,
            "no switching on the terminal layer"
        );
        if let Action::SwitchTo(i) = action {
            assert!(i != mode && i < self.modes, "bad switch target");
        }
        self.actions[node_index(n, k) * self.modes + mode] = action;
    }

    /// Follows the switch chain starting in `mode` at node `(n, k)`.
    ///
    /// Returns the mode in which the process continues and the visited
    /// targets in order.
    pub fn resolve(&self, n: usize, k: usize, mode: usize) -> Result<(usize, Vec<usize>), StrategyError> {
        let mut current = mode;
        let mut visited = vec![mode];
        while let Action::SwitchTo(next) = self.action(n, k, current) {
            if visited.contains(&next) {
                return Err(StrategyError::InstantaneousCycle { step: n, mode: next });
            }
            visited.push(next);
            current = next;
        }
        visited.remove(0);
        Ok((current, visited))
    }

    pub fn is_all_stay(&self) -> bool {
        self.actions.iter().all(|a| *a == Action::Stay)
    }

    /// True when every switch target is allowed by the problem's switch sets.
    pub fn respects(&self, spec: &ProblemSpec) -> bool {
        self.actions.chunks(self.modes).all(|node| {
            node.iter().enumerate().all(|(j, a)| match a {
                Action::Stay => true,
                Action::SwitchTo(i) => spec.switch_set(j).contains(i),
            })
        })
    }
}

/// `(step, mode)` pairs: the start followed by every switch in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchingStrategy {
    pub switches: Vec<(usize, usize)>,
}

impl SwitchingStrategy {
    pub fn switch_count(&self) -> usize {
        self.switches.len() - 1
    }

    pub fn final_mode(&self) -> usize {
        self.switches.last().expect("strategy has a start").1
    }

    /// Checks ordering and that each switch is allowed from the previous mode.
    pub fn is_admissible(&self, spec: &ProblemSpec) -> bool {
        self.switches.windows(2).all(|w| {
            let ((s0, from), (s1, to)) = (w[0], w[1]);
            s0 <= s1 && spec.switch_set(from).contains(&to)
        })
    }
}

/// Drift applied at each `(n, k, mode)` for `n < N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTable {
    modes: usize,
    steps: usize,
    drifts: Vec<f64>,
}

impl ControlTable {
    pub fn constant(modes: usize, steps: usize, u: f64) -> Self {
        ControlTable {
            modes,
            steps,
            drifts: vec![u; nodes_through(steps - 1) * modes],
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn drift(&self, n: usize, k: usize, mode: usize) -> f64 {
        self.drifts[node_index(n, k) * self.modes + mode]
    }

    pub fn set(&mut self, n: usize, k: usize, mode: usize, u: f64) {
        self.drifts[node_index(n, k) * self.modes + mode] = u;
    }

    pub fn values(&self) -> &[f64] {
        &self.drifts
    }
}

/// Switch wherever a mode's value sits on its obstacle (within `tol`), to the
/// smallest-index target attaining the maximum.
pub fn extract_policy(
    spec: &ProblemSpec,
    lat: &Lattice,
    sol: &SolutionField,
    tol: f64,
) -> Result<Policy, NodeEvalError> {
    let m = spec.mode_count();
    let steps = lat.steps();
    let mut policy = Policy::all_stay(m, steps);
    for n in 0..steps {
        for k in 0..=n {
            let costs = spec
                .costs_at(lat.time(n), lat.state(n, k))
                .map_err(|(j, i, source)| NodeEvalError {
                    what: format!("cost {}->{}", j + 1, i + 1),
                    n,
                    k,
                    source,
                })?;
            let y = sol.y_node(n, k);
            for j in 0..m {
                let mut best: Option<(usize, f64)> = None;
                for &i in spec.switch_set(j) {
                    let v = y[i] - costs.raw(j, i);
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
                if let Some((target, obstacle)) = best {
                    if y[j] <= obstacle + tol {
                        policy.set(n, k, j, Action::SwitchTo(target));
                    }
                }
            }
        }
    }
    Ok(policy)
}

/// Minimizing drift of the lower Hamiltonian at each node's `Z`.
pub fn worst_control(spec: &ProblemSpec, lat: &Lattice, sol: &SolutionField) -> ControlTable {
    let m = spec.mode_count();
    let steps = lat.steps();
    let mut table = ControlTable::constant(m, steps, 0.0);
    for n in 0..steps {
        for k in 0..=n {
            for j in 0..m {
                let r = hstar(spec.ambiguity(), lat.time(n), lat.state(n, k), sol.z(j, n, k));
                table.set(n, k, j, r.minimizer);
            }
        }
    }
    table
}

/// Walks `path` from the root, applying the policy's switch chains at every step.
pub fn realize_strategy(policy: &Policy, path: &[Move], start_mode: usize) -> Result<SwitchingStrategy, StrategyError> {
    if path.len() != policy.steps() {
        return Err(StrategyError::PathLength {
            expected: policy.steps(),
            got: path.len(),
        });
    }
    let ks = Lattice::walk(path);
    let mut switches = vec![(0, start_mode)];
    let mut mode = start_mode;
    for (n, &k) in ks.iter().enumerate() {
        let (end, chain) = policy.resolve(n, k, mode)?;
        switches.extend(chain.into_iter().map(|i| (n, i)));
        mode = end;
    }
    Ok(SwitchingStrategy { switches })
}

/// Probability that [`random_policy`] switches at a given `(n, k, mode)`.
pub const RANDOM_SWITCH_PROBABILITY: f64 = 0.1;

/// Seeded random policy: each `(n, k, mode)` with a non-empty switch set
/// switches with probability 0.1 to a uniform target. A draw that would close
/// an instantaneous cycle at its node is replaced by `Stay`.
pub fn random_policy(spec: &ProblemSpec, lat: &Lattice, seed: u64) -> Policy {
    let m = spec.mode_count();
    let steps = lat.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = Policy::all_stay(m, steps);
    for n in 0..steps {
        for k in 0..=n {
            for j in 0..m {
                let targets = spec.switch_set(j);
                if targets.is_empty() {
                    continue;
                }
                let switch = rng.random_bool(RANDOM_SWITCH_PROBABILITY);
                let target = *targets.choose(&mut rng).expect("non-empty");
                if switch {
                    policy.set(n, k, j, Action::SwitchTo(target));
                    if policy.resolve(n, k, j).is_err() {
                        policy.set(n, k, j, Action::Stay);
                    }
                }
            }
        }
    }
    policy
}

/// Seeded control table drawing each entry uniformly from `grid`.
pub fn random_control(spec: &ProblemSpec, lat: &Lattice, grid: &[f64], seed: u64) -> ControlTable {
    assert!(!grid.is_empty(), "control grid must be non-empty");
    let m = spec.mode_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = ControlTable::constant(m, lat.steps(), 0.0);
    for d in table.drifts.iter_mut() {
        *d = *grid.choose(&mut rng).expect("non-empty");
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::AmbiguityModel;
    use crate::expr::Expr;
    use crate::lattice::build_lattice;
    use crate::problem_model::{FactorKind, FactorModel, ModeSpec};
    use crate::solver::solve_direct;

    fn two_mode(psi2: f64, cost: f64, kappa: f64, vol_x: bool) -> ProblemSpec {
        let f = FactorModel::new(FactorKind::Arithmetic, 0.0, 0.0, 1.0).unwrap();
        ProblemSpec::new(
            1.0,
            0,
            vec![
                ModeSpec {
                    psi: if vol_x { Expr::x() } else { Expr::lit(0.0) },
                    xi: Expr::lit(0.0),
                },
                ModeSpec {
                    psi: Expr::lit(psi2),
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
    fn expensive_switching_means_stay() {
        let spec = two_mode(1.0, 100.0, 0.2, true);
        let lat = build_lattice(spec.factor(), 1.0, 8).unwrap();
        let sol = solve_direct(&spec, &lat).unwrap();
        let pol = extract_policy(&spec, &lat, &sol, DEFAULT_SWITCH_TOL).unwrap();
        assert!(pol.is_all_stay());
    }

    #[test]
    fn deterministic_example_switches_at_start() {
        let spec = two_mode(1.0, 0.1, 0.0, false);
        let lat = build_lattice(spec.factor(), 1.0, 10).unwrap();
        let sol = solve_direct(&spec, &lat).unwrap();
        let pol = extract_policy(&spec, &lat, &sol, DEFAULT_SWITCH_TOL).unwrap();
        assert_eq!(pol.action(0, 0, 0), Action::SwitchTo(1));
        assert_eq!(pol.action(0, 0, 1), Action::Stay);
        let path = vec![Move::Up; 10];
        let s = realize_strategy(&pol, &path, 0).unwrap();
        assert_eq!(s.switches, vec![(0, 0), (0, 1)]);
        assert!(s.is_admissible(&spec));
    }

    #[test]
    fn ties_pick_smallest_target() {
        let f = FactorModel::new(FactorKind::Arithmetic, 0.0, 0.0, 1.0).unwrap();
        let modes = vec![
            ModeSpec {
                psi: Expr::lit(0.0),
                xi: Expr::lit(0.0),
            },
            ModeSpec {
                psi: Expr::lit(1.0),
                xi: Expr::lit(0.0),
            },
            ModeSpec {
                psi: Expr::lit(1.0),
                xi: Expr::lit(0.0),
            },
        ];
        let mut costs = Vec::new();
        for j in 0..3 {
            for i in 0..3 {
                if i != j {
                    costs.push((j, i, Expr::lit(0.2)));
                }
            }
        }
        let spec = ProblemSpec::new(1.0, 0, modes, costs, f, AmbiguityModel::kappa(0.0).unwrap()).unwrap();
        let lat = build_lattice(spec.factor(), 1.0, 4).unwrap();
        let sol = solve_direct(&spec, &lat).unwrap();
        assert_eq!(sol.y(1, 0, 0), sol.y(2, 0, 0));
        let pol = extract_policy(&spec, &lat, &sol, DEFAULT_SWITCH_TOL).unwrap();
        assert_eq!(pol.action(0, 0, 0), Action::SwitchTo(1));
    }

    #[test]
    fn worst_control_follows_sign_of_z() {
        let spec = two_mode(0.5, 0.3, 0.4, true);
        let lat = build_lattice(spec.factor(), 1.0, 6).unwrap();
        let sol = solve_direct(&spec, &lat).unwrap();
        let ctl = worst_control(&spec, &lat, &sol);
        for n in 0..6 {
            for k in 0..=n {
                for j in 0..2 {
                    let z = sol.z(j, n, k);
                    let expected = if z > 0.0 {
                        -0.4
                    } else if z < 0.0 {
                        0.4
                    } else {
                        0.0
                    };
                    assert_eq!(ctl.drift(n, k, j), expected);
                    let h = crate::ambiguity::hamiltonian(spec.ambiguity(), 0.0, 0.0, ctl.drift(n, k, j), z).unwrap();
                    assert_eq!(h, hstar(spec.ambiguity(), 0.0, 0.0, z).value);
                }
            }
        }
        // constant utility in mode 2 with zero terminal gives Z = 0 there
        let flat = two_mode(0.5, 100.0, 0.4, false);
        let sol = solve_direct(&flat, &lat).unwrap();
        assert_eq!(worst_control(&flat, &lat, &sol).drift(2, 1, 1), 0.0);
    }

    #[test]
    fn finite_set_worst_control() {
        let spec = two_mode(0.5, 0.3, 0.0, true).with_ambiguity(AmbiguityModel::finite(vec![-0.3, 0.1]).unwrap());
        let lat = build_lattice(spec.factor(), 1.0, 6).unwrap();
        let sol = solve_direct(&spec, &lat).unwrap();
        let ctl = worst_control(&spec, &lat, &sol);
        for n in 0..6 {
            for k in 0..=n {
                let z = sol.z(0, n, k);
                let expected = if z > 0.0 {
                    -0.3
                } else if z < 0.0 {
                    0.1
                } else {
                    -0.3
                };
                assert_eq!(ctl.drift(n, k, 0), expected);
            }
        }
    }

    #[test]
    fn realize_single_switch_and_stay() {
        let mut pol = Policy::all_stay(2, 5);
        let path = [Move::Up, Move::Down, Move::Up, Move::Up, Move::Down];
        assert_eq!(realize_strategy(&pol, &path, 1).unwrap().switches, vec![(0, 1)]);
        // after 3 moves (U, D, U) the walk sits on k = 2
        pol.set(3, 2, 0, Action::SwitchTo(1));
        let s = realize_strategy(&pol, &path, 0).unwrap();
        assert_eq!(s.switches, vec![(0, 0), (3, 1)]);
        assert_eq!(s.final_mode(), 1);
        assert_eq!(s.switch_count(), 1);
    }

    #[test]
    fn realize_detects_cycles_and_bad_paths() {
        let mut pol = Policy::all_stay(2, 3);
        pol.set(1, 0, 0, Action::SwitchTo(1));
        pol.set(1, 0, 1, Action::SwitchTo(0));
        let err = realize_strategy(&pol, &[Move::Down; 3], 0).unwrap_err();
        assert_eq!(err, StrategyError::InstantaneousCycle { step: 1, mode: 0 });
        assert!(matches!(
            realize_strategy(&pol, &[Move::Down; 2], 0),
            Err(StrategyError::PathLength { .. })
        ));
    }

    #[test]
    fn multiple_instantaneous_switches_are_followed() {
        let mut pol = Policy::all_stay(3, 2);
        pol.set(0, 0, 0, Action::SwitchTo(1));
        pol.set(0, 0, 1, Action::SwitchTo(2));
        let s = realize_strategy(&pol, &[Move::Up, Move::Up], 0).unwrap();
        assert_eq!(s.switches, vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn random_policy_properties() {
        let absorbing = two_mode(1.0, 0.3, 0.2, true);
        let lat = build_lattice(absorbing.factor(), 1.0, 8).unwrap();
        let a = random_policy(&absorbing, &lat, 7);
        assert_eq!(a, random_policy(&absorbing, &lat, 7));
        assert!(a.respects(&absorbing));
        let mut differing = 0;
        for s in 0..10u64 {
            if random_policy(&absorbing, &lat, 2 * s) != random_policy(&absorbing, &lat, 2 * s + 1) {
                differing += 1;
            }
        }
        assert_eq!(differing, 10);
        // every node's chains are acyclic
        for n in 0..8 {
            for k in 0..=n {
                for j in 0..2 {
                    assert!(a.resolve(n, k, j).is_ok());
                }
            }
        }

        let f = FactorModel::new(FactorKind::Arithmetic, 0.0, 0.0, 1.0).unwrap();
        let lone = ProblemSpec::new(
            1.0,
            0,
            vec![
                ModeSpec {
                    psi: Expr::lit(0.0),
                    xi: Expr::lit(0.0),
                };
                2
            ],
            vec![],
            f,
            AmbiguityModel::kappa(0.1).unwrap(),
        )
        .unwrap();
        for seed in 0..5 {
            assert!(random_policy(&lone, &lat, seed).is_all_stay());
        }
    }

    #[test]
    fn random_control_uses_grid() {
        let spec = two_mode(1.0, 0.3, 0.5, true);
        let lat = build_lattice(spec.factor(), 1.0, 6).unwrap();
        let grid = [-0.5, 0.0, 0.5];
        let c = random_control(&spec, &lat, &grid, 3);
        assert_eq!(c, random_control(&spec, &lat, &grid, 3));
        assert!(c.values().iter().all(|u| grid.contains(u)));
        assert!(grid.iter().all(|g| c.values().contains(g)));
    }
}
