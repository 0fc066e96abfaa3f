//! Optimal multi-mode switching under drift ambiguity.
//!
//! A problem (running utilities, terminal rewards and switching costs per mode,
//! a one-factor state process and a set of drift priors) is discretized on a
//! recombining binomial lattice. The value of the robust switching problem is
//! the solution of a discrete system of reflected backward equations with
//! interconnected obstacles, computed by [`solver::solve_direct`] or by Picard
//! iteration ([`solver::solve_picard`]). From a solution one extracts the
//! optimal switching policy and the worst-case drift ([`strategy`]) and can
//! evaluate any policy/drift pair exactly or by Monte Carlo ([`evaluator`]).
//! [`oracle`] holds brute-force verifiers that share no code with the solver.

pub mod ambiguity;
pub mod evaluator;
pub mod exec;
pub mod expr;
pub mod fixtures;
pub mod lattice;
pub mod oracle;
pub mod output;
pub mod problem_model;
pub mod solver;
pub mod strategy;

pub use ambiguity::{hamiltonian, hstar, AmbiguityModel, HamiltonianResult};
pub use evaluator::{evaluate_exact, evaluate_mc, simulate_path, EvalReport, PathSample};
pub use exec::Execution;
pub use expr::Expr;
pub use lattice::{build_lattice, controlled_up_probability, Lattice, Move};
pub use oracle::{enumerate_policies, game_dp, OracleResult};
pub use problem_model::{load_spec, validate, FactorKind, FactorModel, ProblemSpec, ValidationReport};
pub use solver::{reflect_layer, solve_direct, solve_picard, SolutionField};
pub use strategy::{extract_policy, random_policy, realize_strategy, worst_control, ControlTable, Policy};
