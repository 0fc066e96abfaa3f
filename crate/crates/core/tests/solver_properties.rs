use proptest::prelude::*;

use switchgame::expr::Expr;
use switchgame::fixtures::random_spec;
use switchgame::lattice::{build_lattice, Lattice};
use switchgame::oracle::{default_grid, game_dp_with};
use switchgame::problem_model::{ModeSpec, ProblemSpec};
use switchgame::solver::{solve_direct, solve_direct_with, solve_picard};
use switchgame::Execution;

fn lattice(spec: &ProblemSpec, steps: usize) -> Lattice {
    build_lattice(spec.factor(), spec.horizon(), steps).unwrap()
}

fn shifted(spec: &ProblemSpec, psi: f64, xi: f64) -> ProblemSpec {
    spec.clone().map_modes(|_, m| ModeSpec {
        psi: Expr::Add(Box::new(m.psi), Box::new(Expr::Lit(psi))),
        xi: Expr::Add(Box::new(m.xi), Box::new(Expr::Lit(xi))),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn values_dominate_obstacles(seed in 0u64..10_000, modes in 1usize..5, steps in 2usize..30) {
        let spec = random_spec(seed, modes);
        let lat = lattice(&spec, steps);
        let sol = solve_direct(&spec, &lat).unwrap();
        for n in 0..=steps {
            for k in 0..=n {
                let costs = spec.costs_at(lat.time(n), lat.state(n, k)).unwrap();
                for j in 0..modes {
                    for &i in spec.switch_set(j) {
                        prop_assert!(sol.y(j, n, k) >= sol.y(i, n, k) - costs.get(j, i).unwrap() - 1e-12);
                    }
                    if n < steps {
                        prop_assert!(sol.dk(j, n, k) >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn matches_game_recursion(seed in 0u64..10_000, modes in 1usize..5, steps in 2usize..25) {
        let spec = random_spec(seed, modes);
        let lat = lattice(&spec, steps);
        let sol = solve_direct(&spec, &lat).unwrap();
        let dp = game_dp_with(&spec, &lat, &default_grid(spec.ambiguity()), Execution::Sequential).unwrap();
        for j in 0..modes {
            prop_assert!((sol.value(j) - dp.values[j]).abs() <= 1e-10);
        }
    }

    #[test]
    fn adding_a_constant_shifts_every_value(seed in 0u64..10_000, modes in 1usize..5, c in -1.0f64..1.0) {
        let spec = random_spec(seed, modes);
        let steps = 15;
        let lat = lattice(&spec, steps);
        let base = solve_direct(&spec, &lat).unwrap();
        // running reward c over [0, T] plus terminal c
        let moved = solve_direct(&shifted(&spec, c, c), &lat).unwrap();
        let expected = c * (1.0 + spec.horizon());
        for j in 0..modes {
            prop_assert!((moved.value(j) - base.value(j) - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn lipschitz_in_the_data(seed in 0u64..10_000, modes in 1usize..5, eps in 0.0f64..0.05) {
        let spec = random_spec(seed, modes);
        let lat = lattice(&spec, 12);
        let base = solve_direct(&spec, &lat).unwrap();
        let target = spec.start_mode();
        let bumped = spec.clone().map_modes(|j, m| if j == target {
            ModeSpec { psi: Expr::Add(Box::new(m.psi), Box::new(Expr::Lit(eps))), xi: m.xi }
        } else { m });
        let other = solve_direct(&bumped, &lat).unwrap();
        prop_assert!(base.max_abs_diff(&other) <= eps * spec.horizon() + 1e-12);
    }

    #[test]
    fn picard_reaches_direct_solution(seed in 0u64..10_000, modes in 1usize..5, steps in 2usize..20) {
        let spec = random_spec(seed, modes);
        let lat = lattice(&spec, steps);
        let direct = solve_direct(&spec, &lat).unwrap();
        let pic = solve_picard(&spec, &lat, 1e-12, 100).unwrap();
        prop_assert!(pic.trace.iter().all(|s| s.min_increment >= -1e-12));
        prop_assert!(pic.field.max_abs_diff(&direct) <= 1e-9);
    }
}

/// Refining the lattice does not make the root value jump: consecutive
/// refinements move it by less and less.
#[test]
fn root_value_settles_under_refinement() {
    let spec = switchgame::fixtures::load(switchgame::fixtures::THREE_MODE);
    let values: Vec<f64> = [25, 50, 100, 200]
        .iter()
        .map(|&n| {
            solve_direct(&spec, &lattice(&spec, n))
                .unwrap()
                .value(spec.start_mode())
        })
        .collect();
    let deltas: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(deltas.last().unwrap() < &deltas[0], "{deltas:?}");
    assert!(deltas.last().unwrap() < &1e-2);
}

#[test]
fn execution_modes_agree_bitwise() {
    for seed in 0..6 {
        let spec = random_spec(seed, 3);
        let lat = lattice(&spec, 300);
        let a = solve_direct_with(&spec, &lat, Execution::Sequential).unwrap();
        let b = solve_direct_with(&spec, &lat, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
