use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use switchgame::evaluator::evaluate_mc_with;
use switchgame::fixtures::{self, random_spec};
use switchgame::lattice::build_lattice;
use switchgame::oracle::{default_grid, enumerate_policies_with, game_dp_with};
use switchgame::solver::solve_direct_with;
use switchgame::strategy::{extract_policy, worst_control, DEFAULT_SWITCH_TOL};
use switchgame::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn solve(c: &mut Criterion) {
    let spec = random_spec(7, 4);
    let mut group = c.benchmark_group("solve_direct");
    for steps in [200, 1000] {
        let lat = build_lattice(spec.factor(), spec.horizon(), steps).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, steps), &lat, |b, lat| {
                b.iter(|| solve_direct_with(black_box(&spec), lat, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let spec = fixtures::load(fixtures::POWER_PLANT);
    let lat = build_lattice(spec.factor(), spec.horizon(), 100).unwrap();
    let sol = solve_direct_with(&spec, &lat, Execution::Sequential).unwrap();
    let pol = extract_policy(&spec, &lat, &sol, DEFAULT_SWITCH_TOL).unwrap();
    let ctl = worst_control(&spec, &lat, &sol);
    let mut group = c.benchmark_group("evaluate_mc");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 20_000), |b| {
            b.iter(|| evaluate_mc_with(&spec, &lat, &pol, &ctl, 20_000, black_box(3), exec).unwrap())
        });
    }
    group.finish();
}

fn oracles(c: &mut Criterion) {
    let spec = random_spec(11, 3);
    let grid = default_grid(spec.ambiguity());
    let lat = build_lattice(spec.factor(), spec.horizon(), 400).unwrap();
    let mut group = c.benchmark_group("game_dp");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 400), |b| {
            b.iter(|| game_dp_with(black_box(&spec), &lat, &grid, exec).unwrap())
        });
    }
    group.finish();

    let spec = random_spec(12, 2);
    let grid = default_grid(spec.ambiguity());
    let lat = build_lattice(spec.factor(), spec.horizon(), 4).unwrap();
    let mut group = c.benchmark_group("enumerate_policies");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 4), |b| {
            b.iter(|| enumerate_policies_with(black_box(&spec), &lat, &grid, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solve, monte_carlo, oracles);
criterion_main!(benches);
