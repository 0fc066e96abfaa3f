//! Bundled problem files and a generator of random valid problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ambiguity::AmbiguityModel;
use crate::expr::Expr;
use crate::problem_model::{load_spec, FactorKind, FactorModel, ModeSpec, ProblemSpec};

pub const SINGLE_MODE_UNIT: &str = include_str!("../fixtures/single_mode_unit.toml");
pub const TWO_MODE_DETERMINISTIC: &str = include_str!("../fixtures/two_mode_deterministic.toml");
pub const THREE_MODE: &str = include_str!("../fixtures/three_mode.toml");
pub const POWER_PLANT: &str = include_str!("../fixtures/power_plant.toml");
pub const ORACLE_TWO_MODE: &str = include_str!("../fixtures/oracle_two_mode.toml");
pub const FREE_LOOP: &str = include_str!("../fixtures/free_loop.toml");
pub const TRIANGLE_VIOLATION: &str = include_str!("../fixtures/triangle_violation.toml");
pub const TERMINAL_INCONSISTENT: &str = include_str!("../fixtures/terminal_inconsistent.toml");

/// Fixtures that must pass validation.
pub const VALID: [(&str, &str); 5] = [
    ("single_mode_unit", SINGLE_MODE_UNIT),
    ("two_mode_deterministic", TWO_MODE_DETERMINISTIC),
    ("three_mode", THREE_MODE),
    ("power_plant", POWER_PLANT),
    ("oracle_two_mode", ORACLE_TWO_MODE),
];

pub fn load(text: &str) -> ProblemSpec {
    load_spec(text).expect("bundled fixture parses")
}

fn parse(text: String) -> Expr {
    text.parse().expect("generated expression parses")
}

/// A random problem with `modes` modes that passes validation on any lattice.
///
/// Costs stay in `[0.3, 0.6]` and terminal rewards differ by less than 0.15,
/// so the triangle and terminal conditions hold by construction.
pub fn random_spec(seed: u64, modes: usize) -> ProblemSpec {
    assert!(modes >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(0.5..=1.5);
    let factor = if rng.random_bool(0.5) {
        FactorModel::new(
            FactorKind::Geometric,
            rng.random_range(0.5..=2.0),
            rng.random_range(-0.2..=0.2),
            rng.random_range(0.1..=0.5),
        )
    } else {
        FactorModel::new(
            FactorKind::Arithmetic,
            rng.random_range(-0.5..=0.5),
            rng.random_range(-0.2..=0.2),
            rng.random_range(0.2..=1.0),
        )
    }
    .expect("factor parameters in range");
    let x0 = factor.x0;

    let ambiguity = if rng.random_bool(0.8) {
        AmbiguityModel::kappa(rng.random_range(0.0..=1.0)).unwrap()
    } else {
        let count = rng.random_range(2..=4);
        let mut values: Vec<f64> = (0..count).map(|_| rng.random_range(-1.0..=1.0)).collect();
        values.dedup();
        AmbiguityModel::finite(values).unwrap()
    };

    let mode_specs = (0..modes)
        .map(|_| {
            let a: f64 = rng.random_range(-0.5..=0.5);
            let b: f64 = rng.random_range(-0.5..=0.5);
            let c: f64 = rng.random_range(-0.2..=0.2);
            let d: f64 = rng.random_range(0.0..=0.05);
            let e: f64 = rng.random_range(-0.05..=0.05);
            ModeSpec {
                psi: parse(format!("{a:?} + {b:?} * x + {c:?} * t")),
                xi: parse(format!("{d:?} + {e:?} * max(-1, min(1, x - {x0:?}))")),
            }
        })
        .collect();

    let slope: f64 = rng.random_range(0.0..=0.05);
    let absorbing = modes > 1 && rng.random_bool(0.3);
    let mut costs = Vec::new();
    for j in 0..modes {
        if absorbing && j == modes - 1 {
            continue;
        }
        for i in 0..modes {
            if i != j {
                let base: f64 = rng.random_range(0.3..=0.55);
                costs.push((j, i, parse(format!("{base:?} + {slope:?} * abs(x - {x0:?})"))));
            }
        }
    }
    let start = rng.random_range(0..modes);
    ProblemSpec::new(horizon, start, mode_specs, costs, factor, ambiguity).expect("generated problem is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;
    use crate::problem_model::{validate, FindingCode};

    #[test]
    fn bundled_fixtures_classify() {
        for (name, text) in VALID {
            let spec = load(text);
            let lat = build_lattice(spec.factor(), spec.horizon(), 20).unwrap();
            let rep = validate(&spec, &lat);
            assert!(rep.is_accepted(), "{name}: {rep}");
        }
        for (text, code) in [
            (FREE_LOOP, FindingCode::FreeLoop),
            (TRIANGLE_VIOLATION, FindingCode::TriangleViolated),
            (TERMINAL_INCONSISTENT, FindingCode::TerminalInconsistent),
        ] {
            let spec = load(text);
            let lat = build_lattice(spec.factor(), spec.horizon(), 20).unwrap();
            let rep = validate(&spec, &lat);
            assert!(!rep.is_accepted());
            assert!(rep.has(code), "{rep}");
        }
    }

    #[test]
    fn random_specs_validate_and_round_trip() {
        for seed in 0..40 {
            let spec = random_spec(seed, 1 + (seed as usize % 4));
            for steps in [4, 12, 50] {
                let lat = build_lattice(spec.factor(), spec.horizon(), steps).unwrap();
                let rep = validate(&spec, &lat);
                assert!(rep.is_accepted(), "seed {seed}: {rep}");
            }
            assert_eq!(load_spec(&spec.to_spec_text()).unwrap(), spec);
        }
    }

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(random_spec(9, 3), random_spec(9, 3));
        assert_ne!(random_spec(9, 3), random_spec(10, 3));
    }
}
