//! Recombining binomial lattice for the factor process.
//!
//! The Brownian coordinate of node `(n, k)` is `(2k - n) * sqrt(dt)`; under the
//! reference measure every step is up or down with probability one half.

use thiserror::Error;

use crate::ambiguity::AmbiguityModel;
use crate::problem_model::{FactorKind, FactorModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("lattice needs at least one time step")]
    BadStepCount,
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("drift {u} with dt {dt} gives |u|*sqrt(dt) >= 1; increase the number of steps")]
    StepTooCoarse { u: f64, dt: f64 },
    #[error("drift {u} is not in the prior set")]
    DriftOutOfSet { u: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Up,
    Down,
}

/// Number of nodes in layers `0..=n`.
#[inline]
pub fn nodes_through(n: usize) -> usize {
    (n + 1) * (n + 2) / 2
}

/// Flat index of node `(n, k)`, layers stored back to back.
#[inline]
pub fn node_index(n: usize, k: usize) -> usize {
    debug_assert!(k <= n);
    n * (n + 1) / 2 + k
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    steps: usize,
    horizon: f64,
    dt: f64,
    sqrt_dt: f64,
    states: Vec<f64>,
}

impl Lattice {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.dt
        }
    }

    pub fn brownian(&self, n: usize, k: usize) -> f64 {
        (2.0 * k as f64 - n as f64) * self.sqrt_dt
    }

    pub fn state(&self, n: usize, k: usize) -> f64 {
        self.states[node_index(n, k)]
    }

    pub fn layer(&self, n: usize) -> &[f64] {
        &self.states[node_index(n, 0)..node_index(n, 0) + n + 1]
    }

    pub fn node_count(&self) -> usize {
        self.states.len()
    }

    /// Follows `path` from the root and returns the up-move count after each step.
    pub fn walk(path: &[Move]) -> Vec<usize> {
        let mut k = 0;
        let mut out = Vec::with_capacity(path.len() + 1);
        out.push(0);
        for m in path {
            if *m == Move::Up {
                k += 1;
            }
            out.push(k);
        }
        out
    }
}

pub fn build_lattice(factor: &FactorModel, horizon: f64, steps: usize) -> Result<Lattice, LatticeError> {
    if steps < 1 {
        return Err(LatticeError::BadStepCount);
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(LatticeError::BadHorizon(horizon));
    }
    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut states = Vec::with_capacity(nodes_through(steps));
    for n in 0..=steps {
        let t = if n == steps { horizon } else { n as f64 * dt };
        for k in 0..=n {
            let w = (2.0 * k as f64 - n as f64) * sqrt_dt;
            let x = match factor.kind {
                FactorKind::Arithmetic => factor.x0 + factor.drift * t + factor.vol * w,
                FactorKind::Geometric => {
                    factor.x0 * ((factor.drift - 0.5 * factor.vol * factor.vol) * t + factor.vol * w).exp()
                }
            };
            states.push(x);
        }
    }
    Ok(Lattice {
        steps,
        horizon,
        dt,
        sqrt_dt,
        states,
    })
}

/// Up-move probability under the drifted measure: `(1 + u * sqrt(dt)) / 2`.
pub fn controlled_up_probability(
    lat: &Lattice,
    amb: &AmbiguityModel,
    u: f64,
    _t: f64,
    _x: f64,
) -> Result<f64, LatticeError> {
    if !amb.contains(u) {
        return Err(LatticeError::DriftOutOfSet { u });
    }
    let shift = u * lat.sqrt_dt;
    if shift.abs() >= 1.0 {
        return Err(LatticeError::StepTooCoarse { u, dt: lat.dt });
    }
    Ok(0.5 * (1.0 + shift))
}

/// Fails when some drift of the prior set makes a step probability degenerate.
pub fn check_step_size(lat: &Lattice, amb: &AmbiguityModel) -> Result<(), LatticeError> {
    let bound = amb.drift_bound();
    if bound * lat.sqrt_dt >= 1.0 {
        return Err(LatticeError::StepTooCoarse { u: bound, dt: lat.dt });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arithmetic(x0: f64, drift: f64, vol: f64) -> FactorModel {
        FactorModel {
            kind: FactorKind::Arithmetic,
            x0,
            drift,
            vol,
        }
    }

    #[test]
    fn arithmetic_terminal_layer() {
        let lat = build_lattice(&arithmetic(0.0, 0.0, 1.0), 1.0, 2).unwrap();
        let s = 2f64.sqrt();
        let layer = lat.layer(2);
        assert_eq!(layer.len(), 3);
        assert!((layer[0] + s).abs() < 1e-15);
        assert_eq!(layer[1], 0.0);
        assert!((layer[2] - s).abs() < 1e-15);
    }

    #[test]
    fn geometric_single_step() {
        let f = FactorModel {
            kind: FactorKind::Geometric,
            x0: 1.0,
            drift: 0.0,
            vol: 0.2,
        };
        let lat = build_lattice(&f, 1.0, 1).unwrap();
        assert!((lat.state(1, 1) - 0.18f64.exp()).abs() < 1e-15);
        assert!((lat.state(1, 0) - (-0.22f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_rejected() {
        assert_eq!(
            build_lattice(&arithmetic(0.0, 0.0, 1.0), 1.0, 0),
            Err(LatticeError::BadStepCount)
        );
        assert!(matches!(
            build_lattice(&arithmetic(0.0, 0.0, 1.0), 0.0, 3),
            Err(LatticeError::BadHorizon(_))
        ));
    }

    #[test]
    fn up_probability_examples() {
        let amb = AmbiguityModel::kappa(0.5).unwrap();
        let lat = build_lattice(&arithmetic(0.0, 0.0, 1.0), 1.0, 100).unwrap();
        assert_eq!(controlled_up_probability(&lat, &amb, 0.0, 0.0, 0.0).unwrap(), 0.5);
        let p = controlled_up_probability(&lat, &amb, -0.5, 0.0, 0.0).unwrap();
        assert!((p - 0.475).abs() < 1e-15);

        let wide = AmbiguityModel::kappa(20.0).unwrap();
        assert!(matches!(
            controlled_up_probability(&lat, &wide, -20.0, 0.0, 0.0),
            Err(LatticeError::StepTooCoarse { .. })
        ));
        assert!(check_step_size(&lat, &wide).is_err());
        assert!(check_step_size(&lat, &amb).is_ok());
    }

    #[test]
    fn reference_moments() {
        let lat = build_lattice(&arithmetic(0.0, 0.0, 1.0), 2.0, 8).unwrap();
        for n in 0..8 {
            for k in 0..=n {
                let w = lat.brownian(n, k);
                let up = lat.brownian(n + 1, k + 1) - w;
                let dn = lat.brownian(n + 1, k) - w;
                assert!((0.5 * up + 0.5 * dn).abs() < 1e-15);
                assert!((0.5 * up * up + 0.5 * dn * dn - lat.dt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn walk_counts_up_moves() {
        assert_eq!(Lattice::walk(&[Move::Up, Move::Down, Move::Up]), vec![0, 1, 1, 2]);
    }

    proptest! {
        #[test]
        fn recombines_and_layer_sizes(x0 in 0.1f64..3.0, drift in -0.5f64..0.5, vol in 0.05f64..1.0,
                                      steps in 1usize..30, geo in any::<bool>()) {
            let kind = if geo { FactorKind::Geometric } else { FactorKind::Arithmetic };
            let f = FactorModel { kind, x0, drift, vol };
            let lat = build_lattice(&f, 1.5, steps).unwrap();
            prop_assert_eq!(lat.node_count(), nodes_through(steps));
            for n in 0..=steps {
                prop_assert_eq!(lat.layer(n).len(), n + 1);
                if geo {
                    prop_assert!(lat.layer(n).iter().all(|v| *v > 0.0));
                }
            }
            // up-then-down and down-then-up land on the same node
            let a = Lattice::walk(&[Move::Up, Move::Down]);
            let b = Lattice::walk(&[Move::Down, Move::Up]);
            prop_assert_eq!(a[2], b[2]);
        }

        #[test]
        fn drift_identity(yu in -10.0f64..10.0, yd in -10.0f64..10.0, frac in -1.0f64..1.0, steps in 4usize..200) {
            let amb = AmbiguityModel::kappa(1.0).unwrap();
            let lat = build_lattice(&arithmetic(0.0, 0.0, 1.0), 1.0, steps).unwrap();
            let u = frac;
            let p = controlled_up_probability(&lat, &amb, u, 0.0, 0.0).unwrap();
            let lhs = p * yu + (1.0 - p) * yd - 0.5 * (yu + yd);
            let rhs = lat.dt() * u * (yu - yd) / (2.0 * lat.sqrt_dt());
            prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + yu.abs() + yd.abs()));
        }
    }
}
