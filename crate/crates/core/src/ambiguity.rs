//! Prior sets for the drift and the associated Hamiltonians.
//!
//! The drift kernel is `b(t, x, u) = u`, so `H(t, x, u, z) = z * u` and the
//! lower Hamiltonian `H*` is the infimum of that product over the prior set.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum AmbiguityModel {
    /// `U = [-kappa, kappa]`.
    KappaIgnorance { kappa: f64 },
    /// Finite list of admissible drifts, in declaration order.
    FiniteSet { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianResult {
    pub value: f64,
    pub minimizer: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AmbiguityError {
    #[error("drift {u} is not in the prior set")]
    DriftOutOfSet { u: f64 },
    #[error("kappa must be finite and non-negative, got {0}")]
    BadKappa(f64),
    #[error("finite drift set must be non-empty with finite values")]
    BadFiniteSet,
}

impl AmbiguityModel {
    pub fn kappa(kappa: f64) -> Result<Self, AmbiguityError> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(AmbiguityError::BadKappa(kappa));
        }
        Ok(AmbiguityModel::KappaIgnorance { kappa })
    }

    pub fn finite(values: Vec<f64>) -> Result<Self, AmbiguityError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(AmbiguityError::BadFiniteSet);
        }
        Ok(AmbiguityModel::FiniteSet { values })
    }

    pub fn contains(&self, u: f64) -> bool {
        match self {
            AmbiguityModel::KappaIgnorance { kappa } => u.abs() <= *kappa,
            AmbiguityModel::FiniteSet { values } => values.contains(&u),
        }
    }

    /// Largest drift magnitude, i.e. the Lipschitz constant of `H*` in `z`.
    pub fn drift_bound(&self) -> f64 {
        match self {
            AmbiguityModel::KappaIgnorance { kappa } => *kappa,
            AmbiguityModel::FiniteSet { values } => values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())),
        }
    }

    /// Evenly spaced grid over `[-kappa, kappa]` with `size` points, or the
    /// full list for a finite set. `size` is clamped to at least 2 so the
    /// endpoints are always present; a zero kappa collapses to `{0}`.
    pub fn control_grid(&self, size: usize) -> Vec<f64> {
        match self {
            AmbiguityModel::KappaIgnorance { kappa } => {
                if *kappa == 0.0 {
                    return vec![0.0];
                }
                let size = size.max(2);
                let last = (size - 1) as f64;
                (0..size)
                    .map(|i| {
                        if 2 * i + 1 == size {
                            0.0
                        } else {
                            -kappa + 2.0 * kappa * (i as f64) / last
                        }
                    })
                    .collect()
            }
            AmbiguityModel::FiniteSet { values } => values.clone(),
        }
    }

    pub fn default_grid(&self) -> Vec<f64> {
        self.control_grid(3)
    }
}

/// `H(t, x, u, z) = z * b(t, x, u)` with `b = u`.
pub fn hamiltonian(amb: &AmbiguityModel, _t: f64, _x: f64, u: f64, z: f64) -> Result<f64, AmbiguityError> {
    if !amb.contains(u) {
        return Err(AmbiguityError::DriftOutOfSet { u });
    }
    Ok(z * u)
}

/// Infimum of the Hamiltonian over the prior set together with a minimizing drift.
///
/// At `z = 0` every drift attains the infimum; the selector returns `0` for the
/// interval model and the first listed value for a finite set.
pub fn hstar(amb: &AmbiguityModel, _t: f64, _x: f64, z: f64) -> HamiltonianResult {
    match amb {
        AmbiguityModel::KappaIgnorance { kappa } => {
            let minimizer = if z > 0.0 {
                -kappa
            } else if z < 0.0 {
                *kappa
            } else {
                0.0
            };
            HamiltonianResult {
                value: z * minimizer,
                minimizer,
            }
        }
        AmbiguityModel::FiniteSet { values } => {
            let mut best = HamiltonianResult {
                value: z * values[0],
                minimizer: values[0],
            };
            for &u in &values[1..] {
                let v = z * u;
                if v < best.value {
                    best = HamiltonianResult { value: v, minimizer: u };
                }
            }
            best
        }
    }
}
