//! Classical time stepping: Euler-Maruyama, Milstein, and the exact
//! transition, plus the polynomial-in-z form shared by the first two.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{SdeParams, TimeGrid};
use crate::paths::{simulate, NormalDraws, PathEnsemble, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassicalScheme {
    Euler,
    Milstein,
    Exact,
}

pub fn euler_step(params: &SdeParams, t: f64, y: f64, dt: f64, z: f64) -> f64 {
    let a = params.drift(t, y);
    let (b, _) = params.diffusion(t, y);
    y + a * dt + b * dt.sqrt() * z
}

pub fn milstein_step(params: &SdeParams, t: f64, y: f64, dt: f64, z: f64) -> f64 {
    let (b, db) = params.diffusion(t, y);
    euler_step(params, t, y, dt, z) + 0.5 * db * b * dt * (z * z - 1.0)
}

/// Coefficients `alpha_0..alpha_{m-1}` of a step written as a polynomial in
/// the normal draw.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    pub alpha: Vec<f64>,
}

impl StepCoefficients {
    /// Horner evaluation of `sum_j alpha_j z^j`.
    pub fn evaluate(&self, z: f64) -> f64 {
        self.alpha.iter().rev().fold(0.0, |acc, a| acc * z + a)
    }
}

/// Polynomial coefficients of the Euler (m = 2) or Milstein (m = 3) step.
/// The exact transition has no finite polynomial form and yields `None`.
pub fn step_coefficients(
    params: &SdeParams,
    t: f64,
    y: f64,
    dt: f64,
    scheme: ClassicalScheme,
) -> Option<StepCoefficients> {
    let a = params.drift(t, y);
    let (b, db) = params.diffusion(t, y);
    let alpha = match scheme {
        ClassicalScheme::Euler => vec![y + a * dt, b * dt.sqrt()],
        ClassicalScheme::Milstein => {
            let c = 0.5 * db * b * dt;
            vec![y + a * dt - c, b * dt.sqrt(), c]
        }
        ClassicalScheme::Exact => return None,
    };
    Some(StepCoefficients { alpha })
}

/// A classical scheme bound to one parameter set.
#[derive(Debug, Clone, Copy)]
pub struct ClassicalStepper {
    pub params: SdeParams,
    pub scheme: ClassicalScheme,
}

impl Stepper for ClassicalStepper {
    fn step(&self, _i: usize, t: f64, y: f64, dt: f64, z: f64) -> Result<f64> {
        Ok(match self.scheme {
            ClassicalScheme::Euler => euler_step(&self.params, t, y, dt, z),
            ClassicalScheme::Milstein => milstein_step(&self.params, t, y, dt, z),
            ClassicalScheme::Exact => self.params.exact_sample(t, y, dt, z),
        })
    }
}

pub fn simulate_paths(
    params: &SdeParams,
    grid: &TimeGrid,
    scheme: ClassicalScheme,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    params.validate()?;
    if n_paths == 0 {
        return Err(crate::error::invalid("n_paths must be at least 1"));
    }
    let draws = NormalDraws::generate(n_paths, grid.n_steps, seed);
    simulate_with_draws(params, grid, scheme, &draws)
}

pub fn simulate_with_draws(
    params: &SdeParams,
    grid: &TimeGrid,
    scheme: ClassicalScheme,
    draws: &NormalDraws,
) -> Result<PathEnsemble> {
    let stepper = ClassicalStepper {
        params: *params,
        scheme,
    };
    simulate(&stepper, params.y0(), grid, draws)
}
