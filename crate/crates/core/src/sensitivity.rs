//! Pathwise parameter sensitivities of seven-league paths.
//!
//! One step maps `(Ŷ_i, z)` to `Ŷ_{i+1} = g(z; Ĥ(Ŷ_i, θ))`, so
//! `dŶ_{i+1}/dθ = Σ_j (∂Ĥ_j/∂θ + ∂Ĥ_j/∂y · dŶ_i/dθ) p_j(z)` with
//! `p_j = ∂g/∂Ĥ_j` from [`NodeInterpolator::basis_weights`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interpolation::NodeInterpolator;
use crate::models::{ModelKind, SdeParams, TimeGrid};
use crate::paths::{NormalDraws, PathEnsemble};
use crate::pricing::{OptionKind, OptionSpec};
use crate::seven_league::{SevenLeagueSampler, INPUT_THETA, INPUT_Y_PREV};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPath {
    pub states: Vec<f64>,
    pub dstate_dtheta: Vec<f64>,
}

/// One step: returns `(Ŷ_{i+1}, dŶ_{i+1}/dθ)`.
pub fn step_with_sensitivity(
    sampler: &SevenLeagueSampler,
    y_prev: f64,
    dy_prev: f64,
    t: f64,
    dt: f64,
    z: f64,
    theta_index: usize,
) -> Result<(f64, f64)> {
    let n_theta = sampler.theta().len();
    if theta_index >= n_theta {
        return Err(invalid(format!(
            "parameter index {theta_index} out of range for {n_theta} parameters"
        )));
    }
    let m = sampler.n_points();
    let mut input = Vec::with_capacity(INPUT_THETA + n_theta);
    let factor = sampler.prepare_input(y_prev, t, dt, &mut input)?;
    let d = input.len();
    let mut vals = vec![0.0; m];
    let mut jac = vec![0.0; m * d];
    sampler.surrogate().evaluate_with_jacobian(&input, &mut vals, &mut jac)?;
    let prescaled = sampler.options().gbm_prescale.is_some();
    let y_clamped = !prescaled && input[INPUT_Y_PREV] != y_prev;
    let mut total: Vec<f64> = (0..m)
        .map(|j| {
            let row = &jac[j * d..(j + 1) * d];
            let dy = if prescaled {
                vals[j] / input[INPUT_Y_PREV]
            } else if y_clamped {
                0.0
            } else {
                row[INPUT_Y_PREV]
            };
            factor * row[INPUT_THETA + theta_index] + dy * dy_prev
        })
        .collect();
    vals.iter_mut().for_each(|v| *v *= factor);
    if vals.windows(2).any(|w| w[1] < w[0]) {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
        vals = order.iter().map(|j| vals[*j]).collect();
        total = order.iter().map(|j| total[*j]).collect();
    }
    let interp: &NodeInterpolator = sampler.interpolator();
    let mut w = vec![0.0; m];
    interp.basis_weights(&vals, z, &mut w);
    let y_next = interp.evaluate(&vals, z);
    let dy_next = total.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok((y_next, dy_next))
}

/// `dŶ_{i+1}/dθ` only.
pub fn step_sensitivity(
    sampler: &SevenLeagueSampler,
    y_prev: f64,
    dy_prev: f64,
    t: f64,
    dt: f64,
    z: f64,
    theta_index: usize,
) -> Result<f64> {
    step_with_sensitivity(sampler, y_prev, dy_prev, t, dt, z, theta_index).map(|(_, d)| d)
}

/// One path and its derivative, driven by `z` (one draw per step).
pub fn sensitivity_path(
    sampler: &SevenLeagueSampler,
    grid: &TimeGrid,
    z: &[f64],
    theta_index: usize,
) -> Result<SensitivityPath> {
    grid.validate()?;
    if z.len() != grid.n_steps {
        return Err(Error::DimensionMismatch {
            expected: grid.n_steps,
            got: z.len(),
        });
    }
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    let mut dstate = Vec::with_capacity(grid.n_steps + 1);
    let (mut y, mut dy) = (sampler.params().y0(), 0.0);
    states.push(y);
    dstate.push(dy);
    for (i, zi) in z.iter().enumerate() {
        (y, dy) = step_with_sensitivity(sampler, y, dy, grid.time(i), grid.dt, *zi, theta_index)?;
        states.push(y);
        dstate.push(dy);
    }
    Ok(SensitivityPath {
        states,
        dstate_dtheta: dstate,
    })
}

/// Paths plus `dŶ/dθ` laid out like `PathEnsemble::states`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityEnsemble {
    pub paths: PathEnsemble,
    pub dstate_dtheta: Vec<f64>,
}

pub fn simulate_sensitivities(
    sampler: &SevenLeagueSampler,
    grid: &TimeGrid,
    draws: &NormalDraws,
    theta_index: usize,
) -> Result<SensitivityEnsemble> {
    if draws.n_steps != grid.n_steps {
        return Err(Error::GridMismatch(format!(
            "draws cover {} steps but the grid has {}",
            draws.n_steps, grid.n_steps
        )));
    }
    let rows = (0..draws.n_paths)
        .into_par_iter()
        .map(|k| sensitivity_path(sampler, grid, draws.path(k), theta_index))
        .collect::<Result<Vec<_>>>()?;
    let mut states = Vec::with_capacity(draws.n_paths * (grid.n_steps + 1));
    let mut dstate = Vec::with_capacity(states.capacity());
    for r in rows {
        states.extend(r.states);
        dstate.extend(r.dstate_dtheta);
    }
    Ok(SensitivityEnsemble {
        paths: PathEnsemble {
            t0: grid.t0,
            dt: grid.dt,
            n_paths: draws.n_paths,
            n_steps: grid.n_steps,
            states,
            draws: draws.z.clone(),
        },
        dstate_dtheta: dstate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VegaEstimate {
    pub vega: f64,
    pub stderr: f64,
}

/// Pathwise vega of an Asian call, one simulation step per averaging date.
pub fn asian_vega(sampler: &SevenLeagueSampler, spec: &OptionSpec, n_paths: usize, seed: u64) -> Result<VegaEstimate> {
    let draws = NormalDraws::generate(n_paths, spec.n_dates, seed);
    asian_vega_with_draws(sampler, spec, &draws)
}

pub fn asian_vega_with_draws(
    sampler: &SevenLeagueSampler,
    spec: &OptionSpec,
    draws: &NormalDraws,
) -> Result<VegaEstimate> {
    spec.validate()?;
    if spec.kind != OptionKind::AsianFixedStrike {
        return Err(invalid("vega is wired for Asian contracts only"));
    }
    match *sampler.params() {
        SdeParams::Gbm { mu, .. } if (mu - spec.rate).abs() <= 1e-12 => {}
        SdeParams::Gbm { mu, .. } => {
            return Err(invalid(format!(
                "drift {mu} differs from the rate {}; vega needs risk-neutral paths",
                spec.rate
            )))
        }
        _ => return Err(Error::Unsupported("vega is defined for GBM only".into())),
    }
    if draws.n_paths == 0 {
        return Err(invalid("no paths"));
    }
    let grid = spec.grid(0.0)?;
    let s = simulate_sensitivities(sampler, &grid, draws, SdeParams::sigma_index(ModelKind::Gbm))?;
    let w = grid.n_steps + 1;
    let disc = (-spec.rate * spec.maturity()).exp();
    let nb = spec.n_dates as f64;
    let per_path: Vec<f64> = (0..draws.n_paths)
        .map(|k| {
            let ys = &s.paths.states[k * w + 1..(k + 1) * w];
            let avg = ys.iter().sum::<f64>() / nb;
            if avg > spec.strike {
                disc * s.dstate_dtheta[k * w + 1..(k + 1) * w].iter().sum::<f64>() / nb
            } else {
                0.0
            }
        })
        .collect();
    let n = per_path.len() as f64;
    let vega = per_path.iter().sum::<f64>() / n;
    let var = if per_path.len() > 1 {
        per_path.iter().map(|v| (v - vega).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(VegaEstimate {
        vega,
        stderr: (var / n).sqrt(),
    })
}
