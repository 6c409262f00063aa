//! The seven-league scheme: one large time step costs one surrogate
//! evaluation for the conditional collocation points of `Y(t + Δt) | Y(t)`
//! and one interpolation of a standard normal draw through them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interpolation::{Extrapolation, InterpolantKind, NodeInterpolator};
use crate::models::{ModelKind, SdeParams, TimeGrid};
use crate::neural::{MlpSurrogate, Scratch};
use crate::paths::{NormalDraws, PathEnsemble, Stepper};
use crate::probability::QuadratureRule;
use crate::scmc::CollocationSet;

/// Input feature positions shared by every surrogate.
pub const INPUT_Y_PREV: usize = 0;
pub const INPUT_T: usize = 1;
pub const INPUT_DT: usize = 2;
pub const INPUT_THETA: usize = 3;

pub fn surrogate_input(y_prev: f64, t: f64, dt: f64, theta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(&[y_prev, t, dt]);
    out.extend_from_slice(theta);
}

/// Fraction of the fitted parameter range by which model parameters may lie
/// outside it. A Latin-hypercube design with n points leaves up to 1/n of
/// each range uncovered at either end.
pub const THETA_SLACK: f64 = 0.02;

/// Box bounds of the inputs a surrogate was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDomain {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Maps `(y_prev, t, dt, θ)` to `m` conditional collocation values.
pub trait CollocationSurrogate: Send + Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn domain(&self) -> Option<InputDomain>;
    fn evaluate(&self, input: &[f64], out: &mut [f64]) -> Result<()>;
    /// Row-major batches.
    fn evaluate_batch(&self, inputs: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.n_inputs();
        let m = self.n_outputs();
        for (i, o) in inputs.chunks_exact(d).zip(out.chunks_exact_mut(m)) {
            self.evaluate(i, o)?;
        }
        Ok(())
    }
    /// Values and the row-major `m x n_inputs` Jacobian.
    fn evaluate_with_jacobian(&self, _input: &[f64], _out: &mut [f64], _jac: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported("surrogate is not differentiable".into()))
    }
}

impl CollocationSurrogate for MlpSurrogate {
    fn n_inputs(&self) -> usize {
        MlpSurrogate::n_inputs(self)
    }

    fn n_outputs(&self) -> usize {
        MlpSurrogate::n_outputs(self)
    }

    fn domain(&self) -> Option<InputDomain> {
        Some(InputDomain {
            low: self.input_scaler.min.clone(),
            high: self.input_scaler.max.clone(),
        })
    }

    fn evaluate(&self, input: &[f64], out: &mut [f64]) -> Result<()> {
        SCRATCH.with(|s| {
            let mut s = s.borrow_mut();
            let s = s.get_or_insert_with(|| self.scratch());
            if !scratch_fits(s, self) {
                *s = self.scratch();
            }
            self.forward_into(input, s, out)
        })
    }

    fn evaluate_batch(&self, inputs: &[f64], out: &mut [f64]) -> Result<()> {
        let y = self.forward_batch(inputs)?;
        if y.len() != out.len() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                got: y.len(),
            });
        }
        out.copy_from_slice(&y);
        Ok(())
    }

    fn evaluate_with_jacobian(&self, input: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let mut s = self.scratch();
        self.forward_with_jacobian(input, &mut s, out, jac)
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Option<Scratch>> = const { std::cell::RefCell::new(None) };
}

fn scratch_fits(s: &Scratch, net: &MlpSurrogate) -> bool {
    s.fits(net)
}

/// Exact conditional quantiles `F^{-1}(Φ(x_j))` of GBM or OU, with analytic
/// Jacobians. Stands in for a trained network to isolate scheme error.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSurrogate {
    pub model: ModelKind,
    pub nodes: Vec<f64>,
}

impl AnalyticSurrogate {
    pub fn new(model: ModelKind, rule: &QuadratureRule) -> Self {
        AnalyticSurrogate {
            model,
            nodes: rule.nodes.clone(),
        }
    }
}

impl CollocationSurrogate for AnalyticSurrogate {
    fn n_inputs(&self) -> usize {
        INPUT_THETA + SdeParams::theta_names(self.model).len()
    }

    fn n_outputs(&self) -> usize {
        self.nodes.len()
    }

    fn domain(&self) -> Option<InputDomain> {
        None
    }

    fn evaluate(&self, input: &[f64], out: &mut [f64]) -> Result<()> {
        let p = SdeParams::from_theta(self.model, &input[INPUT_THETA..], input[INPUT_Y_PREV])?;
        for (o, x) in out.iter_mut().zip(&self.nodes) {
            *o = p.exact_sample(input[INPUT_T], input[INPUT_Y_PREV], input[INPUT_DT], *x);
        }
        Ok(())
    }

    fn evaluate_with_jacobian(&self, input: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.evaluate(input, out)?;
        let d = self.n_inputs();
        let (y, dt) = (input[INPUT_Y_PREV], input[INPUT_DT]);
        let sdt = dt.sqrt();
        for (j, x) in self.nodes.iter().enumerate() {
            let row = &mut jac[j * d..(j + 1) * d];
            row[INPUT_T] = 0.0;
            match self.model {
                ModelKind::Gbm => {
                    let (mu, sigma) = (input[3], input[4]);
                    let q = out[j];
                    row[INPUT_Y_PREV] = q / y;
                    row[INPUT_DT] = q * (mu - 0.5 * sigma * sigma + 0.5 * sigma * x / sdt);
                    row[3] = q * dt;
                    row[4] = q * (-sigma * dt + sdt * x);
                }
                ModelKind::Ou => {
                    let (ybar, sigma, lambda) = (input[3], input[4], input[5]);
                    let e = (-lambda * dt).exp();
                    let e2 = e * e;
                    let v = -(-2.0 * lambda * dt).exp_m1() / (2.0 * lambda);
                    let sv = v.sqrt();
                    row[INPUT_Y_PREV] = e;
                    row[INPUT_DT] = -lambda * (y - ybar) * e + sigma * x * e2 / (2.0 * sv);
                    row[3] = 1.0 - e;
                    row[4] = sv * x;
                    let dv = dt * e2 / lambda - v / lambda;
                    row[5] = -dt * (y - ybar) * e + sigma * x * dv / (2.0 * sv);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerOptions {
    pub interpolant: InterpolantKind,
    pub extrapolation: Extrapolation,
    /// Clamp `y_prev` and `dt` into the surrogate's fitted box instead of
    /// failing.
    pub clamp_domain: bool,
    /// GBM only: evaluate at `y_ref` and rescale by `y_prev / y_ref`, using
    /// that GBM quantiles are proportional to the starting value.
    pub gbm_prescale: Option<f64>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            interpolant: InterpolantKind::Pchip,
            extrapolation: Extrapolation::Clamp,
            clamp_domain: true,
            gbm_prescale: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub evaluations: u64,
    pub inversions: u64,
    pub clamped: u64,
}

#[derive(Default)]
struct Counters {
    evaluations: AtomicU64,
    inversions: AtomicU64,
    clamped: AtomicU64,
}

/// Large-step sampler for one parameter set.
pub struct SevenLeagueSampler {
    surrogate: Arc<dyn CollocationSurrogate>,
    rule: QuadratureRule,
    params: SdeParams,
    theta: Vec<f64>,
    options: SamplerOptions,
    interp: NodeInterpolator,
    domain: Option<InputDomain>,
    counters: Counters,
}

impl std::fmt::Debug for SevenLeagueSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SevenLeagueSampler")
            .field("params", &self.params)
            .field("options", &self.options)
            .field("nodes", &self.rule.nodes)
            .finish()
    }
}

impl SevenLeagueSampler {
    pub fn new(
        surrogate: Arc<dyn CollocationSurrogate>,
        rule: QuadratureRule,
        params: SdeParams,
        options: SamplerOptions,
    ) -> Result<Self> {
        params.validate()?;
        let theta = params.theta();
        let want = INPUT_THETA + theta.len();
        if surrogate.n_inputs() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: surrogate.n_inputs(),
            });
        }
        if surrogate.n_outputs() != rule.len() {
            return Err(Error::DimensionMismatch {
                expected: rule.len(),
                got: surrogate.n_outputs(),
            });
        }
        if options.gbm_prescale.is_some() && params.kind() != ModelKind::Gbm {
            return Err(Error::Unsupported("pre-scaling applies to GBM only".into()));
        }
        let domain = surrogate.domain();
        let mut options = options;
        if let Some(dom) = &domain {
            let (lo, hi) = (dom.low[INPUT_Y_PREV], dom.high[INPUT_Y_PREV]);
            if lo == hi && options.gbm_prescale.is_none() && params.kind() == ModelKind::Gbm && lo > 0.0 {
                // fitted on normalized rows
                options.gbm_prescale = Some(lo);
            }
        }
        if let Some(dom) = &domain {
            for (i, v) in theta.iter().enumerate() {
                let (lo, hi) = (dom.low[INPUT_THETA + i], dom.high[INPUT_THETA + i]);
                let slack = THETA_SLACK * (hi - lo).abs() + 1e-9 * hi.abs().max(1.0);
                if *v < lo - slack || *v > hi + slack {
                    return Err(Error::OutOfDomain(format!(
                        "parameter {} = {v} outside trained range [{lo}, {hi}]",
                        SdeParams::theta_names(params.kind())[i]
                    )));
                }
            }
            if let Some(y_ref) = options.gbm_prescale {
                if y_ref < dom.low[INPUT_Y_PREV] || y_ref > dom.high[INPUT_Y_PREV] {
                    return Err(invalid(format!("reference value {y_ref} outside trained range")));
                }
            }
        }
        let interp = NodeInterpolator::new(options.interpolant, &rule.nodes, options.extrapolation)?;
        Ok(SevenLeagueSampler {
            surrogate,
            rule,
            params,
            theta,
            options,
            interp,
            domain,
            counters: Counters::default(),
        })
    }

    pub fn params(&self) -> &SdeParams {
        &self.params
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn options(&self) -> &SamplerOptions {
        &self.options
    }

    pub fn surrogate(&self) -> &Arc<dyn CollocationSurrogate> {
        &self.surrogate
    }

    pub fn interpolator(&self) -> &NodeInterpolator {
        &self.interp
    }

    pub fn n_points(&self) -> usize {
        self.rule.len()
    }

    /// Largest single step the surrogate was trained for.
    pub fn max_dt(&self) -> Option<f64> {
        self.domain.as_ref().map(|d| d.high[INPUT_DT])
    }

    /// Smallest step the surrogate was trained for.
    pub fn min_dt(&self) -> Option<f64> {
        self.domain.as_ref().map(|d| d.low[INPUT_DT])
    }

    /// A sampler sharing the surrogate and options with a different θ.
    pub fn with_params(&self, params: SdeParams) -> Result<Self> {
        Self::new(self.surrogate.clone(), self.rule.clone(), params, self.options)
    }

    pub fn stats(&self) -> SamplerStats {
        SamplerStats {
            evaluations: self.counters.evaluations.load(Ordering::Relaxed),
            inversions: self.counters.inversions.load(Ordering::Relaxed),
            clamped: self.counters.clamped.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        self.counters.evaluations.store(0, Ordering::Relaxed);
        self.counters.inversions.store(0, Ordering::Relaxed);
        self.counters.clamped.store(0, Ordering::Relaxed);
    }

    /// Builds the surrogate input, applying the domain policy. Returns the
    /// factor by which outputs must be multiplied (pre-scaling), and whether
    /// `y_prev` was replaced.
    pub(crate) fn prepare_input(&self, y_prev: f64, t: f64, dt: f64, input: &mut Vec<f64>) -> Result<f64> {
        if !y_prev.is_finite() {
            return Err(invalid(format!("non-finite state {y_prev}")));
        }
        if !(dt > 0.0) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let (mut y, mut step) = (y_prev, dt);
        let mut factor = 1.0;
        if let Some(y_ref) = self.options.gbm_prescale {
            if y_prev <= 0.0 {
                return Err(Error::OutOfDomain(format!("GBM state {y_prev} is not positive")));
            }
            factor = y_prev / y_ref;
            y = y_ref;
        }
        if let Some(dom) = &self.domain {
            let hi_dt = dom.high[INPUT_DT];
            if step > hi_dt * (1.0 + 1e-9) {
                return Err(Error::OutOfDomain(format!(
                    "time step {dt} exceeds the trained maximum {hi_dt}; use several steps"
                )));
            }
            let mut clamped = false;
            for (v, idx) in [(&mut y, INPUT_Y_PREV), (&mut step, INPUT_DT)] {
                let (lo, hi) = (dom.low[idx], dom.high[idx]);
                if *v < lo || *v > hi {
                    if !self.options.clamp_domain && (*v - v.clamp(lo, hi)).abs() > 1e-9 * hi.abs().max(1.0) {
                        return Err(Error::OutOfDomain(format!(
                            "input {} = {} outside trained range [{lo}, {hi}]",
                            ["y_prev", "t", "dt"][idx],
                            *v
                        )));
                    }
                    *v = v.clamp(lo, hi);
                    clamped = true;
                }
            }
            if clamped {
                self.counters.clamped.fetch_add(1, Ordering::Relaxed);
            }
        }
        surrogate_input(y, t, step, &self.theta, input);
        Ok(factor)
    }

    /// Sorts `values` in place if the surrogate returned them out of order.
    pub(crate) fn enforce_order(&self, values: &mut [f64]) {
        if values.windows(2).any(|w| w[1] < w[0]) {
            self.counters.inversions.fetch_add(1, Ordering::Relaxed);
            values.sort_by(|a, b| a.total_cmp(b));
        }
    }

    /// Conditional collocation values for one step, written to `out`.
    pub fn conditional_values(&self, y_prev: f64, t: f64, dt: f64, out: &mut [f64]) -> Result<()> {
        let mut input = Vec::with_capacity(INPUT_THETA + self.theta.len());
        let factor = self.prepare_input(y_prev, t, dt, &mut input)?;
        self.surrogate.evaluate(&input, out)?;
        self.counters.evaluations.fetch_add(1, Ordering::Relaxed);
        if factor != 1.0 {
            out.iter_mut().for_each(|v| *v *= factor);
        }
        self.enforce_order(out);
        Ok(())
    }

    pub fn conditional_points(&self, y_prev: f64, t: f64, dt: f64) -> Result<CollocationSet> {
        let mut y = vec![0.0; self.n_points()];
        self.conditional_values(y_prev, t, dt, &mut y)?;
        Ok(CollocationSet::new(self.rule.nodes.clone(), y, self.options.interpolant)?
            .with_extrapolation(self.options.extrapolation))
    }

    /// `Y(t + dt)` for the draw `z`.
    pub fn step(&self, y_prev: f64, t: f64, dt: f64, z: f64) -> Result<f64> {
        let mut buf = [0.0; 32];
        let m = self.n_points();
        if m <= buf.len() {
            self.conditional_values(y_prev, t, dt, &mut buf[..m])?;
            Ok(self.interp.evaluate(&buf[..m], z))
        } else {
            let mut y = vec![0.0; m];
            self.conditional_values(y_prev, t, dt, &mut y)?;
            Ok(self.interp.evaluate(&y, z))
        }
    }

    /// Conditional values for many states sharing `(t, dt)`, batched
    /// through the surrogate. `out` is row-major `n x m`.
    pub fn conditional_values_batch(&self, y_prev: &[f64], t: f64, dt: f64, out: &mut [f64]) -> Result<()> {
        let m = self.n_points();
        let d = INPUT_THETA + self.theta.len();
        if out.len() != y_prev.len() * m {
            return Err(Error::DimensionMismatch {
                expected: y_prev.len() * m,
                got: out.len(),
            });
        }
        let mut inputs = Vec::with_capacity(y_prev.len() * d);
        let mut row = Vec::with_capacity(d);
        let mut factors = Vec::with_capacity(y_prev.len());
        for y in y_prev {
            factors.push(self.prepare_input(*y, t, dt, &mut row)?);
            inputs.extend_from_slice(&row);
        }
        self.surrogate.evaluate_batch(&inputs, out)?;
        self.counters.evaluations.fetch_add(y_prev.len() as u64, Ordering::Relaxed);
        for (vals, f) in out.chunks_exact_mut(m).zip(factors) {
            if f != 1.0 {
                vals.iter_mut().for_each(|v| *v *= f);
            }
            self.enforce_order(vals);
        }
        Ok(())
    }

    pub fn simulate(&self, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
        let draws = NormalDraws::generate(n_paths, grid.n_steps, seed);
        self.simulate_with_draws(grid, &draws)
    }

    pub fn simulate_with_draws(&self, grid: &TimeGrid, draws: &NormalDraws) -> Result<PathEnsemble> {
        self.simulate_timed(grid, draws).map(|(e, _)| e)
    }

    /// All paths advance together one grid step at a time so that surrogate
    /// evaluations are batched. Also reports time spent obtaining
    /// conditional points versus sampling through them (summed over worker
    /// blocks).
    pub fn simulate_timed(&self, grid: &TimeGrid, draws: &NormalDraws) -> Result<(PathEnsemble, PhaseTimes)> {
        grid.validate()?;
        if draws.n_steps != grid.n_steps {
            return Err(Error::GridMismatch(format!(
                "draws cover {} steps but the grid has {}",
                draws.n_steps, grid.n_steps
            )));
        }
        let n_steps = grid.n_steps;
        let width = n_steps + 1;
        let m = self.n_points();
        let y0 = self.params.y0();
        let mut states = vec![0.0; draws.n_paths * width];
        let times = states
            .par_chunks_mut(BLOCK * width)
            .enumerate()
            .map(|(b, block)| -> Result<PhaseTimes> {
                let n = block.len() / width;
                let first = b * BLOCK;
                let mut prev = vec![y0; n];
                let mut outs = vec![0.0; n * m];
                let mut times = PhaseTimes::default();
                for k in 0..n {
                    block[k * width] = y0;
                }
                for i in 0..n_steps {
                    let clock = Instant::now();
                    self.conditional_values_batch(&prev, grid.time(i), grid.dt, &mut outs)?;
                    let mid = Instant::now();
                    for k in 0..n {
                        let z = draws.z[(first + k) * n_steps + i];
                        let y = self.interp.evaluate(&outs[k * m..(k + 1) * m], z);
                        block[k * width + i + 1] = y;
                        prev[k] = y;
                    }
                    times.conditional += mid - clock;
                    times.sampling += mid.elapsed();
                }
                Ok(times)
            })
            .try_reduce(PhaseTimes::default, |a, b| Ok(a + b))?;
        Ok((
            PathEnsemble {
                t0: grid.t0,
                dt: grid.dt,
                n_paths: draws.n_paths,
                n_steps,
                states,
                draws: draws.z.clone(),
            },
            times,
        ))
    }
}

/// Paths advanced together per worker task.
pub(crate) const BLOCK: usize = 256;

/// Wall-clock split of an on-line simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub conditional: Duration,
    pub sampling: Duration,
}

impl std::ops::Add for PhaseTimes {
    type Output = PhaseTimes;
    fn add(self, o: PhaseTimes) -> PhaseTimes {
        PhaseTimes {
            conditional: self.conditional + o.conditional,
            sampling: self.sampling + o.sampling,
        }
    }
}

impl Stepper for SevenLeagueSampler {
    fn step(&self, _step_index: usize, t: f64, y: f64, dt: f64, z: f64) -> Result<f64> {
        SevenLeagueSampler::step(self, y, t, dt, z)
    }
}
