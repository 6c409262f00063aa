//! Convergence, KS and timing studies, with CSV/JSON output and a run
//! manifest.
//!
//! CSV schemas:
//! - convergence: `dt,strong_error,strong_stderr,weak_error,weak_stderr`
//! - KS: `time,statistic,p_value`
//! - timing: `scheme,interpolant,dt,n_paths,build_s,conditional_s,sampling_s,total_s`

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdc::{build_matrix, predicted_speedup, time_per_call, Decompressor};
use crate::error::{invalid, Error, Result};
use crate::interpolation::{Extrapolation, InterpolantKind};
use crate::models::{SdeParams, TimeGrid};
use crate::paths::{simulate, NormalDraws, PathEnsemble, Stepper};
use crate::probability::{ks_two_sample, EmpiricalDistribution};
use crate::rng::{fill_standard_normal, stream_rng, streams};
use crate::schemes::{simulate_with_draws, ClassicalScheme};
use crate::seven_league::{SevenLeagueSampler, BLOCK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    Euler,
    Milstein,
    Exact,
    #[serde(rename = "7l")]
    SevenLeague,
    #[serde(rename = "7l-cdc", alias = "7lcdc", alias = "cdc")]
    SevenLeagueCdc,
}

impl SchemeId {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeId::Euler => "euler",
            SchemeId::Milstein => "milstein",
            SchemeId::Exact => "exact",
            SchemeId::SevenLeague => "7l",
            SchemeId::SevenLeagueCdc => "7l-cdc",
        }
    }

    pub fn needs_surrogate(&self) -> bool {
        matches!(self, SchemeId::SevenLeague | SchemeId::SevenLeagueCdc)
    }
}

impl std::fmt::Display for SchemeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "euler" => SchemeId::Euler,
            "milstein" => SchemeId::Milstein,
            "exact" => SchemeId::Exact,
            "7l" => SchemeId::SevenLeague,
            "7l-cdc" | "7lcdc" | "cdc" => SchemeId::SevenLeagueCdc,
            other => return Err(invalid(format!("unknown scheme '{other}'"))),
        })
    }
}

/// Where paths come from.
#[derive(Clone, Copy)]
pub enum PathSource<'a> {
    Classical(ClassicalScheme),
    SevenLeague(&'a SevenLeagueSampler),
    Cdc {
        conditional: &'a SevenLeagueSampler,
        marginal: &'a SevenLeagueSampler,
        interpolant: InterpolantKind,
        /// Marginal-direction policy outside the hull.
        extrapolation: Extrapolation,
    },
}

impl<'a> PathSource<'a> {
    pub fn id(&self) -> SchemeId {
        match self {
            PathSource::Classical(ClassicalScheme::Euler) => SchemeId::Euler,
            PathSource::Classical(ClassicalScheme::Milstein) => SchemeId::Milstein,
            PathSource::Classical(ClassicalScheme::Exact) => SchemeId::Exact,
            PathSource::SevenLeague(_) => SchemeId::SevenLeague,
            PathSource::Cdc { .. } => SchemeId::SevenLeagueCdc,
        }
    }

    /// Paths for `params` on `grid`, driven by `draws`.
    pub fn simulate(&self, params: &SdeParams, grid: &TimeGrid, draws: &NormalDraws) -> Result<PathEnsemble> {
        match *self {
            PathSource::Classical(s) => simulate_with_draws(params, grid, s, draws),
            PathSource::SevenLeague(s) => rebind(s, params)?.simulate_with_draws(grid, draws),
            PathSource::Cdc {
                conditional,
                marginal,
                interpolant,
                extrapolation,
            } => {
                let (c, m) = (rebind(conditional, params)?, rebind(marginal, params)?);
                let (matrix, _) = build_matrix(&c, &m, grid)?;
                Decompressor::with_extrapolation(matrix, interpolant, extrapolation)?.simulate_with_draws(draws)
            }
        }
    }
}

fn rebind(s: &SevenLeagueSampler, params: &SdeParams) -> Result<SevenLeagueSampler> {
    s.with_params(*params)
}

/// Exact transitions, used as the reference path source.
struct ExactStepper(SdeParams);

impl Stepper for ExactStepper {
    fn step(&self, _i: usize, t: f64, y: f64, dt: f64, z: f64) -> Result<f64> {
        Ok(self.0.exact_sample(t, y, dt, z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub scheme: SchemeId,
    pub params: SdeParams,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub dt_values: Vec<f64>,
    pub strong_errors: Vec<f64>,
    pub strong_stderr: Vec<f64>,
    pub weak_errors: Vec<f64>,
    pub weak_stderr: Vec<f64>,
    /// `None` when fewer than two points clear the noise floor.
    pub strong_slope: Option<f64>,
    pub weak_slope: Option<f64>,
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dt,strong_error,strong_stderr,weak_error,weak_stderr")?;
        for i in 0..self.dt_values.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.dt_values[i], self.strong_errors[i], self.strong_stderr[i], self.weak_errors[i], self.weak_stderr[i]
            )?;
        }
        Ok(())
    }
}

/// Multiples of the noise standard error below which a point is dropped from
/// the slope fit.
pub const NOISE_FLOOR_SE: f64 = 3.0;

/// Errors at or below this are round-off and never enter a slope fit.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Least-squares slope of `ln err` against `ln dt`, over points whose error
/// exceeds `NOISE_FLOOR_SE` standard errors.
pub fn fit_slope(dt: &[f64], err: &[f64], stderr: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = dt
        .iter()
        .zip(err)
        .zip(stderr)
        .filter(|((_, e), s)| **e > ROUNDOFF_FLOOR && **e > NOISE_FLOOR_SE * **s)
        .map(|((d, e), _)| (d.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Step ratios of `dt_values` to the finest step, checked to be integers
/// that also divide the horizon.
fn crn_layout(horizon: f64, dt_values: &[f64]) -> Result<(f64, usize, Vec<usize>)> {
    if dt_values.is_empty() {
        return Err(invalid("no time steps given"));
    }
    let fine = dt_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let fine_grid = TimeGrid::with_horizon(0.0, fine, horizon)?;
    let factors = dt_values
        .iter()
        .map(|dt| {
            let r = dt / fine;
            let f = r.round();
            if (r - f).abs() > 1e-9 * r || fine_grid.n_steps % (f as usize) != 0 {
                Err(invalid(format!(
                    "dt {dt} is not a multiple of {fine} dividing the horizon {horizon}"
                )))
            } else {
                Ok(f as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((fine, fine_grid.n_steps, factors))
}

/// Terminal values of the reference solution under the fine draws. GBM uses
/// the exact solution in terms of `W(T)`; other models use exact
/// transitions on the fine grid.
fn reference_terminal(params: &SdeParams, fine: f64, draws: &NormalDraws) -> Result<Vec<f64>> {
    match params {
        SdeParams::Gbm { .. } => {
            let w = draws.coarsen(draws.n_steps)?;
            Ok(w.z.iter().map(|z| params.exact_sample(0.0, params.y0(), fine * draws.n_steps as f64, *z)).collect())
        }
        _ => {
            let grid = TimeGrid::new(0.0, fine, draws.n_steps)?;
            Ok(simulate(&ExactStepper(*params), params.y0(), &grid, draws)?.terminal())
        }
    }
}

/// Strong error `mean |Y̌(T) - Ŷ(T)|` and weak error `|mean Y̌(T) - mean Ŷ(T)|`
/// for each step, with common random numbers across steps.
pub fn strong_weak_errors(
    source: &PathSource,
    params: &SdeParams,
    horizon: f64,
    dt_values: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    params.validate()?;
    if n_paths == 0 {
        return Err(invalid("n_paths must be at least 1"));
    }
    let (fine, n_fine, factors) = crn_layout(horizon, dt_values)?;
    let fine_draws = NormalDraws::generate(n_paths, n_fine, seed);
    let reference = reference_terminal(params, fine, &fine_draws)?;
    let mut rep = ConvergenceReport {
        scheme: source.id(),
        params: *params,
        horizon,
        n_paths,
        seed,
        dt_values: dt_values.to_vec(),
        strong_errors: Vec::new(),
        strong_stderr: Vec::new(),
        weak_errors: Vec::new(),
        weak_stderr: Vec::new(),
        strong_slope: None,
        weak_slope: None,
    };
    for (dt, f) in dt_values.iter().zip(factors) {
        let draws = fine_draws.coarsen(f)?;
        let grid = TimeGrid::new(0.0, *dt, n_fine / f)?;
        let approx = source.simulate(params, &grid, &draws)?.terminal();
        let abs: Vec<f64> = reference.iter().zip(&approx).map(|(a, b)| (a - b).abs()).collect();
        let diff: Vec<f64> = reference.iter().zip(&approx).map(|(a, b)| a - b).collect();
        let (s, s_se) = mean_and_se(&abs);
        let (w, w_se) = mean_and_se(&diff);
        rep.strong_errors.push(s);
        rep.strong_stderr.push(s_se);
        rep.weak_errors.push(w.abs());
        rep.weak_stderr.push(w_se);
    }
    rep.strong_slope = fit_slope(&rep.dt_values, &rep.strong_errors, &rep.strong_stderr);
    rep.weak_slope = fit_slope(&rep.dt_values, &rep.weak_errors, &rep.weak_stderr);
    Ok(rep)
}

/// How the exact reference samples relate to the scheme's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Exact transitions driven by the scheme's own draws.
    #[default]
    Common,
    /// Independent exact samples.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsPoint {
    pub time: f64,
    pub statistic: f64,
    pub p_value: f64,
}

pub fn write_ks_csv<W: Write>(points: &[KsPoint], mut out: W) -> Result<()> {
    writeln!(out, "time,statistic,p_value")?;
    for p in points {
        writeln!(out, "{},{},{}", p.time, p.statistic, p.p_value)?;
    }
    Ok(())
}

fn reference_draws(n_paths: usize, n_steps: usize, seed: u64) -> NormalDraws {
    let mut z = vec![0.0; n_paths * n_steps];
    for (k, row) in z.chunks_mut(n_steps.max(1)).enumerate() {
        let mut rng = stream_rng(seed, streams::REFERENCE + k as u64);
        fill_standard_normal(&mut rng, row);
    }
    NormalDraws { n_paths, n_steps, z }
}

/// Two-sample KS statistic between the scheme and exact samples at every
/// grid time after `t0`.
pub fn ks_over_time(
    source: &PathSource,
    params: &SdeParams,
    dt: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    coupling: Coupling,
) -> Result<Vec<KsPoint>> {
    params.validate()?;
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let grid = TimeGrid::with_horizon(0.0, dt, horizon)?;
    let draws = NormalDraws::generate(n_samples, grid.n_steps, seed);
    let paths = source.simulate(params, &grid, &draws)?;
    let ref_draws = match coupling {
        Coupling::Independent => reference_draws(n_samples, grid.n_steps, seed),
        Coupling::Common => draws,
    };
    let exact = simulate(&ExactStepper(*params), params.y0(), &grid, &ref_draws)?;
    (1..=grid.n_steps)
        .map(|i| {
            let r = ks_two_sample(
                &EmpiricalDistribution::new(paths.column(i))?,
                &EmpiricalDistribution::new(exact.column(i))?,
            );
            Ok(KsPoint {
                time: grid.time(i),
                statistic: r.statistic,
                p_value: r.p_value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub params: SdeParams,
    pub horizon: f64,
    pub dt_values: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_interpolants")]
    pub interpolants: Vec<InterpolantKind>,
}

fn default_interpolants() -> Vec<InterpolantKind> {
    vec![InterpolantKind::Pchip]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: SchemeId,
    pub interpolant: InterpolantKind,
    pub dt: f64,
    pub n_paths: usize,
    /// Matrix construction; zero for the plain scheme.
    pub build_s: f64,
    /// Conditional points per path and step (network or decompression).
    pub conditional_s: f64,
    /// Interpolation at the normal draws.
    pub sampling_s: f64,
    pub total_s: f64,
}

/// Measured and modelled cost ratio of the conditional-point phase, CDC
/// over plain, for one step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupCheck {
    pub dt: f64,
    pub interpolant: InterpolantKind,
    /// Seconds per decompression of one state (`t_I`).
    pub t_interp: f64,
    /// Seconds per batched surrogate evaluation of one state (`t_A`).
    pub t_ann: f64,
    pub predicted: f64,
    /// `(build + CDC conditional phase) / 7L conditional phase`.
    pub measured: f64,
    /// `CDC total / 7L total`.
    pub total_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub speedups: Vec<SpeedupCheck>,
}

impl TimingReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "scheme,interpolant,dt,n_paths,build_s,conditional_s,sampling_s,total_s")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.scheme,
                interpolant_name(r.interpolant),
                r.dt,
                r.n_paths,
                r.build_s,
                r.conditional_s,
                r.sampling_s,
                r.total_s
            )?;
        }
        Ok(())
    }
}

fn interpolant_name(k: InterpolantKind) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

const MICRO_TIME: Duration = Duration::from_millis(100);

/// Wall-clock comparison of the plain seven-league scheme and its CDC
/// variant on the same draws.
pub fn timing_benchmark(
    conditional: &SevenLeagueSampler,
    marginal: &SevenLeagueSampler,
    config: &TimingConfig,
) -> Result<TimingReport> {
    if config.n_paths == 0 || config.interpolants.is_empty() {
        return Err(invalid("timing needs paths and at least one interpolant"));
    }
    let (c, m) = (rebind(conditional, &config.params)?, rebind(marginal, &config.params)?);
    let mut rows = Vec::new();
    let mut speedups = Vec::new();
    for dt in &config.dt_values {
        let grid = TimeGrid::with_horizon(0.0, *dt, config.horizon)?;
        let draws = NormalDraws::generate(config.n_paths, grid.n_steps, config.seed);
        let clock = Instant::now();
        let (_, plain) = c.simulate_timed(&grid, &draws)?;
        let plain_total = clock.elapsed().as_secs_f64();
        rows.push(TimingRow {
            scheme: SchemeId::SevenLeague,
            interpolant: c.options().interpolant,
            dt: *dt,
            n_paths: config.n_paths,
            build_s: 0.0,
            conditional_s: plain.conditional.as_secs_f64(),
            sampling_s: plain.sampling.as_secs_f64(),
            total_s: plain_total,
        });
        let states: Vec<f64> = (0..BLOCK).map(|k| m.params().y0() * (0.5 + k as f64 / BLOCK as f64)).collect();
        let mut buf = vec![0.0; BLOCK * c.n_points()];
        let t_ann = time_per_call(
            || {
                c.conditional_values_batch(&states, grid.t0, *dt, &mut buf).ok();
            },
            MICRO_TIME,
        ) / BLOCK as f64;
        for kind in &config.interpolants {
            let clock = Instant::now();
            let (matrix, _) = build_matrix(&c, &m, &grid)?;
            let build = clock.elapsed().as_secs_f64();
            let dec = Decompressor::new(matrix, *kind)?;
            let clock = Instant::now();
            let (_, phases) = dec.simulate_timed(&draws)?;
            let decompress = clock.elapsed().as_secs_f64();
            let total = build + decompress;
            rows.push(TimingRow {
                scheme: SchemeId::SevenLeagueCdc,
                interpolant: *kind,
                dt: *dt,
                n_paths: config.n_paths,
                build_s: build,
                conditional_s: phases.conditional.as_secs_f64(),
                sampling_s: phases.sampling.as_secs_f64(),
                total_s: total,
            });
            let mut out = vec![0.0; c.n_points()];
            let mut k = 0usize;
            let t_interp = time_per_call(
                || {
                    k = (k + 1) % BLOCK;
                    dec.conditional_values(k % grid.n_steps, states[k], &mut out);
                },
                MICRO_TIME,
            );
            speedups.push(SpeedupCheck {
                dt: *dt,
                interpolant: *kind,
                t_interp,
                t_ann,
                predicted: predicted_speedup(t_interp, t_ann, m.n_points(), config.n_paths)?,
                measured: (build + phases.conditional.as_secs_f64()) / plain.conditional.as_secs_f64(),
                total_ratio: total / plain_total,
            });
        }
    }
    Ok(TimingReport { rows, speedups })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one run: what was asked, with which seeds, and what was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").unwrap();
    }
    Ok(s)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds,
            artifacts: Vec::new(),
        }
    }

    pub fn add_artifact(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
