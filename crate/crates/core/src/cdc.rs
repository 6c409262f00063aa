//! Compression-decompression variant of the seven-league scheme.
//!
//! Compression evaluates the surrogate only at `M_s` marginal collocation
//! points per grid time, giving for each time a table of `M_s x M_c`
//! conditional points. Decompression recovers the conditional points of any
//! realization by interpolating that table over the marginal points, so no
//! network evaluation happens per path.
//!
//! Files: a JSON header (`CdcHeader`) and a binary body of little-endian
//! f64 values. For each time index `i` in order: the `M_s` marginal values,
//! then the `M_s x M_c` conditional values with `k` (conditional index)
//! varying fastest.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interpolation::{Extrapolation, InterpolantKind, NodeInterpolator};
use crate::models::{SdeParams, TimeGrid};
use crate::paths::{NormalDraws, PathEnsemble, Stepper};
use crate::scmc::CollocationSet;
use crate::seven_league::{PhaseTimes, SevenLeagueSampler, BLOCK};

pub const CDC_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CdcMatrix {
    pub params: SdeParams,
    pub grid: TimeGrid,
    pub x_nodes: Vec<f64>,
    pub x_cond_nodes: Vec<f64>,
    /// `n_times x M_s`.
    pub marginal: Vec<f64>,
    /// `n_times x M_s x M_c`.
    pub conditional: Vec<f64>,
}

/// Surrogate work done while building a matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    /// Forward passes of the marginal surrogate.
    pub marginal_evaluations: u64,
    /// Forward passes of the conditional surrogate.
    pub conditional_evaluations: u64,
    /// Scalar surrogate outputs produced in total.
    pub values: u64,
}

impl CdcMatrix {
    /// Number of conditioning times (one per grid step).
    pub fn n_times(&self) -> usize {
        self.grid.n_steps
    }

    pub fn m_s(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn m_c(&self) -> usize {
        self.x_cond_nodes.len()
    }

    pub fn marginal_row(&self, i: usize) -> &[f64] {
        &self.marginal[i * self.m_s()..(i + 1) * self.m_s()]
    }

    /// Row `j` of the conditional table at time `i`: `ŷ_{k|j}(t_i)` over `k`.
    pub fn conditional_row(&self, i: usize, j: usize) -> &[f64] {
        let (ms, mc) = (self.m_s(), self.m_c());
        let off = (i * ms + j) * mc;
        &self.conditional[off..off + mc]
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let (n, ms, mc) = (self.n_times(), self.m_s(), self.m_c());
        if ms == 0 || mc < 2 || self.marginal.len() != n * ms || self.conditional.len() != n * ms * mc {
            return Err(Error::Format("matrix dimensions are inconsistent".into()));
        }
        for i in 0..n {
            if self.marginal_row(i).windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Format(format!("marginal row {i} is not sorted")));
            }
            for j in 0..ms {
                if self.conditional_row(i, j).windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Format(format!("conditional row ({i}, {j}) is not sorted")));
                }
            }
        }
        if self.marginal.iter().chain(&self.conditional).any(|v| !v.is_finite()) {
            return Err(Error::Format("matrix holds non-finite values".into()));
        }
        Ok(())
    }

    /// Conditional points at time index `i` for the realization `y_star`.
    pub fn conditional_points(&self, i: usize, y_star: f64, kind: InterpolantKind) -> Result<CollocationSet> {
        let slice = TimeSlice::new(self, i, kind, Extrapolation::Clamp)?;
        let mut out = vec![0.0; self.m_c()];
        slice.evaluate(y_star, &mut out);
        sort_if_needed(&mut out);
        CollocationSet::new(self.x_cond_nodes.clone(), out, kind)
    }

    pub fn header(&self, body_file: &str) -> CdcHeader {
        CdcHeader {
            format_version: CDC_FORMAT_VERSION,
            params: self.params,
            grid: self.grid,
            n_times: self.n_times(),
            m_s: self.m_s(),
            m_c: self.m_c(),
            x_nodes: self.x_nodes.clone(),
            x_cond_nodes: self.x_cond_nodes.clone(),
            body_file: body_file.into(),
        }
    }

    pub fn body_path(header: &Path) -> PathBuf {
        header.with_extension("bin")
    }

    /// Writes `<path>` (JSON header) and the body next to it with extension
    /// `.bin`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = Self::body_path(path);
        let name = body
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| invalid("matrix path has no file name"))?;
        std::fs::write(path, serde_json::to_string_pretty(&self.header(name))?)?;
        let mut w = BufWriter::new(std::fs::File::create(&body)?);
        for i in 0..self.n_times() {
            for v in self.marginal_row(i) {
                w.write_all(&v.to_le_bytes())?;
            }
            for j in 0..self.m_s() {
                for v in self.conditional_row(i, j) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let h: CdcHeader = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if h.format_version != CDC_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported matrix format version {}",
                h.format_version
            )));
        }
        if h.n_times != h.grid.n_steps || h.x_nodes.len() != h.m_s || h.x_cond_nodes.len() != h.m_c {
            return Err(Error::Format("matrix header is inconsistent".into()));
        }
        let body = path.with_file_name(&h.body_file);
        let mut bytes = Vec::new();
        BufReader::new(std::fs::File::open(&body)?).read_to_end(&mut bytes)?;
        let per = h.m_s * (1 + h.m_c);
        if bytes.len() != h.n_times * per * 8 {
            return Err(Error::Format(format!(
                "matrix body holds {} bytes, expected {}",
                bytes.len(),
                h.n_times * per * 8
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut marginal = Vec::with_capacity(h.n_times * h.m_s);
        let mut conditional = Vec::with_capacity(h.n_times * h.m_s * h.m_c);
        for block in vals.chunks_exact(per) {
            marginal.extend_from_slice(&block[..h.m_s]);
            conditional.extend_from_slice(&block[h.m_s..]);
        }
        let m = CdcMatrix {
            params: h.params,
            grid: h.grid,
            x_nodes: h.x_nodes,
            x_cond_nodes: h.x_cond_nodes,
            marginal,
            conditional,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdcHeader {
    pub format_version: u32,
    pub params: SdeParams,
    pub grid: TimeGrid,
    pub n_times: usize,
    pub m_s: usize,
    pub m_c: usize,
    pub x_nodes: Vec<f64>,
    pub x_cond_nodes: Vec<f64>,
    pub body_file: String,
}

/// Compression. Marginal points at `t_i` come from `marginal` evaluated at
/// `(Y0, t0, t_i - t0)`; at `t_0` the marginal law is the point mass `Y0`.
/// Conditional rows come from `conditional` at `(ỹ_j(t_i), t_i, Δt)`.
/// Both samplers must describe the same parameters.
pub fn build_matrix(
    conditional: &SevenLeagueSampler,
    marginal: &SevenLeagueSampler,
    grid: &TimeGrid,
) -> Result<(CdcMatrix, BuildStats)> {
    grid.validate()?;
    if conditional.params() != marginal.params() {
        return Err(invalid("marginal and conditional samplers use different parameters"));
    }
    let params = *conditional.params();
    let y0 = params.y0();
    let (ms, mc) = (marginal.n_points(), conditional.n_points());
    let n = grid.n_steps;
    let rows: Vec<(Vec<f64>, Vec<f64>, BuildStats)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>, BuildStats)> {
            let mut stats = BuildStats::default();
            let mut marg = vec![y0; ms];
            if i > 0 {
                marginal.conditional_values(y0, grid.t0, grid.time(i) - grid.t0, &mut marg)?;
                stats.marginal_evaluations += 1;
                stats.values += ms as u64;
            }
            let mut cond = vec![0.0; ms * mc];
            conditional.conditional_values_batch(&marg, grid.time(i), grid.dt, &mut cond)?;
            stats.conditional_evaluations += ms as u64;
            stats.values += (ms * mc) as u64;
            Ok((marg, cond, stats))
        })
        .collect::<Result<_>>()?;
    let mut out = CdcMatrix {
        params,
        grid: *grid,
        x_nodes: marginal.rule().nodes.clone(),
        x_cond_nodes: conditional.rule().nodes.clone(),
        marginal: Vec::with_capacity(n * ms),
        conditional: Vec::with_capacity(n * ms * mc),
    };
    let mut stats = BuildStats::default();
    for (m, c, s) in rows {
        out.marginal.extend(m);
        out.conditional.extend(c);
        stats.marginal_evaluations += s.marginal_evaluations;
        stats.conditional_evaluations += s.conditional_evaluations;
        stats.values += s.values;
    }
    out.validate()?;
    Ok((out, stats))
}

fn sort_if_needed(v: &mut [f64]) -> bool {
    if v.windows(2).any(|w| w[1] < w[0]) {
        v.sort_by(|a, b| a.total_cmp(b));
        true
    } else {
        false
    }
}

/// Interpolation over marginal points at one time. Coinciding marginal
/// points are merged (their conditional rows averaged); a single distinct
/// point makes the conditional points constant.
#[derive(Debug, Clone)]
struct TimeSlice {
    interp: Option<NodeInterpolator>,
    /// `M_c` columns over the distinct knots, column-major by `k`.
    columns: Vec<Vec<f64>>,
}

impl TimeSlice {
    fn new(m: &CdcMatrix, i: usize, kind: InterpolantKind, extrapolation: Extrapolation) -> Result<Self> {
        if i >= m.n_times() {
            return Err(invalid(format!("time index {i} out of range")));
        }
        let row = m.marginal_row(i);
        let mut knots: Vec<f64> = Vec::with_capacity(row.len());
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (j, y) in row.iter().enumerate() {
            let tol = 1e-12 * y.abs().max(1e-300);
            match knots.last() {
                Some(last) if (y - last).abs() <= tol => groups.last_mut().unwrap().push(j),
                _ => {
                    knots.push(*y);
                    groups.push(vec![j]);
                }
            }
        }
        let columns: Vec<Vec<f64>> = (0..m.m_c())
            .map(|k| {
                groups
                    .iter()
                    .map(|g| g.iter().map(|j| m.conditional_row(i, *j)[k]).sum::<f64>() / g.len() as f64)
                    .collect()
            })
            .collect();
        let interp = if knots.len() >= 2 {
            Some(NodeInterpolator::new(kind, &knots, extrapolation)?)
        } else {
            None
        };
        Ok(TimeSlice { interp, columns })
    }

    #[inline]
    fn evaluate(&self, y_star: f64, out: &mut [f64]) {
        match &self.interp {
            Some(ip) => {
                for (o, col) in out.iter_mut().zip(&self.columns) {
                    *o = ip.evaluate(col, y_star);
                }
            }
            None => {
                for (o, col) in out.iter_mut().zip(&self.columns) {
                    *o = col[0];
                }
            }
        }
    }
}

/// Path recovery from a matrix without surrogate calls.
#[derive(Debug, Clone)]
pub struct Decompressor {
    matrix: CdcMatrix,
    slices: Vec<TimeSlice>,
    sample: NodeInterpolator,
}

impl Decompressor {
    /// Realizations outside the marginal hull clamp to the nearest row.
    pub fn new(matrix: CdcMatrix, kind: InterpolantKind) -> Result<Self> {
        Self::with_extrapolation(matrix, kind, Extrapolation::Clamp)
    }

    /// `extrapolation` applies in the marginal direction only; sampling
    /// over the conditional nodes always clamps.
    pub fn with_extrapolation(matrix: CdcMatrix, kind: InterpolantKind, extrapolation: Extrapolation) -> Result<Self> {
        matrix.validate()?;
        let slices = (0..matrix.n_times())
            .map(|i| TimeSlice::new(&matrix, i, kind, extrapolation))
            .collect::<Result<Vec<_>>>()?;
        let sample = NodeInterpolator::new(kind, &matrix.x_cond_nodes, Extrapolation::Clamp)?;
        Ok(Decompressor {
            matrix,
            slices,
            sample,
        })
    }

    pub fn matrix(&self) -> &CdcMatrix {
        &self.matrix
    }

    /// `ŷ*_k` at time index `i`, sorted if interpolation crossed rows.
    #[inline]
    pub fn conditional_values(&self, i: usize, y_star: f64, out: &mut [f64]) {
        self.slices[i].evaluate(y_star, out);
        sort_if_needed(out);
    }

    pub fn simulate(&self, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
        let draws = NormalDraws::generate(n_paths, self.matrix.grid.n_steps, seed);
        self.simulate_with_draws(&draws)
    }

    pub fn simulate_with_draws(&self, draws: &NormalDraws) -> Result<PathEnsemble> {
        self.simulate_timed(draws).map(|(e, _)| e)
    }

    /// Same block structure and phase split as the seven-league simulator.
    pub fn simulate_timed(&self, draws: &NormalDraws) -> Result<(PathEnsemble, PhaseTimes)> {
        let grid = self.matrix.grid;
        if draws.n_steps != grid.n_steps {
            return Err(Error::GridMismatch(format!(
                "draws cover {} steps but the matrix has {}",
                draws.n_steps, grid.n_steps
            )));
        }
        let n_steps = grid.n_steps;
        let width = n_steps + 1;
        let mc = self.matrix.m_c();
        let y0 = self.matrix.params.y0();
        let mut states = vec![0.0; draws.n_paths * width];
        let times = states
            .par_chunks_mut(BLOCK * width)
            .enumerate()
            .map(|(b, block)| {
                let n = block.len() / width;
                let first = b * BLOCK;
                let mut outs = vec![0.0; n * mc];
                let mut times = PhaseTimes::default();
                for k in 0..n {
                    block[k * width] = y0;
                }
                for i in 0..n_steps {
                    let clock = Instant::now();
                    for k in 0..n {
                        self.conditional_values(i, block[k * width + i], &mut outs[k * mc..(k + 1) * mc]);
                    }
                    let mid = Instant::now();
                    for k in 0..n {
                        let z = draws.z[(first + k) * n_steps + i];
                        block[k * width + i + 1] = self.sample.evaluate(&outs[k * mc..(k + 1) * mc], z);
                    }
                    times.conditional += mid - clock;
                    times.sampling += mid.elapsed();
                }
                times
            })
            .reduce(PhaseTimes::default, |a, b| a + b);
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

impl Stepper for Decompressor {
    fn step(&self, step_index: usize, _t: f64, y: f64, _dt: f64, z: f64) -> Result<f64> {
        if step_index >= self.slices.len() {
            return Err(invalid(format!("step {step_index} beyond the matrix grid")));
        }
        let mut buf = vec![0.0; self.matrix.m_c()];
        self.conditional_values(step_index, y, &mut buf);
        Ok(self.sample.evaluate(&buf, z))
    }
}

/// Decompresses `n_paths` paths from `matrix`.
pub fn simulate_cdc(matrix: &CdcMatrix, n_paths: usize, seed: u64, kind: InterpolantKind) -> Result<PathEnsemble> {
    Decompressor::new(matrix.clone(), kind)?.simulate(n_paths, seed)
}

/// Predicted cost ratio of the conditional-point phase, CDC over plain:
/// `γ = t_I / t_A + M_s / M`.
pub fn predicted_speedup(t_interp: f64, t_ann: f64, m_s: usize, m_paths: usize) -> Result<f64> {
    if !(t_interp > 0.0) || !(t_ann > 0.0) || m_paths == 0 {
        return Err(invalid("timings and path count must be positive"));
    }
    Ok(t_interp / t_ann + m_s as f64 / m_paths as f64)
}

/// Mean wall-clock time per call of `f`, over at least `min_time`.
pub fn time_per_call(mut f: impl FnMut(), min_time: Duration) -> f64 {
    let mut calls = 0u64;
    let start = Instant::now();
    while start.elapsed() < min_time || calls < 10 {
        for _ in 0..64 {
            f();
        }
        calls += 64;
    }
    start.elapsed().as_secs_f64() / calls as f64
}
