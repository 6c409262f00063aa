//! Training data for the collocation surrogate.
//!
//! Parameter points come from a Latin hypercube over `(Y0, θ)`. For each
//! point a fine-grid Monte Carlo run with step `Δτ` produces the empirical
//! quantiles at `Φ(x_j)` for every labelled grid time `τ_i`. Because the
//! processes are Markov, the row `(Y0, 0, τ_i, θ) -> quantiles` doubles as a
//! conditional label for any previous realization `Y0`.
//!
//! CSV layout: header `y_prev,t,dt,<theta names>,y_hat_1..y_hat_m`, one row
//! per sample. Provenance goes to a JSON sidecar at `<csv path>.json`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{invalid, Error, Result};
use crate::models::{ModelKind, SdeParams};
use crate::probability::{quantile_sorted, std_normal_cdf, QuadratureRule};
use crate::rng::{fill_standard_normal, stream_rng, streams};
use crate::schemes::{euler_step, milstein_step, ClassicalScheme};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBound {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl ParamBound {
    pub fn new(name: &str, low: f64, high: f64) -> Self {
        ParamBound {
            name: name.into(),
            low,
            high,
        }
    }
}

fn default_label_every() -> usize {
    1
}

/// Sampling domain and fine-grid settings. `bounds` holds `y0` first, then
/// the model parameters in θ order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDomain {
    pub model: ModelKind,
    pub bounds: Vec<ParamBound>,
    pub dtau: f64,
    pub tau_max: f64,
    pub n_tau: usize,
    pub n_lhs: usize,
    pub n_mc_paths: usize,
    /// Emit a row every `label_every` fine steps.
    #[serde(default = "default_label_every")]
    pub label_every: usize,
}

impl ParamDomain {
    /// GBM domain of the reference experiment: μ ∈ (0, 0.1], σ ∈ [0.05, 0.6],
    /// Y0 ∈ [0.1, 15], τ up to 1.6 with Δτ = 0.01.
    pub fn gbm_default() -> Self {
        ParamDomain {
            model: ModelKind::Gbm,
            bounds: vec![
                ParamBound::new("y0", 0.10, 15.0),
                ParamBound::new("mu", 0.0, 0.10),
                ParamBound::new("sigma", 0.05, 0.60),
            ],
            dtau: 0.01,
            tau_max: 1.6,
            n_tau: 160,
            n_lhs: 500,
            n_mc_paths: 100_000,
            label_every: 1,
        }
    }

    /// Second GBM set reaching the terminal time, used for marginal points.
    pub fn gbm_marginal(tau_max: f64) -> Self {
        let n_tau = (tau_max / 0.01).round() as usize;
        let mut d = Self::gbm_default();
        d.bounds[0].high = 5.0;
        d.tau_max = tau_max;
        d.n_tau = n_tau;
        d
    }

    pub fn ou_default() -> Self {
        ParamDomain {
            model: ModelKind::Ou,
            bounds: vec![
                ParamBound::new("y0", -1.0, 3.0),
                ParamBound::new("ybar", 0.0, 2.0),
                ParamBound::new("sigma", 0.05, 0.60),
                ParamBound::new("lambda", 0.1, 1.0),
            ],
            dtau: 0.01,
            tau_max: 4.1,
            n_tau: 410,
            n_lhs: 410,
            n_mc_paths: 100_000,
            label_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names = SdeParams::theta_names(self.model);
        if self.bounds.len() != names.len() + 1 {
            return Err(invalid(format!(
                "expected bounds for y0 and {names:?}, got {} entries",
                self.bounds.len()
            )));
        }
        for (b, want) in self.bounds.iter().zip(std::iter::once(&"y0").chain(names)) {
            if b.name != *want {
                return Err(invalid(format!("bound {:?} should be {want:?}", b.name)));
            }
            if !(b.low < b.high) || !b.low.is_finite() || !b.high.is_finite() {
                return Err(invalid(format!("bound {} needs low < high", b.name)));
            }
        }
        if !(self.dtau > 0.0) || self.n_tau == 0 {
            return Err(invalid("dtau and n_tau must be positive"));
        }
        if (self.dtau * self.n_tau as f64 - self.tau_max).abs() > self.dtau * (1.0 + 1e-9) {
            return Err(invalid(format!(
                "dtau * n_tau = {} is inconsistent with tau_max = {}",
                self.dtau * self.n_tau as f64,
                self.tau_max
            )));
        }
        if self.n_lhs == 0 || self.label_every == 0 || self.label_every > self.n_tau {
            return Err(invalid("n_lhs and label_every must be positive, label_every <= n_tau"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Number of rows per parameter point.
    pub fn labels_per_point(&self) -> usize {
        self.n_tau / self.label_every
    }

    pub fn n_rows(&self) -> usize {
        self.n_lhs * self.labels_per_point()
    }
}

/// `n` points in the box, one per stratum in every dimension, with uniform
/// jitter inside each stratum and independent permutations per dimension.
pub fn latin_hypercube(bounds: &[ParamBound], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, streams::LHS);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(bounds.len());
    for b in bounds {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let col = perm
            .iter()
            .map(|k| {
                let u: f64 = rng.gen();
                b.low + (b.high - b.low) * (*k as f64 + u) / n as f64
            })
            .collect();
        cols.push(col);
    }
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub model: ModelKind,
    pub input_names: Vec<String>,
    pub collocation_nodes: Vec<f64>,
    pub scheme: ClassicalScheme,
    pub domains: Vec<ParamDomain>,
    pub seeds: Vec<u64>,
    pub n_rows: usize,
    /// GBM rows divided by their starting value.
    #[serde(default)]
    pub normalized: bool,
}

/// Row-major input/target tables plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub meta: DatasetMeta,
}

fn input_names(kind: ModelKind) -> Vec<String> {
    ["y_prev", "t", "dt"]
        .iter()
        .chain(SdeParams::theta_names(kind))
        .map(|s| s.to_string())
        .collect()
}

/// Quantile labels for every Latin-hypercube point of `domain`.
pub fn generate_labels(
    domain: &ParamDomain,
    rule: &QuadratureRule,
    scheme: ClassicalScheme,
    seed: u64,
) -> Result<LabeledDataset> {
    domain.validate()?;
    let m = rule.len();
    if domain.n_mc_paths < 10 * m {
        return Err(Error::InsufficientSamples {
            needed: 10 * m,
            got: domain.n_mc_paths,
        });
    }
    let step: fn(&SdeParams, f64, f64, f64, f64) -> f64 = match scheme {
        ClassicalScheme::Euler => euler_step,
        ClassicalScheme::Milstein => milstein_step,
        ClassicalScheme::Exact => |p, t, y, dt, z| p.exact_sample(t, y, dt, z),
    };
    let design = latin_hypercube(&domain.bounds, domain.n_lhs, seed);
    let probs: Vec<f64> = rule.nodes.iter().map(|x| std_normal_cdf(*x)).collect();
    let per_point = domain.labels_per_point();
    let d = 3 + domain.dim() - 1;

    let blocks = design
        .par_iter()
        .enumerate()
        .map(|(p, point)| -> Result<(Vec<f64>, Vec<f64>)> {
            let params = SdeParams::from_theta(domain.model, &point[1..], point[0])?;
            let y0 = point[0];
            let mut rng = stream_rng(seed, streams::LABELS + p as u64);
            let mut y = vec![y0; domain.n_mc_paths];
            let mut z = vec![0.0; domain.n_mc_paths];
            let mut sorted = vec![0.0; domain.n_mc_paths];
            let mut inputs = Vec::with_capacity(per_point * d);
            let mut targets = Vec::with_capacity(per_point * m);
            for i in 1..=domain.n_tau {
                let t = (i - 1) as f64 * domain.dtau;
                fill_standard_normal(&mut rng, &mut z);
                for (yk, zk) in y.iter_mut().zip(&z) {
                    *yk = step(&params, t, *yk, domain.dtau, *zk);
                }
                if i % domain.label_every != 0 {
                    continue;
                }
                sorted.copy_from_slice(&y);
                sorted.sort_unstable_by(|a, b| a.total_cmp(b));
                if sorted.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(format!("non-finite fine-grid state at point {p}")));
                }
                inputs.push(y0);
                inputs.push(0.0);
                inputs.push(i as f64 * domain.dtau);
                inputs.extend_from_slice(&point[1..]);
                for pr in &probs {
                    targets.push(quantile_sorted(&sorted, *pr));
                }
            }
            Ok((inputs, targets))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut inputs = Vec::with_capacity(domain.n_rows() * d);
    let mut targets = Vec::with_capacity(domain.n_rows() * m);
    for (i, t) in blocks {
        inputs.extend(i);
        targets.extend(t);
    }
    let n_rows = targets.len() / m;
    Ok(LabeledDataset {
        n_inputs: d,
        n_outputs: m,
        inputs,
        targets,
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            model: domain.model,
            input_names: input_names(domain.model),
            collocation_nodes: rule.nodes.clone(),
            scheme,
            domains: vec![domain.clone()],
            seeds: vec![seed],
            n_rows,
            normalized: false,
        },
    })
}

impl LabeledDataset {
    pub fn n_rows(&self) -> usize {
        if self.n_outputs == 0 {
            0
        } else {
            self.targets.len() / self.n_outputs
        }
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_inputs..(i + 1) * self.n_inputs]
    }

    pub fn target_row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.n_outputs..(i + 1) * self.n_outputs]
    }

    /// Appends the rows of `other`; both must share model and nodes.
    pub fn merge(mut self, other: LabeledDataset) -> Result<Self> {
        if self.n_inputs != other.n_inputs
            || self.n_outputs != other.n_outputs
            || self.meta.model != other.meta.model
            || self.meta.collocation_nodes != other.meta.collocation_nodes
            || self.meta.normalized != other.meta.normalized
        {
            return Err(invalid("datasets differ in model, collocation nodes or normalization"));
        }
        self.inputs.extend(other.inputs);
        self.targets.extend(other.targets);
        self.meta.domains.extend(other.meta.domains);
        self.meta.seeds.extend(other.meta.seeds);
        self.meta.n_rows = self.n_rows();
        Ok(self)
    }

    /// GBM rows with targets divided by `y_prev` and `y_prev` set to 1, and
    /// the divisors. GBM conditional quantiles are proportional to the
    /// starting value, so nothing is lost.
    pub fn normalize_gbm(&self) -> Result<(LabeledDataset, Vec<f64>)> {
        if self.meta.model != ModelKind::Gbm {
            return Err(invalid("normalization by the starting value applies to GBM only"));
        }
        if self.meta.normalized {
            return Err(invalid("dataset is already normalized"));
        }
        let mut out = self.clone();
        let mut scales = Vec::with_capacity(self.n_rows());
        for i in 0..self.n_rows() {
            let y = self.inputs[i * self.n_inputs];
            if !(y > 0.0) {
                return Err(invalid(format!("row {i} has non-positive starting value {y}")));
            }
            out.inputs[i * self.n_inputs] = 1.0;
            for v in &mut out.targets[i * self.n_outputs..(i + 1) * self.n_outputs] {
                *v /= y;
            }
            scales.push(y);
        }
        out.meta.normalized = true;
        Ok((out, scales))
    }

    fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let mut inputs = Vec::with_capacity(idx.len() * self.n_inputs);
        let mut targets = Vec::with_capacity(idx.len() * self.n_outputs);
        for &i in idx {
            inputs.extend_from_slice(self.input_row(i));
            targets.extend_from_slice(self.target_row(i));
        }
        let mut meta = self.meta.clone();
        meta.n_rows = idx.len();
        LabeledDataset {
            n_inputs: self.n_inputs,
            n_outputs: self.n_outputs,
            inputs,
            targets,
            meta,
        }
    }

    /// Seeded shuffle into `(train, test)` with `round(fraction * n)` training
    /// rows.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(invalid("split fraction must lie in (0, 1)"));
        }
        let n = self.n_rows();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream_rng(seed, streams::SPLIT));
        let n_train = (fraction * n as f64).round() as usize;
        Ok((self.subset(&idx[..n_train]), self.subset(&idx[n_train..])))
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn save(&self, csv: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(csv)?);
        let mut header: Vec<String> = self.meta.input_names.clone();
        header.extend((1..=self.n_outputs).map(|j| format!("y_hat_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n_rows() {
            let row: Vec<String> = self
                .input_row(i)
                .iter()
                .chain(self.target_row(i))
                .map(|v| v.to_string())
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        std::fs::write(
            Self::sidecar_path(csv),
            serde_json::to_string_pretty(&self.meta)?,
        )?;
        Ok(())
    }

    pub fn load(csv: &Path) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(csv))?)?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                meta.format_version
            )));
        }
        let d = meta.input_names.len();
        let m = meta.collocation_nodes.len();
        let mut lines = BufReader::new(std::fs::File::open(csv)?).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        if header.split(',').count() != d + m {
            return Err(Error::Format("dataset header does not match sidecar".into()));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", ln + 2)))?;
            if vals.len() != d + m {
                return Err(Error::Format(format!("line {}: expected {} fields", ln + 2, d + m)));
            }
            inputs.extend_from_slice(&vals[..d]);
            targets.extend_from_slice(&vals[d..]);
        }
        let ds = LabeledDataset {
            n_inputs: d,
            n_outputs: m,
            inputs,
            targets,
            meta,
        };
        if ds.n_rows() != ds.meta.n_rows {
            return Err(Error::Format(format!(
                "sidecar promises {} rows, file has {}",
                ds.meta.n_rows,
                ds.n_rows()
            )));
        }
        Ok(ds)
    }
}
