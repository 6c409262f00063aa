//! Fully-connected feed-forward network with Softplus hidden activations,
//! written without an autodiff framework: forward pass, backpropagation,
//! input Jacobians, Glorot initialization and Adam training.
//!
//! Weights are stored row-major (`out x in`). Inputs and outputs pass
//! through min-max scalers that are part of the model.

mod train;

pub use train::{metrics, metrics_from_predictions, train, train_with_progress, Metrics, TrainConfig, TrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, streams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_HIDDEN: [usize; 4] = [50, 50, 50, 50];

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-feature affine map `x -> (x - min) / (max - min)`. Features that were
/// constant when fitted map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn identity(n: usize) -> Self {
        MinMaxScaler {
            min: vec![0.0; n],
            max: vec![1.0; n],
        }
    }

    /// Column-wise bounds of a row-major `rows x n` table.
    pub fn fit(data: &[f64], n: usize) -> Result<Self> {
        if n == 0 || data.is_empty() || data.len() % n != 0 {
            return Err(invalid("scaler needs a non-empty table"));
        }
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for row in data.chunks_exact(n) {
            for j in 0..n {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        if min.iter().chain(&max).any(|v| !v.is_finite()) {
            return Err(invalid("scaler data must be finite"));
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// `d scaled / d raw` for feature `j`.
    #[inline]
    pub fn factor(&self, j: usize) -> f64 {
        let r = self.max[j] - self.min[j];
        if r > 0.0 {
            1.0 / r
        } else {
            0.0
        }
    }

    #[inline]
    pub fn range(&self, j: usize) -> f64 {
        self.max[j] - self.min[j]
    }

    #[inline]
    pub fn scale(&self, j: usize, x: f64) -> f64 {
        (x - self.min[j]) * self.factor(j)
    }

    #[inline]
    pub fn unscale(&self, j: usize, s: f64) -> f64 {
        self.min[j] + s * self.range(j)
    }

    pub fn scale_rows(&self, data: &[f64]) -> Vec<f64> {
        let n = self.len();
        data.chunks_exact(n)
            .flat_map(|row| (0..n).map(move |j| self.scale(j, row[j])))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    #[inline]
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, row) in self.weights.chunks_exact(self.n_in).enumerate() {
            out[o] = self.biases[o] + dot(row, input);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `C (m x n) = A (m x k) * B (k x n) + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is row-major `m x n` so it does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Reusable buffers for single-input evaluation.
#[derive(Debug, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    pre: Vec<Vec<f64>>,
    jac: Vec<f64>,
    jac_next: Vec<f64>,
}

impl Scratch {
    /// Whether these buffers were sized for a network of `net`'s shape.
    pub fn fits(&self, net: &MlpSurrogate) -> bool {
        self.pre.len() == net.layers.len()
            && self.pre.iter().zip(&net.layers).all(|(p, l)| p.len() == l.n_out)
            && self.a.len() >= *net.layer_sizes.iter().max().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSurrogate {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub input_scaler: MinMaxScaler,
    pub output_scaler: MinMaxScaler,
}

impl MlpSurrogate {
    /// A network with zero parameters and identity scalers.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(MlpSurrogate {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            input_scaler: MinMaxScaler::identity(layer_sizes[0]),
            output_scaler: MinMaxScaler::identity(*layer_sizes.last().unwrap()),
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot_init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let mut rng = stream_rng(seed, streams::INIT);
        for layer in &mut net.layers {
            let bound = glorot_bound(layer.n_in, layer.n_out);
            for w in &mut layer.weights {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn scratch(&self) -> Scratch {
        let w = *self.layer_sizes.iter().max().unwrap();
        Scratch {
            a: vec![0.0; w],
            b: vec![0.0; w],
            pre: self.layers.iter().map(|l| vec![0.0; l.n_out]).collect(),
            jac: vec![0.0; w * w.max(self.n_outputs())],
            jac_next: vec![0.0; w * w.max(self.n_outputs())],
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_sizes(&self.layer_sizes)?;
        if self.layers.len() + 1 != self.layer_sizes.len() {
            return Err(Error::Format("layer count does not match sizes".into()));
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.n_in != w[0]
                || l.n_out != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.biases.len() != w[1]
            {
                return Err(Error::Format("layer shape does not match sizes".into()));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::Format("non-finite parameter".into()));
            }
        }
        if self.input_scaler.len() != self.n_inputs() || self.output_scaler.len() != self.n_outputs()
        {
            return Err(Error::Format("scaler width does not match network".into()));
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Hidden pre-activations land in `scratch.pre`; the final unscaled
    /// output is written to `out`.
    fn forward_impl(&self, input: &[f64], s: &mut Scratch, out: &mut [f64]) {
        let n0 = self.n_inputs();
        for j in 0..n0 {
            s.a[j] = self.input_scaler.scale(j, input[j]);
        }
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            layer.apply(&s.a[..layer.n_in], &mut s.pre[li]);
            if li < last {
                for (o, z) in s.pre[li].iter().enumerate() {
                    s.b[o] = softplus(*z);
                }
                std::mem::swap(&mut s.a, &mut s.b);
            }
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.output_scaler.unscale(j, s.pre[last][j]);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_outputs()];
        self.forward_into(input, &mut self.scratch(), &mut out)?;
        Ok(out)
    }

    pub fn forward_into(&self, input: &[f64], scratch: &mut Scratch, out: &mut [f64]) -> Result<()> {
        self.check_input(input)?;
        if out.len() != self.n_outputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_outputs(),
                got: out.len(),
            });
        }
        self.forward_impl(input, scratch, out);
        Ok(())
    }

    /// Row-major `n x n_inputs` in, row-major `n x n_outputs` out.
    pub fn forward_batch(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let d = self.n_inputs();
        if inputs.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: inputs.len() % d,
            });
        }
        let n = inputs.len() / d;
        let m = self.n_outputs();
        let mut out = vec![0.0; n * m];
        const CHUNK: usize = 256;
        for (rows_in, rows_out) in inputs.chunks(CHUNK * d).zip(out.chunks_mut(CHUNK * m)) {
            let scaled = self.input_scaler.scale_rows(rows_in);
            let acts = self.forward_scaled(&scaled, rows_in.len() / d);
            let last = acts.last().unwrap();
            for (r, o) in last.chunks_exact(m).zip(rows_out.chunks_exact_mut(m)) {
                for j in 0..m {
                    o[j] = self.output_scaler.unscale(j, r[j]);
                }
            }
        }
        Ok(out)
    }

    /// Batched pass in scaled space. Returns the per-layer pre-activations
    /// (row-major `batch x n_out`); the last entry is the scaled output.
    pub(crate) fn forward_scaled(&self, scaled: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = scaled.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(batch * layer.n_out);
            for _ in 0..batch {
                z.extend_from_slice(&layer.biases);
            }
            // Z = A * W^T + 1 b^T
            gemm(
                batch,
                layer.n_in,
                layer.n_out,
                &act,
                (layer.n_in, 1),
                &layer.weights,
                (1, layer.n_in),
                1.0,
                &mut z,
            );
            if li < last {
                act = z.iter().map(|v| softplus(*v)).collect();
            }
            pres.push(z);
        }
        pres
    }

    /// `J[j][i] = ∂ output_j / ∂ input_i`, row-major `n_outputs x n_inputs`.
    pub fn input_gradient(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.scratch();
        let mut out = vec![0.0; self.n_outputs()];
        let mut jac = vec![0.0; self.n_outputs() * self.n_inputs()];
        self.forward_with_jacobian(input, &mut s, &mut out, &mut jac)?;
        Ok(jac)
    }

    /// Output and input Jacobian in one pass.
    pub fn forward_with_jacobian(
        &self,
        input: &[f64],
        s: &mut Scratch,
        out: &mut [f64],
        jac: &mut [f64],
    ) -> Result<()> {
        self.check_input(input)?;
        let m = self.n_outputs();
        let d = self.n_inputs();
        if out.len() != m || jac.len() != m * d {
            return Err(Error::DimensionMismatch {
                expected: m * d,
                got: jac.len(),
            });
        }
        self.forward_impl(input, s, out);
        // G = diag(out scale) * W_L, then G <- (G .* σ'(z_l)) * W_l backwards
        let last = self.layers.len() - 1;
        let top = &self.layers[last];
        let mut width = top.n_in;
        for j in 0..m {
            let f = self.output_scaler.range(j);
            for i in 0..width {
                s.jac[j * width + i] = f * top.weights[j * width + i];
            }
        }
        for li in (0..last).rev() {
            let layer = &self.layers[li];
            for j in 0..m {
                for (k, z) in s.pre[li].iter().enumerate() {
                    s.jac[j * width + k] *= sigmoid(*z);
                }
            }
            gemm(
                m,
                layer.n_out,
                layer.n_in,
                &s.jac[..m * width],
                (width, 1),
                &layer.weights,
                (layer.n_in, 1),
                0.0,
                &mut s.jac_next[..m * layer.n_in],
            );
            std::mem::swap(&mut s.jac, &mut s.jac_next);
            width = layer.n_in;
        }
        for j in 0..m {
            for i in 0..d {
                jac[j * d + i] = s.jac[j * d + i] * self.input_scaler.factor(i);
            }
        }
        Ok(())
    }

    /// MSE in scaled output space over a raw row-major batch, and its
    /// gradient with respect to every weight and bias (same layout as
    /// `layers`).
    pub fn loss_and_gradient(&self, inputs: &[f64], targets: &[f64]) -> Result<(f64, Vec<Layer>)> {
        let d = self.n_inputs();
        let m = self.n_outputs();
        if inputs.is_empty() || inputs.len() % d != 0 || targets.len() != inputs.len() / d * m {
            return Err(invalid("inputs and targets do not form a batch"));
        }
        let x = self.input_scaler.scale_rows(inputs);
        let y = self.output_scaler.scale_rows(targets);
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.n_in, l.n_out))
            .collect();
        let loss = self.backprop_scaled(&x, &y, inputs.len() / d, &mut grads);
        Ok((loss, grads))
    }

    /// Backpropagation on scaled data; writes gradients into `grads`.
    pub(crate) fn backprop_scaled(&self, x: &[f64], y: &[f64], batch: usize, grads: &mut [Layer]) -> f64 {
        let m = self.n_outputs();
        let pres = self.forward_scaled(x, batch);
        let out = pres.last().unwrap();
        let norm = 1.0 / (batch * m) as f64;
        let mut loss = 0.0;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(y)
            .map(|(p, t)| {
                let e = p - t;
                loss += e * e;
                2.0 * e * norm
            })
            .collect();
        loss *= norm;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let act_prev: Vec<f64> = if li == 0 {
                x.to_vec()
            } else {
                pres[li - 1].iter().map(|v| softplus(*v)).collect()
            };
            let g = &mut grads[li];
            // dW = delta^T * A_prev
            gemm(
                layer.n_out,
                batch,
                layer.n_in,
                &delta,
                (1, layer.n_out),
                &act_prev,
                (layer.n_in, 1),
                0.0,
                &mut g.weights,
            );
            g.biases.iter_mut().for_each(|b| *b = 0.0);
            for row in delta.chunks_exact(layer.n_out) {
                for (b, v) in g.biases.iter_mut().zip(row) {
                    *b += v;
                }
            }
            if li > 0 {
                let mut next = vec![0.0; batch * layer.n_in];
                gemm(
                    batch,
                    layer.n_out,
                    layer.n_in,
                    &delta,
                    (layer.n_out, 1),
                    &layer.weights,
                    (layer.n_in, 1),
                    0.0,
                    &mut next,
                );
                for (v, z) in next.iter_mut().zip(&pres[li - 1]) {
                    *v *= sigmoid(*z);
                }
                delta = next;
            }
        }
        loss
    }

    pub fn to_file_format(&self) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            activation: "softplus".into(),
            layer_sizes: self.layer_sizes.clone(),
            weights: self.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
            input_scaler: self.input_scaler.clone(),
            output_scaler: self.output_scaler.clone(),
        }
    }

    pub fn from_file_format(f: ModelFile) -> Result<Self> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                f.format_version
            )));
        }
        if f.activation != "softplus" {
            return Err(Error::Format(format!("unsupported activation {}", f.activation)));
        }
        validate_sizes(&f.layer_sizes)?;
        if f.weights.len() + 1 != f.layer_sizes.len() || f.biases.len() != f.weights.len() {
            return Err(Error::Format("layer count does not match sizes".into()));
        }
        let layers = f
            .weights
            .into_iter()
            .zip(f.biases)
            .zip(f.layer_sizes.windows(2))
            .map(|((weights, biases), w)| Layer {
                n_in: w[0],
                n_out: w[1],
                weights,
                biases,
            })
            .collect();
        let net = MlpSurrogate {
            layer_sizes: f.layer_sizes,
            layers,
            input_scaler: f.input_scaler,
            output_scaler: f.output_scaler,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string(&self.to_file_format())?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_file_format(serde_json::from_str(&s)?)
    }
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub activation: String,
    pub layer_sizes: Vec<usize>,
    /// Per layer, row-major `out x in`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_scaler: MinMaxScaler,
    pub output_scaler: MinMaxScaler,
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
        return Err(invalid(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}
