use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Layer, MinMaxScaler, MlpSurrogate};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Refit the min-max scalers on the training data before the first
    /// epoch.
    pub fit_scalers: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_phase1: 1000,
            epochs_phase2: 500,
            lr_phase1: 1e-3,
            lr_phase2: 1e-4,
            batch_size: 512,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            fit_scalers: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_phase1 + self.epochs_phase2 == 0 {
            return Err(invalid("at least one epoch is required"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        for (name, v) in [("lr_phase1", self.lr_phase1), ("lr_phase2", self.lr_phase2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be finite and non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch (scaled space).
    pub loss_history: Vec<f64>,
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    fn new(net: &MlpSurrogate) -> Self {
        let z = || -> Vec<Layer> { net.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect() };
        Adam { m: z(), v: z(), t: 0 }
    }

    fn step(&mut self, net: &mut MlpSurrogate, grads: &[Layer], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for li in 0..net.layers.len() {
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
                }
            };
            let layer = &mut net.layers[li];
            update(
                &mut layer.weights,
                &grads[li].weights,
                &mut self.m[li].weights,
                &mut self.v[li].weights,
            );
            update(
                &mut layer.biases,
                &grads[li].biases,
                &mut self.m[li].biases,
                &mut self.v[li].biases,
            );
        }
    }
}

/// Minibatch Adam on the MSE between scaled predictions and scaled targets.
/// `inputs` and `targets` are row-major with the network's widths. Runs
/// `epochs_phase1` epochs at `lr_phase1`, then `epochs_phase2` at
/// `lr_phase2`. Single-threaded and deterministic given the seed.
pub fn train(
    net: &mut MlpSurrogate,
    inputs: &[f64],
    targets: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_progress(net, inputs, targets, cfg, |_, _| {})
}

pub fn train_with_progress(
    net: &mut MlpSurrogate,
    inputs: &[f64],
    targets: &[f64],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    let d = net.n_inputs();
    let m = net.n_outputs();
    if inputs.is_empty() || inputs.len() % d != 0 {
        return Err(invalid("training inputs are empty or ragged"));
    }
    let n = inputs.len() / d;
    if targets.len() != n * m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            got: targets.len(),
        });
    }
    if cfg.fit_scalers {
        net.input_scaler = MinMaxScaler::fit(inputs, d)?;
        net.output_scaler = MinMaxScaler::fit(targets, m)?;
    }
    let x = net.input_scaler.scale_rows(inputs);
    let y = net.output_scaler.scale_rows(targets);

    let mut rng = stream_rng(cfg.seed, streams::TRAIN);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(net);
    let mut grads: Vec<Layer> = net.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
    let bs = cfg.batch_size.min(n);
    let mut xb = Vec::with_capacity(bs * d);
    let mut yb = Vec::with_capacity(bs * m);
    let mut history = Vec::with_capacity(cfg.total_epochs());

    for epoch in 0..cfg.total_epochs() {
        let lr = if epoch < cfg.epochs_phase1 {
            cfg.lr_phase1
        } else {
            cfg.lr_phase2
        };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            xb.clear();
            yb.clear();
            for &r in chunk {
                xb.extend_from_slice(&x[r * d..(r + 1) * d]);
                yb.extend_from_slice(&y[r * m..(r + 1) * m]);
            }
            let loss = net.backprop_scaled(&xb, &yb, chunk.len(), &mut grads);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            if lr > 0.0 {
                adam.step(net, &grads, lr, cfg);
            }
        }
        let epoch_loss = total / n as f64;
        history.push(epoch_loss);
        progress(epoch, epoch_loss);
    }
    Ok(TrainReport {
        loss_history: history,
    })
}

/// Per-output goodness of fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r_squared: Vec<f64>,
    pub mae: Vec<f64>,
}

impl Metrics {
    pub fn min_r_squared(&self) -> f64 {
        self.r_squared.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_mae(&self) -> f64 {
        self.mae.iter().copied().fold(0.0, f64::max)
    }
}

/// R² and mean absolute error of `predictions` against `targets`, both
/// row-major with `m` columns.
pub fn metrics_from_predictions(predictions: &[f64], targets: &[f64], m: usize) -> Result<Metrics> {
    if targets.is_empty() || predictions.len() != targets.len() || targets.len() % m != 0 {
        return Err(invalid("metrics need equally shaped, non-empty tables"));
    }
    let n = targets.len() / m;
    let mut r2 = Vec::with_capacity(m);
    let mut mae = Vec::with_capacity(m);
    for j in 0..m {
        let col = || (0..n).map(|i| (targets[i * m + j], predictions[i * m + j]));
        let mean = col().map(|(t, _)| t).sum::<f64>() / n as f64;
        let ss_tot: f64 = col().map(|(t, _)| (t - mean).powi(2)).sum();
        let ss_res: f64 = col().map(|(t, p)| (t - p).powi(2)).sum();
        r2.push(if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res == 0.0 {
            1.0
        } else {
            0.0
        });
        mae.push(col().map(|(t, p)| (t - p).abs()).sum::<f64>() / n as f64);
    }
    Ok(Metrics { r_squared: r2, mae })
}

pub fn metrics(net: &MlpSurrogate, inputs: &[f64], targets: &[f64]) -> Result<Metrics> {
    let pred = net.forward_batch(inputs)?;
    metrics_from_predictions(&pred, targets, net.n_outputs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn line_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = x.iter().map(|v| 2.0 * v + 1.0).collect();
        (x, y)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs_phase1: 200,
            epochs_phase2: 0,
            batch_size: 32,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn fits_a_line() {
        let (x, y) = line_data(1000, 1);
        let mut net = MlpSurrogate::glorot_init(&[1, 16, 16, 1], 2).unwrap();
        let rep = train(&mut net, &x, &y, &small_cfg()).unwrap();
        let (xt, yt) = line_data(200, 9);
        let pred = net.forward_batch(&xt).unwrap();
        let mse = pred.iter().zip(&yt).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 1e-5, "{mse}");
        assert!(rep.loss_history.last().unwrap() < &rep.loss_history[0]);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (x, y) = line_data(100, 1);
        let mut net = MlpSurrogate::glorot_init(&[1, 8, 1], 2).unwrap();
        let cfg = TrainConfig {
            lr_phase1: 0.0,
            epochs_phase1: 3,
            ..small_cfg()
        };
        let before = net.layers.clone();
        train(&mut net, &x, &y, &cfg).unwrap();
        assert_eq!(before, net.layers);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = line_data(300, 1);
        let cfg = TrainConfig {
            epochs_phase1: 5,
            epochs_phase2: 3,
            ..small_cfg()
        };
        let run = || {
            let mut net = MlpSurrogate::glorot_init(&[1, 8, 8, 1], 2).unwrap();
            train(&mut net, &x, &y, &cfg).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = line_data(100, 1);
        let mut net = MlpSurrogate::glorot_init(&[1, 8, 1], 2).unwrap();
        let cfg = TrainConfig {
            lr_phase1: 1e300,
            epochs_phase1: 50,
            ..small_cfg()
        };
        assert!(matches!(train(&mut net, &x, &y, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn shape_errors() {
        let mut net = MlpSurrogate::glorot_init(&[2, 4, 1], 2).unwrap();
        assert!(train(&mut net, &[], &[], &small_cfg()).is_err());
        assert!(train(&mut net, &[1.0, 2.0], &[1.0, 2.0], &small_cfg()).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..small_cfg()
        };
        assert!(train(&mut net, &[1.0, 2.0], &[1.0], &bad).is_err());
    }

    #[test]
    fn metric_definitions() {
        let t = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        let perfect = metrics_from_predictions(&t, &t, 2).unwrap();
        assert_eq!(perfect.r_squared, vec![1.0, 1.0]);
        assert_eq!(perfect.mae, vec![0.0, 0.0]);
        let mean = [2.0, 20.0, 2.0, 20.0, 2.0, 20.0];
        let m = metrics_from_predictions(&mean, &t, 2).unwrap();
        assert_eq!(m.r_squared, vec![0.0, 0.0]);
        assert!((m.mae[0] - 2.0 / 3.0).abs() < 1e-15);
    }
}
