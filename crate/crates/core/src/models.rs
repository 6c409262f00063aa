//! SDE family: geometric Brownian motion and Ornstein-Uhlenbeck.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gbm,
    Ou,
}

/// Model parameters together with the initial state.
///
/// The parameter vector θ has a fixed flattening order used for network
/// inputs: `(mu, sigma)` for GBM and `(ybar, sigma, lambda)` for OU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SdeParams {
    /// dY = mu Y dt + sigma Y dW
    Gbm { mu: f64, sigma: f64, y0: f64 },
    /// dY = -lambda (Y - ybar) dt + sigma dW
    Ou {
        lambda: f64,
        ybar: f64,
        sigma: f64,
        y0: f64,
    },
}

impl SdeParams {
    pub fn gbm(mu: f64, sigma: f64, y0: f64) -> Self {
        SdeParams::Gbm { mu, sigma, y0 }
    }

    pub fn ou(lambda: f64, ybar: f64, sigma: f64, y0: f64) -> Self {
        SdeParams::Ou {
            lambda,
            ybar,
            sigma,
            y0,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            SdeParams::Gbm { .. } => ModelKind::Gbm,
            SdeParams::Ou { .. } => ModelKind::Ou,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be finite, got {v}")))
            }
        };
        match *self {
            SdeParams::Gbm { mu, sigma, y0 } => {
                finite("mu", mu)?;
                finite("sigma", sigma)?;
                finite("y0", y0)?;
                if sigma <= 0.0 {
                    return Err(invalid(format!("sigma must be positive, got {sigma}")));
                }
                if y0 <= 0.0 {
                    return Err(invalid(format!("GBM y0 must be positive, got {y0}")));
                }
            }
            SdeParams::Ou {
                lambda,
                ybar,
                sigma,
                y0,
            } => {
                finite("lambda", lambda)?;
                finite("ybar", ybar)?;
                finite("sigma", sigma)?;
                finite("y0", y0)?;
                if sigma <= 0.0 {
                    return Err(invalid(format!("sigma must be positive, got {sigma}")));
                }
                if lambda <= 0.0 {
                    return Err(invalid(format!("lambda must be positive, got {lambda}")));
                }
            }
        }
        Ok(())
    }

    pub fn y0(&self) -> f64 {
        match *self {
            SdeParams::Gbm { y0, .. } | SdeParams::Ou { y0, .. } => y0,
        }
    }

    pub fn with_y0(mut self, value: f64) -> Self {
        match &mut self {
            SdeParams::Gbm { y0, .. } | SdeParams::Ou { y0, .. } => *y0 = value,
        }
        self
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            SdeParams::Gbm { sigma, .. } | SdeParams::Ou { sigma, .. } => sigma,
        }
    }

    /// Flattened θ in canonical order.
    pub fn theta(&self) -> Vec<f64> {
        match *self {
            SdeParams::Gbm { mu, sigma, .. } => vec![mu, sigma],
            SdeParams::Ou {
                lambda,
                ybar,
                sigma,
                ..
            } => vec![ybar, sigma, lambda],
        }
    }

    pub fn theta_names(kind: ModelKind) -> &'static [&'static str] {
        match kind {
            ModelKind::Gbm => &["mu", "sigma"],
            ModelKind::Ou => &["ybar", "sigma", "lambda"],
        }
    }

    /// Index of sigma in the flattened θ.
    pub fn sigma_index(kind: ModelKind) -> usize {
        match kind {
            ModelKind::Gbm => 1,
            ModelKind::Ou => 1,
        }
    }

    /// Rebuilds parameters of the given kind from a flattened θ.
    pub fn from_theta(kind: ModelKind, theta: &[f64], y0: f64) -> Result<Self> {
        let expected = Self::theta_names(kind).len();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: theta.len(),
            });
        }
        Ok(match kind {
            ModelKind::Gbm => SdeParams::gbm(theta[0], theta[1], y0),
            ModelKind::Ou => SdeParams::ou(theta[2], theta[0], theta[1], y0),
        })
    }

    /// Drift a(t, y).
    pub fn drift(&self, _t: f64, y: f64) -> f64 {
        match *self {
            SdeParams::Gbm { mu, .. } => mu * y,
            SdeParams::Ou { lambda, ybar, .. } => -lambda * (y - ybar),
        }
    }

    /// Diffusion b(t, y) and its state derivative ∂b/∂y.
    pub fn diffusion(&self, _t: f64, y: f64) -> (f64, f64) {
        match *self {
            SdeParams::Gbm { sigma, .. } => (sigma * y, sigma),
            SdeParams::Ou { sigma, .. } => (sigma, 0.0),
        }
    }

    /// Exact transition: the state at `t_from + dt` given `y_from`, driven by
    /// the standard normal draw `z`. Monotone increasing in `z`.
    pub fn exact_sample(&self, _t_from: f64, y_from: f64, dt: f64, z: f64) -> f64 {
        match *self {
            SdeParams::Gbm { mu, sigma, .. } => {
                y_from * ((mu - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * z).exp()
            }
            SdeParams::Ou {
                lambda,
                ybar,
                sigma,
                ..
            } => {
                let decay = (-lambda * dt).exp();
                // 1 - e^{-2 lambda dt} without cancellation for small steps
                let var = -(-2.0 * lambda * dt).exp_m1() / (2.0 * lambda);
                y_from * decay + ybar * (1.0 - decay) + sigma * var.sqrt() * z
            }
        }
    }

    /// Pathwise ∂Y/∂σ of the exact GBM solution after `elapsed` time, given
    /// the state `y_t` reached with the cumulative normal `z`.
    pub fn exact_vega_path(&self, elapsed: f64, y_t: f64, z: f64) -> Result<f64> {
        match *self {
            SdeParams::Gbm { sigma, .. } => {
                if elapsed < 0.0 {
                    return Err(invalid("elapsed time must be non-negative"));
                }
                Ok(y_t * (-sigma * elapsed + elapsed.sqrt() * z))
            }
            SdeParams::Ou { .. } => Err(Error::Unsupported(
                "pathwise vega reference is only defined for GBM".into(),
            )),
        }
    }

    /// Mean and variance of Y(t) started from y0 at time 0.
    pub fn marginal_moments(&self, t: f64) -> (f64, f64) {
        match *self {
            SdeParams::Gbm { mu, sigma, y0 } => {
                let m = y0 * (mu * t).exp();
                (m, m * m * (sigma * sigma * t).exp_m1())
            }
            SdeParams::Ou {
                lambda,
                ybar,
                sigma,
                y0,
            } => {
                let decay = (-lambda * t).exp();
                let var = sigma * sigma * -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda);
                (y0 * decay + ybar * (1.0 - decay), var)
            }
        }
    }
}

/// Equidistant time grid `t_i = t0 + i * dt`, `i = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        let g = TimeGrid { t0, dt, n_steps };
        g.validate()?;
        Ok(g)
    }

    /// Grid over `[t0, t0 + horizon]` with step `dt`; the horizon must be a
    /// whole number of steps up to rounding.
    pub fn with_horizon(t0: f64, dt: f64, horizon: f64) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        let n = (horizon / dt).round();
        if n < 1.0 || ((n * dt) - horizon).abs() > 1e-9 * horizon.abs().max(1.0) {
            return Err(invalid(format!(
                "horizon {horizon} is not a positive multiple of dt {dt}"
            )));
        }
        Self::new(t0, dt, n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(invalid("n_steps must be at least 1"));
        }
        if !self.t0.is_finite() {
            return Err(invalid("t0 must be finite"));
        }
        Ok(())
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn terminal(&self) -> f64 {
        self.time(self.n_steps)
    }
}
