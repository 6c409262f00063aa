use crate::error::{invalid, Error, Result};

/// Ascending sample of realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(invalid("samples contain NaN"));
        }
        samples.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(EmpiricalDistribution { sorted: samples })
    }

    pub fn from_sorted(sorted: Vec<f64>) -> Result<Self> {
        if sorted.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if !sorted.windows(2).all(|w| w[0] <= w[1]) {
            return Err(invalid("samples are not sorted"));
        }
        Ok(EmpiricalDistribution { sorted })
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Quantile at level `p` with plotting position `k / (n + 1)` for the
    /// k-th order statistic, linear in between, clamped to the sample range.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid(format!("quantile level must lie in (0, 1), got {p}")));
        }
        Ok(quantile_sorted(&self.sorted, p))
    }
}

pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = p * (n + 1) as f64;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor();
    let i = lo as usize - 1;
    let frac = h - lo;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}
