//! Arithmetic-average Asian calls and Bermudan puts over simulated paths.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::TimeGrid;
use crate::paths::PathEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    AsianFixedStrike,
    BermudanPut,
}

/// Contract on dates `t0 + k dt`, `k = 1..=n_dates`. For the Asian call
/// these are the averaging dates, for the Bermudan put the exercise dates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionSpec {
    pub kind: OptionKind,
    pub strike: f64,
    pub rate: f64,
    pub n_dates: usize,
    pub dt: f64,
}

impl OptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0) || !self.strike.is_finite() {
            return Err(invalid(format!("strike must be positive, got {}", self.strike)));
        }
        if !(self.rate >= 0.0) || !self.rate.is_finite() {
            return Err(invalid(format!("rate must be non-negative, got {}", self.rate)));
        }
        if self.n_dates == 0 {
            return Err(invalid("at least one date is required"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn maturity(&self) -> f64 {
        self.dt * self.n_dates as f64
    }

    /// Simulation grid with one step per date.
    pub fn grid(&self, t0: f64) -> Result<TimeGrid> {
        TimeGrid::new(t0, self.dt, self.n_dates)
    }

    pub fn payoff(&self, x: f64) -> f64 {
        match self.kind {
            OptionKind::AsianFixedStrike => (x - self.strike).max(0.0),
            OptionKind::BermudanPut => (self.strike - x).max(0.0),
        }
    }

    /// Grid indices of the contract dates in `paths`, which may be sampled
    /// on a finer grid as long as every date is a grid time.
    pub fn date_indices(&self, paths: &PathEnsemble) -> Result<Vec<usize>> {
        self.validate()?;
        let ratio = self.dt / paths.dt;
        let stride = ratio.round();
        if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
            return Err(Error::GridMismatch(format!(
                "date spacing {} is not a multiple of the path step {}",
                self.dt, paths.dt
            )));
        }
        let stride = stride as usize;
        if stride * self.n_dates > paths.n_steps {
            return Err(Error::GridMismatch(format!(
                "paths end at {} before maturity {}",
                paths.time(paths.n_steps),
                paths.t0 + self.maturity()
            )));
        }
        Ok((1..=self.n_dates).map(|k| k * stride).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub price: f64,
    pub stderr: f64,
    /// Exercise dates where no regression was possible.
    pub skipped_regressions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceResult {
    pub price: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub scheme: String,
    pub spec: OptionSpec,
    pub seed: u64,
}

impl PriceResult {
    pub fn new(est: PriceEstimate, n_paths: usize, scheme: &str, spec: OptionSpec, seed: u64) -> Self {
        PriceResult {
            price: est.price,
            stderr: est.stderr,
            n_paths,
            scheme: scheme.into(),
            spec,
            seed,
        }
    }
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-path averages `A(T)` over the contract dates.
pub fn averages(paths: &PathEnsemble, spec: &OptionSpec) -> Result<Vec<f64>> {
    let idx = spec.date_indices(paths)?;
    Ok((0..paths.n_paths)
        .into_par_iter()
        .map(|k| {
            let p = paths.path(k);
            idx.iter().map(|i| p[*i]).sum::<f64>() / idx.len() as f64
        })
        .collect())
}

/// `e^{-rT} E[max(A(T) - K, 0)]`.
pub fn price_asian(paths: &PathEnsemble, spec: &OptionSpec) -> Result<PriceEstimate> {
    if spec.kind != OptionKind::AsianFixedStrike {
        return Err(invalid("price_asian needs an Asian contract"));
    }
    if paths.n_paths == 0 {
        return Err(invalid("no paths"));
    }
    let disc = (-spec.rate * spec.maturity()).exp();
    let pay: Vec<f64> = averages(paths, spec)?
        .into_iter()
        .map(|a| disc * spec.payoff(a))
        .collect();
    let (price, stderr) = mean_stderr(&pay);
    Ok(PriceEstimate {
        price,
        stderr,
        skipped_regressions: 0,
    })
}

/// Value carried by a path that continues at an exercise date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    /// The regressed continuation value.
    #[default]
    Regressed,
    /// The discounted realized cash flow.
    Realized,
}

/// Fewest in-the-money paths for which the quadratic regression is run.
pub const MIN_REGRESSION_PATHS: usize = 3;

/// Least-squares fit of `eta` on `{1, x, x^2}`, `x = y / K`.
fn regress(ys: &[f64], eta: &[f64], strike: f64) -> Result<[f64; 3]> {
    let n = ys.len();
    let a = DMatrix::from_fn(n, 3, |r, c| (ys[r] / strike).powi(c as i32));
    let b = DVector::from_column_slice(eta);
    let beta = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| invalid(format!("regression failed: {e}")))?;
    Ok([beta[0], beta[1], beta[2]])
}

/// Longstaff-Schwartz backward recursion with a quadratic basis fitted on
/// in-the-money paths. Exercise is possible at every contract date; the
/// price is the mean discounted value at `t0`.
pub fn price_bermudan_lsmc(paths: &PathEnsemble, spec: &OptionSpec) -> Result<PriceEstimate> {
    price_bermudan_lsmc_with(paths, spec, Continuation::default())
}

pub fn price_bermudan_lsmc_with(
    paths: &PathEnsemble,
    spec: &OptionSpec,
    continuation: Continuation,
) -> Result<PriceEstimate> {
    if spec.kind != OptionKind::BermudanPut {
        return Err(invalid("price_bermudan_lsmc needs a Bermudan contract"));
    }
    if paths.n_paths == 0 {
        return Err(invalid("no paths"));
    }
    let idx = spec.date_indices(paths)?;
    let disc = (-spec.rate * spec.dt).exp();
    let nb = idx.len();
    let mut value: Vec<f64> = (0..paths.n_paths)
        .into_par_iter()
        .map(|k| spec.payoff(paths.state(k, idx[nb - 1])))
        .collect();
    let mut skipped = 0;
    for d in (0..nb - 1).rev() {
        let col = paths.column(idx[d]);
        value.iter_mut().for_each(|v| *v *= disc);
        let itm: Vec<usize> = (0..col.len()).filter(|k| spec.payoff(col[*k]) > 0.0).collect();
        if itm.len() < MIN_REGRESSION_PATHS {
            skipped += 1;
            continue;
        }
        let ys: Vec<f64> = itm.iter().map(|k| col[*k]).collect();
        let eta: Vec<f64> = itm.iter().map(|k| value[*k]).collect();
        let beta = regress(&ys, &eta, spec.strike)?;
        for (k, y) in itm.iter().zip(&ys) {
            let x = y / spec.strike;
            let fitted = beta[0] + x * (beta[1] + x * beta[2]);
            let exercise = spec.payoff(*y);
            if exercise >= fitted {
                value[*k] = exercise;
            } else if continuation == Continuation::Regressed {
                value[*k] = fitted;
            }
        }
    }
    value.iter_mut().for_each(|v| *v *= disc);
    let (price, stderr) = mean_stderr(&value);
    Ok(PriceEstimate {
        price,
        stderr,
        skipped_regressions: skipped,
    })
}

/// European put at the last date, priced on the same paths.
pub fn price_european_put(paths: &PathEnsemble, spec: &OptionSpec) -> Result<PriceEstimate> {
    let idx = spec.date_indices(paths)?;
    let last = *idx.last().unwrap();
    let disc = (-spec.rate * spec.maturity()).exp();
    let pay: Vec<f64> = (0..paths.n_paths)
        .map(|k| disc * (spec.strike - paths.state(k, last)).max(0.0))
        .collect();
    let (price, stderr) = mean_stderr(&pay);
    Ok(PriceEstimate {
        price,
        stderr,
        skipped_regressions: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SdeParams;
    use crate::paths::{simulate, NormalDraws, Stepper};
    use proptest::prelude::*;

    struct Exact(SdeParams);

    impl Stepper for Exact {
        fn step(&self, _i: usize, t: f64, y: f64, dt: f64, z: f64) -> Result<f64> {
            Ok(self.0.exact_sample(t, y, dt, z))
        }
    }

    fn exact_paths(r: f64, sigma: f64, dt: f64, n: usize, m: usize, seed: u64) -> PathEnsemble {
        let grid = TimeGrid::new(0.0, dt, n).unwrap();
        simulate(&Exact(SdeParams::gbm(r, sigma, 1.0)), 1.0, &grid, &NormalDraws::generate(m, n, seed)).unwrap()
    }

    fn asian(strike: f64) -> OptionSpec {
        OptionSpec {
            kind: OptionKind::AsianFixedStrike,
            strike,
            rate: 0.1,
            n_dates: 4,
            dt: 1.0,
        }
    }

    fn bermudan(strike: f64, n_dates: usize) -> OptionSpec {
        OptionSpec {
            kind: OptionKind::BermudanPut,
            strike,
            rate: 0.1,
            n_dates,
            dt: 1.0,
        }
    }

    #[test]
    fn asian_by_hand() {
        let paths = PathEnsemble {
            t0: 0.0,
            dt: 0.5,
            n_paths: 2,
            n_steps: 4,
            states: vec![1.0, 9.0, 1.0, 9.0, 2.0, 1.0, 9.0, 0.0, 9.0, 0.0],
            draws: vec![0.0; 8],
        };
        let spec = OptionSpec {
            kind: OptionKind::AsianFixedStrike,
            strike: 1.0,
            rate: 0.0,
            n_dates: 2,
            dt: 1.0,
        };
        // dates at indices 2 and 4: averages 1.5 and 0
        let p = price_asian(&paths, &spec).unwrap();
        assert!((p.price - 0.25).abs() < 1e-15);
        assert!((p.stderr - 0.25).abs() < 1e-15);
        let coarse = OptionSpec { dt: 0.75, ..spec };
        assert!(matches!(price_asian(&paths, &coarse), Err(Error::GridMismatch(_))));
        let long = OptionSpec { n_dates: 3, ..spec };
        assert!(matches!(price_asian(&paths, &long), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn asian_matches_reference_value() {
        let paths = exact_paths(0.1, 0.3, 1.0, 4, 200_000, 0);
        let p = price_asian(&paths, &asian(1.0)).unwrap();
        let reference = 0.24886257;
        assert!((p.price - reference).abs() < 3.0 * p.stderr, "{} ± {}", p.price, p.stderr);
        assert_eq!(price_asian(&paths, &asian(1e9)).unwrap().price, 0.0);
    }

    #[test]
    fn bermudan_matches_reference_value() {
        let paths = exact_paths(0.1, 0.3, 1.0, 4, 100_000, 0);
        let p = price_bermudan_lsmc(&paths, &bermudan(1.1, 4)).unwrap();
        let reference = 0.15213858;
        assert!((p.price / reference - 1.0).abs() < 0.005, "{}", p.price);
        let e = price_european_put(&paths, &bermudan(1.1, 4)).unwrap();
        assert!(p.price >= e.price && p.price <= 1.1);
        let r = price_bermudan_lsmc_with(&paths, &bermudan(1.1, 4), Continuation::Realized).unwrap();
        assert!((r.price / reference - 1.0).abs() < 0.01, "{}", r.price);
    }

    #[test]
    fn single_date_is_european() {
        let paths = exact_paths(0.1, 0.3, 1.0, 1, 10_000, 3);
        let b = price_bermudan_lsmc(&paths, &bermudan(1.1, 1)).unwrap();
        let e = price_european_put(&paths, &bermudan(1.1, 1)).unwrap();
        assert_eq!(b, e);
    }

    #[test]
    fn no_in_the_money_paths_skips_regression() {
        let paths = exact_paths(0.1, 0.01, 1.0, 4, 1_000, 1);
        let p = price_bermudan_lsmc(&paths, &bermudan(0.5, 4)).unwrap();
        assert_eq!(p.skipped_regressions, 3);
        assert_eq!(p.price, 0.0);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let paths = exact_paths(0.1, 0.3, 1.0, 4, 10, 1);
        assert!(price_asian(&paths, &bermudan(1.0, 4)).is_err());
        assert!(price_bermudan_lsmc(&paths, &asian(1.0)).is_err());
        assert!(OptionSpec { strike: 0.0, ..asian(1.0) }.validate().is_err());
        assert!(OptionSpec { rate: -0.1, ..asian(1.0) }.validate().is_err());
    }

    #[test]
    fn result_json_fields() {
        let est = PriceEstimate {
            price: 0.2,
            stderr: 0.001,
            skipped_regressions: 0,
        };
        let v = serde_json::to_value(PriceResult::new(est, 10, "exact", asian(1.0), 0)).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["n_paths", "price", "scheme", "seed", "spec", "stderr"]);
        assert_eq!(v["spec"]["kind"], "asian_fixed_strike");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn bermudan_bounds_and_strike_monotonicity(seed in 0u64..1000, k in 0.8f64..1.3) {
            let paths = exact_paths(0.1, 0.3, 1.0, 4, 20_000, seed);
            let lo = price_bermudan_lsmc(&paths, &bermudan(k, 4)).unwrap();
            let hi = price_bermudan_lsmc(&paths, &bermudan(k + 0.05, 4)).unwrap();
            let e = price_european_put(&paths, &bermudan(k, 4)).unwrap();
            prop_assert!(lo.price >= e.price - 1e-12);
            prop_assert!(lo.price <= k);
            prop_assert!(hi.price >= lo.price);
        }
    }
}
