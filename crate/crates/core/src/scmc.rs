//! Stochastic collocation Monte Carlo: a cheap map `g_m` from a standard
//! normal variable to the target, built from a few quantiles of the target
//! at Gauss-Hermite nodes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interpolation::{Extrapolation, InterpolantKind, NodeInterpolator};
use crate::probability::{std_normal_cdf, EmpiricalDistribution, QuadratureRule};

pub const DEFAULT_COLLOCATION_POINTS: usize = 5;

/// Collocation pairs `(x_j, y_j)` with `y_j = F_Y^{-1}(Φ(x_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub x_points: Vec<f64>,
    pub y_points: Vec<f64>,
    pub interpolant_kind: InterpolantKind,
    /// Behaviour for draws beyond the outer nodes.
    #[serde(default = "linear")]
    pub extrapolation: Extrapolation,
}

fn linear() -> Extrapolation {
    Extrapolation::Linear
}

impl CollocationSet {
    pub fn new(x_points: Vec<f64>, y_points: Vec<f64>, kind: InterpolantKind) -> Result<Self> {
        if x_points.len() != y_points.len() {
            return Err(Error::DimensionMismatch {
                expected: x_points.len(),
                got: y_points.len(),
            });
        }
        if y_points.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("collocation values must be non-decreasing"));
        }
        Ok(CollocationSet {
            x_points,
            y_points,
            interpolant_kind: kind,
            extrapolation: Extrapolation::Linear,
        })
    }

    pub fn len(&self) -> usize {
        self.x_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_points.is_empty()
    }

    pub fn with_kind(mut self, kind: InterpolantKind) -> Self {
        self.interpolant_kind = kind;
        self
    }

    pub fn with_extrapolation(mut self, extrapolation: Extrapolation) -> Self {
        self.extrapolation = extrapolation;
        self
    }

    pub fn interpolator(&self) -> Result<NodeInterpolator> {
        NodeInterpolator::new(self.interpolant_kind, &self.x_points, self.extrapolation)
    }
}

/// Empirical quantiles of `samples` at the probabilities `Φ(x_j)`.
pub fn extract_collocation(
    samples: &EmpiricalDistribution,
    rule: &QuadratureRule,
    kind: InterpolantKind,
) -> Result<CollocationSet> {
    let m = rule.len();
    if samples.len() < 10 * m {
        return Err(Error::InsufficientSamples {
            needed: 10 * m,
            got: samples.len(),
        });
    }
    let y = rule
        .nodes
        .iter()
        .map(|x| samples.quantile(std_normal_cdf(*x)))
        .collect::<Result<Vec<_>>>()?;
    CollocationSet::new(rule.nodes.clone(), y, kind)
}

/// `Ŷ = g_m(z)` for each draw.
pub fn scmc_sample(colloc: &CollocationSet, z_draws: &[f64]) -> Result<Vec<f64>> {
    let interp = colloc.interpolator()?;
    Ok(z_draws
        .par_iter()
        .map(|z| interp.evaluate(&colloc.y_points, *z))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probability::{gauss_hermite_normal, ks_two_sample};
    use crate::rng::{fill_standard_normal, stream_rng};

    fn ks(a: &[f64], b: &[f64]) -> f64 {
        ks_two_sample(
            &EmpiricalDistribution::new(a.to_vec()).unwrap(),
            &EmpiricalDistribution::new(b.to_vec()).unwrap(),
        )
        .statistic
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut v = vec![0.0; n];
        fill_standard_normal(&mut stream_rng(seed, 0), &mut v);
        v
    }

    #[test]
    fn affine_target_is_exact_for_any_draw() {
        let rule = gauss_hermite_normal(5).unwrap();
        let y: Vec<f64> = rule.nodes.iter().map(|x| 2.0 * x + 1.0).collect();
        let z = [-9.0, -3.5, -0.3, 0.0, 1.7, 4.2, 12.0];
        for kind in [InterpolantKind::Barycentric, InterpolantKind::ChebyshevFit, InterpolantKind::Pchip] {
            let c = CollocationSet::new(rule.nodes.clone(), y.clone(), kind).unwrap();
            for (got, z) in scmc_sample(&c, &z).unwrap().iter().zip(z) {
                assert!((got - (2.0 * z + 1.0)).abs() < 1e-10, "{kind:?} at {z}: {got}");
            }
        }
        let clamped = CollocationSet::new(rule.nodes.clone(), y, InterpolantKind::Pchip)
            .unwrap()
            .with_extrapolation(Extrapolation::Clamp);
        assert!((scmc_sample(&clamped, &[12.0]).unwrap()[0] - (2.0 * rule.nodes[4] + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_and_affine_targets() {
        let rule = gauss_hermite_normal(3).unwrap();
        let x = normals(200_000, 1);
        let id = extract_collocation(
            &EmpiricalDistribution::new(x.clone()).unwrap(),
            &rule,
            InterpolantKind::Barycentric,
        )
        .unwrap();
        let s3 = 3f64.sqrt();
        for (y, want) in id.y_points.iter().zip([-s3, 0.0, s3]) {
            assert!((y - want).abs() < 0.02, "{y} vs {want}");
        }
        let aff: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = extract_collocation(
            &EmpiricalDistribution::new(aff).unwrap(),
            &rule,
            InterpolantKind::Barycentric,
        )
        .unwrap();
        for (y, xj) in c.y_points.iter().zip(&rule.nodes) {
            assert!((y - (2.0 * xj + 1.0)).abs() < 0.04);
        }
    }

    #[test]
    fn lognormal_collocation_matches_analytic_quantiles() {
        let rule = gauss_hermite_normal(5).unwrap();
        let y: Vec<f64> = normals(200_000, 2)
            .iter()
            .map(|z| (0.055 + 0.3 * z).exp())
            .collect();
        let c = extract_collocation(
            &EmpiricalDistribution::new(y).unwrap(),
            &rule,
            InterpolantKind::Pchip,
        )
        .unwrap();
        for (yj, xj) in c.y_points.iter().zip(&rule.nodes) {
            let want = (0.055 + 0.3 * xj).exp();
            // outer nodes sit deep in the tails
            let tol = if xj.abs() > 2.5 { 0.06 } else { 0.01 } * want;
            assert!((yj - want).abs() < tol, "{yj} vs {want}");
        }
    }

    #[test]
    fn too_few_samples() {
        let rule = gauss_hermite_normal(5).unwrap();
        let e = EmpiricalDistribution::new(normals(49, 3)).unwrap();
        assert!(matches!(
            extract_collocation(&e, &rule, InterpolantKind::Pchip),
            Err(Error::InsufficientSamples { needed: 50, got: 49 })
        ));
    }

    #[test]
    fn affine_map_recovered_exactly() {
        let rule = gauss_hermite_normal(4).unwrap();
        let y: Vec<f64> = rule.nodes.iter().map(|x| 2.0 * x + 1.0).collect();
        for kind in [
            InterpolantKind::Barycentric,
            InterpolantKind::ChebyshevFit,
            InterpolantKind::Pchip,
        ] {
            let c = CollocationSet::new(rule.nodes.clone(), y.clone(), kind).unwrap();
            let z = [-1.3, -0.2, 0.0, 0.9, 1.7];
            for (s, zi) in scmc_sample(&c, &z).unwrap().iter().zip(z) {
                assert!((s - (2.0 * zi + 1.0)).abs() < 1e-12);
            }
            let at_nodes = scmc_sample(&c, &rule.nodes).unwrap();
            for (a, b) in at_nodes.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lognormal_sampling_passes_ks() {
        let rule = gauss_hermite_normal(5).unwrap();
        let y: Vec<f64> = rule.nodes.iter().map(|x| (0.055 + 0.3 * x).exp()).collect();
        let c = CollocationSet::new(rule.nodes.clone(), y, InterpolantKind::Barycentric).unwrap();
        let z = normals(100_000, 4);
        let s = scmc_sample(&c, &z).unwrap();
        let exact: Vec<f64> = normals(100_000, 5)
            .iter()
            .map(|v| (0.055 + 0.3 * v).exp())
            .collect();
        let d = ks(&s, &exact);
        assert!(d < 0.01, "{d}");
    }

    #[test]
    fn cdf_error_shrinks_with_more_points() {
        // GBM terminal law at T = 1: exact transform of the normal draw
        let z = normals(200_000, 6);
        let g = |x: f64| (0.055 + 0.3 * x).exp();
        let exact: Vec<f64> = z.iter().map(|x| g(*x)).collect();
        let mut prev = f64::INFINITY;
        for m in 2..=5 {
            let rule = gauss_hermite_normal(m).unwrap();
            let y: Vec<f64> = rule.nodes.iter().map(|x| g(*x)).collect();
            let c = CollocationSet::new(rule.nodes.clone(), y, InterpolantKind::Barycentric)
                .unwrap();
            let s = scmc_sample(&c, &z).unwrap();
            // same draws on both sides isolates the interpolation error
            let d = ks(&s, &exact);
            assert!(d <= prev + 1e-3, "m={m}: {d} vs {prev}");
            prev = d;
        }
    }

    proptest::proptest! {
        #[test]
        fn polynomial_maps_reproduced(c0 in -2.0f64..2.0, c1 in 0.5f64..2.0, c2 in 0.0f64..0.1,
                                     z in -2.0f64..2.0) {
            let rule = gauss_hermite_normal(4).unwrap();
            // c1 + 2 c2 x > 0 on the hull keeps q monotone
            let q = |x: f64| c0 + c1 * x + c2 * x * x;
            let y: Vec<f64> = rule.nodes.iter().map(|x| q(*x)).collect();
            let c = CollocationSet::new(rule.nodes.clone(), y, InterpolantKind::Barycentric).unwrap();
            let s = scmc_sample(&c, &[z]).unwrap()[0];
            proptest::prop_assert!((s - q(z)).abs() <= 1e-10 * q(z).abs().max(1.0));
        }

        #[test]
        fn pchip_samples_monotone(incs in proptest::collection::vec(0.0f64..2.0, 4),
                                  mut zs in proptest::collection::vec(-4.0f64..4.0, 20)) {
            let rule = gauss_hermite_normal(5).unwrap();
            let mut y = vec![0.0];
            for d in &incs {
                y.push(y[y.len() - 1] + d);
            }
            let c = CollocationSet::new(rule.nodes.clone(), y, InterpolantKind::Pchip).unwrap();
            zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let s = scmc_sample(&c, &zs).unwrap();
            for w in s.windows(2) {
                proptest::prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }
}
