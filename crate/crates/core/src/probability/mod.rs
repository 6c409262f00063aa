//! Quadrature, normal distribution functions, empirical distributions and
//! the two-sample Kolmogorov-Smirnov test.

mod empirical;
mod ks;
mod normal;
mod quadrature;

pub use empirical::EmpiricalDistribution;
pub(crate) use empirical::quantile_sorted;
pub use ks::{kolmogorov_survival, ks_two_sample, KsResult};
pub use normal::{std_normal_cdf, std_normal_inv_cdf, std_normal_pdf};
pub use quadrature::{gauss_hermite_normal, QuadratureRule};
