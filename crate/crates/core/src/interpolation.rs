//! One-dimensional interpolants: barycentric Lagrange, Chebyshev
//! least-squares fit, and monotone piecewise cubic Hermite (PCHIP).
//!
//! [`Interpolant`] owns its knots. [`NodeInterpolator`] fixes the abscissas
//! once (precomputing barycentric weights or the Chebyshev pseudo-inverse)
//! and takes the ordinates per call; it is what the samplers use in their
//! per-path loops.
//!
//! Queries outside the knot hull are clamped by default; linear extension
//! along the end slope is available through [`Extrapolation::Linear`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolantKind {
    Barycentric,
    #[serde(rename = "chebyshev")]
    ChebyshevFit,
    Pchip,
}

impl std::str::FromStr for InterpolantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "barycentric" | "lagrange" => Ok(InterpolantKind::Barycentric),
            "chebyshev" => Ok(InterpolantKind::ChebyshevFit),
            "pchip" => Ok(InterpolantKind::Pchip),
            other => Err(invalid(format!("unknown interpolant kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extrapolation {
    #[default]
    Clamp,
    Linear,
}

/// `m` Chebyshev-Lobatto nodes on `[x_a, x_b]`, ascending.
pub fn chebyshev_nodes(m: usize, x_a: f64, x_b: f64) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(invalid("need at least two Chebyshev nodes"));
    }
    if !(x_a < x_b) {
        return Err(invalid(format!("degenerate interval [{x_a}, {x_b}]")));
    }
    let mut nodes: Vec<f64> = (0..m)
        .map(|k| {
            let c = (std::f64::consts::PI * k as f64 / (m - 1) as f64).cos();
            x_a + 0.5 * (1.0 + c) * (x_b - x_a)
        })
        .collect();
    nodes.reverse();
    nodes[0] = x_a;
    nodes[m - 1] = x_b;
    if m % 2 == 1 {
        nodes[m / 2] = 0.5 * (x_a + x_b);
    }
    Ok(nodes)
}

fn check_abscissas(xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(invalid("abscissas must be finite"));
    }
    for w in xs.windows(2) {
        if w[0] == w[1] {
            return Err(invalid(format!("duplicate abscissa {}", w[0])));
        }
        if w[0] > w[1] {
            return Err(invalid("abscissas must be strictly increasing"));
        }
    }
    Ok(())
}

fn barycentric_weights(xs: &[f64]) -> Vec<f64> {
    (0..xs.len())
        .map(|j| {
            let prod: f64 = xs
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != j)
                .map(|(_, xk)| xs[j] - xk)
                .product();
            1.0 / prod
        })
        .collect()
}

fn barycentric_eval(xs: &[f64], w: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..xs.len() {
        let d = x - xs[j];
        if d == 0.0 {
            return ys[j];
        }
        let c = w[j] / d;
        num += c * ys[j];
        den += c;
    }
    num / den
}

/// Derivative of the interpolating polynomial at knot `i`.
fn barycentric_knot_derivative(xs: &[f64], w: &[f64], ys: &[f64], i: usize) -> f64 {
    (0..xs.len())
        .filter(|j| *j != i)
        .map(|j| (w[j] / w[i]) * (ys[j] - ys[i]) / (xs[i] - xs[j]))
        .sum()
}

/// Chebyshev polynomials T_0..T_degree at u in [-1, 1].
fn chebyshev_basis(u: f64, degree: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if degree >= 1 {
        out[1] = u;
    }
    for k in 2..=degree {
        out[k] = 2.0 * u * out[k - 1] - out[k - 2];
    }
}

fn chebyshev_series(coeffs: &[f64], u: f64) -> f64 {
    // Clenshaw recurrence
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for c in coeffs.iter().skip(1).rev() {
        let b0 = 2.0 * u * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    coeffs[0] + u * b1 - b2
}

/// Series derivative d/du at u = ±1: T_k'(1) = k², T_k'(-1) = (-1)^{k+1} k².
fn chebyshev_end_derivative(coeffs: &[f64], right: bool) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let k2 = (k * k) as f64;
            if right || k % 2 == 1 {
                c * k2
            } else {
                -c * k2
            }
        })
        .sum()
}

/// Least-squares solve operator `(degree+1) x n` mapping ordinates to
/// Chebyshev coefficients, via SVD of the design matrix.
fn chebyshev_solver(xs: &[f64], degree: usize) -> Result<DMatrix<f64>> {
    let n = xs.len();
    if degree + 1 > n {
        return Err(invalid(format!(
            "Chebyshev degree {degree} needs at least {} points, got {n}",
            degree + 1
        )));
    }
    let (lo, hi) = (xs[0], xs[n - 1]);
    let mut design = DMatrix::<f64>::zeros(n, degree + 1);
    let mut row = vec![0.0; degree + 1];
    for (i, x) in xs.iter().enumerate() {
        chebyshev_basis(to_unit(*x, lo, hi), degree, &mut row);
        for k in 0..=degree {
            design[(i, k)] = row[k];
        }
    }
    design
        .svd(true, true)
        .pseudo_inverse(1e-13)
        .map_err(|e| invalid(format!("Chebyshev fit failed: {e}")))
}

fn to_unit(x: f64, lo: f64, hi: f64) -> f64 {
    (2.0 * x - lo - hi) / (hi - lo)
}

// ---------------------------------------------------------------------------
// PCHIP kernels

fn secant(xs: &[f64], ys: &[f64], k: usize) -> f64 {
    (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
}

/// PCHIP slope at knot `k`, and optionally its gradient with respect to the
/// ordinates it depends on (written as `(index, value)` pairs).
fn pchip_slope(xs: &[f64], ys: &[f64], k: usize, grad: Option<&mut Vec<(usize, f64)>>) -> f64 {
    let n = xs.len();
    if n == 2 {
        let d = secant(xs, ys, 0);
        if let Some(g) = grad {
            let h = xs[1] - xs[0];
            g.push((0, -1.0 / h));
            g.push((1, 1.0 / h));
        }
        return d;
    }
    if k == 0 || k == n - 1 {
        // one-sided three-point estimate with shape-preserving limits
        let (i0, i1) = if k == 0 { (0, 1) } else { (n - 2, n - 3) };
        let h0 = xs[i0 + 1] - xs[i0];
        let h1 = xs[i1 + 1] - xs[i1];
        let d0 = secant(xs, ys, i0);
        let d1 = secant(xs, ys, i1);
        let f = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        // d(d_i)/dy at (i, i+1) are (-1/h, 1/h)
        let push = |g: &mut Vec<(usize, f64)>, i: usize, h: f64, c: f64| {
            g.push((i, -c / h));
            g.push((i + 1, c / h));
        };
        if sign(f) != sign(d0) {
            return 0.0;
        }
        if sign(d0) != sign(d1) && f.abs() > 3.0 * d0.abs() {
            if let Some(g) = grad {
                push(g, i0, h0, 3.0);
            }
            return 3.0 * d0;
        }
        if let Some(g) = grad {
            push(g, i0, h0, (2.0 * h0 + h1) / (h0 + h1));
            push(g, i1, h1, -h0 / (h0 + h1));
        }
        return f;
    }
    let h_prev = xs[k] - xs[k - 1];
    let h_next = xs[k + 1] - xs[k];
    let d_prev = secant(xs, ys, k - 1);
    let d_next = secant(xs, ys, k);
    if d_prev * d_next <= 0.0 {
        return 0.0;
    }
    let w1 = 2.0 * h_next + h_prev;
    let w2 = h_next + 2.0 * h_prev;
    let s = w1 / d_prev + w2 / d_next;
    let f = (w1 + w2) / s;
    if let Some(g) = grad {
        let a = (w1 + w2) * w1 / (d_prev * d_prev * s * s);
        let b = (w1 + w2) * w2 / (d_next * d_next * s * s);
        g.push((k - 1, -a / h_prev));
        g.push((k, a / h_prev - b / h_next));
        g.push((k + 1, b / h_next));
    }
    f
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn locate(xs: &[f64], x: f64) -> usize {
    // index k with xs[k] <= x <= xs[k+1]
    let n = xs.len();
    let p = xs.partition_point(|v| *v <= x);
    p.clamp(1, n - 1) - 1
}

fn hermite_basis(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    ]
}

fn pchip_eval_local(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = locate(xs, x);
    let h = xs[k + 1] - xs[k];
    let s = (x - xs[k]) / h;
    let f0 = pchip_slope(xs, ys, k, None);
    let f1 = pchip_slope(xs, ys, k + 1, None);
    let b = hermite_basis(s);
    b[0] * ys[k] + b[1] * h * f0 + b[2] * ys[k + 1] + b[3] * h * f1
}

fn pchip_eval_with_slopes(xs: &[f64], ys: &[f64], slopes: &[f64], x: f64) -> f64 {
    let k = locate(xs, x);
    let h = xs[k + 1] - xs[k];
    let b = hermite_basis((x - xs[k]) / h);
    b[0] * ys[k] + b[1] * h * slopes[k] + b[2] * ys[k + 1] + b[3] * h * slopes[k + 1]
}

fn pchip_basis_weights(xs: &[f64], ys: &[f64], x: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let k = locate(xs, x);
    let h = xs[k + 1] - xs[k];
    let b = hermite_basis((x - xs[k]) / h);
    out[k] += b[0];
    out[k + 1] += b[2];
    let mut g = Vec::with_capacity(6);
    pchip_slope(xs, ys, k, Some(&mut g));
    for (j, v) in g.drain(..) {
        out[j] += b[1] * h * v;
    }
    pchip_slope(xs, ys, k + 1, Some(&mut g));
    for (j, v) in g {
        out[j] += b[3] * h * v;
    }
}

/// Applies the extrapolation policy: returns the query to evaluate at and,
/// for linear extension, the knot index and offset beyond the hull.
fn clamp_query(xs: &[f64], x: f64, policy: Extrapolation) -> (f64, Option<(usize, f64)>) {
    let n = xs.len();
    if x < xs[0] {
        match policy {
            Extrapolation::Clamp => (xs[0], None),
            Extrapolation::Linear => (xs[0], Some((0, x - xs[0]))),
        }
    } else if x > xs[n - 1] {
        match policy {
            Extrapolation::Clamp => (xs[n - 1], None),
            Extrapolation::Linear => (xs[n - 1], Some((n - 1, x - xs[n - 1]))),
        }
    } else {
        (x, None)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Coefficients {
    Barycentric { weights: Vec<f64> },
    Chebyshev { coeffs: Vec<f64> },
    Pchip { slopes: Vec<f64> },
}

/// A fitted interpolant through `(knots_x[i], knots_y[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    kind: InterpolantKind,
    knots_x: Vec<f64>,
    knots_y: Vec<f64>,
    coefficients: Coefficients,
    extrapolation: Extrapolation,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub extrapolation: Extrapolation,
    /// Chebyshev degree; defaults to `n - 1`.
    pub degree: Option<usize>,
}

impl Interpolant {
    /// Fits through arbitrary-order points; abscissas must be distinct.
    pub fn fit(kind: InterpolantKind, points: &[(f64, f64)]) -> Result<Self> {
        Self::fit_with(kind, points, FitOptions::default())
    }

    pub fn fit_with(kind: InterpolantKind, points: &[(f64, f64)], opts: FitOptions) -> Result<Self> {
        let mut pts = points.to_vec();
        if pts.iter().any(|p| p.0.is_nan()) {
            return Err(invalid("abscissas must be finite"));
        }
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        Self::from_knots(kind, xs, ys, opts)
    }

    pub fn from_knots(
        kind: InterpolantKind,
        xs: Vec<f64>,
        ys: Vec<f64>,
        opts: FitOptions,
    ) -> Result<Self> {
        check_abscissas(&xs)?;
        if ys.len() != xs.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(invalid("ordinates must be finite"));
        }
        let coefficients = match kind {
            InterpolantKind::Barycentric => Coefficients::Barycentric {
                weights: barycentric_weights(&xs),
            },
            InterpolantKind::ChebyshevFit => {
                let degree = opts.degree.unwrap_or(xs.len() - 1);
                let solver = chebyshev_solver(&xs, degree)?;
                let coeffs = (&solver * nalgebra::DVector::from_column_slice(&ys))
                    .iter()
                    .copied()
                    .collect();
                Coefficients::Chebyshev { coeffs }
            }
            InterpolantKind::Pchip => Coefficients::Pchip {
                slopes: (0..xs.len()).map(|k| pchip_slope(&xs, &ys, k, None)).collect(),
            },
        };
        Ok(Interpolant {
            kind,
            knots_x: xs,
            knots_y: ys,
            coefficients,
            extrapolation: opts.extrapolation,
        })
    }

    pub fn kind(&self) -> InterpolantKind {
        self.kind
    }

    pub fn knots_x(&self) -> &[f64] {
        &self.knots_x
    }

    pub fn knots_y(&self) -> &[f64] {
        &self.knots_y
    }

    fn eval_inside(&self, x: f64) -> f64 {
        let xs = &self.knots_x;
        match &self.coefficients {
            Coefficients::Barycentric { weights } => barycentric_eval(xs, weights, &self.knots_y, x),
            Coefficients::Chebyshev { coeffs } => {
                chebyshev_series(coeffs, to_unit(x, xs[0], xs[xs.len() - 1]))
            }
            Coefficients::Pchip { slopes } => pchip_eval_with_slopes(xs, &self.knots_y, slopes, x),
        }
    }

    fn end_slope(&self, i: usize) -> f64 {
        let xs = &self.knots_x;
        let n = xs.len();
        match &self.coefficients {
            Coefficients::Barycentric { weights } => {
                barycentric_knot_derivative(xs, weights, &self.knots_y, i)
            }
            Coefficients::Chebyshev { coeffs } => {
                chebyshev_end_derivative(coeffs, i == n - 1) * 2.0 / (xs[n - 1] - xs[0])
            }
            Coefficients::Pchip { slopes } => slopes[i],
        }
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let (q, ext) = clamp_query(&self.knots_x, x, self.extrapolation);
        let v = self.eval_inside(q);
        match ext {
            None => v,
            Some((i, off)) => v + self.end_slope(i) * off,
        }
    }
}

/// Interpolation on fixed abscissas with ordinates supplied per call.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInterpolator {
    kind: InterpolantKind,
    xs: Vec<f64>,
    extrapolation: Extrapolation,
    bary_weights: Vec<f64>,
    /// Row-major `(degree + 1) x n` Chebyshev solve operator.
    cheb_solver: Vec<f64>,
    cheb_degree: usize,
}

impl NodeInterpolator {
    pub fn new(kind: InterpolantKind, xs: &[f64], extrapolation: Extrapolation) -> Result<Self> {
        check_abscissas(xs)?;
        let n = xs.len();
        let (cheb_solver, cheb_degree) = if kind == InterpolantKind::ChebyshevFit {
            let s = chebyshev_solver(xs, n - 1)?;
            let mut flat = Vec::with_capacity(n * n);
            for r in 0..n {
                for c in 0..n {
                    flat.push(s[(r, c)]);
                }
            }
            (flat, n - 1)
        } else {
            (Vec::new(), 0)
        };
        Ok(NodeInterpolator {
            kind,
            xs: xs.to_vec(),
            extrapolation,
            bary_weights: barycentric_weights(xs),
            cheb_solver,
            cheb_degree,
        })
    }

    pub fn kind(&self) -> InterpolantKind {
        self.kind
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn cheb_coeffs(&self, ys: &[f64], out: &mut [f64]) {
        let n = self.xs.len();
        for (r, o) in out.iter_mut().enumerate().take(self.cheb_degree + 1) {
            let row = &self.cheb_solver[r * n..(r + 1) * n];
            *o = row.iter().zip(ys).map(|(a, b)| a * b).sum();
        }
    }

    fn eval_inside(&self, ys: &[f64], x: f64) -> f64 {
        match self.kind {
            InterpolantKind::Barycentric => barycentric_eval(&self.xs, &self.bary_weights, ys, x),
            InterpolantKind::Pchip => pchip_eval_local(&self.xs, ys, x),
            InterpolantKind::ChebyshevFit => {
                let mut c = [0.0; 32];
                let c = if self.xs.len() <= 32 {
                    &mut c[..self.xs.len()]
                } else {
                    return self.eval_cheb_alloc(ys, x);
                };
                self.cheb_coeffs(ys, c);
                let n = self.xs.len();
                chebyshev_series(c, to_unit(x, self.xs[0], self.xs[n - 1]))
            }
        }
    }

    fn eval_cheb_alloc(&self, ys: &[f64], x: f64) -> f64 {
        let mut c = vec![0.0; self.xs.len()];
        self.cheb_coeffs(ys, &mut c);
        let n = self.xs.len();
        chebyshev_series(&c, to_unit(x, self.xs[0], self.xs[n - 1]))
    }

    fn end_slope(&self, ys: &[f64], i: usize) -> f64 {
        let n = self.xs.len();
        match self.kind {
            InterpolantKind::Barycentric => {
                barycentric_knot_derivative(&self.xs, &self.bary_weights, ys, i)
            }
            InterpolantKind::Pchip => pchip_slope(&self.xs, ys, i, None),
            InterpolantKind::ChebyshevFit => {
                let mut c = vec![0.0; n];
                self.cheb_coeffs(ys, &mut c);
                chebyshev_end_derivative(&c, i == n - 1) * 2.0 / (self.xs[n - 1] - self.xs[0])
            }
        }
    }

    /// `g(x)` for the interpolant through `(nodes[j], ys[j])`.
    pub fn evaluate(&self, ys: &[f64], x: f64) -> f64 {
        debug_assert_eq!(ys.len(), self.xs.len());
        let (q, ext) = clamp_query(&self.xs, x, self.extrapolation);
        let v = self.eval_inside(ys, q);
        match ext {
            None => v,
            Some((i, off)) => v + self.end_slope(ys, i) * off,
        }
    }

    /// Sensitivities `∂g(x)/∂ys[j]` at fixed abscissas. For barycentric and
    /// Chebyshev these are the cardinal functions; for PCHIP they include the
    /// dependence of the Hermite slopes on the ordinates.
    pub fn basis_weights(&self, ys: &[f64], x: f64, out: &mut [f64]) {
        let n = self.xs.len();
        match self.kind {
            InterpolantKind::Pchip => {
                let (q, ext) = clamp_query(&self.xs, x, self.extrapolation);
                pchip_basis_weights(&self.xs, ys, q, out);
                if let Some((i, off)) = ext {
                    let mut g = Vec::new();
                    pchip_slope(&self.xs, ys, i, Some(&mut g));
                    for (j, v) in g {
                        out[j] += v * off;
                    }
                }
            }
            _ => {
                // linear in the ordinates: evaluate on unit vectors
                let mut e = vec![0.0; n];
                for j in 0..n {
                    e[j] = 1.0;
                    out[j] = self.evaluate(&e, x);
                    e[j] = 0.0;
                }
            }
        }
    }
}
