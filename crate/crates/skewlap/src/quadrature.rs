//! Brute-force ground truth for `d ≤ 3`: tensor Gauss–Legendre quadrature in
//! whitened coordinates for normalized posterior integrals, half-space
//! probabilities and total variation to `γ̂` or `γ̂_S`.
//!
//! The box is centred at `x̂` in whitened coordinates and is not clipped to `Θ`;
//! points outside `Θ` carry zero posterior density but still carry `γ̂` mass.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laplace::{whitened_third, LaplaceFit, Representation};
use crate::model::PosteriorModel;
use crate::tensor::WhitenedThird;

/// Largest dimension the oracle accepts.
pub const MAX_DIM: usize = 3;

const LINE_REFINE: usize = 4;
const ROOT_ITERS: usize = 100;

/// `(Pₙ(x), Pₙ₋₁(x))` by the three-term recurrence, `n ≥ 1`.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`, `n ≥ 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, pm1) = legendre_pair(n, x);
            let dx = p / (nf * (x * p - pm1) / (x * x - 1.0));
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (p, pm1) = legendre_pair(n, x);
        let dp = nf * (x * p - pm1) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Nodes and probability weights for `E[f(Z)]`, `Z ~ N(0, 1)` (Golub–Welsch).
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));
    for k in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - k] - nodes[k]);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    // Christoffel weights 1/Σₖ hₖ(x)² with orthonormal hₖ = Heₖ/√k!.
    let weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (mut h0, mut h1) = (1.0, x);
            let mut s = 1.0 + if n > 1 { x * x } else { 0.0 };
            for k in 1..n.saturating_sub(1) {
                let kf = k as f64;
                let h2 = (x * h1 - kf.sqrt() * h0) / (kf + 1.0).sqrt();
                h0 = h1;
                h1 = h2;
                s += h1 * h1;
            }
            1.0 / s
        })
        .collect();
    let total: f64 = weights.iter().sum();
    (nodes, weights.into_iter().map(|w| w / total).collect())
}

fn mapped_rule(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (h, c) = (0.5 * (b - a), 0.5 * (b + a));
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

/// Tensor Gauss–Legendre grid on a whitened box `[−half_width, half_width]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub nodes_per_axis: usize,
    pub half_width: f64,
}

impl QuadratureGrid {
    /// 400 nodes for `d = 1`, 200 for `d = 2`, 80 for `d = 3`, half-width 12.
    pub fn default_for(d: usize) -> Self {
        let nodes_per_axis = match d {
            1 => 400,
            2 => 200,
            _ => 80,
        };
        Self { nodes_per_axis, half_width: 12.0 }
    }

    pub fn doubled(&self) -> Self {
        Self { nodes_per_axis: 2 * self.nodes_per_axis, ..*self }
    }

    fn validate(&self) -> Result<()> {
        if self.nodes_per_axis < 2 || self.half_width < 10.0 {
            return Err(Error::InvalidArgument("grid needs ≥ 2 nodes per axis and half-width ≥ 10".into()));
        }
        Ok(())
    }

    /// Axis rules; axis 0 is split at the origin into two halves.
    fn axes(&self, d: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let hw = self.half_width;
        let half = self.nodes_per_axis.div_ceil(2);
        let (mut x0, mut w0) = mapped_rule(half, -hw, 0.0);
        let (x1, w1) = mapped_rule(half, 0.0, hw);
        x0.extend(x1);
        w0.extend(w1);
        let mut out = vec![(x0, w0)];
        for _ in 1..d {
            out.push(mapped_rule(self.nodes_per_axis, -hw, hw));
        }
        out
    }
}

/// `x = x̂ + L⁻ᵀQz` with an orthogonal `Q`.
struct Frame<'a, M: PosteriorModel + ?Sized> {
    model: &'a M,
    mode: DVector<f64>,
    map: DMatrix<f64>,
    v_hat: f64,
}

impl<'a, M: PosteriorModel + ?Sized> Frame<'a, M> {
    fn new(model: &'a M, fit: &LaplaceFit, rot: DMatrix<f64>) -> Result<Self> {
        let d = fit.dim();
        if d > MAX_DIM {
            return Err(Error::Unsupported(format!("quadrature oracle supports d ≤ {MAX_DIM}, got {d}")));
        }
        let map = fit.inv_factor_t() * &rot;
        Ok(Self { model, mode: fit.mode.clone(), map, v_hat: model.value(&fit.mode) })
    }

    fn point(&self, z: &[f64]) -> DVector<f64> {
        &self.mode + &self.map * DVector::from_column_slice(z)
    }

    /// `exp(−V(x) + V(x̂))`, zero outside `Θ`.
    fn weight(&self, x: &DVector<f64>) -> f64 {
        if !self.model.domain_guard(x) {
            return 0.0;
        }
        let v = self.model.value(x);
        if v.is_finite() {
            (self.v_hat - v).exp()
        } else {
            0.0
        }
    }
}

/// Sum `w(z)·f(z)` over the tensor grid; axis-0 slices run in parallel and are
/// reduced in index order.
fn grid_sum<F>(axes: &[(Vec<f64>, Vec<f64>)], m: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let d = axes.len();
    let n0 = axes[0].0.len();
    let slices: Vec<Vec<f64>> = (0..n0)
        .into_par_iter()
        .map(|i0| {
            let mut acc = vec![0.0; m];
            let mut out = vec![0.0; m];
            let mut idx = vec![0usize; d];
            idx[0] = i0;
            let mut z = vec![0.0; d];
            loop {
                let mut w = 1.0;
                for k in 0..d {
                    z[k] = axes[k].0[idx[k]];
                    w *= axes[k].1[idx[k]];
                }
                f(&z, &mut out);
                for (a, o) in acc.iter_mut().zip(&out) {
                    *a += w * o;
                }
                let mut k = d - 1;
                loop {
                    if k == 0 {
                        return acc;
                    }
                    idx[k] += 1;
                    if idx[k] < axes[k].0.len() {
                        break;
                    }
                    idx[k] = 0;
                    k -= 1;
                }
            }
        })
        .collect();
    let mut total = vec![0.0; m];
    for s in &slices {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    total
}

/// `∫ gₖ dπ` for `k < m`, with `π` normalized on the same grid.
pub fn true_integral_vec<M, G>(model: &M, fit: &LaplaceFit, m: usize, g: G, grid: &QuadratureGrid) -> Result<Vec<f64>>
where
    M: PosteriorModel + ?Sized,
    G: Fn(&DVector<f64>, &mut [f64]) + Sync,
{
    grid.validate()?;
    let d = fit.dim();
    let frame = Frame::new(model, fit, DMatrix::identity(d, d))?;
    let axes = grid.axes(d);
    let sums = grid_sum(&axes, m + 1, |z, out| {
        let x = frame.point(z);
        let w = frame.weight(&x);
        out[0] = w;
        if w == 0.0 {
            out[1..].fill(0.0);
        } else {
            g(&x, &mut out[1..]);
            for o in out[1..].iter_mut() {
                *o *= w;
            }
        }
    });
    if !(sums[0] > 0.0) {
        return Err(Error::Numerical("posterior mass on the grid is zero".into()));
    }
    Ok(sums[1..].iter().map(|s| s / sums[0]).collect())
}

/// `∫ g dπ`.
pub fn true_integral<M, G>(model: &M, fit: &LaplaceFit, g: G, grid: &QuadratureGrid) -> Result<f64>
where
    M: PosteriorModel + ?Sized,
    G: Fn(&DVector<f64>) -> f64 + Sync,
{
    Ok(true_integral_vec(model, fit, 1, |x, out| out[0] = g(x), grid)?[0])
}

/// Posterior mean `∫ x dπ`.
pub fn true_mean<M: PosteriorModel + ?Sized>(model: &M, fit: &LaplaceFit, grid: &QuadratureGrid) -> Result<DVector<f64>> {
    let d = fit.dim();
    let v = true_integral_vec(model, fit, d, |x, out| out.copy_from_slice(x.as_slice()), grid)?;
    Ok(DVector::from_vec(v))
}

/// Orthogonal `Q` with first column `q` (Householder reflector).
fn reflector_to(q: &DVector<f64>) -> DMatrix<f64> {
    let d = q.len();
    let mut v = -q.clone();
    v[0] += 1.0;
    let vv = v.norm_squared();
    if vv < 1e-30 {
        return DMatrix::identity(d, d);
    }
    DMatrix::identity(d, d) - (&v * v.transpose()) * (2.0 / vv)
}

/// `π(aᵀ(x − x̂) ≥ 0)`, with the half-space boundary aligned to a grid split.
pub fn half_space_probability<M: PosteriorModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    a: &DVector<f64>,
    grid: &QuadratureGrid,
) -> Result<f64> {
    grid.validate()?;
    let d = fit.dim();
    if a.len() != d || a.norm() == 0.0 {
        return Err(Error::InvalidArgument("half-space normal must be a nonzero vector of length d".into()));
    }
    let la = fit.factor.solve_lower_triangular(a).ok_or_else(|| Error::Numerical("singular factor".into()))?;
    let rot = reflector_to(&(&la / la.norm()));
    let frame = Frame::new(model, fit, rot)?;
    let axes = grid.axes(d);
    let sums = grid_sum(&axes, 2, |z, out| {
        let w = frame.weight(&frame.point(z));
        out[0] = w;
        out[1] = if z[0] > 0.0 { w } else { 0.0 };
    });
    if !(sums[0] > 0.0) {
        return Err(Error::Numerical("posterior mass on the grid is zero".into()));
    }
    Ok(sums[1] / sums[0])
}

/// Which approximation [`true_tv`] compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Against {
    Laplace,
    SkewCorrected,
}

fn std_normal_density(z: &[f64]) -> f64 {
    let r2: f64 = z.iter().map(|v| v * v).sum();
    (-0.5 * r2).exp() / (2.0 * PI).powf(0.5 * z.len() as f64)
}

/// `∫_a^b |f|` with sign changes and domain edges located by bisection on a
/// refined grid, then Gauss–Legendre on each smooth piece.
fn line_abs_integral(f: &dyn Fn(f64) -> (f64, bool), a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let m = LINE_REFINE * rule.0.len();
    let h = (b - a) / m as f64;
    let mut breaks = vec![a];
    let (mut prev_t, mut prev) = (a, f(a));
    for k in 1..=m {
        let t = if k == m { b } else { a + h * k as f64 };
        let cur = f(t);
        let changed = |p: (f64, bool), c: (f64, bool)| p.1 != c.1 || (p.0 > 0.0) != (c.0 > 0.0);
        if changed(prev, cur) {
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..ROOT_ITERS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if changed(prev, f(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            breaks.push(0.5 * (lo + hi));
        }
        prev_t = t;
        prev = cur;
    }
    breaks.push(b);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let (c, r) = (0.5 * (hi + lo), 0.5 * (hi - lo));
        let s: f64 = rule.0.iter().zip(&rule.1).map(|(x, wt)| wt * f(c + r * x).0.abs()).sum();
        total += r * s;
    }
    total
}

/// `TV(π, q) = ½∫|π − q|` with `q = γ̂` or the signed `γ̂_S`.
pub fn true_tv<M: PosteriorModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    against: Against,
    grid: &QuadratureGrid,
) -> Result<f64> {
    grid.validate()?;
    let d = fit.dim();
    let frame = Frame::new(model, fit, DMatrix::identity(d, d))?;
    let tensor: Option<WhitenedThird> = match against {
        Against::Laplace => None,
        Against::SkewCorrected => Some(whitened_third(model, fit, Representation::Dense)?),
    };
    let axes = grid.axes(d);
    let mass = grid_sum(&axes, 1, |z, out| out[0] = frame.weight(&frame.point(z)))[0];
    if !(mass > 0.0) {
        return Err(Error::Numerical("posterior mass on the grid is zero".into()));
    }
    let hw = grid.half_width;
    let rule = gauss_legendre(grid.nodes_per_axis);
    let q = |z: &[f64]| -> f64 {
        let g = std_normal_density(z);
        match &tensor {
            Some(t) => g * (1.0 - t.cube(z) / 6.0),
            None => g,
        }
    };
    let line = |prefix: &[f64]| -> f64 {
        let mut z = prefix.to_vec();
        z.push(0.0);
        let f = |t: f64| -> (f64, bool) {
            let mut zz = z.clone();
            *zz.last_mut().unwrap() = t;
            let x = frame.point(&zz);
            let inside = frame.model.domain_guard(&x);
            let p = if inside { frame.weight(&x) / mass } else { 0.0 };
            (p - q(&zz), inside)
        };
        line_abs_integral(&f, -hw, hw, &rule)
    };
    let total = if d == 1 {
        line(&[])
    } else {
        grid_sum(&axes[..d - 1], 1, |z, out| out[0] = line(z))[0]
    };
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m12: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((m12 - 2.0 / 13.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite_prob(40);
        let m: Vec<f64> = (0..7).map(|p| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum()).collect();
        assert!((m[0] - 1.0).abs() < 1e-13);
        assert!(m[1].abs() < 1e-13);
        assert!((m[2] - 1.0).abs() < 1e-12);
        assert!((m[4] - 3.0).abs() < 1e-11);
        assert!((m[6] - 15.0).abs() < 1e-10);
    }

    #[test]
    fn abs_line_handles_kinks() {
        let rule = gauss_legendre(20);
        let v = line_abs_integral(&|t| (t - 0.3, true), -1.0, 1.0, &rule);
        assert!((v - (0.5 * 1.3 * 1.3 + 0.5 * 0.7 * 0.7)).abs() < 1e-13);
    }

    #[test]
    fn reflector_first_column() {
        let q = DVector::from_vec(vec![0.6, 0.8]);
        let r = reflector_to(&q);
        assert!((r.column(0) - &q).norm() < 1e-15);
        assert!((r.transpose() * &r - DMatrix::identity(2, 2)).norm() < 1e-15);
    }
}
