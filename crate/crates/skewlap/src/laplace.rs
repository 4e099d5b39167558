//! Mode finding, the Laplace fit `γ̂ = N(x̂, H_V⁻¹)`, whitening and sampling.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, inv_transpose_lower, symmetrize};
use crate::model::PosteriorModel;
use crate::rng::{fill_normal, stream_rng, SHARD_SIZE};
use crate::tensor::{dense_from_rank_one, DenseTensor3, WhitenedThird};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 80;
const DIVERGENCE_NORM: f64 = 1e6;

/// Default dense-tensor cap on `d`.
pub const DENSE_CAP: usize = 128;

#[derive(Debug, Clone, Copy)]
pub struct ModeOptions {
    pub max_iter: usize,
    /// Whitened gradient tolerance; `None` means `1e-10·√d`.
    pub grad_tol: Option<f64>,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeResult {
    pub mode: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterations where the Hessian was not positive definite.
    pub fallbacks: usize,
    /// `‖x‖` exceeded `1e6`, e.g. a separable logistic dataset.
    pub diverged: bool,
    /// Final `‖H(x)^{-1/2}∇V(x)‖`, or `‖∇V(x)‖` when `H(x)` is not PD.
    pub grad_norm: f64,
}

/// Convergence also needs the Newton step to satisfy `‖H⁻¹∇V‖ ≤ 10⁻⁶(1 + ‖x‖)`.
const STEP_TOL: f64 = 1e-6;

pub fn default_grad_tol(d: usize) -> f64 {
    1e-10 * (d as f64).sqrt()
}

/// Damped Newton on `V` with Armijo halving that never leaves the domain.
pub fn find_mode<M: PosteriorModel + ?Sized>(model: &M, x0: &DVector<f64>, opts: ModeOptions) -> Result<ModeResult> {
    let d = model.dim();
    if x0.len() != d {
        return Err(Error::InvalidArgument(format!("start has length {}, model has d = {d}", x0.len())));
    }
    if !model.domain_guard(x0) {
        return Err(Error::DomainViolation);
    }
    let tol = opts.grad_tol.unwrap_or_else(|| default_grad_tol(d));
    let mut x = x0.clone();
    let mut v = model.value(&x);
    let mut fallbacks = 0;
    let mut grad_norm = f64::INFINITY;

    for it in 0..opts.max_iter {
        let g = model.gradient(&x);
        let h = symmetrize(&model.hessian(&x));
        let chol = Cholesky::new(h);
        let (dir, weighted) = match &chol {
            Some(c) => {
                let lg = c.l().solve_lower_triangular(&g).unwrap_or_else(|| g.clone());
                (-c.solve(&g), lg.norm())
            }
            None => {
                fallbacks += 1;
                (-g.clone(), g.norm())
            }
        };
        grad_norm = weighted;
        if chol.is_some() && weighted <= tol && dir.norm() <= STEP_TOL * (1.0 + x.norm()) {
            return Ok(ModeResult { mode: x, iterations: it, converged: true, fallbacks, diverged: false, grad_norm });
        }
        if !weighted.is_finite() {
            return Err(Error::Numerical("non-finite gradient during mode search".into()));
        }

        let slope = g.dot(&dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let xn = &x + &dir * t;
            if model.domain_guard(&xn) {
                let vn = model.value(&xn);
                if vn.is_finite() && vn <= v + ARMIJO * t * slope {
                    accepted = Some((xn, vn));
                    break;
                }
                // Near the optimum V stops resolving the decrease; accept a
                // step that still shrinks the whitened gradient.
                if vn.is_finite() && (vn - v).abs() <= 1e-12 * v.abs().max(1.0) {
                    if let Some(c) = &chol {
                        let gn = model.gradient(&xn);
                        let ln = c.l().solve_lower_triangular(&gn).map(|r| r.norm()).unwrap_or(f64::INFINITY);
                        if ln < weighted {
                            accepted = Some((xn, vn));
                            break;
                        }
                    }
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((xn, vn)) => {
                x = xn;
                v = vn;
            }
            None => {
                return Ok(ModeResult { mode: x, iterations: it + 1, converged: false, fallbacks, diverged: false, grad_norm });
            }
        }
        if x.norm() > DIVERGENCE_NORM {
            return Ok(ModeResult { mode: x, iterations: it + 1, converged: false, fallbacks, diverged: true, grad_norm });
        }
    }
    // One last convergence check at the final iterate.
    let g = model.gradient(&x);
    let mut step_ok = false;
    if let Some(c) = Cholesky::new(symmetrize(&model.hessian(&x))) {
        if let Some(lg) = c.l().solve_lower_triangular(&g) {
            grad_norm = lg.norm();
            step_ok = c.solve(&g).norm() <= STEP_TOL * (1.0 + x.norm());
        }
    }
    let converged = grad_norm <= tol && step_ok;
    Ok(ModeResult { mode: x, iterations: opts.max_iter, converged, fallbacks, diverged: false, grad_norm })
}

/// `γ̂ = N(x̂, H_V⁻¹)` with the Cholesky factor of `H_V` computed once.
#[derive(Debug, Clone, Serialize)]
pub struct LaplaceFit {
    pub mode: DVector<f64>,
    pub hess: DMatrix<f64>,
    /// Lower-triangular `L` with `L Lᵀ = H_V`.
    pub factor: DMatrix<f64>,
    pub log_det_hess: f64,
    pub model_n: f64,
    pub c0: f64,
    pub s0: f64,
    #[serde(skip)]
    inv_factor_t: DMatrix<f64>,
}

impl LaplaceFit {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    /// `L⁻ᵀ`, whose columns map whitened unit vectors to model coordinates.
    pub fn inv_factor_t(&self) -> &DMatrix<f64> {
        &self.inv_factor_t
    }

    /// `z = Lᵀ(x − x̂)`.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factor.tr_mul(&(x - &self.mode))
    }

    /// `Lᵀh` for a displacement `h`.
    pub fn whiten_offset(&self, h: &DVector<f64>) -> DVector<f64> {
        self.factor.tr_mul(h)
    }

    /// `x̂ + L⁻ᵀz`.
    pub fn unwhiten(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mode + &self.inv_factor_t * z
    }

    /// `H_V⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.inv_factor_t * self.inv_factor_t.transpose()
    }

    /// `‖h‖_{H_V} = ‖Lᵀh‖`.
    pub fn hv_norm(&self, h: &DVector<f64>) -> f64 {
        self.whiten_offset(h).norm()
    }

    /// Log density of `γ̂` at a point with whitened coordinate `z`.
    pub fn log_density_whitened(&self, z: &DVector<f64>) -> f64 {
        let d = self.dim() as f64;
        -0.5 * d * (2.0 * std::f64::consts::PI).ln() + 0.5 * self.log_det_hess - 0.5 * z.norm_squared()
    }
}

/// Build `γ̂` at `mode`. `c0 ∈ (0, 1]` and `s0 > 0` are recorded for the bounds.
pub fn fit_laplace<M: PosteriorModel + ?Sized>(model: &M, mode: &DVector<f64>, c0: f64, s0: f64) -> Result<LaplaceFit> {
    if !(c0 > 0.0 && c0 <= 1.0) {
        return Err(Error::InvalidArgument(format!("c0 must lie in (0, 1], got {c0}")));
    }
    if !(s0 > 0.0) {
        return Err(Error::InvalidArgument(format!("s0 must be positive, got {s0}")));
    }
    let hess = symmetrize(&model.hessian(mode));
    let factor = cholesky(&hess)?;
    let log_det_hess = 2.0 * factor.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv_factor_t = inv_transpose_lower(&factor);
    Ok(LaplaceFit { mode: mode.clone(), hess, factor, log_det_hess, model_n: model.n_scale(), c0, s0, inv_factor_t })
}

/// Requested storage for `∇³W(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Dense,
    LowRank,
}

/// `T = ∇³W(0)`, dense (capped at `d ≤ 128`) or low-rank for GLM-type models.
pub fn whitened_third<M: PosteriorModel + ?Sized>(model: &M, fit: &LaplaceFit, rep: Representation) -> Result<WhitenedThird> {
    whitened_third_capped(model, fit, rep, DENSE_CAP)
}

pub fn whitened_third_capped<M: PosteriorModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    rep: Representation,
    cap: usize,
) -> Result<WhitenedThird> {
    let d = fit.dim();
    match rep {
        Representation::LowRank => {
            let r = model.rank_one_third(&fit.mode).ok_or_else(|| {
                Error::UnsupportedRepresentation("model has no rank-one third-derivative structure".into())
            })?;
            let vectors = &r.vectors * fit.inv_factor_t();
            Ok(WhitenedThird::LowRank { weights: r.weights, vectors })
        }
        Representation::Dense => {
            if d > cap {
                return Err(Error::TooLarge { dim: d, cap });
            }
            match model.rank_one_third(&fit.mode) {
                Some(r) => {
                    let vectors = &r.vectors * fit.inv_factor_t();
                    Ok(WhitenedThird::Dense(dense_from_rank_one(&r.weights, &vectors)))
                }
                None => Ok(WhitenedThird::Dense(dense_from_contractions(model, fit))),
            }
        }
    }
}

/// Dense `T` from `third_dir` against the columns of `L⁻ᵀ`.
pub fn dense_from_contractions<M: PosteriorModel + ?Sized>(model: &M, fit: &LaplaceFit) -> DenseTensor3 {
    let d = fit.dim();
    let cols: Vec<DVector<f64>> = (0..d).map(|i| fit.inv_factor_t().column(i).into_owned()).collect();
    DenseTensor3::from_sorted_entries(d, |i, j, k| model.third_dir(&fit.mode, &cols[i], &cols[j], &cols[k]))
}

/// `count` draws from `γ̂` as rows `x̂ + L⁻ᵀz`, bit-identical for a fixed seed.
pub fn sample_gaussian(fit: &LaplaceFit, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let d = fit.dim();
    let shards = count.div_ceil(SHARD_SIZE);
    let blocks: Vec<Vec<f64>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let lo = s * SHARD_SIZE;
            let hi = (lo + SHARD_SIZE).min(count);
            let mut rng = stream_rng(seed, s as u64);
            let mut z = vec![0.0; d];
            let mut out = Vec::with_capacity((hi - lo) * d);
            for _ in lo..hi {
                fill_normal(&mut rng, &mut z);
                let x = fit.unwhiten(&DVector::from_column_slice(&z));
                out.extend(x.iter());
            }
            out
        })
        .collect();
    let flat: Vec<f64> = blocks.concat();
    Ok(DMatrix::from_row_slice(count, d, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticModel;

    #[test]
    fn quadratic_mode_in_one_step() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = QuadraticModel::new(DVector::from_vec(vec![1.5, -0.5]), h, 1.0);
        let r = find_mode(&m, &DVector::from_vec(vec![10.0, 10.0]), ModeOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!((r.mode - DVector::from_vec(vec![1.5, -0.5])).norm() < 1e-12);
    }

    #[test]
    fn identity_fit() {
        let m = QuadraticModel::new(DVector::zeros(3), DMatrix::identity(3, 3), 1.0);
        let fit = fit_laplace(&m, &DVector::zeros(3), 1.0, 4.0).unwrap();
        assert_eq!(fit.factor, DMatrix::identity(3, 3));
        assert_eq!(fit.log_det_hess, 0.0);
        let t = whitened_third(&m, &fit, Representation::Dense).unwrap();
        assert!(t.is_zero());
        assert!(matches!(
            whitened_third(&m, &fit, Representation::LowRank),
            Err(Error::UnsupportedRepresentation(_))
        ));
    }

    #[test]
    fn bad_constants_rejected() {
        let m = QuadraticModel::new(DVector::zeros(1), DMatrix::identity(1, 1), 1.0);
        assert!(fit_laplace(&m, &DVector::zeros(1), 1.5, 4.0).is_err());
        assert!(fit_laplace(&m, &DVector::zeros(1), 1.0, 0.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = QuadraticModel::new(DVector::zeros(2), DMatrix::identity(2, 2) * 4.0, 1.0);
        let fit = fit_laplace(&m, &DVector::zeros(2), 1.0, 4.0).unwrap();
        let a = sample_gaussian(&fit, 3, 42).unwrap();
        let b = sample_gaussian(&fit, 3, 42).unwrap();
        assert_eq!(a, b);
        assert!(sample_gaussian(&fit, 0, 42).is_err());
    }
}
