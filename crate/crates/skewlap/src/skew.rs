//! The skew correction `γ̂_S = (1 + S)γ̂` and integrals against it.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::diagnostics::eps_bar3;
use crate::error::{Error, Result};
use crate::laplace::LaplaceFit;
use crate::model::PosteriorModel;
use crate::rng::mc_mean;
use crate::tensor::WhitenedThird;

/// Fraction of non-finite observable values above which MC integration aborts.
pub const NONFINITE_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SkewCorrection {
    pub fit: LaplaceFit,
    /// `T = ∇³W(0)`.
    pub tensor: WhitenedThird,
    /// `δx̂ = −½H_V⁻¹⟨∇³V(x̂), H_V⁻¹⟩`.
    pub delta_mode: DVector<f64>,
    pub eps_bar3: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub nonfinite: usize,
    /// The signed measure gave a negative value (e.g. a set probability).
    pub negative: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub count: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl McOptions {
    pub fn new(count: usize, seed: u64) -> Self {
        Self { count, seed, antithetic: false }
    }
}

/// `δx̂ = −½ H_V⁻¹ · third_mat(x̂, H_V⁻¹)`.
pub fn delta_mode<M: PosteriorModel + ?Sized>(model: &M, fit: &LaplaceFit) -> DVector<f64> {
    let cov = fit.covariance();
    let tm = model.third_mat(&fit.mode, &cov);
    (&cov * tm) * -0.5
}

/// Mean of `γ̂_S`: `x̂ + δx̂`.
pub fn corrected_mean<M: PosteriorModel + ?Sized>(model: &M, fit: &LaplaceFit) -> DVector<f64> {
    &fit.mode + delta_mode(model, fit)
}

/// Covariance of `γ̂_S` about its own mean: `H_V⁻¹ − δx̂δx̂ᵀ`.
pub fn corrected_covariance<M: PosteriorModel + ?Sized>(model: &M, fit: &LaplaceFit) -> DMatrix<f64> {
    let dm = delta_mode(model, fit);
    fit.covariance() - &dm * dm.transpose()
}

impl SkewCorrection {
    pub fn new<M: PosteriorModel + ?Sized>(model: &M, fit: &LaplaceFit, tensor: WhitenedThird) -> Self {
        let delta_mode = delta_mode(model, fit);
        let eps_bar3 = eps_bar3(&tensor);
        Self { fit: fit.clone(), tensor, delta_mode, eps_bar3 }
    }

    /// `S` at whitened coordinate `z`: `−⟨T, z^{⊗3}⟩/6`.
    pub fn eval_skew_whitened(&self, z: &[f64]) -> f64 {
        -self.tensor.cube(z) / 6.0
    }

    /// `S(x̂ + h)`; exactly odd in `h`.
    pub fn eval_skew_offset(&self, h: &DVector<f64>) -> f64 {
        let z = self.fit.whiten_offset(h);
        self.eval_skew_whitened(z.as_slice())
    }

    /// `S(x)` in model coordinates.
    pub fn eval_skew(&self, x: &DVector<f64>) -> f64 {
        self.eval_skew_offset(&(x - &self.fit.mode))
    }

    pub fn corrected_mean(&self) -> DVector<f64> {
        &self.fit.mode + &self.delta_mode
    }

    /// `M_{γ̂_S}(u)/M_{γ̂}(u) = 1 − ⟨T,u^{⊗3}⟩/6 − ⟨T,I⊗u⟩/2`, `u` whitened.
    pub fn corrected_mgf_ratio(&self, u: &DVector<f64>) -> f64 {
        let tr = self.tensor.trace_vec();
        1.0 - self.tensor.cube(u.as_slice()) / 6.0 - 0.5 * tr.dot(u)
    }

    /// `∫ g dγ̂_S = ∫ g(1+S) dγ̂` by Monte Carlo over draws of `γ̂`.
    pub fn corrected_integral_mc<G>(&self, g: G, opts: McOptions) -> Result<McEstimate>
    where
        G: Fn(&DVector<f64>) -> f64 + Sync,
    {
        let v = self.corrected_integral_mc_vec(1, |x, out| out[0] = g(x), opts)?;
        Ok(v[0])
    }

    /// Vector-valued version of [`Self::corrected_integral_mc`].
    pub fn corrected_integral_mc_vec<G>(&self, m: usize, g: G, opts: McOptions) -> Result<Vec<McEstimate>>
    where
        G: Fn(&DVector<f64>, &mut [f64]) + Sync,
    {
        if opts.count < 2 {
            return Err(Error::InvalidArgument("MC count must be at least 2".into()));
        }
        let d = self.fit.dim();
        let s = mc_mean(d, m, opts.count, opts.seed, opts.antithetic, |z, out| {
            let zv = DVector::from_column_slice(z);
            let x = self.fit.unwhiten(&zv);
            g(&x, out);
            let w = 1.0 + self.eval_skew_whitened(z);
            for o in out.iter_mut() {
                *o *= w;
            }
        });
        if s.nonfinite as f64 > NONFINITE_LIMIT * opts.count as f64 {
            return Err(Error::NonFinite { count: s.nonfinite, total: opts.count });
        }
        Ok(s
            .mean
            .iter()
            .zip(&s.std_error)
            .map(|(&estimate, &std_error)| McEstimate { estimate, std_error, nonfinite: s.nonfinite, negative: estimate < 0.0 })
            .collect())
    }

    /// Plain `∫ g dγ̂` with the same draws, for side-by-side comparisons.
    pub fn laplace_integral_mc<G>(&self, g: G, opts: McOptions) -> Result<McEstimate>
    where
        G: Fn(&DVector<f64>) -> f64 + Sync,
    {
        if opts.count < 2 {
            return Err(Error::InvalidArgument("MC count must be at least 2".into()));
        }
        let d = self.fit.dim();
        let s = mc_mean(d, 1, opts.count, opts.seed, opts.antithetic, |z, out| {
            out[0] = g(&self.fit.unwhiten(&DVector::from_column_slice(z)));
        });
        if s.nonfinite as f64 > NONFINITE_LIMIT * opts.count as f64 {
            return Err(Error::NonFinite { count: s.nonfinite, total: opts.count });
        }
        Ok(McEstimate { estimate: s.mean[0], std_error: s.std_error[0], nonfinite: s.nonfinite, negative: s.mean[0] < 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::fit_laplace;
    use crate::model::QuadraticModel;
    use crate::tensor::DenseTensor3;

    fn one_d(t: f64) -> SkewCorrection {
        let m = QuadraticModel::new(DVector::zeros(1), DMatrix::identity(1, 1), 1.0);
        let fit = fit_laplace(&m, &DVector::zeros(1), 1.0, 4.0).unwrap();
        let tensor = WhitenedThird::Dense(DenseTensor3::from_sorted_entries(1, |_, _, _| t));
        SkewCorrection::new(&m, &fit, tensor)
    }

    #[test]
    fn skew_hand_value() {
        let sc = one_d(0.3);
        assert!((sc.eval_skew(&DVector::from_vec(vec![2.0])) + 0.4).abs() < 1e-15);
        assert_eq!(sc.eval_skew(&DVector::zeros(1)), 0.0);
    }

    #[test]
    fn mgf_ratio_hand_value() {
        let sc = one_d(0.2);
        let r = sc.corrected_mgf_ratio(&DVector::from_vec(vec![1.0]));
        assert!((r - 0.8666666666666667).abs() < 1e-15);
        assert_eq!(sc.corrected_mgf_ratio(&DVector::zeros(1)), 1.0);
    }

    #[test]
    fn too_few_draws() {
        let sc = one_d(0.2);
        assert!(sc.corrected_integral_mc(|_| 1.0, McOptions::new(1, 0)).is_err());
    }

    #[test]
    fn nonfinite_observable_aborts() {
        let sc = one_d(0.2);
        let r = sc.corrected_integral_mc(|x| if x[0] > 0.0 { f64::NAN } else { 1.0 }, McOptions::new(1000, 0));
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
