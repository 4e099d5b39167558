//! Logistic-regression posterior with a Gaussian or flat prior.
//!
//! `V(b) = −Σ YᵢXᵢᵀb + Σ ψ(Xᵢᵀb) + ½bᵀΣ₀⁻¹b` with `ψ(t) = log(1 + eᵗ)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::diagnostics::eps_bar3;
use crate::error::{Error, Result};
use crate::laplace::LaplaceFit;
use crate::linalg::{cholesky, sorted_product, sorted_product3};
use crate::model::{PosteriorModel, RankOneCubes};
use crate::rng::{fill_normal, stream_rng};
use crate::tensor::WhitenedThird;

/// `σ(t) = 1/(1 + e^{−t})`, evaluated without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ψ(t) = max(t, 0) + log1p(e^{−|t|})`.
pub fn psi(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `σ(t)(1 − σ(t))` computed as `σ(t)σ(−t)`.
fn sig_var(t: f64) -> f64 {
    sigmoid(t) * sigmoid(-t)
}

/// `ψ^{(k)}(t)` for `k ∈ 0..=5`.
pub fn psi_deriv(k: usize, t: f64) -> f64 {
    match k {
        0 => psi(t),
        1 => sigmoid(t),
        2 => sig_var(t),
        3 => {
            let s = sig_var(t);
            s * (sigmoid(-t) - sigmoid(t))
        }
        4 => {
            let s = sig_var(t);
            s * (1.0 - 6.0 * s)
        }
        5 => {
            let s = sig_var(t);
            s * (sigmoid(-t) - sigmoid(t)) * (1.0 - 12.0 * s)
        }
        _ => panic!("psi_deriv supports orders 0 through 5"),
    }
}

#[derive(Debug, Clone)]
pub struct LogRegDataset {
    /// Rows are the `Xᵢ`.
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub design_cov: DMatrix<f64>,
    pub truth: Option<DVector<f64>>,
}

impl LogRegDataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn new(features: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::InvalidArgument("dataset has no rows".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::InvalidArgument(format!("{} feature rows but {} labels", features.nrows(), labels.len())));
        }
        if labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        let d = features.ncols();
        Ok(Self { features, labels, design_cov: DMatrix::identity(d, d), truth: None })
    }

    /// Write `y,x1..xd` with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.d()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{}", self.labels[i] as u8)];
            rec.extend((0..self.d()).map(|j| format!("{:e}", self.features[(i, j)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a CSV with a `y` column and `x1..xd` columns in any order.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let y_col = headers
            .iter()
            .position(|h| h.trim() == "y")
            .ok_or_else(|| Error::InvalidArgument("CSV has no 'y' column".into()))?;
        let mut x_cols: Vec<(usize, usize)> = headers
            .iter()
            .enumerate()
            .filter_map(|(c, h)| h.trim().strip_prefix('x').and_then(|k| k.parse::<usize>().ok()).map(|k| (k, c)))
            .collect();
        x_cols.sort();
        if x_cols.is_empty() || x_cols.iter().enumerate().any(|(i, (k, _))| *k != i + 1) {
            return Err(Error::InvalidArgument("CSV feature columns must be x1..xd".into()));
        }
        let d = x_cols.len();
        let mut labels = Vec::new();
        let mut flat = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad value on data row {}", line + 1)))
            };
            labels.push(parse(y_col)?);
            for (_, c) in &x_cols {
                flat.push(parse(*c)?);
            }
        }
        let features = DMatrix::from_row_slice(labels.len(), d, &flat);
        Self::new(features, labels)
    }
}

/// Draw `Xᵢ ~ N(0, M)` and `Yᵢ ~ Bernoulli(σ(βᵀXᵢ))`, deterministic per seed.
pub fn generate_data(n: usize, beta: &DVector<f64>, m: &DMatrix<f64>, seed: u64) -> Result<LogRegDataset> {
    let d = beta.len();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::InvalidArgument(format!("design covariance must be {d}×{d}")));
    }
    let l = cholesky(m)?;
    let mut rng = stream_rng(seed, 0);
    let mut z = vec![0.0; d];
    let mut features = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        fill_normal(&mut rng, &mut z);
        let x = &l * DVector::from_column_slice(&z);
        features.row_mut(i).copy_from(&x.transpose());
        let p = sigmoid(beta.dot(&x));
        labels.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
    }
    Ok(LogRegDataset { features, labels, design_cov: m.clone(), truth: Some(beta.clone()) })
}

#[derive(Debug, Clone)]
pub struct LogRegPosterior {
    pub dataset: LogRegDataset,
    pub prior_precision: DMatrix<f64>,
    xty: DVector<f64>,
}

/// Posterior with prior precision `Σ₀⁻¹` (zero for a flat prior).
pub fn build_posterior(dataset: LogRegDataset, prior_precision: DMatrix<f64>) -> Result<LogRegPosterior> {
    let d = dataset.d();
    if prior_precision.nrows() != d || prior_precision.ncols() != d {
        return Err(Error::InvalidArgument(format!("prior precision must be {d}×{d}")));
    }
    let y = DVector::from_column_slice(&dataset.labels);
    let xty = dataset.features.transpose() * y;
    Ok(LogRegPosterior { dataset, prior_precision, xty })
}

/// Convenience for `Σ₀⁻¹ = κI`.
pub fn isotropic_prior(d: usize, kappa: f64) -> DMatrix<f64> {
    DMatrix::identity(d, d) * kappa
}

impl LogRegPosterior {
    fn linear(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.dataset.features * b
    }

    fn kth_dir(&self, b: &DVector<f64>, dirs: &[&DVector<f64>]) -> f64 {
        let x = &self.dataset.features;
        let t = self.linear(b);
        let proj: Vec<DVector<f64>> = dirs.iter().map(|u| x * *u).collect();
        let mut buf = vec![0.0; dirs.len()];
        let mut s = 0.0;
        for i in 0..x.nrows() {
            for (b, p) in buf.iter_mut().zip(&proj) {
                *b = p[i];
            }
            s += psi_deriv(dirs.len(), t[i]) * sorted_product(&mut buf);
        }
        s
    }
}

impl PosteriorModel for LogRegPosterior {
    fn dim(&self) -> usize {
        self.dataset.d()
    }

    fn n_scale(&self) -> f64 {
        self.dataset.n() as f64
    }

    fn value(&self, b: &DVector<f64>) -> f64 {
        let t = self.linear(b);
        let data: f64 = t.iter().map(|ti| psi(*ti)).sum::<f64>() - self.xty.dot(b);
        data + 0.5 * b.dot(&(&self.prior_precision * b))
    }

    fn gradient(&self, b: &DVector<f64>) -> DVector<f64> {
        let t = self.linear(b);
        let r = DVector::from_fn(t.len(), |i, _| sigmoid(t[i]) - self.dataset.labels[i]);
        self.dataset.features.transpose() * r + &self.prior_precision * b
    }

    fn hessian(&self, b: &DVector<f64>) -> DMatrix<f64> {
        let x = &self.dataset.features;
        let t = self.linear(b);
        let mut wx = x.clone();
        for i in 0..x.nrows() {
            let w = psi_deriv(2, t[i]);
            wx.row_mut(i).scale_mut(w);
        }
        x.transpose() * wx + &self.prior_precision
    }

    fn third_dir(&self, b: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let x = &self.dataset.features;
        let t = self.linear(b);
        let (pu, pv, pw) = (x * u, x * v, x * w);
        (0..x.nrows()).map(|i| psi_deriv(3, t[i]) * sorted_product3(pu[i], pv[i], pw[i])).sum()
    }

    fn third_mat(&self, b: &DVector<f64>, a: &DMatrix<f64>) -> DVector<f64> {
        let x = &self.dataset.features;
        let t = self.linear(b);
        let xa = x * a;
        let coef = DVector::from_fn(x.nrows(), |i, _| psi_deriv(3, t[i]) * xa.row(i).dot(&x.row(i)));
        x.transpose() * coef
    }

    fn fourth_dir(&self, b: &DVector<f64>, dirs: [&DVector<f64>; 4]) -> Option<f64> {
        Some(self.kth_dir(b, &dirs))
    }

    fn fifth_dir(&self, b: &DVector<f64>, dirs: [&DVector<f64>; 5]) -> Option<f64> {
        Some(self.kth_dir(b, &dirs))
    }

    fn domain_guard(&self, b: &DVector<f64>) -> bool {
        b.iter().all(|v| v.is_finite())
    }

    fn rank_one_third(&self, b: &DVector<f64>) -> Option<RankOneCubes> {
        let t = self.linear(b);
        Some(RankOneCubes { weights: t.map(|ti| psi_deriv(3, ti)), vectors: self.dataset.features.clone() })
    }

    fn directional(&self, b: &DVector<f64>, k: usize, u: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        if !(3..=5).contains(&k) {
            return None;
        }
        let x = &self.dataset.features;
        let t = self.linear(b);
        let p = x * u;
        let coef = DVector::from_fn(x.nrows(), |i, _| psi_deriv(k, t[i]) * p[i].powi(k as i32 - 1));
        let val = coef.dot(&p);
        Some((val, x.transpose() * coef))
    }
}

/// Low-rank skew quantities for the logistic posterior.
#[derive(Debug, Clone, Serialize)]
pub struct FastSkew {
    /// `δb̂ = −½ Σ ψ‴(b̂ᵀXᵢ)(XᵢᵀH_V⁻¹Xᵢ) H_V⁻¹Xᵢ`.
    pub delta_mode: DVector<f64>,
    pub eps_bar3: f64,
    #[serde(skip)]
    pub weights: DVector<f64>,
    #[serde(skip)]
    mode: DVector<f64>,
    #[serde(skip)]
    features: DMatrix<f64>,
}

impl FastSkew {
    /// `S(b) = −(1/6) Σ ψ‴(b̂ᵀXᵢ)(Xᵢᵀ(b − b̂))³`.
    pub fn skew(&self, b: &DVector<f64>) -> f64 {
        let p = &self.features * (b - &self.mode);
        -(0..p.len()).map(|i| self.weights[i] * p[i] * p[i] * p[i]).sum::<f64>() / 6.0
    }
}

fn low_rank_parts(post: &LogRegPosterior, fit: &LaplaceFit) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let x = &post.dataset.features;
    let t = x * &fit.mode;
    let weights = t.map(|ti| psi_deriv(3, ti));
    let b = x * fit.inv_factor_t();
    let coef = DVector::from_fn(x.nrows(), |i, _| weights[i] * b.row(i).norm_squared());
    let delta_mode = (fit.inv_factor_t() * (b.transpose() * coef)) * -0.5;
    (weights, b, delta_mode)
}

/// `δb̂` alone in `O(n·d²)`.
pub fn fast_delta_mode(post: &LogRegPosterior, fit: &LaplaceFit) -> DVector<f64> {
    low_rank_parts(post, fit).2
}

/// `δb̂` in `O(n·d²)` and `ε̄₃` from the pairwise low-rank sum in `O(n²·d)`.
pub fn fast_skew(post: &LogRegPosterior, fit: &LaplaceFit) -> FastSkew {
    let x = &post.dataset.features;
    let (weights, b, delta_mode) = low_rank_parts(post, fit);
    let eps = eps_bar3(&WhitenedThird::LowRank { weights: weights.clone(), vectors: b });
    FastSkew { delta_mode, eps_bar3: eps, weights, mode: fit.mode.clone(), features: x.clone() }
}
