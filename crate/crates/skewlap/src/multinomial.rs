//! Dirichlet posterior from multinomial counts under a flat prior.
//!
//! Coordinates are `θ₁..θ_d` with `θ₀ = 1 − Σθⱼ`, and
//! `V(θ) = −Σ_{j=0}^{d} Nⱼ log θⱼ`, so `π = Dir(N + 1)` and the mode is `p = N/n`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{sorted_product, sorted_product3};
use crate::model::{PosteriorModel, RankOneCubes};

#[derive(Debug, Clone)]
pub struct MultinomialPosterior {
    pub counts: Vec<u64>,
    pub n: u64,
    /// `pⱼ = Nⱼ/n` for `j = 0..d`.
    pub freqs: Vec<f64>,
    pub p_min: f64,
    nf: Vec<f64>,
}

/// Closed-form quantities. Vectors indexed `0..=d` cover all cells.
#[derive(Debug, Clone, Serialize)]
pub struct ExactQuantities {
    pub mode: Vec<f64>,
    pub mean: Vec<f64>,
    pub delta_mode: Vec<f64>,
    pub eps3_exact: f64,
    pub c3_exact: f64,
    pub eps_bar3_exact: f64,
    pub chi2_unif: f64,
    /// `(θ̄ − θ̂) − δθ̂/(1 + (d+1)/n)`, zero up to rounding.
    pub mean_minus_mode_identity: Vec<f64>,
    /// `‖δθ̂‖_{H_V}`.
    pub skew_norm: f64,
    /// `‖θ̄ − θ̂ − δθ̂‖_{H_V}`.
    pub remainder_norm: f64,
}

/// Build the posterior; every count must be positive.
pub fn build(counts: &[u64]) -> Result<MultinomialPosterior> {
    if counts.len() < 2 {
        return Err(Error::InvalidArgument("need at least two categories".into()));
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("count N{j} is zero; all counts must be positive")));
    }
    let n: u64 = counts.iter().sum();
    let nf: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let freqs: Vec<f64> = nf.iter().map(|c| c / n as f64).collect();
    let p_min = freqs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(MultinomialPosterior { counts: counts.to_vec(), n, freqs, p_min, nf })
}

/// Parse counts from `"30,40,20,10"` or a one-column CSV body.
pub fn parse_counts(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for tok in text.split(|c: char| c == ',' || c.is_whitespace()) {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        match tok.parse::<u64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() => continue,
            Err(_) => return Err(Error::InvalidArgument(format!("bad count '{tok}'"))),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no counts given".into()));
    }
    Ok(out)
}

impl MultinomialPosterior {
    pub fn d(&self) -> usize {
        self.counts.len() - 1
    }

    /// `p^d = (p₁..p_d)`.
    pub fn mode_coords(&self) -> DVector<f64> {
        DVector::from_iterator(self.d(), self.freqs[1..].iter().cloned())
    }

    fn theta(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut t = Vec::with_capacity(x.len() + 1);
        t.push(1.0 - x.sum());
        t.extend(x.iter());
        t
    }

    fn expand(u: &DVector<f64>) -> Vec<f64> {
        let mut t = Vec::with_capacity(u.len() + 1);
        t.push(-u.sum());
        t.extend(u.iter());
        t
    }

    // (−1)^k (k−1)! Σⱼ Nⱼ Πₘ u'ₘⱼ / θⱼᵏ
    fn kth(&self, x: &DVector<f64>, dirs: &[&DVector<f64>]) -> f64 {
        let k = dirs.len();
        let th = self.theta(x);
        let ex: Vec<Vec<f64>> = dirs.iter().map(|u| Self::expand(u)).collect();
        let mut s = 0.0;
        let mut buf = vec![0.0; k];
        for j in 0..th.len() {
            for (b, e) in buf.iter_mut().zip(&ex) {
                *b = e[j];
            }
            s += self.nf[j] * sorted_product(&mut buf) / th[j].powi(k as i32);
        }
        let fact: f64 = (1..k).map(|i| i as f64).product();
        let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * fact * s
    }

    /// `c₃ = 2(1 − 2p_min)/√(p_min(1 − p_min))`.
    pub fn c3_exact(&self) -> f64 {
        let p = self.p_min;
        2.0 * (1.0 - 2.0 * p) / (p * (1.0 - p)).sqrt()
    }

    /// `χ²(Unif‖p) = (Σⱼ 1/pⱼ)/(d+1)² − 1`.
    pub fn chi2_unif(&self) -> f64 {
        let k = (self.d() + 1) as f64;
        self.freqs.iter().map(|p| 1.0 / p).sum::<f64>() / (k * k) - 1.0
    }

    /// `TV(Unif_{d+1}, p) = ½Σ|1/(d+1) − pⱼ|`.
    pub fn tv_unif(&self) -> f64 {
        let k = (self.d() + 1) as f64;
        0.5 * self.freqs.iter().map(|p| (1.0 / k - p).abs()).sum::<f64>()
    }

    pub fn exact_quantities(&self) -> ExactQuantities {
        let d = self.d();
        let df = d as f64;
        let n = self.n as f64;
        let k = df + 1.0;
        let mode = self.freqs.clone();
        let mean: Vec<f64> = self.nf.iter().map(|c| (c + 1.0) / (n + k)).collect();
        let delta_mode: Vec<f64> = self.freqs.iter().map(|p| (1.0 - k * p) / n).collect();
        let shrink = 1.0 + k / n;
        let identity: Vec<f64> = (0..=d).map(|j| (mean[j] - mode[j]) - delta_mode[j] / shrink).collect();
        let chi2 = self.chi2_unif();
        let p = self.p_min;
        let eps3 = 2.0 * (1.0 - 2.0 * p) / (1.0 - p).sqrt() * df / (n * p).sqrt();
        let ebar2 = 5.0 / 3.0 * chi2 * k * k / n + 2.0 * (df * df - df) / (3.0 * n);
        let skew_norm = chi2.max(0.0).sqrt() * k / n.sqrt();
        let remainder_norm = chi2.max(0.0).sqrt() * k * k / ((n + k) * n.sqrt());
        ExactQuantities {
            mode,
            mean,
            delta_mode,
            eps3_exact: eps3,
            c3_exact: self.c3_exact(),
            eps_bar3_exact: ebar2.max(0.0).sqrt(),
            chi2_unif: chi2,
            mean_minus_mode_identity: identity,
            skew_norm,
            remainder_norm,
        }
    }

    /// `(1/9)TV(Unif, p)·d/√n` when `p_min ≥ 6/√(n+d)` and `TV(Unif, p) ≥ 6/(d+1)`.
    pub fn tv_lower_bound(&self) -> Option<f64> {
        let d = self.d() as f64;
        let n = self.n as f64;
        let tv = self.tv_unif();
        if self.p_min >= 6.0 / (n + d).sqrt() && tv >= 6.0 / (d + 1.0) {
            Some(tv * d / (9.0 * n.sqrt()))
        } else {
            None
        }
    }

    /// `d²/(n·p_min)`, the regime indicator printed alongside the bounds.
    pub fn regime_ratio(&self) -> f64 {
        let d = self.d() as f64;
        d * d / (self.n as f64 * self.p_min)
    }
}

impl PosteriorModel for MultinomialPosterior {
    fn dim(&self) -> usize {
        self.d()
    }

    fn n_scale(&self) -> f64 {
        self.n as f64
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let th = self.theta(x);
        -th.iter().zip(&self.nf).map(|(t, c)| c * t.ln()).sum::<f64>()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let th = self.theta(x);
        let g0 = self.nf[0] / th[0];
        DVector::from_fn(self.d(), |i, _| -self.nf[i + 1] / th[i + 1] + g0)
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let th = self.theta(x);
        let h0 = self.nf[0] / (th[0] * th[0]);
        let d = self.d();
        let mut h = DMatrix::from_element(d, d, h0);
        for i in 0..d {
            h[(i, i)] += self.nf[i + 1] / (th[i + 1] * th[i + 1]);
        }
        h
    }

    fn third_dir(&self, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let th = self.theta(x);
        let (eu, ev, ew) = (Self::expand(u), Self::expand(v), Self::expand(w));
        let mut s = 0.0;
        for j in 0..th.len() {
            s += self.nf[j] * sorted_product3(eu[j], ev[j], ew[j]) / th[j].powi(3);
        }
        -2.0 * s
    }

    fn third_mat(&self, x: &DVector<f64>, a: &DMatrix<f64>) -> DVector<f64> {
        let th = self.theta(x);
        let total = a.sum();
        let c0 = self.nf[0] * total / th[0].powi(3);
        DVector::from_fn(self.d(), |i, _| -2.0 * (self.nf[i + 1] * a[(i, i)] / th[i + 1].powi(3) - c0))
    }

    fn fourth_dir(&self, x: &DVector<f64>, dirs: [&DVector<f64>; 4]) -> Option<f64> {
        Some(self.kth(x, &dirs))
    }

    fn fifth_dir(&self, x: &DVector<f64>, dirs: [&DVector<f64>; 5]) -> Option<f64> {
        Some(self.kth(x, &dirs))
    }

    fn domain_guard(&self, x: &DVector<f64>) -> bool {
        x.iter().all(|v| v.is_finite() && *v > 0.0) && 1.0 - x.sum() > 0.0
    }

    fn rank_one_third(&self, x: &DVector<f64>) -> Option<RankOneCubes> {
        let d = self.d();
        let th = self.theta(x);
        let weights = DVector::from_fn(d + 1, |j, _| -2.0 * self.nf[j] / th[j].powi(3));
        let mut vectors = DMatrix::zeros(d + 1, d);
        for i in 0..d {
            vectors[(0, i)] = -1.0;
            vectors[(i + 1, i)] = 1.0;
        }
        Some(RankOneCubes { weights, vectors })
    }

    fn directional(&self, x: &DVector<f64>, k: usize, u: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        if !(3..=5).contains(&k) {
            return None;
        }
        let th = self.theta(x);
        let eu = Self::expand(u);
        let fact: f64 = (1..k).map(|i| i as f64).product();
        let c = if k.is_multiple_of(2) { fact } else { -fact };
        let terms: Vec<f64> = (0..th.len()).map(|j| self.nf[j] * eu[j].powi(k as i32 - 1) / th[j].powi(k as i32)).collect();
        let val = c * terms.iter().zip(&eu).map(|(t, e)| t * e).sum::<f64>();
        let grad = DVector::from_fn(self.d(), |i, _| c * (terms[i + 1] - terms[0]));
        Some((val, grad))
    }
}
