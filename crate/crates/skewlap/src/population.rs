//! The population logistic potential with Gaussian design and truth `x* = e₁`:
//! `v(x) = E[ψ(Zᵀx)] − E[ψ′(Zᵀx*)Zᵀx]`, `Z ~ N(0, I_d)`, and `V = n·v`.
//!
//! For `x = r·e` with `|e| = 1`, write `Z = t·e + Z⊥`. Every derivative reduces
//! to the one-dimensional moments `m_{k,p}(r) = E[ψ^{(k)}(rt)tᵖ]` combined with
//! Gaussian pairings of `Z⊥`, evaluated by Gauss–Hermite quadrature.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::logreg::psi_deriv;
use crate::model::PosteriorModel;
use crate::quadrature::gauss_hermite_prob;

/// Default Gauss–Hermite node count.
pub const GH_NODES: usize = 200;

fn default_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite_prob(GH_NODES))
}

#[derive(Debug, Clone)]
pub struct PopulationLogistic {
    pub d: usize,
    pub n: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// `a_{k,p} = E[ψ^{(k)}(Z₁)Z₁ᵖ]` for the moments used by the leading terms.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PsiMoments {
    pub a20: f64,
    pub a22: f64,
    pub a31: f64,
    pub a33: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LeadingTerms {
    pub ltv_lower: f64,
    pub delta_norm: f64,
}

impl PopulationLogistic {
    pub fn new(d: usize, n: f64) -> Result<Self> {
        Self::with_nodes(d, n, GH_NODES)
    }

    pub fn with_nodes(d: usize, n: f64, nodes: usize) -> Result<Self> {
        if d == 0 || !(n > 0.0) || nodes < 2 {
            return Err(Error::InvalidArgument("need d ≥ 1, n > 0 and at least two nodes".into()));
        }
        let (x, w) = if nodes == GH_NODES { default_rule().clone() } else { gauss_hermite_prob(nodes) };
        Ok(Self { d, n, nodes: x, weights: w })
    }

    /// `m_{k,p}(r) = E[ψ^{(k)}(rt)tᵖ]`.
    pub fn moment(&self, k: usize, p: i32, r: f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(t, w)| w * psi_deriv(k, r * t) * t.powi(p)).sum()
    }

    pub fn a(&self, k: usize, p: i32) -> f64 {
        self.moment(k, p, 1.0)
    }

    pub fn psi_moments(&self) -> PsiMoments {
        PsiMoments { a20: self.a(2, 0), a22: self.a(2, 2), a31: self.a(3, 1), a33: self.a(3, 3) }
    }

    /// The minimizer `x* = e₁`.
    pub fn mode(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.d);
        x[0] = 1.0;
        x
    }

    fn polar(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = x.norm();
        if r > 0.0 {
            (r, x / r)
        } else {
            (0.0, self.mode())
        }
    }

    /// `n·E[ψ^{(k)}(Zᵀx) Πₘ Zᵀuₘ]` for `k ≥ 2`.
    fn kth(&self, x: &DVector<f64>, dirs: &[&DVector<f64>]) -> f64 {
        let k = dirs.len();
        let (r, e) = self.polar(x);
        let mut sorted: Vec<&DVector<f64>> = dirs.to_vec();
        sorted.sort_by(|a, b| {
            a.iter().zip(b.iter()).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        let a: Vec<f64> = sorted.iter().map(|u| u.dot(&e)).collect();
        let mut p = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let v = sorted[i].dot(sorted[j]) - a[i] * a[j];
                p[i][j] = v;
                p[j][i] = v;
            }
        }
        let mut total = 0.0;
        let mut m_cache = vec![None; k + 1];
        for mask in 0u32..(1 << k) {
            let along = mask.count_ones() as usize;
            if (k - along) % 2 == 1 {
                continue;
            }
            let rest: Vec<usize> = (0..k).filter(|i| mask & (1 << i) == 0).collect();
            let pairing = pairing_sum(&rest, &p);
            if pairing == 0.0 {
                continue;
            }
            let prod: f64 = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).product();
            let m = *m_cache[along].get_or_insert_with(|| self.moment(k, along as i32, r));
            total += m * prod * pairing;
        }
        self.n * total
    }
}

/// Sum over perfect matchings of `idx` of `Π P[i][j]`.
fn pairing_sum(idx: &[usize], p: &[Vec<f64>]) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx[0];
    let mut s = 0.0;
    for j in 1..idx.len() {
        let rest: Vec<usize> = idx[1..].iter().enumerate().filter(|(k, _)| *k + 1 != j).map(|(_, v)| *v).collect();
        s += p[first][idx[j]] * pairing_sum(&rest, p);
    }
    s
}

/// Closed-form `L_TV` lower bound and `‖δx̂‖_{H_V}` at `x* = e₁`.
pub fn population_leading_terms(pop: &PopulationLogistic) -> LeadingTerms {
    let m = pop.psi_moments();
    let dm1 = pop.d as f64 - 1.0;
    let scale = (m.a22 * pop.n).sqrt();
    LeadingTerms {
        ltv_lower: (dm1 * m.a31.abs() / (8.0 * m.a20) - m.a33.abs() / (4.0 * m.a22)) / scale,
        delta_norm: (dm1 * m.a31 / m.a20 + m.a33 / m.a22).abs() / (2.0 * scale),
    }
}

impl PosteriorModel for PopulationLogistic {
    fn dim(&self) -> usize {
        self.d
    }

    fn n_scale(&self) -> f64 {
        self.n
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let r = x.norm();
        self.n * (self.moment(0, 0, r) - self.a(1, 1) * x[0])
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (r, e) = self.polar(x);
        let mut g = e * self.moment(1, 1, r);
        g[0] -= self.a(1, 1);
        g * self.n
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (r, e) = self.polar(x);
        let (m22, m20) = (self.moment(2, 2, r), self.moment(2, 0, r));
        let eet = &e * e.transpose();
        (DMatrix::identity(self.d, self.d) * m20 + eet * (m22 - m20)) * self.n
    }

    fn third_dir(&self, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.kth(x, &[u, v, w])
    }

    fn fourth_dir(&self, x: &DVector<f64>, dirs: [&DVector<f64>; 4]) -> Option<f64> {
        Some(self.kth(x, &dirs))
    }

    fn fifth_dir(&self, x: &DVector<f64>, dirs: [&DVector<f64>; 5]) -> Option<f64> {
        Some(self.kth(x, &dirs))
    }
}
