//! Convergence-rate experiments for the logistic and multinomial examples.

pub mod svg;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{eps_bar3, ltv_mc, weighted_opnorm, Estimate, OpNormOptions};
use crate::error::{Error, Result};
use crate::laplace::{find_mode, fit_laplace, whitened_third, LaplaceFit, ModeOptions, Representation};
use crate::logreg::{build_posterior, fast_delta_mode, generate_data, LogRegPosterior};
use crate::model::{check_derivatives, default_step, PosteriorModel, QuadraticModel};
use crate::multinomial::{self, ExactQuantities};
use crate::population::PopulationLogistic;
use crate::quadrature::{half_space_probability, true_mean, true_tv, Against, QuadratureGrid};
use crate::rng::{derive_seed, fill_normal, stream_rng};
use crate::skew::{delta_mode, McOptions, SkewCorrection};

/// Redraw attempts for a replicate whose MAP does not exist.
pub const MAX_REDRAWS: usize = 100;

/// Ordinary least-squares slope of `log y` on `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("slope needs at least two points".into()));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidArgument("slope needs positive coordinates".into()));
    }
    let m = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope needs at least two distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Geometric grid `start·2ᵏ`, `k < count`.
pub fn geometric_grid(start: usize, count: usize) -> Vec<usize> {
    (0..count).map(|k| start << k).collect()
}

/// A logistic posterior with a finite converged MAP and its Laplace fit.
pub struct Replicate {
    pub posterior: LogRegPosterior,
    pub fit: LaplaceFit,
    pub redraws: usize,
}

/// Draw `n` samples with `β = e₁`, `M = I` and a flat prior, redrawing when
/// the MAP diverges or fails to converge.
pub fn logistic_replicate(n: usize, d: usize, seed: u64) -> Result<Replicate> {
    let mut beta = DVector::zeros(d);
    beta[0] = 1.0;
    let m = DMatrix::identity(d, d);
    for attempt in 0..MAX_REDRAWS {
        let data = generate_data(n, &beta, &m, derive_seed(seed, attempt as u64))?;
        let post = build_posterior(data, DMatrix::zeros(d, d))?;
        let res = find_mode(&post, &DVector::zeros(d), ModeOptions::default())?;
        if res.converged && !res.diverged {
            if let Ok(fit) = fit_laplace(&post, &res.mode, 1.0, 4.0) {
                return Ok(Replicate { posterior: post, fit, redraws: attempt });
            }
        }
    }
    Err(Error::Numerical(format!("no dataset with a finite MAP after {MAX_REDRAWS} draws (n = {n}, d = {d})")))
}

fn replicate_seed(seed: u64, n: usize, r: usize) -> u64 {
    derive_seed(derive_seed(seed, n as u64), r as u64)
}

#[derive(Debug, Clone)]
pub struct RateSpec {
    pub n_list: Vec<usize>,
    pub d: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Draws for the `γ̂_S` probability (probability experiment only).
    pub mc_count: usize,
    pub antithetic: bool,
    pub grid: Option<QuadratureGrid>,
}

impl Default for RateSpec {
    fn default() -> Self {
        Self {
            n_list: geometric_grid(20, 6),
            d: 2,
            replicates: 10,
            seed: 0,
            mc_count: 1_000_000,
            antithetic: false,
            grid: None,
        }
    }
}

impl RateSpec {
    fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::InvalidArgument("n list must be non-empty and positive".into()));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("n list must be ascending".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        if self.d == 0 || self.d > crate::quadrature::MAX_DIM {
            return Err(Error::Unsupported(format!("rate experiments need 1 ≤ d ≤ 3 for quadrature, got {}", self.d)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub err_uncorrected: f64,
    pub err_corrected: f64,
    pub uncorrected_q25: f64,
    pub uncorrected_q75: f64,
    pub corrected_q25: f64,
    pub corrected_q75: f64,
    /// Mean MC standard error of the corrected estimate (0 when exact).
    pub mc_std_error: f64,
    pub replicates: usize,
    pub redraws: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateTable {
    pub kind: String,
    pub rows: Vec<RateRow>,
    pub slope_uncorrected: f64,
    pub slope_corrected: f64,
}

struct ReplicateErrors {
    unc: f64,
    cor: f64,
    se: f64,
    redraws: usize,
}

fn rate_table(kind: &str, spec: &RateSpec, per: Vec<Result<ReplicateErrors>>) -> Result<RateTable> {
    let mut rows = Vec::new();
    let mut it = per.into_iter();
    for &n in &spec.n_list {
        let reps: Vec<ReplicateErrors> = (0..spec.replicates).map(|_| it.next().unwrap()).collect::<Result<_>>()?;
        let unc: Vec<f64> = reps.iter().map(|r| r.unc).collect();
        let cor: Vec<f64> = reps.iter().map(|r| r.cor).collect();
        rows.push(RateRow {
            n,
            err_uncorrected: mean(&unc),
            err_corrected: mean(&cor),
            uncorrected_q25: quantile(&unc, 0.25),
            uncorrected_q75: quantile(&unc, 0.75),
            corrected_q25: quantile(&cor, 0.25),
            corrected_q75: quantile(&cor, 0.75),
            mc_std_error: mean(&reps.iter().map(|r| r.se).collect::<Vec<_>>()),
            replicates: reps.len(),
            redraws: reps.iter().map(|r| r.redraws).sum(),
        });
    }
    table_from_rows(kind, rows)
}

/// Re-fit both slopes from rows.
pub fn table_from_rows(kind: &str, rows: Vec<RateRow>) -> Result<RateTable> {
    let pu: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.err_uncorrected)).collect();
    let pc: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.err_corrected)).collect();
    Ok(RateTable { kind: kind.to_string(), slope_uncorrected: loglog_slope(&pu)?, slope_corrected: loglog_slope(&pc)?, rows })
}

fn jobs(spec: &RateSpec) -> Vec<(usize, usize)> {
    spec.n_list.iter().flat_map(|&n| (0..spec.replicates).map(move |r| (n, r))).collect()
}

/// Mean error of `x̂` and `x̂ + δx̂` against the quadrature mean, in `‖·‖_{H_V}`.
pub fn run_mean_rate(spec: &RateSpec) -> Result<RateTable> {
    spec.validate()?;
    let grid = spec.grid.unwrap_or_else(|| QuadratureGrid::default_for(spec.d));
    let per: Vec<Result<ReplicateErrors>> = jobs(spec)
        .into_par_iter()
        .map(|(n, r)| {
            let rep = logistic_replicate(n, spec.d, replicate_seed(spec.seed, n, r))?;
            let truth = true_mean(&rep.posterior, &rep.fit, &grid)?;
            let dm = fast_delta_mode(&rep.posterior, &rep.fit);
            let off = &truth - &rep.fit.mode;
            Ok(ReplicateErrors {
                unc: rep.fit.hv_norm(&off),
                cor: rep.fit.hv_norm(&(off - dm)),
                se: 0.0,
                redraws: rep.redraws,
            })
        })
        .collect();
    rate_table("mean-rate", spec, per)
}

/// Errors of `γ̂` and `γ̂_S` for `π(b₁ ≥ b̂₁)`; the `π` value comes from
/// quadrature, the `γ̂_S` value from Monte Carlo.
pub fn run_prob_rate(spec: &RateSpec) -> Result<RateTable> {
    spec.validate()?;
    let grid = spec.grid.unwrap_or_else(|| QuadratureGrid::default_for(spec.d));
    let mut e1 = DVector::zeros(spec.d);
    e1[0] = 1.0;
    let per: Vec<Result<ReplicateErrors>> = jobs(spec)
        .into_par_iter()
        .map(|(n, r)| {
            let seed = replicate_seed(spec.seed, n, r);
            let rep = logistic_replicate(n, spec.d, seed)?;
            let p_true = half_space_probability(&rep.posterior, &rep.fit, &e1, &grid)?;
            let tensor = whitened_third(&rep.posterior, &rep.fit, Representation::Dense)?;
            let sc = SkewCorrection::new(&rep.posterior, &rep.fit, tensor);
            let b1 = rep.fit.mode[0];
            let opts = McOptions { count: spec.mc_count, seed: derive_seed(seed, u64::MAX), antithetic: spec.antithetic };
            let est = sc.corrected_integral_mc(|x| if x[0] >= b1 { 1.0 } else { 0.0 }, opts)?;
            Ok(ReplicateErrors {
                unc: (p_true - 0.5).abs(),
                cor: (p_true - est.estimate).abs(),
                se: est.std_error,
                redraws: rep.redraws,
            })
        })
        .collect();
    rate_table("prob-rate", spec, per)
}

#[derive(Debug, Clone)]
pub struct DimScanSpec {
    pub d_list: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub mc_count: usize,
}

impl DimScanSpec {
    /// Desk-scale defaults: `d ≤ 40`, 20 posteriors, `2·10⁴` draws for `L_TV`.
    pub fn desk() -> Self {
        Self { d_list: vec![10, 14, 20, 28, 40], replicates: 20, seed: 0, mc_count: 20_000 }
    }

    /// The figure's range up to `d = 80`.
    pub fn full_scale() -> Self {
        Self { d_list: vec![10, 20, 30, 40, 50, 60, 70, 80], replicates: 20, seed: 0, mc_count: 100_000 }
    }
}

/// The two sample-size regimes of the dimension scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "n=2d^2")]
    TwoDSquared,
    #[serde(rename = "n=d^2.5")]
    DPow25,
}

impl Regime {
    pub fn sample_size(&self, d: usize) -> usize {
        match self {
            Regime::TwoDSquared => 2 * d * d,
            Regime::DPow25 => (d as f64).powf(2.5).round() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimRow {
    pub d: usize,
    pub regime: Regime,
    pub n: usize,
    pub ltv: f64,
    pub ltv_q10: f64,
    pub ltv_q90: f64,
    pub delta_norm: f64,
    pub delta_q10: f64,
    pub delta_q90: f64,
    pub replicates: usize,
    pub redraws: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimScanTable {
    pub rows: Vec<DimRow>,
    /// `L_TV` slope in `d` for `n = d^{2.5}`.
    pub slope_ltv: f64,
    /// `‖δb̂‖_{H_V}` slope in `d` for `n = d^{2.5}`.
    pub slope_delta: f64,
    /// `max/min` of `L_TV` across `d` for `n = 2d²`.
    pub flat_ratio_ltv: f64,
    pub flat_ratio_delta: f64,
}

/// Re-derive slopes and flatness ratios from rows.
pub fn dim_table_from_rows(rows: Vec<DimRow>) -> Result<DimScanTable> {
    let pick = |reg: Regime, f: fn(&DimRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().filter(|r| r.regime == reg).map(|r| (r.d as f64, f(r))).collect()
    };
    let ratio = |v: Vec<(f64, f64)>| {
        let ys: Vec<f64> = v.iter().map(|p| p.1).collect();
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / ys.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    Ok(DimScanTable {
        slope_ltv: loglog_slope(&pick(Regime::DPow25, |r| r.ltv))?,
        slope_delta: loglog_slope(&pick(Regime::DPow25, |r| r.delta_norm))?,
        flat_ratio_ltv: ratio(pick(Regime::TwoDSquared, |r| r.ltv)),
        flat_ratio_delta: ratio(pick(Regime::TwoDSquared, |r| r.delta_norm)),
        rows,
    })
}

/// `L_TV` and `‖δb̂‖_{H_V}` across dimensions for `n = 2d²` and `n = d^{2.5}`.
pub fn run_dim_scan(spec: &DimScanSpec) -> Result<DimScanTable> {
    if spec.d_list.len() < 2 || spec.d_list.windows(2).any(|w| w[1] <= w[0]) || spec.d_list[0] == 0 {
        return Err(Error::InvalidArgument("d list needs at least two ascending positive values".into()));
    }
    if spec.replicates == 0 || spec.mc_count < 2 {
        return Err(Error::InvalidArgument("need replicates ≥ 1 and mc count ≥ 2".into()));
    }
    let regimes = [Regime::TwoDSquared, Regime::DPow25];
    let jobs: Vec<(usize, Regime, usize)> = spec
        .d_list
        .iter()
        .flat_map(|&d| regimes.iter().flat_map(move |&g| (0..spec.replicates).map(move |r| (d, g, r))))
        .collect();
    let per: Vec<Result<(f64, f64, usize)>> = jobs
        .into_par_iter()
        .map(|(d, g, r)| {
            let n = g.sample_size(d);
            let seed = derive_seed(derive_seed(spec.seed, d as u64), (n as u64) << 8 | r as u64);
            let rep = logistic_replicate(n, d, seed)?;
            let tensor = whitened_third(&rep.posterior, &rep.fit, Representation::Dense)?;
            let ltv = ltv_mc(&tensor, spec.mc_count, derive_seed(seed, u64::MAX))?;
            let dm = fast_delta_mode(&rep.posterior, &rep.fit);
            Ok((ltv.value, rep.fit.hv_norm(&dm), rep.redraws))
        })
        .collect();
    let mut it = per.into_iter();
    let mut rows = Vec::new();
    for &d in &spec.d_list {
        for g in regimes {
            let reps: Vec<(f64, f64, usize)> = (0..spec.replicates).map(|_| it.next().unwrap()).collect::<Result<_>>()?;
            let l: Vec<f64> = reps.iter().map(|r| r.0).collect();
            let m: Vec<f64> = reps.iter().map(|r| r.1).collect();
            rows.push(DimRow {
                d,
                regime: g,
                n: g.sample_size(d),
                ltv: mean(&l),
                ltv_q10: quantile(&l, 0.1),
                ltv_q90: quantile(&l, 0.9),
                delta_norm: mean(&m),
                delta_q10: quantile(&m, 0.1),
                delta_q90: quantile(&m, 0.9),
                replicates: reps.len(),
                redraws: reps.iter().map(|r| r.2).sum(),
            });
        }
    }
    dim_table_from_rows(rows)
}

#[derive(Debug, Clone)]
pub struct MultinomialSpec {
    pub counts: Vec<u64>,
    pub mc_count: usize,
    pub seed: u64,
    pub restarts: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultinomialReport {
    pub counts: Vec<u64>,
    pub n: u64,
    pub d: usize,
    pub exact: ExactQuantities,
    pub generic_eps_bar3: f64,
    pub generic_eps3: Option<f64>,
    pub opnorm_converged: Option<bool>,
    /// Generic `δθ̂` in coordinates `θ₁..θ_d`.
    pub generic_delta_mode: Vec<f64>,
    pub delta_mode_max_abs_err: f64,
    /// `max |θ̄ − θ̂ − δθ̂/(1 + (d+1)/n)|` using the generic `θ̂` and `δθ̂`.
    pub identity_residual: f64,
    pub tv_lower_bound: Option<f64>,
    pub regime_ratio: f64,
    pub quadrature_tv: Option<f64>,
    pub quadrature_tv_corrected: Option<f64>,
    pub ltv: Estimate,
    /// `TV − L_TV` when the quadrature TV is available.
    pub rtv: Option<f64>,
}

/// Operator-norm estimation runs only up to this dimension in the report.
pub const OPNORM_MAX_DIM: usize = 5;

/// Exact closed forms next to the generic pipeline for a Dirichlet posterior.
pub fn run_multinomial_exact(spec: &MultinomialSpec) -> Result<MultinomialReport> {
    let mp = multinomial::build(&spec.counts)?;
    let d = mp.d();
    let n = mp.n as f64;
    let exact = mp.exact_quantities();
    let start = DVector::from_element(d, 1.0 / (d as f64 + 1.0));
    let res = find_mode(&mp, &start, ModeOptions::default())?;
    if !res.converged {
        return Err(Error::Numerical("mode search did not converge".into()));
    }
    let fit = fit_laplace(&mp, &res.mode, 1.0, 4.0)?;
    let rep = if d <= crate::laplace::DENSE_CAP { Representation::Dense } else { Representation::LowRank };
    let tensor = whitened_third(&mp, &fit, rep)?;
    let generic_eps_bar3 = eps_bar3(&tensor);
    let (generic_eps3, opnorm_converged) = if d <= OPNORM_MAX_DIM {
        let opts = OpNormOptions { restarts: spec.restarts, seed: spec.seed, ..Default::default() };
        let c3 = weighted_opnorm(&mp, &fit, 3, 0.0, opts)?;
        (Some(c3.estimate * d as f64 / n.sqrt()), Some(c3.converged))
    } else {
        (None, None)
    };
    let dm = delta_mode(&mp, &fit);
    let delta_mode_max_abs_err = (0..d).map(|i| (dm[i] - exact.delta_mode[i + 1]).abs()).fold(0.0, f64::max);
    let shrink = 1.0 + (d as f64 + 1.0) / n;
    let identity_residual =
        (0..d).map(|i| (exact.mean[i + 1] - res.mode[i] - dm[i] / shrink).abs()).fold(0.0, f64::max);
    let ltv = ltv_mc(&tensor, spec.mc_count, spec.seed)?;
    let (quadrature_tv, quadrature_tv_corrected) = if d <= 2 {
        let grid = QuadratureGrid::default_for(d);
        (Some(true_tv(&mp, &fit, Against::Laplace, &grid)?), Some(true_tv(&mp, &fit, Against::SkewCorrected, &grid)?))
    } else {
        (None, None)
    };
    Ok(MultinomialReport {
        counts: spec.counts.clone(),
        n: mp.n,
        d,
        generic_eps_bar3,
        generic_eps3,
        opnorm_converged,
        generic_delta_mode: dm.iter().cloned().collect(),
        delta_mode_max_abs_err,
        identity_residual,
        tv_lower_bound: mp.tv_lower_bound(),
        regime_ratio: mp.regime_ratio(),
        rtv: quadrature_tv.map(|t| t - ltv.value),
        quadrature_tv,
        quadrature_tv_corrected,
        ltv,
        exact,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelCheckSummary {
    pub model: String,
    pub points: usize,
    pub passed_points: usize,
    pub worst_rel_err: f64,
    pub failures: Vec<String>,
}

impl ModelCheckSummary {
    pub fn passed(&self) -> bool {
        self.passed_points == self.points
    }
}

fn summarize_checks<M: PosteriorModel + ?Sized>(
    name: &str,
    model: &M,
    points: &[DVector<f64>],
    tol: f64,
) -> ModelCheckSummary {
    let mut summary =
        ModelCheckSummary { model: name.to_string(), points: points.len(), passed_points: 0, worst_rel_err: 0.0, failures: Vec::new() };
    for (i, x) in points.iter().enumerate() {
        let rep = check_derivatives(model, x, default_step(x), tol);
        for c in &rep.checks {
            summary.worst_rel_err = summary.worst_rel_err.max(c.max_rel_err);
            if !c.passed {
                summary.failures.push(format!("point {i}: {} rel err {:.3e}", c.name, c.max_rel_err));
            }
        }
        summary.failures.extend(rep.failures.iter().map(|f| format!("point {i}: {f}")));
        if rep.passed {
            summary.passed_points += 1;
        }
    }
    summary
}

/// Finite-difference checks of every bundled model at `points` random points:
/// logistic regression (`n = 50`, `d = 3`), a Dirichlet posterior (`d = 3`),
/// the population logistic potential (`d = 3`) and a quadratic.
pub fn check_bundled_models(seed: u64, points: usize, tol: f64) -> Result<Vec<ModelCheckSummary>> {
    if points == 0 {
        return Err(Error::InvalidArgument("need at least one check point".into()));
    }
    let d = 3;
    let mut rng = stream_rng(seed, 1);
    let mut normal = |scale: f64| {
        let mut z = vec![0.0; d];
        fill_normal(&mut rng, &mut z);
        DVector::from_vec(z) * scale
    };

    let data = generate_data(50, &DVector::from_element(d, 0.5), &DMatrix::identity(d, d), derive_seed(seed, 0))?;
    let logreg = build_posterior(data, DMatrix::identity(d, d))?;
    let logreg_pts: Vec<DVector<f64>> = (0..points).map(|_| normal(1.0)).collect();

    let dirichlet = multinomial::build(&[40, 30, 20, 10])?;
    let mut simplex_rng = stream_rng(seed, 2);
    let simplex_pts: Vec<DVector<f64>> = (0..points)
        .map(|_| {
            let e: Vec<f64> = (0..=d).map(|_| -(1.0 - simplex_rng.random::<f64>()).ln()).collect();
            let total: f64 = e.iter().sum();
            DVector::from_iterator(d, e[1..].iter().map(|v| 0.5 * v / total + 0.5 / (d as f64 + 1.0)))
        })
        .collect();

    let pop = PopulationLogistic::new(d, 100.0)?;
    let pop_pts: Vec<DVector<f64>> = (0..points).map(|_| pop.mode() + normal(0.3)).collect();

    let a = DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 } else { 0.3 });
    let quad = QuadraticModel::new(DVector::from_element(d, 0.1), &a * a.transpose(), 10.0);
    let quad_pts: Vec<DVector<f64>> = (0..points).map(|_| normal(1.0)).collect();

    Ok(vec![
        summarize_checks("logistic", &logreg, &logreg_pts, tol),
        summarize_checks("multinomial", &dirichlet, &simplex_pts, tol),
        summarize_checks("population", &pop, &pop_pts, tol),
        summarize_checks("quadratic", &quad, &quad_pts, tol),
    ])
}

/// Write serializable rows as CSV with a header.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Read rows written by [`write_rows`].
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Plot of a rate table with replicate spread bands.
pub fn rate_svg(table: &RateTable) -> String {
    let series = |label: String, color: &str, f: fn(&RateRow) -> (f64, f64, f64)| svg::Series {
        label,
        color: color.to_string(),
        points: table.rows.iter().map(|r| (r.n as f64, f(r).0)).collect(),
        band: table.rows.iter().map(|r| (r.n as f64, f(r).1, f(r).2)).collect(),
    };
    svg::loglog_svg(
        &table.kind,
        "n",
        "error",
        &[
            series(
                format!("Laplace ({:.2})", table.slope_uncorrected),
                "#1f77b4",
                |r| (r.err_uncorrected, r.uncorrected_q25, r.uncorrected_q75),
            ),
            series(
                format!("skew-corrected ({:.2})", table.slope_corrected),
                "#d62728",
                |r| (r.err_corrected, r.corrected_q25, r.corrected_q75),
            ),
        ],
    )
}

/// Two-panel-equivalent plot of the dimension scan (both leading terms).
pub fn dim_svg(table: &DimScanTable) -> String {
    let mut series = Vec::new();
    for (g, color) in [(Regime::TwoDSquared, "#1f77b4"), (Regime::DPow25, "#d62728")] {
        let rows: Vec<&DimRow> = table.rows.iter().filter(|r| r.regime == g).collect();
        let name = match g {
            Regime::TwoDSquared => "n=2d²",
            Regime::DPow25 => "n=d^2.5",
        };
        series.push(svg::Series {
            label: format!("L_TV, {name}"),
            color: color.to_string(),
            points: rows.iter().map(|r| (r.d as f64, r.ltv)).collect(),
            band: rows.iter().map(|r| (r.d as f64, r.ltv_q10, r.ltv_q90)).collect(),
        });
        series.push(svg::Series {
            label: format!("‖δb̂‖, {name}"),
            color: if g == Regime::TwoDSquared { "#2ca02c".into() } else { "#9467bd".into() },
            points: rows.iter().map(|r| (r.d as f64, r.delta_norm)).collect(),
            band: rows.iter().map(|r| (r.d as f64, r.delta_q10, r.delta_q90)).collect(),
        });
    }
    svg::loglog_svg("dim-scan", "d", "leading term", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        assert!((loglog_slope(&[(1.0, 1.0), (10.0, 0.1)]).unwrap() + 1.0).abs() < 1e-15);
        assert!((loglog_slope(&[(1.0, 2.0), (4.0, 1.0), (16.0, 0.5)]).unwrap() + 0.5).abs() < 1e-15);
        assert!(loglog_slope(&[(1.0, 1.0)]).is_err());
        assert!(loglog_slope(&[(1.0, 1.0), (2.0, 0.0)]).is_err());
    }

    #[test]
    fn quantiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
    }

    #[test]
    fn bundled_models_pass() {
        let all = check_bundled_models(3, 4, 1e-4).unwrap();
        assert_eq!(all.len(), 4);
        for s in &all {
            assert!(s.passed(), "{}: {:?}", s.model, s.failures);
        }
    }

    #[test]
    fn default_grid() {
        assert_eq!(geometric_grid(20, 6), vec![20, 40, 80, 160, 320, 640]);
    }
}
