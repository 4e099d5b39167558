//! Computable error diagnostics: `ε̄₃`, `L_TV`, weighted operator norms,
//! radius selection and the assembled remainder bounds.
//!
//! Bounds hidden behind `≲` are evaluated with absolute constant 1 and carry a
//! `modulo_absolute_constant` flag.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::laplace::LaplaceFit;
use crate::model::PosteriorModel;
use crate::rng::{fill_normal, mc_mean, stream_rng};
use crate::skew::SkewCorrection;
use crate::tensor::WhitenedThird;

/// Upper end of the radius search.
pub const RADIUS_SEARCH_MAX: f64 = 1e6;

/// `ε̄₃ = ((1/6)‖T‖_F² + (1/4)‖⟨T, I⟩‖²)^{1/2}`.
pub fn eps_bar3(tensor: &WhitenedThird) -> f64 {
    let f = tensor.frobenius_sq();
    let t = tensor.trace_vec().norm_squared();
    (f / 6.0 + t / 4.0).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// `L_TV = (1/12) E|⟨T, Z^{⊗3}⟩|` by Monte Carlo.
pub fn ltv_mc(tensor: &WhitenedThird, count: usize, seed: u64) -> Result<Estimate> {
    if count < 2 {
        return Err(Error::InvalidArgument("MC count must be at least 2".into()));
    }
    let s = mc_mean(tensor.dim(), 1, count, seed, false, |z, out| out[0] = tensor.cube(z).abs() / 12.0);
    Ok(Estimate { value: s.mean[0], std_error: s.std_error[0] })
}

/// MC estimate of `‖S‖²_{L²(γ̂)} = E[⟨T,Z^{⊗3}⟩²]/36`.
pub fn skew_l2_sq_mc(tensor: &WhitenedThird, count: usize, seed: u64) -> Estimate {
    let s = mc_mean(tensor.dim(), 1, count, seed, false, |z, out| {
        let c = tensor.cube(z) / 6.0;
        out[0] = c * c;
    });
    Estimate { value: s.mean[0], std_error: s.std_error[0] }
}

/// MC estimate of `E[⟨T, H₃(Z)⟩²]`.
pub fn hermite_sq_mc(tensor: &WhitenedThird, count: usize, seed: u64) -> Estimate {
    let tr = tensor.trace_vec();
    let s = mc_mean(tensor.dim(), 1, count, seed, false, |z, out| {
        let h = tensor.cube(z) - 3.0 * tr.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        out[0] = h * h;
    });
    Estimate { value: s.mean[0], std_error: s.std_error[0] }
}

#[derive(Debug, Clone, Copy)]
pub struct OpNormOptions {
    /// Random restarts in addition to the `d` axis-aligned starts.
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub outer_rounds: usize,
}

impl Default for OpNormOptions {
    fn default() -> Self {
        Self { restarts: 20, seed: 0, max_iter: 500, outer_rounds: 8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OpNormEstimate {
    /// Lower estimate of `c_k(s)`.
    pub estimate: f64,
    /// The two best restarts agree within 1%.
    pub converged: bool,
    pub restart_values: Vec<f64>,
    pub best_restart: usize,
    /// Whitened direction `z` of the best restart.
    pub direction: DVector<f64>,
    /// Point `x ∈ U(s)` of the best restart.
    pub point: DVector<f64>,
    /// Some ascent step was stopped by the domain boundary.
    pub domain_limited: bool,
}

struct Objective<'a, M: PosteriorModel + ?Sized> {
    model: &'a M,
    fit: &'a LaplaceFit,
    k: usize,
}

impl<M: PosteriorModel + ?Sized> Objective<'_, M> {
    /// `(⟨∇ᵏV(x), (L⁻ᵀz)^{⊗k}⟩, gradient in z)`.
    fn eval(&self, x: &DVector<f64>, z: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let u = self.fit.inv_factor_t() * z;
        let (v, gu) = self.model.directional(x, self.k, &u)?;
        let gz = self.fit.inv_factor_t().tr_mul(&gu) * self.k as f64;
        Some((v, gz))
    }

    fn value(&self, x: &DVector<f64>, z: &DVector<f64>) -> Option<f64> {
        let u = self.fit.inv_factor_t() * z;
        self.model.directional(x, self.k, &u).map(|(v, _)| v)
    }

    fn point(&self, y: &DVector<f64>) -> DVector<f64> {
        self.fit.unwhiten(y)
    }
}

// Riemannian ascent of σ·f on the unit sphere with Armijo backtracking.
fn sphere_ascent<M: PosteriorModel + ?Sized>(
    obj: &Objective<'_, M>,
    x: &DVector<f64>,
    z0: &DVector<f64>,
    sigma: f64,
    max_iter: usize,
) -> Option<(f64, DVector<f64>)> {
    let mut z = z0 / z0.norm();
    let (f, g) = obj.eval(x, &z)?;
    let (mut f, mut g) = (sigma * f, g * sigma);
    let mut t = f64::NAN;
    for _ in 0..max_iter {
        let r = &g - &z * g.dot(&z);
        let rn = r.norm();
        if !rn.is_finite() || rn <= 1e-8 * (obj.k as f64) * f.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if !t.is_finite() {
            t = 0.3 / rn;
        }
        let mut moved = false;
        for _ in 0..60 {
            let zn = &z + &r * t;
            let zn = &zn / zn.norm();
            if let Some((fn_, gn)) = obj.eval(x, &zn) {
                let fn_ = sigma * fn_;
                if fn_.is_finite() && fn_ >= f + 1e-4 * t * rn * rn {
                    moved = fn_ - f > 1e-14 * f.abs();
                    z = zn;
                    f = fn_;
                    g = gn * sigma;
                    t *= 2.0;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Some((f, z))
}

// Projected ascent of σ·f(x̂ + L⁻ᵀy, z) over |y| ≤ rho with finite-difference
// gradients. Steps leaving the domain are halved back toward the current point.
fn ball_ascent<M: PosteriorModel + ?Sized>(
    obj: &Objective<'_, M>,
    y0: &DVector<f64>,
    z: &DVector<f64>,
    sigma: f64,
    rho: f64,
    max_iter: usize,
    limited: &mut bool,
) -> Option<(f64, DVector<f64>)> {
    let d = y0.len();
    let h = |y: &DVector<f64>| -> Option<f64> {
        let x = obj.point(y);
        if !obj.model.domain_guard(&x) {
            return None;
        }
        obj.value(&x, z).map(|v| sigma * v).filter(|v| v.is_finite())
    };
    let project = |y: DVector<f64>| -> DVector<f64> {
        let n = y.norm();
        if n > rho {
            y * (rho / n)
        } else {
            y
        }
    };
    let mut y = y0.clone();
    let mut f = h(&y)?;
    let mut t = f64::NAN;
    let delta = 1e-4 * (1.0 + rho).min(10.0);
    for _ in 0..max_iter {
        let mut g = DVector::zeros(d);
        for i in 0..d {
            let mut yp = y.clone();
            yp[i] += delta;
            let mut ym = y.clone();
            ym[i] -= delta;
            g[i] = match (h(&yp), h(&ym)) {
                (Some(a), Some(b)) => (a - b) / (2.0 * delta),
                (Some(a), None) => (a - f) / delta,
                (None, Some(b)) => (f - b) / delta,
                (None, None) => 0.0,
            };
        }
        let gn = g.norm();
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        if !t.is_finite() {
            t = 0.25 * rho.max(1e-3) / gn;
        }
        let mut moved = false;
        for _ in 0..60 {
            let yn = project(&y + &g * t);
            match h(&yn) {
                Some(fn_) if fn_ > f * (1.0 + 1e-12 * f.signum()) + 1e-300 => {
                    let step = (&yn - &y).norm();
                    moved = step > 1e-10 * (1.0 + rho) && fn_ - f > 1e-9 * f.abs();
                    y = yn;
                    f = fn_;
                    t *= 2.0;
                    break;
                }
                None => {
                    *limited = true;
                }
                _ => {}
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Some((f, y))
}

/// Lower estimate of `c_k(s) = sup_{x∈U(s)} ‖∇ᵏv(x)‖_{H_v}` by alternating
/// projected ascent over unit `H_v`-directions and the ball
/// `‖x − x̂‖_{H_v} ≤ s√(d/n)` (intersected with the domain).
pub fn weighted_opnorm<M: PosteriorModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    k: usize,
    s: f64,
    opts: OpNormOptions,
) -> Result<OpNormEstimate> {
    if !(3..=5).contains(&k) {
        return Err(Error::InvalidArgument(format!("k must be 3, 4 or 5, got {k}")));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {s}")));
    }
    if !model.has_order(k) {
        return Err(Error::Unsupported(format!("model does not expose order-{k} derivatives")));
    }
    let d = fit.dim();
    let n = model.n_scale();
    let scale = n.powf(k as f64 / 2.0 - 1.0);
    let rho = s * (d as f64).sqrt();
    let obj = Objective { model, fit, k };
    let signs: &[f64] = if k % 2 == 1 { &[1.0] } else { &[1.0, -1.0] };

    let mut rng = stream_rng(opts.seed, k as u64);
    let mut starts: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    for i in 0..d {
        let z = fit.factor.row(i).transpose();
        starts.push((z.clone() / z.norm(), DVector::zeros(d)));
    }
    let mut buf = vec![0.0; d];
    for _ in 0..opts.restarts {
        fill_normal(&mut rng, &mut buf);
        let z = DVector::from_column_slice(&buf);
        let z = &z / z.norm().max(f64::MIN_POSITIVE);
        let mut y = DVector::zeros(d);
        if rho > 0.0 {
            fill_normal(&mut rng, &mut buf);
            let dir = DVector::from_column_slice(&buf);
            let r: f64 = rng.random::<f64>().powf(1.0 / d as f64) * rho;
            y = &dir * (r / dir.norm().max(f64::MIN_POSITIVE));
            let mut tries = 0;
            while !model.domain_guard(&fit.unwhiten(&y)) && tries < 60 {
                y *= 0.5;
                tries += 1;
            }
        }
        starts.push((z, y));
    }

    let mut limited = false;
    let mut values = Vec::with_capacity(starts.len());
    let mut best = (f64::NEG_INFINITY, 0usize, DVector::zeros(d), fit.mode.clone());
    for (idx, (z0, y0)) in starts.iter().enumerate() {
        let mut restart_best = (f64::NEG_INFINITY, z0.clone(), y0.clone());
        for &sigma in signs {
            let mut z = z0.clone();
            let mut y = y0.clone();
            let mut f = f64::NEG_INFINITY;
            for _round in 0..opts.outer_rounds.max(1) {
                let x = fit.unwhiten(&y);
                let Some((fz, zn)) = sphere_ascent(&obj, &x, &z, sigma, opts.max_iter) else { break };
                z = zn;
                let mut fy = fz;
                if rho > 0.0 {
                    if let Some((fb, yn)) = ball_ascent(&obj, &y, &z, sigma, rho, 50, &mut limited) {
                        fy = fb;
                        y = yn;
                    }
                }
                let improved = fy - f;
                f = fy;
                if rho == 0.0 || improved <= 1e-7 * f.abs() {
                    break;
                }
            }
            if f > restart_best.0 {
                restart_best = (f, z, y);
            }
        }
        let v = restart_best.0.max(0.0) * scale;
        values.push(v);
        if v > best.0 {
            best = (v, idx, restart_best.1.clone(), fit.unwhiten(&restart_best.2));
        }
    }

    let mut sorted = values.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let converged = match sorted.as_slice() {
        [a, b, ..] => *a == 0.0 || (a - b) <= 0.01 * a,
        _ => false,
    };
    Ok(OpNormEstimate {
        estimate: best.0.max(0.0),
        converged,
        restart_values: values,
        best_restart: best.1,
        direction: best.2,
        point: best.3,
        domain_limited: limited,
    })
}

/// `s* = max(s₀, (8/c₀) log(2e/c₀))`.
pub fn radius_floor(c0: f64, s0: f64) -> f64 {
    s0.max(8.0 / c0 * (2.0 * std::f64::consts::E / c0).ln())
}

#[derive(Debug, Clone, Serialize)]
pub struct RadiusSelection {
    pub radius: f64,
    pub floor: f64,
    /// The floor already violates `(ε₃² + ε₄(s)²)s⁴ ≤ 1`, or no finite
    /// maximizer exists below the search limit.
    pub flagged: bool,
    pub note: Option<String>,
}

/// Largest `s ∈ [s*, 10⁶]` with `(ε₃² + ε₄(s)²)s⁴ ≤ 1`, by log-scale bisection
/// to relative accuracy `10⁻⁴`, returning the feasible end of the bracket.
pub fn select_radius(c0: f64, s0: f64, eps3: f64, mut eps4_at: impl FnMut(f64) -> f64) -> Result<RadiusSelection> {
    if !(c0 > 0.0 && c0 <= 1.0) || !(s0 > 0.0) {
        return Err(Error::InvalidArgument(format!("need c0 in (0,1] and s0 > 0, got ({c0}, {s0})")));
    }
    let floor = radius_floor(c0, s0);
    let mut ok = |s: f64| {
        let e4 = eps4_at(s);
        (eps3 * eps3 + e4 * e4) * s.powi(4) <= 1.0
    };
    if !ok(floor) {
        return Ok(RadiusSelection {
            radius: floor,
            floor,
            flagged: true,
            note: Some("(ε₃²+ε₄(s*)²)s*⁴ > 1 at the floor radius".into()),
        });
    }
    if ok(RADIUS_SEARCH_MAX) {
        return Ok(RadiusSelection {
            radius: RADIUS_SEARCH_MAX,
            floor,
            flagged: true,
            note: Some("inequality holds up to the search limit (degenerate Gaussian case)".into()),
        });
    }
    let (mut lo, mut hi) = (floor.ln(), RADIUS_SEARCH_MAX.ln());
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if ok(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RadiusSelection { radius: lo.exp().max(floor), floor, flagged: false, note: None })
}

/// `c₃√(d/n) + c₄(4)d/n ≤ 3/8`, which licenses `(c₀, s₀) = (1, 4)` for convex `v`.
pub fn check_growth_condition(c3: f64, c4_at_4: f64, d: usize, n: f64) -> bool {
    let d = d as f64;
    c3 * (d / n).sqrt() + c4_at_4 * d / n <= 3.0 / 8.0
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub modulo_absolute_constant: bool,
}

impl BoundValue {
    fn new(value: f64) -> Self {
        Self { value, modulo_absolute_constant: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub eps_bar3: f64,
    pub eps3: f64,
    pub eps4: Option<f64>,
    pub eps5: Option<f64>,
    pub radius: f64,
    pub radius_floor: f64,
    #[serde(rename = "E_s")]
    pub e_s: f64,
    pub tau_s: f64,
    pub ltv_estimate: Estimate,
    pub growth_coeff: f64,
    pub bounds: BTreeMap<String, BoundValue>,
    pub flags: Vec<String>,
}

impl DiagnosticsReport {
    /// Bound on `|Δ_g(γ̂_S)|` for a standardized observable with growth
    /// coefficient `a_g`: `E(s)(ε₃² + ε₄²) + (a_g ∨ 1)τ(s)`.
    pub fn observable_bound(&self) -> Option<f64> {
        let e4 = self.eps4?;
        Some(self.e_s * (self.eps3 * self.eps3 + e4 * e4) + self.growth_coeff.max(1.0) * self.tau_s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    /// Fixed radius; `None` selects it. Raised to `s*` if smaller.
    pub radius: Option<f64>,
    pub restarts: usize,
    pub mc_count: usize,
    pub growth_coeff: f64,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { radius: None, restarts: 20, mc_count: 100_000, growth_coeff: 1.0, seed: 0 }
    }
}

/// Compute every diagnostic and the assembled bounds.
pub fn assemble_report<M: PosteriorModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    sc: &SkewCorrection,
    opts: ReportOptions,
) -> Result<DiagnosticsReport> {
    let d = fit.dim();
    let df = d as f64;
    let n = model.n_scale();
    let eps_unit = df / n.sqrt();
    let op_opts = OpNormOptions { restarts: opts.restarts, seed: opts.seed, ..Default::default() };
    let mut flags = Vec::new();

    let c3 = weighted_opnorm(model, fit, 3, 0.0, op_opts)?;
    if !c3.converged {
        flags.push("c3 estimate not converged".to_string());
    }
    let eps3 = c3.estimate * eps_unit;

    let has4 = model.has_order(4);
    let has5 = model.has_order(5);
    let eps4_at = |s: f64| -> Result<f64> {
        let c4 = weighted_opnorm(model, fit, 4, s, op_opts)?;
        Ok(c4.estimate.sqrt() * eps_unit)
    };

    let floor = radius_floor(fit.c0, fit.s0);
    let radius = match (opts.radius, has4) {
        (Some(s), _) => {
            if s < floor {
                flags.push(format!("requested radius {s} raised to the floor s* = {floor}"));
            }
            s.max(floor)
        }
        (None, true) => {
            let mut failure = None;
            let sel = select_radius(fit.c0, fit.s0, eps3, |s| match eps4_at(s) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    f64::INFINITY
                }
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            if let Some(note) = sel.note {
                flags.push(format!("radius: {note}"));
            }
            sel.radius
        }
        (None, false) => {
            flags.push("fourth derivative unavailable: radius set to s*".to_string());
            floor
        }
    };

    let eps4 = if has4 { Some(eps4_at(radius)?) } else { None };
    let eps5 = if has5 {
        let c5 = weighted_opnorm(model, fit, 5, radius, op_opts)?;
        Some(c5.estimate.cbrt() * eps_unit)
    } else {
        None
    };

    if has4 {
        let c4_at_4 = weighted_opnorm(model, fit, 4, 4.0, op_opts)?;
        if check_growth_condition(c3.estimate, c4_at_4.estimate, d, n) {
            flags.push("growth condition holds: (c0, s0) = (1, 4) licensed for convex v".to_string());
        } else {
            flags.push("growth condition fails: (c0, s0) are user-asserted".to_string());
        }
    }

    let e4 = eps4.unwrap_or(0.0);
    let del = eps3 * eps3 + e4 * e4;
    let e_s = (del * radius.powi(4)).exp();
    let tau_s = df * (-fit.c0 * radius * df / 8.0).exp();
    let ltv = ltv_mc(&sc.tensor, opts.mc_count, opts.seed)?;

    let mut bounds = BTreeMap::new();
    if eps4.is_some() {
        let tv_corrected = e_s * del + tau_s;
        bounds.insert("tv_corrected".to_string(), BoundValue::new(tv_corrected));
        bounds.insert("tv_leading".to_string(), BoundValue::new(sc.eps_bar3 / 2.0 + tv_corrected));
        bounds.insert("mean_remainder".to_string(), BoundValue::new(e_s * del + tau_s));
        bounds.insert("cov".to_string(), BoundValue::new(e_s * e_s * del + tau_s));
        if let Some(e5) = eps5 {
            let v = del * (eps3 + e4 * e4) + e5.powi(3) / df.sqrt() + tau_s;
            bounds.insert("mean_remainder_c5".to_string(), BoundValue::new(v));
        }
    } else {
        flags.push("eps4 unavailable: assembled bounds omitted".to_string());
    }
    let ratio = df * df / n;
    flags.push(format!("d^2/n = {ratio:.4e}"));

    Ok(DiagnosticsReport {
        eps_bar3: sc.eps_bar3,
        eps3,
        eps4,
        eps5,
        radius,
        radius_floor: floor,
        e_s,
        tau_s,
        ltv_estimate: ltv,
        growth_coeff: opts.growth_coeff,
        bounds,
        flags,
    })
}
