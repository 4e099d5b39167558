//! Dirichlet posterior: generic pipeline against the closed forms.

use std::f64::consts::PI;

use skewlap::diagnostics::eps_bar3;
use skewlap::experiments::{run_multinomial_exact, MultinomialSpec};
use skewlap::multinomial::{self, parse_counts};
use skewlap::quadrature::{true_mean, true_tv, Against, QuadratureGrid};
use skewlap::skew::delta_mode;
use skewlap::{find_mode, fit_laplace, whitened_third, DVector, LaplaceFit, ModeOptions, Representation, WhitenedThird};

fn fit(mp: &multinomial::MultinomialPosterior) -> LaplaceFit {
    let d = mp.d();
    let res = find_mode(mp, &DVector::from_element(d, 1.0 / (d as f64 + 1.0)), ModeOptions::default()).unwrap();
    assert!(res.converged);
    fit_laplace(mp, &res.mode, 1.0, 4.0).unwrap()
}

fn report(counts: &[u64]) -> skewlap::experiments::MultinomialReport {
    run_multinomial_exact(&MultinomialSpec { counts: counts.to_vec(), mc_count: 20_000, seed: 1, restarts: 20 }).unwrap()
}

#[test]
fn mean_identity_holds_to_rounding() {
    let r = report(&[30, 40, 20, 10]);
    assert!(r.identity_residual <= 1e-12, "{}", r.identity_residual);
    assert!(r.delta_mode_max_abs_err <= 1e-12);
    assert!((r.generic_eps_bar3 - r.exact.eps_bar3_exact).abs() <= 1e-10);
    let eps3 = r.generic_eps3.unwrap();
    assert!((eps3 - r.exact.eps3_exact).abs() <= 0.01 * r.exact.eps3_exact);
    assert_eq!(r.opnorm_converged, Some(true));
}

#[test]
fn uniform_counts_have_no_shift_and_no_bound() {
    let r = report(&[50, 50, 50]);
    assert!(r.tv_lower_bound.is_none());
    assert!(r.generic_delta_mode.iter().all(|v| v.abs() < 1e-15));
    assert!(r.exact.delta_mode.iter().all(|v| v.abs() < 1e-15));
    assert!(r.exact.chi2_unif.abs() < 1e-15);
}

#[test]
fn closed_form_mean_matches_quadrature() {
    let mp = multinomial::build(&[12, 30, 8]).unwrap();
    let f = fit(&mp);
    let mean = true_mean(&mp, &f, &QuadratureGrid::default_for(2)).unwrap();
    let exact = mp.exact_quantities().mean;
    for i in 0..2 {
        assert!((mean[i] - exact[i + 1]).abs() < 1e-8, "coordinate {i}");
    }
}

#[test]
fn eps_bar3_closed_form_over_dimensions() {
    for counts in [vec![7u64, 93], vec![5, 9, 14, 3, 22, 8, 11, 40, 6, 17, 25], vec![1000, 1, 1000]] {
        let mp = multinomial::build(&counts).unwrap();
        let f = fit(&mp);
        let t = whitened_third(&mp, &f, Representation::Dense).unwrap();
        let want = mp.exact_quantities().eps_bar3_exact;
        assert!((eps_bar3(&t) - want).abs() <= 1e-9 * want, "{counts:?}");
        let dm = delta_mode(&mp, &f);
        let exact = mp.exact_quantities().delta_mode;
        for i in 0..mp.d() {
            assert!((dm[i] - exact[i + 1]).abs() <= 1e-10 * exact[i + 1].abs().max(1e-6));
        }
    }
}

#[test]
fn tv_tracks_its_leading_term_as_counts_grow() {
    let abs_cube_mean = 2.0 * (2.0 / PI).sqrt();
    let mut gaps = Vec::new();
    for scale in [1u64, 4, 16] {
        let mp = multinomial::build(&[20 * scale, 80 * scale]).unwrap();
        let f = fit(&mp);
        let tv = true_tv(&mp, &f, Against::Laplace, &QuadratureGrid::default_for(1)).unwrap();
        let WhitenedThird::Dense(t) = whitened_third(&mp, &f, Representation::Dense).unwrap() else { unreachable!() };
        let ltv = t.get(0, 0, 0).abs() * abs_cube_mean / 12.0;
        gaps.push((tv - ltv).abs() / tv);
    }
    assert!(gaps[0] <= 0.5);
    assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1], "{gaps:?}");
}

#[test]
fn lower_bound_needs_many_categories() {
    let mut counts = vec![2000u64; 12];
    counts.extend([40000, 40000]);
    let mp = multinomial::build(&counts).unwrap();
    assert!(mp.tv_lower_bound().is_some());
    for d in 1..=2usize {
        let mut c = vec![1u64; d + 1];
        c[0] = 1_000_000;
        assert!(multinomial::build(&c).unwrap().tv_lower_bound().is_none());
    }
}

#[test]
fn counts_parse_from_lists_and_csv() {
    assert_eq!(parse_counts("3, 4,5").unwrap(), vec![3, 4, 5]);
    assert_eq!(parse_counts("count\n3\n4\n").unwrap(), vec![3, 4]);
    assert!(parse_counts("3,x").is_err());
    assert!(multinomial::build(&[3, 0, 2]).is_err());
    assert!(multinomial::build(&[3]).is_err());
}
