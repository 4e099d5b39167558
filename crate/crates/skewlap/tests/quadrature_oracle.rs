//! The tensor-product quadrature oracle.

use skewlap::logreg::{build_posterior, generate_data};
use skewlap::quadrature::{
    gauss_hermite_prob, gauss_legendre, half_space_probability, true_integral, true_mean, true_tv, Against,
    QuadratureGrid,
};
use skewlap::{find_mode, fit_laplace, DMatrix, DVector, LaplaceFit, ModeOptions, QuadraticModel};

fn gaussian(d: usize) -> (QuadraticModel, LaplaceFit) {
    let h = DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 + i as f64 } else { 0.4 });
    let q = QuadraticModel::new(DVector::from_fn(d, |i, _| 0.5 - i as f64), h, 1.0);
    let fit = fit_laplace(&q, &q.center, 1.0, 4.0).unwrap();
    (q, fit)
}

#[test]
fn legendre_rule_is_exact_for_polynomials() {
    let (x, w) = gauss_legendre(12);
    for k in 0..24 {
        let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
        let want = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
        assert!((got - want).abs() < 1e-13, "k = {k}");
    }
}

#[test]
fn hermite_rule_reproduces_gaussian_moments() {
    let (x, w) = gauss_hermite_prob(40);
    let mut double_fact = 1.0;
    for k in 0..20 {
        let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * k)).sum();
        assert!((got - double_fact).abs() < 1e-10 * double_fact, "moment {}", 2 * k);
        double_fact *= 2.0 * k as f64 + 1.0;
    }
}

#[test]
fn gaussian_target_is_reproduced() {
    for d in 1..=3 {
        let (q, fit) = gaussian(d);
        let grid = QuadratureGrid::default_for(d);
        let m = true_mean(&q, &fit, &grid).unwrap();
        assert!((&m - &q.center).amax() < 1e-8, "d = {d}");
        if d < 3 {
            let tv = true_tv(&q, &fit, Against::Laplace, &grid).unwrap();
            assert!(tv < 1e-8, "d = {d}: {tv}");
        }
        let a = DVector::from_fn(d, |i, _| 1.0 + i as f64);
        let p = half_space_probability(&q, &fit, &a, &grid).unwrap();
        assert!((p - 0.5).abs() < 1e-10, "d = {d}: {p}");
    }
}

#[test]
fn logistic_integrals_are_stable_under_refinement() {
    let data = generate_data(40, &DVector::from_vec(vec![1.0, 0.0]), &DMatrix::identity(2, 2), 4).unwrap();
    let post = build_posterior(data, DMatrix::zeros(2, 2)).unwrap();
    let res = find_mode(&post, &DVector::zeros(2), ModeOptions::default()).unwrap();
    let fit = fit_laplace(&post, &res.mode, 1.0, 4.0).unwrap();
    let grid = QuadratureGrid::default_for(2);
    let fine = grid.doubled();
    let (a, b) = (true_mean(&post, &fit, &grid).unwrap(), true_mean(&post, &fit, &fine).unwrap());
    assert!((a - b).amax() < 1e-10);
    let (s, t) = (
        true_tv(&post, &fit, Against::SkewCorrected, &grid).unwrap(),
        true_tv(&post, &fit, Against::SkewCorrected, &fine).unwrap(),
    );
    assert!((s - t).abs() < 1e-5 * t, "{s} {t}");
    let one = true_integral(&post, &fit, |_| 1.0, &grid).unwrap();
    assert!((one - 1.0).abs() < 1e-14);
}

#[test]
fn unsupported_dimensions_and_grids_are_rejected() {
    let (q, fit) = gaussian(4);
    assert!(matches!(true_mean(&q, &fit, &QuadratureGrid::default_for(4)), Err(skewlap::Error::Unsupported(_))));
    let (q, fit) = gaussian(1);
    let bad = QuadratureGrid { nodes_per_axis: 1, half_width: 12.0 };
    assert!(true_mean(&q, &fit, &bad).is_err());
    assert!(half_space_probability(&q, &fit, &DVector::zeros(1), &QuadratureGrid::default_for(1)).is_err());
}
