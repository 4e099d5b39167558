//! The skew-corrected approximation on logistic and Dirichlet posteriors.

use skewlap::diagnostics::eps_bar3;
use skewlap::logreg::{build_posterior, fast_delta_mode, fast_skew, generate_data, isotropic_prior, LogRegPosterior};
use skewlap::multinomial;
use skewlap::skew::{corrected_covariance, delta_mode, McOptions};
use skewlap::{find_mode, fit_laplace, whitened_third, DMatrix, DVector, LaplaceFit, ModeOptions, Representation, SkewCorrection};

fn logistic(n: usize, d: usize, seed: u64) -> (LogRegPosterior, LaplaceFit) {
    let mut beta = DVector::zeros(d);
    beta[0] = 1.0;
    let data = generate_data(n, &beta, &DMatrix::identity(d, d), seed).unwrap();
    let post = build_posterior(data, isotropic_prior(d, 1.0)).unwrap();
    let res = find_mode(&post, &DVector::zeros(d), ModeOptions::default()).unwrap();
    let fit = fit_laplace(&post, &res.mode, 1.0, 4.0).unwrap();
    (post, fit)
}

#[test]
fn dense_and_low_rank_tensors_agree() {
    let (post, fit) = logistic(150, 4, 3);
    let dense = whitened_third(&post, &fit, Representation::Dense).unwrap();
    let low = whitened_third(&post, &fit, Representation::LowRank).unwrap();
    let u = [0.3, -1.0, 0.5, 2.0];
    let v = [1.0, 0.0, -0.2, 0.1];
    let w = [0.0, 0.7, 0.7, -0.3];
    let (a, b) = (dense.contract3(&u, &v, &w), low.contract3(&u, &v, &w));
    assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    assert!((eps_bar3(&dense) - eps_bar3(&low)).abs() < 1e-10);
}

#[test]
fn fast_logistic_skew_matches_generic() {
    let (post, fit) = logistic(300, 5, 8);
    let generic = delta_mode(&post, &fit);
    assert!((fast_delta_mode(&post, &fit) - &generic).amax() < 1e-12 * generic.amax().max(1e-3));
    let fs = fast_skew(&post, &fit);
    let t = whitened_third(&post, &fit, Representation::Dense).unwrap();
    let sc = SkewCorrection::new(&post, &fit, t);
    assert!((fs.eps_bar3 - sc.eps_bar3).abs() < 1e-10);
    let b = &fit.mode + DVector::from_vec(vec![0.1, -0.2, 0.05, 0.0, 0.3]);
    assert!((fs.skew(&b) - sc.eval_skew(&b)).abs() < 1e-10);
}

#[test]
fn corrected_mass_is_one_and_mean_is_shifted() {
    let (post, fit) = logistic(80, 2, 5);
    let t = whitened_third(&post, &fit, Representation::Dense).unwrap();
    let sc = SkewCorrection::new(&post, &fit, t);
    let anti = McOptions { count: 1000, seed: 1, antithetic: true };
    let mass = sc.corrected_integral_mc(|_| 1.0, anti).unwrap();
    assert!((mass.estimate - 1.0).abs() < 1e-12);
    let opts = McOptions::new(400_000, 2);
    let m = sc.corrected_integral_mc_vec(2, |x, out| out.copy_from_slice(x.as_slice()), opts).unwrap();
    let want = sc.corrected_mean();
    for i in 0..2 {
        assert!((m[i].estimate - want[i]).abs() < 4.0 * m[i].std_error, "coordinate {i}");
    }
}

#[test]
fn corrected_covariance_is_laplace_minus_shift() {
    let mp = multinomial::build(&[30, 40, 20, 10]).unwrap();
    let res = find_mode(&mp, &DVector::from_element(3, 0.25), ModeOptions::default()).unwrap();
    let fit = fit_laplace(&mp, &res.mode, 1.0, 4.0).unwrap();
    let dm = delta_mode(&mp, &fit);
    let diff = fit.covariance() - corrected_covariance(&mp, &fit);
    assert!((diff - &dm * dm.transpose()).amax() < 1e-15);
}

#[test]
fn skew_is_exactly_odd_about_the_mode() {
    let (post, fit) = logistic(60, 3, 4);
    let t = whitened_third(&post, &fit, Representation::LowRank).unwrap();
    let sc = SkewCorrection::new(&post, &fit, t);
    let h = DVector::from_vec(vec![0.4, -0.1, 0.25]);
    assert_eq!(sc.eval_skew_offset(&h), -sc.eval_skew_offset(&-&h));
}

#[test]
fn mgf_ratio_at_zero_is_one() {
    let (post, fit) = logistic(60, 2, 4);
    let t = whitened_third(&post, &fit, Representation::Dense).unwrap();
    let sc = SkewCorrection::new(&post, &fit, t);
    assert_eq!(sc.corrected_mgf_ratio(&DVector::zeros(2)), 1.0);
}
