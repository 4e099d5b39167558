//! Logistic regression posterior: data handling and derivative structure.

use skewlap::logreg::{build_posterior, generate_data, isotropic_prior, psi, psi_deriv, sigmoid, LogRegDataset};
use skewlap::model::default_step;
use skewlap::{check_derivatives, DMatrix, DVector, PosteriorModel};

fn posterior(n: usize, d: usize, seed: u64) -> skewlap::logreg::LogRegPosterior {
    let beta = DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { -0.3 });
    let data = generate_data(n, &beta, &DMatrix::identity(d, d), seed).unwrap();
    build_posterior(data, isotropic_prior(d, 0.1)).unwrap()
}

#[test]
fn psi_matches_log_partition() {
    for t in [-5.0, -0.5, 0.0, 0.3, 4.0] {
        assert!((psi(t) - (1.0 + f64::exp(t)).ln()).abs() < 1e-14);
        assert!((psi_deriv(1, t) - sigmoid(t)).abs() < 1e-15);
        let s = sigmoid(t) * sigmoid(-t);
        assert!((psi_deriv(2, t) - s).abs() < 1e-15);
    }
    assert_eq!(psi_deriv(3, 0.0), 0.0);
    assert_eq!(psi_deriv(5, 0.0), 0.0);
}

#[test]
fn csv_round_trip_preserves_data() {
    let post = posterior(40, 3, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    post.dataset.write_csv(&path).unwrap();
    let back = LogRegDataset::read_csv(&path).unwrap();
    assert_eq!(back.labels, post.dataset.labels);
    assert!((back.features - &post.dataset.features).amax() < 1e-14);
}

#[test]
fn csv_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y,x1,x3\n1,0.5,0.2\n").unwrap();
    assert!(LogRegDataset::read_csv(&path).is_err());
    std::fs::write(&path, "y,x1\n1,abc\n").unwrap();
    assert!(LogRegDataset::read_csv(&path).is_err());
    std::fs::write(&path, "y,x1\n3,0.1\n").unwrap();
    assert!(LogRegDataset::read_csv(&path).is_err());
}

#[test]
fn derivatives_pass_finite_differences() {
    let post = posterior(120, 4, 6);
    for scale in [0.0, 0.5, 2.0] {
        let x = DVector::from_fn(4, |i, _| scale * (i as f64 - 1.5));
        let rep = check_derivatives(&post, &x, default_step(&x), 1e-4);
        assert!(rep.passed, "{:?}", rep);
    }
}

#[test]
fn rank_one_structure_reproduces_third_derivative() {
    let post = posterior(50, 3, 1);
    let x = DVector::from_vec(vec![0.4, -0.2, 0.1]);
    let r = post.rank_one_third(&x).unwrap();
    let u = DVector::from_vec(vec![1.0, 0.5, -0.5]);
    let v = DVector::from_vec(vec![0.0, 1.0, 2.0]);
    let w = DVector::from_vec(vec![-1.0, 0.3, 0.0]);
    let from_cubes: f64 = (0..r.vectors.nrows())
        .map(|l| {
            let row = r.vectors.row(l).transpose();
            r.weights[l] * row.dot(&u) * row.dot(&v) * row.dot(&w)
        })
        .sum();
    let direct = post.third_dir(&x, &u, &v, &w);
    assert!((from_cubes - direct).abs() < 1e-10 * direct.abs().max(1.0));
}

#[test]
fn prior_adds_constant_curvature() {
    let data = generate_data(30, &DVector::from_vec(vec![0.5, 0.5]), &DMatrix::identity(2, 2), 3).unwrap();
    let flat = build_posterior(data.clone(), DMatrix::zeros(2, 2)).unwrap();
    let ridge = build_posterior(data, isotropic_prior(2, 2.0)).unwrap();
    let x = DVector::from_vec(vec![0.2, -0.1]);
    let diff = ridge.hessian(&x) - flat.hessian(&x);
    assert!((diff - DMatrix::identity(2, 2) * 2.0).amax() < 1e-12);
    assert!(build_posterior(flat.dataset.clone(), DMatrix::zeros(3, 3)).is_err());
}
