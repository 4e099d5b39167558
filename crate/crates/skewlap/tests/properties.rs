//! Property tests for the tensor algebra, whitening and summary statistics.

use proptest::prelude::*;

use skewlap::diagnostics::eps_bar3;
use skewlap::experiments::{loglog_slope, quantile, run_multinomial_exact, MultinomialSpec};
use skewlap::{fit_laplace, DMatrix, DVector, QuadraticModel, WhitenedThird};

fn low_rank(d: usize, weights: &[f64], flat: &[f64]) -> WhitenedThird {
    WhitenedThird::LowRank {
        weights: DVector::from_column_slice(weights),
        vectors: DMatrix::from_row_slice(weights.len(), d, &flat[..weights.len() * d]),
    }
}

fn tensor_strategy() -> impl Strategy<Value = (usize, WhitenedThird)> {
    (1usize..5, 1usize..6).prop_flat_map(|(d, m)| {
        (
            Just(d),
            prop::collection::vec(-2.0f64..2.0, m),
            prop::collection::vec(-1.5f64..1.5, m * d),
        )
            .prop_map(|(d, w, v)| (d, low_rank(d, &w, &v)))
    })
}

fn scaled(t: &WhitenedThird, c: f64) -> WhitenedThird {
    match t {
        WhitenedThird::LowRank { weights, vectors } => {
            WhitenedThird::LowRank { weights: weights * c, vectors: vectors.clone() }
        }
        WhitenedThird::Dense(_) => unreachable!(),
    }
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-10 * (1.0 + scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cubic_form_is_odd((d, t) in tensor_strategy(), z in prop::collection::vec(-3.0f64..3.0, 4)) {
        let z = &z[..d];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let a = t.cube(z);
        prop_assert!(close(t.cube(&neg), -a, a.abs()));
        prop_assert!(close(t.hermite3(&neg), -t.hermite3(z), a.abs()));
    }

    #[test]
    fn contraction_is_symmetric(
        (d, t) in tensor_strategy(),
        u in prop::collection::vec(-2.0f64..2.0, 4),
        v in prop::collection::vec(-2.0f64..2.0, 4),
        w in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let (u, v, w) = (&u[..d], &v[..d], &w[..d]);
        let base = t.contract3(u, v, w);
        for other in [t.contract3(v, u, w), t.contract3(w, v, u), t.contract3(u, w, v), t.contract3(v, w, u)] {
            prop_assert!(close(other, base, base.abs()));
        }
        let dense = WhitenedThird::Dense(t.to_dense());
        prop_assert!(close(dense.contract3(u, v, w), base, base.abs()));
        prop_assert!(close(t.cube(u), t.contract3(u, u, u), base.abs()));
    }

    #[test]
    fn eps_bar3_is_absolutely_homogeneous((_, t) in tensor_strategy(), c in -4.0f64..4.0) {
        let e = eps_bar3(&t);
        prop_assert!(e >= 0.0);
        prop_assert!(close(eps_bar3(&scaled(&t, c)), c.abs() * e, e));
        prop_assert!(close(eps_bar3(&WhitenedThird::Dense(t.to_dense())), e, e));
    }

    #[test]
    fn power_laws_recover_their_exponent(a in -3.0f64..3.0, c in 0.01f64..100.0, k in 2usize..8) {
        let pts: Vec<(f64, f64)> = (0..k).map(|i| {
            let x = 20.0 * 2f64.powi(i as i32);
            (x, c * x.powf(a))
        }).collect();
        prop_assert!((loglog_slope(&pts).unwrap() - a).abs() < 1e-10);
    }

    #[test]
    fn quantiles_stay_within_the_data(v in prop::collection::vec(-1e3f64..1e3, 1..40), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (a, b) = (quantile(&v, q1.min(q2)), quantile(&v, q1.max(q2)));
        prop_assert!(lo <= a && a <= b && b <= hi);
        prop_assert_eq!(quantile(&v, 0.0), lo);
        prop_assert_eq!(quantile(&v, 1.0), hi);
    }

    #[test]
    fn whitening_round_trips(
        d in 1usize..5,
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        x in prop::collection::vec(-5.0f64..5.0, 4),
        n in 1.0f64..1e4,
    ) {
        let a = DMatrix::from_row_slice(d, d, &entries[..d * d]);
        let hess = &a * a.transpose() + DMatrix::identity(d, d);
        let center = DVector::from_element(d, 0.25);
        let model = QuadraticModel::new(center.clone(), hess, n);
        let fit = fit_laplace(&model, &center, 1.0, 4.0).unwrap();
        let x = DVector::from_column_slice(&x[..d]);
        let back = fit.unwhiten(&fit.whiten(&x));
        prop_assert!((back - &x).amax() < 1e-9 * (1.0 + x.amax()));
        let h = &x - &center;
        prop_assert!((fit.hv_norm(&h) - fit.whiten(&x).norm()).abs() < 1e-9 * (1.0 + fit.hv_norm(&h)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn multinomial_mean_identity(counts in prop::collection::vec(1u64..200, 2..6)) {
        let r = run_multinomial_exact(&MultinomialSpec { counts, mc_count: 500, seed: 3, restarts: 2 }).unwrap();
        prop_assert!(r.identity_residual <= 1e-11, "{}", r.identity_residual);
        prop_assert!(r.delta_mode_max_abs_err <= 1e-12, "{}", r.delta_mode_max_abs_err);
    }
}
