//! Experiment harness: reproducibility, CSV round trips and argument checks.

use skewlap::experiments::{
    check_bundled_models, dim_svg, dim_table_from_rows, geometric_grid, logistic_replicate, rate_svg, read_rows,
    run_dim_scan, run_mean_rate, run_prob_rate, table_from_rows, write_rows, DimRow, DimScanSpec, RateRow, RateSpec,
};
use skewlap::logreg::{build_posterior, LogRegDataset};
use skewlap::quadrature::{half_space_probability, QuadratureGrid};
use skewlap::{find_mode, fit_laplace, whitened_third, DMatrix, DVector, Error, ModeOptions, Representation};

fn small_rate() -> RateSpec {
    RateSpec {
        n_list: vec![20, 40, 80],
        replicates: 3,
        mc_count: 20_000,
        grid: Some(QuadratureGrid { nodes_per_axis: 80, half_width: 12.0 }),
        ..Default::default()
    }
}

fn small_dim() -> DimScanSpec {
    DimScanSpec { d_list: vec![3, 5], replicates: 3, seed: 4, mc_count: 2_000 }
}

#[test]
fn rate_runs_are_reproducible_across_thread_counts() {
    let spec = small_rate();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| run_mean_rate(&spec)).unwrap();
    let b = three.install(|| run_mean_rate(&spec)).unwrap();
    assert_eq!(a.rows, b.rows);
    let p = one.install(|| run_prob_rate(&spec)).unwrap();
    let q = three.install(|| run_prob_rate(&spec)).unwrap();
    assert_eq!(p.rows, q.rows);
    assert!(p.rows.iter().all(|r| r.mc_std_error > 0.0));
    assert!(a.rows.iter().all(|r| r.mc_std_error == 0.0));
}

#[test]
fn rate_csv_round_trip_gives_identical_slopes() {
    let table = run_mean_rate(&small_rate()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mean.csv");
    write_rows(&path, &table.rows).unwrap();
    let rows: Vec<RateRow> = read_rows(&path).unwrap();
    assert_eq!(rows, table.rows);
    let again = table_from_rows("mean-rate", rows).unwrap();
    assert_eq!(again.slope_uncorrected, table.slope_uncorrected);
    assert_eq!(again.slope_corrected, table.slope_corrected);
    let svg = rate_svg(&table);
    assert!(svg.starts_with("<svg") && svg.contains("skew-corrected"));
}

#[test]
fn dim_scan_round_trip_and_reproducibility() {
    let a = run_dim_scan(&small_dim()).unwrap();
    let b = run_dim_scan(&small_dim()).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.rows.len(), 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dim.csv");
    write_rows(&path, &a.rows).unwrap();
    let rows: Vec<DimRow> = read_rows(&path).unwrap();
    let again = dim_table_from_rows(rows).unwrap();
    assert_eq!(again.slope_ltv, a.slope_ltv);
    assert_eq!(again.flat_ratio_delta, a.flat_ratio_delta);
    assert!(dim_svg(&a).contains("n=2d²"));
}

#[test]
fn replicates_have_a_finite_map() {
    let rep = logistic_replicate(20, 2, 77).unwrap();
    assert!(rep.fit.mode.iter().all(|v| v.is_finite() && v.abs() < 1e3));
}

#[test]
fn symmetric_data_has_no_skew() {
    let xs = [0.3, -1.2, 0.8, 1.5, -0.4, 2.0];
    let ys = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
        let x2 = 0.5 * i as f64 - 1.0;
        flat.extend([x, x2]);
        labels.push(y);
        flat.extend([-x, -x2]);
        labels.push(y);
    }
    let data = LogRegDataset::new(DMatrix::from_row_slice(labels.len(), 2, &flat), labels).unwrap();
    let post = build_posterior(data, DMatrix::identity(2, 2)).unwrap();
    let res = find_mode(&post, &DVector::from_vec(vec![0.3, 0.3]), ModeOptions::default()).unwrap();
    assert!(res.mode.amax() < 1e-10);
    let fit = fit_laplace(&post, &res.mode, 1.0, 4.0).unwrap();
    assert!(whitened_third(&post, &fit, Representation::Dense).unwrap().frobenius_sq() < 1e-20);
    let a = DVector::from_vec(vec![1.0, 0.0]);
    let p = half_space_probability(&post, &fit, &a, &QuadratureGrid::default_for(2)).unwrap();
    assert!((p - 0.5).abs() < 1e-12);
}

#[test]
fn bad_specs_are_argument_errors() {
    let bad_d = RateSpec { d: 4, ..small_rate() };
    assert!(matches!(run_mean_rate(&bad_d), Err(Error::Unsupported(_))));
    let descending = RateSpec { n_list: vec![40, 20], ..small_rate() };
    assert!(run_prob_rate(&descending).unwrap_err().is_argument_error());
    let one_d = DimScanSpec { d_list: vec![5], ..small_dim() };
    assert!(run_dim_scan(&one_d).unwrap_err().is_argument_error());
    assert!(check_bundled_models(0, 0, 1e-4).unwrap_err().is_argument_error());
    assert_eq!(geometric_grid(20, 3), vec![20, 40, 80]);
}
