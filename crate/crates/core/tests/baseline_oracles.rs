use mortality_core::baselines::gbt::{best_split, fit_gbt, GbtParams, SplitCandidate};
use mortality_core::baselines::lasso::{fit_lasso, lasso_objective, soft_threshold};
use mortality_core::baselines::{fit_logistic, fit_random_forest, LogisticParams, RfParams};
use mortality_core::seed::derived_rng;
use mortality_core::synth::{generate, CohortSpec};
use mortality_core::{Execution, Matrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = derived_rng(seed, "baseline_oracles", 0);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn to_matrix(m: &DMatrix<f64>) -> Matrix {
    Matrix::new(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).unwrap()
}

/// Centred columns with `X^T X / n = I`, so the fit decouples per coordinate.
fn orthonormal_design(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut g = gaussian(n, d, seed);
    for mut c in g.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
    }
    g.qr().q() * (n as f64).sqrt()
}

#[test]
fn orthonormal_lasso_is_soft_thresholding() {
    for seed in 0..10 {
        let (n, d) = (60, 6);
        let x = orthonormal_design(n, d, seed);
        let y: DVector<f64> = &x * DVector::from_fn(d, |j, _| [2.0, -1.0, 0.3, 0.0, 0.6, -0.1][j]) + gaussian(n, 1, 100 + seed).column(0) * 0.5;
        let ybar = y.mean();
        let lambda = 0.25;
        let m = fit_lasso(&to_matrix(&x), y.as_slice(), lambda, 1e-14, 10_000).unwrap();
        for j in 0..d {
            let z = x.column(j).dot(&y.add_scalar(-ybar)) / n as f64;
            let want = soft_threshold(z, lambda);
            assert!((m.weights[j] - want).abs() < 1e-8, "seed {seed} w{j}: {} vs {want}", m.weights[j]);
        }
        assert!((m.intercept - ybar).abs() < 1e-8);
    }
}

#[test]
fn unpenalised_lasso_solves_the_normal_equations() {
    for seed in 0..10 {
        let (n, d) = (80, 5);
        let x = gaussian(n, d, seed);
        let y = gaussian(n, 1, 50 + seed).column(0).into_owned() + &x * DVector::from_element(d, 0.7);
        let a = x.clone().insert_column(0, 1.0);
        let beta = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &y));
        let m = fit_lasso(&to_matrix(&x), y.as_slice(), 0.0, 1e-13, 100_000).unwrap();
        assert!(m.converged);
        assert!((m.intercept - beta[0]).abs() < 1e-6);
        for j in 0..d {
            assert!((m.weights[j] - beta[j + 1]).abs() < 1e-6, "seed {seed} w{j}");
        }
    }
}

#[test]
fn lasso_objective_never_increases_across_sweeps() {
    for seed in 0..50 {
        let mut rng = derived_rng(seed, "lasso_monotone", 0);
        let (n, d) = (rng.random_range(10..40), rng.random_range(2..8));
        let x = gaussian(n, d, 1000 + seed);
        let y = gaussian(n, 1, 2000 + seed);
        let lambda = rng.random_range(0.0..0.5);
        let xm = to_matrix(&x);
        let m = fit_lasso(&xm, y.as_slice(), lambda, 1e-10, 500).unwrap();
        let start = lasso_objective(&xm, y.as_slice(), &vec![0.0; d], y.mean(), lambda);
        let mut prev = start;
        for &o in &m.objective_history {
            assert!(o <= prev + 1e-12 * prev.abs().max(1.0), "seed {seed}: {o} after {prev}");
            prev = o;
        }
    }
}

fn brute_force_split(x: &Matrix, grad: &[f64], hess: &[f64], p: &GbtParams) -> Option<SplitCandidate> {
    let gain = |gl: f64, hl: f64, gr: f64, hr: f64| {
        0.5 * (gl * gl / (hl + p.reg_lambda) + gr * gr / (hr + p.reg_lambda)
            - (gl + gr) * (gl + gr) / (hl + hr + p.reg_lambda))
            - p.gamma
    };
    let mut best: Option<SplitCandidate> = None;
    for f in 0..x.cols() {
        let mut values = x.column(f);
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..x.rows() {
                if x.get(i, f) < t {
                    gl += grad[i];
                    hl += hess[i];
                } else {
                    gr += grad[i];
                    hr += hess[i];
                }
            }
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let g = gain(gl, hl, gr, hr);
            if g > 0.0 && best.is_none_or(|b| g > b.gain) {
                best = Some(SplitCandidate { feature: f, threshold: t, gain: g });
            }
        }
    }
    best
}

#[test]
fn split_search_matches_exhaustive_enumeration() {
    for seed in 0..20 {
        let mut rng = derived_rng(seed, "gbt_oracle", 0);
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=4);
        // small integer grid: plenty of ties; eighths keep every sum exact
        let x = Matrix::new(n, d, (0..n * d).map(|_| f64::from(rng.random_range(0..4u8))).collect()).unwrap();
        let grad: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-8i8..=8)) / 8.0).collect();
        let hess: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1u8..=8)) / 8.0).collect();
        let params = GbtParams { min_child_weight: 0.25, reg_lambda: 1.0, ..GbtParams::default() };
        let rows: Vec<usize> = (0..n).collect();
        let got = best_split(&x, &rows, &grad, &hess, &params);
        let want = brute_force_split(&x, &grad, &hess, &params);
        assert_eq!(got, want, "instance {seed}");
    }
}

#[test]
fn boosting_and_forest_agree_across_execution_modes() {
    let (ds, _) = generate(&CohortSpec { n_rows: 300, missing_rate: 0.0, with_identifier: false, ..CohortSpec::paper_shape(3) }).unwrap();
    let x = ds.feature_matrix();
    let y = ds.labels().unwrap();
    let gbt = |execution| fit_gbt(&x, y, &GbtParams { n_trees: 10, execution, ..GbtParams::default() }).unwrap();
    assert_eq!(gbt(Execution::Sequential), gbt(Execution::Parallel));
    let rf = |execution| {
        fit_random_forest(&x, y, &RfParams { n_trees: 15, seed: 9, execution, ..RfParams::default() }).unwrap()
    };
    assert_eq!(rf(Execution::Sequential), rf(Execution::Parallel));
}

#[test]
fn logistic_recovers_generating_weights_at_large_n() {
    let truth = vec![1.0, -0.8, 0.6, -0.4, 0.3];
    let spec = CohortSpec {
        n_rows: 50_000,
        n_informative: truth.len(),
        n_noise: 0,
        coefficients: truth.clone(),
        intercept: None,
        missing_rate: 0.0,
        positive_fraction: 0.3,
        days: 1,
        day_signal_gain: 0.0,
        seed: 4,
        with_identifier: false,
    };
    let (ds, gt) = generate(&spec).unwrap();
    let m = fit_logistic(&ds.feature_matrix(), ds.labels().unwrap(), &LogisticParams { epochs: 3000, ..LogisticParams::default() }).unwrap();
    for (w, t) in m.weights.iter().zip(&truth) {
        assert!(((w - t) / t).abs() < 0.10, "fitted {w} vs true {t}");
    }
    assert!((m.intercept - gt.intercept).abs() < 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn every_tree_is_well_formed(seed in any::<u64>(), depth in 1usize..5) {
        let (ds, _) = generate(&CohortSpec { n_rows: 120, n_noise: 2, missing_rate: 0.0, with_identifier: false, ..CohortSpec::paper_shape(seed) }).unwrap();
        let m = fit_gbt(&ds.feature_matrix(), ds.labels().unwrap(), &GbtParams { n_trees: 3, max_depth: depth, ..GbtParams::default() }).unwrap();
        prop_assert!(m.trees.iter().all(|t| t.is_well_formed()));
        let p = m.predict_proba(&ds.feature_matrix()).unwrap();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
