//! Solver validation against the basis-enumeration reference: on tiny
//! continuous instances the exact optimum interpolates n + p observations,
//! so enumerating all such exact fits yields the true minimum.

use panelq::{
    evaluate_objective, fit_weighted_feqr, verify_subgradient, PanelDataset, QuantileFit,
    QuantileLevel, WeightVector,
};
use panelq_testkit::{basis_fit, random_instance, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_panel(inst: &Instance) -> PanelDataset {
    PanelDataset::from_values(inst.n, inst.t_len, inst.p, inst.y.clone(), inst.x.clone()).unwrap()
}

fn tau(v: f64) -> QuantileLevel {
    QuantileLevel::new(v).unwrap()
}

#[test]
fn objective_matches_basis_enumeration_on_random_instances() {
    let taus = [0.25, 0.5, 0.75];
    let mut checked = 0;
    for seed in 0..40u64 {
        let mut sizes = ChaCha8Rng::seed_from_u64(900 + seed);
        let n = sizes.gen_range(1..=3usize);
        let t_len = sizes.gen_range(3..=5usize);
        if n * t_len <= n + 1 {
            continue;
        }
        let inst = random_instance(seed, n, t_len, 1);
        let data = to_panel(&inst);
        let weights = WeightVector::ones(n);
        let tau_v = taus[seed as usize % 3];
        let oracle = basis_fit(&inst, tau_v, weights.values()).unwrap();
        let fit = fit_weighted_feqr(&data, tau(tau_v), &weights).unwrap();
        assert!(fit.diagnostics.converged, "seed {seed} did not converge");
        assert!(
            (fit.objective - oracle.objective).abs() < 1e-6,
            "seed {seed}: solver {} vs oracle {}",
            fit.objective,
            oracle.objective
        );
        assert!(
            fit.diagnostics.subgradient_report.satisfied,
            "seed {seed}: subgradient bounds violated"
        );
        checked += 1;
    }
    assert!(checked >= 35, "only {checked} instances checked");
}

#[test]
fn weighted_objective_matches_basis_enumeration() {
    for seed in 0..20u64 {
        let inst = random_instance(1000 + seed, 2, 4, 1);
        let data = to_panel(&inst);
        let mut wrng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let w: Vec<f64> = (0..2).map(|_| wrng.gen_range(0.2..3.0)).collect();
        let weights = WeightVector::new(w).unwrap();
        let oracle = basis_fit(&inst, 0.5, weights.values()).unwrap();
        let fit = fit_weighted_feqr(&data, tau(0.5), &weights).unwrap();
        assert!(fit.diagnostics.converged);
        assert!(
            (fit.objective - oracle.objective).abs() < 1e-6,
            "seed {seed}: solver {} vs oracle {}",
            fit.objective,
            oracle.objective
        );
    }
}

#[test]
fn solver_beats_random_candidates() {
    for seed in 0..100u64 {
        let inst = random_instance(3000 + seed, 2, 4, 1);
        let data = to_panel(&inst);
        let weights = WeightVector::ones(2);
        let fit = fit_weighted_feqr(&data, tau(0.5), &weights).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        for _ in 0..1000 {
            let alpha: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let beta: Vec<f64> = (0..1).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let candidate = evaluate_objective(&data, tau(0.5), &weights, &alpha, &beta).unwrap();
            assert!(
                fit.objective <= candidate + 1e-9,
                "seed {seed}: fit {} beaten by candidate {}",
                fit.objective,
                candidate
            );
        }
    }
}

#[test]
fn intercepts_only_matches_per_unit_sample_quantile() {
    for seed in 0..20u64 {
        let mut sizes = ChaCha8Rng::seed_from_u64(700 + seed);
        let n = sizes.gen_range(2..=4usize);
        let t_len = sizes.gen_range(4..=9usize);
        let inst = random_instance(500 + seed, n, t_len, 0);
        let data = to_panel(&inst);
        let weights = WeightVector::ones(n);
        for &tv in &[0.25, 0.5, 0.75] {
            let fit = fit_weighted_feqr(&data, tau(tv), &weights).unwrap();
            assert!(fit.diagnostics.converged);
            // Per-unit sample quantile with the order statistic at ceil(T q).
            let mut quantiles = Vec::new();
            for i in 0..n {
                let mut ys: Vec<f64> = (0..t_len).map(|t| inst.y_at(i, t)).collect();
                ys.sort_by(f64::total_cmp);
                let k = ((t_len as f64 * tv).ceil() as usize).max(1);
                quantiles.push(ys[k - 1]);
            }
            let q_obj = evaluate_objective(&data, tau(tv), &weights, &quantiles, &[]).unwrap();
            assert!(
                (fit.objective - q_obj).abs() <= 1e-7 * (1.0 + q_obj.abs()),
                "seed {seed} tau {tv}: solver {} vs sample-quantile {}",
                fit.objective,
                q_obj
            );
        }
    }
}

#[test]
fn equivariance_under_scaling_and_shifts() {
    for seed in 0..50u64 {
        let inst = random_instance(6000 + seed, 3, 6, 2);
        let data = to_panel(&inst);
        let weights = WeightVector::ones(3);
        let fit = fit_weighted_feqr(&data, tau(0.3), &weights).unwrap();
        assert!(fit.diagnostics.converged);
        let coef_tol = 1e-5;

        // y -> c * y scales coefficients by c.
        let c = 2.5;
        let scaled_y: Vec<f64> = inst.y.iter().map(|v| c * v).collect();
        let scaled =
            PanelDataset::from_values(3, 6, 2, scaled_y, inst.x.clone()).unwrap();
        let fit_c = fit_weighted_feqr(&scaled, tau(0.3), &weights).unwrap();
        for (a, b) in fit_c.alpha.iter().zip(&fit.alpha) {
            assert!((a - c * b).abs() < coef_tol * (1.0 + b.abs()), "seed {seed}");
        }
        for (a, b) in fit_c.beta.iter().zip(&fit.beta) {
            assert!((a - c * b).abs() < coef_tol * (1.0 + b.abs()), "seed {seed}");
        }

        // y -> y + a shifts intercepts only.
        let shift = -1.75;
        let shifted_y: Vec<f64> = inst.y.iter().map(|v| v + shift).collect();
        let shifted = PanelDataset::from_values(3, 6, 2, shifted_y, inst.x.clone()).unwrap();
        let fit_s = fit_weighted_feqr(&shifted, tau(0.3), &weights).unwrap();
        for (a, b) in fit_s.alpha.iter().zip(&fit.alpha) {
            assert!((a - (b + shift)).abs() < coef_tol * (1.0 + b.abs()), "seed {seed}");
        }
        for (a, b) in fit_s.beta.iter().zip(&fit.beta) {
            assert!((a - b).abs() < coef_tol * (1.0 + b.abs()), "seed {seed}");
        }

        // Adding d to covariate column 0 leaves slopes fixed and shifts each
        // intercept by -d * beta_0.
        let d = 0.8;
        let mut moved_x = inst.x.clone();
        for row in 0..18 {
            moved_x[row * 2] += d;
        }
        let moved = PanelDataset::from_values(3, 6, 2, inst.y.clone(), moved_x).unwrap();
        let fit_m = fit_weighted_feqr(&moved, tau(0.3), &weights).unwrap();
        for (a, b) in fit_m.beta.iter().zip(&fit.beta) {
            assert!((a - b).abs() < coef_tol * (1.0 + b.abs()), "seed {seed}");
        }
        for (a, b) in fit_m.alpha.iter().zip(&fit.alpha) {
            assert!(
                (a - (b - d * fit.beta[0])).abs() < coef_tol * (1.0 + b.abs()),
                "seed {seed}"
            );
        }
    }
}

#[test]
fn subgradient_report_validates_oracle_fit_and_rejects_perturbation() {
    // Positive covariates make a slope perturbation push nearly every
    // residual negative, inflating the aggregate covariate score far above
    // its bound.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, t_len, p) = (2, 8, 1);
    let x: Vec<f64> = (0..n * t_len).map(|_| rng.gen_range(0.5..2.0)).collect();
    let y: Vec<f64> = (0..n * t_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let inst = Instance {
        n,
        t_len,
        p,
        y,
        x,
    };
    let data = to_panel(&inst);
    let weights = WeightVector::ones(n);
    let oracle = basis_fit(&inst, 0.5, weights.values()).unwrap();

    let exact = QuantileFit::from_parameters(
        &data,
        tau(0.5),
        &weights,
        oracle.alpha.clone(),
        oracle.beta.clone(),
    )
    .unwrap();
    let report = verify_subgradient(&exact, &data, tau(0.5), &weights).unwrap();
    assert!(report.satisfied, "oracle fit must satisfy the bounds");

    let perturbed = QuantileFit::from_parameters(
        &data,
        tau(0.5),
        &weights,
        oracle.alpha,
        vec![oracle.beta[0] + 1.0],
    )
    .unwrap();
    let bad = verify_subgradient(&perturbed, &data, tau(0.5), &weights).unwrap();
    assert!(!bad.satisfied, "perturbed fit must violate the bounds");
}

#[test]
fn even_t_median_attains_interval_objective() {
    // With an even number of periods the minimizer set is an interval; any
    // point of it attains the same objective as the sample median.
    let data =
        PanelDataset::from_values(1, 4, 0, vec![1.0, 2.0, 3.0, 4.0], vec![]).unwrap();
    let weights = WeightVector::ones(1);
    let fit = fit_weighted_feqr(&data, tau(0.5), &weights).unwrap();
    let median_obj = evaluate_objective(&data, tau(0.5), &weights, &[2.0], &[]).unwrap();
    assert!((fit.objective - median_obj).abs() < 1e-7);
    assert!(fit.alpha[0] >= 2.0 - 1e-4 && fit.alpha[0] <= 3.0 + 1e-4);
}
