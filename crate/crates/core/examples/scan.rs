use panelq::*;
use panelq_testkit::{basis_fit, Instance};

fn main() {
    let tau = QuantileLevel::new(0.5).unwrap();
    for &(n, t_len) in &[(3usize, 10usize), (4, 8), (5, 6), (4, 10), (5, 8)] {
        for seed in 0..6u64 {
            let raw = panelq_testkit::random_instance(seed * 31 + 7, n, t_len, 1);
            let mut y = raw.y.clone();
            for (k, yv) in y.iter_mut().enumerate() {
                *yv = 0.5 + raw.x[k] + 0.8 * *yv;
            }
            let inst = Instance { n, t_len, p: 1, y: y.clone(), x: raw.x.clone() };
            let data = PanelDataset::from_values(n, t_len, 1, y, raw.x).unwrap();
            let w = WeightVector::ones(n);
            let fit = fit_weighted_feqr(&data, tau, &w).unwrap();
            let oracle = basis_fit(&inst, 0.5, w.values()).unwrap();
            let ok = (fit.objective - oracle.objective).abs() < 1e-6;
            let h = powell_bandwidth(tau, data.n_obs(), &fit.residuals).unwrap();
            let comps = estimate_components(&data, &fit, tau, h, VMode::Independent).unwrap();
            let sig = sandwich(&comps).unwrap();
            let sandwich_var = sig.sigma[(0,0)] / data.n_obs() as f64;
            let result = run_bootstrap(&data, tau, 200, &WeightScheme::exponential_unit(), 17).unwrap();
            let cov = bootstrap_covariance(&result).unwrap();
            let ratio = cov.sigma[(0,0)] / sandwich_var;
            println!("n={n} T={t_len} seed={seed} oracle_ok={ok} ratio={ratio:.3}");
        }
    }
}
