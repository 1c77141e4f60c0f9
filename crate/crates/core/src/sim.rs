//! Monte Carlo designs and coverage studies.
//!
//! Static designs generate
//!
//! ```text
//! y_it = alpha_i + x_it + (1 + gamma x_it) eps_it,
//! alpha_i ~ U[0,1],  x_it = 0.3 alpha_i + chi2(3),
//! ```
//!
//! with `eps_it` either i.i.d. chi-squared(4) or an ARMA(1,1) in chi-squared(4)
//! innovations (`rho = 0.4`, `theta = 0.5`, 100-period burn-in). The true
//! slope at quantile `tau` is `1 + gamma Q_eps(tau)` with `Q_eps` the marginal
//! stationary quantile — in closed form for the i.i.d. case and from a seeded
//! long-simulation oracle for the ARMA case. The dynamic design generates
//! `y_it = alpha_i + 0.4 y_it-1 + eps_it` from `y_i,-50 = 0`, discards the
//! first 50 periods, regresses on the lagged response, and has true slope
//! 0.4 at every quantile.
//!
//! A coverage study repeats, per seeded repetition: generate, fit, bootstrap,
//! build all four confidence intervals, and record whether each contains the
//! truth. Repetition `r` draws from generation stream `2r` under the design
//! seed and a bootstrap seed derived from `(seed, r, tau index)`, so reports
//! are byte-identical for any worker count.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};

use crate::bootstrap::{
    bootstrap_covariance, percentile_ci, replicate_kernel_se, run_bootstrap_with, se_ci, t_ref_ci,
    BootstrapOptions, CiMethod, WeightScheme,
};
use crate::error::{Error, Result};
use crate::kernel::{at_ci, estimate_components, powell_bandwidth, sandwich, VMode};
use crate::panel::{PanelDataset, QuantileLevel};
use crate::streams::{derive_seed, substream};

/// Model family of a simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignFamily {
    StaticLocation,
    StaticLocationScale,
    Dynamic,
}

/// Innovation process of a simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnovationKind {
    IidChiSq4,
    ArmaChiSq,
}

/// A fully specified data-generating process plus study settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub family: DesignFamily,
    pub innovations: InnovationKind,
    pub n: usize,
    pub t_len: usize,
    /// Scale coefficient: 0 for location designs, 0.2 for location-scale.
    pub gamma: f64,
    /// AR coefficient (both the ARMA innovations and the dynamic model).
    pub rho: f64,
    /// MA coefficient of the ARMA innovations.
    pub theta: f64,
    pub taus: Vec<f64>,
    pub reps: usize,
    /// Bootstrap replicates per repetition.
    pub b: usize,
    pub level: f64,
    pub seed: u64,
}

impl SimulationDesign {
    fn base(family: DesignFamily, innovations: InnovationKind, gamma: f64, n: usize, t_len: usize) -> Self {
        Self {
            family,
            innovations,
            n,
            t_len,
            gamma,
            rho: 0.4,
            theta: 0.5,
            taus: vec![0.25, 0.5, 0.75],
            reps: 200,
            b: 299,
            level: 0.90,
            seed: 0,
        }
    }

    /// Static location model with i.i.d. errors (`gamma = 0`).
    pub fn location(n: usize, t_len: usize) -> Self {
        Self::base(DesignFamily::StaticLocation, InnovationKind::IidChiSq4, 0.0, n, t_len)
    }

    /// Static location-scale model with i.i.d. errors (`gamma = 0.2`).
    pub fn location_scale(n: usize, t_len: usize) -> Self {
        Self::base(
            DesignFamily::StaticLocationScale,
            InnovationKind::IidChiSq4,
            0.2,
            n,
            t_len,
        )
    }

    /// Static location model with ARMA(1,1) errors.
    pub fn location_dependent(n: usize, t_len: usize) -> Self {
        Self::base(DesignFamily::StaticLocation, InnovationKind::ArmaChiSq, 0.0, n, t_len)
    }

    /// Static location-scale model with ARMA(1,1) errors.
    pub fn location_scale_dependent(n: usize, t_len: usize) -> Self {
        Self::base(
            DesignFamily::StaticLocationScale,
            InnovationKind::ArmaChiSq,
            0.2,
            n,
            t_len,
        )
    }

    /// Dynamic autoregressive model with i.i.d. errors.
    pub fn dynamic_ar(n: usize, t_len: usize) -> Self {
        Self::base(DesignFamily::Dynamic, InnovationKind::IidChiSq4, 0.0, n, t_len)
    }

    pub fn with_taus(mut self, taus: Vec<f64>) -> Self {
        self.taus = taus;
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_bootstrap(mut self, b: usize) -> Self {
        self.b = b;
        self
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t_len == 0 {
            return Err(Error::InvalidInput("n and T must be positive".into()));
        }
        if self.family == DesignFamily::StaticLocation && self.gamma != 0.0 {
            return Err(Error::InvalidInput(
                "location designs require gamma = 0".into(),
            ));
        }
        if self.family == DesignFamily::Dynamic && self.innovations != InnovationKind::IidChiSq4 {
            return Err(Error::InvalidInput(
                "the dynamic design uses i.i.d. innovations".into(),
            ));
        }
        if self.taus.is_empty() {
            return Err(Error::InvalidInput("taus must be non-empty".into()));
        }
        for &t in &self.taus {
            QuantileLevel::new(t)?;
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be positive".into()));
        }
        if self.b < 2 {
            return Err(Error::InvalidInput("need at least 2 bootstrap replicates".into()));
        }
        Ok(())
    }

    /// Score-variance mode matched to the innovation process.
    fn v_mode(&self) -> VMode {
        match self.innovations {
            InnovationKind::IidChiSq4 => VMode::Independent,
            InnovationKind::ArmaChiSq => VMode::WithinUnitLongRun,
        }
    }
}

/// A generated panel with its data-generating truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedPanel {
    pub data: PanelDataset,
    /// Raw unit effects `alpha_i` (location part, before the quantile shift).
    pub alpha_true: Vec<f64>,
    /// True slope vector per requested quantile, as `(tau, beta)` pairs.
    pub beta_true: Vec<(f64, Vec<f64>)>,
}

impl GeneratedPanel {
    pub fn beta_true_at(&self, tau: f64) -> Option<&[f64]> {
        self.beta_true
            .iter()
            .find(|(t, _)| *t == tau)
            .map(|(_, b)| b.as_slice())
    }
}

fn draw_positive<R: Rng, D: Distribution<f64>>(dist: &D, rng: &mut R) -> f64 {
    loop {
        let v = dist.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

fn uniform01_positive<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.gen();
        if v > 0.0 {
            return v;
        }
    }
}

/// ARMA(1,1) recursion `eps_t = rho eps_{t-1} + eta_t + theta eta_{t-1}` run
/// from zero initial conditions over the given innovation sequence.
pub(crate) fn arma_path(rho: f64, theta: f64, eta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(eta.len());
    let mut prev_eps = 0.0;
    let mut prev_eta = 0.0;
    for &e in eta {
        let eps = rho * prev_eps + e + theta * prev_eta;
        out.push(eps);
        prev_eps = eps;
        prev_eta = e;
    }
    out
}

/// AR(1) recursion `y_t = alpha + rho y_{t-1} + eps_t` from `y = 0`.
pub(crate) fn ar1_path(alpha: f64, rho: f64, eps: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(eps.len());
    let mut prev = 0.0;
    for &e in eps {
        let y = alpha + rho * prev + e;
        out.push(y);
        prev = y;
    }
    out
}

/// Burn-in length for the ARMA innovation process in the static designs.
const ARMA_BURN_IN: usize = 100;
/// Discarded leading periods of the dynamic design.
const DYNAMIC_BURN_IN: usize = 50;
/// Draws used by the stationary-quantile oracle.
const ORACLE_DRAWS: usize = 10_000_000;
/// Fixed seed of the stationary-quantile oracle; the truth is a property of
/// the process, not of any particular study.
const ORACLE_SEED: u64 = 0x0a5e_11a7_1234_5678;

/// Marginal stationary quantiles of the ARMA(1,1) chi-squared(4) innovation
/// process, estimated from one long simulated path after burn-in.
pub fn arma_marginal_quantiles(
    rho: f64,
    theta: f64,
    taus: &[f64],
    draws: usize,
    burn_in: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = substream(seed, 0);
    let chi4 = ChiSquared::new(4.0).expect("valid degrees of freedom");
    let mut prev_eps = 0.0;
    let mut prev_eta = 0.0;
    let mut sample = Vec::with_capacity(draws);
    for k in 0..burn_in + draws {
        let eta = draw_positive(&chi4, &mut rng);
        let eps = rho * prev_eps + eta + theta * prev_eta;
        prev_eps = eps;
        prev_eta = eta;
        if k >= burn_in {
            sample.push(eps);
        }
    }
    sample.sort_unstable_by(f64::total_cmp);
    taus.iter()
        .map(|&q| {
            let k = ((draws as f64 * q).ceil() as usize).clamp(1, draws);
            sample[k - 1]
        })
        .collect()
}

fn cached_arma_quantile(rho: f64, theta: f64, tau: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (rho.to_bits(), theta.to_bits(), tau.to_bits());
    let mut map = cache.lock().expect("oracle cache poisoned");
    if let Some(&v) = map.get(&key) {
        return v;
    }
    let v = arma_marginal_quantiles(rho, theta, &[tau], ORACLE_DRAWS, 1000, ORACLE_SEED)[0];
    map.insert(key, v);
    v
}

/// Marginal quantile of the innovation process of a static design.
pub fn innovation_quantile(design: &SimulationDesign, tau: f64) -> f64 {
    match design.innovations {
        InnovationKind::IidChiSq4 => ChiSquaredDist::new(4.0)
            .expect("valid degrees of freedom")
            .inverse_cdf(tau),
        InnovationKind::ArmaChiSq => cached_arma_quantile(design.rho, design.theta, tau),
    }
}

/// True slope vectors per design quantile.
pub fn true_slopes(design: &SimulationDesign) -> Vec<(f64, Vec<f64>)> {
    design
        .taus
        .iter()
        .map(|&tau| {
            let beta = match design.family {
                DesignFamily::Dynamic => design.rho,
                _ => 1.0 + design.gamma * innovation_quantile(design, tau),
            };
            (tau, vec![beta])
        })
        .collect()
}

/// Generate a static-design panel.
pub fn generate_static<R: Rng>(design: &SimulationDesign, rng: &mut R) -> Result<GeneratedPanel> {
    design.validate()?;
    if design.family == DesignFamily::Dynamic {
        return Err(Error::InvalidInput(
            "generate_static requires a static family".into(),
        ));
    }
    let (n, t_len) = (design.n, design.t_len);
    let chi3 = ChiSquared::new(3.0).expect("valid degrees of freedom");
    let chi4 = ChiSquared::new(4.0).expect("valid degrees of freedom");

    let alpha_true: Vec<f64> = (0..n).map(|_| uniform01_positive(rng)).collect();
    let mut x = Vec::with_capacity(n * t_len);
    for &a in &alpha_true {
        for _ in 0..t_len {
            x.push(0.3 * a + draw_positive(&chi3, rng));
        }
    }
    let mut y = Vec::with_capacity(n * t_len);
    for i in 0..n {
        let eps: Vec<f64> = match design.innovations {
            InnovationKind::IidChiSq4 => {
                (0..t_len).map(|_| draw_positive(&chi4, rng)).collect()
            }
            InnovationKind::ArmaChiSq => {
                let eta: Vec<f64> = (0..ARMA_BURN_IN + t_len)
                    .map(|_| draw_positive(&chi4, rng))
                    .collect();
                arma_path(design.rho, design.theta, &eta)
                    .split_off(ARMA_BURN_IN)
            }
        };
        for t in 0..t_len {
            let xv = x[i * t_len + t];
            y.push(alpha_true[i] + xv + (1.0 + design.gamma * xv) * eps[t]);
        }
    }
    let data = PanelDataset::from_values(n, t_len, 1, y, x)?;
    Ok(GeneratedPanel {
        data,
        alpha_true,
        beta_true: true_slopes(design),
    })
}

/// Generate a dynamic-design panel; the single covariate is the lagged
/// response.
pub fn generate_dynamic<R: Rng>(design: &SimulationDesign, rng: &mut R) -> Result<GeneratedPanel> {
    design.validate()?;
    if design.family != DesignFamily::Dynamic {
        return Err(Error::InvalidInput(
            "generate_dynamic requires the dynamic family".into(),
        ));
    }
    let (n, t_len) = (design.n, design.t_len);
    let chi4 = ChiSquared::new(4.0).expect("valid degrees of freedom");

    let alpha_true: Vec<f64> = (0..n).map(|_| uniform01_positive(rng)).collect();
    let mut y = Vec::with_capacity(n * t_len);
    let mut x = Vec::with_capacity(n * t_len);
    for &a in &alpha_true {
        // Periods -50..=T from y_{-51} := 0; keep y_0..y_T, regress on the lag.
        let eps: Vec<f64> = (0..DYNAMIC_BURN_IN + t_len + 1)
            .map(|_| draw_positive(&chi4, rng))
            .collect();
        let path = ar1_path(a, design.rho, &eps);
        let kept = &path[DYNAMIC_BURN_IN..];
        for t in 1..=t_len {
            y.push(kept[t]);
            x.push(kept[t - 1]);
        }
    }
    let data = PanelDataset::from_values(n, t_len, 1, y, x)?;
    Ok(GeneratedPanel {
        data,
        alpha_true,
        beta_true: true_slopes(design),
    })
}

/// Generate from whichever family the design specifies.
pub fn generate<R: Rng>(design: &SimulationDesign, rng: &mut R) -> Result<GeneratedPanel> {
    match design.family {
        DesignFamily::Dynamic => generate_dynamic(design, rng),
        _ => generate_static(design, rng),
    }
}

/// One (quantile, method) cell of a coverage report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub tau: f64,
    pub method: CiMethod,
    pub coverage: f64,
    pub avg_width: f64,
    pub reps_used: usize,
    /// Binomial Monte Carlo standard error `sqrt(c (1-c) / reps)`.
    pub mc_stderr: f64,
}

/// Per-quantile comparison of the bootstrap standard error against the
/// Monte Carlo dispersion of the point estimator (slope coordinate 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub tau: f64,
    pub sd_beta_hat: f64,
    pub median_boot_se: f64,
    pub ratio: f64,
}

/// Aggregated coverage study output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub design: SimulationDesign,
    /// True slope per quantile used for containment, including any
    /// simulation-oracle values.
    pub beta_true: Vec<(f64, Vec<f64>)>,
    pub cells: Vec<CoverageCell>,
    pub calibration: Vec<CalibrationCell>,
}

const METHODS: [CiMethod; 4] = [
    CiMethod::Percentile,
    CiMethod::BootSe,
    CiMethod::TRef,
    CiMethod::At,
];

struct TauOutcome {
    contains: [bool; 4],
    width: [f64; 4],
    beta_hat: f64,
    boot_se: f64,
}

/// Run the full coverage study described by the design.
///
/// Deterministic given the design (including its seed) regardless of the
/// rayon worker count: repetitions are computed in parallel but aggregated
/// in repetition order.
pub fn run_coverage_study(design: &SimulationDesign) -> Result<CoverageReport> {
    design.validate()?;
    let truths = true_slopes(design);
    let scheme = WeightScheme::exponential_unit();
    let options = BootstrapOptions {
        replicate_ses: true,
        v_mode: design.v_mode(),
        ..BootstrapOptions::default()
    };
    let n_obs = design.n * design.t_len;

    let rep_results: Vec<Result<Vec<TauOutcome>>> = (0..design.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(design.seed, 2 * rep as u64);
            let panel = generate(design, &mut rng)?;
            let mut outcomes = Vec::with_capacity(design.taus.len());
            for (ti, &tau_v) in design.taus.iter().enumerate() {
                let tau = QuantileLevel::new(tau_v)?;
                let bseed = derive_seed(design.seed, (rep as u64) * 1024 + ti as u64 + 1);
                let result =
                    run_bootstrap_with(&panel.data, tau, design.b, &scheme, bseed, &options)?;
                let fit = &result.point_fit;

                // Kernel sandwich at the point fit: feeds both the
                // asymptotic-theory interval and the studentized reference.
                let h = powell_bandwidth(tau, n_obs, &fit.residuals)?;
                let comps =
                    estimate_components(&panel.data, fit, tau, h, design.v_mode())?;
                let sigma_at = sandwich(&comps)?;
                let se_hat =
                    replicate_kernel_se(&panel.data, fit, tau, design.v_mode(), n_obs as f64)?;

                let cov_b = bootstrap_covariance(&result)?;
                let rwb_p = percentile_ci(&result, design.level)?;
                let rwb_se = se_ci(fit, &cov_b, design.level)?;
                let rwb_t = t_ref_ci(
                    fit,
                    &result,
                    result
                        .replicate_ses
                        .as_ref()
                        .expect("replicate SEs requested"),
                    &se_hat,
                    design.level,
                )?;
                let at = at_ci(fit, &sigma_at, n_obs, design.level)?;

                let truth = &truths[ti].1;
                let intervals = [&rwb_p, &rwb_se, &rwb_t, &at];
                let mut contains = [false; 4];
                let mut width = [0.0; 4];
                for (m, ci) in intervals.iter().enumerate() {
                    contains[m] = truth
                        .iter()
                        .enumerate()
                        .all(|(j, &b)| ci.contains(j, b));
                    width[m] = (0..truth.len()).map(|j| ci.width(j)).sum::<f64>()
                        / truth.len() as f64;
                }
                outcomes.push(TauOutcome {
                    contains,
                    width,
                    beta_hat: fit.beta[0],
                    boot_se: cov_b.sigma[(0, 0)].max(0.0).sqrt(),
                });
            }
            Ok(outcomes)
        })
        .collect();

    let mut reps_data = Vec::with_capacity(design.reps);
    for (rep, res) in rep_results.into_iter().enumerate() {
        match res {
            Ok(outcomes) => reps_data.push(outcomes),
            Err(e) => {
                return Err(Error::RepFailed {
                    rep,
                    source: Box::new(e),
                })
            }
        }
    }

    let reps_used = reps_data.len();
    let mut cells = Vec::new();
    let mut calibration = Vec::new();
    for (ti, &tau_v) in design.taus.iter().enumerate() {
        for (m, method) in METHODS.iter().enumerate() {
            let count = reps_data.iter().filter(|r| r[ti].contains[m]).count();
            let coverage = count as f64 / reps_used as f64;
            let avg_width =
                reps_data.iter().map(|r| r[ti].width[m]).sum::<f64>() / reps_used as f64;
            cells.push(CoverageCell {
                tau: tau_v,
                method: *method,
                coverage,
                avg_width,
                reps_used,
                mc_stderr: (coverage * (1.0 - coverage) / reps_used as f64).sqrt(),
            });
        }
        if reps_used >= 2 {
            let betas: Vec<f64> = reps_data.iter().map(|r| r[ti].beta_hat).collect();
            let mean = betas.iter().sum::<f64>() / reps_used as f64;
            let sd = (betas.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>()
                / (reps_used - 1) as f64)
                .sqrt();
            let mut ses: Vec<f64> = reps_data.iter().map(|r| r[ti].boot_se).collect();
            ses.sort_by(f64::total_cmp);
            let median = if reps_used % 2 == 1 {
                ses[reps_used / 2]
            } else {
                0.5 * (ses[reps_used / 2 - 1] + ses[reps_used / 2])
            };
            calibration.push(CalibrationCell {
                tau: tau_v,
                sd_beta_hat: sd,
                median_boot_se: median,
                ratio: median / sd,
            });
        }
    }

    Ok(CoverageReport {
        design: design.clone(),
        beta_true: truths,
        cells,
        calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_validation() {
        let mut d = SimulationDesign::location(10, 10);
        assert!(d.validate().is_ok());
        d.gamma = 0.2;
        assert!(d.validate().is_err());
        let mut d = SimulationDesign::dynamic_ar(10, 10);
        d.innovations = InnovationKind::ArmaChiSq;
        assert!(d.validate().is_err());
        let d = SimulationDesign::location(10, 10).with_taus(vec![]);
        assert!(d.validate().is_err());
    }

    #[test]
    fn location_truth_is_one_everywhere() {
        let design = SimulationDesign::location(5, 8).with_taus(vec![0.1, 0.5, 0.9]);
        for (_, beta) in true_slopes(&design) {
            assert_eq!(beta, vec![1.0]);
        }
    }

    #[test]
    fn location_scale_truth_uses_chi_squared_quantile() {
        let design = SimulationDesign::location_scale(5, 8).with_taus(vec![0.5]);
        let truths = true_slopes(&design);
        // 1 + 0.2 * Q_{chi2(4)}(0.5) with the median 3.35669.
        assert!((truths[0].1[0] - 1.67134).abs() < 1e-4);
    }

    #[test]
    fn dynamic_truth_is_rho() {
        let design = SimulationDesign::dynamic_ar(5, 8).with_taus(vec![0.25, 0.75]);
        for (_, beta) in true_slopes(&design) {
            assert_eq!(beta, vec![0.4]);
        }
    }

    #[test]
    fn ar1_path_zero_noise_fixed_point() {
        let eps = vec![0.0; 200];
        let path = ar1_path(1.0, 0.4, &eps);
        let last = *path.last().unwrap();
        assert!((last - 1.0 / 0.6).abs() < 1e-9, "limit {last}");
    }

    #[test]
    fn generated_panels_satisfy_invariants() {
        let design = SimulationDesign::location_scale_dependent(4, 6);
        let mut rng = substream(3, 0);
        let panel = generate(&design, &mut rng).unwrap();
        assert_eq!(panel.data.n_units(), 4);
        assert_eq!(panel.data.n_periods(), 6);
        assert_eq!(panel.data.n_covariates(), 1);
        assert!(panel.data.x_values().iter().all(|&v| v > 0.0));
        assert!(panel.alpha_true.iter().all(|&a| a > 0.0 && a < 1.0));

        let design = SimulationDesign::dynamic_ar(3, 7);
        let mut rng = substream(4, 0);
        let panel = generate(&design, &mut rng).unwrap();
        // Covariate is the lagged response.
        for i in 0..3 {
            for t in 1..7 {
                assert_eq!(panel.data.x_row(i, t)[0], panel.data.y(i, t - 1));
            }
        }
    }
}
