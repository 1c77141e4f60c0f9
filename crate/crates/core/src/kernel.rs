//! Density-weighted sandwich covariance for the fixed-effects quantile
//! regression estimator.
//!
//! The asymptotic covariance of the slope estimator has the sandwich form
//! `Sigma = Gamma^{-1} V Gamma^{-1}`, where with kernel weights
//! `k_it = phi(e_it / h) / h` on the fitted residuals:
//!
//! ```text
//! g_i     = sum_t k_it x_it / sum_t k_it
//! Gamma   = (1/(nT)) sum_i sum_t k_it x_it (x_it - g_i)'
//! V       = tau (1 - tau) (1/(nT)) sum_i sum_t (x_it - g_i)(x_it - g_i)'      (independent)
//!         = (1/n) sum_i T^{-1} sum_{t,s} (x_it - g_i)(x_is - g_i)' psi_it psi_is   (long-run)
//! ```
//!
//! with the long-run form truncated at lag `floor(T^(1/3))` under a Bartlett
//! taper. The bandwidth default follows the Hall and Sheather (1988) rule
//! rescaled by a Silverman-style residual dispersion, as in Powell-type
//! kernel standard errors for quantile regression.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bootstrap::{CiMethod, ConfidenceInterval, CovarianceEstimate, CovarianceSource};
use crate::error::{Error, Result};
use crate::panel::{score, PanelDataset, QuantileFit, QuantileLevel};

/// Kernel family for the density weights. Only the Gaussian kernel is
/// provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Gaussian,
}

/// Construction of the score variance `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VMode {
    /// `tau(1-tau)` times the average outer product of centered covariates;
    /// correct when scores are serially independent within units.
    Independent,
    /// Within-unit long-run variance of the summed score, Bartlett-tapered
    /// and truncated at lag `floor(T^(1/3))`.
    WithinUnitLongRun,
}

/// Estimated sandwich ingredients.
#[derive(Debug, Clone)]
pub struct SandwichComponents {
    /// Density-weighted covariate means, row-major `n x p`.
    pub g: Vec<f64>,
    pub gamma: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub bandwidth: f64,
    pub kernel: KernelKind,
    pub v_mode: VMode,
    n: usize,
    p: usize,
}

impl SandwichComponents {
    pub fn g_row(&self, i: usize) -> &[f64] {
        &self.g[i * self.p..(i + 1) * self.p]
    }

    pub fn n_units(&self) -> usize {
        self.n
    }
}

fn gaussian_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Hall-Sheather bandwidth rule at sample size `m`:
///
/// ```text
/// h = m^(-1/3) z_{1-a/2}^(2/3) [ 1.5 phi(z_tau)^2 / (2 z_tau^2 + 1) ]^(1/3)
/// ```
///
/// where `z_q` is the standard normal quantile. `alpha_level` is the
/// nominal test size entering the rule; 0.05 is the customary default.
pub fn hall_sheather_bandwidth(tau: QuantileLevel, m: usize, alpha_level: f64) -> f64 {
    let normal = std_normal();
    let z_a = normal.inverse_cdf(1.0 - alpha_level / 2.0);
    let z_t = normal.inverse_cdf(tau.value());
    let bracket = 1.5 * gaussian_pdf(z_t).powi(2) / (2.0 * z_t * z_t + 1.0);
    (m as f64).powf(-1.0 / 3.0) * z_a.powf(2.0 / 3.0) * bracket.cbrt()
}

/// Residual-scale bandwidth for kernel density weights: the Hall-Sheather
/// quantile-space width mapped through the normal quantile function and
/// scaled by `min(sd, IQR / 1.34)` of the residuals, the convention used by
/// kernel ("ker") standard errors for quantile regression.
pub fn powell_bandwidth(tau: QuantileLevel, m: usize, residuals: &[f64]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::InvalidInput("no residuals for bandwidth".into()));
    }
    let mut h0 = hall_sheather_bandwidth(tau, m, 0.05);
    while tau.value() - h0 <= 0.0 || tau.value() + h0 >= 1.0 {
        h0 /= 2.0;
    }
    let normal = std_normal();
    let width = normal.inverse_cdf(tau.value() + h0) - normal.inverse_cdf(tau.value() - h0);

    let len = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / len;
    let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
        / (len - 1.0).max(1.0);
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let order = |q: f64| {
        let k = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len());
        sorted[k - 1]
    };
    let iqr = order(0.75) - order(0.25);
    let scale = var.sqrt().min(iqr / 1.34);
    let h = width * scale;
    if h.is_finite() && h > 0.0 {
        Ok(h)
    } else {
        Err(Error::InvalidInput(format!(
            "degenerate residual scale produced bandwidth {h}"
        )))
    }
}

/// Estimate the sandwich components at a fitted model.
pub fn estimate_components(
    data: &PanelDataset,
    fit: &QuantileFit,
    tau: QuantileLevel,
    bandwidth: f64,
    v_mode: VMode,
) -> Result<SandwichComponents> {
    let (n, t_len, p) = (data.n_units(), data.n_periods(), data.n_covariates());
    if fit.residuals.len() != n * t_len || fit.beta.len() != p {
        return Err(Error::DimensionMismatch(
            "fit does not match panel dimensions".into(),
        ));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }

    let n_obs = (n * t_len) as f64;
    let mut weights = vec![0.0_f64; n * t_len];
    for (wv, &e) in weights.iter_mut().zip(&fit.residuals) {
        *wv = gaussian_pdf(e / bandwidth) / bandwidth;
    }

    let mut g = vec![0.0_f64; n * p];
    for i in 0..n {
        let mut mass = 0.0;
        for t in 0..t_len {
            let k = weights[i * t_len + t];
            mass += k;
            for (acc, &xv) in g[i * p..(i + 1) * p].iter_mut().zip(data.x_row(i, t)) {
                *acc += k * xv;
            }
        }
        if !(mass > 1e-300) {
            return Err(Error::ZeroKernelMass { unit: i });
        }
        for acc in &mut g[i * p..(i + 1) * p] {
            *acc /= mass;
        }
    }

    let mut gamma = DMatrix::zeros(p, p);
    for i in 0..n {
        let gi = &g[i * p..(i + 1) * p];
        for t in 0..t_len {
            let k = weights[i * t_len + t];
            let x = data.x_row(i, t);
            for a in 0..p {
                for b in 0..p {
                    gamma[(a, b)] += k * x[a] * (x[b] - gi[b]) / n_obs;
                }
            }
        }
    }

    let mut v = DMatrix::zeros(p, p);
    match v_mode {
        VMode::Independent => {
            let scale = tau.value() * (1.0 - tau.value());
            for i in 0..n {
                let gi = &g[i * p..(i + 1) * p];
                for t in 0..t_len {
                    let x = data.x_row(i, t);
                    for a in 0..p {
                        for b in 0..p {
                            v[(a, b)] += scale * (x[a] - gi[a]) * (x[b] - gi[b]) / n_obs;
                        }
                    }
                }
            }
        }
        VMode::WithinUnitLongRun => {
            let lag = (t_len as f64).cbrt().floor() as usize;
            for i in 0..n {
                let gi = &g[i * p..(i + 1) * p];
                let scores: Vec<f64> = (0..t_len)
                    .map(|t| score(tau, fit.residuals[i * t_len + t]))
                    .collect();
                for t in 0..t_len {
                    let upper = (t + lag).min(t_len - 1);
                    for s in t..=upper {
                        let l = s - t;
                        let taper = 1.0 - l as f64 / (lag + 1) as f64;
                        let xt = data.x_row(i, t);
                        let xs = data.x_row(i, s);
                        let cross = scores[t] * scores[s] * taper / (n as f64 * t_len as f64);
                        for a in 0..p {
                            for b in 0..p {
                                let term = cross * (xt[a] - gi[a]) * (xs[b] - gi[b]);
                                v[(a, b)] += term;
                                if l > 0 {
                                    v[(b, a)] += term;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // Symmetrize away rounding asymmetry.
    let v = (v.clone() + v.transpose()) * 0.5;

    Ok(SandwichComponents {
        g,
        gamma,
        v,
        bandwidth,
        kernel: KernelKind::Gaussian,
        v_mode,
        n,
        p,
    })
}

/// Maximal acceptable condition number for inverting `Gamma`.
const GAMMA_CONDITION_CAP: f64 = 1e12;

/// Assemble `Sigma = Gamma^{-1} V Gamma^{-1}` on the `sqrt(nT)` scale.
pub fn sandwich(components: &SandwichComponents) -> Result<CovarianceEstimate> {
    let p = components.gamma.nrows();
    if p == 0 {
        return CovarianceEstimate::new(
            DMatrix::zeros(0, 0),
            CovarianceSource::KernelSandwich,
            describe(components),
        );
    }
    let svd = components.gamma.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > GAMMA_CONDITION_CAP {
        return Err(Error::SingularGamma(format!(
            "condition number {:.3e} exceeds cap {GAMMA_CONDITION_CAP:.0e}",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let gamma_inv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::SingularGamma(e.to_string()))?;
    let sigma = &gamma_inv * &components.v * gamma_inv.transpose();
    CovarianceEstimate::new(
        sigma,
        CovarianceSource::KernelSandwich,
        describe(components),
    )
}

fn describe(components: &SandwichComponents) -> String {
    format!(
        "kernel=gaussian bandwidth={:.6e} vmode={:?}",
        components.bandwidth, components.v_mode
    )
}

/// Asymptotic-theory confidence interval `beta_j +/- z_{1-l/2} sqrt(Sigma_jj / nT)`.
pub fn at_ci(
    fit: &QuantileFit,
    sigma: &CovarianceEstimate,
    n_obs: usize,
    level: f64,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if n_obs == 0 {
        return Err(Error::InvalidInput("nT must be positive".into()));
    }
    let p = fit.beta.len();
    if sigma.sigma.nrows() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{} for p = {p}",
            sigma.sigma.nrows(),
            sigma.sigma.ncols()
        )));
    }
    let lambda = 1.0 - level;
    let z = std_normal().inverse_cdf(1.0 - lambda / 2.0);
    let mut lower = Vec::with_capacity(p);
    let mut upper = Vec::with_capacity(p);
    for j in 0..p {
        let var = sigma.sigma[(j, j)];
        if var < -1e-10 * sigma.sigma.trace().abs().max(1.0) {
            return Err(Error::NegativeDiagonal {
                index: j,
                value: var,
            });
        }
        let se = (var.max(0.0) / n_obs as f64).sqrt();
        lower.push(fit.beta[j] - z * se);
        upper.push(fit.beta[j] + z * se);
    }
    ConfidenceInterval::new(CiMethod::At, level, lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::WeightVector;

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    #[test]
    fn hall_sheather_closed_form_at_median() {
        // z_tau = 0 so the bracket is 1.5 / (2 pi); at alpha = 0.05 the
        // leading quantile is z_{0.975}.
        let m = 250;
        let z975: f64 = 1.959963984540054;
        let expected = (m as f64).powf(-1.0 / 3.0)
            * z975.powf(2.0 / 3.0)
            * (1.5 / (2.0 * std::f64::consts::PI)).cbrt();
        let h = hall_sheather_bandwidth(tau(0.5), m, 0.05);
        assert!((h - expected).abs() < 1e-9, "h = {h}, expected {expected}");
        // Passing alpha = 0.10 reproduces the z_{0.95} variant.
        let z95: f64 = 1.6448536269514722;
        let expected10 = (m as f64).powf(-1.0 / 3.0)
            * z95.powf(2.0 / 3.0)
            * (1.5 / (2.0 * std::f64::consts::PI)).cbrt();
        let h10 = hall_sheather_bandwidth(tau(0.5), m, 0.10);
        assert!((h10 - expected10).abs() < 1e-9);
    }

    #[test]
    fn hall_sheather_decreases_in_m_and_is_symmetric() {
        assert!(
            hall_sheather_bandwidth(tau(0.5), 1000, 0.05)
                < hall_sheather_bandwidth(tau(0.5), 100, 0.05)
        );
        for &tv in &[0.1, 0.25, 0.4] {
            let a = hall_sheather_bandwidth(tau(tv), 500, 0.05);
            let b = hall_sheather_bandwidth(tau(1.0 - tv), 500, 0.05);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_covariate_gives_g_equal_c_and_zero_gamma() {
        let c = 3.25;
        let y = vec![0.4, -0.2, 1.1, 0.9, -0.5, 0.3];
        let x = vec![c; 6];
        let data = PanelDataset::from_values(2, 3, 1, y, x).unwrap();
        let weights = WeightVector::ones(2);
        let fit = crate::panel::QuantileFit::from_parameters(
            &data,
            tau(0.5),
            &weights,
            vec![0.0, 0.0],
            vec![0.1],
        )
        .unwrap();
        let comps = estimate_components(&data, &fit, tau(0.5), 0.7, VMode::Independent).unwrap();
        for i in 0..2 {
            assert!((comps.g_row(i)[0] - c).abs() < 1e-12);
        }
        assert!(comps.gamma[(0, 0)].abs() < 1e-12);
        assert!(comps.v[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn independent_v_reduces_to_moment_when_g_is_zero() {
        // Antisymmetric covariates with mirrored residuals force g_i = 0, so
        // V must equal tau(1-tau) times the second moment of x.
        let x = vec![1.5, -1.5, 0.7, -0.7, 2.0, -2.0];
        let y = vec![0.0; 6];
        let data = PanelDataset::from_values(1, 6, 1, y, x.clone()).unwrap();
        let weights = WeightVector::ones(1);
        // Residuals equal y since alpha = 0, beta = 0; all residuals zero
        // gives equal kernel weights, hence g = mean(x) = 0.
        let fit = crate::panel::QuantileFit::from_parameters(
            &data,
            tau(0.3),
            &weights,
            vec![0.0],
            vec![0.0],
        )
        .unwrap();
        let comps = estimate_components(&data, &fit, tau(0.3), 1.0, VMode::Independent).unwrap();
        assert!(comps.g_row(0)[0].abs() < 1e-12);
        let second_moment = x.iter().map(|v| v * v).sum::<f64>() / 6.0;
        let expected = 0.3 * 0.7 * second_moment;
        assert!((comps.v[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_kernel_mass_detected() {
        let y = vec![100.0, 120.0, 130.0, -90.0, -100.0, -110.0];
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let data = PanelDataset::from_values(2, 3, 1, y, x).unwrap();
        let weights = WeightVector::ones(2);
        let fit = crate::panel::QuantileFit::from_parameters(
            &data,
            tau(0.5),
            &weights,
            vec![0.0, 0.0],
            vec![0.0],
        )
        .unwrap();
        let res = estimate_components(&data, &fit, tau(0.5), 1e-4, VMode::Independent);
        assert!(matches!(res, Err(Error::ZeroKernelMass { .. })));
    }

    #[test]
    fn sandwich_identity_and_scaling() {
        let comps = SandwichComponents {
            g: vec![0.0; 2],
            gamma: DMatrix::identity(2, 2),
            v: DMatrix::identity(2, 2),
            bandwidth: 1.0,
            kernel: KernelKind::Gaussian,
            v_mode: VMode::Independent,
            n: 1,
            p: 2,
        };
        let sigma = sandwich(&comps).unwrap();
        assert!((sigma.sigma[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((sigma.sigma[(0, 1)]).abs() < 1e-14);

        let comps2 = SandwichComponents {
            gamma: DMatrix::identity(2, 2) * 2.0,
            ..comps
        };
        let sigma2 = sandwich(&comps2).unwrap();
        assert!((sigma2.sigma[(0, 0)] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn sandwich_rejects_singular_gamma() {
        let comps = SandwichComponents {
            g: vec![0.0; 2],
            gamma: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            v: DMatrix::identity(2, 2),
            bandwidth: 1.0,
            kernel: KernelKind::Gaussian,
            v_mode: VMode::Independent,
            n: 1,
            p: 2,
        };
        assert!(matches!(sandwich(&comps), Err(Error::SingularGamma(_))));
    }
}
