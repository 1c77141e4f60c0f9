//! Random-weighted bootstrap inference for the fixed-effects quantile
//! regression estimator.
//!
//! Each bootstrap replicate draws i.i.d. positive weights with unit mean and
//! variance — one weight per cross-sectional unit, so within-unit serial
//! dependence is preserved — and re-fits the weighted objective. The
//! empirical distribution of `beta* - beta_hat` across replicates yields
//! percentile intervals, a covariance estimate
//! `(1/B) sum_b (beta*_b - beta_hat)(beta*_b - beta_hat)'`, normal-theory
//! intervals from its standard errors, studentized-reference intervals from
//! bootstrap t statistics, and Wald tests of linear restrictions.
//!
//! Replicate `b` draws its weights from stream `b + 1` of a counter-based
//! generator keyed by the user seed, so results are byte-identical for any
//! worker count or execution order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernel::{estimate_components, powell_bandwidth, sandwich, VMode};
use crate::panel::{PanelDataset, QuantileFit, QuantileLevel, WeightVector};
use crate::solver::{fit_weighted_feqr_with, SolverConfig};
use crate::streams::substream;

/// Families of unit-level multiplier weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// Standard exponential draws (mean 1, variance 1).
    ExponentialUnit,
    /// Lognormal with `mu = -ln(2)/2`, `sigma^2 = ln(2)`, the unique
    /// lognormal with mean and variance both 1.
    LognormalUnit,
    /// Degenerate unit weights; every replicate reproduces the point fit.
    AllOnes,
}

/// A weight family plus a human-readable descriptor carried into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub kind: WeightKind,
    pub descriptor: String,
}

impl WeightScheme {
    pub fn new(kind: WeightKind) -> Self {
        let descriptor = match kind {
            WeightKind::ExponentialUnit => "exponential(1), mean=1 var=1",
            WeightKind::LognormalUnit => "lognormal(mu=-ln2/2, sigma^2=ln2), mean=1 var=1",
            WeightKind::AllOnes => "all-ones (degenerate diagnostic)",
        };
        Self {
            kind,
            descriptor: descriptor.to_string(),
        }
    }

    pub fn exponential_unit() -> Self {
        Self::new(WeightKind::ExponentialUnit)
    }

    pub fn lognormal_unit() -> Self {
        Self::new(WeightKind::LognormalUnit)
    }

    pub fn all_ones() -> Self {
        Self::new(WeightKind::AllOnes)
    }
}

/// Draw `n` i.i.d. weights from the scheme. Draws are rejected (and redrawn)
/// in the measure-zero event of a nonpositive floating-point value so the
/// positivity invariant of [`WeightVector`] always holds.
pub fn draw_weights<R: Rng>(n: usize, scheme: &WeightScheme, rng: &mut R) -> WeightVector {
    let omega = match scheme.kind {
        WeightKind::AllOnes => vec![1.0; n],
        WeightKind::ExponentialUnit => (0..n)
            .map(|_| loop {
                let v: f64 = Exp1.sample(rng);
                if v > 0.0 {
                    break v;
                }
            })
            .collect(),
        WeightKind::LognormalUnit => {
            let ln2 = std::f64::consts::LN_2;
            let dist = LogNormal::new(-0.5 * ln2, ln2.sqrt()).expect("valid lognormal");
            (0..n)
                .map(|_| loop {
                    let v: f64 = dist.sample(rng);
                    if v > 0.0 {
                        break v;
                    }
                })
                .collect()
        }
    };
    WeightVector::new(omega).expect("scheme draws are positive")
}

/// Controls for [`run_bootstrap_with`].
#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    pub solver: SolverConfig,
    /// Compute a kernel (Powell) standard error from each replicate fit, as
    /// needed by the studentized reference interval.
    pub replicate_ses: bool,
    /// Score-variance mode for those kernel standard errors.
    pub v_mode: VMode,
    /// Keep replicate intercept vectors (off by default; `B x n` storage).
    pub store_alphas: bool,
    /// Abort when more than this fraction of replicates fails.
    pub max_failure_fraction: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            replicate_ses: false,
            v_mode: VMode::Independent,
            store_alphas: false,
            max_failure_fraction: 0.01,
        }
    }
}

/// Point fit plus bootstrap replicates of the slope vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point_fit: QuantileFit,
    /// Surviving replicate slope vectors in replicate order, each length `p`.
    pub replicates: Vec<Vec<f64>>,
    /// Kernel standard errors per surviving replicate (same order), if
    /// requested.
    pub replicate_ses: Option<Vec<Vec<f64>>>,
    /// Replicate intercept vectors, if requested.
    pub replicate_alphas: Option<Vec<Vec<f64>>>,
    /// Number of replicates requested (B).
    pub requested: usize,
    /// Replicates dropped for non-convergence or covariance failure.
    pub failed: usize,
    pub scheme: WeightScheme,
    pub seed: u64,
}

impl BootstrapResult {
    /// Number of replicates entering downstream summaries.
    pub fn n_replicates(&self) -> usize {
        self.replicates.len()
    }

    pub fn replicate_alphas_stored(&self) -> bool {
        self.replicate_alphas.is_some()
    }

    /// Column `j` of the centered replicate matrix, `beta*_bj - beta_hat_j`.
    fn centered_column(&self, j: usize) -> Vec<f64> {
        let center = self.point_fit.beta[j];
        self.replicates.iter().map(|row| row[j] - center).collect()
    }
}

/// Run the weighted bootstrap with default options.
///
/// The point fit uses unit weights; replicate `b` refits under weights drawn
/// from stream `b + 1` keyed by `seed`. Replicates that fail to converge are
/// recorded and excluded from summaries; the run aborts when more than the
/// tolerated fraction fails.
pub fn run_bootstrap(
    data: &PanelDataset,
    tau: QuantileLevel,
    replicates: usize,
    scheme: &WeightScheme,
    seed: u64,
) -> Result<BootstrapResult> {
    run_bootstrap_with(data, tau, replicates, scheme, seed, &BootstrapOptions::default())
}

/// As [`run_bootstrap`] with explicit options.
pub fn run_bootstrap_with(
    data: &PanelDataset,
    tau: QuantileLevel,
    replicates: usize,
    scheme: &WeightScheme,
    seed: u64,
    options: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if replicates < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 bootstrap replicates, got {replicates}"
        )));
    }
    let n = data.n_units();
    let point_fit = fit_weighted_feqr_with(data, tau, &WeightVector::ones(n), &options.solver)?;
    let n_obs = data.n_obs() as f64;

    enum RepOutcome {
        Ok {
            beta: Vec<f64>,
            se: Option<Vec<f64>>,
            alpha: Option<Vec<f64>>,
        },
        Failed,
    }

    let outcomes: Vec<RepOutcome> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64 + 1);
            let omega = draw_weights(n, scheme, &mut rng);
            let fit = match fit_weighted_feqr_with(data, tau, &omega, &options.solver) {
                Ok(f) if f.diagnostics.converged => f,
                _ => return RepOutcome::Failed,
            };
            let se = if options.replicate_ses {
                match replicate_kernel_se(data, &fit, tau, options.v_mode, n_obs) {
                    Ok(se) => Some(se),
                    Err(_) => return RepOutcome::Failed,
                }
            } else {
                None
            };
            let alpha = options.store_alphas.then(|| fit.alpha.clone());
            RepOutcome::Ok {
                beta: fit.beta,
                se,
                alpha,
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(replicates);
    let mut ses = options.replicate_ses.then(Vec::new);
    let mut alphas = options.store_alphas.then(Vec::new);
    let mut failed = 0usize;
    for outcome in outcomes {
        match outcome {
            RepOutcome::Ok { beta, se, alpha } => {
                rows.push(beta);
                if let (Some(list), Some(se)) = (ses.as_mut(), se) {
                    list.push(se);
                }
                if let (Some(list), Some(a)) = (alphas.as_mut(), alpha) {
                    list.push(a);
                }
            }
            RepOutcome::Failed => failed += 1,
        }
    }
    if failed as f64 > options.max_failure_fraction * replicates as f64 {
        return Err(Error::TooManyFailedReplicates {
            failed,
            total: replicates,
            limit_percent: options.max_failure_fraction * 100.0,
        });
    }

    Ok(BootstrapResult {
        point_fit,
        replicates: rows,
        replicate_ses: ses,
        replicate_alphas: alphas,
        requested: replicates,
        failed,
        scheme: scheme.clone(),
        seed,
    })
}

/// Kernel sandwich standard errors of a (replicate) fit, on the `beta_hat`
/// scale: `sqrt(Sigma_jj / nT)`.
pub(crate) fn replicate_kernel_se(
    data: &PanelDataset,
    fit: &QuantileFit,
    tau: QuantileLevel,
    v_mode: VMode,
    n_obs: f64,
) -> Result<Vec<f64>> {
    let h = powell_bandwidth(tau, data.n_obs(), &fit.residuals)?;
    let comps = estimate_components(data, fit, tau, h, v_mode)?;
    let sigma = sandwich(&comps)?;
    Ok((0..fit.beta.len())
        .map(|j| (sigma.sigma[(j, j)].max(0.0) / n_obs).sqrt())
        .collect())
}

/// Interval construction methods reported by the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiMethod {
    /// Equal-tailed percentile interval from centered replicates.
    Percentile,
    /// Normal-theory interval from the bootstrap standard error.
    BootSe,
    /// Studentized reference interval from bootstrap t statistics.
    TRef,
    /// Asymptotic-theory interval from the kernel sandwich.
    At,
}

impl std::fmt::Display for CiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let label = match self {
            CiMethod::Percentile => "RWB.p",
            CiMethod::BootSe => "RWB.se",
            CiMethod::TRef => "RWB.t",
            CiMethod::At => "AT",
        };
        f.write_str(label)
    }
}

/// A coordinate-wise two-sided confidence interval at level `1 - lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub method: CiMethod,
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConfidenceInterval {
    pub fn new(method: CiMethod, level: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "confidence level must lie in (0, 1), got {level}"
            )));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "interval bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidInput(
                "interval lower bound exceeds upper bound".into(),
            ));
        }
        Ok(Self {
            method,
            level,
            lower,
            upper,
        })
    }

    pub fn contains(&self, j: usize, value: f64) -> bool {
        self.lower[j] <= value && value <= self.upper[j]
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }
}

/// Provenance of a covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceSource {
    Bootstrap,
    KernelSandwich,
}

/// A symmetric positive-semidefinite covariance matrix with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    /// Symmetric `p x p` matrix (symmetrized on construction).
    pub sigma: DMatrix<f64>,
    pub source: CovarianceSource,
    /// Tuning information: bandwidth, replicate count, and similar.
    pub metadata: String,
}

impl CovarianceEstimate {
    pub fn new(sigma: DMatrix<f64>, source: CovarianceSource, metadata: String) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "covariance must be square, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let sigma = (sigma.clone() + sigma.transpose()) * 0.5;
        Ok(Self {
            sigma,
            source,
            metadata,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Smallest eigenvalue; used to verify positive semidefiniteness.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.sigma
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Empirical quantile by the left-continuous order statistic at `ceil(B q)`.
fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    let k = ((b as f64 * q).ceil() as usize).clamp(1, b);
    sorted[k - 1]
}

fn check_tail_mass(n_replicates: usize, tail_prob: f64) -> Result<()> {
    if (n_replicates as f64) * tail_prob < 1.0 {
        return Err(Error::InsufficientReplicates {
            replicates: n_replicates,
            tail_prob,
        });
    }
    Ok(())
}

/// Percentile interval: coordinate-wise empirical quantiles of the centered
/// replicates `beta*_b - beta_hat`, shifted back by `beta_hat`.
pub fn percentile_ci(result: &BootstrapResult, level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let lambda = 1.0 - level;
    check_tail_mass(result.n_replicates(), lambda / 2.0)?;
    let p = result.point_fit.beta.len();
    let mut lower = Vec::with_capacity(p);
    let mut upper = Vec::with_capacity(p);
    for j in 0..p {
        let mut deltas = result.centered_column(j);
        deltas.sort_by(f64::total_cmp);
        let center = result.point_fit.beta[j];
        lower.push(center + order_statistic(&deltas, lambda / 2.0));
        upper.push(center + order_statistic(&deltas, 1.0 - lambda / 2.0));
    }
    ConfidenceInterval::new(CiMethod::Percentile, level, lower, upper)
}

/// Bootstrap covariance `(1/B) sum_b (beta*_b - beta_hat)(beta*_b - beta_hat)'`,
/// centered at the point estimate rather than the replicate mean.
pub fn bootstrap_covariance(result: &BootstrapResult) -> Result<CovarianceEstimate> {
    let b = result.n_replicates();
    if b < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 surviving replicates, got {b}"
        )));
    }
    let p = result.point_fit.beta.len();
    let mut sigma = DMatrix::zeros(p, p);
    for row in &result.replicates {
        for a in 0..p {
            let da = row[a] - result.point_fit.beta[a];
            for c in a..p {
                let dc = row[c] - result.point_fit.beta[c];
                sigma[(a, c)] += da * dc;
            }
        }
    }
    for a in 0..p {
        for c in a..p {
            let v = sigma[(a, c)] / b as f64;
            sigma[(a, c)] = v;
            sigma[(c, a)] = v;
        }
    }
    CovarianceEstimate::new(
        sigma,
        CovarianceSource::Bootstrap,
        format!(
            "B={} scheme={:?} seed={} failed={}",
            b, result.scheme.kind, result.seed, result.failed
        ),
    )
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Normal-theory interval `beta_j +/- z_{1-lambda/2} sqrt(Sigma_jj)`.
///
/// The covariance is interpreted on the `beta_hat` dispersion scale, which is
/// what [`bootstrap_covariance`] produces.
pub fn se_ci(
    fit: &QuantileFit,
    cov: &CovarianceEstimate,
    level: f64,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let p = fit.beta.len();
    if cov.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{} for p = {p}",
            cov.dim(),
            cov.dim()
        )));
    }
    let z = std_normal().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let slack = 1e-10 * cov.sigma.trace().abs().max(1.0);
    let mut lower = Vec::with_capacity(p);
    let mut upper = Vec::with_capacity(p);
    for j in 0..p {
        let var = cov.sigma[(j, j)];
        if var < -slack {
            return Err(Error::NegativeDiagonal {
                index: j,
                value: var,
            });
        }
        let se = var.max(0.0).sqrt();
        lower.push(fit.beta[j] - z * se);
        upper.push(fit.beta[j] + z * se);
    }
    ConfidenceInterval::new(CiMethod::BootSe, level, lower, upper)
}

/// Studentized reference interval. Bootstrap t statistics
/// `t*_b = (beta*_b - beta_hat) / se*_b` are formed per coordinate from the
/// replicate standard errors, and the interval is the equal-tailed
///
/// ```text
/// [ beta_hat - t*_{1-lambda/2} se_hat,  beta_hat - t*_{lambda/2} se_hat ]
/// ```
///
/// scaled by the original-sample standard error `se_hat`.
pub fn t_ref_ci(
    fit: &QuantileFit,
    result: &BootstrapResult,
    replicate_ses: &[Vec<f64>],
    se_hat: &[f64],
    level: f64,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let p = fit.beta.len();
    let b = result.n_replicates();
    if replicate_ses.len() != b {
        return Err(Error::DimensionMismatch(format!(
            "{} replicate SE rows for {b} replicates",
            replicate_ses.len()
        )));
    }
    if se_hat.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "se_hat has length {}, expected p = {p}",
            se_hat.len()
        )));
    }
    if se_hat.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::NonpositiveSe(
            "original-sample standard error must be positive".into(),
        ));
    }
    let lambda = 1.0 - level;
    check_tail_mass(b, lambda / 2.0)?;

    let mut lower = Vec::with_capacity(p);
    let mut upper = Vec::with_capacity(p);
    for j in 0..p {
        let mut tstats = Vec::with_capacity(b);
        for (row, ses) in result.replicates.iter().zip(replicate_ses) {
            let se = ses[j];
            if !(se > 0.0) {
                return Err(Error::NonpositiveSe(format!(
                    "replicate standard error {se} at coordinate {j}"
                )));
            }
            tstats.push((row[j] - fit.beta[j]) / se);
        }
        tstats.sort_by(f64::total_cmp);
        let t_lo = order_statistic(&tstats, lambda / 2.0);
        let t_hi = order_statistic(&tstats, 1.0 - lambda / 2.0);
        lower.push(fit.beta[j] - t_hi * se_hat[j]);
        upper.push(fit.beta[j] - t_lo * se_hat[j]);
    }
    ConfidenceInterval::new(CiMethod::TRef, level, lower, upper)
}

/// Wald test of the linear restriction `R beta = r`.
///
/// `W = (R beta_hat - r)' [R (Sigma / nt_scale) R']^{-1} (R beta_hat - r)`
/// with the p-value from the chi-squared upper tail with `q` degrees of
/// freedom. A bootstrap covariance is already on the `beta_hat` scale, so
/// `nt_scale = 1`; pass `nT` for a sandwich covariance on the `sqrt(nT)`
/// scale.
pub fn wald_test(
    restriction: &DMatrix<f64>,
    rhs: &DVector<f64>,
    fit: &QuantileFit,
    cov: &CovarianceEstimate,
    nt_scale: f64,
) -> Result<(f64, f64)> {
    let q = restriction.nrows();
    let p = fit.beta.len();
    if restriction.ncols() != p || rhs.len() != q || cov.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "restriction {}x{}, rhs {}, covariance {} for p = {p}",
            q,
            restriction.ncols(),
            rhs.len(),
            cov.dim()
        )));
    }
    if q == 0 || q > p {
        return Err(Error::InvalidInput(format!(
            "need 1 <= q <= p restrictions, got q = {q}"
        )));
    }
    if !(nt_scale > 0.0) {
        return Err(Error::InvalidInput(format!(
            "nt_scale must be positive, got {nt_scale}"
        )));
    }
    let beta = DVector::from_column_slice(&fit.beta);
    let discrepancy = restriction * beta - rhs;
    let middle = restriction * (&cov.sigma / nt_scale) * restriction.transpose();
    let chol = middle.clone().cholesky().ok_or_else(|| {
        Error::SingularRestriction("R Sigma R' is not positive definite".into())
    })?;
    let solved = chol.solve(&discrepancy);
    let statistic = discrepancy.dot(&solved);
    let p_value = 1.0 - ChiSquared::new(q as f64)
        .expect("q >= 1")
        .cdf(statistic.max(0.0));
    Ok((statistic.max(0.0), p_value))
}
