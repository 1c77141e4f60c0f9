//! Interior-point solver for the weighted fixed-effects quantile regression
//! program.
//!
//! The estimation problem is the linear program dual used by Frisch-Newton
//! quantile regression solvers (Portnoy and Koenker, 1997): with design rows
//! `(x_it', e_i')` stacked over observations and each row of unit `i` scaled
//! by its weight `omega_i`,
//!
//! ```text
//! max  y's   subject to  M'a = (1 - tau) M'1,  a in [0, 1]^(nT),
//! ```
//!
//! solved by a primal-dual path-following method with a fixed centering
//! parameter and a second-order (predictor-corrector) term. The key panel
//! structure is that the normal-equations matrix `M'DM` has an `n x n`
//! diagonal block for the unit intercepts, so each Newton step reduces to a
//! `p x p` Schur-complement solve after block elimination; one iteration
//! costs `O(nT p^2)`. The `nT x n` indicator block is never materialized.
//!
//! Both the primal iterate (started at `a = (1 - tau) 1`, which satisfies
//! the equality constraints exactly) and the dual iterate (started from a
//! least-squares fit with residual-split slacks, perturbed to be strictly
//! positive) remain feasible throughout, so the complementarity gap equals
//! the objective suboptimality bound used for the stopping rule.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{
    check_loss, compute_residuals, objective_from_residuals, verify_subgradient, PanelDataset,
    QuantileFit, QuantileLevel, SolverDiagnostics, WeightVector,
};

/// Interior-point controls. Defaults follow the usual Frisch-Newton
/// settings: a relative duality-gap tolerance of 1e-7, a step scaled to
/// 0.9995 of the distance to the boundary, and centering parameter 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence when `gap / nT <= tol * (1 + objective)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the step to the positivity boundary that is taken.
    pub step_scale: f64,
    /// Target complementarity reduction per iteration (sigma).
    pub centering: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
            step_scale: 0.9995,
            centering: 0.1,
        }
    }
}

/// Fit the weighted fixed-effects quantile regression with default controls.
///
/// Minimizes `(1/(nT)) sum_i omega_i sum_t rho_tau(y_it - alpha_i - x_it' beta)`.
/// With unit weights this is the plain fixed-effects estimator. A fit that
/// reaches the iteration cap is still returned, flagged `converged = false`.
pub fn fit_weighted_feqr(
    data: &PanelDataset,
    tau: QuantileLevel,
    weights: &WeightVector,
) -> Result<QuantileFit> {
    fit_weighted_feqr_with(data, tau, weights, &SolverConfig::default())
}

/// As [`fit_weighted_feqr`], with explicit solver controls.
pub fn fit_weighted_feqr_with(
    data: &PanelDataset,
    tau: QuantileLevel,
    weights: &WeightVector,
    config: &SolverConfig,
) -> Result<QuantileFit> {
    let (n, p) = (data.n_units(), data.n_covariates());
    if weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for n = {n}",
            weights.len()
        )));
    }
    if data.n_obs() <= n + p {
        return Err(Error::DegenerateDesign(format!(
            "nT = {} must exceed n + p = {}",
            data.n_obs(),
            n + p
        )));
    }

    let mut work = Workspace::new(data, tau, weights);
    let (theta, iterations, gap, converged) = work.solve(config)?;

    let alpha = theta[p..].to_vec();
    let beta = theta[..p].to_vec();
    let residuals = compute_residuals(data, &alpha, &beta);
    let objective = objective_from_residuals(data, tau, weights, &residuals);
    let mut fit = QuantileFit {
        tau,
        alpha,
        beta,
        residuals,
        objective,
        diagnostics: SolverDiagnostics {
            iterations,
            duality_gap: gap / data.n_obs() as f64,
            converged,
            subgradient_report: crate::panel::SubgradientReport {
                per_unit_score: Vec::new(),
                per_unit_bound: Vec::new(),
                aggregate_score_norm: 0.0,
                aggregate_bound: 0.0,
                satisfied: false,
            },
        },
    };
    fit.diagnostics.subgradient_report = verify_subgradient(&fit, data, tau, weights)?;
    Ok(fit)
}

/// Scaled problem data plus iterate storage. Observation `k = i*T + t` has
/// covariate row `omega_i * x_it`, indicator coefficient `omega_i` on unit
/// `i`, and response entry `c_k = -omega_i * y_it`.
struct Workspace {
    n: usize,
    t_len: usize,
    p: usize,
    n_obs: usize,
    tau: f64,
    /// Scaled covariates, row-major `nT x p`.
    xs: Vec<f64>,
    /// Scaled indicator coefficient per observation (`omega_i`).
    ws: Vec<f64>,
    /// Negated scaled responses.
    c: Vec<f64>,
    /// Equality-constraint right-hand side, `(1 - tau) * column sums`.
    b_beta: Vec<f64>,
    b_alpha: Vec<f64>,
}

/// Factored normal-equations matrix `M'DM` in block form: the `p x p`
/// Schur complement after eliminating the diagonal intercept block.
struct NormalFactor {
    /// Cholesky factor of the Schur complement (absent when `p = 0`).
    schur: Option<Cholesky<f64, Dyn>>,
    /// Cross blocks `u_i = sum_t d_k xs_k ws_k`, column-major `p x n`.
    cross: Vec<f64>,
    /// Diagonal intercept block `c_i = sum_t d_k ws_k^2`.
    diag: Vec<f64>,
}

impl Workspace {
    fn new(data: &PanelDataset, tau: QuantileLevel, weights: &WeightVector) -> Self {
        let n = data.n_units();
        let t_len = data.n_periods();
        let p = data.n_covariates();
        let n_obs = n * t_len;
        let mut xs = Vec::with_capacity(n_obs * p);
        let mut ws = Vec::with_capacity(n_obs);
        let mut c = Vec::with_capacity(n_obs);
        for i in 0..n {
            let w = weights.values()[i];
            for t in 0..t_len {
                for &xv in data.x_row(i, t) {
                    xs.push(w * xv);
                }
                ws.push(w);
                c.push(-w * data.y(i, t));
            }
        }
        let tau = tau.value();
        let mut b_beta = vec![0.0; p];
        let mut b_alpha = vec![0.0; n];
        for k in 0..n_obs {
            for (acc, &xv) in b_beta.iter_mut().zip(&xs[k * p..(k + 1) * p]) {
                *acc += (1.0 - tau) * xv;
            }
            b_alpha[k / t_len] += (1.0 - tau) * ws[k];
        }
        Self {
            n,
            t_len,
            p,
            n_obs,
            tau,
            xs,
            ws,
            c,
            b_beta,
            b_alpha,
        }
    }

    /// `out = M'v` accumulated into the (beta, alpha) blocks.
    fn design_t_times(&self, v: &[f64], out_beta: &mut [f64], out_alpha: &mut [f64]) {
        out_beta.fill(0.0);
        out_alpha.fill(0.0);
        for k in 0..self.n_obs {
            let vk = v[k];
            if vk != 0.0 {
                for (acc, &xv) in out_beta.iter_mut().zip(&self.xs[k * self.p..(k + 1) * self.p]) {
                    *acc += xv * vk;
                }
                out_alpha[k / self.t_len] += self.ws[k] * vk;
            }
        }
    }

    /// `out_k = (M theta)_k` for parameter blocks `(y_beta, y_alpha)`.
    fn design_times(&self, y_beta: &[f64], y_alpha: &[f64], out: &mut [f64]) {
        for k in 0..self.n_obs {
            let mut acc = self.ws[k] * y_alpha[k / self.t_len];
            for (&xv, &bv) in self.xs[k * self.p..(k + 1) * self.p].iter().zip(y_beta) {
                acc += xv * bv;
            }
            out[k] = acc;
        }
    }

    /// Assemble and factor `M'DM` for positive weights `d`.
    fn factor(&self, d: &[f64]) -> Option<NormalFactor> {
        let p = self.p;
        let mut diag = vec![0.0_f64; self.n];
        let mut cross = vec![0.0_f64; p * self.n];
        let mut xtdx = vec![0.0_f64; p * p];
        for k in 0..self.n_obs {
            let i = k / self.t_len;
            let dk = d[k];
            let wk = self.ws[k];
            diag[i] += dk * wk * wk;
            let row = &self.xs[k * p..(k + 1) * p];
            for a in 0..p {
                cross[i * p + a] += dk * wk * row[a];
                let da = dk * row[a];
                for b in a..p {
                    xtdx[a * p + b] += da * row[b];
                }
            }
        }
        if diag.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return None;
        }
        let schur = if p > 0 {
            let mut s = DMatrix::zeros(p, p);
            for a in 0..p {
                for b in a..p {
                    s[(a, b)] = xtdx[a * p + b];
                    s[(b, a)] = xtdx[a * p + b];
                }
            }
            for i in 0..self.n {
                let u = &cross[i * p..(i + 1) * p];
                let inv_c = 1.0 / diag[i];
                for a in 0..p {
                    for b in 0..p {
                        s[(a, b)] -= u[a] * inv_c * u[b];
                    }
                }
            }
            Some(Cholesky::new(s)?)
        } else {
            None
        };
        Some(NormalFactor {
            schur,
            cross,
            diag,
        })
    }
}

impl NormalFactor {
    /// Solve `M'DM [y_beta; y_alpha] = [r_beta; r_alpha]` by block elimination.
    fn solve(&self, p: usize, r_beta: &[f64], r_alpha: &[f64], y_beta: &mut [f64], y_alpha: &mut [f64]) {
        if p > 0 {
            let mut g = DVector::from_column_slice(r_beta);
            for (i, &ra) in r_alpha.iter().enumerate() {
                let u = &self.cross[i * p..(i + 1) * p];
                let scale = ra / self.diag[i];
                for a in 0..p {
                    g[a] -= u[a] * scale;
                }
            }
            let sol = self.schur.as_ref().expect("schur present for p > 0").solve(&g);
            y_beta.copy_from_slice(sol.as_slice());
        }
        for (i, &ra) in r_alpha.iter().enumerate() {
            let u = &self.cross[i * p..(i + 1) * p];
            let mut dot = 0.0;
            for a in 0..p {
                dot += u[a] * y_beta[a];
            }
            y_alpha[i] = (ra - dot) / self.diag[i];
        }
    }
}

/// Largest multiple of `dv` that keeps `v` nonnegative, scaled and capped at 1.
fn step_length(v: &[f64], dv: &[f64], scale: f64) -> f64 {
    let mut limit = f64::INFINITY;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            limit = limit.min(-vi / di);
        }
    }
    (scale * limit).min(1.0)
}

impl Workspace {
    fn solve(&mut self, config: &SolverConfig) -> Result<(Vec<f64>, usize, f64, bool)> {
        let (n, p, n_obs) = (self.n, self.p, self.n_obs);
        let tau = self.tau;

        // Primal start satisfies M'a = b exactly and is strictly interior.
        let mut x = vec![1.0 - tau; n_obs];
        let mut s = vec![tau; n_obs];

        // Dual start: least-squares coefficients, slacks from the residual
        // split, both perturbed upward to stay strictly positive. Adding the
        // same perturbation to both sides preserves z - w = c - My exactly.
        let mut y_beta = vec![0.0; p];
        let mut y_alpha = vec![0.0; n];
        {
            let factor = self.factor(&vec![1.0; n_obs]).ok_or_else(|| {
                Error::DegenerateDesign(
                    "normal equations are singular; covariates may be collinear with the unit indicators"
                        .into(),
                )
            })?;
            let mut r_beta = vec![0.0; p];
            let mut r_alpha = vec![0.0; n];
            self.design_t_times(&self.c.clone(), &mut r_beta, &mut r_alpha);
            factor.solve(p, &r_beta, &r_alpha, &mut y_beta, &mut y_alpha);
        }
        let mut my = vec![0.0; n_obs];
        self.design_times(&y_beta, &y_alpha, &mut my);
        let mut z = vec![0.0; n_obs];
        let mut w = vec![0.0; n_obs];
        let mut r_inf = 0.0_f64;
        for k in 0..n_obs {
            r_inf = r_inf.max((self.c[k] - my[k]).abs());
        }
        let perturb = 1e-6 * (1.0 + r_inf);
        for k in 0..n_obs {
            let r = self.c[k] - my[k];
            z[k] = r.max(0.0) + perturb;
            w[k] = (-r).max(0.0) + perturb;
        }

        let mut gap;
        let mut converged = false;
        let mut iterations = 0usize;

        // Direction and residual storage.
        let mut d = vec![0.0; n_obs];
        let mut r_d = vec![0.0; n_obs];
        let mut rhs_n = vec![0.0; n_obs];
        let mut rp_beta = vec![0.0; p];
        let mut rp_alpha = vec![0.0; n];
        let mut rhs_beta = vec![0.0; p];
        let mut rhs_alpha = vec![0.0; n];
        let mut dy_beta = vec![0.0; p];
        let mut dy_alpha = vec![0.0; n];
        let mut mdy = vec![0.0; n_obs];
        let mut dx_aff = vec![0.0; n_obs];
        let mut dz_aff = vec![0.0; n_obs];
        let mut dw_aff = vec![0.0; n_obs];
        let mut dx = vec![0.0; n_obs];
        let mut dz = vec![0.0; n_obs];
        let mut dw = vec![0.0; n_obs];

        loop {
            self.design_times(&y_beta, &y_alpha, &mut my);
            // theta = -y, so the scaled residual is My - c; weighted check
            // loss of the current coefficients (homogeneity folds omega in).
            let mut sum_obj = 0.0;
            for k in 0..n_obs {
                let e = my[k] - self.c[k];
                sum_obj += if e <= 0.0 {
                    e * (tau - 1.0)
                } else {
                    e * tau
                };
            }
            gap = dot(&x, &z) + dot(&s, &w);
            if gap <= config.tol * (1.0 + sum_obj) {
                converged = true;
                break;
            }
            if iterations >= config.max_iter {
                break;
            }

            for k in 0..n_obs {
                d[k] = 1.0 / (z[k] / x[k] + w[k] / s[k]);
                r_d[k] = self.c[k] - my[k] - z[k] + w[k];
            }
            let factor = match self.factor(&d) {
                Some(f) => f,
                // A failed factorization this deep means the scaled normal
                // matrix lost positive definiteness; return the current
                // iterate with its gap rather than abort.
                None => break,
            };

            // Primal residual b - M'x.
            self.design_t_times(&x, &mut rp_beta, &mut rp_alpha);
            for (rb, bb) in rp_beta.iter_mut().zip(&self.b_beta) {
                *rb = bb - *rb;
            }
            for (ra, ba) in rp_alpha.iter_mut().zip(&self.b_alpha) {
                *ra = ba - *ra;
            }

            // Predictor (affine) direction.
            for k in 0..n_obs {
                rhs_n[k] = d[k] * (r_d[k] + z[k] - w[k]);
            }
            self.design_t_times(&rhs_n, &mut rhs_beta, &mut rhs_alpha);
            for (acc, rp) in rhs_beta.iter_mut().zip(&rp_beta) {
                *acc += rp;
            }
            for (acc, rp) in rhs_alpha.iter_mut().zip(&rp_alpha) {
                *acc += rp;
            }
            factor.solve(p, &rhs_beta, &rhs_alpha, &mut dy_beta, &mut dy_alpha);
            self.design_times(&dy_beta, &dy_alpha, &mut mdy);
            for k in 0..n_obs {
                dx_aff[k] = d[k] * (mdy[k] - r_d[k] - z[k] + w[k]);
                dz_aff[k] = -z[k] * (dx_aff[k] / x[k] + 1.0);
                dw_aff[k] = -w[k] * (-dx_aff[k] / s[k] + 1.0);
            }

            // Corrector with fixed centering and second-order terms.
            let mu = config.centering * gap / (2.0 * n_obs as f64);
            for k in 0..n_obs {
                let corr = dx_aff[k] * dz_aff[k] / x[k] + dx_aff[k] * dw_aff[k] / s[k];
                rhs_n[k] = d[k] * (r_d[k] + z[k] - w[k] - mu * (1.0 / x[k] - 1.0 / s[k]) + corr);
            }
            self.design_t_times(&rhs_n, &mut rhs_beta, &mut rhs_alpha);
            for (acc, rp) in rhs_beta.iter_mut().zip(&rp_beta) {
                *acc += rp;
            }
            for (acc, rp) in rhs_alpha.iter_mut().zip(&rp_alpha) {
                *acc += rp;
            }
            factor.solve(p, &rhs_beta, &rhs_alpha, &mut dy_beta, &mut dy_alpha);
            self.design_times(&dy_beta, &dy_alpha, &mut mdy);
            for k in 0..n_obs {
                let corr = dx_aff[k] * dz_aff[k] / x[k] + dx_aff[k] * dw_aff[k] / s[k];
                dx[k] = d[k]
                    * (mdy[k] - r_d[k] - z[k] + w[k] + mu * (1.0 / x[k] - 1.0 / s[k]) - corr);
                dz[k] = mu / x[k] - z[k] - z[k] * dx[k] / x[k] - dx_aff[k] * dz_aff[k] / x[k];
                dw[k] = mu / s[k] - w[k] + w[k] * dx[k] / s[k] + dx_aff[k] * dw_aff[k] / s[k];
            }

            let mut delta_p = step_length(&x, &dx, config.step_scale);
            for (&si, &di) in s.iter().zip(&dx) {
                // ds = -dx
                if di > 0.0 {
                    delta_p = delta_p.min(config.step_scale * si / di);
                }
            }
            let delta_d = step_length(&z, &dz, config.step_scale).min(step_length(
                &w,
                &dw,
                config.step_scale,
            ));

            for k in 0..n_obs {
                x[k] += delta_p * dx[k];
                s[k] -= delta_p * dx[k];
                z[k] += delta_d * dz[k];
                w[k] += delta_d * dw[k];
            }
            for (yv, dv) in y_beta.iter_mut().zip(&dy_beta) {
                *yv += delta_d * dv;
            }
            for (yv, dv) in y_alpha.iter_mut().zip(&dy_alpha) {
                *yv += delta_d * dv;
            }
            iterations += 1;
        }

        let mut theta = Vec::with_capacity(p + n);
        theta.extend(y_beta.iter().map(|v| -v));
        theta.extend(y_alpha.iter().map(|v| -v));
        Ok((theta, iterations, gap, converged))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective value helper used by tests comparing candidate solutions.
pub fn objective_at(
    data: &PanelDataset,
    tau: QuantileLevel,
    weights: &WeightVector,
    alpha: &[f64],
    beta: &[f64],
) -> f64 {
    let residuals = compute_residuals(data, alpha, beta);
    let t_len = data.n_periods();
    let mut total = 0.0;
    for (i, &wv) in weights.values().iter().enumerate() {
        for t in 0..t_len {
            total += wv * check_loss(tau, residuals[i * t_len + t]);
        }
    }
    total / data.n_obs() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    #[test]
    fn median_of_single_unit_is_sample_median() {
        let data =
            PanelDataset::from_values(1, 5, 0, vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![]).unwrap();
        let w = WeightVector::ones(1);
        let fit = fit_weighted_feqr(&data, tau(0.5), &w).unwrap();
        assert!(fit.diagnostics.converged);
        // Any minimizer attains the median objective (1/5) * (2 + 1 + 0 + 1 + 2) * 0.5.
        assert!((fit.objective - 0.6).abs() < 1e-7, "objective {}", fit.objective);
        assert!((fit.alpha[0] - 3.0).abs() < 1e-4, "alpha {}", fit.alpha[0]);
    }

    #[test]
    fn rejects_underdetermined_problems() {
        let data = PanelDataset::from_values(2, 1, 1, vec![1.0, 2.0], vec![0.3, -0.4]).unwrap();
        let res = fit_weighted_feqr(&data, tau(0.5), &WeightVector::ones(2));
        assert!(matches!(res, Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn detects_collinear_covariate() {
        // Covariate constant within each unit: collinear with the indicators.
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = vec![2.0, 2.0, 2.0, -1.0, -1.0, -1.0];
        let data = PanelDataset::from_values(2, 3, 1, y, x).unwrap();
        let res = fit_weighted_feqr(&data, tau(0.5), &WeightVector::ones(2));
        assert!(matches!(res, Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn simple_slope_recovery() {
        // Exact linear data: residuals can be driven to zero.
        let x = vec![1.0, 2.0, 3.0, 4.0, 1.5, 2.5, 3.5, 4.5];
        let mut y = Vec::new();
        for i in 0..2 {
            for t in 0..4 {
                let alpha = if i == 0 { 1.0 } else { -0.5 };
                y.push(alpha + 2.0 * x[i * 4 + t]);
            }
        }
        let data = PanelDataset::from_values(2, 4, 1, y, x).unwrap();
        let fit = fit_weighted_feqr(&data, tau(0.25), &WeightVector::ones(2)).unwrap();
        assert!(fit.diagnostics.converged);
        assert!(fit.objective < 1e-7, "objective {}", fit.objective);
        assert!((fit.beta[0] - 2.0).abs() < 1e-4);
    }
}
