//! Reference oracles for the panelq test suites.
//!
//! Everything here is deliberately written from first principles — direct
//! enumeration, quadrature, closed-form distribution functions — and shares
//! no code with the library under test. Brute-force routines are only
//! intended for tiny instances.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A tiny balanced panel instance in plain storage: `y` is row-major
/// `n x t_len`, `x` is row-major `n x t_len x p`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub n: usize,
    pub t_len: usize,
    pub p: usize,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

impl Instance {
    pub fn y_at(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.t_len + t]
    }

    pub fn x_at(&self, i: usize, t: usize) -> &[f64] {
        let k = (i * self.t_len + t) * self.p;
        &self.x[k..k + self.p]
    }
}

/// Standard-normal variate via Box-Muller from explicit uniform bits, so the
/// stream depends only on ChaCha and not on any distribution crate.
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1 = uniform01(rng);
        let u2 = uniform01(rng);
        if u1 > 0.0 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random bits in [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Continuous random instance with standard-normal covariates and responses;
/// almost surely in general position.
pub fn random_instance(seed: u64, n: usize, t_len: usize, p: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = (0..n * t_len).map(|_| std_normal(&mut rng)).collect();
    let x = (0..n * t_len * p).map(|_| std_normal(&mut rng)).collect();
    Instance { n, t_len, p, y, x }
}

/// Check loss written independently of the library.
pub fn check_loss_ref(tau: f64, u: f64) -> f64 {
    if u <= 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Normalized weighted objective `(1/(nT)) sum_i w_i sum_t rho_tau(e_it)`.
pub fn objective_ref(
    inst: &Instance,
    tau: f64,
    weights: &[f64],
    alpha: &[f64],
    beta: &[f64],
) -> f64 {
    let mut total = 0.0;
    for i in 0..inst.n {
        for t in 0..inst.t_len {
            let xb: f64 = inst.x_at(i, t).iter().zip(beta).map(|(a, b)| a * b).sum();
            let e = inst.y_at(i, t) - alpha[i] - xb;
            total += weights[i] * check_loss_ref(tau, e);
        }
    }
    total / (inst.n * inst.t_len) as f64
}

/// An exact-fit candidate solution found by basis enumeration.
#[derive(Debug, Clone)]
pub struct BasisFit {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub objective: f64,
}

/// Brute-force global minimizer of the weighted fixed-effects quantile
/// regression objective by enumerating every subset of `n + p` observations,
/// solving the exact interpolation system through them, and keeping the
/// candidate with the smallest full-sample objective. On data in general
/// position this enumerates all basic solutions of the underlying linear
/// program, so the best candidate is the exact optimum.
pub fn basis_fit(inst: &Instance, tau: f64, weights: &[f64]) -> Option<BasisFit> {
    let (n, t_len, p) = (inst.n, inst.t_len, inst.p);
    let n_obs = n * t_len;
    let m = n + p;
    if m > n_obs {
        return None;
    }
    let mut best: Option<BasisFit> = None;
    let mut subset: Vec<usize> = (0..m).collect();
    loop {
        if let Some(candidate) = exact_fit(inst, &subset) {
            let obj = objective_ref(inst, tau, weights, &candidate.0, &candidate.1);
            if best.as_ref().map_or(true, |b| obj < b.objective) {
                best = Some(BasisFit {
                    alpha: candidate.0,
                    beta: candidate.1,
                    objective: obj,
                });
            }
        }
        // Next lexicographic combination of size m out of n_obs.
        let mut idx = m;
        loop {
            if idx == 0 {
                return best;
            }
            idx -= 1;
            if subset[idx] != idx + n_obs - m {
                subset[idx] += 1;
                for j in idx + 1..m {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solve the square system forcing zero residuals on the given observations.
/// Returns `None` when the subset's design rows are singular (for example
/// when some unit contributes no observation).
fn exact_fit(inst: &Instance, subset: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
    let (_, t_len, p) = (inst.n, inst.t_len, inst.p);
    let m = subset.len();
    let mut design = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (row, &k) in subset.iter().enumerate() {
        let i = k / t_len;
        let t = k % t_len;
        for (col, &xv) in inst.x_at(i, t).iter().enumerate() {
            design[(row, col)] = xv;
        }
        design[(row, p + i)] = 1.0;
        rhs[row] = inst.y_at(i, t);
    }
    let lu = design.full_piv_lu();
    let sol = lu.solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    // Reject numerically singular systems that sneak through.
    if sol.amax() > 1e12 {
        return None;
    }
    let beta = sol.as_slice()[..p].to_vec();
    let alpha = sol.as_slice()[p..].to_vec();
    Some((alpha, beta))
}

/// Distribution-function oracles from quadrature and closed forms.
pub mod dist {
    /// Standard normal density.
    pub fn normal_pdf(x: f64) -> f64 {
        (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    /// Standard normal CDF via Simpson quadrature of the density on [0, |x|].
    pub fn normal_cdf(x: f64) -> f64 {
        if x < 0.0 {
            return 1.0 - normal_cdf(-x);
        }
        if x > 12.0 {
            return 1.0;
        }
        let steps = 4000;
        let h = x / steps as f64;
        let mut acc = normal_pdf(0.0) + normal_pdf(x);
        for k in 1..steps {
            let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += weight * normal_pdf(k as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    /// Standard normal quantile by bisection on the quadrature CDF.
    pub fn normal_quantile(q: f64) -> f64 {
        assert!(q > 0.0 && q < 1.0);
        let (mut lo, mut hi) = (-12.0, 12.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Chi-squared CDF for even degrees of freedom has the closed form
    /// `1 - exp(-x/2) * sum_{j < df/2} (x/2)^j / j!`.
    pub fn chisq_cdf_even(df: usize, x: f64) -> f64 {
        assert!(df % 2 == 0 && df > 0);
        if x <= 0.0 {
            return 0.0;
        }
        let half = x / 2.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..df / 2 {
            term *= half / j as f64;
            sum += term;
        }
        1.0 - (-half).exp() * sum
    }

    /// Chi-squared quantile for even degrees of freedom via bisection.
    pub fn chisq_quantile_even(df: usize, q: f64) -> f64 {
        assert!(q > 0.0 && q < 1.0);
        let (mut lo, mut hi) = (0.0, 1e4);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chisq_cdf_even(df, mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Upper tail of chi-squared with one degree of freedom, from the normal
    /// relation `P(Z^2 > x) = 2 (1 - Phi(sqrt(x)))`.
    pub fn chisq1_upper(x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        2.0 * (1.0 - normal_cdf(x.sqrt()))
    }
}

/// Naive double-loop reference for the density-weighted sandwich components.
///
/// Returns `(g, gamma, v)` with `g` row-major `n x p` and the matrices
/// row-major `p x p`. `residuals` is row-major `n x t_len`. When
/// `longrun_lag` is `None` the score variance uses the independence form
/// `tau (1 - tau) (1/(nT)) sum (x - g_i)(x - g_i)'`; otherwise the
/// within-unit long-run form truncated at the given lag with Bartlett
/// weights `1 - l / (L + 1)`.
pub fn naive_components(
    inst: &Instance,
    residuals: &[f64],
    tau: f64,
    bandwidth: f64,
    longrun_lag: Option<usize>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, t_len, p) = (inst.n, inst.t_len, inst.p);
    let n_obs = (n * t_len) as f64;
    let kernel = |e: f64| dist::normal_pdf(e / bandwidth) / bandwidth;
    let psi = |e: f64| if e <= 0.0 { tau - 1.0 } else { tau };

    let mut g = vec![0.0; n * p];
    for i in 0..n {
        let mut mass = 0.0;
        let mut acc = vec![0.0; p];
        for t in 0..t_len {
            let k = kernel(residuals[i * t_len + t]);
            mass += k;
            for (a, xv) in acc.iter_mut().zip(inst.x_at(i, t)) {
                *a += k * xv;
            }
        }
        for (dst, a) in g[i * p..(i + 1) * p].iter_mut().zip(&acc) {
            *dst = a / mass;
        }
    }

    let mut gamma = vec![0.0; p * p];
    for i in 0..n {
        for t in 0..t_len {
            let k = kernel(residuals[i * t_len + t]);
            let x = inst.x_at(i, t);
            for a in 0..p {
                for b in 0..p {
                    gamma[a * p + b] += k * x[a] * (x[b] - g[i * p + b]) / n_obs;
                }
            }
        }
    }

    let mut v = vec![0.0; p * p];
    match longrun_lag {
        None => {
            for i in 0..n {
                for t in 0..t_len {
                    let x = inst.x_at(i, t);
                    for a in 0..p {
                        for b in 0..p {
                            v[a * p + b] += tau * (1.0 - tau) * (x[a] - g[i * p + a])
                                * (x[b] - g[i * p + b])
                                / n_obs;
                        }
                    }
                }
            }
        }
        Some(lag) => {
            for i in 0..n {
                for t in 0..t_len {
                    for s in 0..t_len {
                        let l = t.abs_diff(s);
                        if l > lag {
                            continue;
                        }
                        let taper = 1.0 - l as f64 / (lag + 1) as f64;
                        let xt = inst.x_at(i, t);
                        let xs = inst.x_at(i, s);
                        let pt = psi(residuals[i * t_len + t]);
                        let ps = psi(residuals[i * t_len + s]);
                        for a in 0..p {
                            for b in 0..p {
                                v[a * p + b] += taper
                                    * (xt[a] - g[i * p + a])
                                    * (xs[b] - g[i * p + b])
                                    * pt
                                    * ps
                                    / (n as f64 * t_len as f64);
                            }
                        }
                    }
                }
            }
        }
    }
    (g, gamma, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_oracle_matches_known_values() {
        assert!((dist::normal_cdf(0.0) - 0.5).abs() < 1e-12);
        assert!((dist::normal_cdf(1.96) - 0.9750021).abs() < 1e-6);
        assert!((dist::normal_quantile(0.975) - 1.959964).abs() < 1e-5);
        assert!((dist::normal_quantile(0.95) - 1.6448536).abs() < 1e-5);
    }

    #[test]
    fn chisq_oracle_matches_known_values() {
        // Median of chi-squared(4).
        assert!((dist::chisq_quantile_even(4, 0.5) - 3.3566939).abs() < 1e-5);
        assert!((dist::chisq_cdf_even(2, 2.0 * (2.0f64).ln()) - 0.5).abs() < 1e-12);
        assert!((dist::chisq1_upper(2.7055) - 0.1).abs() < 1e-4);
    }

    #[test]
    fn basis_fit_finds_zero_objective_on_interpolable_data() {
        // Two units, p = 1, data generated exactly on a line per unit: the
        // exact fit through any n + p = 3 spanning observations that lie on
        // the model recovers it and the full objective is zero.
        let x = vec![0.0, 1.0, 2.0, 0.5, 1.5, 2.5];
        let mut y = Vec::new();
        for i in 0..2 {
            for t in 0..3 {
                let a = if i == 0 { 1.0 } else { -1.0 };
                y.push(a + 2.0 * x[i * 3 + t]);
            }
        }
        let inst = Instance {
            n: 2,
            t_len: 3,
            p: 1,
            y,
            x,
        };
        let fit = basis_fit(&inst, 0.5, &[1.0, 1.0]).unwrap();
        assert!(fit.objective.abs() < 1e-12);
        assert!((fit.beta[0] - 2.0).abs() < 1e-9);
        assert!((fit.alpha[0] - 1.0).abs() < 1e-9);
        assert!((fit.alpha[1] + 1.0).abs() < 1e-9);
    }
}
