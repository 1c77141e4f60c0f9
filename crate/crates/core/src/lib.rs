//! Fixed-effects panel quantile regression with random-weighted bootstrap
//! inference.
//!
//! The crate estimates conditional quantile models with per-unit intercepts
//! on balanced panels, resamples them with positive unit-level multiplier
//! weights to produce percentile, standard-error, and studentized-reference
//! confidence intervals plus bootstrap covariance matrices and Wald tests,
//! and provides a kernel (Powell-style) sandwich covariance comparator and a
//! Monte Carlo coverage laboratory.
//!
//! Modules:
//! - [`panel`]: data model, check loss, objective, subgradient diagnostics.
//! - [`solver`]: interior-point weighted fixed-effects quantile regression.
//! - [`bootstrap`]: weight schemes, replicate engine, intervals, Wald tests.
//! - [`kernel`]: density-weighted sandwich covariance and asymptotic CIs.
//! - [`sim`]: data-generating designs and coverage studies.
//! - [`streams`]: reproducible seed derivation for parallel resampling.

pub mod bootstrap;
pub mod error;
pub mod kernel;
pub mod panel;
pub mod sim;
pub mod solver;
pub mod streams;


pub use bootstrap::{
    bootstrap_covariance, draw_weights, percentile_ci, run_bootstrap, run_bootstrap_with, se_ci,
    t_ref_ci, wald_test, BootstrapOptions, BootstrapResult, CiMethod, ConfidenceInterval,
    CovarianceEstimate, CovarianceSource, WeightKind, WeightScheme,
};
pub use error::{Error, Result};
pub use kernel::{
    at_ci, estimate_components, hall_sheather_bandwidth, powell_bandwidth, sandwich, KernelKind,
    SandwichComponents, VMode,
};

pub use sim::{
    arma_marginal_quantiles, generate, generate_dynamic, generate_static, innovation_quantile,
    run_coverage_study, true_slopes, CalibrationCell, CoverageCell, CoverageReport, DesignFamily,
    GeneratedPanel, InnovationKind, SimulationDesign,
};
pub use panel::{
    check_loss, evaluate_objective, score, verify_subgradient, PanelDataset, QuantileFit,
    QuantileLevel, SolverDiagnostics, SubgradientReport, WeightVector,
};

pub use solver::{fit_weighted_feqr, fit_weighted_feqr_with, SolverConfig};
