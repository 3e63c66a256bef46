//! Stage-2 regression on cluster representatives: trinary spike-and-slab
//! selection (excluded, linear, spline), g-prior coefficients, Gaussian,
//! censored AFT and exponential-family outcomes, and prediction.

mod chain;
mod design;
mod marginal;
mod outcome;
mod predict;
pub mod prior;
mod representatives;

pub use chain::{
    init_state, run_stage2, sweep, update_beta, update_g, update_gamma, update_omega,
    update_outcomes, update_representatives, update_sigma, Stage2Config, Stage2Hyper,
    Stage2Output, Stage2Sample, Stage2Sampler, Stage2State,
};
pub use design::{
    build_design, linear_predictor, quantile_knots, spline_basis, Selection, SplineSpec,
};
pub use marginal::{draw_coefficients, log_marginal_design, log_marginal_gram, prior_quadratic};
pub use outcome::{
    impute_censored, outcome_variance, transform_outcome, Family, GlmSpec, Link, OutcomeData,
    VarianceFunction,
};
pub use predict::{nonlinearity_measure, predict, Predictions};
pub use representatives::{
    choose_representatives, test_representatives, RepresentativeMode, RepresentativeSet,
};

use nalgebra::DMatrix;

use crate::error::Result;

/// log N(y; 0, Σ + σ_β²·U_γ(U_γ′Σ⁻¹U_γ)⁻¹U_γ′) with β integrated out.
pub fn log_marginal_gamma(
    gamma: &[Selection],
    reps: &[Vec<f64>],
    knots: &[Vec<f64>],
    spline: &SplineSpec,
    y: &[f64],
    variances: &[f64],
    g: f64,
) -> Result<f64> {
    let design: DMatrix<f64> = build_design(gamma, reps, knots, spline)?;
    log_marginal_design(&design, y, variances, g)
}
