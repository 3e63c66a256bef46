//! Forward simulation from the Stage-2 prior and likelihood.

use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::kernel::sample::{dirichlet, gamma, normal, standard_normal};
use crate::kernel::{sample_categorical, sample_truncated_gamma, RandomSource};
use crate::pdp::Partition;

use super::chain::{Stage2Hyper, Stage2State};
use super::design::{build_design, linear_predictor, quantile_knots, Selection};
use super::marginal::draw_coefficients;
use super::representatives::{choose_representatives, RepresentativeMode};

/// Rejection attempts for a feasible (ω, γ) pair.
const MAX_ATTEMPTS: usize = 100_000;

/// Draw member representatives, (ω, γ) restricted to full-rank designs with fewer
/// columns than subjects, σ⁻², σ_β² (fixed at `g` without a hyperprior), β
/// and Gaussian outcomes.
pub fn sample_state(
    partition: &Partition,
    x: &CovariateMatrix,
    hyper: &Stage2Hyper,
    g: f64,
    rng: &mut RandomSource,
) -> Result<Stage2State> {
    let reps = choose_representatives(partition, None, x, RepresentativeMode::Member, rng)?;
    let knots: Vec<Vec<f64>> = reps.vectors.iter().map(|u| quantile_knots(u, hyper.spline.knots)).collect();
    let q = partition.n_clusters();
    let n = x.n();
    let g = match hyper.g_prior {
        Some([a, b]) => 1.0 / gamma(a, b, rng),
        None => g,
    };
    for _ in 0..MAX_ATTEMPTS {
        let w = dirichlet(&[1.0; 3], rng);
        let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let gamma: Vec<Selection> = (0..q)
            .map(|_| sample_categorical(&log_w, rng).map(Selection::from_index))
            .collect::<Result<_>>()?;
        let Ok(design) = build_design(&gamma, &reps.vectors, &knots, &hyper.spline) else {
            continue;
        };
        let (lo, hi) = hyper.precision_bounds;
        let precision = sample_truncated_gamma(0.5 * hyper.nu, 0.5, lo, hi, rng)?;
        let sigma2 = 1.0 / precision;
        let variances = vec![sigma2; n];
        // with y = 0 the conditional draw has the prior covariance over 1+g
        let zero = vec![0.0; n];
        let beta = match draw_coefficients(&design, &zero, &variances, g, rng) {
            Ok(b) => b,
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        };
        let beta: Vec<f64> = beta.iter().map(|b| b * (1.0 + g).sqrt()).collect();
        let fit = linear_predictor(&design, &beta);
        let y = fit.iter().map(|f| normal(*f, sigma2.sqrt(), rng)).collect();
        return Ok(Stage2State {
            reps,
            knots,
            gamma,
            omega: [w[0], w[1], w[2]],
            beta,
            g,
            sigma2,
            variances,
            y,
            hyper: hyper.clone(),
        });
    }
    Err(Error::Generation("no feasible selection drawn from the prior".into()))
}

/// y ~ N(U_γβ, σ²) for the state's current parameters.
pub fn sample_outcomes(state: &Stage2State, rng: &mut RandomSource) -> Result<Vec<f64>> {
    let fit = linear_predictor(&state.design()?, &state.beta);
    Ok(fit
        .iter()
        .zip(&state.variances)
        .map(|(f, v)| f + v.sqrt() * standard_normal(rng))
        .collect())
}
