//! Forward simulation from the clustering model's prior and likelihood.

use crate::covariates::CovariateMatrix;
use crate::error::Result;
use crate::kernel::sample::{bernoulli, beta, gamma, normal, uniform};
use crate::kernel::{sample_truncated_gamma, RandomSource};
use crate::pdp::{sample_partition, PdpParams};

use super::{Hyperparameters, IndicatorTable, LatentTable, Stage1State};

/// Everything the prior needs besides the hyperparameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorModel {
    pub mass: f64,
    pub dp_mass: f64,
    /// used when the discount is not sampled
    pub discount: f64,
    pub base_mean: f64,
    pub base_var: f64,
    pub hyper: Hyperparameters,
}

/// Draw a complete state for `p` covariates and `n` subjects from the prior.
pub fn sample_state(model: &PriorModel, n: usize, p: usize, rng: &mut RandomSource) -> Result<Stage1State> {
    let h = &model.hyper;
    let mass = if h.sample_mass { gamma(1.0, 1.0, rng) } else { model.mass };
    let dp_mass = if h.sample_dp_mass { gamma(1.0, 1.0, rng) } else { model.dp_mass };
    let discount = if !h.update_discount {
        model.discount
    } else if bernoulli(0.5, rng) {
        0.0
    } else {
        uniform(rng)
    };
    let pdp = PdpParams::new(mass, discount)?;
    let partition = sample_partition(p, &pdp, rng);
    let q = partition.n_clusters();

    let base_sd = model.base_var.sqrt();
    let mut atoms: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut cells = vec![vec![0usize; n]; q];
    let mut drawn = 0usize;
    for col in cells.iter_mut() {
        for cell in col.iter_mut() {
            let u = uniform(rng) * (drawn as f64 + dp_mass);
            let mut t = atoms.len();
            if u < drawn as f64 {
                let mut target = u;
                for (s, &c) in counts.iter().enumerate() {
                    if target < c as f64 {
                        t = s;
                        break;
                    }
                    target -= c as f64;
                }
                t = t.min(atoms.len() - 1);
            } else {
                atoms.push(normal(model.base_mean, base_sd, rng));
                counts.push(0);
            }
            counts[t] += 1;
            *cell = t;
            drawn += 1;
        }
    }
    let latent = LatentTable::from_parts(atoms, cells)?;

    let xi = beta(h.xi_prior[0], h.xi_prior[1], rng).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    let z = (0..q).map(|_| (0..n).map(|_| bernoulli(xi, rng)).collect()).collect();

    let ceiling = 1.0 / (h.tau_floor * h.tau_floor);
    let (tau_sq, tau1_sq) = loop {
        let prec = sample_truncated_gamma(h.tau_shape, h.tau_scale, 0.0, ceiling, rng)?;
        let prec1 = gamma(h.tau1_shape, h.tau1_scale, rng);
        if prec1 < prec {
            break (1.0 / prec, 1.0 / prec1);
        }
    };

    Ok(Stage1State {
        partition,
        latent,
        indicators: IndicatorTable::from_columns(z),
        tau_sq,
        tau1_sq,
        xi,
        pdp,
        dp_mass,
        base_mean: model.base_mean,
        base_var: model.base_var,
        hyper: h.clone(),
    })
}

/// x_ij ~ N(v_{i,c_j}, τ² if z = 1 else τ₁²).
pub fn sample_covariates(state: &Stage1State, rng: &mut RandomSource) -> Result<CovariateMatrix> {
    let n = state.indicators.column(0).len();
    let p = state.partition.len();
    let mut values = Vec::with_capacity(n * p);
    for j in 0..p {
        let k = state.partition.label(j);
        for i in 0..n {
            let sd = state.cell_variance(state.indicators.get(i, k)).sqrt();
            values.push(normal(state.latent.value(i, k), sd, rng));
        }
    }
    CovariateMatrix::from_columns(n, p, values)
}
