//! Stage-1 sampler for the covariate clustering model: PDP allocations of
//! covariate columns, a nested-DP table of latent prototype elements,
//! high-variance indicators, variances and the discount parameter.

mod chain;
mod init;
mod latent;
pub mod prior;
mod updates;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdp::{Partition, PdpParams};

pub use chain::{
    run_configuration, run_stage1, LatentConfiguration, Stage1Output, Stage1Sampler, TraceRow,
};
pub use init::{init_state, initial_partition};
pub use latent::{IndicatorTable, LatentTable};
pub use updates::{
    impute_missing, log_joint, log_likelihood, update_allocations, update_discount,
    sweep, update_indicators, update_latent_elements, update_masses, update_variances, update_xi,
    DiscountStep,
};

/// User-facing Stage-1 settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    /// PDP mass α₁
    pub mass: f64,
    /// nested DP mass α₂
    pub dp_mass: f64,
    pub initial_discount: f64,
    pub update_discount: bool,
    /// Gamma(1,1)-prior Metropolis updates for α₁ and α₂
    pub sample_mass: bool,
    pub sample_dp_mass: bool,
    /// Beta(ι₁, ι₀) prior on ξ
    pub xi_prior: [f64; 2],
    /// lower bound τ* on τ
    pub tau_floor: f64,
    /// inverse-gamma shape of both variance priors
    pub variance_shape: f64,
    /// fresh latent-vector proposals per allocation update
    pub aux_components: usize,
    /// midpoint nodes for the ∫ EPPF(d) dd log-odds
    pub quadrature_nodes: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
    pub configuration_burn_in: usize,
    pub configuration_samples: usize,
    /// upper limit on configuration samples compared when picking the
    /// least-squares configuration
    pub configuration_candidates: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            mass: 20.0,
            dp_mass: 10.0,
            initial_discount: 0.25,
            update_discount: true,
            sample_mass: false,
            sample_dp_mass: false,
            xi_prior: [9.0, 1.0],
            tau_floor: 0.01,
            variance_shape: 2.01,
            aux_components: 3,
            quadrature_nodes: 1000,
            burn_in: 2000,
            thin: 5,
            samples: 2000,
            configuration_burn_in: 200,
            configuration_samples: 500,
            configuration_candidates: 200,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("dp_mass", self.dp_mass),
            ("xi_prior", self.xi_prior[0]),
            ("xi_prior", self.xi_prior[1]),
            ("tau_floor", self.tau_floor),
            ("variance_shape", self.variance_shape),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.initial_discount) {
            return Err(Error::InvalidInput(format!(
                "initial_discount must lie in [0, 1), got {}",
                self.initial_discount
            )));
        }
        if self.aux_components == 0 || self.quadrature_nodes == 0 || self.thin == 0 {
            return Err(Error::InvalidInput(
                "aux_components, quadrature_nodes and thin must be at least 1".into(),
            ));
        }
        if self.samples == 0 {
            return Err(Error::EmptySamples("no post-burn-in samples requested".into()));
        }
        if self.configuration_samples == 0 || self.configuration_candidates == 0 {
            return Err(Error::EmptySamples("no configuration samples requested".into()));
        }
        Ok(())
    }
}

/// Fixed hyperparameters and sampler constants carried with the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub tau_floor: f64,
    /// IG(shape, scale) prior on τ²
    pub tau_shape: f64,
    pub tau_scale: f64,
    /// IG(shape, scale) prior on τ₁²
    pub tau1_shape: f64,
    pub tau1_scale: f64,
    pub xi_prior: [f64; 2],
    pub aux_components: usize,
    pub quadrature_nodes: usize,
    pub update_discount: bool,
    pub sample_mass: bool,
    pub sample_dp_mass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1State {
    pub partition: Partition,
    pub latent: LatentTable,
    pub indicators: IndicatorTable,
    /// τ²
    pub tau_sq: f64,
    /// τ₁²
    pub tau1_sq: f64,
    pub xi: f64,
    pub pdp: PdpParams,
    /// α₂
    pub dp_mass: f64,
    /// μ₂
    pub base_mean: f64,
    /// τ₂²
    pub base_var: f64,
    pub hyper: Hyperparameters,
}

impl Stage1State {
    pub fn n_clusters(&self) -> usize {
        self.partition.n_clusters()
    }

    pub fn tau(&self) -> f64 {
        self.tau_sq.sqrt()
    }

    pub fn tau1(&self) -> f64 {
        self.tau1_sq.sqrt()
    }

    /// Variance of x_ij given z_ik.
    pub fn cell_variance(&self, z: bool) -> f64 {
        if z {
            self.tau_sq
        } else {
            self.tau1_sq
        }
    }

    pub fn check_invariants(&self, n: usize) -> Result<()> {
        self.partition.check_invariants()?;
        self.latent.check_invariants(n)?;
        let q = self.partition.n_clusters();
        if self.latent.n_clusters() != q || self.indicators.n_clusters() != q {
            return Err(Error::InvalidState(format!(
                "{q} clusters but {} latent and {} indicator columns",
                self.latent.n_clusters(),
                self.indicators.n_clusters()
            )));
        }
        if self.indicators.columns().iter().any(|c| c.len() != n) {
            return Err(Error::InvalidState("indicator column length differs from n".into()));
        }
        let floor = self.hyper.tau_floor;
        if !(self.tau() >= floor && self.tau1() > self.tau()) {
            return Err(Error::InvalidState(format!(
                "variance order violated: tau = {}, tau1 = {}, floor = {floor}",
                self.tau(),
                self.tau1()
            )));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::InvalidState(format!("xi = {} outside (0, 1)", self.xi)));
        }
        Ok(())
    }
}
