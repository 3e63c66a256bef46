use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::kernel::RandomSource;
use crate::pdp::Partition;
use crate::summaries::{
    least_squares_index, least_squares_labeling, CoclusterAccumulator, CoclusterMatrix,
};

use super::init::state_for_partition;
use super::updates::sweep;
use super::{
    impute_missing, init_state, log_likelihood, update_indicators, update_latent_elements,
    update_variances, update_xi, IndicatorTable, LatentTable, Stage1Config, Stage1State,
};

/// Per-sweep diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep: usize,
    pub n_clusters: usize,
    pub tau: f64,
    pub tau1: f64,
    pub xi: f64,
    pub discount: f64,
    pub mass: f64,
    pub dp_mass: f64,
    pub n_atoms: usize,
    pub log_likelihood: f64,
    pub log_odds: f64,
}

/// Resumable Stage-1a chain: state, working (imputed) matrix, random source
/// and everything retained so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Sampler {
    pub config: Stage1Config,
    pub state: Stage1State,
    pub x: CovariateMatrix,
    pub rng: RandomSource,
    pub sweeps_done: usize,
    pub samples: Vec<Partition>,
    pub discounts: Vec<f64>,
    pub log_odds: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

impl Stage1Sampler {
    pub fn new(x: &CovariateMatrix, config: Stage1Config, rng: RandomSource) -> Result<Self> {
        config.validate()?;
        let state = init_state(x, &config)?;
        Self::from_state(x, config, state, rng)
    }

    /// Start from a given allocation instead of the seeding heuristic.
    pub fn with_partition(
        x: &CovariateMatrix,
        partition: Partition,
        config: Stage1Config,
        rng: RandomSource,
    ) -> Result<Self> {
        if partition.len() != x.p() {
            return Err(Error::InvalidInput(format!(
                "partition covers {} covariates, matrix has {}",
                partition.len(),
                x.p()
            )));
        }
        let state = state_for_partition(x, partition, &config)?;
        Self::from_state(x, config, state, rng)
    }

    fn from_state(
        x: &CovariateMatrix,
        config: Stage1Config,
        state: Stage1State,
        rng: RandomSource,
    ) -> Result<Self> {
        Ok(Self {
            config,
            state,
            x: x.clone(),
            rng,
            sweeps_done: 0,
            samples: Vec::new(),
            discounts: Vec::new(),
            log_odds: Vec::new(),
            trace: Vec::new(),
        })
    }

    pub fn total_sweeps(&self) -> usize {
        self.config.burn_in + self.config.thin * self.config.samples
    }

    pub fn is_finished(&self) -> bool {
        self.sweeps_done >= self.total_sweeps()
    }

    pub fn sweep(&mut self) -> Result<()> {
        let step = sweep(&mut self.state, &mut self.x, &mut self.rng)?;
        self.sweeps_done += 1;
        let s = &self.state;
        self.trace.push(TraceRow {
            sweep: self.sweeps_done,
            n_clusters: s.n_clusters(),
            tau: s.tau(),
            tau1: s.tau1(),
            xi: s.xi,
            discount: s.pdp.discount(),
            mass: s.pdp.mass(),
            dp_mass: s.dp_mass,
            n_atoms: s.latent.n_atoms(),
            log_likelihood: log_likelihood(s, &self.x),
            log_odds: step.log_odds,
        });
        let past = self.sweeps_done.saturating_sub(self.config.burn_in);
        if self.sweeps_done > self.config.burn_in && past % self.config.thin == 0 {
            self.samples.push(s.partition.clone());
            self.discounts.push(s.pdp.discount());
            self.log_odds.push(step.log_odds);
        }
        Ok(())
    }

    /// Run up to `limit` more sweeps (all remaining when `None`).
    pub fn run(&mut self, limit: Option<usize>) -> Result<()> {
        let remaining = self.total_sweeps().saturating_sub(self.sweeps_done);
        for _ in 0..limit.map_or(remaining, |l| l.min(remaining)) {
            self.sweep()?;
        }
        Ok(())
    }

    /// Co-clustering matrix and least-squares allocation of the retained
    /// samples.
    pub fn summarize(&self) -> Result<(CoclusterMatrix, Partition, f64)> {
        if self.samples.is_empty() {
            return Err(Error::EmptySamples("no post-burn-in samples retained".into()));
        }
        let mut acc = CoclusterAccumulator::new(self.x.p());
        for s in &self.samples {
            acc.add(s)?;
        }
        let probs = acc.finish()?;
        let (idx, loss) = least_squares_index(&self.samples, &probs)?;
        Ok((probs, self.samples[idx].clone(), loss))
    }
}

/// Least-squares latent configuration for a fixed allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentConfiguration {
    pub partition: Partition,
    pub latent: LatentTable,
    /// indicators rounded from their posterior means
    pub indicators: IndicatorTable,
    /// posterior P(z_ik = 1), `[k][i]`
    pub indicator_probs: Vec<Vec<f64>>,
    pub tau_sq: f64,
    pub tau1_sq: f64,
}

/// Stage 1b: latent elements, indicators and variances resampled with the
/// allocation held fixed; returns the sampled latent table closest in
/// squared error to the average cell co-assignment.
pub fn run_configuration(
    x: &CovariateMatrix,
    allocation: &Partition,
    template: &Stage1State,
    config: &Stage1Config,
    rng: &mut RandomSource,
) -> Result<LatentConfiguration> {
    if allocation.len() != x.p() {
        return Err(Error::InvalidInput(format!(
            "allocation covers {} covariates, matrix has {}",
            allocation.len(),
            x.p()
        )));
    }
    let mut state = state_for_partition(x, allocation.clone(), config)?;
    state.tau_sq = template.tau_sq;
    state.tau1_sq = template.tau1_sq;
    state.xi = template.xi;
    state.pdp = template.pdp;
    state.dp_mass = template.dp_mass;
    state.base_mean = template.base_mean;
    state.base_var = template.base_var;
    state.hyper = template.hyper.clone();

    let mut xw = x.clone();
    let n = x.n();
    let q = allocation.n_clusters();
    let mut tables: Vec<LatentTable> = Vec::with_capacity(config.configuration_samples);
    let mut z_sum = vec![vec![0.0; n]; q];
    let (mut tau_sum, mut tau1_sum) = (0.0, 0.0);
    for it in 0..config.configuration_burn_in + config.configuration_samples {
        update_latent_elements(&mut state, &xw, rng)?;
        update_indicators(&mut state, &xw, rng)?;
        update_variances(&mut state, &xw, rng)?;
        update_xi(&mut state, rng);
        if xw.has_missing() {
            impute_missing(&state, &mut xw, rng);
        }
        if it >= config.configuration_burn_in {
            tables.push(state.latent.clone());
            for (k, col) in z_sum.iter_mut().enumerate() {
                for (i, s) in col.iter_mut().enumerate() {
                    if state.indicators.get(i, k) {
                        *s += 1.0;
                    }
                }
            }
            tau_sum += state.tau_sq;
            tau1_sum += state.tau1_sq;
        }
    }
    let kept = tables.len() as f64;
    let stride = tables.len().div_ceil(config.configuration_candidates).max(1);
    let candidates: Vec<&LatentTable> = tables.iter().step_by(stride).collect();
    let labelings: Vec<Vec<usize>> = candidates
        .iter()
        .map(|t| (0..q).flat_map(|k| t.column_atoms(k).to_vec()).collect())
        .collect();
    let (best, _) = least_squares_labeling(&labelings)?;
    let indicator_probs: Vec<Vec<f64>> =
        z_sum.iter().map(|c| c.iter().map(|s| s / kept).collect()).collect();
    let indicators = IndicatorTable::from_columns(
        indicator_probs.iter().map(|c| c.iter().map(|&p| p >= 0.5).collect()).collect(),
    );
    Ok(LatentConfiguration {
        partition: allocation.clone(),
        latent: candidates[best].clone(),
        indicators,
        indicator_probs,
        tau_sq: tau_sum / kept,
        tau1_sq: tau1_sum / kept,
    })
}

/// Everything Stage 1 produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Output {
    pub samples: Vec<Partition>,
    pub discounts: Vec<f64>,
    pub log_odds: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub cocluster: CoclusterMatrix,
    pub allocation: Partition,
    pub allocation_loss: f64,
    pub configuration: LatentConfiguration,
    pub final_state: Stage1State,
    /// covariates with missing cells at their final imputed values
    pub imputed: CovariateMatrix,
}

/// Stage 1a chain followed by the Stage 1b configuration run; both use `rng`
/// in sequence.
pub fn run_stage1(
    x: &CovariateMatrix,
    config: &Stage1Config,
    rng: &mut RandomSource,
) -> Result<Stage1Output> {
    let mut sampler = Stage1Sampler::new(x, config.clone(), rng.clone())?;
    sampler.run(None)?;
    let (cocluster, allocation, allocation_loss) = sampler.summarize()?;
    *rng = sampler.rng.clone();
    let configuration = run_configuration(&sampler.x, &allocation, &sampler.state, config, rng)?;
    Ok(Stage1Output {
        samples: sampler.samples,
        discounts: sampler.discounts,
        log_odds: sampler.log_odds,
        trace: sampler.trace,
        cocluster,
        allocation,
        allocation_loss,
        configuration,
        final_state: sampler.state,
        imputed: sampler.x,
    })
}
