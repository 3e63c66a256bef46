use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::kernel::sample::{dirichlet, gamma as gamma_draw, uniform};
use crate::kernel::{sample_categorical, sample_truncated_gamma, RandomSource};
use crate::pdp::Partition;
use crate::stage1::LatentTable;

use super::design::{build_design, linear_predictor, quantile_knots, Selection, SplineSpec};
use super::marginal::{draw_coefficients, log_marginal_design, prior_quadratic};
use super::outcome::{impute_censored, outcome_variance, transform_outcome, Family, OutcomeData};
use super::predict::nonlinearity_measure;
use super::representatives::{choose_representatives, pick, RepresentativeMode, RepresentativeSet};

/// User-facing Stage-2 settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
    pub representative_mode: RepresentativeMode,
    /// redraw member representatives inside the chain
    pub resample_representatives: bool,
    pub spline: SplineSpec,
    /// σ_β²; the number of training subjects when absent
    pub g: Option<f64>,
    /// IG(shape, scale) hyperprior on σ_β²
    pub g_prior: Option<[f64; 2]>,
    /// degrees of freedom of the χ² prior on σ⁻²
    pub nu: f64,
    /// σ² is confined to (lower·Var(ŷ), upper·Var(ŷ))
    pub variance_fraction: [f64; 2],
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            thin: 2,
            samples: 1000,
            representative_mode: RepresentativeMode::Member,
            resample_representatives: true,
            spline: SplineSpec::default(),
            g: None,
            g_prior: None,
            nu: 3.0,
            variance_fraction: [0.5, 0.95],
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.variance_fraction;
        if !(0.0 < lo && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "variance_fraction bounds must satisfy 0 < lower < upper, got [{lo}, {hi}]"
            )));
        }
        if !(self.nu > 0.0) {
            return Err(Error::InvalidInput(format!("nu must be positive, got {}", self.nu)));
        }
        if let Some(g) = self.g {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidInput(format!("g must be positive, got {g}")));
            }
        }
        if let Some([a, b]) = self.g_prior {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::InvalidInput("g_prior shape and scale must be positive".into()));
            }
        }
        if self.spline.order == 0 || self.thin == 0 {
            return Err(Error::InvalidInput("spline order and thin must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::EmptySamples("no post-burn-in samples requested".into()));
        }
        Ok(())
    }
}

/// Constants carried with the Stage-2 state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Hyper {
    pub spline: SplineSpec,
    pub nu: f64,
    /// truncation interval for σ⁻²
    pub precision_bounds: (f64, f64),
    pub g_prior: Option<[f64; 2]>,
    pub resample_representatives: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2State {
    pub reps: RepresentativeSet,
    /// knot locations per cluster
    pub knots: Vec<Vec<f64>>,
    pub gamma: Vec<Selection>,
    /// (ω₀, ω₁, ω₂)
    pub omega: [f64; 3],
    /// coefficients of the current design, intercept first
    pub beta: Vec<f64>,
    /// σ_β²
    pub g: f64,
    /// homoscedastic σ² (unused by exponential-family outcomes)
    pub sigma2: f64,
    /// diagonal of Σ
    pub variances: Vec<f64>,
    /// current Gaussian regression outcomes
    pub y: Vec<f64>,
    pub hyper: Stage2Hyper,
}

impl Stage2State {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.gamma {
            c[s.index()] += 1;
        }
        c
    }

    pub fn design(&self) -> Result<DMatrix<f64>> {
        build_design(&self.gamma, &self.reps.vectors, &self.knots, &self.hyper.spline)
    }

    pub fn eta(&self) -> Result<Vec<f64>> {
        Ok(linear_predictor(&self.design()?, &self.beta))
    }

    fn log_marginal(&self) -> Result<f64> {
        log_marginal_design(&self.design()?, &self.y, &self.variances, self.g)
    }

    pub fn check_invariants(&self, partition: &Partition) -> Result<()> {
        self.reps.check_invariants(partition)?;
        let width = self.hyper.spline.design_width(&self.gamma);
        if width >= self.n() {
            return Err(Error::ConstraintViolation { columns: width, rows: self.n() });
        }
        if self.beta.len() != width {
            return Err(Error::InvalidState(format!(
                "{} coefficients for a {width}-column design",
                self.beta.len()
            )));
        }
        Ok(())
    }
}

fn set_knots(state: &mut Stage2State, k: usize) {
    state.knots[k] = quantile_knots(&state.reps.vectors[k], state.hyper.spline.knots);
}

/// Initial state: every cluster excluded, intercept at the outcome mean.
pub fn init_state(
    partition: &Partition,
    latent: Option<&LatentTable>,
    x: &CovariateMatrix,
    data: &OutcomeData,
    config: &Stage2Config,
    rng: &mut RandomSource,
) -> Result<Stage2State> {
    config.validate()?;
    data.validate()?;
    if data.len() != x.n() {
        return Err(Error::InvalidInput(format!(
            "{} responses for {} subjects",
            data.len(),
            x.n()
        )));
    }
    let reps = choose_representatives(partition, latent, x, config.representative_mode, rng)?;
    let n = x.n();
    let v = outcome_variance(data)?;
    let [lo, hi] = config.variance_fraction;
    let precision_bounds = (1.0 / (hi * v), 1.0 / (lo * v));
    let sigma2 = 2.0 / (precision_bounds.0 + precision_bounds.1);
    let q = partition.n_clusters();
    let mut state = Stage2State {
        reps,
        knots: vec![Vec::new(); q],
        gamma: vec![Selection::Excluded; q],
        omega: [1.0 / 3.0; 3],
        beta: vec![data.w.iter().sum::<f64>() / n as f64],
        g: config.g.unwrap_or(n as f64),
        sigma2,
        variances: vec![sigma2; n],
        y: data.w.clone(),
        hyper: Stage2Hyper {
            spline: config.spline,
            nu: config.nu,
            precision_bounds,
            g_prior: config.g_prior,
            resample_representatives: config.resample_representatives
                && config.representative_mode == RepresentativeMode::Member,
        },
    };
    for k in 0..q {
        set_knots(&mut state, k);
    }
    if let Family::Glm(spec) = data.family {
        let mean_r = data.w.iter().sum::<f64>() / n as f64;
        state.beta[0] = spec.link_value(mean_r)?;
    }
    update_outcomes(&mut state, data, rng)?;
    Ok(state)
}

/// Refresh y (and Σ for exponential families) from the current fit.
pub fn update_outcomes(state: &mut Stage2State, data: &OutcomeData, rng: &mut RandomSource) -> Result<()> {
    match data.family {
        Family::Gaussian => state.y.clone_from(&data.w),
        Family::Aft => {
            let eta = state.eta()?;
            let sd = vec![state.sigma2.sqrt(); eta.len()];
            state.y = impute_censored(&data.w, &data.delta, &eta, &sd, rng)?;
        }
        Family::Glm(spec) => {
            let eta = state.eta()?;
            for (i, (&r, &e)) in data.w.iter().zip(&eta).enumerate() {
                let (y, precision) = transform_outcome(r, e, &spec)?;
                state.y[i] = y;
                state.variances[i] = 1.0 / precision;
            }
        }
    }
    Ok(())
}

fn marginal_or_excluded(result: Result<f64>) -> Result<f64> {
    match result {
        Ok(v) => Ok(v),
        Err(Error::ConstraintViolation { .. } | Error::RankDeficient { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Member-mode Metropolis redraw of each s_k from a uniform proposal over
/// the cluster, accepted on the marginal-likelihood ratio.
pub fn update_representatives(
    state: &mut Stage2State,
    partition: &Partition,
    x: &CovariateMatrix,
    rng: &mut RandomSource,
) -> Result<usize> {
    if !state.hyper.resample_representatives {
        return Ok(0);
    }
    let members = partition.members();
    let mut accepted = 0;
    for (k, m) in members.iter().enumerate() {
        if m.len() < 2 {
            continue;
        }
        let proposal = m[pick(m.len(), rng)];
        let current = state.reps.indices[k];
        if proposal == current {
            continue;
        }
        if state.gamma[k] == Selection::Excluded {
            state.reps.set_member(k, proposal, x);
            set_knots(state, k);
            accepted += 1;
            continue;
        }
        let before = state.log_marginal()?;
        let old_knots = state.knots[k].clone();
        state.reps.set_member(k, proposal, x);
        set_knots(state, k);
        let after = marginal_or_excluded(state.log_marginal())?;
        if uniform(rng).ln() < after - before {
            accepted += 1;
        } else {
            state.reps.set_member(k, current, x);
            state.knots[k] = old_knots;
        }
    }
    Ok(accepted)
}

/// γ_k from its three-way conditional, cluster by cluster, with β
/// integrated out.
pub fn update_gamma(state: &mut Stage2State, rng: &mut RandomSource) -> Result<()> {
    for k in 0..state.gamma.len() {
        let mut log_w = [f64::NEG_INFINITY; 3];
        for s in Selection::ALL {
            state.gamma[k] = s;
            let lm = marginal_or_excluded(state.log_marginal())?;
            log_w[s.index()] = state.omega[s.index()].ln() + lm;
        }
        state.gamma[k] = Selection::from_index(sample_categorical(&log_w, rng)?);
    }
    Ok(())
}

pub fn update_omega(state: &mut Stage2State, rng: &mut RandomSource) {
    let c = state.counts();
    let w = dirichlet(&[1.0 + c[0] as f64, 1.0 + c[1] as f64, 1.0 + c[2] as f64], rng);
    state.omega = [w[0], w[1], w[2]];
}

pub fn update_beta(state: &mut Stage2State, rng: &mut RandomSource) -> Result<()> {
    state.beta = draw_coefficients(&state.design()?, &state.y, &state.variances, state.g, rng)?;
    Ok(())
}

/// σ⁻² | β, y: χ²_ν prior times likelihood and g-prior terms, truncated to
/// the precision bounds. Exponential-family outcomes keep their own Σ.
pub fn update_sigma(state: &mut Stage2State, family: &Family, rng: &mut RandomSource) -> Result<()> {
    if matches!(family, Family::Glm(_)) {
        return Ok(());
    }
    let design = state.design()?;
    let fit = linear_predictor(&design, &state.beta);
    let rss: f64 = state.y.iter().zip(&fit).map(|(y, f)| (y - f).powi(2)).sum();
    let quad = prior_quadratic(&design, &state.beta, &vec![1.0; state.n()]);
    let shape = 0.5 * (state.hyper.nu + (state.n() + design.ncols()) as f64);
    let rate = 0.5 * (1.0 + rss + quad / state.g);
    let (lo, hi) = state.hyper.precision_bounds;
    let precision = sample_truncated_gamma(shape, rate, lo, hi, rng)?;
    state.sigma2 = 1.0 / precision;
    state.variances.iter_mut().for_each(|v| *v = state.sigma2);
    Ok(())
}

/// σ_β² | β from its inverse-gamma hyperprior, when one is configured.
pub fn update_g(state: &mut Stage2State, rng: &mut RandomSource) -> Result<()> {
    let Some([a, b]) = state.hyper.g_prior else {
        return Ok(());
    };
    let design = state.design()?;
    let quad = prior_quadratic(&design, &state.beta, &state.variances);
    state.g = 1.0 / gamma_draw(a + 0.5 * design.ncols() as f64, b + 0.5 * quad, rng);
    Ok(())
}

/// Outcomes, representatives, γ, ω, β, σ², then σ_β².
pub fn sweep(
    state: &mut Stage2State,
    data: &OutcomeData,
    partition: &Partition,
    x: &CovariateMatrix,
    rng: &mut RandomSource,
) -> Result<()> {
    update_outcomes(state, data, rng)?;
    update_representatives(state, partition, x, rng)?;
    update_gamma(state, rng)?;
    update_omega(state, rng);
    update_beta(state, rng)?;
    update_sigma(state, &data.family, rng)?;
    update_g(state, rng)
}

/// What prediction needs from one retained draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Sample {
    /// member-mode representative indices (empty in latent mode)
    pub indices: Vec<usize>,
    pub knots: Vec<Vec<f64>>,
    pub gamma: Vec<Selection>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub omega: [f64; 3],
}

/// Resumable Stage-2 chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Sampler {
    pub config: Stage2Config,
    pub partition: Partition,
    pub x: CovariateMatrix,
    pub data: OutcomeData,
    pub state: Stage2State,
    pub rng: RandomSource,
    pub sweeps_done: usize,
    pub samples: Vec<Stage2Sample>,
}

impl Stage2Sampler {
    pub fn new(
        partition: &Partition,
        latent: Option<&LatentTable>,
        x: &CovariateMatrix,
        data: &OutcomeData,
        config: Stage2Config,
        mut rng: RandomSource,
    ) -> Result<Self> {
        let state = init_state(partition, latent, x, data, &config, &mut rng)?;
        Ok(Self {
            config,
            partition: partition.clone(),
            x: x.clone(),
            data: data.clone(),
            state,
            rng,
            sweeps_done: 0,
            samples: Vec::new(),
        })
    }

    pub fn total_sweeps(&self) -> usize {
        self.config.burn_in + self.config.thin * self.config.samples
    }

    pub fn is_finished(&self) -> bool {
        self.sweeps_done >= self.total_sweeps()
    }

    pub fn sweep(&mut self) -> Result<()> {
        sweep(&mut self.state, &self.data, &self.partition, &self.x, &mut self.rng)?;
        self.sweeps_done += 1;
        let past = self.sweeps_done.saturating_sub(self.config.burn_in);
        if self.sweeps_done > self.config.burn_in && past % self.config.thin == 0 {
            let s = &self.state;
            self.samples.push(Stage2Sample {
                indices: s.reps.indices.clone(),
                knots: s.knots.clone(),
                gamma: s.gamma.clone(),
                beta: s.beta.clone(),
                sigma2: s.sigma2,
                omega: s.omega,
            });
        }
        Ok(())
    }

    pub fn run(&mut self, limit: Option<usize>) -> Result<()> {
        let remaining = self.total_sweeps().saturating_sub(self.sweeps_done);
        for _ in 0..limit.map_or(remaining, |l| l.min(remaining)) {
            self.sweep()?;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Stage2Output> {
        if self.samples.is_empty() {
            return Err(Error::EmptySamples("no post-burn-in Stage-2 samples".into()));
        }
        let q = self.partition.n_clusters();
        let m = self.samples.len() as f64;
        let mut linear = vec![0.0; q];
        let mut spline = vec![0.0; q];
        let mut rep_counts = vec![vec![0usize; 0]; q];
        let members = self.partition.members();
        for (k, c) in rep_counts.iter_mut().enumerate() {
            *c = vec![0; members[k].len()];
        }
        for s in &self.samples {
            for (k, g) in s.gamma.iter().enumerate() {
                match g {
                    Selection::Linear => linear[k] += 1.0,
                    Selection::Spline => spline[k] += 1.0,
                    Selection::Excluded => {}
                }
                if let Some(&idx) = s.indices.get(k) {
                    if let Some(pos) = members[k].iter().position(|&j| j == idx) {
                        rep_counts[k][pos] += 1;
                    }
                }
            }
        }
        let omega_trace: Vec<[f64; 3]> = self.samples.iter().map(|s| s.omega).collect();
        Ok(Stage2Output {
            samples: self.samples.clone(),
            linear_prob: linear.iter().map(|c| c / m).collect(),
            spline_prob: spline.iter().map(|c| c / m).collect(),
            representative_counts: rep_counts,
            nonlinearity: nonlinearity_measure(&omega_trace)?,
            omega_trace,
            final_state: self.state.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Output {
    pub samples: Vec<Stage2Sample>,
    /// P(γ_k⁽¹⁾ = 1)
    pub linear_prob: Vec<f64>,
    /// P(γ_k⁽²⁾ = 1)
    pub spline_prob: Vec<f64>,
    /// per cluster, how often each member (in `Partition::members` order)
    /// was the representative
    pub representative_counts: Vec<Vec<usize>>,
    pub omega_trace: Vec<[f64; 3]>,
    /// nonlinearity measure
    pub nonlinearity: f64,
    pub final_state: Stage2State,
}

pub fn run_stage2(
    partition: &Partition,
    latent: Option<&LatentTable>,
    x: &CovariateMatrix,
    data: &OutcomeData,
    config: &Stage2Config,
    rng: &mut RandomSource,
) -> Result<Stage2Output> {
    let mut sampler = Stage2Sampler::new(partition, latent, x, data, config.clone(), rng.clone())?;
    sampler.run(None)?;
    *rng = sampler.rng.clone();
    sampler.finish()
}
