//! Synthetic benchmark generators (clustered covariates; censored survival
//! outcomes on low-correlation predictors) and the concordance error rate.

use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::kernel::sample::{beta, exponential, normal, standard_normal, uniform};
use crate::kernel::RandomSource;
use crate::pdp::{sample_partition, Partition, PdpParams};

/// Stick-breaking stops once the unallocated mass drops below this.
const STICK_RESIDUAL: f64 = 1e-10;
const CENSOR_ATTEMPTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSimSpec {
    pub n: usize,
    pub p: usize,
    pub mass: f64,
    pub dp_mass: f64,
    pub discount: f64,
    pub base_interval: (f64, f64),
    /// noise sd τ₀
    pub noise_sd: f64,
}

impl Default for ClusterSimSpec {
    fn default() -> Self {
        Self {
            n: 50,
            p: 250,
            mass: 20.0,
            dp_mass: 10.0,
            discount: 0.33,
            base_interval: (1.4, 2.6),
            noise_sd: 0.6,
        }
    }
}

impl ClusterSimSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.base_interval;
        if !(lo < hi) {
            return Err(Error::InvalidInterval { lower: lo, upper: hi });
        }
        if self.n < 2 || self.p < 2 {
            return Err(Error::InvalidInput(format!("need n, p >= 2, got {} x {}", self.n, self.p)));
        }
        if !(self.dp_mass > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidInput("dp_mass must be positive and noise_sd non-negative".into()));
        }
        PdpParams::new(self.mass, self.discount).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDataset {
    pub x: CovariateMatrix,
    pub allocation: Partition,
    /// true latent vectors, `latent[k][i]`
    pub latent: Vec<Vec<f64>>,
}

impl ClusterDataset {
    pub fn n_clusters(&self) -> usize {
        self.allocation.n_clusters()
    }
}

/// Atoms and cumulative weights of a DP(α) draw with uniform base,
/// stick-breaking until the remaining stick is below [`STICK_RESIDUAL`].
fn dirichlet_process_draw(mass: f64, (lo, hi): (f64, f64), rng: &mut RandomSource) -> (Vec<f64>, Vec<f64>) {
    let mut atoms = Vec::new();
    let mut cumulative = Vec::new();
    let mut rest = 1.0;
    let mut total = 0.0;
    while rest >= STICK_RESIDUAL {
        let v = beta(1.0, mass, rng);
        total += rest * v;
        rest *= 1.0 - v;
        atoms.push(lo + (hi - lo) * uniform(rng));
        cumulative.push(total);
    }
    (atoms, cumulative)
}

/// Covariates x_ij ~ N(v⁰_{i c⁰_j}, τ₀²) with c⁰ from the PDP and every v⁰
/// element drawn from one DP(α₂) realization on the base interval.
pub fn gen_cluster_dataset(spec: &ClusterSimSpec, rng: &mut RandomSource) -> Result<ClusterDataset> {
    spec.validate()?;
    let params = PdpParams::new(spec.mass, spec.discount)?;
    let allocation = sample_partition(spec.p, &params, rng);
    let (atoms, cumulative) = dirichlet_process_draw(spec.dp_mass, spec.base_interval, rng);
    let total = *cumulative.last().expect("at least one stick");
    let latent: Vec<Vec<f64>> = (0..allocation.n_clusters())
        .map(|_| {
            (0..spec.n)
                .map(|_| {
                    let u = uniform(rng) * total;
                    let idx = cumulative.partition_point(|&c| c <= u).min(atoms.len() - 1);
                    atoms[idx]
                })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(spec.n * spec.p);
    for j in 0..spec.p {
        let v = &latent[allocation.label(j)];
        values.extend(v.iter().map(|&m| normal(m, spec.noise_sd, rng)));
    }
    let x = CovariateMatrix::from_columns(spec.n, spec.p, values)?;
    Ok(ClusterDataset { x, allocation, latent })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurvivalSimSpec {
    pub n: usize,
    pub p: usize,
    pub predictor_count: usize,
    pub max_abs_corr: f64,
    pub beta_star: f64,
    pub censor_fraction: f64,
    pub train_fraction: f64,
    /// equicorrelation of the generated covariate blocks
    pub block_corr: f64,
    pub block_size: usize,
}

impl Default for SurvivalSimSpec {
    fn default() -> Self {
        Self {
            n: 100,
            p: 500,
            predictor_count: 10,
            max_abs_corr: 0.5,
            beta_star: 0.6,
            censor_fraction: 0.2,
            train_fraction: 0.67,
            block_corr: 0.4,
            block_size: 10,
        }
    }
}

impl SurvivalSimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 2 {
            return Err(Error::InvalidInput(format!("need n, p >= 2, got {} x {}", self.n, self.p)));
        }
        if self.predictor_count == 0 || self.predictor_count > self.p {
            return Err(Error::InvalidInput(format!(
                "predictor_count {} must lie in 1..={}",
                self.predictor_count, self.p
            )));
        }
        if !(0.0..1.0).contains(&self.censor_fraction) {
            return Err(Error::InvalidInput(format!(
                "censor_fraction must lie in [0, 1), got {}",
                self.censor_fraction
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidInput("train_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.block_corr) || self.block_size == 0 {
            return Err(Error::InvalidInput("block_corr must lie in [0, 1) and block_size >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub x: CovariateMatrix,
    /// true predictor columns, in selection order
    pub predictors: Vec<usize>,
    /// log observed time
    pub w: Vec<f64>,
    /// true when the failure was observed
    pub delta: Vec<bool>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Standard normal columns in equicorrelated blocks.
pub fn gen_block_covariates(n: usize, p: usize, rho: f64, block: usize, rng: &mut RandomSource) -> Result<CovariateMatrix> {
    let mut values = Vec::with_capacity(n * p);
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut factor = vec![0.0; n];
    for j in 0..p {
        if j % block == 0 {
            factor.iter_mut().for_each(|f| *f = standard_normal(rng));
        }
        values.extend(factor.iter().map(|f| a * f + b * standard_normal(rng)));
    }
    CovariateMatrix::from_columns(n, p, values)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

fn permutation(len: usize, rng: &mut RandomSource) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = ((uniform(rng) * (i + 1) as f64) as usize).min(i);
        idx.swap(i, j);
    }
    idx
}

/// First-fit scan of the columns in random order, keeping a column when its
/// absolute correlation with every kept column is below the cap.
pub fn select_predictors(x: &CovariateMatrix, count: usize, max_abs_corr: f64, rng: &mut RandomSource) -> Result<Vec<usize>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for j in permutation(x.p(), rng) {
        if chosen.iter().all(|&k| correlation(x.column(j), x.column(k)).abs() < max_abs_corr) {
            chosen.push(j);
            if chosen.len() == count {
                return Ok(chosen);
            }
        }
    }
    Err(Error::Generation(format!(
        "found only {} of {count} columns with pairwise |corr| < {max_abs_corr}",
        chosen.len()
    )))
}

/// Exponential failure times with mean exp(β* Σ_{j∈S} x_ij); a random
/// subset of subjects is censored at a time drawn from the same law below
/// its failure time. `source` replaces the block-correlated generator.
/// Predictors and the train/test split are drawn before any outcome, so
/// specs differing only in β* share them under the same random source.
pub fn gen_survival_dataset(
    spec: &SurvivalSimSpec,
    source: Option<&CovariateMatrix>,
    rng: &mut RandomSource,
) -> Result<SurvivalDataset> {
    spec.validate()?;
    let x = match source {
        Some(x) => x.clone(),
        None => gen_block_covariates(spec.n, spec.p, spec.block_corr, spec.block_size, rng)?,
    };
    let n = x.n();
    if spec.predictor_count > x.p() {
        return Err(Error::Generation(format!(
            "{} predictors requested from {} columns",
            spec.predictor_count,
            x.p()
        )));
    }
    let predictors = select_predictors(&x, spec.predictor_count, spec.max_abs_corr, rng)?;
    let split = permutation(n, rng);
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut train = split[..n_train].to_vec();
    let mut test = split[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let means: Vec<f64> = (0..n)
        .map(|i| (spec.beta_star * predictors.iter().map(|&j| x.get(i, j)).sum::<f64>()).exp())
        .collect();
    let times: Vec<f64> = means.iter().map(|&m| m * exponential(rng)).collect();

    let n_censored = (spec.censor_fraction * n as f64).round() as usize;
    let mut w: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let mut delta = vec![true; n];
    let mut order = permutation(n, rng).into_iter();
    let mut censored = 0;
    while censored < n_censored {
        let i = order.next().ok_or_else(|| {
            Error::Generation(format!("could not draw censoring times for {n_censored} subjects"))
        })?;
        let draw = (0..CENSOR_ATTEMPTS)
            .map(|_| means[i] * exponential(rng))
            .find(|&u| u < times[i]);
        if let Some(u) = draw {
            assert!(u < times[i]);
            w[i] = u.ln();
            delta[i] = false;
            censored += 1;
        }
    }

    Ok(SurvivalDataset { x, predictors, w, delta, train, test })
}

/// 1 − C over usable pairs: (i, j) with w_i < w_j and δ_i = 1, or tied
/// w with only δ_i = 1. A pair counts as discordant when the prediction for
/// i is not below that for j; tied predictions count one half.
pub fn concordance_error(w: &[f64], delta: &[bool], predicted: &[f64]) -> Result<f64> {
    if w.len() != delta.len() || w.len() != predicted.len() {
        return Err(Error::InvalidInput("outcome and prediction lengths differ".into()));
    }
    let (mut usable, mut discordant) = (0usize, 0.0);
    for i in 0..w.len() {
        if !delta[i] {
            continue;
        }
        for j in 0..w.len() {
            if i == j {
                continue;
            }
            let counts = w[i] < w[j] || (w[i] == w[j] && !delta[j]);
            if !counts {
                continue;
            }
            usable += 1;
            if predicted[i] > predicted[j] {
                discordant += 1.0;
            } else if predicted[i] == predicted[j] {
                discordant += 0.5;
            }
        }
    }
    if usable == 0 {
        return Err(Error::UndefinedMetric("no usable pairs".into()));
    }
    Ok(discordant / usable as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concordance_examples() {
        let w = [1.0, 2.0, 3.0];
        let d = [true; 3];
        assert_eq!(concordance_error(&w, &d, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(concordance_error(&w, &d, &[3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(concordance_error(&w, &d, &[5.0; 3]).unwrap(), 0.5);
        assert!(concordance_error(&w, &[false; 3], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn tied_times_use_event_first() {
        let w = [1.0, 1.0];
        let err = concordance_error(&w, &[true, false], &[0.0, 1.0]).unwrap();
        assert_eq!(err, 0.0);
        assert!(concordance_error(&w, &[true, true], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_noise_gives_identical_cluster_columns() {
        let spec = ClusterSimSpec { noise_sd: 0.0, p: 60, ..Default::default() };
        let data = gen_cluster_dataset(&spec, &mut RandomSource::new(1, 0)).unwrap();
        for j in 0..60 {
            for k in 0..60 {
                if data.allocation.same_cluster(j, k) {
                    assert_eq!(data.x.column(j), data.x.column(k));
                }
            }
        }
        for v in data.latent.iter().flatten() {
            assert!((1.4..=2.6).contains(v));
        }
    }

    #[test]
    fn survival_censoring_and_split() {
        let spec = SurvivalSimSpec { p: 60, ..Default::default() };
        let data = gen_survival_dataset(&spec, None, &mut RandomSource::new(2, 0)).unwrap();
        assert_eq!(data.delta.iter().filter(|d| !**d).count(), 20);
        assert_eq!(data.train.len(), 67);
        assert_eq!(data.test.len(), 33);
        assert_eq!(data.predictors.len(), 10);
        let none = SurvivalSimSpec { p: 60, censor_fraction: 0.0, ..Default::default() };
        let data = gen_survival_dataset(&none, None, &mut RandomSource::new(2, 0)).unwrap();
        assert!(data.delta.iter().all(|&d| d));
    }

    #[test]
    fn impossible_predictor_search_is_reported() {
        let spec = SurvivalSimSpec { p: 20, block_corr: 0.95, block_size: 20, ..Default::default() };
        let err = gen_survival_dataset(&spec, None, &mut RandomSource::new(3, 0)).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
    }
}
