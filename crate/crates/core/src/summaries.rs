//! Posterior summaries of sampled partitions: co-clustering probabilities,
//! least-squares point estimates, pairwise agreement with a reference
//! partition and discount-parameter summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdp::Partition;

/// Streaming pair counts for the co-clustering matrix. Accumulators over
/// disjoint sample sets can be merged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoclusterAccumulator {
    p: usize,
    samples: usize,
    /// strict upper triangle, row-major
    counts: Vec<u32>,
}

fn pair_index(p: usize, j: usize, k: usize) -> usize {
    let (a, b) = if j < k { (j, k) } else { (k, j) };
    a * (2 * p - a - 1) / 2 + (b - a - 1)
}

impl CoclusterAccumulator {
    pub fn new(p: usize) -> Self {
        Self { p, samples: 0, counts: vec![0; p * p.saturating_sub(1) / 2] }
    }

    pub fn n_samples(&self) -> usize {
        self.samples
    }

    pub fn add(&mut self, partition: &Partition) -> Result<()> {
        if partition.len() != self.p {
            return Err(Error::InvalidInput(format!(
                "partition covers {} items, accumulator {}",
                partition.len(),
                self.p
            )));
        }
        for members in partition.members() {
            for (a, &j) in members.iter().enumerate() {
                for &k in &members[a + 1..] {
                    self.counts[pair_index(self.p, j, k)] += 1;
                }
            }
        }
        self.samples += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.p != self.p {
            return Err(Error::InvalidInput("accumulators cover different item sets".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.samples += other.samples;
        Ok(())
    }

    pub fn finish(&self) -> Result<CoclusterMatrix> {
        if self.samples == 0 {
            return Err(Error::EmptySamples("no partitions accumulated".into()));
        }
        let p = self.p;
        let s = self.samples as f64;
        let mut probs = vec![0.0; p * p];
        for j in 0..p {
            probs[j * p + j] = 1.0;
            for k in (j + 1)..p {
                let v = self.counts[pair_index(p, j, k)] as f64 / s;
                probs[j * p + k] = v;
                probs[k * p + j] = v;
            }
        }
        Ok(CoclusterMatrix { p, probs })
    }
}

/// Posterior probability that each pair of items shares a cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoclusterMatrix {
    p: usize,
    probs: Vec<f64>,
}

impl CoclusterMatrix {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.probs[j * self.p + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.probs[j * self.p..(j + 1) * self.p]
    }
}

pub fn accumulate_cocluster(samples: &[Partition]) -> Result<CoclusterMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptySamples("no partitions to accumulate".into()))?;
    let mut acc = CoclusterAccumulator::new(first.len());
    for s in samples {
        acc.add(s)?;
    }
    acc.finish()
}

/// Σ_{j<k} (I[c_j = c_k] − P_jk)².
pub fn least_squares_loss(partition: &Partition, probs: &CoclusterMatrix) -> f64 {
    let p = probs.p();
    let mut loss = 0.0;
    for j in 0..p {
        for k in (j + 1)..p {
            let same = if partition.same_cluster(j, k) { 1.0 } else { 0.0 };
            loss += (same - probs.get(j, k)).powi(2);
        }
    }
    loss
}

/// Index and loss of the sampled partition closest to the co-clustering
/// matrix in squared error; ties go to the earliest sample.
pub fn least_squares_index(samples: &[Partition], probs: &CoclusterMatrix) -> Result<(usize, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("no partitions to choose from".into()));
    }
    let p = probs.p();
    let mut sum_sq = 0.0;
    for j in 0..p {
        for k in (j + 1)..p {
            sum_sq += probs.get(j, k).powi(2);
        }
    }
    let mut best = (0, f64::INFINITY);
    for (s, part) in samples.iter().enumerate() {
        if part.len() != p {
            return Err(Error::InvalidInput("sample does not match the co-clustering matrix".into()));
        }
        // Σ_{pairs} (δ − P)² = #same-pairs − 2 Σ_{same pairs} P + Σ P²
        let mut same = 0.0;
        let mut within = 0.0;
        for members in part.members() {
            let m = members.len() as f64;
            same += m * (m - 1.0) / 2.0;
            for (a, &j) in members.iter().enumerate() {
                let row = probs.row(j);
                for &k in &members[a + 1..] {
                    within += row[k];
                }
            }
        }
        let loss = same - 2.0 * within + sum_sq;
        if loss < best.1 {
            best = (s, loss);
        }
    }
    Ok((best.0, best.1.max(0.0)))
}

pub fn least_squares_allocation(samples: &[Partition], probs: &CoclusterMatrix) -> Result<Partition> {
    let (idx, _) = least_squares_index(samples, probs)?;
    Ok(samples[idx].clone())
}

/// Least-squares choice among labelings of a large item set, comparing each
/// candidate with the average co-assignment of all candidates through
/// pairwise contingency counts instead of an explicit pair matrix.
pub fn least_squares_labeling(labelings: &[Vec<usize>]) -> Result<(usize, f64)> {
    let s = labelings.len();
    let first = labelings
        .first()
        .ok_or_else(|| Error::EmptySamples("no labelings to choose from".into()))?;
    let len = first.len();
    if labelings.iter().any(|l| l.len() != len) {
        return Err(Error::InvalidInput("labelings differ in length".into()));
    }
    let widths: Vec<usize> = labelings.iter().map(|l| l.iter().max().map_or(0, |m| m + 1)).collect();
    let mut shared = vec![vec![0.0; s]; s];
    let mut buffer: Vec<u32> = Vec::new();
    for a in 0..s {
        for b in a..s {
            let wb = widths[b];
            let needed = widths[a] * wb;
            if buffer.len() < needed {
                buffer.resize(needed, 0);
            }
            let mut pairs = 0u64;
            for (x, y) in labelings[a].iter().zip(&labelings[b]) {
                let cell = &mut buffer[x * wb + y];
                pairs += *cell as u64;
                *cell += 1;
            }
            for (x, y) in labelings[a].iter().zip(&labelings[b]) {
                buffer[x * wb + y] = 0;
            }
            shared[a][b] = pairs as f64;
            shared[b][a] = pairs as f64;
        }
    }
    let total_sq: f64 = shared.iter().flatten().sum::<f64>() / (s * s) as f64;
    let mut best = (0, f64::INFINITY);
    for (a, row) in shared.iter().enumerate() {
        let cross: f64 = row.iter().sum::<f64>() / s as f64;
        let loss = row[a] - 2.0 * cross + total_sq;
        if loss < best.1 {
            best = (a, loss);
        }
    }
    Ok((best.0, best.1.max(0.0)))
}

/// Fraction of item pairs in `subset` whose same-cluster status agrees
/// between `c` and the reference `c0`.
pub fn kappa(c: &Partition, c0: &Partition, subset: &[usize]) -> Result<f64> {
    if subset.len() < 2 {
        return Err(Error::UndefinedMetric("kappa needs at least two items".into()));
    }
    if let Some(&j) = subset.iter().find(|&&j| j >= c.len() || j >= c0.len()) {
        return Err(Error::InvalidInput(format!("item {j} not covered by both partitions")));
    }
    let mut agree = 0usize;
    let mut pairs = 0usize;
    for (a, &j) in subset.iter().enumerate() {
        for &k in &subset[a + 1..] {
            pairs += 1;
            if c.same_cluster(j, k) == c0.same_cluster(j, k) {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / pairs as f64)
}

/// Fraction of retained discount draws equal to exactly zero.
pub fn dirichlet_posterior_prob(d_trace: &[f64]) -> Result<f64> {
    if d_trace.is_empty() {
        return Err(Error::EmptySamples("empty discount trace".into()));
    }
    Ok(d_trace.iter().filter(|&&d| d == 0.0).count() as f64 / d_trace.len() as f64)
}

/// Monte Carlo mean with a normal-approximation 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Average of the per-iteration conditional log-odds of d > 0 versus d = 0.
/// By Jensen's inequality this is a lower bound on the log Bayes factor of
/// the PDP against the Dirichlet process.
pub fn logbf_lower_bound(log_odds: &[f64]) -> Result<MeanEstimate> {
    if log_odds.is_empty() {
        return Err(Error::EmptySamples("no log-odds recorded".into()));
    }
    let s = log_odds.len() as f64;
    let mean = log_odds.iter().sum::<f64>() / s;
    let var = if log_odds.len() > 1 {
        log_odds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0)
    } else {
        0.0
    };
    let half = 1.959963984540054 * (var / s).sqrt();
    Ok(MeanEstimate { mean, lower: mean - half, upper: mean + half })
}

/// Equal-tailed credible interval from sorted-sample quantiles (linear
/// interpolation between order statistics).
pub fn credible_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptySamples("no draws for a credible interval".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&sorted, tail), quantile(&sorted, 1.0 - tail)))
}

pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
