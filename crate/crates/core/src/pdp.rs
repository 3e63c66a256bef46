//! Two-parameter Poisson-Dirichlet partitions: the sequential predictive
//! rule, the exchangeable partition probability, stick-breaking weights and
//! the moments of the log stick-breaking probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::sample::{gamma, sample_categorical};
use crate::kernel::special::{digamma, ln_gamma, trigamma};
use crate::kernel::RandomSource;

/// Mass α₁ > 0 and discount 0 ≤ d < 1. `discount == 0.0` is the Dirichlet
/// process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpParams {
    mass: f64,
    discount: f64,
}

impl PdpParams {
    pub fn new(mass: f64, discount: f64) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidInput(format!("mass must be positive, got {mass}")));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidInput(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        Ok(Self { mass, discount })
    }

    pub fn dirichlet(mass: f64) -> Result<Self> {
        Self::new(mass, 0.0)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_dirichlet(&self) -> bool {
        self.discount == 0.0
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(self.mass, discount)
    }

    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        Self::new(mass, self.discount)
    }
}

/// A set partition of `len()` items with canonical labels `0..q` in order of
/// first appearance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    assignments: Vec<usize>,
    sizes: Vec<usize>,
}

impl Partition {
    /// Canonicalize arbitrary labels.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(labels: &[L]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut sizes = Vec::new();
        let assignments = labels
            .iter()
            .map(|l| {
                let next = map.len();
                let k = *map.entry(*l).or_insert(next);
                if k == sizes.len() {
                    sizes.push(0);
                }
                sizes[k] += 1;
                k
            })
            .collect();
        Self { assignments, sizes }
    }

    /// All items in one cluster.
    pub fn single_cluster(p: usize) -> Self {
        Self::from_labels(&vec![0usize; p])
    }

    pub fn singletons(p: usize) -> Self {
        Self::from_labels(&(0..p).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn label(&self, item: usize) -> usize {
        self.assignments[item]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Items of each cluster, in ascending item order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (j, &k) in self.assignments.iter().enumerate() {
            out[k].push(j);
        }
        out
    }

    pub fn same_cluster(&self, a: usize, b: usize) -> bool {
        self.assignments[a] == self.assignments[b]
    }

    /// Labels are contiguous, in first-appearance order, and sizes agree.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = 0usize;
        let mut counts = vec![0usize; self.sizes.len()];
        for &k in &self.assignments {
            if k > seen {
                return Err(Error::InvalidState(format!("label {k} appears before {seen}")));
            }
            if k == seen {
                seen += 1;
            }
            if k >= counts.len() {
                return Err(Error::InvalidState(format!("label {k} out of range")));
            }
            counts[k] += 1;
        }
        if counts != self.sizes || self.sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidState("cluster sizes inconsistent".into()));
        }
        Ok(())
    }
}

/// Predictive probabilities of joining each existing cluster (∝ n_k − d) or a
/// new one (∝ α₁ + q d); the last entry is the new cluster.
pub fn predictive_weights(sizes: &[usize], params: &PdpParams) -> Result<Vec<f64>> {
    if sizes.iter().any(|&n| n < 1) {
        return Err(Error::InvalidState("cluster sizes must be at least 1".into()));
    }
    let d = params.discount;
    let mut w: Vec<f64> = sizes.iter().map(|&n| n as f64 - d).collect();
    w.push(params.mass + sizes.len() as f64 * d);
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Draw a partition of `p` items by sequential application of the
/// predictive rule.
pub fn sample_partition(p: usize, params: &PdpParams, rng: &mut RandomSource) -> Partition {
    let mut assignments = Vec::with_capacity(p);
    let mut sizes: Vec<usize> = Vec::new();
    let d = params.discount;
    for j in 0..p {
        let new_weight = params.mass + sizes.len() as f64 * d;
        let total = j as f64 + params.mass;
        let mut target = crate::kernel::sample::uniform(rng) * total;
        let mut chosen = sizes.len();
        for (k, &n) in sizes.iter().enumerate() {
            let w = n as f64 - d;
            if target < w {
                chosen = k;
                break;
            }
            target -= w;
        }
        debug_assert!(chosen < sizes.len() || target <= new_weight + 1e-9);
        if chosen == sizes.len() {
            sizes.push(0);
        }
        sizes[chosen] += 1;
        assignments.push(chosen);
    }
    Partition { assignments, sizes }
}

/// Log probability of the partition under the PDP prior.
///
/// log ∏_{k<q}(α₁ + k d) + Σ_k log (1−d)_{n_k−1} − log (α₁+1)_{p−1}
pub fn log_eppf(partition: &Partition, params: &PdpParams) -> f64 {
    log_eppf_from_sizes(partition.sizes(), params)
}

pub fn log_eppf_from_sizes(sizes: &[usize], params: &PdpParams) -> f64 {
    let p: usize = sizes.iter().sum();
    if p == 0 {
        return 0.0;
    }
    let a = params.mass;
    let d = params.discount;
    let q = sizes.len();
    let mut out = 0.0;
    for k in 1..q {
        out += (a + k as f64 * d).ln();
    }
    out += SizeHistogram::new(sizes).ln_cluster_terms(d);
    out - (ln_gamma(a + p as f64) - ln_gamma(a + 1.0))
}

/// Cluster-size histogram; lets the EPPF be re-evaluated at many discounts
/// in O(#distinct sizes).
#[derive(Clone, Debug)]
pub struct SizeHistogram {
    counts: Vec<(usize, usize)>,
    n_clusters: usize,
    n_items: usize,
}

impl SizeHistogram {
    pub fn new(sizes: &[usize]) -> Self {
        let mut sorted = sizes.to_vec();
        sorted.sort_unstable();
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for s in sorted {
            match counts.last_mut() {
                Some((size, c)) if *size == s => *c += 1,
                _ => counts.push((s, 1)),
            }
        }
        Self {
            counts,
            n_clusters: sizes.len(),
            n_items: sizes.iter().sum(),
        }
    }

    /// Σ_k log (1−d)_{n_k−1}
    fn ln_cluster_terms(&self, d: f64) -> f64 {
        let base = ln_gamma(1.0 - d);
        self.counts
            .iter()
            .filter(|(s, _)| *s > 1)
            .map(|&(s, c)| c as f64 * (ln_gamma(s as f64 - d) - base))
            .sum()
    }

    pub fn log_eppf(&self, params: &PdpParams) -> f64 {
        let a = params.mass;
        let d = params.discount;
        let mut out = 0.0;
        for k in 1..self.n_clusters {
            out += (a + k as f64 * d).ln();
        }
        out += self.ln_cluster_terms(d);
        out - (ln_gamma(a + self.n_items as f64) - ln_gamma(a + 1.0))
    }
}

/// Stick-breaking draw: V_h ~ Beta(1−d, α₁+hd) and π_h = V_h ∏_{t<h}(1−V_t).
#[derive(Clone, Debug)]
pub struct StickBreaking {
    pub v: Vec<f64>,
    pub pi: Vec<f64>,
    /// log π_h, accumulated in log space
    pub log_pi: Vec<f64>,
}

impl StickBreaking {
    /// Mass left beyond the truncation, ∏_{h≤H}(1−V_h).
    pub fn remainder(&self) -> f64 {
        self.v.iter().map(|v| 1.0 - v).product()
    }
}

pub fn stick_breaking(params: &PdpParams, truncation: usize, rng: &mut RandomSource) -> StickBreaking {
    let a = params.mass;
    let d = params.discount;
    let mut v = Vec::with_capacity(truncation);
    let mut log_pi = Vec::with_capacity(truncation);
    let mut log_rest = 0.0;
    for h in 1..=truncation {
        let g1 = gamma(1.0 - d, 1.0, rng);
        let g2 = gamma(a + h as f64 * d, 1.0, rng);
        let total = g1 + g2;
        v.push(g1 / total);
        log_pi.push(log_rest + g1.ln() - total.ln());
        log_rest += g2.ln() - total.ln();
    }
    let pi = log_pi.iter().map(|l| l.exp()).collect();
    StickBreaking { v, pi, log_pi }
}

/// Mean and variance of log π_h.
pub fn log_pi_moments(params: &PdpParams, h: usize) -> Result<(f64, f64)> {
    if h < 1 {
        return Err(Error::InvalidInput("stick index starts at 1".into()));
    }
    let a = params.mass;
    let d = params.discount;
    let h = h as f64;
    if d == 0.0 {
        let mean = digamma(1.0)? - digamma(a)? - h / a;
        let var = trigamma(1.0)? - trigamma(a)? + h / (a * a);
        Ok((mean, var))
    } else {
        let r = a / d;
        let mean = digamma(1.0 - d)? - digamma(a)? + (digamma(r)? - digamma(r + h)?) / d;
        let var = trigamma(1.0 - d)? - trigamma(a)? + (trigamma(r)? - trigamma(r + h)?) / (d * d);
        Ok((mean, var))
    }
}

/// Exact prior mean of the number of clusters among `p` items.
///
/// Uses E[q_{j+1}] = E[q_j](1 + d/(α₁+j)) + α₁/(α₁+j), which follows from
/// the new-cluster probability being linear in q_j.
pub fn expected_cluster_count(params: &PdpParams, p: usize) -> f64 {
    let a = params.mass;
    let d = params.discount;
    let mut e = 0.0;
    for j in 0..p {
        let denom = a + j as f64;
        e = e * (1.0 + d / denom) + a / denom;
    }
    e
}

/// Asymptotic order of the cluster count: α₁ log p for d = 0, p^d otherwise
/// (the random multiplier of p^d is not included).
pub fn cluster_count_order(params: &PdpParams, p: usize) -> f64 {
    if params.discount == 0.0 {
        params.mass * (p as f64).ln()
    } else {
        (p as f64).powf(params.discount)
    }
}

/// Sample one categorical step of the predictive rule given current sizes.
pub fn sample_predictive(sizes: &[usize], params: &PdpParams, rng: &mut RandomSource) -> Result<usize> {
    let w = predictive_weights(sizes, params)?;
    let lw: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    sample_categorical(&lw, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, d: f64) -> PdpParams {
        PdpParams::new(a, d).unwrap()
    }

    /// Oracle: product of sequential predictive probabilities in the given
    /// presentation order.
    fn sequential_log_prob(labels: &[usize], order: &[usize], p: &PdpParams) -> f64 {
        let mut seen: Vec<usize> = Vec::new();
        let mut sizes: Vec<usize> = Vec::new();
        let mut out = 0.0;
        for &j in order {
            let w = predictive_weights(&sizes, p).unwrap();
            match seen.iter().position(|&l| l == labels[j]) {
                Some(k) => {
                    out += w[k].ln();
                    sizes[k] += 1;
                }
                None => {
                    out += w[sizes.len()].ln();
                    seen.push(labels[j]);
                    sizes.push(1);
                }
            }
        }
        out
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for perm in permutations(n - 1) {
            for pos in 0..=perm.len() {
                let mut p = perm.clone();
                p.insert(pos, n - 1);
                out.push(p);
            }
        }
        out
    }

    fn set_partitions(n: usize) -> Vec<Vec<usize>> {
        // restricted growth strings
        let mut out = Vec::new();
        fn rec(cur: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
            if cur.len() == n {
                out.push(cur.clone());
                return;
            }
            for k in 0..=max + 1 {
                cur.push(k);
                let m = if k > max { k } else { max };
                rec(cur, n, m, out);
                cur.pop();
            }
        }
        if n > 0 {
            let mut cur = vec![0];
            rec(&mut cur, n, 0, &mut out);
        }
        out
    }

    #[test]
    fn params_validation() {
        assert!(PdpParams::new(0.0, 0.1).is_err());
        assert!(PdpParams::new(1.0, 1.0).is_err());
        assert!(PdpParams::new(1.0, -0.1).is_err());
        assert!(PdpParams::new(1.0, 0.0).unwrap().is_dirichlet());
    }

    #[test]
    fn predictive_weight_examples() {
        let w = predictive_weights(&[2, 1], &params(1.0, 0.5)).unwrap();
        for (a, b) in w.iter().zip([0.375, 0.125, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = predictive_weights(&[3], &params(2.0, 0.0)).unwrap();
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.4).abs() < 1e-15);
        assert_eq!(predictive_weights(&[], &params(2.0, 0.3)).unwrap(), vec![1.0]);
        assert!(predictive_weights(&[2, 0], &params(1.0, 0.0)).is_err());
    }

    #[test]
    fn eppf_examples() {
        let two_singletons = Partition::from_labels(&[0, 1]);
        let pair = Partition::from_labels(&[5, 5]);
        assert!((log_eppf(&two_singletons, &params(1.0, 0.0)) - 0.5f64.ln()).abs() < 1e-14);
        assert!((log_eppf(&pair, &params(1.0, 0.0)) - 0.5f64.ln()).abs() < 1e-14);
        assert!((log_eppf(&two_singletons, &params(1.0, 0.5)) - 0.75f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn eppf_exchangeable_over_all_orders() {
        let mut rng = RandomSource::new(11, 0);
        for _ in 0..10 {
            let a = 0.2 + 5.0 * crate::kernel::sample::uniform(&mut rng);
            let d = 0.95 * crate::kernel::sample::uniform(&mut rng);
            let p = params(a, d);
            let part = sample_partition(4, &p, &mut rng);
            let closed = log_eppf(&part, &p);
            for order in permutations(4) {
                let seq = sequential_log_prob(part.assignments(), &order, &p);
                assert!((seq - closed).abs() < 1e-12, "{seq} vs {closed}");
            }
        }
    }

    #[test]
    fn eppf_normalizes_over_partitions_of_three() {
        let parts = set_partitions(3);
        assert_eq!(parts.len(), 5);
        for &d in &[0.0, 0.3, 0.7] {
            for &a in &[0.5, 1.0, 5.0] {
                let total: f64 = parts
                    .iter()
                    .map(|l| log_eppf(&Partition::from_labels(l), &params(a, d)).exp())
                    .sum();
                assert!((total - 1.0).abs() < 1e-12, "a={a} d={d}: {total}");
            }
        }
    }

    #[test]
    fn eppf_large_partition_matches_sequential() {
        let mut rng = RandomSource::new(12, 0);
        let p = params(20.0, 0.33);
        let part = sample_partition(1000, &p, &mut rng);
        let order: Vec<usize> = (0..1000).collect();
        let seq = sequential_log_prob(part.assignments(), &order, &p);
        assert!((seq - log_eppf(&part, &p)).abs() < 1e-8 * seq.abs());
        let hist = SizeHistogram::new(part.sizes());
        assert!((hist.log_eppf(&p) - log_eppf(&part, &p)).abs() < 1e-9);
    }

    #[test]
    fn from_labels_canonicalizes() {
        let p = Partition::from_labels(&[7, 3, 7, 9]);
        assert_eq!(p.assignments(), &[0, 1, 0, 2]);
        assert_eq!(p.sizes(), &[2, 1, 1]);
        p.check_invariants().unwrap();
        assert_eq!(p.members(), vec![vec![0, 2], vec![1], vec![3]]);
    }

    #[test]
    fn sample_partition_single_item() {
        let mut rng = RandomSource::new(1, 0);
        let part = sample_partition(1, &params(3.0, 0.4), &mut rng);
        assert_eq!(part.assignments(), &[0]);
    }

    #[test]
    fn sampled_partitions_are_canonical() {
        let mut rng = RandomSource::new(2, 0);
        for _ in 0..50 {
            sample_partition(200, &params(5.0, 0.5), &mut rng).check_invariants().unwrap();
        }
    }

    #[test]
    fn dirichlet_cluster_count_matches_harmonic_sum() {
        let mut rng = RandomSource::new(0, 0);
        let p = params(1.0, 0.0);
        let reps = 2000;
        let counts: Vec<f64> = (0..reps)
            .map(|_| sample_partition(1000, &p, &mut rng).n_clusters() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / reps as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let exact: f64 = (1..=1000).map(|i| 1.0 / i as f64).sum();
        assert!((exact - 7.485).abs() < 1e-3);
        assert!((mean - exact).abs() < 3.0 * (var / reps as f64).sqrt(), "{mean} vs {exact}");
        assert!((expected_cluster_count(&p, 1000) - exact).abs() < 1e-10);
    }

    #[test]
    fn discount_increases_cluster_count() {
        let mut rng = RandomSource::new(4, 0);
        let reps = 300;
        let mean_q = |d: f64, rng: &mut RandomSource| {
            (0..reps)
                .map(|_| sample_partition(1000, &params(20.0, d), rng).n_clusters() as f64)
                .sum::<f64>()
                / reps as f64
        };
        let dp = mean_q(0.0, &mut rng);
        let pdp = mean_q(0.33, &mut rng);
        assert!(pdp > dp + 10.0, "{pdp} vs {dp}");
    }

    #[test]
    fn expected_cluster_count_examples() {
        let h100: f64 = (1..=100).map(|i| 1.0 / i as f64).sum();
        assert!((expected_cluster_count(&params(1.0, 0.0), 100) - h100).abs() < 1e-12);
        assert!((h100 - 5.1874).abs() < 1e-4);
        assert_eq!(expected_cluster_count(&params(1.0, 0.0), 1), 1.0);
        let direct: f64 = (1..=250).map(|i| 20.0 / (19.0 + i as f64)).sum();
        let got = expected_cluster_count(&params(20.0, 0.0), 250);
        assert!((got - direct).abs() < 1e-10);
        assert!((got - 52.5209).abs() < 1e-4, "{got}");
    }

    #[test]
    fn expected_cluster_count_with_discount_matches_closed_form() {
        // E[q] = (α/d)[(α+d)_p / (α)_p − 1]
        for &(a, d, p) in &[(20.0, 0.33, 250usize), (1.0, 0.5, 1000), (3.0, 0.8, 40)] {
            let ratio = (ln_gamma(a + d + p as f64) - ln_gamma(a + d))
                - (ln_gamma(a + p as f64) - ln_gamma(a));
            let closed = a / d * (ratio.exp() - 1.0);
            let got = expected_cluster_count(&params(a, d), p);
            assert!((got - closed).abs() < 1e-8 * closed, "{got} vs {closed}");
        }
        assert!((cluster_count_order(&params(1.0, 0.5), 100) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn stick_breaking_identities() {
        let mut rng = RandomSource::new(5, 0);
        for &(a, d) in &[(1.0, 0.0), (1.0, 0.5), (20.0, 0.33)] {
            let one = stick_breaking(&params(a, d), 1, &mut rng);
            assert!((one.pi[0] - one.v[0]).abs() < 1e-15);
            let sb = stick_breaking(&params(a, d), 30, &mut rng);
            assert!(sb.pi.iter().all(|&p| p > 0.0 && p < 1.0));
            let total: f64 = sb.pi.iter().sum::<f64>() + sb.remainder();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(sb.pi.iter().sum::<f64>() < 1.0);
        }
    }

    #[test]
    fn first_stick_mean_is_half_for_uniform_break() {
        let mut rng = RandomSource::new(6, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| stick_breaking(&params(1.0, 0.0), 1, &mut rng).pi[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (1.0 / 12.0 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn log_pi_moment_examples() {
        let (m, v) = log_pi_moments(&params(1.0, 0.0), 1).unwrap();
        assert!((m + 1.0).abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        let (m, v) = log_pi_moments(&params(1.0, 0.0), 10).unwrap();
        assert!((m + 10.0).abs() < 1e-12 && (v - 10.0).abs() < 1e-12);
        assert!(log_pi_moments(&params(1.0, 0.0), 0).is_err());
    }

    #[test]
    fn log_pi_moments_match_monte_carlo_at_h3() {
        let p = params(1.0, 0.5);
        let (mean, var) = log_pi_moments(&p, 3).unwrap();
        let mut rng = RandomSource::new(7, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| stick_breaking(&p, 3, &mut rng).log_pi[2]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let s2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((m - mean).abs() < 3.0 * (s2 / n as f64).sqrt());
        let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((m4 - s2 * s2) / n as f64).sqrt();
        assert!((s2 - var).abs() < 3.0 * se_var);
    }
}
