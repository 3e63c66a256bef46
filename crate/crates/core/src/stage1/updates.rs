use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::error::Result;
use crate::kernel::sample::{bernoulli, beta, normal, sample_proportional, uniform};
use crate::kernel::special::{ln_gamma, ln_normal_density, log_sum_exp};
use crate::kernel::{sample_categorical, sample_truncated_gamma, RandomSource};
use crate::pdp::{log_eppf, Partition, PdpParams, SizeHistogram};

use super::{LatentTable, Stage1State};

/// Random-walk step on log α for the optional mass updates.
const MASS_STEP: f64 = 0.5;

/// Gaussian log-likelihood of a column given a prototype vector, with the
/// per-row normalizing constants and half-precisions cached.
#[derive(Clone, Debug)]
struct Prototype {
    values: Vec<f64>,
    half_prec: Vec<f64>,
    constant: f64,
}

impl Prototype {
    fn new(values: Vec<f64>, z: &[bool], tau_sq: f64, tau1_sq: f64) -> Self {
        let (c1, c0) = (-0.5 * (2.0 * PI * tau_sq).ln(), -0.5 * (2.0 * PI * tau1_sq).ln());
        let mut constant = 0.0;
        let half_prec = z
            .iter()
            .map(|&zi| {
                if zi {
                    constant += c1;
                    0.5 / tau_sq
                } else {
                    constant += c0;
                    0.5 / tau1_sq
                }
            })
            .collect();
        Self { values, half_prec, constant }
    }

    fn log_lik(&self, col: &[f64]) -> f64 {
        let mut ss = 0.0;
        for ((x, v), h) in col.iter().zip(&self.values).zip(&self.half_prec) {
            let r = x - v;
            ss += h * r * r;
        }
        self.constant - ss
    }
}

#[derive(Clone, Copy, Debug)]
enum AuxCell {
    Atom(usize),
    Fresh(usize),
}

struct AuxVector {
    cells: Vec<AuxCell>,
    z: Vec<bool>,
    proto: Prototype,
}

/// Fresh latent vector drawn cell by cell from the nested-DP urn given every
/// occupied cell plus the auxiliary cells drawn so far.
fn draw_aux_vector(
    state: &Stage1State,
    aux: &[AuxVector],
    fresh: &mut Vec<f64>,
    n: usize,
    rng: &mut RandomSource,
) -> AuxVector {
    let existing = n * state.latent.n_clusters();
    let base_sd = state.base_var.sqrt();
    let mut cells: Vec<AuxCell> = Vec::with_capacity(n);
    for i in 0..n {
        let pool = existing + n * aux.len() + i;
        let u = uniform(rng) * (pool as f64 + state.dp_mass);
        let cell = if u < pool as f64 {
            let r = (u as usize).min(pool - 1);
            if r < existing {
                AuxCell::Atom(state.latent.atom_of(r % n, r / n))
            } else if r - existing < n * aux.len() {
                let r = r - existing;
                aux[r / n].cells[r % n]
            } else {
                cells[r - existing - n * aux.len()]
            }
        } else {
            fresh.push(normal(state.base_mean, base_sd, rng));
            AuxCell::Fresh(fresh.len() - 1)
        };
        cells.push(cell);
    }
    let z: Vec<bool> = (0..n).map(|_| bernoulli(state.xi, rng)).collect();
    let values = cells
        .iter()
        .map(|c| match *c {
            AuxCell::Atom(t) => state.latent.atoms()[t],
            AuxCell::Fresh(f) => fresh[f],
        })
        .collect();
    let proto = Prototype::new(values, &z, state.tau_sq, state.tau1_sq);
    AuxVector { cells, z, proto }
}

/// Canonical relabelling after allocations changed.
fn relabel(state: &mut Stage1State, labels: &[usize]) {
    let mut order = Vec::new();
    let mut seen = vec![false; state.latent.n_clusters()];
    for &k in labels {
        if !seen[k] {
            seen[k] = true;
            order.push(k);
        }
    }
    state.latent.permute_columns(&order);
    state.indicators.permute_columns(&order);
    state.partition = Partition::from_labels(labels);
}

/// Resample every c_j from its full conditional. Existing clusters carry
/// weight (n_k − d)·L_jk; each of the auxiliary latent vectors carries
/// (α₁ + q d)/M · L. A singleton's own vector is kept as one of the
/// auxiliaries so it can be retained.
pub fn update_allocations(
    state: &mut Stage1State,
    x: &CovariateMatrix,
    rng: &mut RandomSource,
) -> Result<()> {
    let n = x.n();
    let n_aux = state.hyper.aux_components;
    let d = state.pdp.discount();
    let alpha = state.pdp.mass();
    let (tau_sq, tau1_sq) = (state.tau_sq, state.tau1_sq);
    let mut labels = state.partition.assignments().to_vec();
    let mut sizes = state.partition.sizes().to_vec();
    let mut protos: Vec<Prototype> = (0..sizes.len())
        .map(|k| Prototype::new(state.latent.column(k), state.indicators.column(k), tau_sq, tau1_sq))
        .collect();
    let mut log_w = Vec::new();
    let mut fresh = Vec::new();

    for j in 0..x.p() {
        let col = x.column(j);
        let k0 = labels[j];
        sizes[k0] -= 1;
        let mut aux: Vec<AuxVector> = Vec::with_capacity(n_aux);
        fresh.clear();
        if sizes[k0] == 0 {
            let cells = state.latent.swap_remove_column(k0);
            let z = state.indicators.swap_remove_column(k0);
            let proto = protos.swap_remove(k0);
            sizes.swap_remove(k0);
            let moved = sizes.len();
            if k0 != moved {
                for l in labels.iter_mut().filter(|l| **l == moved) {
                    *l = k0;
                }
            }
            aux.push(AuxVector { cells: cells.into_iter().map(AuxCell::Atom).collect(), z, proto });
        }
        let q = sizes.len();
        while aux.len() < n_aux {
            let v = draw_aux_vector(state, &aux, &mut fresh, n, rng);
            aux.push(v);
        }

        log_w.clear();
        for (size, proto) in sizes.iter().zip(&protos) {
            log_w.push((*size as f64 - d).ln() + proto.log_lik(col));
        }
        let new_w = ((alpha + q as f64 * d) / n_aux as f64).ln();
        for a in &aux {
            log_w.push(new_w + a.proto.log_lik(col));
        }
        let choice = sample_categorical(&log_w, rng)?;
        if choice < q {
            labels[j] = choice;
            sizes[choice] += 1;
        } else {
            let chosen = aux.swap_remove(choice - q);
            let mut fresh_atoms = vec![usize::MAX; fresh.len()];
            let cells = chosen
                .cells
                .iter()
                .map(|c| match *c {
                    AuxCell::Atom(t) => t,
                    AuxCell::Fresh(f) => {
                        if fresh_atoms[f] == usize::MAX {
                            fresh_atoms[f] = state.latent.push_atom(fresh[f], 0);
                        }
                        fresh_atoms[f]
                    }
                })
                .collect();
            state.latent.push_column(cells);
            state.indicators.push_column(chosen.z);
            protos.push(chosen.proto);
            sizes.push(1);
            labels[j] = q;
        }
    }
    state.latent.compact();
    relabel(state, &labels);
    Ok(())
}

/// Per-cell sufficient statistics: precision a = m/s² and mean x̄ over the
/// cluster's member columns.
fn cell_statistics(state: &Stage1State, x: &CovariateMatrix) -> Vec<Vec<(f64, f64)>> {
    state
        .partition
        .members()
        .iter()
        .enumerate()
        .map(|(k, members)| {
            let m = members.len() as f64;
            (0..x.n())
                .map(|i| {
                    let mean = members.iter().map(|&j| x.get(i, j)).sum::<f64>() / m;
                    let var = state.cell_variance(state.indicators.get(i, k));
                    (m / var, mean)
                })
                .collect()
        })
        .collect()
}

/// Reassign every latent cell through the collapsed Pólya urn (atom values
/// integrated against the normal base), then redraw each atom from its
/// normal full conditional.
pub fn update_latent_elements(
    state: &mut Stage1State,
    x: &CovariateMatrix,
    rng: &mut RandomSource,
) -> Result<()> {
    let n = x.n();
    let stats = cell_statistics(state, x);
    let q = stats.len();
    let mut cells: Vec<Vec<usize>> = (0..q).map(|k| state.latent.column_atoms(k).to_vec()).collect();
    let mut counts = state.latent.atom_counts().to_vec();
    let mut prec = vec![0.0; counts.len()];
    let mut weighted = vec![0.0; counts.len()];
    for (k, col) in stats.iter().enumerate() {
        for (i, &(a, mean)) in col.iter().enumerate() {
            let t = cells[k][i];
            prec[t] += a;
            weighted[t] += a * mean;
        }
    }
    let base_prec = 1.0 / state.base_var;
    let base_weighted = base_prec * state.base_mean;
    let posterior = |p: f64, w: f64| {
        let total = base_prec + p;
        ((base_weighted + w) / total, 1.0 / total)
    };
    let mut post: Vec<(f64, f64)> = prec.iter().zip(&weighted).map(|(&p, &w)| posterior(p, w)).collect();
    let ln_dp_mass = state.dp_mass.ln();
    let mut log_w = Vec::new();
    let mut weights = Vec::new();
    // per z value: c_t/√s_t and 1/(2s_t) with s_t = v_t + 1/a for every atom t
    let mut coef = [Vec::new(), Vec::new()];
    let mut half_prec = [Vec::new(), Vec::new()];
    let refresh = |coef: &mut [Vec<f64>; 2], half_prec: &mut [Vec<f64>; 2], inv: &[f64; 2], t: usize, c: usize, v: f64| {
        for z in 0..2 {
            let s = v + inv[z];
            coef[z][t] = if c > 0 { c as f64 / s.sqrt() } else { 0.0 };
            half_prec[z][t] = 0.5 / s;
        }
    };

    for k in 0..q {
        let size = state.partition.sizes()[k] as f64;
        let inv = [state.tau1_sq / size, state.tau_sq / size];
        for z in 0..2 {
            coef[z].resize(counts.len(), 0.0);
            half_prec[z].resize(counts.len(), 0.0);
        }
        for t in 0..counts.len() {
            refresh(&mut coef, &mut half_prec, &inv, t, counts[t], post[t].1);
        }
        for i in 0..n {
            let (a, mean) = stats[k][i];
            let zi = state.indicators.get(i, k) as usize;
            let t0 = cells[k][i];
            counts[t0] -= 1;
            if counts[t0] == 0 {
                prec[t0] = 0.0;
                weighted[t0] = 0.0;
            } else {
                prec[t0] -= a;
                weighted[t0] -= a * mean;
            }
            post[t0] = posterior(prec[t0], weighted[t0]);
            refresh(&mut coef, &mut half_prec, &inv, t0, counts[t0], post[t0].1);

            let inv_a = 1.0 / a;
            weights.clear();
            weights.extend(
                post.iter()
                    .zip(&coef[zi])
                    .zip(&half_prec[zi])
                    .map(|((&(m, _), &c), &h)| if c > 0.0 { c * (-(mean - m).powi(2) * h).exp() } else { 0.0 }),
            );
            let s = state.base_var + inv_a;
            weights.push(state.dp_mass * (-0.5 * (mean - state.base_mean).powi(2) / s).exp() / s.sqrt());
            let choice = match sample_proportional(&weights, rng) {
                Some(c) => c,
                None => {
                    log_w.clear();
                    for (t, &c) in counts.iter().enumerate() {
                        log_w.push(if c > 0 {
                            (c as f64).ln() + ln_normal_density(mean, post[t].0, post[t].1 + inv_a)
                        } else {
                            f64::NEG_INFINITY
                        });
                    }
                    log_w.push(ln_dp_mass + ln_normal_density(mean, state.base_mean, s));
                    sample_categorical(&log_w, rng)?
                }
            };
            let t = if choice < counts.len() {
                choice
            } else if counts[t0] == 0 {
                t0
            } else {
                counts.push(0);
                prec.push(0.0);
                weighted.push(0.0);
                post.push((0.0, 0.0));
                for z in 0..2 {
                    coef[z].push(0.0);
                    half_prec[z].push(0.0);
                }
                counts.len() - 1
            };
            counts[t] += 1;
            prec[t] += a;
            weighted[t] += a * mean;
            post[t] = posterior(prec[t], weighted[t]);
            refresh(&mut coef, &mut half_prec, &inv, t, counts[t], post[t].1);
            cells[k][i] = t;
        }
    }

    let atoms = counts
        .iter()
        .zip(&post)
        .map(|(&c, &(m, v))| if c > 0 { normal(m, v.sqrt(), rng) } else { 0.0 })
        .collect();
    state.latent = LatentTable::from_parts(atoms, cells)?;
    Ok(())
}

/// Σ_{j ∈ cluster k} (x_ij − v_ik)² for every cell.
fn cell_residuals(state: &Stage1State, x: &CovariateMatrix) -> Vec<Vec<f64>> {
    state
        .partition
        .members()
        .iter()
        .enumerate()
        .map(|(k, members)| {
            let v = state.latent.column(k);
            let mut ss = vec![0.0; x.n()];
            for &j in members {
                for (i, (s, xi)) in ss.iter_mut().zip(x.column(j)).enumerate() {
                    *s += (xi - v[i]).powi(2);
                }
            }
            ss
        })
        .collect()
}

/// Resample each z_ik comparing ξ N(·; v_ik, τ²) with (1−ξ) N(·; v_ik, τ₁²)
/// over the cluster's member columns.
pub fn update_indicators(
    state: &mut Stage1State,
    x: &CovariateMatrix,
    rng: &mut RandomSource,
) -> Result<()> {
    let residuals = cell_residuals(state, x);
    let sizes = state.partition.sizes().to_vec();
    let (ln_xi, ln_not) = (state.xi.ln(), (1.0 - state.xi).ln());
    let (ln_t, ln_t1) = ((2.0 * PI * state.tau_sq).ln(), (2.0 * PI * state.tau1_sq).ln());
    for (k, ss_col) in residuals.iter().enumerate() {
        let m = sizes[k] as f64;
        for (i, &ss) in ss_col.iter().enumerate() {
            let l1 = ln_xi - 0.5 * m * ln_t - 0.5 * ss / state.tau_sq;
            let l0 = ln_not - 0.5 * m * ln_t1 - 0.5 * ss / state.tau1_sq;
            let p1 = 1.0 / (1.0 + (l0 - l1).exp());
            state.indicators.set(i, k, bernoulli(p1, rng));
        }
    }
    Ok(())
}

/// ξ ~ Beta(ι₁ + #{z=1}, ι₀ + #{z=0}).
pub fn update_xi(state: &mut Stage1State, rng: &mut RandomSource) {
    let ones = state.indicators.ones() as f64;
    let zeros = state.indicators.total() as f64 - ones;
    let [a, b] = state.hyper.xi_prior;
    state.xi = beta(a + ones, b + zeros, rng).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
}

/// τ² and τ₁² from their inverse-gamma full conditionals, drawn on the
/// precision scale within τ* ≤ τ < τ₁.
pub fn update_variances(
    state: &mut Stage1State,
    x: &CovariateMatrix,
    rng: &mut RandomSource,
) -> Result<()> {
    let residuals = cell_residuals(state, x);
    let sizes = state.partition.sizes();
    let (mut ss1, mut m1, mut ss0, mut m0) = (0.0, 0.0, 0.0, 0.0);
    for (k, col) in residuals.iter().enumerate() {
        for (i, &ss) in col.iter().enumerate() {
            if state.indicators.get(i, k) {
                ss1 += ss;
                m1 += sizes[k] as f64;
            } else {
                ss0 += ss;
                m0 += sizes[k] as f64;
            }
        }
    }
    let h = &state.hyper;
    let ceiling = 1.0 / (h.tau_floor * h.tau_floor);
    let prec = sample_truncated_gamma(
        h.tau_shape + 0.5 * m1,
        h.tau_scale + 0.5 * ss1,
        1.0 / state.tau1_sq,
        ceiling,
        rng,
    )?;
    state.tau_sq = 1.0 / prec;
    let prec1 = sample_truncated_gamma(
        h.tau1_shape + 0.5 * m0,
        h.tau1_scale + 0.5 * ss0,
        0.0,
        prec,
        rng,
    )?;
    state.tau1_sq = 1.0 / prec1;
    Ok(())
}

/// Outcome of one discount update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountStep {
    pub accepted: bool,
    /// log P(d > 0 | partition, α₁) − log P(d = 0 | partition, α₁)
    pub log_odds: f64,
}

/// Independence Metropolis–Hastings over the ½δ₀ + ½U(0,1) prior, which is
/// also the proposal. Always reports the conditional log-odds of d > 0.
pub fn update_discount(state: &mut Stage1State, rng: &mut RandomSource) -> Result<DiscountStep> {
    let hist = SizeHistogram::new(state.partition.sizes());
    let mass = state.pdp.mass();
    let eppf = |d: f64| -> Result<f64> { Ok(hist.log_eppf(&PdpParams::new(mass, d)?)) };
    let nodes = state.hyper.quadrature_nodes;
    let grid = (0..nodes)
        .map(|k| eppf((k as f64 + 0.5) / nodes as f64))
        .collect::<Result<Vec<_>>>()?;
    let log_odds = log_sum_exp(&grid) - (nodes as f64).ln() - eppf(0.0)?;
    if !state.hyper.update_discount {
        return Ok(DiscountStep { accepted: false, log_odds });
    }
    let proposal = if bernoulli(0.5, rng) { 0.0 } else { uniform(rng) };
    let log_ratio = eppf(proposal)? - eppf(state.pdp.discount())?;
    let accepted = uniform(rng).ln() < log_ratio;
    if accepted {
        state.pdp = state.pdp.with_discount(proposal)?;
    }
    Ok(DiscountStep { accepted, log_odds })
}

/// Log probability of the cell-to-atom partition under DP(α₂).
fn dp_cell_log_prob(latent: &LatentTable, dp_mass: f64) -> f64 {
    let cells = latent.n_cells() as f64;
    let k = latent.n_atoms() as f64;
    k * dp_mass.ln() + latent.atom_counts().iter().map(|&c| ln_gamma(c as f64)).sum::<f64>()
        + ln_gamma(dp_mass)
        - ln_gamma(dp_mass + cells)
}

/// Random-walk Metropolis on log α₁ and log α₂ under Gamma(1,1) priors, when
/// enabled.
pub fn update_masses(state: &mut Stage1State, rng: &mut RandomSource) -> Result<()> {
    let log_target = |a: f64, ll: f64| ll - a + a.ln();
    if state.hyper.sample_mass {
        let cur = state.pdp.mass();
        let prop = cur * (MASS_STEP * crate::kernel::sample::standard_normal(rng)).exp();
        let cand = state.pdp.with_mass(prop)?;
        let ratio = log_target(prop, log_eppf(&state.partition, &cand))
            - log_target(cur, log_eppf(&state.partition, &state.pdp));
        if uniform(rng).ln() < ratio {
            state.pdp = cand;
        }
    }
    if state.hyper.sample_dp_mass {
        let cur = state.dp_mass;
        let prop = cur * (MASS_STEP * crate::kernel::sample::standard_normal(rng)).exp();
        let ratio = log_target(prop, dp_cell_log_prob(&state.latent, prop))
            - log_target(cur, dp_cell_log_prob(&state.latent, cur));
        if uniform(rng).ln() < ratio {
            state.dp_mass = prop;
        }
    }
    Ok(())
}

/// Redraw each missing x_ij from N(v_{i,c_j}, s²(z)); observed cells are
/// left untouched.
pub fn impute_missing(state: &Stage1State, x: &mut CovariateMatrix, rng: &mut RandomSource) {
    for (i, j) in x.missing_cells() {
        let k = state.partition.label(j);
        let sd = state.cell_variance(state.indicators.get(i, k)).sqrt();
        let v = normal(state.latent.value(i, k), sd, rng);
        x.set(i, j, v);
    }
}

pub fn log_likelihood(state: &Stage1State, x: &CovariateMatrix) -> f64 {
    let protos: Vec<Prototype> = (0..state.n_clusters())
        .map(|k| {
            Prototype::new(
                state.latent.column(k),
                state.indicators.column(k),
                state.tau_sq,
                state.tau1_sq,
            )
        })
        .collect();
    (0..x.p()).map(|j| protos[state.partition.label(j)].log_lik(x.column(j))).sum()
}

fn ln_inv_gamma(v: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * v.ln() - scale / v
}

/// Unnormalized log joint density of data and state (discount prior and
/// variance truncation constants omitted).
pub fn log_joint(state: &Stage1State, x: &CovariateMatrix) -> f64 {
    let h = &state.hyper;
    let ones = state.indicators.ones() as f64;
    let zeros = state.indicators.total() as f64 - ones;
    let [a, b] = h.xi_prior;
    let atoms: f64 = state
        .latent
        .atoms()
        .iter()
        .map(|&v| ln_normal_density(v, state.base_mean, state.base_var))
        .sum();
    log_likelihood(state, x)
        + log_eppf(&state.partition, &state.pdp)
        + dp_cell_log_prob(&state.latent, state.dp_mass)
        + atoms
        + (a + ones - 1.0) * state.xi.ln()
        + (b + zeros - 1.0) * (1.0 - state.xi).ln()
        + ln_inv_gamma(state.tau_sq, h.tau_shape, h.tau_scale)
        + ln_inv_gamma(state.tau1_sq, h.tau1_shape, h.tau1_scale)
}

/// One full scan in the fixed order allocations → latent elements →
/// indicators → variances → ξ → d (→ masses), then imputation of missing
/// covariates.
pub fn sweep(
    state: &mut Stage1State,
    x: &mut CovariateMatrix,
    rng: &mut RandomSource,
) -> Result<DiscountStep> {
    update_allocations(state, x, rng)?;
    update_latent_elements(state, x, rng)?;
    update_indicators(state, x, rng)?;
    update_variances(state, x, rng)?;
    update_xi(state, rng);
    let step = update_discount(state, rng)?;
    update_masses(state, rng)?;
    if x.has_missing() {
        impute_missing(state, x, rng);
    }
    Ok(step)
}
