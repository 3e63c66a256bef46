use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::pdp::{Partition, PdpParams};

use super::{Hyperparameters, IndicatorTable, LatentTable, Stage1Config, Stage1State};

const LLOYD_PASSES: usize = 5;
/// Slack on the expected within-cluster distance before a column opens a new
/// cluster during seeding.
const JOIN_SLACK: f64 = 1.3;

fn mean_sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Noise-scale estimate: half the median over columns of the mean squared
/// distance to the nearest other column.
fn noise_scale(x: &CovariateMatrix) -> f64 {
    let p = x.p();
    let mut nearest = vec![f64::INFINITY; p];
    for j in 0..p {
        for k in (j + 1)..p {
            let d = mean_sq_distance(x.column(j), x.column(k));
            nearest[j] = nearest[j].min(d);
            nearest[k] = nearest[k].min(d);
        }
    }
    nearest.sort_by(f64::total_cmp);
    let mid = p / 2;
    let median = if p % 2 == 1 { nearest[mid] } else { 0.5 * (nearest[mid - 1] + nearest[mid]) };
    0.5 * median
}

/// Leader clustering of the columns followed by a few Lloyd passes. A column
/// joins the closest centre when its distance is within what noise of the
/// estimated scale would produce, otherwise it seeds a new cluster.
pub fn initial_partition(x: &CovariateMatrix) -> Result<Partition> {
    let (_, total_var) = x.overall_moments();
    if !(total_var > 0.0) {
        return Err(Error::Degenerate("covariate matrix has zero variance".into()));
    }
    let n = x.n();
    let scale = noise_scale(x).max(1e-12 * total_var);
    let threshold = |size: usize| JOIN_SLACK * scale * (1.0 + 1.0 / size as f64) + 1e-12 * total_var;

    let mut centres: Vec<Vec<f64>> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut labels = vec![0usize; x.p()];
    for (j, label) in labels.iter_mut().enumerate() {
        let col = x.column(j);
        let best = nearest_centre(col, &centres);
        match best {
            Some((k, d)) if d <= threshold(sizes[k]) => {
                let m = sizes[k] as f64;
                for (c, v) in centres[k].iter_mut().zip(col) {
                    *c = (*c * m + v) / (m + 1.0);
                }
                sizes[k] += 1;
                *label = k;
            }
            _ => {
                centres.push(col.to_vec());
                sizes.push(1);
                *label = centres.len() - 1;
            }
        }
    }

    for _ in 0..LLOYD_PASSES {
        let mut changed = false;
        let mut next = labels.clone();
        for (j, label) in next.iter_mut().enumerate() {
            let col = x.column(j);
            let (k, d) = nearest_centre(col, &centres).expect("at least one centre");
            if k != *label && d <= threshold(sizes[k]) {
                *label = k;
                changed = true;
            }
        }
        let part = Partition::from_labels(&next);
        labels = part.assignments().to_vec();
        centres = vec![vec![0.0; n]; part.n_clusters()];
        sizes = part.sizes().to_vec();
        for (j, &k) in labels.iter().enumerate() {
            for (c, v) in centres[k].iter_mut().zip(x.column(j)) {
                *c += v / sizes[k] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Partition::from_labels(&labels))
}

fn nearest_centre(col: &[f64], centres: &[Vec<f64>]) -> Option<(usize, f64)> {
    centres
        .iter()
        .enumerate()
        .map(|(k, c)| (k, mean_sq_distance(col, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Latent columns equal to within-cluster subject means.
pub(crate) fn cluster_means(x: &CovariateMatrix, partition: &Partition) -> Vec<Vec<f64>> {
    partition
        .members()
        .iter()
        .map(|members| {
            (0..x.n())
                .map(|i| members.iter().map(|&j| x.get(i, j)).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect()
}

/// Pooled within-cluster residual variance over clusters with ≥ 2 members.
fn within_variance(x: &CovariateMatrix, partition: &Partition, means: &[Vec<f64>]) -> Option<f64> {
    let (mut ss, mut dof) = (0.0, 0usize);
    for (k, members) in partition.members().iter().enumerate() {
        if members.len() < 2 {
            continue;
        }
        for &j in members {
            ss += mean_sq_distance(x.column(j), &means[k]) * x.n() as f64;
        }
        dof += x.n() * (members.len() - 1);
    }
    (dof > 0).then(|| ss / dof as f64)
}

/// State built from a given allocation: latent elements at within-cluster
/// means, one atom per cell, all indicators 1, variances from residual
/// moments.
pub(crate) fn state_for_partition(
    x: &CovariateMatrix,
    partition: Partition,
    config: &Stage1Config,
) -> Result<Stage1State> {
    config.validate()?;
    let (base_mean, total_var) = x.overall_moments();
    if !(total_var > 0.0) {
        return Err(Error::Degenerate("covariate matrix has zero variance".into()));
    }
    let means = cluster_means(x, &partition);
    let floor_sq = config.tau_floor * config.tau_floor;
    let tau_sq = within_variance(x, &partition, &means)
        .unwrap_or_else(|| noise_scale(x))
        .max(1.01 * floor_sq);
    let tau1_sq = total_var.max(4.0 * tau_sq);
    let shape = config.variance_shape;
    let hyper = Hyperparameters {
        tau_floor: config.tau_floor,
        tau_shape: shape,
        tau_scale: (shape - 1.0) * tau_sq,
        tau1_shape: shape,
        tau1_scale: (shape - 1.0) * tau1_sq,
        xi_prior: config.xi_prior,
        aux_components: config.aux_components,
        quadrature_nodes: config.quadrature_nodes,
        update_discount: config.update_discount,
        sample_mass: config.sample_mass,
        sample_dp_mass: config.sample_dp_mass,
    };
    let q = partition.n_clusters();
    Ok(Stage1State {
        latent: LatentTable::from_values(&means),
        indicators: IndicatorTable::all_ones(x.n(), q),
        partition,
        tau_sq,
        tau1_sq,
        xi: config.xi_prior[0] / (config.xi_prior[0] + config.xi_prior[1]),
        pdp: PdpParams::new(config.mass, config.initial_discount)?,
        dp_mass: config.dp_mass,
        base_mean,
        base_var: total_var,
        hyper,
    })
}

pub fn init_state(x: &CovariateMatrix, config: &Stage1Config) -> Result<Stage1State> {
    let partition = initial_partition(x)?;
    state_for_partition(x, partition, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_blocks_seed_two_clusters() {
        let n = 8;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos() * 2.0).collect();
        let mut values = Vec::new();
        for j in 0..6 {
            let src = if j % 2 == 0 { &a } else { &b };
            values.extend(src.iter().enumerate().map(|(i, v)| v + 1e-6 * ((i + j) as f64).sin()));
        }
        let x = CovariateMatrix::from_columns(n, 6, values).unwrap();
        let part = initial_partition(&x).unwrap();
        assert_eq!(part.assignments(), &[0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn constant_matrix_is_degenerate() {
        let x = CovariateMatrix::from_columns(3, 2, vec![1.0; 6]).unwrap();
        assert!(matches!(initial_partition(&x), Err(Error::Degenerate(_))));
        assert!(init_state(&x, &Stage1Config::default()).is_err());
    }

    #[test]
    fn initial_state_is_valid() {
        let x = CovariateMatrix::from_columns(
            4,
            3,
            vec![0.0, 1.0, 2.0, 3.0, 0.1, 1.1, 2.1, 2.9, 5.0, -1.0, 4.0, 0.0],
        )
        .unwrap();
        let s = init_state(&x, &Stage1Config::default()).unwrap();
        s.check_invariants(4).unwrap();
        assert_eq!(s.indicators.ones(), s.indicators.total());
        assert_eq!(s.latent.n_clusters(), s.n_clusters());
    }
}
