use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::kernel::sample::uniform;
use crate::kernel::RandomSource;
use crate::pdp::Partition;
use crate::stage1::LatentTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentativeMode {
    /// one member covariate per cluster
    Member,
    /// the cluster's latent vector
    Latent,
}

/// One representative vector u_k per cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub mode: RepresentativeMode,
    /// member mode: s_k, the covariate index chosen for cluster k
    pub indices: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
}

impl RepresentativeSet {
    pub fn n_clusters(&self) -> usize {
        self.vectors.len()
    }

    /// Member mode: every s_k belongs to cluster k.
    pub fn check_invariants(&self, partition: &Partition) -> Result<()> {
        if self.vectors.len() != partition.n_clusters() {
            return Err(Error::InvalidState(format!(
                "{} representatives for {} clusters",
                self.vectors.len(),
                partition.n_clusters()
            )));
        }
        if self.mode == RepresentativeMode::Member {
            for (k, &s) in self.indices.iter().enumerate() {
                if partition.label(s) != k {
                    return Err(Error::InvalidState(format!(
                        "representative {s} of cluster {k} belongs to cluster {}",
                        partition.label(s)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Replace the representative of cluster k by covariate `s`.
    pub(crate) fn set_member(&mut self, k: usize, s: usize, x: &CovariateMatrix) {
        self.indices[k] = s;
        self.vectors[k] = x.column(s).to_vec();
    }
}

/// Uniform member draws per cluster, or the latent columns verbatim.
pub fn choose_representatives(
    partition: &Partition,
    latent: Option<&LatentTable>,
    x: &CovariateMatrix,
    mode: RepresentativeMode,
    rng: &mut RandomSource,
) -> Result<RepresentativeSet> {
    if partition.len() != x.p() {
        return Err(Error::InvalidInput(format!(
            "allocation covers {} covariates, matrix has {}",
            partition.len(),
            x.p()
        )));
    }
    match mode {
        RepresentativeMode::Member => {
            let indices: Vec<usize> = partition
                .members()
                .iter()
                .map(|m| m[pick(m.len(), rng)])
                .collect();
            let vectors = indices.iter().map(|&s| x.column(s).to_vec()).collect();
            Ok(RepresentativeSet { mode, indices, vectors })
        }
        RepresentativeMode::Latent => {
            let latent = latent.ok_or_else(|| {
                Error::InvalidInput("latent representatives need a latent configuration".into())
            })?;
            if latent.n_clusters() != partition.n_clusters() {
                return Err(Error::InvalidInput(format!(
                    "latent table has {} columns for {} clusters",
                    latent.n_clusters(),
                    partition.n_clusters()
                )));
            }
            Ok(RepresentativeSet { mode, indices: Vec::new(), vectors: latent.columns() })
        }
    }
}

pub(crate) fn pick(len: usize, rng: &mut RandomSource) -> usize {
    ((uniform(rng) * len as f64) as usize).min(len - 1)
}

/// Test-subject representative values. Member mode reads the chosen
/// covariate; latent mode averages the cluster's member covariates, which is
/// the precision-weighted average because every member of a cluster shares
/// the subject's variance indicator.
pub fn test_representatives(
    partition: &Partition,
    mode: RepresentativeMode,
    indices: &[usize],
    x_new: &CovariateMatrix,
) -> Vec<Vec<f64>> {
    match mode {
        RepresentativeMode::Member => indices.iter().map(|&s| x_new.column(s).to_vec()).collect(),
        RepresentativeMode::Latent => partition
            .members()
            .iter()
            .map(|m| {
                (0..x_new.n())
                    .map(|i| m.iter().map(|&j| x_new.get(i, j)).sum::<f64>() / m.len() as f64)
                    .collect()
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Partition, CovariateMatrix) {
        let part = Partition::from_labels(&[0, 1, 0, 2, 1]);
        let values: Vec<f64> = (0..15).map(|v| v as f64).collect();
        (part, CovariateMatrix::from_columns(3, 5, values).unwrap())
    }

    #[test]
    fn singleton_always_represents_itself() {
        let (part, x) = toy();
        let mut rng = RandomSource::new(5, 0);
        for _ in 0..50 {
            let reps =
                choose_representatives(&part, None, &x, RepresentativeMode::Member, &mut rng).unwrap();
            assert_eq!(reps.indices[2], 3);
            reps.check_invariants(&part).unwrap();
        }
    }

    #[test]
    fn members_drawn_uniformly() {
        let (part, x) = toy();
        let mut rng = RandomSource::new(6, 0);
        let draws = 20_000;
        let hits = (0..draws)
            .filter(|_| {
                choose_representatives(&part, None, &x, RepresentativeMode::Member, &mut rng)
                    .unwrap()
                    .indices[0]
                    == 0
            })
            .count();
        let se = (0.25 / draws as f64).sqrt();
        assert!((hits as f64 / draws as f64 - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn latent_mode_copies_columns_exactly() {
        let (part, x) = toy();
        let cols = vec![vec![0.1, 0.2, 0.3], vec![1.5, -2.0, 0.7], vec![3.3, 3.3, 0.0]];
        let latent = LatentTable::from_values(&cols);
        let mut rng = RandomSource::new(7, 0);
        let reps =
            choose_representatives(&part, Some(&latent), &x, RepresentativeMode::Latent, &mut rng)
                .unwrap();
        for k in 0..3 {
            assert_eq!(reps.vectors[k], latent.column(k));
        }
    }

    #[test]
    fn latent_test_values_average_members() {
        let (part, x) = toy();
        let u = test_representatives(&part, RepresentativeMode::Latent, &[], &x);
        assert_eq!(u[0], vec![3.0, 4.0, 5.0]);
        assert_eq!(u[2], x.column(3).to_vec());
    }
}
