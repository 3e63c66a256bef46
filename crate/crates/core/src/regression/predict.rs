use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::pdp::Partition;

use super::chain::Stage2Sample;
use super::design::{assemble_design, linear_predictor, SplineSpec};
use super::outcome::Family;
use super::representatives::{test_representatives, RepresentativeMode};

/// Posterior predictive summaries for test subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    /// ỹ, posterior mean of the linear predictor
    pub y: Vec<f64>,
    /// posterior standard deviation of the linear predictor
    pub sd: Vec<f64>,
    /// ỹ on the response scale: exp for AFT, the inverse link for GLMs
    pub w: Vec<f64>,
    /// test cells filled with training column means
    pub imputed_cells: usize,
}

/// Average the linear predictor of the test subjects over retained draws.
pub fn predict(
    samples: &[Stage2Sample],
    partition: &Partition,
    mode: RepresentativeMode,
    spline: &SplineSpec,
    family: &Family,
    x_new: &CovariateMatrix,
    column_means: &[f64],
) -> Result<Predictions> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("no Stage-2 samples to predict from".into()));
    }
    if x_new.p() != partition.len() || column_means.len() != x_new.p() {
        return Err(Error::InvalidInput(format!(
            "test matrix has {} columns, allocation {} and column means {}",
            x_new.p(),
            partition.len(),
            column_means.len()
        )));
    }
    let mut x = x_new.clone();
    let missing = x.missing_cells();
    for &(i, j) in &missing {
        x.set(i, j, column_means[j]);
    }
    let rows = x.n();
    let mut sum = vec![0.0; rows];
    let mut sum_sq = vec![0.0; rows];
    let mut latent_reps = None;
    for s in samples {
        let reps = match mode {
            RepresentativeMode::Member => test_representatives(partition, mode, &s.indices, &x),
            RepresentativeMode::Latent => latent_reps
                .get_or_insert_with(|| test_representatives(partition, mode, &[], &x))
                .clone(),
        };
        let design = assemble_design(&s.gamma, &reps, &s.knots, spline, rows)?;
        let eta = linear_predictor(&design, &s.beta);
        for (i, e) in eta.iter().enumerate() {
            sum[i] += e;
            sum_sq[i] += e * e;
        }
    }
    let m = samples.len() as f64;
    let y: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let sd = sum_sq
        .iter()
        .zip(&y)
        .map(|(s, mu)| (s / m - mu * mu).max(0.0).sqrt())
        .collect();
    let w = y
        .iter()
        .map(|&v| match family {
            Family::Gaussian => v,
            Family::Aft => v.exp(),
            Family::Glm(spec) => spec.mean(v),
        })
        .collect();
    Ok(Predictions { y, sd, w, imputed_cells: missing.len() })
}

/// Posterior mean of ω₂/(ω₁+ω₂); draws with ω₁+ω₂ = 0 are skipped.
pub fn nonlinearity_measure(omega_trace: &[[f64; 3]]) -> Result<f64> {
    let ratios: Vec<f64> = omega_trace
        .iter()
        .filter(|w| w[1] + w[2] > 0.0)
        .map(|w| w[2] / (w[1] + w[2]))
        .collect();
    if ratios.is_empty() {
        return Err(Error::EmptySamples(format!(
            "all {} ω draws have ω₁ + ω₂ = 0",
            omega_trace.len()
        )));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::Selection;

    #[test]
    fn uniform_omega_gives_half() {
        assert_eq!(nonlinearity_measure(&[[1.0 / 3.0; 3]]).unwrap(), 0.5);
    }

    #[test]
    fn no_spline_weight_gives_zero() {
        assert_eq!(nonlinearity_measure(&[[0.5, 0.5, 0.0], [0.9, 0.1, 0.0]]).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_omega_skipped_or_error() {
        assert_eq!(nonlinearity_measure(&[[1.0, 0.0, 0.0], [0.0, 0.25, 0.75]]).unwrap(), 0.75);
        assert!(nonlinearity_measure(&[[1.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn intercept_only_predicts_mean_intercept() {
        let part = Partition::from_labels(&[0, 0, 1]);
        let x = CovariateMatrix::from_columns(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let samples: Vec<Stage2Sample> = [1.0, 2.0, 4.5]
            .iter()
            .map(|&b0| Stage2Sample {
                indices: vec![0, 2],
                knots: vec![vec![0.0], vec![0.0]],
                gamma: vec![Selection::Excluded; 2],
                beta: vec![b0],
                sigma2: 1.0,
                omega: [1.0 / 3.0; 3],
            })
            .collect();
        let p = predict(
            &samples,
            &part,
            RepresentativeMode::Member,
            &SplineSpec::default(),
            &Family::Gaussian,
            &x,
            &[0.0; 3],
        )
        .unwrap();
        assert!(p.y.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }
}
