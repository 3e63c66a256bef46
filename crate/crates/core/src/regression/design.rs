use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::summaries::quantile;

/// Role of a cluster representative in the linear predictor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selection {
    Excluded,
    Linear,
    Spline,
}

impl Selection {
    pub const ALL: [Selection; 3] = [Selection::Excluded, Selection::Linear, Selection::Spline];

    pub fn index(self) -> usize {
        match self {
            Selection::Excluded => 0,
            Selection::Linear => 1,
            Selection::Spline => 2,
        }
    }

    pub fn from_index(t: usize) -> Self {
        Self::ALL[t]
    }
}

/// Truncated-power spline layout shared by every cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplineSpec {
    /// knots per nonlinear predictor (m)
    pub knots: usize,
    /// spline order (r)
    pub order: usize,
}

impl Default for SplineSpec {
    fn default() -> Self {
        Self { knots: 1, order: 1 }
    }
}

impl SplineSpec {
    pub fn block_width(&self) -> usize {
        self.knots + self.order
    }

    /// Intercept plus one column per linear and m + r per spline predictor.
    pub fn design_width(&self, gamma: &[Selection]) -> usize {
        1 + gamma
            .iter()
            .map(|s| match s {
                Selection::Excluded => 0,
                Selection::Linear => 1,
                Selection::Spline => self.block_width(),
            })
            .sum::<usize>()
    }
}

/// Columns u, u², …, u^r, (u−κ₁)₊^r, …, (u−κ_m)₊^r.
pub fn spline_basis(u: &[f64], knots: &[f64], order: usize) -> Result<Vec<Vec<f64>>> {
    if knots.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidInput("spline knots must be sorted".into()));
    }
    if order == 0 {
        return Err(Error::InvalidInput("spline order must be at least 1".into()));
    }
    let mut cols: Vec<Vec<f64>> = (1..=order as i32)
        .map(|e| u.iter().map(|v| v.powi(e)).collect())
        .collect();
    for &kappa in knots {
        cols.push(u.iter().map(|v| (v - kappa).max(0.0).powi(order as i32)).collect());
    }
    Ok(cols)
}

/// Knots at the j/(m+1) sample quantiles of `u` (the median when m = 1).
pub fn quantile_knots(u: &[f64], m: usize) -> Vec<f64> {
    if u.is_empty() {
        return vec![0.0; m];
    }
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..=m).map(|j| quantile(&sorted, j as f64 / (m + 1) as f64)).collect()
}

/// Design matrix without the column-count check, for test subjects.
pub(crate) fn assemble_design(
    gamma: &[Selection],
    reps: &[Vec<f64>],
    knots: &[Vec<f64>],
    spline: &SplineSpec,
    rows: usize,
) -> Result<DMatrix<f64>> {
    let width = spline.design_width(gamma);
    let mut design = DMatrix::zeros(rows, width);
    design.column_mut(0).fill(1.0);
    let mut col = 1;
    for (k, s) in gamma.iter().enumerate() {
        if *s == Selection::Linear {
            for (i, v) in reps[k].iter().enumerate() {
                design[(i, col)] = *v;
            }
            col += 1;
        }
    }
    for (k, s) in gamma.iter().enumerate() {
        if *s == Selection::Spline {
            for block in spline_basis(&reps[k], &knots[k], spline.order)? {
                for (i, v) in block.iter().enumerate() {
                    design[(i, col)] = *v;
                }
                col += 1;
            }
        }
    }
    Ok(design)
}

/// U_γ: intercept, linear columns, then spline blocks, each in ascending
/// cluster order.
pub fn build_design(
    gamma: &[Selection],
    reps: &[Vec<f64>],
    knots: &[Vec<f64>],
    spline: &SplineSpec,
) -> Result<DMatrix<f64>> {
    let rows = reps.first().map_or(0, Vec::len);
    let columns = spline.design_width(gamma);
    if columns >= rows {
        return Err(Error::ConstraintViolation { columns, rows });
    }
    assemble_design(gamma, reps, knots, spline, rows)
}

/// Design row-by-coefficient products summed left to right.
pub fn linear_predictor(design: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..design.nrows())
        .map(|i| (0..design.ncols()).map(|c| design[(i, c)] * beta[c]).sum())
        .collect()
}
