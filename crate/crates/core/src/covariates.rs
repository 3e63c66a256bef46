use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// n × p covariate matrix stored column-major, so each covariate column is a
/// contiguous slice. Missing cells carry a placeholder value until imputed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl CovariateMatrix {
    /// Build from column-major values with no missing cells.
    pub fn from_columns(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        Self::with_missing(n, p, values, vec![false; n * p])
    }

    /// Build from row-major data; `None` marks a missing cell.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::InvalidInput(format!(
                "row {i} has {} columns, expected {p}",
                r.len()
            )));
        }
        let mut values = vec![0.0; n * p];
        let mut missing = vec![false; n * p];
        for (i, row) in rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                match cell {
                    Some(v) => values[j * n + i] = *v,
                    None => missing[j * n + i] = true,
                }
            }
        }
        Self::with_missing(n, p, values, missing)
    }

    pub fn with_missing(n: usize, p: usize, values: Vec<f64>, missing: Vec<bool>) -> Result<Self> {
        if n < 2 || p < 2 {
            return Err(Error::InvalidInput(format!(
                "covariate matrix needs n >= 2 and p >= 2, got {n} x {p}"
            )));
        }
        if values.len() != n * p || missing.len() != n * p {
            return Err(Error::InvalidInput("value buffer does not match n x p".into()));
        }
        for j in 0..p {
            for i in 0..n {
                let idx = j * n + i;
                if !missing[idx] && !values[idx].is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite value at row {i}, column {j}"
                    )));
                }
            }
            if (0..n).all(|i| missing[j * n + i]) {
                return Err(Error::InvalidInput(format!("column {j} is entirely missing")));
            }
        }
        let mut m = Self { n, p, values, missing };
        m.fill_missing_with_column_means();
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.n + i] = v;
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing[j * self.n + i]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.get(i, j)).collect()
    }

    /// Missing cells as (row, column) pairs.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.p {
            for i in 0..self.n {
                if self.missing[j * self.n + i] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * self.p);
        let mut missing = Vec::with_capacity(n * self.p);
        for j in 0..self.p {
            for &i in rows {
                values.push(self.get(i, j));
                missing.push(self.is_missing(i, j));
            }
        }
        Self::with_missing(n, self.p, values, missing)
    }

    fn fill_missing_with_column_means(&mut self) {
        for j in 0..self.p {
            let (mut sum, mut count) = (0.0, 0usize);
            for i in 0..self.n {
                if !self.is_missing(i, j) {
                    sum += self.get(i, j);
                    count += 1;
                }
            }
            let mean = sum / count as f64;
            for i in 0..self.n {
                if self.is_missing(i, j) {
                    self.set(i, j, mean);
                }
            }
        }
    }

    /// Mean and variance over every observed cell.
    pub fn overall_moments(&self) -> (f64, f64) {
        let (mut sum, mut count) = (0.0, 0usize);
        for (v, m) in self.values.iter().zip(&self.missing) {
            if !m {
                sum += v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let ss: f64 = self
            .values
            .iter()
            .zip(&self.missing)
            .filter(|(_, m)| !**m)
            .map(|(v, _)| (v - mean).powi(2))
            .sum();
        (mean, ss / (count.max(2) - 1) as f64)
    }
}

/// Per-column centring and scaling learned on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    pub fn identity(p: usize) -> Self {
        Self { means: vec![0.0; p], sds: vec![1.0; p] }
    }

    /// Column means and sample standard deviations over observed cells.
    /// Constant columns keep unit scale.
    pub fn fit(x: &CovariateMatrix) -> Self {
        let mut means = Vec::with_capacity(x.p());
        let mut sds = Vec::with_capacity(x.p());
        for j in 0..x.p() {
            let obs: Vec<f64> = (0..x.n())
                .filter(|&i| !x.is_missing(i, j))
                .map(|i| x.get(i, j))
                .collect();
            let m = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = if obs.len() > 1 {
                obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (obs.len() - 1) as f64
            } else {
                0.0
            };
            means.push(m);
            sds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { means, sds }
    }

    pub fn apply(&self, x: &CovariateMatrix) -> Result<CovariateMatrix> {
        if x.p() != self.means.len() {
            return Err(Error::InvalidInput(format!(
                "matrix has {} columns, standardization expects {}",
                x.p(),
                self.means.len()
            )));
        }
        let mut out = x.clone();
        for j in 0..x.p() {
            for i in 0..x.n() {
                let v = (x.get(i, j) - self.means[j]) / self.sds[j];
                out.set(i, j, v);
            }
        }
        Ok(out)
    }
}
