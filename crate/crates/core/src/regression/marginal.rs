use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::sample::standard_normal;
use crate::kernel::RandomSource;

/// Relative size below which a triangular pivot counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Σ^{-1/2}U and Σ^{-1/2}y, with log det Σ.
struct Whitened {
    design: DMatrix<f64>,
    y: DVector<f64>,
    log_det: f64,
}

fn whiten(design: &DMatrix<f64>, y: &[f64], variances: &[f64]) -> Result<Whitened> {
    let n = design.nrows();
    if y.len() != n || variances.len() != n {
        return Err(Error::InvalidInput(format!(
            "design has {n} rows, outcome {} and variances {}",
            y.len(),
            variances.len()
        )));
    }
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("outcome variance must be positive, got {v}")));
    }
    let scale: Vec<f64> = variances.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut w = design.clone();
    for (i, s) in scale.iter().enumerate() {
        w.row_mut(i).scale_mut(*s);
    }
    Ok(Whitened {
        design: w,
        y: DVector::from_iterator(n, y.iter().zip(&scale).map(|(a, s)| a * s)),
        log_det: variances.iter().map(|v| v.ln()).sum(),
    })
}

fn assemble(w: &Whitened, projected: f64, g: f64) -> f64 {
    let n = w.y.len() as f64;
    let k = w.design.ncols() as f64;
    let total = w.y.norm_squared();
    -0.5 * (n * (2.0 * PI).ln() + w.log_det + k * g.ln_1p() + total - g / (1.0 + g) * projected)
}

fn check_g(g: f64) -> Result<()> {
    if g > 0.0 && g.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("g-prior scale must be positive, got {g}")))
    }
}

/// log N(y; 0, Σ + g·U(U′Σ⁻¹U)⁻¹U′) via a Householder QR of Σ^{-1/2}U.
pub fn log_marginal_design(design: &DMatrix<f64>, y: &[f64], variances: &[f64], g: f64) -> Result<f64> {
    check_g(g)?;
    let w = whiten(design, y, variances)?;
    let k = design.ncols();
    if k >= design.nrows() {
        return Err(Error::ConstraintViolation { columns: k, rows: design.nrows() });
    }
    let qr = w.design.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|c| w.design.column(c).norm()).fold(0.0, f64::max);
    if (0..k).any(|c| r[(c, c)].abs() <= RANK_TOL * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient { columns: k });
    }
    let mut qty = w.y.clone();
    qr.q_tr_mul(&mut qty);
    let projected: f64 = qty.iter().take(k).map(|v| v * v).sum();
    Ok(assemble(&w, projected, g))
}

/// Same density through the Cholesky factor of the Gram matrix U′Σ⁻¹U.
pub fn log_marginal_gram(design: &DMatrix<f64>, y: &[f64], variances: &[f64], g: f64) -> Result<f64> {
    check_g(g)?;
    let w = whiten(design, y, variances)?;
    let k = design.ncols();
    if k >= design.nrows() {
        return Err(Error::ConstraintViolation { columns: k, rows: design.nrows() });
    }
    let chol = gram_cholesky(&w.design)?;
    let rhs = w.design.tr_mul(&w.y);
    let a = chol.l().solve_lower_triangular(&rhs).ok_or(Error::RankDeficient { columns: k })?;
    Ok(assemble(&w, a.norm_squared(), g))
}

fn gram_cholesky(design: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let k = design.ncols();
    let gram = design.tr_mul(design);
    let chol = Cholesky::new(gram.clone()).ok_or(Error::RankDeficient { columns: k })?;
    let scale = (0..k).map(|c| gram[(c, c)].sqrt()).fold(0.0, f64::max);
    let l = chol.l();
    if (0..k).any(|c| l[(c, c)] <= RANK_TOL * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient { columns: k });
    }
    Ok(chol)
}

/// β | y, Σ under the g-prior: N(g/(1+g)·β̂, g/(1+g)·(U′Σ⁻¹U)⁻¹).
pub fn draw_coefficients(
    design: &DMatrix<f64>,
    y: &[f64],
    variances: &[f64],
    g: f64,
    rng: &mut RandomSource,
) -> Result<Vec<f64>> {
    check_g(g)?;
    let w = whiten(design, y, variances)?;
    let k = design.ncols();
    let chol = gram_cholesky(&w.design)?;
    let shrink = g / (1.0 + g);
    let ls = chol.solve(&w.design.tr_mul(&w.y));
    let z = DVector::from_iterator(k, (0..k).map(|_| standard_normal(rng)));
    let noise = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or(Error::RankDeficient { columns: k })?;
    Ok((0..k).map(|c| shrink * ls[c] + shrink.sqrt() * noise[c]).collect())
}

/// β′U′Σ⁻¹Uβ, the quadratic form in the g-prior density.
pub fn prior_quadratic(design: &DMatrix<f64>, beta: &[f64], variances: &[f64]) -> f64 {
    (0..design.nrows())
        .map(|i| {
            let fit: f64 = (0..design.ncols()).map(|c| design[(i, c)] * beta[c]).sum();
            fit * fit / variances[i]
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::special::ln_normal_density;

    fn small_design() -> (DMatrix<f64>, Vec<f64>) {
        let u = DMatrix::from_row_slice(
            6,
            3,
            &[
                1.0, 0.3, -1.2, 1.0, -0.7, 0.4, 1.0, 1.1, 0.9, 1.0, 0.2, -0.3, 1.0, -1.5, 0.8, 1.0,
                0.6, 1.7,
            ],
        );
        (u, vec![0.4, -1.1, 2.0, 0.3, -0.5, 1.4])
    }

    #[test]
    fn qr_and_gram_routes_agree() {
        let (u, y) = small_design();
        for vars in [vec![0.7; 6], vec![0.5, 1.0, 2.0, 0.3, 1.2, 0.9]] {
            for g in [0.01, 1.0, 6.0, 1e4] {
                let a = log_marginal_design(&u, &y, &vars, g).unwrap();
                let b = log_marginal_gram(&u, &y, &vars, g).unwrap();
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn vanishing_g_gives_noise_density() {
        let (u, y) = small_design();
        let vars = [0.5, 1.0, 2.0, 0.3, 1.2, 0.9];
        let direct: f64 = y.iter().zip(&vars).map(|(v, s)| ln_normal_density(*v, 0.0, *s)).sum();
        let lm = log_marginal_design(&u, &y, &vars, 1e-12).unwrap();
        assert!((lm - direct).abs() < 1e-9);
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let mut u = DMatrix::zeros(5, 2);
        for i in 0..5 {
            u[(i, 0)] = 1.0;
            u[(i, 1)] = 2.0;
        }
        let y = [0.0, 1.0, 2.0, 3.0, 4.0];
        let v = [1.0; 5];
        assert!(matches!(log_marginal_design(&u, &y, &v, 1.0), Err(Error::RankDeficient { .. })));
        assert!(matches!(log_marginal_gram(&u, &y, &v, 1.0), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn coefficient_draws_centre_on_shrunk_least_squares() {
        let (u, y) = small_design();
        let vars = vec![0.8; 6];
        let g = 3.0;
        let mut rng = RandomSource::new(11, 0);
        let draws = 40_000;
        let mut sum = [0.0; 3];
        for _ in 0..draws {
            let b = draw_coefficients(&u, &y, &vars, g, &mut rng).unwrap();
            for c in 0..3 {
                sum[c] += b[c];
            }
        }
        let ls = (u.transpose() * &u)
            .try_inverse()
            .unwrap()
            * u.transpose()
            * DVector::from_column_slice(&y);
        let cov = (u.transpose() * &u).try_inverse().unwrap() * (0.8 * g / (1.0 + g));
        for c in 0..3 {
            let mean = sum[c] / draws as f64;
            let se = (cov[(c, c)] / draws as f64).sqrt();
            assert!((mean - g / (1.0 + g) * ls[c]).abs() < 4.0 * se);
        }
    }
}
