use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::rng::RandomSource;
use super::special::{norm_cdf, norm_isf, norm_sf};
use crate::error::{Error, Result};

/// Standardized bound beyond which the tail sampler takes over.
const TAIL_SWITCH: f64 = 4.0;

pub fn standard_normal(rng: &mut RandomSource) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal(mean: f64, sd: f64, rng: &mut RandomSource) -> f64 {
    mean + sd * standard_normal(rng)
}

/// Gamma draw with the given shape and rate.
pub fn gamma(shape: f64, rate: f64, rng: &mut RandomSource) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive")
        .sample(rng)
}

pub fn beta(a: f64, b: f64, rng: &mut RandomSource) -> f64 {
    let x = gamma(a, 1.0, rng);
    let y = gamma(b, 1.0, rng);
    x / (x + y)
}

pub fn bernoulli(p: f64, rng: &mut RandomSource) -> bool {
    rng.random::<f64>() < p
}

pub fn uniform(rng: &mut RandomSource) -> f64 {
    rng.random::<f64>()
}

/// Unit-rate exponential.
pub fn exponential(rng: &mut RandomSource) -> f64 {
    -rng.open01().ln()
}

pub fn dirichlet(alpha: &[f64], rng: &mut RandomSource) -> Vec<f64> {
    let draws: Vec<f64> = alpha.iter().map(|&a| gamma(a, 1.0, rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / total).collect()
}

/// Draw from N(mean, sd²) restricted to the open interval (lower, upper).
///
/// Mild truncation uses inverse-CDF sampling on whichever tail keeps
/// precision; a standardized bound past ±4 switches to exponential
/// rejection on that tail.
pub fn sample_truncated_normal(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut RandomSource,
) -> Result<f64> {
    if !(lower < upper) {
        return Err(Error::InvalidInterval { lower, upper });
    }
    if !(sd > 0.0) {
        return Err(Error::Domain(format!("standard deviation must be positive, got {sd}")));
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    loop {
        let z = if a > TAIL_SWITCH {
            exponential_tail(a, b, rng)
        } else if b < -TAIL_SWITCH {
            -exponential_tail(-b, -a, rng)
        } else {
            inverse_cdf(a, b, rng)
        };
        let x = mean + sd * z;
        if x > lower && x < upper {
            return Ok(x);
        }
    }
}

fn inverse_cdf(a: f64, b: f64, rng: &mut RandomSource) -> f64 {
    if a >= 0.0 {
        // work in the upper tail to keep precision
        let qa = norm_sf(a);
        let qb = norm_sf(b);
        let u = qb + (qa - qb) * rng.open01();
        norm_isf(u)
    } else if b <= 0.0 {
        let pa = norm_cdf(a);
        let pb = norm_cdf(b);
        let u = pa + (pb - pa) * rng.open01();
        -norm_isf(u)
    } else {
        let pa = norm_cdf(a);
        let pb = norm_cdf(b);
        let u = pa + (pb - pa) * rng.open01();
        if u > 0.5 {
            norm_isf(1.0 - u)
        } else {
            -norm_isf(u)
        }
    }
}

/// Standard normal restricted to (a, b) with a > 0, via a rate-a exponential
/// proposal truncated to the same interval.
fn exponential_tail(a: f64, b: f64, rng: &mut RandomSource) -> f64 {
    let span = b - a;
    let cap = if span.is_finite() { -(-a * span).exp_m1() } else { 1.0 };
    loop {
        let u = rng.open01();
        let x = a - (-(u * cap)).ln_1p() / a;
        let accept = (-0.5 * (x - a) * (x - a)).exp();
        if rng.open01() <= accept {
            return x;
        }
    }
}

/// Index draw with probabilities proportional to exp(log_weights).
pub fn sample_categorical(log_weights: &[f64], rng: &mut RandomSource) -> Result<usize> {
    let max = log_weights
        .iter()
        .cloned()
        .filter(|w| !w.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate(
            "all categorical log-weights are -inf".to_string(),
        ));
    }
    let weights: Vec<f64> = log_weights
        .iter()
        .map(|w| if w.is_nan() { 0.0 } else { (w - max).exp() })
        .collect();
    sample_proportional(&weights, rng)
        .ok_or_else(|| Error::Degenerate("categorical weights sum to zero".to_string()))
}

/// Index draw with probabilities proportional to non-negative `weights`;
/// `None` when they do not sum to a positive finite total.
pub fn sample_proportional(weights: &[f64], rng: &mut RandomSource) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (k, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last_positive = k;
            if target < *w {
                return Some(k);
            }
            target -= w;
        }
    }
    Some(last_positive)
}

/// Gamma(shape, rate) restricted to (lower, upper), with `upper` possibly infinite.
pub fn sample_truncated_gamma(
    shape: f64,
    rate: f64,
    lower: f64,
    upper: f64,
    rng: &mut RandomSource,
) -> Result<f64> {
    if !(lower < upper) || lower < 0.0 {
        return Err(Error::InvalidInterval { lower, upper });
    }
    if !(shape > 0.0 && rate > 0.0) {
        return Err(Error::Domain(format!("gamma shape {shape} and rate {rate} must be positive")));
    }
    let p_lo = lower_reg(shape, rate * lower);
    let p_hi = lower_reg(shape, rate * upper);
    let mass = p_hi - p_lo;
    if mass > 0.2 {
        loop {
            let x = gamma(shape, rate, rng);
            if x > lower && x < upper {
                return Ok(x);
            }
        }
    }
    if p_lo > 0.5 {
        let q_lo = upper_reg(shape, rate * lower);
        let q_hi = upper_reg(shape, rate * upper);
        if q_lo > 0.0 && q_lo > q_hi {
            let u = q_hi + (q_lo - q_hi) * rng.open01();
            return Ok(invert_monotone(lower, upper, |x| -upper_reg(shape, rate * x), -u));
        }
        return Ok(upper_tail_rejection(shape, rate, lower, upper, rng));
    }
    if mass > 0.0 && p_hi > 0.0 {
        let u = p_lo + mass * rng.open01();
        return Ok(invert_monotone(lower, upper, |x| lower_reg(shape, rate * x), u));
    }
    Ok(lower_tail_rejection(shape, rate, lower, upper, rng))
}

fn lower_reg(shape: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        statrs::function::gamma::gamma_lr(shape, x)
    }
}

fn upper_reg(shape: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        statrs::function::gamma::gamma_ur(shape, x)
    }
}

/// Solve f(x) = target for increasing f on (lower, upper) by bisection.
fn invert_monotone(lower: f64, upper: f64, f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut lo = lower;
    let mut hi = if upper.is_finite() {
        upper
    } else {
        let mut h = lower.max(1.0) * 2.0;
        while f(h) < target {
            h *= 2.0;
        }
        h
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Truncation far in the right tail: shifted exponential envelope.
fn upper_tail_rejection(shape: f64, rate: f64, lower: f64, upper: f64, rng: &mut RandomSource) -> f64 {
    let lambda = if shape >= 1.0 {
        (rate - (shape - 1.0) / lower).max(0.5 * rate)
    } else {
        rate
    };
    loop {
        let e = -rng.open01().ln() / lambda;
        let x = lower + e;
        if x >= upper {
            continue;
        }
        let log_ratio = (shape - 1.0) * (x / lower).ln() - (rate - lambda) * e;
        if rng.open01().ln() <= log_ratio.min(0.0) {
            return x;
        }
    }
}

/// Truncation far in the left tail: power-law envelope x^(shape-1).
fn lower_tail_rejection(shape: f64, rate: f64, lower: f64, upper: f64, rng: &mut RandomSource) -> f64 {
    let lo_pow = lower.powf(shape);
    let hi_pow = upper.powf(shape);
    loop {
        let u = lo_pow + (hi_pow - lo_pow) * rng.open01();
        let x = u.powf(1.0 / shape);
        if rng.open01() <= (-rate * (x - lower)).exp() {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::special::ln_norm_pdf;

    fn truncated_normal_mean(a: f64, b: f64) -> f64 {
        let z = norm_cdf(b) - norm_cdf(a);
        (ln_norm_pdf(a).exp() - ln_norm_pdf(b).exp()) / z
    }

    #[test]
    fn untruncated_draw_is_finite() {
        let mut rng = RandomSource::new(1, 0);
        let x = sample_truncated_normal(0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY, &mut rng).unwrap();
        assert!(x.is_finite());
    }

    #[test]
    fn far_tail_draws_respect_support() {
        let mut rng = RandomSource::new(2, 0);
        for _ in 0..10_000 {
            let x = sample_truncated_normal(0.0, 1.0, 5.0, f64::INFINITY, &mut rng).unwrap();
            assert!(x > 5.0);
        }
        for _ in 0..1_000 {
            let x = sample_truncated_normal(0.0, 1.0, 30.0, 30.5, &mut rng).unwrap();
            assert!(x > 30.0 && x < 30.5);
            let y = sample_truncated_normal(0.0, 1.0, f64::NEG_INFINITY, -12.0, &mut rng).unwrap();
            assert!(y < -12.0);
        }
    }

    #[test]
    fn inverted_interval_is_an_error() {
        let mut rng = RandomSource::new(3, 0);
        assert!(matches!(
            sample_truncated_normal(0.0, 1.0, 1.0, 1.0, &mut rng),
            Err(Error::InvalidInterval { .. })
        ));
        assert!(sample_truncated_normal(0.0, 1.0, 2.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn symmetric_interval_has_zero_mean() {
        let mut rng = RandomSource::new(4, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_truncated_normal(0.0, 1.0, -1.0, 1.0, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn truncated_moments_match_analytic() {
        let mut rng = RandomSource::new(5, 0);
        let n = 100_000;
        for &(a, b) in &[(0.5, 2.0), (3.5, f64::INFINITY), (4.5, 6.0), (-7.0, -4.2)] {
            let draws: Vec<f64> = (0..n)
                .map(|_| sample_truncated_normal(0.0, 1.0, a, b, &mut rng).unwrap())
                .collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = truncated_normal_mean(a, b);
            assert!(
                (mean - expected).abs() < 3.0 * (var / n as f64).sqrt(),
                "interval ({a},{b}): {mean} vs {expected}"
            );
        }
    }

    #[test]
    fn categorical_point_mass() {
        let mut rng = RandomSource::new(6, 0);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[0.0, f64::NEG_INFINITY], &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn categorical_frequencies() {
        let weights = [1.5f64.ln(), 0.5f64.ln(), 2.0f64.ln()];
        let expected = [0.375, 0.125, 0.5];
        let mut rng = RandomSource::new(7, 0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_categorical(&weights, &mut rng).unwrap()] += 1;
        }
        for k in 0..3 {
            let f = counts[k] as f64 / n as f64;
            let se = (expected[k] * (1.0 - expected[k]) / n as f64).sqrt();
            assert!((f - expected[k]).abs() < 3.0 * se, "k={k} f={f}");
        }
    }

    #[test]
    fn categorical_shift_invariance() {
        let weights = [0.3, -1.2, 2.0];
        let shifted: Vec<f64> = weights.iter().map(|w| w + 700.0).collect();
        let mut a = RandomSource::new(8, 0);
        let mut b = RandomSource::new(8, 0);
        for _ in 0..1000 {
            assert_eq!(
                sample_categorical(&weights, &mut a).unwrap(),
                sample_categorical(&shifted, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn categorical_all_neg_infinite_is_degenerate() {
        let mut rng = RandomSource::new(9, 0);
        let w = [f64::NEG_INFINITY; 3];
        assert!(matches!(sample_categorical(&w, &mut rng), Err(Error::Degenerate(_))));
    }

    #[test]
    fn truncated_gamma_stays_inside_and_matches_mean() {
        let mut rng = RandomSource::new(10, 0);
        // mild truncation: compare with a fine-grid numerical mean
        let (shape, rate, lo, hi) = (3.0, 2.0, 0.5, 1.0);
        let grid = 20_000;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..grid {
            let x = lo + (hi - lo) * (i as f64 + 0.5) / grid as f64;
            let f = x.powf(shape - 1.0) * (-rate * x).exp();
            num += x * f;
            den += f;
        }
        let exact = num / den;
        let n = 50_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_truncated_gamma(shape, rate, lo, hi, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|&x| x > lo && x < hi));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - exact).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn truncated_gamma_extreme_tails() {
        let mut rng = RandomSource::new(11, 0);
        for _ in 0..500 {
            let x = sample_truncated_gamma(2.0, 1.0, 800.0, f64::INFINITY, &mut rng).unwrap();
            assert!(x > 800.0 && x < 900.0);
            let y = sample_truncated_gamma(40.0, 1.0, 1e-6, 1e-3, &mut rng).unwrap();
            assert!(y > 1e-6 && y < 1e-3);
            let z = sample_truncated_gamma(40.0, 1.0, 70.0, 71.0, &mut rng).unwrap();
            assert!(z > 70.0 && z < 71.0);
        }
    }
}
