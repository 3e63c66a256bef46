use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::special::norm_sf;
use crate::kernel::{sample_truncated_normal, RandomSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    Identity,
    Log,
    Logit,
}

/// b″ as a function of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceFunction {
    Constant,
    Poisson,
    Binomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmSpec {
    pub link: Link,
    pub variance: VarianceFunction,
    /// ς
    pub dispersion: f64,
}

impl GlmSpec {
    pub fn gaussian(dispersion: f64) -> Self {
        Self { link: Link::Identity, variance: VarianceFunction::Constant, dispersion }
    }

    pub fn poisson() -> Self {
        Self { link: Link::Log, variance: VarianceFunction::Poisson, dispersion: 1.0 }
    }

    pub fn bernoulli() -> Self {
        Self { link: Link::Logit, variance: VarianceFunction::Binomial, dispersion: 1.0 }
    }

    /// μ = g⁻¹(η)
    pub fn mean(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => eta,
            Link::Log => eta.exp(),
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    /// η = g(μ)
    pub fn link_value(&self, mu: f64) -> Result<f64> {
        match self.link {
            Link::Identity => Ok(mu),
            Link::Log if mu > 0.0 => Ok(mu.ln()),
            Link::Logit if mu > 0.0 && mu < 1.0 => Ok((mu / (1.0 - mu)).ln()),
            _ => Err(Error::Domain(format!("mean {mu} outside the {:?} link domain", self.link))),
        }
    }

    fn dmu_deta(&self, mu: f64) -> f64 {
        match self.link {
            Link::Identity => 1.0,
            Link::Log => mu,
            Link::Logit => mu * (1.0 - mu),
        }
    }

    fn variance_at(&self, mu: f64) -> Result<f64> {
        let v = match self.variance {
            VarianceFunction::Constant => 1.0,
            VarianceFunction::Poisson => mu,
            VarianceFunction::Binomial => mu * (1.0 - mu),
        };
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("variance function vanishes at mean {mu}")))
        }
    }
}

/// Response family for the regression outcomes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gaussian,
    /// log failure times with right censoring
    Aft,
    Glm(GlmSpec),
}

/// Observed responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeData {
    pub w: Vec<f64>,
    /// true when the response is an observed event
    pub delta: Vec<bool>,
    pub family: Family,
}

impl OutcomeData {
    pub fn gaussian(w: Vec<f64>) -> Self {
        let delta = vec![true; w.len()];
        Self { w, delta, family: Family::Gaussian }
    }

    pub fn aft(w: Vec<f64>, delta: Vec<bool>) -> Self {
        Self { w, delta, family: Family::Aft }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta.len() != self.w.len() {
            return Err(Error::InvalidInput(format!(
                "{} responses but {} event flags",
                self.w.len(),
                self.delta.len()
            )));
        }
        if let Some(v) = self.w.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite response {v}")));
        }
        if self.family != Family::Aft && self.delta.iter().any(|d| !d) {
            return Err(Error::InvalidInput("censoring flags require the AFT family".into()));
        }
        Ok(())
    }
}

/// Working Gaussian outcome y = η + (R − μ)·∂η/∂μ and its precision
/// (∂μ/∂η)² / (ς·b″(μ)) at the current linear predictor.
pub fn transform_outcome(r: f64, eta: f64, spec: &GlmSpec) -> Result<(f64, f64)> {
    let mu = spec.mean(eta);
    let slope = spec.dmu_deta(mu);
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(Error::Domain(format!("link derivative vanishes at eta {eta}")));
    }
    if !(spec.dispersion > 0.0) {
        return Err(Error::Domain(format!("dispersion must be positive, got {}", spec.dispersion)));
    }
    let y = eta + (r - mu) / slope;
    let precision = slope * slope / (spec.dispersion * spec.variance_at(mu)?);
    Ok((y, precision))
}

/// Observed events keep y = w; censored ones draw N(η, σ²) truncated to (w, ∞).
pub fn impute_censored(
    w: &[f64],
    delta: &[bool],
    eta: &[f64],
    sd: &[f64],
    rng: &mut RandomSource,
) -> Result<Vec<f64>> {
    w.iter()
        .zip(delta)
        .zip(eta.iter().zip(sd))
        .map(|((&wi, &event), (&m, &s))| {
            if event {
                Ok(wi)
            } else {
                sample_truncated_normal(m, s, wi, f64::INFINITY, rng)
            }
        })
        .collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0))
}

/// Var(ŷ): variance of the training outcomes, with censored responses
/// replaced by their conditional means under an intercept-only normal fit
/// iterated to a fixed point.
pub fn outcome_variance(data: &OutcomeData) -> Result<f64> {
    data.validate()?;
    if data.len() < 2 {
        return Err(Error::InvalidInput("at least two responses are needed".into()));
    }
    let mut y = match data.family {
        Family::Glm(spec) => {
            let mean_r = data.w.iter().sum::<f64>() / data.len() as f64;
            let eta = spec.link_value(mean_r)?;
            data.w
                .iter()
                .map(|&r| transform_outcome(r, eta, &spec).map(|t| t.0))
                .collect::<Result<Vec<_>>>()?
        }
        _ => data.w.clone(),
    };
    if data.delta.iter().any(|d| !d) {
        for _ in 0..100 {
            let (m, v) = mean_var(&y);
            let s = v.sqrt().max(1e-8);
            let next: Vec<f64> = data
                .w
                .iter()
                .zip(&data.delta)
                .map(|(&wi, &event)| {
                    if event {
                        wi
                    } else {
                        let a = (wi - m) / s;
                        let tail = norm_sf(a);
                        let lift = if tail > 1e-300 {
                            (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt() / tail
                        } else {
                            a
                        };
                        m + s * lift.max(a)
                    }
                })
                .collect();
            let shift = next.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            y = next;
            if shift < 1e-10 {
                break;
            }
        }
    }
    let v = mean_var(&y).1;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Degenerate("training outcomes have zero variance".into()))
    }
}
