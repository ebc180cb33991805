//! Student-t machinery for one-sided confidence bounds.
//!
//! Quantiles come from inverting the regularized incomplete beta function:
//! for `p > ½`, `t_{p,ν} = sqrt(ν (1 - x) / x)` with `x = I⁻¹_{2(1-p)}(ν/2, ½)`.
//! `I_x(a, b)` is evaluated by its continued fraction (modified Lentz) and
//! inverted with a bracketed Newton iteration.

use libm::{exp, lgamma, log, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("confidence parameter {0} outside (0, 1)")]
    InvalidDelta(f64),
    #[error("non-finite sample")]
    NonFiniteSample,
}

const CF_MAX_ITER: usize = 500;
const CF_EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

fn ln_beta(a: f64, b: f64) -> f64 {
    lgamma(a) + lgamma(b) - lgamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x ∈ [0, 1]`.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        1.0 - beta_cf_term(1.0 - x, b, a)
    } else {
        beta_cf_term(x, a, b)
    }
}

fn beta_cf_term(x: f64, a: f64, b: f64) -> f64 {
    let front = exp(a * log(x) + b * log(1.0 - x) - ln_beta(a, b)) / a;
    front * beta_cf(x, a, b)
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Inverse of `x ↦ I_x(a, b)`.
pub fn inverse_regularized_beta(p: f64, a: f64, b: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let ln_b = ln_beta(a, b);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = 0.5;
    // bisection until the bracket is tight enough for Newton to be safe
    for _ in 0..60 {
        x = 0.5 * (lo + hi);
        if regularized_beta(x, a, b) < p {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-3 * hi {
            break;
        }
    }
    for _ in 0..100 {
        let f = regularized_beta(x, a, b) - p;
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = exp((a - 1.0) * log(x) + (b - 1.0) * log(1.0 - x) - ln_b);
        let mut next = x - f / density;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

/// CDF of Student's t with `nu` degrees of freedom.
pub fn student_t_cdf(t: f64, nu: f64) -> f64 {
    let tail = 0.5 * regularized_beta(nu / (nu + t * t), 0.5 * nu, 0.5);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile `t_{p, ν}`: the `100p`-th percentile of Student's t.
pub fn student_t_quantile(p: f64, nu: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, nu);
    }
    let q = 2.0 * (1.0 - p);
    if q < 0.5 {
        let x = inverse_regularized_beta(q, 0.5 * nu, 0.5);
        sqrt(nu * (1.0 - x) / x)
    } else {
        // near the median x is close to 1; invert the mirrored function for 1 - x
        let y = inverse_regularized_beta(1.0 - q, 0.5, 0.5 * nu);
        sqrt(nu * y / (1.0 - y))
    }
}

/// Sample mean and unbiased standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl SampleSummary {
    pub fn of(samples: &[f64]) -> Result<Self, StatsError> {
        let n = samples.len();
        if n < 2 {
            return Err(StatsError::InsufficientSamples(n));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(StatsError::NonFiniteSample);
        }
        // Summing can move the mean of identical samples off their value
        // and leave a spurious variance, so constant samples are exact.
        if samples.iter().all(|s| *s == samples[0]) {
            return Ok(SampleSummary {
                n,
                mean: samples[0],
                std: 0.0,
            });
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(SampleSummary {
            n,
            mean,
            std: sqrt(var),
        })
    }

    /// `mean + std/√n · t_{1-δ, n-1}`; equals the mean when `std = 0`.
    pub fn upper_bound(&self, delta: f64) -> Result<f64, StatsError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(StatsError::InvalidDelta(delta));
        }
        if self.std == 0.0 {
            return Ok(self.mean);
        }
        let t = student_t_quantile(1.0 - delta, (self.n - 1) as f64);
        Ok(self.mean + self.std / sqrt(self.n as f64) * t)
    }
}

/// One-sided `1 - δ` Student-t upper confidence bound on the mean.
pub fn student_t_upper(samples: &[f64], delta: f64) -> Result<f64, StatsError> {
    SampleSummary::of(samples)?.upper_bound(delta)
}
