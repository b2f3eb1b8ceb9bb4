//! Nonnegative service and switch-over laws with closed-form transforms.
//!
//! Every family here has a closed-form LST, so no quadrature ever enters the
//! analytic path. LSTs are normalized so that they evaluate to exactly `1.0`
//! at the origin; downstream removable singularities rely on that.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{PollError, Result};
use crate::scalar::Scalar;

/// Fixed-point tolerance for busy-period transforms.
pub const BUSY_PERIOD_TOL: f64 = 1e-13;
/// Iteration cap for busy-period transforms.
pub const BUSY_PERIOD_MAX_ITER: usize = 100_000;
/// Smallest probability a threshold band may carry.
pub const MIN_BAND_PROBABILITY: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum DistributionSpec {
    Deterministic {
        value: f64,
    },
    Exponential {
        rate: f64,
    },
    Erlang {
        shape: u32,
        rate: f64,
    },
    #[serde(rename = "hyperexponential")]
    HyperExponential {
        weights: Vec<f64>,
        rates: Vec<f64>,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
    /// `X | lower <= X < upper` for `X ~ Exp(rate)`; `upper = None` means infinity.
    TruncatedExponential {
        rate: f64,
        lower: f64,
        #[serde(default)]
        upper: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub dist: DistributionSpec,
}

impl DistributionSpec {
    pub fn exponential(rate: f64) -> Self {
        DistributionSpec::Exponential { rate }
    }

    pub fn deterministic(value: f64) -> Self {
        DistributionSpec::Deterministic { value }
    }

    pub fn mixture(parts: Vec<(f64, DistributionSpec)>) -> Self {
        DistributionSpec::Mixture {
            components: parts
                .into_iter()
                .map(|(weight, dist)| MixtureComponent { weight, dist })
                .collect(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            DistributionSpec::Deterministic { .. } => "deterministic",
            DistributionSpec::Exponential { .. } => "exponential",
            DistributionSpec::Erlang { .. } => "erlang",
            DistributionSpec::HyperExponential { .. } => "hyperexponential",
            DistributionSpec::Mixture { .. } => "mixture",
            DistributionSpec::TruncatedExponential { .. } => "truncated_exponential",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PollError::BadShape(msg));
        match self {
            DistributionSpec::Deterministic { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return bad(format!("deterministic value {value} must be finite and >= 0"));
                }
            }
            DistributionSpec::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("exponential rate {rate} must be positive"));
                }
            }
            DistributionSpec::Erlang { shape, rate } => {
                if *shape == 0 || !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("erlang needs shape >= 1 and rate > 0, got ({shape}, {rate})"));
                }
            }
            DistributionSpec::HyperExponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return bad("hyperexponential weights and rates must be non-empty and of equal length".into());
                }
                if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return bad("hyperexponential rates must be positive".into());
                }
                check_weights(weights.iter().copied())?;
            }
            DistributionSpec::Mixture { components } => {
                if components.is_empty() {
                    return bad("mixture needs at least one component".into());
                }
                check_weights(components.iter().map(|c| c.weight))?;
                for c in components {
                    c.dist.validate()?;
                }
            }
            DistributionSpec::TruncatedExponential { rate, lower, upper } => {
                if !(rate.is_finite() && *rate > 0.0 && lower.is_finite() && *lower >= 0.0) {
                    return bad(format!("truncated exponential needs rate > 0 and lower >= 0, got ({rate}, {lower})"));
                }
                if let Some(u) = upper {
                    if !(*u > *lower) {
                        return bad(format!("truncation band [{lower}, {u}) is empty"));
                    }
                }
            }
        }
        Ok(())
    }

    /// `E[exp(-w X)]` without a domain check. Exactly 1 at `w = 0`.
    pub fn lst<T: Scalar>(&self, w: T) -> T {
        match self {
            DistributionSpec::Deterministic { value } => (w * -*value).exp(),
            DistributionSpec::Exponential { rate } => T::from_f64(*rate) / (w + *rate),
            DistributionSpec::Erlang { shape, rate } => {
                (T::from_f64(*rate) / (w + *rate)).powi(*shape as i32)
            }
            DistributionSpec::HyperExponential { weights, rates } => {
                let mut acc = T::from_f64(0.0);
                let mut total = 0.0;
                for (p, r) in weights.iter().zip(rates) {
                    acc = acc + T::from_f64(*r) / (w + *r) * *p;
                    total += *p;
                }
                acc / total
            }
            DistributionSpec::Mixture { components } => {
                let mut acc = T::from_f64(0.0);
                let mut total = 0.0;
                for c in components {
                    acc = acc + c.dist.lst(w) * c.weight;
                    total += c.weight;
                }
                acc / total
            }
            DistributionSpec::TruncatedExponential { rate, lower, upper } => {
                let head = T::from_f64(*rate) / (w + *rate) * (w * -*lower).exp();
                match upper {
                    None => head,
                    Some(u) => {
                        let width = u - lower;
                        let num = T::one() - ((w + *rate) * -width).exp();
                        let den = 1.0 - (*rate * -width).exp();
                        head * num / den
                    }
                }
            }
        }
    }

    /// Checked LST evaluation on the closed right half-plane.
    pub fn lst_eval(&self, w: Complex64) -> Result<Complex64> {
        check_domain(w)?;
        Ok(self.lst(w))
    }

    /// Raw moment of order 1 or 2.
    pub fn moment(&self, k: u32) -> f64 {
        assert!(k == 1 || k == 2, "moment order must be 1 or 2");
        match self {
            DistributionSpec::Deterministic { value } => value.powi(k as i32),
            DistributionSpec::Exponential { rate } => {
                if k == 1 {
                    1.0 / rate
                } else {
                    2.0 / (rate * rate)
                }
            }
            DistributionSpec::Erlang { shape, rate } => {
                let n = *shape as f64;
                if k == 1 {
                    n / rate
                } else {
                    n * (n + 1.0) / (rate * rate)
                }
            }
            DistributionSpec::HyperExponential { weights, rates } => {
                let total: f64 = weights.iter().sum();
                weights
                    .iter()
                    .zip(rates)
                    .map(|(p, r)| if k == 1 { p / r } else { 2.0 * p / (r * r) })
                    .sum::<f64>()
                    / total
            }
            DistributionSpec::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                components
                    .iter()
                    .map(|c| c.weight * c.dist.moment(k))
                    .sum::<f64>()
                    / total
            }
            DistributionSpec::TruncatedExponential { rate, lower, upper } => {
                let (m1, m2) = truncated_offset_moments(*rate, upper.map(|u| u - lower));
                let a = *lower;
                if k == 1 {
                    a + m1
                } else {
                    a * a + 2.0 * a * m1 + m2
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(2)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() - m * m).max(0.0)
    }

    /// Mean of the equilibrium residual, `E(X^2) / (2 E(X))`; zero for a zero law.
    pub fn residual_mean(&self) -> f64 {
        let m = self.mean();
        if m == 0.0 {
            0.0
        } else {
            self.second_moment() / (2.0 * m)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistributionSpec::Deterministic { value } => *value,
            DistributionSpec::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            DistributionSpec::Erlang { shape, rate } => {
                let mut s = 0.0;
                for _ in 0..*shape {
                    let e: f64 = Exp1.sample(rng);
                    s += e;
                }
                s / rate
            }
            DistributionSpec::HyperExponential { weights, rates } => {
                let idx = pick(weights.iter().copied(), rng);
                let e: f64 = Exp1.sample(rng);
                e / rates[idx]
            }
            DistributionSpec::Mixture { components } => {
                let idx = pick(components.iter().map(|c| c.weight), rng);
                components[idx].dist.sample(rng)
            }
            DistributionSpec::TruncatedExponential { rate, lower, upper } => {
                let u: f64 = rng.random();
                let y = match upper {
                    None => -(-u).ln_1p() / rate,
                    Some(b) => {
                        let width = b - lower;
                        let y = -(u * (-rate * width).exp_m1()).ln_1p() / rate;
                        y.min(width * (1.0 - f64::EPSILON))
                    }
                };
                lower + y
            }
        }
    }
}

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(PollError::BadShape(format!("mixture weight {w} must be >= 0")));
        }
        total += w;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(PollError::BadShape(format!("mixture weights sum to {total}, not 1")));
    }
    Ok(())
}

fn pick<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u: f64 = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// First two moments of `Y | Y < width` for `Y ~ Exp(rate)`.
fn truncated_offset_moments(rate: f64, width: Option<f64>) -> (f64, f64) {
    let inv = 1.0 / rate;
    match width {
        None => (inv, 2.0 * inv * inv),
        Some(w) => {
            let tail = (-rate * w).exp();
            let mass = -(-rate * w).exp_m1();
            let m1 = inv - w * tail / mass;
            let m2 = 2.0 * inv * inv - (w * w + 2.0 * w * inv) * tail / mass;
            (m1, m2)
        }
    }
}

pub(crate) fn check_domain(w: Complex64) -> Result<()> {
    if w.re < 0.0 || !w.re.is_finite() || !w.im.is_finite() {
        return Err(PollError::Domain(format!("{w}")));
    }
    Ok(())
}

/// Law of `X | lower <= X < upper` for `X ~ Exp(rate)`, with the band probability.
///
/// The full band `[0, inf)` returns the plain exponential.
pub fn truncate_exponential(rate: f64, lower: f64, upper: f64) -> Result<(DistributionSpec, f64)> {
    if !(rate > 0.0 && lower >= 0.0 && upper > lower) {
        return Err(PollError::BadShape(format!(
            "truncation needs rate > 0 and 0 <= lower < upper, got ({rate}, {lower}, {upper})"
        )));
    }
    let head = (-rate * lower).exp();
    let probability = if upper.is_finite() {
        head * -(-rate * (upper - lower)).exp_m1()
    } else {
        head
    };
    if probability < MIN_BAND_PROBABILITY {
        return Err(PollError::EmptyBand { lower, upper, probability });
    }
    if lower == 0.0 && upper.is_infinite() {
        return Ok((DistributionSpec::Exponential { rate }, 1.0));
    }
    let dist = DistributionSpec::TruncatedExponential {
        rate,
        lower,
        upper: upper.is_finite().then_some(upper),
    };
    Ok((dist, probability))
}

/// Busy period of an M/G/1 queue: arrival rate plus service law.
#[derive(Clone, Debug, PartialEq)]
pub struct BusyPeriodSpec {
    pub base: DistributionSpec,
    pub rate: f64,
}

impl BusyPeriodSpec {
    pub fn new(base: DistributionSpec, rate: f64) -> Self {
        BusyPeriodSpec { base, rate }
    }

    pub fn load(&self) -> f64 {
        self.rate * self.base.mean()
    }

    pub fn mean(&self) -> f64 {
        self.base.mean() / (1.0 - self.load())
    }

    pub fn lst<T: Scalar>(&self, w: T) -> Result<T> {
        busy_period(&self.base, self.rate, w)
    }

    pub fn busy_period_lst(&self, w: Complex64) -> Result<Complex64> {
        check_domain(w)?;
        busy_period(&self.base, self.rate, w)
    }
}

/// Root `p` of `p = beta(w + rate (1 - p))` by successive substitution from 0.
///
/// After the tolerance is met the iteration keeps going until the update
/// stalls at rounding level, so that values approach 1 as tightly as the
/// arithmetic allows.
pub fn busy_period<T: Scalar>(base: &DistributionSpec, rate: f64, w: T) -> Result<T> {
    if rate == 0.0 {
        return Ok(base.lst(w));
    }
    let mut p = T::from_f64(0.0);
    let mut last = f64::INFINITY;
    let mut polish = 0usize;
    for _ in 0..BUSY_PERIOD_MAX_ITER {
        let next = base.lst(w + (T::one() - p) * rate);
        let d = next.distance(&p);
        p = next;
        if !p.is_finite() {
            break;
        }
        if d <= BUSY_PERIOD_TOL {
            polish += 1;
            if d <= 4.0 * f64::EPSILON || d >= last || polish > 200 {
                if w.value_is_zero() {
                    p = p.with_value(1.0);
                }
                return Ok(p);
            }
        }
        last = d;
    }
    Err(PollError::NoConvergence {
        iterations: BUSY_PERIOD_MAX_ITER,
        residual: last,
    })
}
