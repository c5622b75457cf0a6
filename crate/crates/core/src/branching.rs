//! Branching-process approximation of the early and late epidemic.
//!
//! Offspring laws and their generating functions, extinction
//! probabilities, Malthusian growth and end-phase decay rates, the
//! total-progeny law of minor outbreaks and the ghost-free coupling
//! probability.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::model::PeriodDistribution;
use crate::numeric::bisect_newton;

/// Number of infectious contacts made by one infective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffspringLaw {
    Poisson { mean: f64 },
    /// P(X = k) = p (1-p)^k on {0, 1, 2, ...}.
    Geometric { success_prob: f64 },
    /// Poisson with random mean λI.
    MixedPoisson { lambda: f64, period: PeriodDistribution },
}

impl OffspringLaw {
    pub fn poisson(mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean >= 0.0) {
            return Err(invalid(format!("Poisson mean must be non-negative, got {mean}")));
        }
        Ok(OffspringLaw::Poisson { mean })
    }

    pub fn geometric(success_prob: f64) -> Result<Self> {
        if !(success_prob > 0.0 && success_prob <= 1.0) {
            return Err(invalid(format!("success probability must be in (0, 1], got {success_prob}")));
        }
        Ok(OffspringLaw::Geometric { success_prob })
    }

    pub fn mixed_poisson(lambda: f64, period: PeriodDistribution) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(invalid(format!("lambda must be non-negative, got {lambda}")));
        }
        period.validate()?;
        Ok(OffspringLaw::MixedPoisson { lambda, period })
    }

    /// Closed-form equivalent for mixtures over constant or exponential
    /// periods; other laws are returned unchanged.
    pub fn simplified(&self) -> OffspringLaw {
        match *self {
            OffspringLaw::MixedPoisson { lambda, period: PeriodDistribution::Constant { value } } => {
                OffspringLaw::Poisson { mean: lambda * value }
            }
            OffspringLaw::MixedPoisson { lambda, period: PeriodDistribution::Exponential { rate } } => {
                OffspringLaw::Geometric { success_prob: rate / (rate + lambda) }
            }
            other => other,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            OffspringLaw::Poisson { mean } => mean,
            OffspringLaw::Geometric { success_prob: p } => (1.0 - p) / p,
            OffspringLaw::MixedPoisson { lambda, period } => lambda * period.mean(),
        }
    }

    /// Probability generating function g(s) = E[s^X], s in [0, 1].
    pub fn pgf(&self, s: f64) -> f64 {
        match *self {
            OffspringLaw::Poisson { mean } => (mean * (s - 1.0)).exp(),
            OffspringLaw::Geometric { success_prob: p } => p / (1.0 - (1.0 - p) * s),
            OffspringLaw::MixedPoisson { lambda, period } => period.laplace(lambda * (1.0 - s)),
        }
    }

    /// g'(s).
    pub fn pgf_derivative(&self, s: f64) -> f64 {
        match *self {
            OffspringLaw::Poisson { mean } => mean * (mean * (s - 1.0)).exp(),
            OffspringLaw::Geometric { success_prob: p } => {
                let q = 1.0 - p;
                p * q / (1.0 - q * s).powi(2)
            }
            OffspringLaw::MixedPoisson { lambda, period } => {
                let theta = lambda * (s - 1.0);
                match period {
                    PeriodDistribution::Constant { value } => lambda * value * (theta * value).exp(),
                    PeriodDistribution::Exponential { rate } => lambda * rate / (rate - theta).powi(2),
                    PeriodDistribution::Gamma { shape, scale } => {
                        let a = f64::from(shape);
                        lambda * a * scale * (1.0 - scale * theta).powf(-a - 1.0)
                    }
                }
            }
        }
    }

    /// ln P(X = k).
    pub fn ln_pmf(&self, k: u64) -> f64 {
        let kf = k as f64;
        match self.simplified() {
            OffspringLaw::Poisson { mean } => {
                if mean == 0.0 {
                    return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                kf * mean.ln() - mean - ln_gamma(kf + 1.0)
            }
            OffspringLaw::Geometric { success_prob: p } => {
                if p == 1.0 {
                    return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                p.ln() + kf * (1.0 - p).ln()
            }
            OffspringLaw::MixedPoisson { lambda, period } => match period {
                // Negative binomial: Gamma(shape a, scale θ) mixing.
                PeriodDistribution::Gamma { shape, scale } => {
                    let a = f64::from(shape);
                    let x = lambda * scale;
                    if x == 0.0 {
                        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
                    }
                    ln_gamma(kf + a) - ln_gamma(a) - ln_gamma(kf + 1.0) + kf * (x / (1.0 + x)).ln()
                        - a * (1.0 + x).ln()
                }
                _ => unreachable!("simplified() removes constant and exponential mixtures"),
            },
        }
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.ln_pmf(k).exp()
    }
}

/// P(X = k).
pub fn offspring_pmf(law: &OffspringLaw, k: u64) -> f64 {
    law.pmf(k)
}

/// Smallest root of g(z) = z in [0, 1]; 1 when the mean is at most 1.
///
/// Monotone fixed-point iteration from 0, then Newton polishing. From
/// below the root, Newton on the convex g(z) - z never overshoots.
pub fn extinction_probability(law: &OffspringLaw) -> f64 {
    if law.mean() <= 1.0 {
        return 1.0;
    }
    let mut z = 0.0;
    for _ in 0..10_000_000 {
        let next = law.pgf(z);
        let step = next - z;
        z = next;
        if step.abs() < 1e-13 {
            break;
        }
    }
    for _ in 0..50 {
        let h = law.pgf(z) - z;
        let dh = law.pgf_derivative(z) - 1.0;
        if dh >= 0.0 || h.abs() < 1e-16 {
            break;
        }
        let next = z - h / dh;
        if !(0.0..1.0).contains(&next) {
            break;
        }
        if (next - z).abs() < 1e-17 {
            z = next;
            break;
        }
        z = next;
    }
    z
}

/// Probability of a major outbreak, 1 - q.
pub fn take_off_probability(law: &OffspringLaw) -> f64 {
    1.0 - extinction_probability(law)
}

/// ∫₀^∞ e^{-rs} P(L < s < L + I) ds = ψ_L(-r) (1 - ψ_I(-r)) / r, for
/// independent L and I.
pub fn profile_transform(r: f64, latent: &PeriodDistribution, infectious: &PeriodDistribution) -> f64 {
    let lat = latent.mgf(-r);
    if r.abs() < 1e-9 {
        let m1 = infectious.mean();
        let m2 = infectious.variance() + m1 * m1;
        return lat * (m1 - 0.5 * r * m2);
    }
    lat * (1.0 - infectious.mgf(-r)) / r
}

/// Malthusian parameter: the real root of
/// `∫₀^∞ e^{-rs} λ P(L < s < L + I) ds = 1`. Negative when R0 < 1.
pub fn malthusian_rate(
    lambda: f64,
    latent: &PeriodDistribution,
    infectious: &PeriodDistribution,
) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    latent.validate_allow_zero()?;
    infectious.validate()?;
    let r0 = lambda * infectious.mean();
    if r0 == 1.0 {
        return Ok(0.0);
    }
    let f = |r: f64| lambda * profile_transform(r, latent, infectious) - 1.0;
    if r0 > 1.0 {
        let mut hi = 1.0;
        let mut grown = 0;
        while f(hi) > 0.0 {
            hi *= 2.0;
            grown += 1;
            if grown > 200 {
                return Err(Error::NoConvergence("Malthusian bracket does not close".into()));
            }
        }
        bisect_newton(f, 0.0, hi, 1e-15)
    } else {
        // The transform diverges at r = -abscissa.
        let limit = latent.mgf_abscissa().min(infectious.mgf_abscissa());
        let mut lo = -1.0f64;
        let mut k = 1;
        loop {
            if limit.is_finite() {
                lo = lo.max(-limit * (1.0 - 0.5f64.powi(k)));
            }
            let v = f(lo);
            if v > 0.0 || v.is_infinite() {
                if v.is_infinite() {
                    k += 1;
                    lo = -limit * (1.0 - 0.5f64.powi(k));
                    if k > 60 {
                        return Err(Error::NoConvergence("Malthusian bracket does not close".into()));
                    }
                    continue;
                }
                break;
            }
            lo *= 2.0;
            k += 1;
            if k > 200 {
                return Err(Error::NoConvergence("Malthusian bracket does not close".into()));
            }
        }
        bisect_newton(f, lo, 0.0, 1e-15)
    }
}

/// Decay rate r* < 0 of the end phase: the Malthusian root with λ
/// replaced by λ(1 - z*).
pub fn end_phase_decay_rate(
    lambda: f64,
    z_star: f64,
    latent: &PeriodDistribution,
    infectious: &PeriodDistribution,
) -> Result<f64> {
    if lambda * infectious.mean() <= 1.0 {
        return Err(Error::Subcritical(lambda * infectious.mean()));
    }
    if !(z_star > 0.0 && z_star < 1.0) {
        return Err(invalid(format!("z* must lie in (0, 1), got {z_star}")));
    }
    malthusian_rate(lambda * (1.0 - z_star), latent, infectious)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRates {
    pub r: f64,
    pub r_star: f64,
}

/// Leading terms of the duration of a major outbreak,
/// `(log N / r, -log N / r*)`.
pub fn duration_leading_terms(population: f64, rates: GrowthRates) -> Result<(f64, f64)> {
    if !(rates.r > 0.0 && rates.r_star < 0.0) {
        return Err(invalid(format!(
            "need r > 0 and r* < 0, got r = {}, r* = {}",
            rates.r, rates.r_star
        )));
    }
    if !(population >= 1.0) {
        return Err(invalid("population must be at least 1"));
    }
    let ln_n = population.ln();
    Ok((ln_n / rates.r, -ln_n / rates.r_star))
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-space convolution truncated to indices < `len`.
fn log_convolve(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; len];
    for (i, &x) in a.iter().enumerate().take(len) {
        if x == f64::NEG_INFINITY {
            continue;
        }
        for (j, &y) in b.iter().enumerate().take(len - i) {
            out[i + j] = log_sum_exp(out[i + j], x + y);
        }
    }
    out
}

/// Kemperman's formula `P(Z = k) = P(X₁ + … + X_k = k - 1) / k`, with the
/// k-fold convolution evaluated in log space. Z counts the ancestor.
pub fn total_progeny_pmf_kemperman(law: &OffspringLaw, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("total progeny counts the ancestor, so k >= 1"));
    }
    let len = k as usize;
    let base: Vec<f64> = (0..k).map(|j| law.ln_pmf(j)).collect();
    // Binary powering of the convolution.
    let mut result: Option<Vec<f64>> = None;
    let mut power = base;
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = Some(match result {
                None => power.clone(),
                Some(r) => log_convolve(&r, &power, len),
            });
        }
        e >>= 1;
        if e > 0 {
            power = log_convolve(&power, &power, len);
        }
    }
    let ln_p = result.expect("k >= 1")[len - 1];
    Ok((ln_p - (k as f64).ln()).exp())
}

/// Law of the total progeny (ancestor included) of a branching process.
/// Poisson laws use the Borel form, geometric laws the Catalan form, and
/// everything else Kemperman's convolution.
pub fn total_progeny_pmf(law: &OffspringLaw, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("total progeny counts the ancestor, so k >= 1"));
    }
    let kf = k as f64;
    match law.simplified() {
        OffspringLaw::Poisson { mean } => {
            if mean == 0.0 {
                return Ok(if k == 1 { 1.0 } else { 0.0 });
            }
            Ok((-mean * kf + (kf - 1.0) * (mean * kf).ln() - ln_gamma(kf + 1.0)).exp())
        }
        OffspringLaw::Geometric { success_prob: p } => {
            if p == 1.0 {
                return Ok(if k == 1 { 1.0 } else { 0.0 });
            }
            let ln = ln_gamma(2.0 * kf - 1.0) - ln_gamma(kf + 1.0) - ln_gamma(kf)
                + kf * p.ln()
                + (kf - 1.0) * (1.0 - p).ln();
            Ok(ln.exp())
        }
        other => total_progeny_pmf_kemperman(&other, k),
    }
}

/// Probability that the first k+1 uniformly chosen contacts among N
/// individuals all hit distinct individuals: ∏_{j=0}^{k} (1 - j/N).
pub fn ghost_free_probability(population: u64, k: u64) -> f64 {
    if k > population {
        return 0.0;
    }
    let n = population as f64;
    (0..=k).map(|j| 1.0 - j as f64 / n).product()
}
