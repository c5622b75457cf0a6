//! Exact and asymptotic final-size laws.

use std::collections::HashMap;
use std::io::Write;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::bigfixed::Fixed;
use crate::branching::{extinction_probability, OffspringLaw};
use crate::error::{invalid, Error, Result};
use crate::model::PeriodDistribution;
use crate::numeric::bisect_newton;

/// Largest population for chain-binomial enumeration.
pub const CHAIN_BINOMIAL_MAX: usize = 25;

/// Above this size the double-precision recursion is unreliable.
pub const FLOAT64_SAFE_MAX: usize = 14;

/// Largest |Σp − 1| accepted from the double-precision pass in auto mode.
pub const AUTO_MASS_DEFECT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    Float64,
    HighPrecision,
    /// High precision above [`FLOAT64_SAFE_MAX`], doubles below unless
    /// they fail or leak more than [`AUTO_MASS_DEFECT`] of mass.
    Auto,
}

/// Law of the number of initially susceptible individuals ever infected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalSizePMF {
    pub n: usize,
    /// p_k for k = 0..=n.
    pub probs: Vec<f64>,
    pub precision: Precision,
    /// |Σ p_k − 1| in the working precision of the computation.
    pub mass_defect: f64,
}

impl FinalSizePMF {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// Mass on {0, …, k-1}.
    pub fn mass_below(&self, k: usize) -> f64 {
        self.probs.iter().take(k).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,p_k")?;
        for (k, p) in self.probs.iter().enumerate() {
            writeln!(w, "{k},{p:.17e}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reed–Frost final-size law with one index case and `n` susceptibles,
/// each infective independently infecting each susceptible with
/// probability `p` in its generation.
pub fn chain_binomial_distribution(n: usize, p: f64) -> Result<FinalSizePMF> {
    if n > CHAIN_BINOMIAL_MAX {
        return Err(Error::PopulationTooLarge { n, max: CHAIN_BINOMIAL_MAX });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("p must lie in [0, 1], got {p}")));
    }
    let binom = binomial_table(n);
    let mut memo = HashMap::new();
    let probs = further_infections(n, 1, 1.0 - p, &binom, &mut memo);
    let mut full = vec![0.0; n + 1];
    full[..probs.len()].copy_from_slice(&probs);
    let mass_defect = (full.iter().sum::<f64>() - 1.0).abs();
    Ok(FinalSizePMF { n, probs: full, precision: Precision::Float64, mass_defect })
}

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut t = vec![vec![1.0]];
    for m in 1..=n {
        let prev = &t[m - 1];
        let mut row = vec![1.0; m + 1];
        for j in 1..m {
            row[j] = prev[j - 1] + prev[j];
        }
        t.push(row);
    }
    t
}

/// Law of the number of further infections given `s` susceptibles and
/// `i` infectives in the current generation. A chain's probability only
/// depends on these two numbers, hence the memo.
fn further_infections(
    s: usize,
    i: usize,
    q: f64,
    binom: &[Vec<f64>],
    memo: &mut HashMap<(usize, usize), Vec<f64>>,
) -> Vec<f64> {
    if i == 0 || s == 0 {
        return vec![1.0];
    }
    if let Some(v) = memo.get(&(s, i)) {
        return v.clone();
    }
    let escape = q.powi(i as i32);
    let hit = 1.0 - escape;
    let mut out = vec![0.0; s + 1];
    for j in 0..=s {
        let w = binom[s][j] * hit.powi(j as i32) * escape.powi((s - j) as i32);
        if w == 0.0 {
            continue;
        }
        let rest = further_infections(s - j, j, q, binom, memo);
        for (k, r) in rest.iter().enumerate() {
            out[j + k] += w * r;
        }
    }
    memo.insert((s, i), out.clone());
    out
}

/// Final-size law of the general stochastic epidemic (one index case,
/// `n` susceptibles, pair contact rate λ/n) by the triangular recursion
/// `Σ_{i≤k} C(n-i, k-i) ψ_k^{k-i} p_i = C(n, k) ψ_k^{k+1}`, where
/// `ψ_k = E exp(-(n-k) λ I / n)`.
pub fn exact_final_size_distribution(
    n: usize,
    lambda: f64,
    infectious: &PeriodDistribution,
    precision: Precision,
) -> Result<FinalSizePMF> {
    if n == 0 {
        return Err(invalid("population must be at least 1"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    infectious.validate()?;
    match precision {
        Precision::Float64 => {
            if n > FLOAT64_SAFE_MAX {
                log::warn!(
                    "double-precision final-size recursion with n = {n} > {FLOAT64_SAFE_MAX} is unstable; \
                     consider high-precision mode"
                );
            }
            recursion_f64(n, lambda, infectious)
        }
        Precision::HighPrecision => recursion_fixed(n, lambda, infectious),
        Precision::Auto if n > FLOAT64_SAFE_MAX => recursion_fixed(n, lambda, infectious),
        // Cancellation can bite well below the cut-off; a failed or leaky
        // double-precision pass is redone exactly.
        Precision::Auto => match recursion_f64(n, lambda, infectious) {
            Ok(pmf) if pmf.mass_defect <= AUTO_MASS_DEFECT => Ok(pmf),
            _ => recursion_fixed(n, lambda, infectious),
        },
    }
}

fn recursion_f64(n: usize, lambda: f64, infectious: &PeriodDistribution) -> Result<FinalSizePMF> {
    let nf = n as f64;
    let mut probs: Vec<f64> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let psi = infectious.laplace((n - k) as f64 * lambda / nf);
        // C(n - i, k - i) for i = 0, walking down from C(n, k).
        let mut c = binom_f64(n, k);
        let mut acc = c * psi.powi(k as i32 + 1);
        for (i, &p) in probs.iter().enumerate() {
            acc -= c * psi.powi((k - i) as i32) * p;
            c *= (k - i) as f64 / (n - i) as f64;
        }
        if !(-1e-9..=1.0 + 1e-9).contains(&acc) || !acc.is_finite() {
            return Err(Error::NumericalInstability { k, value: acc });
        }
        probs.push(acc.max(0.0));
    }
    let mass_defect = (probs.iter().sum::<f64>() - 1.0).abs();
    Ok(FinalSizePMF { n, probs, precision: Precision::Float64, mass_defect })
}

fn binom_f64(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Working precision: enough headroom for the 2^n-sized binomial terms
/// that cancel in the recursion.
fn working_bits(n: usize) -> u64 {
    256 + 4 * n as u64
}

fn psi_fixed(infectious: &PeriodDistribution, b: &Fixed) -> Fixed {
    let bits = b.bits;
    let one = Fixed::one(bits);
    match *infectious {
        PeriodDistribution::Constant { value } => b.mul(&Fixed::from_f64(value, bits)).exp_neg(),
        PeriodDistribution::Exponential { rate } => {
            let g = Fixed::from_f64(rate, bits);
            g.div(&g.add(b))
        }
        PeriodDistribution::Gamma { shape, scale } => {
            let base = one.add(&Fixed::from_f64(scale, bits).mul(b));
            one.div(&base.powi(shape))
        }
    }
}

fn recursion_fixed(n: usize, lambda: f64, infectious: &PeriodDistribution) -> Result<FinalSizePMF> {
    let bits = working_bits(n);
    let lam = Fixed::from_f64(lambda, bits);
    let mut probs: Vec<Fixed> = Vec::with_capacity(n + 1);
    let mut top = BigInt::from(1u32); // C(n, k)
    for k in 0..=n {
        if k > 0 {
            top = top * BigInt::from(n - k + 1) / BigInt::from(k);
        }
        let b = lam.mul_int(&BigInt::from(n - k)).div_int(n as u64);
        let psi = psi_fixed(infectious, &b);
        let mut powers = Vec::with_capacity(k + 2);
        powers.push(Fixed::one(bits));
        for j in 1..=k + 1 {
            let next = powers[j - 1].mul(&psi);
            powers.push(next);
        }
        let mut c = top.clone();
        let mut acc = powers[k + 1].mul_int(&c);
        for (i, p) in probs.iter().enumerate() {
            acc = acc.sub(&powers[k - i].mul(p).mul_int(&c));
            c = c * BigInt::from(k - i) / BigInt::from(n - i);
        }
        let value = acc.to_f64();
        if !(-1e-20..=1.0 + 1e-20).contains(&value) {
            return Err(Error::NumericalInstability { k, value });
        }
        probs.push(acc);
    }
    let mut total = Fixed::zero(bits);
    for p in &probs {
        total = total.add(p);
    }
    let mass_defect = total.sub(&Fixed::one(bits)).to_f64().abs();
    Ok(FinalSizePMF {
        n,
        probs: probs.iter().map(|p| p.to_f64().max(0.0)).collect(),
        precision: Precision::HighPrecision,
        mass_defect,
    })
}

/// Positive root of 1 − z = e^{−R₀z}; 0 when R₀ ≤ 1.
pub fn final_size_root(r0: f64) -> f64 {
    if !(r0 > 1.0) {
        return 0.0;
    }
    let f = |z: f64| 1.0 - z - (-r0 * z).exp();
    // Near the threshold the root is ≈ 2(R₀−1)/R₀², so the left end must
    // sit below it.
    let lo = 1e-9f64.min(0.25 * (r0 - 1.0) / (r0 * r0));
    if f(lo) <= 0.0 {
        return 0.0;
    }
    let z = bisect_newton(f, lo, 1.0, 1e-15).expect("bracket has a sign change");
    // Newton in closed form for the last few ulps.
    let mut z = z;
    for _ in 0..3 {
        let g = 1.0 - z - (-r0 * z).exp();
        let dg = -1.0 + r0 * (-r0 * z).exp();
        if dg == 0.0 {
            break;
        }
        let next = z - g / dg;
        if !(next > 0.0 && next <= 1.0) {
            break;
        }
        z = next;
    }
    z
}

/// Root of 1 − z = e^{−R₀z(1−v)}: the fraction of unvaccinated
/// individuals ever infected when a fraction v is perfectly vaccinated.
pub fn final_size_vaccinated(r0: f64, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!("coverage must lie in [0, 1], got {v}")));
    }
    Ok(final_size_root(r0 * (1.0 - v)))
}

/// Normal approximation to the size of a major outbreak:
/// mean n z*, variance n z*(1−z*)(1 + r²(1−z*)R₀²)/(1 − (1−z*)R₀)²,
/// with r² the squared coefficient of variation of the infectious period.
pub fn clt_final_size_moments(n: f64, r0: f64, cv2: f64, z_star: f64) -> Result<(f64, f64)> {
    if !(r0 > 1.0) {
        return Err(Error::Subcritical(r0));
    }
    if !(z_star > 0.0 && z_star < 1.0) {
        return Err(invalid(format!("z* must lie in (0, 1), got {z_star}")));
    }
    if !(cv2 >= 0.0) {
        return Err(invalid(format!("r^2 must be non-negative, got {cv2}")));
    }
    let s = 1.0 - z_star;
    let var = z_star * s * (1.0 + cv2 * s * r0 * r0) / (1.0 - s * r0).powi(2);
    Ok((n * z_star, (n * var).sqrt()))
}

/// Effective reproduction number R₀(1 − z*) left after a major outbreak.
pub fn subcritical_check(r0: f64, z_star: f64) -> f64 {
    r0 * (1.0 - z_star)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutbreakAsymptotics {
    pub z_star: f64,
    /// Probability of a minor outbreak.
    pub minor_prob: f64,
    pub clt_mean: f64,
    pub clt_sd: f64,
}

impl OutbreakAsymptotics {
    pub fn new(n: usize, lambda: f64, infectious: &PeriodDistribution) -> Result<Self> {
        let law = OffspringLaw::mixed_poisson(lambda, *infectious)?;
        let r0 = law.mean();
        let minor_prob = extinction_probability(&law);
        if r0 <= 1.0 {
            return Ok(OutbreakAsymptotics { z_star: 0.0, minor_prob, clt_mean: 0.0, clt_sd: 0.0 });
        }
        let z_star = final_size_root(r0);
        let (clt_mean, clt_sd) = clt_final_size_moments(n as f64, r0, infectious.cv2(), z_star)?;
        Ok(OutbreakAsymptotics { z_star, minor_prob, clt_mean, clt_sd })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chain_binomial_two() {
        let p = 0.3;
        let q = 1.0 - p;
        let d = chain_binomial_distribution(2, p).unwrap();
        assert_relative_eq!(d.probs[0], q * q, epsilon = 1e-15);
        assert_relative_eq!(d.probs[1], 2.0 * p * q * q, epsilon = 1e-15);
        assert_relative_eq!(d.probs[2], p * p + 2.0 * p * q * p, epsilon = 1e-15);
    }

    #[test]
    fn chain_binomial_three_all_infected() {
        let p: f64 = 0.4;
        let q = 1.0 - p;
        let d = chain_binomial_distribution(3, p).unwrap();
        // 1→3, 1→2→1, 1→1→2, 1→1→1→1
        let a = p.powi(3);
        let b = 3.0 * p * p * q * (1.0 - q * q);
        let c = 3.0 * p * q * q * p * p;
        let e = 3.0 * p * q * q * 2.0 * p * q * p;
        assert_relative_eq!(d.probs[3], a + b + c + e, epsilon = 1e-15);
    }

    #[test]
    fn chain_binomial_normalised() {
        for n in [1, 5, 12, 25] {
            let d = chain_binomial_distribution(n, 0.5).unwrap();
            assert!((d.total() - 1.0).abs() < 1e-14, "{n}");
        }
        assert!(matches!(chain_binomial_distribution(26, 0.5), Err(Error::PopulationTooLarge { .. })));
        assert!(chain_binomial_distribution(5, 1.5).is_err());
    }

    #[test]
    fn recursion_base_case() {
        for period in [
            PeriodDistribution::constant(1.0).unwrap(),
            PeriodDistribution::exponential(1.0).unwrap(),
            PeriodDistribution::gamma(3, 1.0 / 3.0).unwrap(),
        ] {
            for n in [1, 7, 30] {
                let d = exact_final_size_distribution(n, 2.0, &period, Precision::Float64).unwrap();
                assert_relative_eq!(d.probs[0], period.laplace(2.0), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn recursion_matches_chain_binomial_for_constant_period() {
        for n in [1, 2, 3, 6, 12] {
            for (lambda, iota) in [(1.5, 1.0), (2.0, 0.7), (0.6, 1.0)] {
                let p = 1.0 - (-lambda * iota / n as f64).exp();
                let chain = chain_binomial_distribution(n, p).unwrap();
                let period = PeriodDistribution::constant(iota).unwrap();
                let rec = exact_final_size_distribution(n, lambda, &period, Precision::Float64).unwrap();
                for k in 0..=n {
                    assert!((chain.probs[k] - rec.probs[k]).abs() < 1e-10, "n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn precisions_agree_where_doubles_are_fine() {
        for period in [
            PeriodDistribution::exponential(1.0).unwrap(),
            PeriodDistribution::gamma(3, 1.0 / 3.0).unwrap(),
            PeriodDistribution::constant(1.0).unwrap(),
        ] {
            let a = exact_final_size_distribution(10, 2.0, &period, Precision::Float64).unwrap();
            let b = exact_final_size_distribution(10, 2.0, &period, Precision::HighPrecision).unwrap();
            for k in 0..=10 {
                assert!((a.probs[k] - b.probs[k]).abs() < 1e-11);
            }
            assert!(b.mass_defect < 1e-30);
        }
    }

    #[test]
    fn exponential_n1_by_hand() {
        // One susceptible, Exp(1) period, rate λ: P(no infection) = 1/(1+λ).
        let d = exact_final_size_distribution(1, 2.0, &PeriodDistribution::exponential(1.0).unwrap(), Precision::HighPrecision)
            .unwrap();
        assert_relative_eq!(d.probs[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(d.probs[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn high_precision_survives_large_n() {
        let period = PeriodDistribution::exponential(1.0).unwrap();
        let d = exact_final_size_distribution(150, 1.5, &period, Precision::Auto).unwrap();
        assert_eq!(d.precision, Precision::HighPrecision);
        assert!(d.mass_defect < 1e-30);
        assert!(d.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        // Doubles break down somewhere past 40.
        assert!(exact_final_size_distribution(150, 1.5, &period, Precision::Float64).is_err());
    }

    #[test]
    fn final_size_examples() {
        assert!((final_size_root(1.5) - 0.583).abs() < 5e-4);
        assert!((final_size_root(3.0) - 0.940).abs() < 5e-4);
        assert!((final_size_root(15.0) - 1.000).abs() < 5e-4);
        assert_eq!(final_size_root(1.0), 0.0);
        assert_eq!(final_size_root(0.5), 0.0);
        for r0 in [1.0001, 1.01, 1.2, 1.5, 2.0, 5.0, 15.0, 40.0] {
            let z = final_size_root(r0);
            assert!(z > 0.0 && z < 1.0 || (r0 > 30.0 && z <= 1.0));
            assert!((1.0 - z - (-r0 * z).exp()).abs() < 1e-13, "{r0}");
        }
    }

    #[test]
    fn vaccinated_final_size() {
        let z = final_size_vaccinated(2.0, 1.0 / 3.0).unwrap();
        assert!((z - 0.4544).abs() < 5e-5);
        assert!(((1.0 - 1.0 / 3.0) * z - 0.3029).abs() < 5e-5);
        assert_eq!(final_size_vaccinated(2.0, 0.5).unwrap(), 0.0);
        assert_eq!(final_size_vaccinated(2.0, 0.0).unwrap(), final_size_root(2.0));
        assert!(final_size_vaccinated(2.0, 1.2).is_err());
        for v in [0.0, 0.1, 0.25, 0.4] {
            assert_eq!(final_size_vaccinated(3.0, v).unwrap(), final_size_root(3.0 * (1.0 - v)));
        }
    }

    #[test]
    fn clt_examples() {
        let z = final_size_root(1.5);
        let (m, sd0) = clt_final_size_moments(1000.0, 1.5, 0.0, z).unwrap();
        assert!((m - 583.0).abs() < 0.5);
        assert!((sd0 - 41.7).abs() < 0.05);
        let (_, sd1) = clt_final_size_moments(1000.0, 1.5, 1.0, z).unwrap();
        assert!((sd1 - 58.0).abs() < 0.05);
        let (_, sd4) = clt_final_size_moments(4000.0, 1.5, 1.0, z).unwrap();
        assert_relative_eq!(sd4, 2.0 * sd1, max_relative = 1e-14);
        assert!(clt_final_size_moments(1000.0, 0.9, 1.0, 0.1).is_err());
    }

    #[test]
    fn subcritical_examples() {
        assert!((subcritical_check(1.5, final_size_root(1.5)) - 0.626).abs() < 5e-4);
        assert!((subcritical_check(3.0, 0.940) - 0.18).abs() < 5e-3);
        assert!((subcritical_check(3.0, final_size_root(3.0)) - 0.179).abs() < 5e-4);
        let near = 1.0 + 1e-4;
        let v = subcritical_check(near, final_size_root(near));
        assert!(v < 1.0 && v > 0.999);
        for r0 in [1.1, 2.0, 4.0, 10.0] {
            assert!(subcritical_check(r0, final_size_root(r0)) < 1.0);
        }
    }

    #[test]
    fn asymptotics_bundle() {
        let a = OutbreakAsymptotics::new(1000, 1.5, &PeriodDistribution::exponential(1.0).unwrap()).unwrap();
        assert_relative_eq!(a.minor_prob, 1.0 / 1.5, epsilon = 1e-12);
        assert!(a.clt_sd > 0.0 && a.z_star > 0.0);
        let b = OutbreakAsymptotics::new(1000, 0.8, &PeriodDistribution::exponential(1.0).unwrap()).unwrap();
        assert_eq!(b.z_star, 0.0);
        assert_eq!(b.minor_prob, 1.0);
    }

    #[test]
    fn exports() {
        let d = chain_binomial_distribution(3, 0.5).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        let back: FinalSizePMF = serde_json::from_str(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
        assert!(d.to_json().unwrap().contains("\"float64\""));
    }
}
