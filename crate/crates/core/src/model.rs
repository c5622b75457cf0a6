//! Model descriptions: period distributions, epidemic parameters, the
//! compartmental jump-process catalogue, and the scalar summaries (R0,
//! escape probability, vaccination numbers) derived from them.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Law of a latent or infectious period.
///
/// Gamma shapes are integers (Erlang), so every kind can be sampled as a
/// sum of exponentials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PeriodDistribution {
    Constant { value: f64 },
    Exponential { rate: f64 },
    Gamma { shape: u32, scale: f64 },
}

impl PeriodDistribution {
    pub fn constant(value: f64) -> Result<Self> {
        let d = PeriodDistribution::Constant { value };
        d.validate_allow_zero()?;
        Ok(d)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        let d = PeriodDistribution::Exponential { rate };
        d.validate()?;
        Ok(d)
    }

    pub fn gamma(shape: u32, scale: f64) -> Result<Self> {
        let d = PeriodDistribution::Gamma { shape, scale };
        d.validate()?;
        Ok(d)
    }

    /// No latency at all. Only meaningful as a latent period.
    pub fn zero() -> Self {
        PeriodDistribution::Constant { value: 0.0 }
    }

    /// Checks the strict invariants (mean > 0).
    pub fn validate(&self) -> Result<()> {
        self.validate_allow_zero()?;
        if self.mean() <= 0.0 {
            return Err(invalid(format!("{self} must have a positive mean")));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but accepts the degenerate zero
    /// period, which latent periods are allowed to be.
    pub fn validate_allow_zero(&self) -> Result<()> {
        let ok = match *self {
            PeriodDistribution::Constant { value } => value.is_finite() && value >= 0.0,
            PeriodDistribution::Exponential { rate } => rate.is_finite() && rate > 0.0,
            PeriodDistribution::Gamma { shape, scale } => {
                shape >= 1 && scale.is_finite() && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("malformed period distribution {self}")))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, PeriodDistribution::Constant { value } if value == 0.0)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PeriodDistribution::Constant { value } => value,
            PeriodDistribution::Exponential { rate } => 1.0 / rate,
            PeriodDistribution::Gamma { shape, scale } => f64::from(shape) * scale,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            PeriodDistribution::Constant { .. } => 0.0,
            PeriodDistribution::Exponential { rate } => 1.0 / (rate * rate),
            PeriodDistribution::Gamma { shape, scale } => f64::from(shape) * scale * scale,
        }
    }

    /// Squared coefficient of variation, variance / mean².
    pub fn cv2(&self) -> f64 {
        match *self {
            PeriodDistribution::Constant { .. } => 0.0,
            PeriodDistribution::Exponential { .. } => 1.0,
            PeriodDistribution::Gamma { shape, .. } => 1.0 / f64::from(shape),
        }
    }

    /// Moment generating function E[exp(θ X)]; `+inf` where it diverges.
    pub fn mgf(&self, theta: f64) -> f64 {
        match *self {
            PeriodDistribution::Constant { value } => (theta * value).exp(),
            PeriodDistribution::Exponential { rate } => {
                if theta < rate {
                    rate / (rate - theta)
                } else {
                    f64::INFINITY
                }
            }
            PeriodDistribution::Gamma { shape, scale } => {
                let base = 1.0 - scale * theta;
                if base > 0.0 {
                    base.powi(-(shape as i32))
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Laplace transform E[exp(-b X)] = mgf(-b).
    pub fn laplace(&self, b: f64) -> f64 {
        self.mgf(-b)
    }

    /// Supremum of the θ for which the mgf is finite.
    pub fn mgf_abscissa(&self) -> f64 {
        match *self {
            PeriodDistribution::Constant { .. } => f64::INFINITY,
            PeriodDistribution::Exponential { rate } => rate,
            PeriodDistribution::Gamma { scale, .. } => 1.0 / scale,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PeriodDistribution::Constant { value } => value,
            PeriodDistribution::Exponential { rate } => {
                let e: f64 = rng.sample(Exp1);
                e / rate
            }
            PeriodDistribution::Gamma { shape, scale } => {
                let mut total = 0.0;
                for _ in 0..shape {
                    let e: f64 = rng.sample(Exp1);
                    total += e;
                }
                total * scale
            }
        }
    }
}

impl fmt::Display for PeriodDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PeriodDistribution::Constant { value } => write!(f, "Constant({value})"),
            PeriodDistribution::Exponential { rate } => write!(f, "Exp({rate})"),
            PeriodDistribution::Gamma { shape, scale } => write!(f, "Gamma({shape}, {scale})"),
        }
    }
}

fn one() -> usize {
    1
}

/// Parameters of the stochastic SEIR epidemic in a closed community of
/// `population` initial susceptibles plus `initial_infectives` index cases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpidemicParams {
    pub lambda: f64,
    pub latent: PeriodDistribution,
    pub infectious: PeriodDistribution,
    pub population: usize,
    #[serde(default = "one")]
    pub initial_infectives: usize,
}

impl EpidemicParams {
    pub fn new(
        lambda: f64,
        latent: PeriodDistribution,
        infectious: PeriodDistribution,
        population: usize,
    ) -> Result<Self> {
        let p = EpidemicParams {
            lambda,
            latent,
            infectious,
            population,
            initial_infectives: 1,
        };
        p.validate()?;
        Ok(p)
    }

    /// SIR: no latency.
    pub fn sir(lambda: f64, infectious: PeriodDistribution, population: usize) -> Result<Self> {
        Self::new(lambda, PeriodDistribution::zero(), infectious, population)
    }

    pub fn with_initial_infectives(mut self, k: usize) -> Result<Self> {
        self.initial_infectives = k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.population == 0 {
            return Err(invalid("population must be at least 1"));
        }
        if self.initial_infectives == 0 {
            return Err(invalid("initial_infectives must be at least 1"));
        }
        self.latent.validate_allow_zero()?;
        self.infectious.validate()
    }

    /// Per-pair contact rate λ/N.
    pub fn pair_rate(&self) -> f64 {
        self.lambda / self.population as f64
    }
}

/// R0 = λ E(I).
pub fn basic_reproduction_number(params: &EpidemicParams) -> f64 {
    params.lambda * params.infectious.mean()
}

/// Probability that a given susceptible escapes infection from one
/// infective over its whole infectious period: ψ_I(-λ/N).
pub fn escape_probability(params: &EpidemicParams) -> f64 {
    params.infectious.laplace(params.pair_rate())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaccinationPolicy {
    pub coverage: f64,
    pub susceptibility_efficacy: f64,
    pub infectivity_efficacy: f64,
}

impl VaccinationPolicy {
    /// A vaccine giving complete immunity.
    pub fn perfect(coverage: f64) -> Result<Self> {
        Self::new(coverage, 1.0, 0.0)
    }

    /// A vaccine that only reduces susceptibility, by `efficacy`.
    pub fn leaky(coverage: f64, efficacy: f64) -> Result<Self> {
        Self::new(coverage, efficacy, 0.0)
    }

    pub fn new(coverage: f64, susceptibility_efficacy: f64, infectivity_efficacy: f64) -> Result<Self> {
        for (name, v) in [
            ("coverage", coverage),
            ("susceptibility_efficacy", susceptibility_efficacy),
            ("infectivity_efficacy", infectivity_efficacy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(VaccinationPolicy {
            coverage,
            susceptibility_efficacy,
            infectivity_efficacy,
        })
    }
}

/// Reproduction number under vaccination.
///
/// Vaccinated individuals are infected at relative rate `1 - e_s`, so the
/// effective contact rate becomes `λ((1 - e_s) v + (1 - v))`. Vaccines that
/// also reduce infectivity are rejected.
pub fn vaccinated_reproduction_number(r0: f64, policy: &VaccinationPolicy) -> Result<f64> {
    if !(r0 > 0.0) {
        return Err(invalid(format!("R0 must be positive, got {r0}")));
    }
    if policy.infectivity_efficacy != 0.0 {
        return Err(Error::Unsupported(
            "vaccines reducing infectivity have no reproduction-number formula".into(),
        ));
    }
    let v = policy.coverage;
    Ok(r0 * ((1.0 - policy.susceptibility_efficacy) * v + (1.0 - v)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CriticalCoverage {
    Required(f64),
    /// R0 <= 1: no vaccination needed.
    AlreadySubcritical,
}

impl CriticalCoverage {
    pub fn fraction(&self) -> f64 {
        match *self {
            CriticalCoverage::Required(v) => v,
            CriticalCoverage::AlreadySubcritical => 0.0,
        }
    }
}

/// v_c = 1 - 1/R0.
pub fn critical_vaccination_coverage(r0: f64) -> CriticalCoverage {
    if r0 <= 1.0 {
        CriticalCoverage::AlreadySubcritical
    } else {
        CriticalCoverage::Required(1.0 - 1.0 / r0)
    }
}

pub type RateFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// One jump direction `h_j` and its rate `β_j(t, z)` on the rescaled state.
#[derive(Clone)]
pub struct Transition {
    pub label: String,
    pub jump: Vec<i64>,
    pub rate: RateFn,
}

/// A density-dependent jump process
/// `Z^N_t = x_N + Σ_j h_j/N P_j(∫ N β_j(s, Z^N_s) ds)`.
#[derive(Clone)]
pub struct CompartmentalModel {
    name: String,
    compartments: Vec<String>,
    transitions: Vec<Transition>,
    jacobian: Option<JacobianFn>,
    closed: bool,
}

impl fmt::Debug for CompartmentalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompartmentalModel")
            .field("name", &self.name)
            .field("compartments", &self.compartments)
            .field(
                "transitions",
                &self.transitions.iter().map(|t| (&t.label, &t.jump)).collect::<Vec<_>>(),
            )
            .field("closed", &self.closed)
            .finish()
    }
}

impl CompartmentalModel {
    pub fn new(
        name: impl Into<String>,
        compartments: Vec<String>,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        let d = compartments.len();
        if d == 0 {
            return Err(invalid("model needs at least one compartment"));
        }
        if let Some(t) = transitions.iter().find(|t| t.jump.len() != d) {
            return Err(invalid(format!(
                "transition `{}` has a jump of length {}, expected {d}",
                t.label,
                t.jump.len()
            )));
        }
        let closed = transitions.iter().all(|t| t.jump.iter().sum::<i64>() == 0);
        Ok(CompartmentalModel {
            name: name.into(),
            compartments,
            transitions,
            jacobian: None,
            closed,
        })
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn) -> Self {
        self.jacobian = Some(jacobian);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn compartments(&self) -> &[String] {
        &self.compartments
    }

    pub fn dimension(&self) -> usize {
        self.compartments.len()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn jump(&self, j: usize) -> &[i64] {
        &self.transitions[j].jump
    }

    /// True when every jump preserves the total count.
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn rate(&self, j: usize, t: f64, z: &[f64]) -> f64 {
        (self.transitions[j].rate)(t, z)
    }

    pub fn rates_into(&self, t: f64, z: &[f64], out: &mut [f64]) {
        for (o, tr) in out.iter_mut().zip(&self.transitions) {
            *o = (tr.rate)(t, z);
        }
    }

    /// Deterministic drift b(t, z) = Σ_j h_j β_j(t, z).
    pub fn drift(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        self.drift_into(t, z, &mut out);
        out
    }

    pub fn drift_into(&self, t: f64, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for tr in &self.transitions {
            let beta = (tr.rate)(t, z);
            for (o, &h) in out.iter_mut().zip(&tr.jump) {
                *o += h as f64 * beta;
            }
        }
    }

    /// Analytic Jacobian of the drift, if the model supplies one.
    pub fn analytic_jacobian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(z))
    }
}

fn transition<F>(label: &str, jump: &[i64], rate: F) -> Transition
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    Transition {
        label: label.to_string(),
        jump: jump.to_vec(),
        rate: Arc::new(move |_t, z| rate(z)),
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be non-negative, got {v}")))
    }
}

/// SIR / SEIR family parameters. Markovian simulation requires
/// exponential periods (or a zero latent period for SIR).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    pub lambda: f64,
    #[serde(default = "PeriodDistribution::zero")]
    pub latent: PeriodDistribution,
    pub infectious: PeriodDistribution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SisParams {
    pub lambda: f64,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirsParams {
    pub lambda: f64,
    pub gamma: f64,
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeirsParams {
    pub lambda: f64,
    pub nu: f64,
    pub gamma: f64,
    pub rho: f64,
    pub mu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirDemographyParams {
    pub lambda: f64,
    pub gamma: f64,
    pub mu: f64,
}

impl SirDemographyParams {
    /// λ/(γ+μ)
    pub fn r0(&self) -> f64 {
        self.lambda / (self.gamma + self.mu)
    }

    /// Relative length of the infectious period compared to life length,
    /// μ/(γ+μ).
    pub fn eps_infectious_lifetime(&self) -> f64 {
        self.mu / (self.gamma + self.mu)
    }
}

/// Ross's host-vector malaria model. `m` is the vector-to-host ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RossParams {
    pub a: f64,
    pub p_vh: f64,
    pub p_hv: f64,
    pub m: f64,
    pub gamma: f64,
    pub mu: f64,
}

impl RossParams {
    pub fn validate(&self) -> Result<()> {
        positive("a", self.a)?;
        positive("m", self.m)?;
        for (n, p) in [("p_vh", self.p_vh), ("p_hv", self.p_hv)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{n} must be a probability, got {p}")));
            }
        }
        non_negative("gamma", self.gamma)?;
        non_negative("mu", self.mu)
    }

    /// Threshold quantity a² p_VH p_HV m / (γ μ).
    pub fn r0(&self) -> f64 {
        self.a * self.a * self.p_vh * self.p_hv * self.m / (self.gamma * self.mu)
    }
}

/// The catalogued models, with typed parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelSpec {
    Sir(FamilyParams),
    Sis(SisParams),
    Sirs(SirsParams),
    Seir(FamilyParams),
    SeirsDemography(SeirsParams),
    SeirsConstant(SeirsParams),
    SirDemography(SirDemographyParams),
    RossMalaria(RossParams),
}

pub const CATALOGUE: [&str; 8] = [
    "SIR",
    "SIS",
    "SIRS",
    "SEIR",
    "SEIRS-demography",
    "SEIRS-constant",
    "SIR-demography",
    "Ross-malaria",
];

impl ModelSpec {
    /// Parses the `params` object for the catalogue entry `name`. Unknown
    /// parameter names are rejected.
    pub fn from_parts(name: &str, params: &serde_json::Value) -> Result<Self> {
        let p = params.clone();
        let spec = match name {
            "SIR" => ModelSpec::Sir(serde_json::from_value(p)?),
            "SIS" => ModelSpec::Sis(serde_json::from_value(p)?),
            "SIRS" => ModelSpec::Sirs(serde_json::from_value(p)?),
            "SEIR" => ModelSpec::Seir(serde_json::from_value(p)?),
            "SEIRS-demography" => ModelSpec::SeirsDemography(serde_json::from_value(p)?),
            "SEIRS-constant" => ModelSpec::SeirsConstant(serde_json::from_value(p)?),
            "SIR-demography" => ModelSpec::SirDemography(serde_json::from_value(p)?),
            "Ross-malaria" => ModelSpec::RossMalaria(serde_json::from_value(p)?),
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Sir(_) => "SIR",
            ModelSpec::Sis(_) => "SIS",
            ModelSpec::Sirs(_) => "SIRS",
            ModelSpec::Seir(_) => "SEIR",
            ModelSpec::SeirsDemography(_) => "SEIRS-demography",
            ModelSpec::SeirsConstant(_) => "SEIRS-constant",
            ModelSpec::SirDemography(_) => "SIR-demography",
            ModelSpec::RossMalaria(_) => "Ross-malaria",
        }
    }

    pub fn params_json(&self) -> serde_json::Value {
        let v = match self {
            ModelSpec::Sir(p) | ModelSpec::Seir(p) => serde_json::to_value(p),
            ModelSpec::Sis(p) => serde_json::to_value(p),
            ModelSpec::Sirs(p) => serde_json::to_value(p),
            ModelSpec::SeirsDemography(p) | ModelSpec::SeirsConstant(p) => serde_json::to_value(p),
            ModelSpec::SirDemography(p) => serde_json::to_value(p),
            ModelSpec::RossMalaria(p) => serde_json::to_value(p),
        };
        v.expect("parameter structs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::Sir(p) => {
                positive("lambda", p.lambda)?;
                if !p.latent.is_zero() {
                    return Err(invalid("SIR has no latent period; use SEIR"));
                }
                p.infectious.validate()
            }
            ModelSpec::Seir(p) => {
                positive("lambda", p.lambda)?;
                p.latent.validate_allow_zero()?;
                p.infectious.validate()
            }
            ModelSpec::Sis(p) => {
                positive("lambda", p.lambda)?;
                positive("gamma", p.gamma)
            }
            ModelSpec::Sirs(p) => {
                positive("lambda", p.lambda)?;
                positive("gamma", p.gamma)?;
                non_negative("rho", p.rho)
            }
            ModelSpec::SeirsDemography(p) | ModelSpec::SeirsConstant(p) => {
                positive("lambda", p.lambda)?;
                positive("nu", p.nu)?;
                positive("gamma", p.gamma)?;
                non_negative("rho", p.rho)?;
                non_negative("mu", p.mu)
            }
            ModelSpec::SirDemography(p) => {
                positive("lambda", p.lambda)?;
                positive("gamma", p.gamma)?;
                positive("mu", p.mu)
            }
            ModelSpec::RossMalaria(p) => p.validate(),
        }
    }

    /// The SIR/SEIR epidemic parameters, when this is a family model.
    pub fn family(&self) -> Option<FamilyParams> {
        match *self {
            ModelSpec::Sir(p) | ModelSpec::Seir(p) => Some(p),
            _ => None,
        }
    }

    /// The jump-process form `(h_j, β_j)`. Family models need exponential
    /// infectious periods and an exponential or zero latent period.
    pub fn compartmental(&self) -> Result<CompartmentalModel> {
        self.validate()?;
        match *self {
            ModelSpec::Sir(p) => {
                let gamma = exponential_rate(&p.infectious, "infectious")?;
                Ok(sir_model(p.lambda, gamma))
            }
            ModelSpec::Seir(p) => {
                let gamma = exponential_rate(&p.infectious, "infectious")?;
                if p.latent.is_zero() {
                    return Ok(sir_model(p.lambda, gamma));
                }
                let nu = exponential_rate(&p.latent, "latent")?;
                Ok(seir_model(p.lambda, nu, gamma))
            }
            ModelSpec::Sis(p) => Ok(sis_model(p.lambda, p.gamma)),
            ModelSpec::Sirs(p) => Ok(sirs_model(p.lambda, p.gamma, p.rho)),
            ModelSpec::SeirsDemography(p) => Ok(seirs_demography_model(p)),
            ModelSpec::SeirsConstant(p) => Ok(seirs_constant_model(p)),
            ModelSpec::SirDemography(p) => Ok(sir_demography_model(p.lambda, p.gamma, p.mu)),
            ModelSpec::RossMalaria(p) => Ok(ross_model(p)),
        }
    }
}

fn exponential_rate(d: &PeriodDistribution, which: &str) -> Result<f64> {
    match *d {
        PeriodDistribution::Exponential { rate } => Ok(rate),
        other => Err(Error::Unsupported(format!(
            "Markovian form needs an exponential {which} period, got {other}"
        ))),
    }
}

/// Looks up a catalogue entry by name and builds its jump-process form.
pub fn model_catalogue(name: &str, params: &serde_json::Value) -> Result<CompartmentalModel> {
    ModelSpec::from_parts(name, params)?.compartmental()
}

/// SIR on (s, i, r): infection λsi, recovery γi.
pub fn sir_model(lambda: f64, gamma: f64) -> CompartmentalModel {
    CompartmentalModel::new(
        "SIR",
        names(&["S", "I", "R"]),
        vec![
            transition("infection", &[-1, 1, 0], move |z| lambda * z[0] * z[1]),
            transition("recovery", &[0, -1, 1], move |z| gamma * z[1]),
        ],
    )
    .expect("static model")
    .with_jacobian(Arc::new(move |z| {
        let (s, i) = (z[0], z[1]);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -lambda * i, -lambda * s, 0.0,
                lambda * i, lambda * s - gamma, 0.0,
                0.0, gamma, 0.0,
            ],
        )
    }))
}

/// SIS on the infective fraction x.
pub fn sis_model(lambda: f64, gamma: f64) -> CompartmentalModel {
    CompartmentalModel::new(
        "SIS",
        names(&["I"]),
        vec![
            transition("infection", &[1], move |z| lambda * z[0] * (1.0 - z[0])),
            transition("recovery", &[-1], move |z| gamma * z[0]),
        ],
    )
    .expect("static model")
    .with_jacobian(Arc::new(move |z| {
        DMatrix::from_element(1, 1, lambda * (1.0 - 2.0 * z[0]) - gamma)
    }))
}

/// SIRS reduced to (s, i); r = 1 - s - i.
pub fn sirs_model(lambda: f64, gamma: f64, rho: f64) -> CompartmentalModel {
    CompartmentalModel::new(
        "SIRS",
        names(&["S", "I"]),
        vec![
            transition("infection", &[-1, 1], move |z| lambda * z[0] * z[1]),
            transition("recovery", &[0, -1], move |z| gamma * z[1]),
            transition("waning", &[1, 0], move |z| rho * (1.0 - z[0] - z[1]).max(0.0)),
        ],
    )
    .expect("static model")
    .with_jacobian(Arc::new(move |z| {
        let (s, i) = (z[0], z[1]);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -lambda * i - rho, -lambda * s - rho,
                lambda * i, lambda * s - gamma,
            ],
        )
    }))
}

/// SEIR on (s, e, i, r).
pub fn seir_model(lambda: f64, nu: f64, gamma: f64) -> CompartmentalModel {
    CompartmentalModel::new(
        "SEIR",
        names(&["S", "E", "I", "R"]),
        vec![
            transition("infection", &[-1, 1, 0, 0], move |z| lambda * z[0] * z[2]),
            transition("onset", &[0, -1, 1, 0], move |z| nu * z[1]),
            transition("recovery", &[0, 0, -1, 1], move |z| gamma * z[2]),
        ],
    )
    .expect("static model")
    .with_jacobian(Arc::new(move |z| {
        let (s, i) = (z[0], z[2]);
        DMatrix::from_row_slice(
            4,
            4,
            &[
                -lambda * i, 0.0, -lambda * s, 0.0,
                lambda * i, -nu, lambda * s, 0.0,
                0.0, nu, -gamma, 0.0,
                0.0, 0.0, gamma, 0.0,
            ],
        )
    }))
}

fn seirs_jacobian(p: SeirsParams) -> JacobianFn {
    let SeirsParams { lambda, nu, gamma, rho, mu } = p;
    Arc::new(move |z| {
        let (s, i) = (z[0], z[2]);
        DMatrix::from_row_slice(
            4,
            4,
            &[
                -lambda * i - mu, 0.0, -lambda * s, rho,
                lambda * i, -nu - mu, lambda * s, 0.0,
                0.0, nu, -gamma - mu, 0.0,
                0.0, 0.0, gamma, -rho - mu,
            ],
        )
    })
}

/// SEIRS with births at rate μN and deaths at rate μ in every compartment.
pub fn seirs_demography_model(p: SeirsParams) -> CompartmentalModel {
    let SeirsParams { lambda, nu, gamma, rho, mu } = p;
    CompartmentalModel::new(
        "SEIRS-demography",
        names(&["S", "E", "I", "R"]),
        vec![
            transition("infection", &[-1, 1, 0, 0], move |z| lambda * z[0] * z[2]),
            transition("onset", &[0, -1, 1, 0], move |z| nu * z[1]),
            transition("recovery", &[0, 0, -1, 1], move |z| gamma * z[2]),
            transition("waning", &[1, 0, 0, -1], move |z| rho * z[3]),
            transition("birth", &[1, 0, 0, 0], move |_| mu),
            transition("death_s", &[-1, 0, 0, 0], move |z| mu * z[0]),
            transition("death_e", &[0, -1, 0, 0], move |z| mu * z[1]),
            transition("death_i", &[0, 0, -1, 0], move |z| mu * z[2]),
            transition("death_r", &[0, 0, 0, -1], move |z| mu * z[3]),
        ],
    )
    .expect("static model")
    .with_jacobian(seirs_jacobian(p))
}

/// SEIRS where each death is replaced by a susceptible birth, so the
/// population stays constant. Deaths of susceptibles have no net effect
/// and are omitted.
pub fn seirs_constant_model(p: SeirsParams) -> CompartmentalModel {
    let SeirsParams { lambda, nu, gamma, rho, mu } = p;
    let base = seirs_jacobian(p);
    CompartmentalModel::new(
        "SEIRS-constant",
        names(&["S", "E", "I", "R"]),
        vec![
            transition("infection", &[-1, 1, 0, 0], move |z| lambda * z[0] * z[2]),
            transition("onset", &[0, -1, 1, 0], move |z| nu * z[1]),
            transition("recovery", &[0, 0, -1, 1], move |z| gamma * z[2]),
            transition("waning", &[1, 0, 0, -1], move |z| rho * z[3]),
            transition("replace_e", &[1, -1, 0, 0], move |z| mu * z[1]),
            transition("replace_i", &[1, 0, -1, 0], move |z| mu * z[2]),
            transition("replace_r", &[1, 0, 0, -1], move |z| mu * z[3]),
        ],
    )
    .expect("static model")
    .with_jacobian(Arc::new(move |z| {
        let mut j = base(z);
        // S gains μ(e + i + r) instead of μ(1 - s).
        j[(0, 0)] += mu;
        j[(0, 1)] += mu;
        j[(0, 2)] += mu;
        j[(0, 3)] += mu;
        j
    }))
}

/// SIR with demography on (s, i): births μ, infection λsi, susceptible
/// deaths μs, recoveries γi and infective deaths μi.
pub fn sir_demography_model(lambda: f64, gamma: f64, mu: f64) -> CompartmentalModel {
    CompartmentalModel::new(
        "SIR-demography",
        names(&["S", "I"]),
        vec![
            transition("birth", &[1, 0], move |_| mu),
            transition("infection", &[-1, 1], move |z| lambda * z[0] * z[1]),
            transition("death_s", &[-1, 0], move |z| mu * z[0]),
            transition("recovery", &[0, -1], move |z| gamma * z[1]),
            transition("death_i", &[0, -1], move |z| mu * z[1]),
        ],
    )
    .expect("static model")
    .with_jacobian(Arc::new(move |z| {
        let (s, i) = (z[0], z[1]);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -lambda * i - mu, -lambda * s,
                lambda * i, lambda * s - gamma - mu,
            ],
        )
    }))
}

/// Ross malaria on (h, w) where h = H/N_H and w = V/N_H (so v = w/m).
pub fn ross_model(p: RossParams) -> CompartmentalModel {
    let RossParams { a, p_vh, p_hv, m, gamma, mu } = p;
    CompartmentalModel::new(
        "Ross-malaria",
        names(&["H", "V"]),
        vec![
            transition("host_infection", &[1, 0], move |z| a * p_vh * z[1] * (1.0 - z[0])),
            transition("host_recovery", &[-1, 0], move |z| gamma * z[0]),
            transition("vector_infection", &[0, 1], move |z| a * m * p_hv * z[0] * (1.0 - z[1] / m)),
            transition("vector_death", &[0, -1], move |z| mu * z[1]),
        ],
    )
    .expect("static model")
    .with_jacobian(Arc::new(move |z| {
        let (h, w) = (z[0], z[1]);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -a * p_vh * w - gamma, a * p_vh * (1.0 - h),
                a * m * p_hv * (1.0 - w / m), -a * p_hv * h - mu,
            ],
        )
    }))
}

/// The single input document shared by every CLI command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub model: String,
    pub params: serde_json::Value,
    pub population: usize,
    #[serde(default = "one")]
    pub initial_infectives: usize,
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.population == 0 {
            return Err(invalid("population must be at least 1"));
        }
        doc.spec()?;
        Ok(doc)
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_parts(&self.model, &self.params)
    }

    /// Epidemic parameters for SIR/SEIR documents.
    pub fn epidemic_params(&self) -> Result<EpidemicParams> {
        let fam = self.spec()?.family().ok_or_else(|| {
            Error::Unsupported(format!("`{}` is not an SIR/SEIR-family model", self.model))
        })?;
        let p = EpidemicParams {
            lambda: fam.lambda,
            latent: fam.latent,
            infectious: fam.infectious,
            population: self.population,
            initial_infectives: self.initial_infectives,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp(rate: f64) -> PeriodDistribution {
        PeriodDistribution::exponential(rate).unwrap()
    }

    #[test]
    fn r0_and_escape_for_exponential_and_constant_periods() {
        let p = EpidemicParams::sir(1.8, exp(1.0), 100).unwrap();
        assert_relative_eq!(basic_reproduction_number(&p), 1.8, epsilon = 1e-15);
        assert_relative_eq!(escape_probability(&p), 1.0 / (1.0 + 0.018), epsilon = 1e-15);
        assert!((escape_probability(&p) - 0.9823).abs() < 5e-5);

        let q = EpidemicParams::sir(1.8, PeriodDistribution::constant(1.0).unwrap(), 100).unwrap();
        assert_relative_eq!(basic_reproduction_number(&q), 1.8);
        assert!((escape_probability(&q) - 0.9822).abs() < 5e-5);
    }

    #[test]
    fn escape_probability_increases_to_one_with_population() {
        let mut last = 0.0;
        for n in [1usize, 10, 100, 1000, 100_000, 10_000_000] {
            let p = EpidemicParams::sir(2.0, PeriodDistribution::gamma(3, 0.5).unwrap(), n).unwrap();
            let e = escape_probability(&p);
            assert!(e > last && e < 1.0);
            last = e;
        }
        assert!(1.0 - last < 1e-6);
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(EpidemicParams::sir(0.0, exp(1.0), 10).is_err());
        assert!(EpidemicParams::sir(1.0, exp(1.0), 0).is_err());
        assert!(PeriodDistribution::exponential(-1.0).is_err());
        assert!(PeriodDistribution::gamma(0, 1.0).is_err());
        assert!(PeriodDistribution::constant(0.0).is_ok());
        assert!(EpidemicParams::sir(1.0, PeriodDistribution::zero(), 10).is_err());
    }

    #[test]
    fn period_moments() {
        let c = PeriodDistribution::constant(2.0).unwrap();
        assert_eq!((c.mean(), c.variance(), c.cv2()), (2.0, 0.0, 0.0));
        let e = exp(0.5);
        assert_eq!((e.mean(), e.variance(), e.cv2()), (2.0, 4.0, 1.0));
        let g = PeriodDistribution::gamma(4, 0.25).unwrap();
        assert_relative_eq!(g.mean(), 1.0);
        assert_relative_eq!(g.cv2(), g.variance() / (g.mean() * g.mean()));
        for d in [c, e, g] {
            assert_eq!(d.mgf(0.0), 1.0);
        }
        assert!(e.mgf(0.5).is_infinite());
    }

    #[test]
    fn erlang_one_matches_exponential() {
        let g = PeriodDistribution::gamma(1, 1.0 / 1.7).unwrap();
        let e = exp(1.7);
        for k in 0..200 {
            let theta = -10.0 + 0.05 * k as f64;
            assert!((g.mgf(theta) - e.mgf(theta)).abs() < 1e-12);
        }
    }

    #[test]
    fn mgf_monotone_on_negative_axis() {
        for d in [PeriodDistribution::constant(1.3).unwrap(), exp(0.7), PeriodDistribution::gamma(3, 0.4).unwrap()] {
            let mut prev = 0.0;
            for k in 0..=400 {
                let theta = -20.0 + 0.05 * k as f64;
                let v = d.mgf(theta);
                assert!(v > 0.0 && v <= 1.0 + 1e-15);
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn sampled_means_match() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for d in [exp(2.0), PeriodDistribution::gamma(3, 1.0 / 3.0).unwrap()] {
            let n = 200_000;
            let m = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
            let se = (d.variance() / n as f64).sqrt();
            assert!((m - d.mean()).abs() < 5.0 * se);
        }
    }

    #[test]
    fn vaccination_numbers() {
        let perfect = VaccinationPolicy::perfect(0.5).unwrap();
        assert_relative_eq!(vaccinated_reproduction_number(2.0, &perfect).unwrap(), 1.0);
        let leaky = VaccinationPolicy::leaky(1.0 / 3.0, 0.8).unwrap();
        let rv = vaccinated_reproduction_number(2.0, &leaky).unwrap();
        assert!((rv - 1.467).abs() < 5e-4);
        let none = VaccinationPolicy::perfect(0.0).unwrap();
        assert_eq!(vaccinated_reproduction_number(2.5, &none).unwrap(), 2.5);
        let both = VaccinationPolicy::new(0.5, 0.5, 0.5).unwrap();
        assert!(matches!(
            vaccinated_reproduction_number(2.0, &both),
            Err(Error::Unsupported(_))
        ));
        assert!(VaccinationPolicy::perfect(1.5).is_err());
    }

    #[test]
    fn critical_coverage() {
        assert_eq!(critical_vaccination_coverage(2.0), CriticalCoverage::Required(0.5));
        assert_relative_eq!(critical_vaccination_coverage(1.5).fraction(), 1.0 / 3.0);
        assert_eq!(critical_vaccination_coverage(1.0), CriticalCoverage::AlreadySubcritical);
        assert_eq!(critical_vaccination_coverage(1.0).fraction(), 0.0);
    }

    fn all_specs() -> Vec<ModelSpec> {
        let fam = FamilyParams { lambda: 1.5, latent: PeriodDistribution::zero(), infectious: exp(1.0) };
        let seirs = SeirsParams { lambda: 3.0, nu: 2.0, gamma: 1.0, rho: 0.1, mu: 0.02 };
        vec![
            ModelSpec::Sir(fam),
            ModelSpec::Sis(SisParams { lambda: 2.0, gamma: 1.0 }),
            ModelSpec::Sirs(SirsParams { lambda: 2.0, gamma: 1.0, rho: 0.3 }),
            ModelSpec::Seir(FamilyParams { latent: exp(2.0), ..fam }),
            ModelSpec::SeirsDemography(seirs),
            ModelSpec::SeirsConstant(seirs),
            ModelSpec::SirDemography(SirDemographyParams { lambda: 3.0, gamma: 1.0, mu: 0.05 }),
            ModelSpec::RossMalaria(RossParams { a: 0.5, p_vh: 0.5, p_hv: 0.5, m: 4.0, gamma: 0.1, mu: 0.2 }),
        ]
    }

    #[test]
    fn catalogue_mass_conservation() {
        for spec in all_specs() {
            let m = spec.compartmental().unwrap();
            let expect_closed = matches!(
                spec,
                ModelSpec::Sir(_) | ModelSpec::Seir(_) | ModelSpec::SeirsConstant(_)
            );
            assert_eq!(m.is_closed(), expect_closed, "{}", m.name());
            if matches!(spec, ModelSpec::Sir(_) | ModelSpec::Seir(_) | ModelSpec::SeirsConstant(_)) {
                for t in m.transitions() {
                    assert_eq!(t.jump.iter().sum::<i64>(), 0, "{} {}", m.name(), t.label);
                }
            }
        }
    }

    #[test]
    fn catalogue_rates_non_negative_and_jacobians_match_differences() {
        let points: [&[f64]; 3] = [&[0.6, 0.1, 0.2, 0.1], &[0.9, 0.05, 0.03, 0.02], &[0.2, 0.3, 0.3, 0.2]];
        for spec in all_specs() {
            let m = spec.compartmental().unwrap();
            let d = m.dimension();
            for pt in points {
                let z = &pt[..d];
                for j in 0..m.n_transitions() {
                    assert!(m.rate(j, 0.0, z) >= 0.0);
                }
                let jac = m.analytic_jacobian(z).unwrap();
                for c in 0..d {
                    let h = 1e-6;
                    let mut up = z.to_vec();
                    let mut dn = z.to_vec();
                    up[c] += h;
                    dn[c] -= h;
                    let (bu, bd) = (m.drift(0.0, &up), m.drift(0.0, &dn));
                    for r in 0..d {
                        let fd = (bu[r] - bd[r]) / (2.0 * h);
                        assert!((fd - jac[(r, c)]).abs() < 1e-6, "{} ({r},{c})", m.name());
                    }
                }
            }
        }
    }

    #[test]
    fn catalogue_entries_as_documented() {
        let sir = model_catalogue("SIR", &serde_json::json!({"lambda": 1.5, "infectious": {"kind": "exponential", "rate": 1.0}})).unwrap();
        assert_eq!(sir.jump(0), &[-1, 1, 0]);
        assert_eq!(sir.jump(1), &[0, -1, 1]);
        assert_relative_eq!(sir.rate(0, 0.0, &[0.5, 0.2, 0.3]), 1.5 * 0.1);
        let sis = model_catalogue("SIS", &serde_json::json!({"lambda": 2.0, "gamma": 1.0})).unwrap();
        assert_eq!((sis.jump(0), sis.jump(1)), (&[1][..], &[-1][..]));
        assert_relative_eq!(sis.rate(0, 0.0, &[0.25]), 2.0 * 0.25 * 0.75);
        let sirs = model_catalogue("SIRS", &serde_json::json!({"lambda": 2.0, "gamma": 1.0, "rho": 0.5})).unwrap();
        assert_eq!(sirs.jump(2), &[1, 0]);
        assert_relative_eq!(sirs.rate(2, 0.0, &[0.3, 0.2]), 0.25);
    }

    #[test]
    fn catalogue_errors() {
        assert!(matches!(model_catalogue("SIRX", &serde_json::json!({})), Err(Error::UnknownModel(_))));
        // Typos in parameter names are rejected.
        assert!(model_catalogue("SIS", &serde_json::json!({"lambda": 2.0, "gama": 1.0})).is_err());
        // Markov form needs exponential periods.
        let doc = serde_json::json!({"lambda": 1.5, "infectious": {"kind": "constant", "value": 1.0}});
        assert!(matches!(model_catalogue("SIR", &doc), Err(Error::Unsupported(_))));
    }

    #[test]
    fn document_round_trip() {
        let text = r#"{"model": "SEIR", "params": {"lambda": 1.8, "latent": {"kind": "exponential", "rate": 2.0},
            "infectious": {"kind": "exponential", "rate": 1.0}}, "population": 100}"#;
        let doc = ModelDocument::from_json(text).unwrap();
        assert_eq!(doc.initial_infectives, 1);
        let p = doc.epidemic_params().unwrap();
        assert_eq!(p.population, 100);
        assert_relative_eq!(basic_reproduction_number(&p), 1.8);
        assert!(ModelDocument::from_json(r#"{"model": "SIS", "params": {"lambda": 2, "gamma": 1}, "population": 10, "extra": 1}"#).is_err());
        assert!(ModelDocument::from_json("{not json").is_err());
    }
}
