use clap::Args;
use epistoch::branching::{
    duration_leading_terms, end_phase_decay_rate, extinction_probability, malthusian_rate, GrowthRates, OffspringLaw,
};
use epistoch::final_size::{
    chain_binomial_distribution, exact_final_size_distribution, subcritical_check, OutbreakAsymptotics, Precision,
};
use epistoch::fluct::{linearize, lyapunov_solve, CovarianceReport};
use epistoch::ldp::{sis_quasipotential, sis_quasipotential_quadrature, QuasiPotentialReport};
use epistoch::model::{critical_vaccination_coverage, EpidemicParams};
use epistoch::ode::{critical_community_size, endemic_equilibrium};
use epistoch::{escape_probability, ModelSpec, PeriodDistribution};
use serde_json::{json, Map, Value};

use crate::output::{parse_list, print_json, Input, Outputs};
use crate::Common;

pub const QUANTITIES: [&str; 12] = [
    "r0",
    "escape",
    "extinction",
    "malthus",
    "final-size",
    "exact-pmf",
    "chain-binomial",
    "endemic",
    "ncrit",
    "covariance",
    "quasipotential",
    "duration",
];

/// Above this many susceptibles the exact final-size recursion is refused.
const EXACT_PMF_MAX: usize = 5000;

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated list of quantities (r0, escape, extinction, malthus,
    /// final-size, exact-pmf, chain-binomial, endemic, ncrit, covariance,
    /// quasipotential, duration).
    #[arg(long)]
    pub which: String,
    /// Population sizes for the extinction-time scale e^{N V}; defaults to
    /// the document population.
    #[arg(long)]
    pub populations: Option<String>,
}

struct Report {
    values: Map<String, Value>,
    formulas: Map<String, Value>,
}

impl Report {
    fn put(&mut self, key: &str, value: impl serde::Serialize) -> anyhow::Result<()> {
        self.values.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    fn formula(&mut self, which: &str, f: &str) {
        self.formulas.insert(which.to_string(), Value::String(f.to_string()));
    }
}

/// (λ, latent, infectious) of the single-type branching process that
/// approximates the start of an outbreak.
fn branching_form(spec: &ModelSpec) -> Option<(f64, PeriodDistribution, PeriodDistribution)> {
    let exp = |rate: f64| PeriodDistribution::Exponential { rate };
    match *spec {
        ModelSpec::Sir(p) | ModelSpec::Seir(p) => Some((p.lambda, p.latent, p.infectious)),
        ModelSpec::Sis(p) => Some((p.lambda, PeriodDistribution::zero(), exp(p.gamma))),
        ModelSpec::Sirs(p) => Some((p.lambda, PeriodDistribution::zero(), exp(p.gamma))),
        ModelSpec::SirDemography(p) => Some((p.lambda, PeriodDistribution::zero(), exp(p.gamma + p.mu))),
        _ => None,
    }
}

fn r0(spec: &ModelSpec) -> (f64, &'static str) {
    match *spec {
        ModelSpec::SeirsDemography(p) | ModelSpec::SeirsConstant(p) => {
            (p.lambda * p.nu / ((p.nu + p.mu) * (p.gamma + p.mu)), "lambda nu / ((nu + mu)(gamma + mu))")
        }
        ModelSpec::RossMalaria(p) => (p.r0(), "a^2 p_vh p_hv m / (gamma mu)"),
        ModelSpec::SirDemography(p) => (p.r0(), "lambda / (gamma + mu)"),
        _ => {
            let (lambda, _, inf) = branching_form(spec).expect("all other models have a branching form");
            (lambda * inf.mean(), "lambda E[I]")
        }
    }
}

fn unsupported(which: &str, spec: &ModelSpec) -> anyhow::Error {
    anyhow::anyhow!("`{which}` is not available for {}", spec.name())
}

fn family(which: &str, input: &Input) -> anyhow::Result<EpidemicParams> {
    input.doc.epidemic_params().map_err(|_| unsupported(which, &input.spec))
}

pub fn run(input: &Input, args: &AnalyzeArgs) -> anyhow::Result<bool> {
    let which: Vec<String> = parse_list(&args.which, "quantity")?;
    if which.is_empty() {
        anyhow::bail!("--which needs at least one quantity");
    }
    for w in &which {
        if !QUANTITIES.contains(&w.as_str()) {
            anyhow::bail!("unknown quantity `{w}` (expected one of {})", QUANTITIES.join(", "));
        }
    }
    let populations: Vec<f64> = match &args.populations {
        Some(s) => parse_list(s, "population")?,
        None => vec![input.doc.population as f64],
    };
    let spec = &input.spec;
    let n = input.doc.population;
    let k = input.doc.initial_infectives;
    let mut out = Outputs::new(input.out.clone())?;
    let mut rep = Report { values: Map::new(), formulas: Map::new() };
    rep.put("model", spec.name())?;

    for w in &which {
        match w.as_str() {
            "r0" => {
                let (value, f) = r0(spec);
                rep.put("r0", value)?;
                rep.formula(w, f);
            }
            "escape" => {
                let p = family(w, input)?;
                rep.put("escape", escape_probability(&p))?;
                rep.formula(w, "psi_I(-lambda / N)");
            }
            "extinction" => {
                let (lambda, _, inf) = branching_form(spec).ok_or_else(|| unsupported(w, spec))?;
                let q = extinction_probability(&OffspringLaw::mixed_poisson(lambda, inf)?);
                rep.put("extinction_probability", q)?;
                rep.put("extinction_probability_all_index_cases", q.powi(k as i32))?;
                rep.put("take_off_probability", 1.0 - q.powi(k as i32))?;
                rep.formula(w, "smallest root of q = psi_I(-lambda (1 - q)), raised to the number of index cases");
            }
            "malthus" => {
                let (lambda, lat, inf) = branching_form(spec).ok_or_else(|| unsupported(w, spec))?;
                rep.put("malthusian_rate", malthusian_rate(lambda, &lat, &inf)?)?;
                rep.formula(w, "root r of lambda psi_L(-r)(1 - psi_I(-r)) / r = 1");
            }
            "final-size" => {
                let p = family(w, input)?;
                let a = OutbreakAsymptotics::new(n, p.lambda, &p.infectious)?;
                let r0 = p.lambda * p.infectious.mean();
                rep.put("z_star", a.z_star)?;
                rep.put("minor_outbreak_probability", a.minor_prob)?;
                if r0 > 1.0 {
                    rep.put("clt_mean", a.clt_mean)?;
                    rep.put("clt_sd", a.clt_sd)?;
                    rep.put("effective_r_after", subcritical_check(r0, a.z_star))?;
                    let vc = critical_vaccination_coverage(r0);
                    rep.put("critical_vaccination_coverage", vc.fraction())?;
                }
                rep.formula(
                    w,
                    "1 - z = exp(-R0 z); normal approximation N z*, N z*(1-z*)(1 + cv^2 (1-z*) R0^2)/(1 - (1-z*) R0)^2",
                );
            }
            "exact-pmf" => {
                let p = family(w, input)?;
                if k != 1 {
                    anyhow::bail!("exact-pmf assumes a single index case, document has {k}");
                }
                if n > EXACT_PMF_MAX {
                    anyhow::bail!("exact-pmf supports at most {EXACT_PMF_MAX} susceptibles, document has {n}");
                }
                let pmf = exact_final_size_distribution(n, p.lambda, &p.infectious, Precision::Auto)?;
                out.write("exact_pmf.csv", |f| Ok(pmf.write_csv(f)?))?;
                rep.put("exact_pmf", &pmf)?;
                rep.formula(w, "triangular recursion sum_i C(n-i, k-i) psi_k^(k-i) p_i = C(n, k) psi_k^(k+1)");
            }
            "chain-binomial" => {
                let p = family(w, input)?;
                let PeriodDistribution::Constant { value } = p.infectious else {
                    anyhow::bail!("chain-binomial needs a constant infectious period");
                };
                if k != 1 {
                    anyhow::bail!("chain-binomial assumes a single index case, document has {k}");
                }
                let prob = 1.0 - (-p.lambda * value / n as f64).exp();
                let pmf = chain_binomial_distribution(n, prob)?;
                out.write("chain_binomial.csv", |f| Ok(pmf.write_csv(f)?))?;
                rep.put("chain_binomial", &pmf)?;
                rep.put("contact_probability", prob)?;
                rep.formula(w, "Reed-Frost generations with p = 1 - exp(-lambda c / N)");
            }
            "endemic" => match *spec {
                ModelSpec::SirDemography(p) => {
                    rep.put("endemic", endemic_equilibrium(p.r0(), p.eps_infectious_lifetime())?)?;
                    rep.formula(w, "(1/R0, eps (1 - 1/R0)), eps = mu / (gamma + mu)");
                }
                ModelSpec::Sis(p) => {
                    rep.put("endemic", json!({ "i_hat": 1.0 - p.gamma / p.lambda }))?;
                    rep.formula(w, "1 - 1/R0");
                }
                _ => return Err(unsupported(w, spec)),
            },
            "ncrit" => {
                let ModelSpec::SirDemography(p) = *spec else { return Err(unsupported(w, spec)) };
                rep.put("critical_community_size", critical_community_size(p.r0(), p.eps_infectious_lifetime())?)?;
                rep.formula(w, "9 / (eps^2 (1 - 1/R0)^2 R0)");
            }
            "covariance" => {
                let point = match *spec {
                    ModelSpec::SirDemography(p) => {
                        let e = endemic_equilibrium(p.r0(), p.eps_infectious_lifetime())?;
                        vec![e.s_hat, e.i_hat]
                    }
                    ModelSpec::Sis(p) => vec![1.0 - p.gamma / p.lambda],
                    _ => return Err(unsupported(w, spec)),
                };
                let model = spec.compartmental()?;
                let lin = linearize(&model, &point)?;
                let cov = lyapunov_solve(&lin.a, &lin.c)?;
                rep.put("covariance", CovarianceReport::new(&model, &lin, &cov))?;
                rep.formula(w, "A V + V A^T + C C^T = 0 at the endemic point");
            }
            "quasipotential" => {
                let ModelSpec::Sis(p) = *spec else { return Err(unsupported(w, spec)) };
                let qp = sis_quasipotential(p.lambda, p.gamma)?;
                rep.put("quasipotential", QuasiPotentialReport::new(&qp, &populations))?;
                rep.put("quasipotential_quadrature", sis_quasipotential_quadrature(p.lambda, p.gamma)?)?;
                rep.formula(w, "log R0 - 1 + 1/R0");
            }
            "duration" => {
                let p = family(w, input)?;
                let r = malthusian_rate(p.lambda, &p.latent, &p.infectious)?;
                let r0 = p.lambda * p.infectious.mean();
                let z = OutbreakAsymptotics::new(n, p.lambda, &p.infectious)?.z_star;
                let r_star = end_phase_decay_rate(p.lambda, z, &p.latent, &p.infectious)?;
                let (rise, fall) = duration_leading_terms(n as f64, GrowthRates { r, r_star })?;
                rep.put(
                    "duration",
                    json!({
                        "r": r,
                        "r_star": r_star,
                        "r0": r0,
                        "log_n_over_r": rise,
                        "log_n_over_abs_r_star": fall,
                        "leading_total": rise + fall,
                        "slope_in_log_n": 1.0 / r - 1.0 / r_star,
                    }),
                )?;
                rep.formula(w, "log N / r + log N / |r*|, r* the Malthusian root at lambda (1 - z*)");
            }
            _ => unreachable!(),
        }
    }
    rep.values.insert("formulas".into(), Value::Object(rep.formulas));
    let report = Value::Object(rep.values);
    out.write_json("report.json", &report)?;
    out.finish("analyze", input, None, None, json!({ "which": which, "populations": populations }))?;
    print_json(&report)?;
    Ok(true)
}
