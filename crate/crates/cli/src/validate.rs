use clap::Args;
use epistoch::experiments::{
    clt_experiment, final_size_fit, lln_experiment, sellke_vs_agent, sis_extinction_scaling, wald_experiment,
    CltConfig, LlnConfig,
};
use epistoch::ldp::sis_quasipotential;
use epistoch::model::EpidemicParams;
use epistoch::sim::{Method, ReplicaJob};
use epistoch::ModelSpec;
use serde_json::{json, Value};

use crate::output::{parse_list, print_json, Input, Outputs};
use crate::Common;

pub const SUITES: [&str; 6] = ["wald", "sellke-vs-agent", "mc-vs-exact", "lln", "clt", "ldp-slope"];

const ALPHA: f64 = 0.001;
const LLN_TOL: f64 = 0.01;
const LLN_PASS_FRACTION: f64 = 0.99;
const CLT_REL_TOL: f64 = 0.05;
const SLOPE_REL_TOL: f64 = 0.25;

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated suites: wald, sellke-vs-agent, mc-vs-exact, lln, clt,
    /// ldp-slope.
    #[arg(long)]
    pub suite: String,
    /// Replicas per experiment (suite-specific default).
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// θ values for the Wald identity.
    #[arg(long, default_value = "0.5,1,2")]
    pub theta: String,
    /// lln: comparison window after synchronisation; clt: observation time.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// ODE step for lln and clt.
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// mc-vs-exact: simulator to test (default: both sellke and agent).
    #[arg(long)]
    pub method: Option<String>,
    /// ldp-slope: population sizes.
    #[arg(long, default_value = "20,30,40")]
    pub populations: String,
}

fn family(suite: &str, input: &Input) -> anyhow::Result<EpidemicParams> {
    input
        .doc
        .epidemic_params()
        .map_err(|_| anyhow::anyhow!("suite `{suite}` needs an SIR/SEIR document, got {}", input.spec.name()))
}

fn markov_start(input: &Input) -> anyhow::Result<Vec<i64>> {
    let mut job = ReplicaJob::new(input.spec, input.doc.population, 1, 0, Method::Markov);
    job.initial_infectives = input.doc.initial_infectives;
    Ok(job.markov_initial_state()?)
}

pub fn run(input: &Input, args: &ValidateArgs, threads: usize) -> anyhow::Result<bool> {
    let suites: Vec<String> = parse_list(&args.suite, "suite")?;
    if suites.is_empty() {
        anyhow::bail!("--suite needs at least one suite");
    }
    for s in &suites {
        if !SUITES.contains(&s.as_str()) {
            anyhow::bail!("unknown suite `{s}` (expected one of {})", SUITES.join(", "));
        }
    }
    let seed = args.seed;
    let replicas = |default: usize| args.replicas.unwrap_or(default);
    let mut results = Vec::new();
    for suite in &suites {
        let result: Value = match suite.as_str() {
            "wald" => {
                let p = family(suite, input)?;
                let thetas: Vec<f64> = parse_list(&args.theta, "theta")?;
                let checks = wald_experiment(&p, &thetas, replicas(100_000), seed, Method::Sellke, threads)?;
                let rows: Vec<Value> = checks
                    .iter()
                    .map(|c| {
                        let s = c.statistic;
                        let pass = (s.mean - 1.0).abs() <= (4.0 * s.se).max(1e-12);
                        let z = if s.se > 1e-12 { Some((s.mean - 1.0) / s.se) } else { None };
                        json!({ "theta": c.theta, "mean": s.mean, "se": s.se, "z": z, "pass": pass })
                    })
                    .collect();
                let pass = rows.iter().all(|r| r["pass"] == true);
                json!({ "suite": suite, "pass": pass, "seed": seed, "replicas": replicas(100_000), "criterion": "|mean - 1| <= 4 SE", "checks": rows })
            }
            "sellke-vs-agent" => {
                let p = family(suite, input)?;
                let r = sellke_vs_agent(&p, replicas(100_000), seed, threads)?;
                let pass = r.final_size_chi_square.passes(ALPHA) && r.pressure_ks.p_value >= ALPHA;
                json!({ "suite": suite, "pass": pass, "alpha": ALPHA, "replicas": replicas(100_000), "report": r })
            }
            "mc-vs-exact" => {
                let p = family(suite, input)?;
                let methods = match &args.method {
                    Some(m) => vec![m.parse::<Method>()?],
                    None => vec![Method::Sellke, Method::Agent],
                };
                let mut rows = Vec::new();
                for m in methods {
                    let r = final_size_fit(&p, m, replicas(100_000), seed, threads)?;
                    rows.push(json!({ "method": m, "seed": seed, "pass": r.chi_square.passes(ALPHA), "chi_square": r.chi_square, "observed": r.observed, "expected_probs": r.expected_probs }));
                }
                let pass = rows.iter().all(|r| r["pass"] == true);
                json!({ "suite": suite, "pass": pass, "alpha": ALPHA, "replicas": replicas(100_000), "checks": rows })
            }
            "lln" => {
                let model = input.spec.compartmental()?;
                let names = model.compartments();
                let (sync, scale) = match input.spec {
                    ModelSpec::RossMalaria(p) => (0, vec![1.0, p.m]),
                    _ => {
                        let i = names
                            .iter()
                            .position(|c| c == "I")
                            .ok_or_else(|| anyhow::anyhow!("lln needs an I compartment"))?;
                        (i, vec![1.0; names.len()])
                    }
                };
                let cfg = LlnConfig {
                    population: input.doc.population,
                    initial: markov_start(input)?,
                    sync_compartment: sync,
                    sync_fraction: 0.01,
                    horizon: args.horizon.unwrap_or(40.0),
                    step: args.step,
                    scale,
                    replicas: replicas(100),
                    master_seed: seed,
                };
                let r = lln_experiment(&model, &cfg, threads)?;
                let frac = r.fraction_within(LLN_TOL);
                json!({
                    "suite": suite,
                    "pass": r.synchronized > 0 && frac >= LLN_PASS_FRACTION,
                    "seed": seed,
                    "tolerance": LLN_TOL,
                    "fraction_within": frac,
                    "required_fraction": LLN_PASS_FRACTION,
                    "config": cfg,
                    "report": r,
                })
            }
            "clt" => {
                let model = input.spec.compartmental()?;
                let cfg = CltConfig {
                    population: input.doc.population,
                    initial: markov_start(input)?,
                    time: args.horizon.unwrap_or(3.0),
                    step: args.step,
                    replicas: replicas(20_000),
                    master_seed: seed,
                };
                let r = clt_experiment(&model, &cfg, threads)?;
                let errs = r.relative_errors();
                let pass = errs.iter().all(|e| e.is_nan() || *e <= CLT_REL_TOL);
                json!({ "suite": suite, "pass": pass, "seed": seed, "tolerance": CLT_REL_TOL, "relative_errors": errs, "config": cfg, "report": r })
            }
            "ldp-slope" => {
                let ModelSpec::Sis(p) = input.spec else {
                    anyhow::bail!("suite `ldp-slope` needs an SIS document, got {}", input.spec.name());
                };
                let pops: Vec<usize> = parse_list(&args.populations, "population")?;
                if pops.len() < 2 {
                    anyhow::bail!("ldp-slope needs at least two populations");
                }
                let qp = sis_quasipotential(p.lambda, p.gamma)?;
                let r = sis_extinction_scaling(p, &pops, replicas(2000), seed, threads)?;
                let rel = (r.fit.slope - qp.value).abs() / qp.value;
                json!({ "suite": suite, "pass": rel <= SLOPE_REL_TOL, "seed": seed, "V_bar": qp.value, "slope": r.fit.slope, "relative_error": rel, "tolerance": SLOPE_REL_TOL, "report": r })
            }
            _ => unreachable!(),
        };
        results.push(result);
    }
    let all_pass = results.iter().all(|r| r["pass"] == true);
    let report = json!({ "command": "validate", "model": input.spec.name(), "pass": all_pass, "suites": results });
    let mut out = Outputs::new(input.out.clone())?;
    out.write_json("report.json", &report)?;
    let flags = json!({
        "suite": suites,
        "theta": args.theta,
        "horizon": args.horizon,
        "step": args.step,
        "method": args.method,
        "populations": args.populations,
        "replicas": args.replicas,
    });
    out.finish("validate", input, Some(seed), args.replicas, flags)?;
    print_json(&report)?;
    Ok(all_pass)
}
