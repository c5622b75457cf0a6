use clap::Args;
use epistoch::sim::{
    run_replicas, simulate_markov, simulate_seir_general, simulate_sellke, write_jsonl, MarkovOptions, Method,
    ReplicaJob, Trajectory,
};
use epistoch::stats::summarize;
use epistoch::SeedSpec;
use serde_json::json;

use crate::output::{print_json, Input, Outputs};
use crate::Common;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop time for Markov runs (open-population models need one).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// markov, agent or sellke. Defaults to sellke for SIR/SEIR documents
    /// and markov otherwise.
    #[arg(long)]
    pub method: Option<String>,
    /// Also write the sample paths of the first K replicas as CSV.
    #[arg(long, default_value_t = 0)]
    pub trajectories: usize,
    /// Maximum number of events per Markov run (default 50·N).
    #[arg(long)]
    pub event_cap: Option<usize>,
}

pub fn job(input: &Input, args: &SimulateArgs) -> anyhow::Result<ReplicaJob> {
    let method = match &args.method {
        Some(m) => m.parse::<Method>()?,
        None if input.spec.family().is_some() => Method::Sellke,
        None => Method::Markov,
    };
    let mut job = ReplicaJob::new(input.spec, input.doc.population, args.replicas, args.seed, method);
    job.initial_infectives = input.doc.initial_infectives;
    if let Some(h) = args.horizon {
        job.horizon = h;
    }
    job.event_cap = args.event_cap;
    Ok(job)
}

fn trajectory(job: &ReplicaJob, index: u64) -> anyhow::Result<Trajectory> {
    let seed = SeedSpec::new(job.master_seed, index);
    Ok(match job.method {
        Method::Markov => {
            let opts = MarkovOptions { horizon: job.horizon, event_cap: job.event_cap };
            let model = job.model.compartmental()?;
            simulate_markov(&model, &job.markov_initial_state()?, job.population as f64, &opts, seed)?
        }
        Method::Agent => simulate_seir_general(&job.epidemic_params()?, seed)?.0,
        Method::Sellke => simulate_sellke(&job.epidemic_params()?, seed)?.0,
    })
}

pub fn run(input: &Input, args: &SimulateArgs, threads: usize) -> anyhow::Result<bool> {
    let job = job(input, args)?;
    if job.method == Method::Markov && !job.horizon.is_finite() && !job.model.compartmental()?.is_closed() {
        log::warn!("{} is not closed; runs stop only at extinction or the event cap", job.model.name());
    }
    let outcomes = run_replicas(&job, threads)?;
    let mut out = Outputs::new(input.out.clone())?;
    out.write("outcomes.jsonl", |w| Ok(write_jsonl(&outcomes, w)?))?;
    if out.enabled() {
        for i in 0..args.trajectories.min(args.replicas) {
            let traj = trajectory(&job, i as u64)?;
            out.write(&format!("trajectory_{i:05}.csv"), |w| Ok(traj.write_csv(w)?))?;
        }
    }

    let sizes = summarize(outcomes.iter().map(|o| o.outcome.final_size as f64));
    let major = summarize(outcomes.iter().filter(|o| o.outcome.took_off).map(|o| o.outcome.final_size as f64));
    let duration = summarize(outcomes.iter().map(|o| o.outcome.extinction_time));
    let took_off = outcomes.iter().filter(|o| o.outcome.took_off).count();
    let censored = outcomes.iter().filter(|o| o.outcome.censored).count();
    let summary = json!({
        "command": "simulate",
        "model": job.model.name(),
        "method": job.method,
        "population": job.population,
        "replicas": job.replicas,
        "master_seed": job.master_seed,
        "final_size": sizes,
        "take_off_fraction": took_off as f64 / outcomes.len() as f64,
        "major_final_size": major,
        "extinction_time": duration,
        "censored": censored,
    });
    out.write_json("report.json", &summary)?;
    let flags = json!({
        "method": job.method,
        "horizon": args.horizon,
        "event_cap": args.event_cap,
        "trajectories": args.trajectories,
    });
    out.finish("simulate", input, Some(job.master_seed), Some(job.replicas), flags)?;
    print_json(&summary)?;
    Ok(true)
}
