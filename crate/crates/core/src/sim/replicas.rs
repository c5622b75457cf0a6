//! Parallel replica runner with per-replica random streams.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{run_agent, run_sellke};
use super::markov::{markov_outcome, MarkovOptions};
use super::outcome::EpidemicOutcome;
use crate::error::{invalid, Error, Result};
use crate::model::{EpidemicParams, FamilyParams, ModelSpec};
use crate::rng::SeedSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Next-jump simulation of the Markov compartmental model.
    Markov,
    /// Event-driven individual-based simulation.
    Agent,
    Sellke,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" | "gillespie" => Ok(Method::Markov),
            "agent" => Ok(Method::Agent),
            "sellke" => Ok(Method::Sellke),
            other => Err(invalid(format!("unknown method `{other}` (expected markov, agent or sellke)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaJob {
    pub model: ModelSpec,
    pub population: usize,
    pub initial_infectives: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub method: Method,
    pub horizon: f64,
    pub event_cap: Option<usize>,
    pub take_off_threshold: Option<usize>,
    /// Overrides the default Markov starting counts.
    pub initial_state: Option<Vec<i64>>,
}

impl ReplicaJob {
    pub fn new(model: ModelSpec, population: usize, replicas: usize, master_seed: u64, method: Method) -> Self {
        ReplicaJob {
            model,
            population,
            initial_infectives: 1,
            replicas,
            master_seed,
            method,
            horizon: f64::INFINITY,
            event_cap: None,
            take_off_threshold: None,
            initial_state: None,
        }
    }

    /// Parameters for the agent and Sellke simulators.
    pub fn epidemic_params(&self) -> Result<EpidemicParams> {
        let family = self.model.family().ok_or_else(|| {
            Error::Unsupported(format!("{} has no individual-based form; use the markov method", self.model.name()))
        })?;
        EpidemicParams::new(family.lambda, family.latent, family.infectious, self.population)?
            .with_initial_infectives(self.initial_infectives)
    }

    /// Markov starting counts: N susceptibles, the index cases in the first
    /// infected compartment (E if present, else I).
    pub fn markov_initial_state(&self) -> Result<Vec<i64>> {
        if let Some(s) = &self.initial_state {
            return Ok(s.clone());
        }
        let model = self.model.compartmental()?;
        let names = model.compartments();
        let mut x = vec![0i64; names.len()];
        let n = self.population as i64;
        let k = self.initial_infectives as i64;
        if let Some(s) = names.iter().position(|c| c == "S") {
            x[s] = n;
        }
        let first_infected = ["E", "I", "H"].iter().find_map(|c| names.iter().position(|x| x == c));
        match first_infected {
            Some(i) => x[i] = k,
            None => return Err(invalid(format!("{} has no infected compartment", model.name()))),
        }
        Ok(x)
    }

    fn pair_rate(&self) -> f64 {
        let lambda = match &self.model {
            ModelSpec::Sis(p) => p.lambda,
            ModelSpec::Sirs(p) => p.lambda,
            ModelSpec::SeirsDemography(p) | ModelSpec::SeirsConstant(p) => p.lambda,
            ModelSpec::SirDemography(p) => p.lambda,
            other => other.family().map_or(0.0, |f| f.lambda),
        };
        lambda / self.population as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(invalid("replica count must be at least 1"));
        }
        if self.population == 0 {
            return Err(invalid("population must be at least 1"));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid("horizon must be positive"));
        }
        self.model.validate()
    }

    /// One replica, using stream (master seed, index).
    pub fn run_one(&self, index: u64) -> Result<EpidemicOutcome> {
        let seed = SeedSpec::new(self.master_seed, index);
        match self.method {
            Method::Markov => {
                let model = self.model.compartmental()?;
                let init = self.markov_initial_state()?;
                let opts = MarkovOptions { horizon: self.horizon, event_cap: self.event_cap };
                markov_outcome(&model, &init, self.population as f64, self.pair_rate(), &opts, seed, self.take_off_threshold)
            }
            Method::Agent => {
                let p = self.epidemic_params()?;
                Ok(run_agent(&p, &mut seed.rng(), false, self.take_off_threshold)?.outcome)
            }
            Method::Sellke => {
                let p = self.epidemic_params()?;
                Ok(run_sellke(&p, &mut seed.rng(), false, self.take_off_threshold)?.1)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaOutcome {
    pub replica_index: u64,
    pub master_seed: u64,
    #[serde(flatten)]
    pub outcome: EpidemicOutcome,
}

/// Runs all replicas on `threads` workers (0 = rayon default). The result
/// is ordered by replica index and does not depend on the worker count.
pub fn run_replicas(job: &ReplicaJob, threads: usize) -> Result<Vec<ReplicaOutcome>> {
    job.validate()?;
    if matches!(job.method, Method::Agent | Method::Sellke) {
        job.epidemic_params()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..job.replicas as u64)
            .into_par_iter()
            .map(|i| {
                job.run_one(i).map(|outcome| ReplicaOutcome { replica_index: i, master_seed: job.master_seed, outcome })
            })
            .collect()
    })
}

/// Convenience: SIR/SEIR-family job from epidemic parameters.
pub fn family_job(params: &EpidemicParams, replicas: usize, master_seed: u64, method: Method) -> ReplicaJob {
    let family = FamilyParams { lambda: params.lambda, latent: params.latent, infectious: params.infectious };
    let model = if params.latent.is_zero() { ModelSpec::Sir(family) } else { ModelSpec::Seir(family) };
    let mut job = ReplicaJob::new(model, params.population, replicas, master_seed, method);
    job.initial_infectives = params.initial_infectives;
    job
}

pub fn write_jsonl<W: Write>(outcomes: &[ReplicaOutcome], mut w: W) -> Result<()> {
    for o in outcomes {
        serde_json::to_writer(&mut w, o)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ReplicaOutcome>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PeriodDistribution;

    fn sir_job(method: Method, replicas: usize) -> ReplicaJob {
        ReplicaJob::new(
            ModelSpec::Sir(FamilyParams {
                lambda: 1.5,
                latent: PeriodDistribution::zero(),
                infectious: PeriodDistribution::exponential(1.0).unwrap(),
            }),
            50,
            replicas,
            77,
            method,
        )
    }

    #[test]
    fn deterministic_across_thread_counts() {
        for method in [Method::Markov, Method::Agent, Method::Sellke] {
            let job = sir_job(method, 200);
            let a = run_replicas(&job, 1).unwrap();
            let b = run_replicas(&job, 8).unwrap();
            assert_eq!(a, b);
            let more = run_replicas(&sir_job(method, 400), 3).unwrap();
            assert_eq!(&more[..200], &a[..]);
            let mut other = job.clone();
            other.master_seed = 78;
            assert_ne!(run_replicas(&other, 2).unwrap(), a);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let out = run_replicas(&sir_job(Method::Sellke, 20), 2).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&out, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 20);
        assert_eq!(read_jsonl(&buf[..]).unwrap(), out);
    }

    #[test]
    fn rejects_empty_jobs_and_markov_only_models() {
        assert!(run_replicas(&sir_job(Method::Agent, 0), 1).is_err());
        let mut job = sir_job(Method::Agent, 5);
        job.model = ModelSpec::from_parts("SIS", &serde_json::json!({"lambda": 2.0, "gamma": 1.0})).unwrap();
        assert!(matches!(run_replicas(&job, 1), Err(Error::Unsupported(_))));
        job.method = Method::Markov;
        job.horizon = 50.0;
        assert_eq!(run_replicas(&job, 1).unwrap().len(), 5);
    }

    #[test]
    fn parses_methods() {
        assert_eq!("sellke".parse::<Method>().unwrap(), Method::Sellke);
        assert!("tau-leap".parse::<Method>().is_err());
    }
}
