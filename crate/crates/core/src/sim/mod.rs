//! Exact stochastic simulation: next-jump for Markov compartmental
//! models, event-driven individual-based SEIR, and the Sellke
//! construction.

mod agent;
mod markov;
mod outcome;
mod replicas;

pub use agent::{
    run_agent, run_sellke, seir_names, simulate_seir_general, simulate_sellke, AgentRun, JUMP_EXPOSED,
    JUMP_INFECTED_DIRECT, JUMP_INFECTIOUS, JUMP_RECOVERED, SEIR_JUMPS,
};
pub use markov::{markov_outcome, run_markov, simulate_markov, MarkovOptions};
pub use outcome::{take_off_threshold, wald_statistic, EpidemicOutcome, Trajectory};
pub use replicas::{family_job, read_jsonl, run_replicas, write_jsonl, Method, ReplicaJob, ReplicaOutcome};
