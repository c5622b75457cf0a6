use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EpidemicParams;
use crate::stats::{summarize, Summary};

/// A sample path stored as unrescaled counts. `states[0]` is the state at
/// `times[0]`; event `k` moves `states[k]` to `states[k + 1]` at
/// `times[k + 1]` through jump `jump_ids[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub compartments: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<i64>>,
    pub jump_ids: Vec<usize>,
}

impl Trajectory {
    pub fn new(compartments: Vec<String>, t0: f64, initial: Vec<i64>) -> Self {
        Trajectory {
            compartments,
            times: vec![t0],
            states: vec![initial],
            jump_ids: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, t: f64, jump: usize, state: &[i64]) {
        self.times.push(t);
        self.states.push(state.to_vec());
        self.jump_ids.push(jump);
    }

    pub fn n_events(&self) -> usize {
        self.jump_ids.len()
    }

    pub fn final_state(&self) -> &[i64] {
        self.states.last().expect("trajectory has an initial state")
    }

    /// State in force at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> &[i64] {
        let k = self.times.partition_point(|&s| s <= t);
        &self.states[k.saturating_sub(1)]
    }

    pub fn compartment(&self, name: &str) -> Option<usize> {
        self.compartments.iter().position(|c| c == name)
    }

    /// Columns: time, jump_id (empty on the initial row), compartments.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "time,jump_id")?;
        for c in &self.compartments {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for (k, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            write!(w, "{t:.17e},")?;
            if k > 0 {
                write!(w, "{}", self.jump_ids[k - 1])?;
            }
            for x in s {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Per-run summary of an outbreak.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpidemicOutcome {
    /// Infections among the initially susceptible (index cases excluded).
    pub final_size: usize,
    /// λ/N times the summed infectious periods of everyone ever infected.
    pub total_pressure: f64,
    /// Time at which no latent or infectious individuals remain.
    pub extinction_time: f64,
    pub peak_infectives: usize,
    pub took_off: bool,
    /// The run hit its time horizon before extinction; `extinction_time`
    /// then holds the horizon.
    #[serde(default)]
    pub censored: bool,
}

/// Default major-outbreak cut: max(20, ⌈√N⌉).
pub fn take_off_threshold(population: usize) -> usize {
    let root = (population as f64).sqrt().ceil() as usize;
    root.max(20)
}

/// Monte Carlo mean of `e^{-θA} / ψ_I(-θλ/N)^{k+Z}`, which has
/// expectation one (k is the number of index cases).
pub fn wald_statistic(outcomes: &[EpidemicOutcome], theta: f64, params: &EpidemicParams) -> Result<Summary> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(crate::error::invalid(format!("theta must be non-negative, got {theta}")));
    }
    let ln_psi = params.infectious.laplace(theta * params.pair_rate()).ln();
    let k = params.initial_infectives as f64;
    Ok(summarize(outcomes.iter().map(|o| {
        (-theta * o.total_pressure - (k + o.final_size as f64) * ln_psi).exp()
    })))
}
