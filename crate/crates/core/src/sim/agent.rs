//! Event-driven simulation of the stochastic SEIR epidemic with general
//! latent and infectious periods, and the Sellke construction of the same
//! process.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::Exp1;

use super::outcome::{take_off_threshold, EpidemicOutcome, Trajectory};
use crate::error::Result;
use crate::model::EpidemicParams;
use crate::rng::SeedSpec;

/// Jump ids shared by both simulators, on compartments (S, E, I, R).
pub const JUMP_EXPOSED: usize = 0;
pub const JUMP_INFECTIOUS: usize = 1;
pub const JUMP_RECOVERED: usize = 2;
/// Infection straight into I when the latent period is zero.
pub const JUMP_INFECTED_DIRECT: usize = 3;

pub const SEIR_JUMPS: [[i64; 4]; 4] = [[-1, 1, 0, 0], [0, -1, 1, 0], [0, 0, -1, 1], [-1, 0, 1, 0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    LatentEnd,
    Recovery,
    Contact,
}

/// Min-heap entry ordered by (time, kind, individual).
#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    kind: Kind,
    who: usize,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    fn cmp(&self, o: &Self) -> Ordering {
        o.time
            .total_cmp(&self.time)
            .then_with(|| o.kind.cmp(&self.kind))
            .then_with(|| o.who.cmp(&self.who))
    }
}

/// Result of one agent-based run.
#[derive(Clone, Debug)]
pub struct AgentRun {
    pub trajectory: Option<Trajectory>,
    pub outcome: EpidemicOutcome,
    /// Targets of all contacts in time order (individual ids; index cases
    /// are `0..k`, susceptibles `k..k+N`). Only kept when recording.
    pub contacts: Vec<usize>,
}

struct Counts {
    x: [i64; 4],
    peak: i64,
    traj: Option<Trajectory>,
}

impl Counts {
    fn new(n: usize, record: bool) -> Self {
        Counts { x: [n as i64, 0, 0, 0], peak: 0, traj: record.then(|| Trajectory::new(seir_names(), 0.0, vec![])) }
    }

    fn start(&mut self) {
        self.peak = self.x[2];
        if let Some(t) = self.traj.as_mut() {
            t.states[0] = self.x.to_vec();
        }
    }

    fn apply(&mut self, t: f64, jump: usize) {
        for (c, h) in self.x.iter_mut().zip(SEIR_JUMPS[jump]) {
            *c += h;
        }
        self.peak = self.peak.max(self.x[2]);
        if let Some(traj) = self.traj.as_mut() {
            traj.push(t, jump, &self.x);
        }
    }
}

pub fn seir_names() -> Vec<String> {
    ["S", "E", "I", "R"].iter().map(|s| s.to_string()).collect()
}

fn finish(params: &EpidemicParams, counts: Counts, pressure_sum: f64, end: f64, threshold: Option<usize>) -> (Option<Trajectory>, EpidemicOutcome) {
    let final_size = params.population - counts.x[0] as usize;
    let threshold = threshold.unwrap_or_else(|| take_off_threshold(params.population));
    (
        counts.traj,
        EpidemicOutcome {
            final_size,
            total_pressure: params.pair_rate() * pressure_sum,
            extinction_time: end,
            peak_infectives: counts.peak as usize,
            took_off: final_size >= threshold,
            censored: false,
        },
    )
}

/// Individual-based simulation: every infective draws its latent and
/// infectious periods and makes contacts at rate λ, each with an
/// individual chosen uniformly among the N initially susceptible. Contacts
/// with non-susceptibles have no effect.
pub fn run_agent<R: Rng + ?Sized>(params: &EpidemicParams, rng: &mut R, record: bool, threshold: Option<usize>) -> Result<AgentRun> {
    params.validate()?;
    let n = params.population;
    let k = params.initial_infectives;
    let lambda = params.lambda;
    let mut status = vec![0u8; n + k]; // 0 S, 1 E, 2 I, 3 R
    let mut recovery_at = vec![0.0f64; n + k];
    let mut heap = BinaryHeap::new();
    let mut counts = Counts::new(n, record);
    let mut contacts = Vec::new();
    let mut pressure_sum = 0.0;

    let become_infectious = |who: usize,
                                 t: f64,
                                 rng: &mut R,
                                 heap: &mut BinaryHeap<Event>,
                                 recovery_at: &mut [f64],
                                 pressure_sum: &mut f64| {
        let i = params.infectious.sample(rng);
        *pressure_sum += i;
        recovery_at[who] = t + i;
        heap.push(Event { time: t + i, kind: Kind::Recovery, who });
        let e: f64 = rng.sample(Exp1);
        let first = t + e / lambda;
        if first < t + i {
            heap.push(Event { time: first, kind: Kind::Contact, who });
        }
    };

    for who in 0..k {
        let l = params.latent.sample(rng);
        if l == 0.0 {
            status[who] = 2;
            counts.x[2] += 1;
            become_infectious(who, 0.0, rng, &mut heap, &mut recovery_at, &mut pressure_sum);
        } else {
            status[who] = 1;
            counts.x[1] += 1;
            heap.push(Event { time: l, kind: Kind::LatentEnd, who });
        }
    }
    counts.start();

    let mut end = 0.0;
    while let Some(ev) = heap.pop() {
        let t = ev.time;
        match ev.kind {
            Kind::LatentEnd => {
                status[ev.who] = 2;
                counts.apply(t, JUMP_INFECTIOUS);
                become_infectious(ev.who, t, rng, &mut heap, &mut recovery_at, &mut pressure_sum);
            }
            Kind::Recovery => {
                status[ev.who] = 3;
                counts.apply(t, JUMP_RECOVERED);
                end = t;
            }
            Kind::Contact => {
                let target = k + rng.random_range(0..n);
                if record {
                    contacts.push(target);
                }
                if status[target] == 0 {
                    let l = params.latent.sample(rng);
                    if l == 0.0 {
                        status[target] = 2;
                        counts.apply(t, JUMP_INFECTED_DIRECT);
                        become_infectious(target, t, rng, &mut heap, &mut recovery_at, &mut pressure_sum);
                    } else {
                        status[target] = 1;
                        counts.apply(t, JUMP_EXPOSED);
                        heap.push(Event { time: t + l, kind: Kind::LatentEnd, who: target });
                    }
                }
                let e: f64 = rng.sample(Exp1);
                let next = t + e / lambda;
                if next < recovery_at[ev.who] {
                    heap.push(Event { time: next, kind: Kind::Contact, who: ev.who });
                }
            }
        }
    }
    let (trajectory, outcome) = finish(params, counts, pressure_sum, end, threshold);
    Ok(AgentRun { trajectory, outcome, contacts })
}

/// Agent-based run with its sample path.
pub fn simulate_seir_general(params: &EpidemicParams, seed: SeedSpec) -> Result<(Trajectory, EpidemicOutcome)> {
    let run = run_agent(params, &mut seed.rng(), true, None)?;
    Ok((run.trajectory.expect("recorded"), run.outcome))
}

/// Sellke construction: susceptibles carry Exp(1) resistance thresholds
/// and are infected, in increasing threshold order, when the cumulative
/// pressure Λ(t) = (λ/N) ∫₀ᵗ I(s) ds reaches them.
pub fn run_sellke<R: Rng + ?Sized>(
    params: &EpidemicParams,
    rng: &mut R,
    record: bool,
    threshold: Option<usize>,
) -> Result<(Option<Trajectory>, EpidemicOutcome)> {
    params.validate()?;
    let n = params.population;
    let k = params.initial_infectives;
    let pair = params.pair_rate();
    let mut heap = BinaryHeap::new();
    let mut counts = Counts::new(n, record);
    let mut pressure_sum = 0.0;
    let mut next_id = 0usize;

    let mut infect = |t: f64, rng: &mut R, heap: &mut BinaryHeap<Event>, counts: &mut Counts, initial: bool| -> f64 {
        let who = next_id;
        next_id += 1;
        let l = params.latent.sample(rng);
        if l == 0.0 {
            let i = params.infectious.sample(rng);
            heap.push(Event { time: t + i, kind: Kind::Recovery, who });
            if initial {
                counts.x[2] += 1;
            } else {
                counts.apply(t, JUMP_INFECTED_DIRECT);
            }
            i
        } else {
            heap.push(Event { time: t + l, kind: Kind::LatentEnd, who });
            if initial {
                counts.x[1] += 1;
            } else {
                counts.apply(t, JUMP_EXPOSED);
            }
            0.0
        }
    };

    for _ in 0..k {
        pressure_sum += infect(0.0, rng, &mut heap, &mut counts, true);
    }
    counts.start();

    // Order statistics of N Exp(1) thresholds, generated lazily.
    let mut infected = 0usize;
    let mut next_q = if n > 0 {
        let e: f64 = rng.sample(Exp1);
        e / n as f64
    } else {
        f64::INFINITY
    };
    let mut t = 0.0;
    let mut pressure = 0.0;
    let mut end = 0.0;
    loop {
        let rate = pair * counts.x[2] as f64;
        let next_event = heap.peek().map_or(f64::INFINITY, |e: &Event| e.time);
        let hit = if infected < n && rate > 0.0 { t + (next_q - pressure) / rate } else { f64::INFINITY };
        if hit.is_infinite() && next_event.is_infinite() {
            break;
        }
        if hit < next_event {
            t = hit;
            pressure = next_q;
            pressure_sum += infect(t, rng, &mut heap, &mut counts, false);
            infected += 1;
            if infected < n {
                let e: f64 = rng.sample(Exp1);
                next_q += e / (n - infected) as f64;
            }
        } else {
            let ev = heap.pop().expect("finite event time");
            pressure += rate * (ev.time - t);
            t = ev.time;
            match ev.kind {
                Kind::LatentEnd => {
                    let i = params.infectious.sample(rng);
                    pressure_sum += i;
                    heap.push(Event { time: t + i, kind: Kind::Recovery, who: ev.who });
                    counts.apply(t, JUMP_INFECTIOUS);
                }
                Kind::Recovery => {
                    counts.apply(t, JUMP_RECOVERED);
                    end = t;
                }
                Kind::Contact => unreachable!("no contact events in the Sellke construction"),
            }
        }
    }
    Ok(finish(params, counts, pressure_sum, end, threshold))
}

/// Sellke run with its sample path.
pub fn simulate_sellke(params: &EpidemicParams, seed: SeedSpec) -> Result<(Trajectory, EpidemicOutcome)> {
    let (traj, outcome) = run_sellke(params, &mut seed.rng(), true, None)?;
    Ok((traj.expect("recorded"), outcome))
}
