//! Next-jump simulation of density-dependent Markov jump processes.

use std::ops::ControlFlow;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::outcome::{take_off_threshold, EpidemicOutcome, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::model::CompartmentalModel;
use crate::rng::SeedSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovOptions {
    pub horizon: f64,
    /// Abort after this many events; `None` means 50·N.
    pub event_cap: Option<usize>,
}

impl MarkovOptions {
    pub fn until(horizon: f64) -> Self {
        MarkovOptions { horizon, event_cap: None }
    }

    pub fn with_event_cap(mut self, cap: usize) -> Self {
        self.event_cap = Some(cap);
        self
    }

    fn cap(&self, n: f64) -> usize {
        self.event_cap.unwrap_or((50.0 * n).ceil() as usize)
    }
}

/// Runs the jump chain: holding time Exp(Σ_j Nβ_j), jump j with
/// probability ∝ Nβ_j. Calls `observe(t, j, state)` after every jump and
/// returns the stopping time (horizon, time of absorption, or the jump at
/// which `observe` broke off).
pub fn run_markov<R: Rng + ?Sized, F: FnMut(f64, usize, &[i64]) -> ControlFlow<()>>(
    model: &CompartmentalModel,
    initial: &[i64],
    n: f64,
    opts: &MarkovOptions,
    rng: &mut R,
    mut observe: F,
) -> Result<f64> {
    let d = model.dimension();
    if initial.len() != d {
        return Err(invalid(format!("initial state has {} components, model has {d}", initial.len())));
    }
    if initial.iter().any(|&x| x < 0) {
        return Err(invalid("initial state must be componentwise non-negative"));
    }
    if !(n > 0.0) {
        return Err(invalid("scale N must be positive"));
    }
    let cap = opts.cap(n);
    let m = model.n_transitions();
    let mut x = initial.to_vec();
    let mut z = vec![0.0; d];
    let mut rates = vec![0.0; m];
    let mut t = 0.0;
    let mut events = 0usize;
    loop {
        for (zi, &xi) in z.iter_mut().zip(&x) {
            *zi = xi as f64 / n;
        }
        model.rates_into(t, &z, &mut rates);
        let mut total = 0.0;
        for (j, r) in rates.iter_mut().enumerate() {
            if !(r.is_finite() && *r >= 0.0) {
                return Err(Error::NegativeRate { index: j, value: *r });
            }
            *r *= n;
            total += *r;
        }
        if total == 0.0 {
            return Ok(t);
        }
        let e: f64 = rng.sample(Exp1);
        let next = t + e / total;
        if next > opts.horizon {
            return Ok(opts.horizon);
        }
        let mut u = rng.random::<f64>() * total;
        let mut j = 0;
        while j + 1 < m && (u >= rates[j] || rates[j] == 0.0) {
            u -= rates[j];
            j += 1;
        }
        // Guard against rounding landing on a zero-rate tail.
        while rates[j] == 0.0 {
            j -= 1;
        }
        for (xi, &h) in x.iter_mut().zip(model.jump(j)) {
            *xi += h;
        }
        t = next;
        events += 1;
        if events > cap {
            return Err(Error::EventCapExceeded { cap });
        }
        if observe(t, j, &x).is_break() {
            return Ok(t);
        }
    }
}

/// Full sample path of the process started from `initial` counts at
/// scale `n`.
pub fn simulate_markov(
    model: &CompartmentalModel,
    initial: &[i64],
    n: f64,
    opts: &MarkovOptions,
    seed: SeedSpec,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new(model.compartments().to_vec(), 0.0, initial.to_vec());
    let mut rng = seed.rng();
    run_markov(model, initial, n, opts, &mut rng, |t, j, x| {
        traj.push(t, j, x);
        ControlFlow::Continue(())
    })?;
    Ok(traj)
}

/// Outcome of one run without storing the path. Infected compartments are
/// those named `E` and `I`; infections are transitions whose label starts
/// with `infection`. `pair_rate` is λ/N, used for the total pressure.
pub fn markov_outcome(
    model: &CompartmentalModel,
    initial: &[i64],
    n: f64,
    pair_rate: f64,
    opts: &MarkovOptions,
    seed: SeedSpec,
    threshold: Option<usize>,
) -> Result<EpidemicOutcome> {
    let names = model.compartments();
    let i_idx = names.iter().position(|c| c == "I");
    let e_idx = names.iter().position(|c| c == "E");
    let infections: Vec<bool> = model.transitions().iter().map(|t| t.label.starts_with("infection")).collect();
    let infected = |x: &[i64]| i_idx.map_or(0, |i| x[i]) + e_idx.map_or(0, |e| x[e]);
    let infectives = |x: &[i64]| i_idx.map_or(0, |i| x[i]);

    let mut final_size = 0usize;
    let mut integral = 0.0;
    let mut last_t = 0.0;
    let mut last_i = infectives(initial);
    let mut peak = last_i.max(0) as usize;
    let mut extinction = if infected(initial) == 0 { Some(0.0) } else { None };
    let mut rng = seed.rng();
    let end = run_markov(model, initial, n, opts, &mut rng, |t, j, x| {
        integral += last_i as f64 * (t - last_t);
        last_t = t;
        last_i = infectives(x);
        peak = peak.max(last_i as usize);
        if infections[j] {
            final_size += 1;
        }
        if extinction.is_none() && infected(x) == 0 {
            extinction = Some(t);
        }
        ControlFlow::Continue(())
    })?;
    let censored = extinction.is_none();
    if censored {
        integral += last_i as f64 * (end - last_t);
    }
    let threshold = threshold.unwrap_or_else(|| take_off_threshold(n.round() as usize));
    Ok(EpidemicOutcome {
        final_size,
        total_pressure: pair_rate * integral,
        extinction_time: extinction.unwrap_or(end),
        peak_infectives: peak,
        took_off: final_size >= threshold,
        censored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sir_model, sis_model};

    #[test]
    fn absorbed_without_infectives() {
        let m = sis_model(2.0, 1.0);
        let traj = simulate_markov(&m, &[0], 100.0, &MarkovOptions::until(10.0), SeedSpec::new(1, 0)).unwrap();
        assert_eq!(traj.n_events(), 0);
        assert_eq!(traj.times, vec![0.0]);
    }

    #[test]
    fn sir_paths_respect_invariants() {
        let m = sir_model(1.5, 1.0);
        for rep in 0..20 {
            let traj =
                simulate_markov(&m, &[200, 1, 0], 200.0, &MarkovOptions::until(1e9), SeedSpec::new(5, rep)).unwrap();
            for k in 0..traj.n_events() {
                assert!(traj.times[k + 1] > traj.times[k]);
                let h = m.jump(traj.jump_ids[k]);
                for c in 0..3 {
                    assert_eq!(traj.states[k + 1][c] - traj.states[k][c], h[c]);
                }
                assert!(traj.states[k + 1][0] <= traj.states[k][0]);
                assert!(traj.states[k + 1][2] >= traj.states[k][2]);
            }
            for s in &traj.states {
                assert!(s.iter().all(|&x| x >= 0));
                assert_eq!(s.iter().sum::<i64>(), 201);
            }
            assert_eq!(traj.final_state()[1], 0);
        }
    }

    #[test]
    fn outcome_agrees_with_path() {
        let m = sir_model(1.8, 1.0);
        for rep in 0..10 {
            let seed = SeedSpec::new(9, rep);
            let opts = MarkovOptions::until(1e9);
            let traj = simulate_markov(&m, &[100, 1, 0], 100.0, &opts, seed).unwrap();
            let o = markov_outcome(&m, &[100, 1, 0], 100.0, 0.018, &opts, seed, None).unwrap();
            assert_eq!(o.final_size as i64, 100 - traj.final_state()[0]);
            assert_eq!(o.extinction_time, *traj.times.last().unwrap());
            let mut integral = 0.0;
            for k in 0..traj.n_events() {
                integral += traj.states[k][1] as f64 * (traj.times[k + 1] - traj.times[k]);
            }
            assert!((o.total_pressure - 0.018 * integral).abs() < 1e-9);
            assert!(!o.censored);
        }
    }

    #[test]
    fn rejects_bad_rates_and_caps() {
        let bad = CompartmentalModel::new(
            "bad",
            vec!["X".into()],
            vec![crate::model::Transition {
                label: "down".into(),
                jump: vec![-1],
                rate: std::sync::Arc::new(|_, z: &[f64]| z[0] - 2.0),
            }],
        )
        .unwrap();
        let r = simulate_markov(&bad, &[1], 1.0, &MarkovOptions::until(1.0), SeedSpec::new(0, 0));
        assert!(matches!(r, Err(Error::NegativeRate { index: 0, .. })));

        let m = sis_model(3.0, 1.0);
        let r = simulate_markov(&m, &[50], 100.0, &MarkovOptions::until(1e9).with_event_cap(100), SeedSpec::new(0, 0));
        assert!(matches!(r, Err(Error::EventCapExceeded { cap: 100 })));
    }

    #[test]
    fn horizon_censors() {
        let m = sis_model(3.0, 1.0);
        let o = markov_outcome(&m, &[50], 100.0, 0.03, &MarkovOptions::until(5.0), SeedSpec::new(0, 0), None).unwrap();
        assert!(o.censored);
        assert_eq!(o.extinction_time, 5.0);
    }
}
