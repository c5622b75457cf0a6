//! Monte Carlo experiments that confront the simulators with the limit
//! theorems. Each returns the raw statistics; pass/fail thresholds are the
//! caller's business.

use std::ops::ControlFlow;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::final_size::{exact_final_size_distribution, Precision};
use crate::fluct::propagate_covariance;
use crate::model::{CompartmentalModel, EpidemicParams, ModelSpec, SisParams};
use crate::ode::{integrate, OdePath};
use crate::rng::SeedSpec;
use crate::sim::{family_job, run_markov, run_replicas, wald_statistic, MarkovOptions, Method, ReplicaJob};
use crate::stats::{
    chi_square_gof, chi_square_two_sample, histogram, ks_two_sample, linear_regression, summarize, ChiSquareTest,
    KsTest, LinearFit, Summary,
};

fn par_map<T, F>(threads: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
    pool.install(|| (0..count as u64).into_par_iter().map(f).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldCheck {
    pub theta: f64,
    pub statistic: Summary,
}

/// Monte Carlo mean of the Wald martingale at each θ.
pub fn wald_experiment(
    params: &EpidemicParams,
    thetas: &[f64],
    replicas: usize,
    master_seed: u64,
    method: Method,
    threads: usize,
) -> Result<Vec<WaldCheck>> {
    let outcomes: Vec<_> = run_replicas(&family_job(params, replicas, master_seed, method), threads)?
        .into_iter()
        .map(|o| o.outcome)
        .collect();
    thetas
        .iter()
        .map(|&theta| Ok(WaldCheck { theta, statistic: wald_statistic(&outcomes, theta, params)? }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub sellke_seed: u64,
    pub agent_seed: u64,
    pub sellke_final_size: Summary,
    pub agent_final_size: Summary,
    pub final_size_chi_square: ChiSquareTest,
    pub pressure_ks: KsTest,
}

/// Final sizes and total pressures from the Sellke and agent simulators,
/// on distinct master seeds.
pub fn sellke_vs_agent(params: &EpidemicParams, replicas: usize, master_seed: u64, threads: usize) -> Result<TwoSampleReport> {
    let agent_seed = master_seed.wrapping_add(1);
    let s = run_replicas(&family_job(params, replicas, master_seed, Method::Sellke), threads)?;
    let a = run_replicas(&family_job(params, replicas, agent_seed, Method::Agent), threads)?;
    let n = params.population;
    let hs = histogram(s.iter().map(|o| o.outcome.final_size), n);
    let ha = histogram(a.iter().map(|o| o.outcome.final_size), n);
    let ps: Vec<f64> = s.iter().map(|o| o.outcome.total_pressure).collect();
    let pa: Vec<f64> = a.iter().map(|o| o.outcome.total_pressure).collect();
    Ok(TwoSampleReport {
        sellke_seed: master_seed,
        agent_seed,
        sellke_final_size: summarize(s.iter().map(|o| o.outcome.final_size as f64)),
        agent_final_size: summarize(a.iter().map(|o| o.outcome.final_size as f64)),
        final_size_chi_square: chi_square_two_sample(&hs, &ha, 5),
        pressure_ks: ks_two_sample(&ps, &pa),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactFitReport {
    pub method: Method,
    pub replicas: usize,
    pub observed: Vec<u64>,
    pub expected_probs: Vec<f64>,
    pub chi_square: ChiSquareTest,
}

/// Goodness of fit of simulated final sizes to the exact law (one index
/// case).
pub fn final_size_fit(
    params: &EpidemicParams,
    method: Method,
    replicas: usize,
    master_seed: u64,
    threads: usize,
) -> Result<ExactFitReport> {
    if params.initial_infectives != 1 {
        return Err(invalid("the exact final-size law assumes one index case"));
    }
    let n = params.population;
    let pmf = exact_final_size_distribution(n, params.lambda, &params.infectious, Precision::Auto)?;
    let out = run_replicas(&family_job(params, replicas, master_seed, method), threads)?;
    let observed = histogram(out.iter().map(|o| o.outcome.final_size), n);
    Ok(ExactFitReport {
        method,
        replicas,
        chi_square: chi_square_gof(&observed, &pmf.probs, 5.0),
        observed,
        expected_probs: pmf.probs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnConfig {
    pub population: usize,
    pub initial: Vec<i64>,
    /// Paths are aligned at the first time this compartment reaches
    /// `sync_fraction · N`.
    pub sync_compartment: usize,
    pub sync_fraction: f64,
    /// Length of the comparison window after synchronisation.
    pub horizon: f64,
    pub step: f64,
    /// Per-compartment divisor applied to the scaled state before taking
    /// distances (1 for plain fractions).
    pub scale: Vec<f64>,
    pub replicas: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    pub replicas: usize,
    pub synchronized: usize,
    /// Sup-distance of each synchronised replica, in replica order.
    pub sup_distances: Vec<f64>,
    pub max_sup_distance: f64,
}

impl LlnReport {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.synchronized == 0 {
            return 0.0;
        }
        self.sup_distances.iter().filter(|&&d| d < tol).count() as f64 / self.synchronized as f64
    }
}

fn distance(x: &[i64], n: f64, z: &[f64], scale: &[f64]) -> f64 {
    x.iter()
        .zip(z)
        .zip(scale)
        .map(|((&xi, &zi), &s)| ((xi as f64 / n - zi) / s).abs())
        .fold(0.0, f64::max)
}

/// Sup over the window of |X(τ+s)/N − z(s)|, with z the ODE solution
/// started from X(τ)/N. `None` when the path never reaches the
/// synchronisation level.
pub fn lln_sup_distance(model: &CompartmentalModel, cfg: &LlnConfig, index: u64) -> Result<Option<f64>> {
    let n = cfg.population as f64;
    let level = cfg.sync_fraction * n;
    let mut rng = SeedSpec::new(cfg.master_seed, index).rng();
    let mut sync: Option<(f64, OdePath)> = None;
    let mut failure = None;
    let mut prev = cfg.initial.clone();
    let mut sup: f64 = 0.0;
    let mut last_t = 0.0;
    let start = |x: &[i64]| -> Result<OdePath> {
        let z0: Vec<f64> = x.iter().map(|&v| v as f64 / n).collect();
        integrate(model, &z0, cfg.horizon, cfg.step)
    };
    if cfg.initial[cfg.sync_compartment] as f64 >= level {
        sync = Some((0.0, start(&cfg.initial)?));
    }
    let opts = MarkovOptions { horizon: f64::INFINITY, event_cap: Some(usize::MAX) };
    run_markov(model, &cfg.initial, n, &opts, &mut rng, |t, _, x| {
        last_t = t;
        match &sync {
            None => {
                if x[cfg.sync_compartment] as f64 >= level {
                    match start(x) {
                        Ok(path) => sync = Some((t, path)),
                        Err(e) => {
                            failure = Some(e);
                            return ControlFlow::Break(());
                        }
                    }
                }
            }
            Some((tau, path)) => {
                let s = t - tau;
                if s > cfg.horizon {
                    sup = sup.max(distance(&prev, n, path.final_value(), &cfg.scale));
                    return ControlFlow::Break(());
                }
                let z = path.value_at(s);
                sup = sup.max(distance(&prev, n, &z, &cfg.scale)).max(distance(x, n, &z, &cfg.scale));
            }
        }
        prev.copy_from_slice(x);
        ControlFlow::Continue(())
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let Some((tau, path)) = sync else { return Ok(None) };
    // Absorbed inside the window: the state stays frozen while z moves on.
    if last_t - tau <= cfg.horizon {
        for (g, z) in path.grid.iter().zip(&path.values) {
            if *g >= last_t - tau {
                sup = sup.max(distance(&prev, n, z, &cfg.scale));
            }
        }
    }
    Ok(Some(sup))
}

pub fn lln_experiment(model: &CompartmentalModel, cfg: &LlnConfig, threads: usize) -> Result<LlnReport> {
    let d = model.dimension();
    if cfg.initial.len() != d || cfg.scale.len() != d || cfg.sync_compartment >= d {
        return Err(invalid("dimension mismatch in the LLN configuration"));
    }
    let runs = par_map(threads, cfg.replicas, |i| lln_sup_distance(model, cfg, i))?;
    let sup_distances: Vec<f64> = runs.into_iter().flatten().collect();
    Ok(LlnReport {
        replicas: cfg.replicas,
        synchronized: sup_distances.len(),
        max_sup_distance: sup_distances.iter().copied().fold(0.0, f64::max),
        sup_distances,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub population: usize,
    pub initial: Vec<i64>,
    pub time: f64,
    pub step: f64,
    pub replicas: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub time: f64,
    pub compartments: Vec<String>,
    pub mean_path: Vec<f64>,
    /// Empirical mean and variance of √N (X_t/N − z_t).
    pub empirical_mean: Vec<f64>,
    pub empirical_variance: Vec<f64>,
    /// Diagonal of V(t) from the covariance ODE with V(0) = 0.
    pub predicted_variance: Vec<f64>,
}

impl CltReport {
    /// |empirical/predicted − 1| per compartment (NaN where V(t) vanishes).
    pub fn relative_errors(&self) -> Vec<f64> {
        self.empirical_variance
            .iter()
            .zip(&self.predicted_variance)
            .map(|(e, p)| if *p > 1e-12 { (e / p - 1.0).abs() } else { f64::NAN })
            .collect()
    }
}

pub fn clt_experiment(model: &CompartmentalModel, cfg: &CltConfig, threads: usize) -> Result<CltReport> {
    let d = model.dimension();
    if cfg.initial.len() != d {
        return Err(invalid("dimension mismatch in the CLT configuration"));
    }
    let n = cfg.population as f64;
    let z0: Vec<f64> = cfg.initial.iter().map(|&v| v as f64 / n).collect();
    let path = propagate_covariance(model, &z0, &DMatrix::zeros(d, d), cfg.time, cfg.step)?;
    let z = path.means.last().expect("non-empty path").clone();
    let v = path.covariances.last().expect("non-empty path");
    let opts = MarkovOptions { horizon: cfg.time, event_cap: Some(usize::MAX) };
    let devs = par_map(threads, cfg.replicas, |i| {
        let mut x = cfg.initial.clone();
        run_markov(model, &cfg.initial, n, &opts, &mut SeedSpec::new(cfg.master_seed, i).rng(), |_, _, s| {
            x.copy_from_slice(s);
            ControlFlow::Continue(())
        })?;
        Ok(x.iter().zip(&z).map(|(&xi, zi)| n.sqrt() * (xi as f64 / n - zi)).collect::<Vec<f64>>())
    })?;
    let mut empirical_mean = Vec::with_capacity(d);
    let mut empirical_variance = Vec::with_capacity(d);
    for c in 0..d {
        let s = summarize(devs.iter().map(|x| x[c]));
        empirical_mean.push(s.mean);
        empirical_variance.push(s.sd * s.sd);
    }
    Ok(CltReport {
        time: cfg.time,
        compartments: model.compartments().to_vec(),
        mean_path: z,
        empirical_mean,
        empirical_variance,
        predicted_variance: (0..d).map(|c| v[(c, c)]).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub populations: Vec<usize>,
    /// Per population: summary of the quantity being regressed.
    pub summaries: Vec<Summary>,
    pub fit: LinearFit,
}

/// Mean SIS extinction time from ⌈N x*⌉ infectives, regressed as
/// log(mean) on N.
pub fn sis_extinction_scaling(
    params: SisParams,
    populations: &[usize],
    replicas: usize,
    master_seed: u64,
    threads: usize,
) -> Result<ScalingReport> {
    let x_star = 1.0 - params.gamma / params.lambda;
    if !(x_star > 0.0) {
        return Err(Error::Subcritical(params.lambda / params.gamma));
    }
    let mut summaries = Vec::new();
    for (k, &n) in populations.iter().enumerate() {
        let mut job = ReplicaJob::new(ModelSpec::Sis(params), n, replicas, master_seed.wrapping_add(k as u64), Method::Markov);
        job.initial_state = Some(vec![(n as f64 * x_star).ceil() as i64]);
        job.event_cap = Some(usize::MAX);
        let out = run_replicas(&job, threads)?;
        summaries.push(summarize(out.iter().map(|o| o.outcome.extinction_time)));
    }
    let x: Vec<f64> = populations.iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = summaries.iter().map(|s| s.mean.ln()).collect();
    Ok(ScalingReport { populations: populations.to_vec(), fit: linear_regression(&x, &y), summaries })
}

/// Mean duration of Markov SIR outbreaks that take off, regressed on
/// log N.
pub fn sir_duration_scaling(
    lambda: f64,
    gamma: f64,
    populations: &[usize],
    replicas: usize,
    master_seed: u64,
    threads: usize,
) -> Result<ScalingReport> {
    let infectious = crate::model::PeriodDistribution::exponential(gamma)?;
    let mut summaries = Vec::new();
    for (k, &n) in populations.iter().enumerate() {
        let params = EpidemicParams::sir(lambda, infectious, n)?;
        let job = family_job(&params, replicas, master_seed.wrapping_add(k as u64), Method::Markov);
        let out = run_replicas(&job, threads)?;
        let s = summarize(out.iter().filter(|o| o.outcome.took_off).map(|o| o.outcome.extinction_time));
        if s.count < 2 {
            return Err(Error::EmptyOutcomes);
        }
        summaries.push(s);
    }
    let x: Vec<f64> = populations.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    Ok(ScalingReport { populations: populations.to_vec(), fit: linear_regression(&x, &y), summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sir_model, PeriodDistribution};

    #[test]
    fn lln_distances_shrink_with_population() {
        let model = sir_model(1.5, 1.0);
        let mean_sup = |n: usize| {
            let cfg = LlnConfig {
                population: n,
                initial: vec![n as i64, 1, 0],
                sync_compartment: 1,
                sync_fraction: 0.01,
                horizon: 30.0,
                step: 0.01,
                scale: vec![1.0; 3],
                replicas: 40,
                master_seed: 3,
            };
            let r = lln_experiment(&model, &cfg, 1).unwrap();
            assert!(r.synchronized > 5);
            r.sup_distances.iter().sum::<f64>() / r.synchronized as f64
        };
        let (small, large) = (mean_sup(1000), mean_sup(16000));
        // Fluctuations are O(N^{-1/2}): a 16-fold population should cut
        // them roughly fourfold.
        assert!(large < small / 2.5, "{small} vs {large}");
    }

    #[test]
    fn clt_report_shapes_and_rough_agreement() {
        let model = sir_model(1.5, 1.0);
        let cfg = CltConfig { population: 2000, initial: vec![1900, 100, 0], time: 2.0, step: 0.01, replicas: 2000, master_seed: 9 };
        let r = clt_experiment(&model, &cfg, 1).unwrap();
        assert_eq!(r.compartments.len(), 3);
        for e in r.relative_errors() {
            assert!(e < 0.15, "{e}");
        }
    }

    #[test]
    fn wald_mean_near_one() {
        let p = EpidemicParams::sir(1.2, PeriodDistribution::gamma(2, 0.5).unwrap(), 15).unwrap();
        for c in wald_experiment(&p, &[0.5, 1.5], 20_000, 4, Method::Sellke, 1).unwrap() {
            assert!((c.statistic.mean - 1.0).abs() < 4.0 * c.statistic.se, "{c:?}");
        }
    }

    #[test]
    fn exact_fit_requires_single_index_case() {
        let p = EpidemicParams::sir(1.2, PeriodDistribution::constant(1.0).unwrap(), 8)
            .unwrap()
            .with_initial_infectives(2)
            .unwrap();
        assert!(final_size_fit(&p, Method::Sellke, 10, 1, 1).is_err());
    }
}
