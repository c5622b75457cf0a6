use epistoch::branching::{extinction_probability, OffspringLaw};
use epistoch::final_size::{exact_final_size_distribution, Precision};
use epistoch::fluct::{diffusion_simulate, propagate_covariance};
use epistoch::ldp::{path_cost, sis_quasipotential, ControlledPath};
use epistoch::model::{sir_model, sis_model};
use epistoch::stats::summarize;
use epistoch::{PeriodDistribution, SeedSpec};
use nalgebra::DMatrix;

#[test]
fn minor_outbreak_mass_approaches_extinction_probability() {
    let inf = PeriodDistribution::constant(1.0).unwrap();
    let q = extinction_probability(&OffspringLaw::mixed_poisson(1.5, inf).unwrap());
    let gaps: Vec<f64> = [200usize, 500, 1000]
        .iter()
        .map(|&n| {
            let pmf = exact_final_size_distribution(n, 1.5, &inf, Precision::HighPrecision).unwrap();
            assert!(pmf.mass_defect < 1e-30);
            let cut = (n as f64).sqrt().ceil() as usize;
            (pmf.mass_below(cut) - q).abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[2] < 5e-3, "{gaps:?}");
}

/// SIS path from `from` to `to` at constant speed, with the excess
/// recovery flux carrying the descent.
fn sis_ramp(lambda: f64, from: f64, to: f64, duration: f64, steps: usize) -> ControlledPath {
    let v = (from - to) / duration;
    let dt = duration / steps as f64;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let states: Vec<Vec<f64>> = grid.iter().map(|t| vec![from - v * t]).collect();
    let controls = states
        .iter()
        .map(|x| {
            let infection = lambda * x[0] * (1.0 - x[0]);
            vec![infection, infection + v]
        })
        .collect();
    ControlledPath { grid, states, controls }
}

#[test]
fn no_sis_escape_path_beats_the_quasi_potential() {
    let (lambda, gamma) = (2.0, 1.0);
    let model = sis_model(lambda, gamma);
    let v_bar = sis_quasipotential(lambda, gamma).unwrap().value;
    let from = 0.5 - 1e-3;
    for duration in [1.0, 5.0, 20.0, 80.0] {
        let cost = path_cost(&sis_ramp(lambda, from, 1e-3, duration, 20_000), &model).unwrap();
        assert!(cost >= v_bar - 1e-3, "duration {duration}: {cost} < {v_bar}");
    }
}

#[test]
fn diffusion_matches_linear_noise_variance() {
    let model = sir_model(1.5, 1.0);
    let n = 10_000.0;
    let init = [0.95, 0.05, 0.0];
    let (t, step, paths) = (3.0, 0.01, 4000);
    let cov = propagate_covariance(&model, &init, &DMatrix::zeros(3, 3), t, step).unwrap();
    let mean = cov.means.last().unwrap();
    let v = cov.covariances.last().unwrap();
    let ends: Vec<Vec<f64>> = (0..paths)
        .map(|r| diffusion_simulate(&model, n, &init, t, step, SeedSpec::new(13, r)).unwrap().final_value().to_vec())
        .collect();
    for c in 0..3 {
        let s = summarize(ends.iter().map(|x| n.sqrt() * (x[c] - mean[c])));
        let predicted = v[(c, c)];
        assert!((s.sd * s.sd / predicted - 1.0).abs() < 0.12, "compartment {c}: {} vs {predicted}", s.sd * s.sd);
        assert!(s.mean.abs() < 4.0 * s.se + 0.05, "compartment {c}: mean deviation {}", s.mean);
    }
}
