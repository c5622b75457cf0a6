//! Deterministic (law of large numbers) dynamics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ross_model, CompartmentalModel, RossParams};

/// Default "small fraction" of initial infectives for ODE runs.
pub const DEFAULT_INIT_FRACTION: f64 = 1e-4;

const REGION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdePath {
    pub system: String,
    pub compartments: Vec<String>,
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl OdePath {
    pub fn final_value(&self) -> &[f64] {
        self.values.last().expect("path has an initial value")
    }

    /// Linear interpolation between grid nodes; clamped at the ends.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let k = self.grid.partition_point(|&s| s <= t);
        if k == 0 {
            return self.values[0].clone();
        }
        if k >= self.grid.len() {
            return self.final_value().to_vec();
        }
        let (t0, t1) = (self.grid[k - 1], self.grid[k]);
        let w = (t - t0) / (t1 - t0);
        self.values[k - 1].iter().zip(&self.values[k]).map(|(a, b)| a + w * (b - a)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "time")?;
        for c in &self.compartments {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            write!(w, "{t:.17e}")?;
            for x in v {
                write!(w, ",{x:.17e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn uniform_steps(horizon: f64, step: f64) -> Result<(usize, f64)> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(format!("step must be positive, got {step}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be non-negative, got {horizon}")));
    }
    let n = (horizon / step - 1e-9).ceil().max(0.0) as usize;
    Ok((n, if n == 0 { 0.0 } else { horizon / n as f64 }))
}

fn check_region(model: &CompartmentalModel, t: f64, z: &[f64], total0: f64) -> Result<()> {
    if let Some((c, v)) = z.iter().enumerate().find(|(_, &v)| !(v >= -REGION_TOL)) {
        return Err(Error::RegionViolation {
            time: t,
            detail: format!("{} = {v:e}", model.compartments()[c]),
        });
    }
    if model.is_closed() {
        let total: f64 = z.iter().sum();
        if (total - total0).abs() > REGION_TOL {
            return Err(Error::RegionViolation {
                time: t,
                detail: format!("total mass drifted from {total0} to {total}"),
            });
        }
    }
    Ok(())
}

/// Classical fourth-order Runge–Kutta on a uniform grid over
/// [0, horizon]; `step` is rounded down so the grid ends at the horizon.
/// For closed models mass is checked against the initial total.
pub fn integrate(model: &CompartmentalModel, init: &[f64], horizon: f64, step: f64) -> Result<OdePath> {
    let d = model.dimension();
    if init.len() != d {
        return Err(invalid(format!("initial state has {} components, model has {d}", init.len())));
    }
    let (n, h) = uniform_steps(horizon, step)?;
    let total0: f64 = init.iter().sum();
    check_region(model, 0.0, init, total0)?;
    let mut grid = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    grid.push(0.0);
    values.push(init.to_vec());
    let mut z = init.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for step_no in 0..n {
        let t = step_no as f64 * h;
        model.drift_into(t, &z, &mut k1);
        for c in 0..d {
            tmp[c] = z[c] + 0.5 * h * k1[c];
        }
        model.drift_into(t + 0.5 * h, &tmp, &mut k2);
        for c in 0..d {
            tmp[c] = z[c] + 0.5 * h * k2[c];
        }
        model.drift_into(t + 0.5 * h, &tmp, &mut k3);
        for c in 0..d {
            tmp[c] = z[c] + h * k3[c];
        }
        model.drift_into(t + h, &tmp, &mut k4);
        for c in 0..d {
            z[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        let t1 = if step_no + 1 == n { horizon } else { (step_no + 1) as f64 * h };
        check_region(model, t1, &z, total0)?;
        grid.push(t1);
        values.push(z.clone());
    }
    Ok(OdePath {
        system: model.name().to_string(),
        compartments: model.compartments().to_vec(),
        grid,
        values,
    })
}

/// Endemic level of the SIR model with demography.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndemicState {
    pub s_hat: f64,
    pub i_hat: f64,
    pub r_hat: f64,
}

/// (1/R₀, ε(1 − 1/R₀), rest), with ε = μ/(γ+μ).
pub fn endemic_equilibrium(r0: f64, eps: f64) -> Result<EndemicState> {
    if !(r0 > 1.0) {
        return Err(Error::Subcritical(r0));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    let s_hat = 1.0 / r0;
    let i_hat = eps * (1.0 - s_hat);
    Ok(EndemicState { s_hat, i_hat, r_hat: 1.0 - s_hat - i_hat })
}

/// Population size at which the endemic infective count sits three
/// standard deviations above zero: 9/(ε²(1 − 1/R₀)²R₀). Infinite when
/// R₀ ≤ 1.
pub fn critical_community_size(r0: f64, eps: f64) -> Result<f64> {
    critical_community_size_vaccinated(r0, eps, 0.0)
}

/// As [`critical_community_size`] with a fraction `v` of newborns
/// vaccinated: R₀ is replaced by (1−v)R₀ and ε by (1−v)ε.
pub fn critical_community_size_vaccinated(r0: f64, eps: f64, v: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(0.0..1.0).contains(&v) {
        return Err(invalid(format!("coverage must lie in [0, 1), got {v}")));
    }
    if !(r0 > 0.0) {
        return Err(invalid(format!("R0 must be positive, got {r0}")));
    }
    let rv = (1.0 - v) * r0;
    if rv <= 1.0 {
        return Ok(f64::INFINITY);
    }
    let w = 1.0 - v;
    Ok(9.0 / (w * w * eps * eps * (1.0 - 1.0 / rv).powi(2) * r0))
}

/// Ross's malaria system on (h, v): infected fractions of hosts and of
/// vectors.
pub fn ross_malaria_path(params: RossParams, init: [f64; 2], horizon: f64, step: f64) -> Result<OdePath> {
    params.validate()?;
    if !init.iter().all(|x| (0.0..=1.0).contains(x)) {
        return Err(invalid("initial fractions must lie in [0, 1]"));
    }
    // The catalogue model runs on w = V/N_H = m v.
    let model = ross_model(params);
    let mut path = integrate(&model, &[init[0], params.m * init[1]], horizon, step)?;
    for v in &mut path.values {
        v[1] /= params.m;
    }
    path.compartments = vec!["h".into(), "v".into()];
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::final_size::final_size_root;
    use crate::model::{seir_model, sir_demography_model, sir_model};

    #[test]
    fn disease_free_is_invariant() {
        let p = integrate(&sir_model(1.5, 1.0), &[1.0, 0.0, 0.0], 10.0, 0.01).unwrap();
        assert!(p.values.iter().all(|v| v == &vec![1.0, 0.0, 0.0]));
        assert_eq!(*p.grid.last().unwrap(), 10.0);
    }

    #[test]
    fn sir_final_size_matches_root() {
        let i0 = DEFAULT_INIT_FRACTION;
        let p = integrate(&sir_model(1.5, 1.0), &[1.0 - i0, i0, 0.0], 200.0, 0.01).unwrap();
        let s_inf = p.final_value()[0];
        // The ODE from a positive i(0) ends a little beyond z*.
        assert!((1.0 - s_inf - final_size_root(1.5)).abs() < 1e-3);
        for w in p.values.windows(2) {
            assert!(w[1][0] <= w[0][0]);
            assert!((w[1].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seir_and_sir_share_final_size() {
        let i0 = DEFAULT_INIT_FRACTION;
        let a = integrate(&sir_model(1.5, 1.0), &[1.0 - i0, i0, 0.0], 300.0, 0.01).unwrap();
        let b = integrate(&seir_model(1.5, 1.0, 1.0), &[1.0 - i0, 0.0, i0, 0.0], 300.0, 0.01).unwrap();
        assert!((a.final_value()[0] - b.final_value()[0]).abs() < 1e-4);
        for w in b.values.windows(2) {
            assert!(w[1][0] <= w[0][0]);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let m = sir_model(2.0, 1.0);
        let init = [0.9, 0.1, 0.0];
        let end = |h: f64| integrate(&m, &init, 8.0, h).unwrap().final_value()[1];
        let h = 0.2;
        let reference = end(h / 8.0);
        let ratio = (end(h) - reference).abs() / (end(h / 2.0) - reference).abs();
        assert!((8.0..=32.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn demography_path_reaches_endemic_level() {
        let (lambda, gamma, mu) = (3.0, 1.0, 0.05);
        let r0 = lambda / (gamma + mu);
        let eps = mu / (gamma + mu);
        let e = endemic_equilibrium(r0, eps).unwrap();
        let p = integrate(&sir_demography_model(lambda, gamma, mu), &[0.99, 0.01], 500.0, 0.01).unwrap();
        let z = p.final_value();
        assert!((z[0] - e.s_hat).abs() < 1e-4 && (z[1] - e.i_hat).abs() < 1e-4);
        let b = sir_demography_model(lambda, gamma, mu).drift(0.0, &[e.s_hat, e.i_hat]);
        assert!(b.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn endemic_examples() {
        let e = endemic_equilibrium(2.0, 0.01).unwrap();
        assert!((e.s_hat - 0.5).abs() < 1e-15 && (e.i_hat - 0.005).abs() < 1e-15 && (e.r_hat - 0.495).abs() < 1e-15);
        let tiny = endemic_equilibrium(2.0, 1e-12).unwrap();
        assert!(tiny.i_hat < 1e-11 && (tiny.r_hat - 0.5).abs() < 1e-11);
        assert!(matches!(endemic_equilibrium(0.9, 0.01), Err(Error::Subcritical(_))));
    }

    #[test]
    fn critical_community_size_scaling() {
        let nc = critical_community_size(15.0, 1.0 / 3750.0).unwrap();
        assert!((nc - 9.686e6).abs() / 9.686e6 < 1e-3);
        let half = critical_community_size(15.0, 0.5 / 3750.0).unwrap();
        assert!((half / nc - 4.0).abs() < 1e-12);
        assert_eq!(critical_community_size_vaccinated(15.0, 1e-3, 0.0).unwrap(), critical_community_size(15.0, 1e-3).unwrap());
        assert!(critical_community_size_vaccinated(2.0, 1e-3, 0.6).unwrap().is_infinite());
        assert!(critical_community_size_vaccinated(15.0, 1e-3, 0.5).unwrap() > critical_community_size(15.0, 1e-3).unwrap());
    }

    #[test]
    fn ross_paths() {
        let p = RossParams { a: 0.5, p_vh: 0.5, p_hv: 0.5, m: 4.0, gamma: 0.1, mu: 0.2 };
        let zero = ross_malaria_path(p, [0.0, 0.0], 50.0, 0.1).unwrap();
        assert!(zero.values.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
        let path = ross_malaria_path(p, [0.01, 0.01], 500.0, 0.01).unwrap();
        let (h, v) = (path.final_value()[0], path.final_value()[1]);
        let dh = p.a * p.p_vh * p.m * v * (1.0 - h) - p.gamma * h;
        let dv = p.a * p.p_hv * h * (1.0 - v) - p.mu * v;
        assert!(dh.abs() < 1e-6 && dv.abs() < 1e-6);
        assert!(h > 0.5);
    }

    #[test]
    fn interpolation_and_export() {
        let p = integrate(&sir_model(1.5, 1.0), &[0.99, 0.01, 0.0], 1.0, 0.5).unwrap();
        assert_eq!(p.grid, vec![0.0, 0.5, 1.0]);
        let mid = p.value_at(0.25);
        assert!((mid[1] - 0.5 * (p.values[0][1] + p.values[1][1])).abs() < 1e-15);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("time,S,I,R\n"));
    }
}
