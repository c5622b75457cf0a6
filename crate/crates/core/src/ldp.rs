//! Large deviations: path costs, the SIS quasi-potential and the
//! exponential scale of extinction times from endemicity.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{sis_model, CompartmentalModel};
use crate::numeric::integrate;

/// Local cost g(ν, ω) = ν log(ν/ω) − ν + ω of running a channel with
/// rate ω at flux ν, with g(0, ω) = ω and g(ν > 0, 0) = ∞.
pub fn rate_integrand(nu: f64, omega: f64) -> Result<f64> {
    if !(nu >= 0.0 && omega >= 0.0) {
        return Err(invalid(format!("g needs non-negative arguments, got ({nu}, {omega})")));
    }
    Ok(if nu == 0.0 {
        omega
    } else if omega == 0.0 {
        f64::INFINITY
    } else {
        nu * (nu / omega).ln() - nu + omega
    })
}

/// A path φ on a uniform grid together with channel fluxes c_j ≥ 0 such
/// that dφ/dt = Σ_j c_j h_j. Controls are given at the nodes and read as
/// piecewise linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlledPath {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl ControlledPath {
    /// The unperturbed flow: the RK4 path of the model with c_j = β_j.
    pub fn unperturbed(model: &CompartmentalModel, init: &[f64], horizon: f64, step: f64) -> Result<Self> {
        let path = crate::ode::integrate(model, init, horizon, step)?;
        let controls = path
            .grid
            .iter()
            .zip(&path.values)
            .map(|(&t, z)| (0..model.n_transitions()).map(|j| model.rate(j, t, z)).collect())
            .collect();
        Ok(ControlledPath { grid: path.grid, states: path.values, controls })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Midpoint flow-matching check: on each segment the difference quotient
/// of φ must equal Σ_j c̄_j h_j (c̄ the segment average) within
/// `1e-6·(1 + ‖φ‖)`.
pub fn check_flow(path: &ControlledPath, model: &CompartmentalModel) -> Result<()> {
    let d = model.dimension();
    let m = model.n_transitions();
    if path.states.len() != path.grid.len() || path.controls.len() != path.grid.len() {
        return Err(invalid("grid, states and controls must have equal length"));
    }
    if path.states.iter().any(|s| s.len() != d) || path.controls.iter().any(|c| c.len() != m) {
        return Err(invalid("state or control vector has the wrong length"));
    }
    if path.controls.iter().flatten().any(|&c| !(c >= 0.0)) {
        return Err(invalid("controls must be non-negative"));
    }
    for k in 0..path.len().saturating_sub(1) {
        let dt = path.grid[k + 1] - path.grid[k];
        if !(dt > 0.0) {
            return Err(invalid("grid must be strictly increasing"));
        }
        let norm = path.states[k].iter().map(|x| x.abs()).fold(0.0, f64::max);
        let mut mismatch: f64 = 0.0;
        for r in 0..d {
            let lhs = (path.states[k + 1][r] - path.states[k][r]) / dt;
            let rhs: f64 = (0..m)
                .map(|j| 0.5 * (path.controls[k][j] + path.controls[k + 1][j]) * model.jump(j)[r] as f64)
                .sum();
            mismatch = mismatch.max((lhs - rhs).abs());
        }
        if mismatch > 1e-6 * (1.0 + norm) {
            return Err(Error::FlowMismatch { segment: k, mismatch });
        }
    }
    Ok(())
}

/// I_T(φ | c) = ∫₀ᵀ Σ_j g(c_j(t), β_j(φ_t)) dt by the trapezoid rule.
pub fn path_cost(path: &ControlledPath, model: &CompartmentalModel) -> Result<f64> {
    check_flow(path, model)?;
    let density = |k: usize| -> Result<f64> {
        let mut total = 0.0;
        for (j, &c) in path.controls[k].iter().enumerate() {
            let beta = model.rate(j, path.grid[k], &path.states[k]);
            total += rate_integrand(c, beta.max(0.0))?;
        }
        Ok(total)
    };
    let mut cost = 0.0;
    let mut prev = density(0)?;
    for k in 1..path.len() {
        let next = density(k)?;
        cost += 0.5 * (prev + next) * (path.grid[k] - path.grid[k - 1]);
        prev = next;
    }
    Ok(cost)
}

/// Hamiltonian Σ_j β_j(x)(e^{⟨h_j, p⟩} − 1).
pub fn hamiltonian(model: &CompartmentalModel, x: &[f64], p: &[f64]) -> f64 {
    (0..model.n_transitions())
        .map(|j| {
            let hp: f64 = model.jump(j).iter().zip(p).map(|(&h, &q)| h as f64 * q).sum();
            model.rate(j, 0.0, x) * (hp.exp() - 1.0)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiPotential {
    pub value: f64,
    pub model: String,
    pub r0: f64,
}

fn sis_r0(lambda: f64, gamma: f64) -> Result<f64> {
    if !(lambda > 0.0 && gamma > 0.0) {
        return Err(invalid("lambda and gamma must be positive"));
    }
    let r0 = lambda / gamma;
    if r0 <= 1.0 {
        return Err(Error::Subcritical(r0));
    }
    Ok(r0)
}

/// Minimal cost of reaching extinction from the SIS endemic level:
/// log R₀ − 1 + 1/R₀.
pub fn sis_quasipotential(lambda: f64, gamma: f64) -> Result<QuasiPotential> {
    let r0 = sis_r0(lambda, gamma)?;
    Ok(QuasiPotential { value: r0.ln() - 1.0 + 1.0 / r0, model: "SIS".into(), r0 })
}

/// The same quantity as the integral ∫₀^{x*} log(λ(1−x)/γ) dx.
pub fn sis_quasipotential_quadrature(lambda: f64, gamma: f64) -> Result<f64> {
    let r0 = sis_r0(lambda, gamma)?;
    let x_star = 1.0 - 1.0 / r0;
    Ok(integrate(|x| (lambda * (1.0 - x) / gamma).ln(), 0.0, x_star, 1e-13))
}

/// Optimal escape path for SIS: the time-reversed flow
/// ẋ = γx − λx(1−x) from `from_x` down to `to_x`, with fluxes γx on the
/// infection channel and λx(1−x) on the recovery channel. The path stops
/// at the last grid node not below `to_x`.
pub fn sis_optimal_path(lambda: f64, gamma: f64, from_x: f64, to_x: f64, step: f64) -> Result<ControlledPath> {
    let r0 = sis_r0(lambda, gamma)?;
    let x_star = 1.0 - 1.0 / r0;
    if !(0.0 < to_x && to_x < from_x && from_x < x_star) {
        return Err(invalid(format!("need 0 < to_x < from_x < x* = {x_star}, got {to_x}, {from_x}")));
    }
    if !(step > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let f = |x: f64| gamma * x - lambda * x * (1.0 - x);
    let controls = |x: f64| vec![gamma * x, lambda * x * (1.0 - x)];
    let mut grid = vec![0.0];
    let mut states = vec![vec![from_x]];
    let mut ctrl = vec![controls(from_x)];
    let mut x = from_x;
    let mut k = 0usize;
    loop {
        let k1 = f(x);
        let k2 = f(x + 0.5 * step * k1);
        let k3 = f(x + 0.5 * step * k2);
        let k4 = f(x + step * k3);
        let next = x + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if next < to_x {
            break;
        }
        x = next;
        k += 1;
        grid.push(k as f64 * step);
        states.push(vec![x]);
        ctrl.push(controls(x));
        if k > 100_000_000 {
            return Err(Error::NoConvergence("optimal path does not reach the target".into()));
        }
    }
    Ok(ControlledPath { grid, states, controls: ctrl })
}

/// Costate along the SIS optimal path, p = log(γ/(λ(1−x))).
pub fn sis_costate(lambda: f64, gamma: f64, x: f64) -> f64 {
    (gamma / (lambda * (1.0 - x))).ln()
}

/// Path cost of the SIS model (infection, recovery channels).
pub fn sis_path_cost(lambda: f64, gamma: f64, path: &ControlledPath) -> Result<f64> {
    path_cost(path, &sis_model(lambda, gamma))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionScale {
    pub lower: f64,
    pub upper: f64,
    /// e^{N V̄}.
    pub central: f64,
}

/// Bracket `(R₀/c)^N e^{−N(R₀−1)/R₀} < T < (cR₀)^N e^{−N(R₀−1)/R₀}` for
/// slack c > 1, and the central scale e^{N V̄}.
pub fn extinction_time_scale(n: f64, qp: &QuasiPotential, c: f64) -> Result<ExtinctionScale> {
    if !(n >= 1.0) {
        return Err(invalid("N must be at least 1"));
    }
    if !(c > 1.0) {
        return Err(invalid(format!("slack c must exceed 1, got {c}")));
    }
    let r0 = qp.r0;
    let base = -n * (r0 - 1.0) / r0;
    Ok(ExtinctionScale {
        lower: (n * (r0 / c).ln() + base).exp(),
        upper: (n * (c * r0).ln() + base).exp(),
        central: (n * qp.value).exp(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiPotentialReport {
    pub model: String,
    #[serde(rename = "V_bar")]
    pub v_bar: f64,
    pub central_scale: Vec<(f64, f64)>,
}

impl QuasiPotentialReport {
    pub fn new(qp: &QuasiPotential, populations: &[f64]) -> Self {
        QuasiPotentialReport {
            model: qp.model.clone(),
            v_bar: qp.value,
            central_scale: populations.iter().map(|&n| (n, (n * qp.value).exp())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrand_conventions() {
        for w in [0.0, 0.3, 2.0] {
            assert_eq!(rate_integrand(w, w).unwrap(), 0.0);
        }
        assert_eq!(rate_integrand(0.0, 2.0).unwrap(), 2.0);
        assert!((rate_integrand(2.0, 1.0).unwrap() - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!(rate_integrand(1.0, 0.0).unwrap().is_infinite());
        assert!(rate_integrand(-1.0, 1.0).is_err());
    }

    #[test]
    fn quasipotential_forms_agree() {
        let qp = sis_quasipotential(2.0, 1.0).unwrap();
        assert!((qp.value - 0.1931).abs() < 5e-5);
        assert!((sis_quasipotential_quadrature(2.0, 1.0).unwrap() - qp.value).abs() < 1e-10);
        for (l, g) in [(1.5, 1.0), (3.0, 0.7), (10.0, 1.0)] {
            let closed = sis_quasipotential(l, g).unwrap().value;
            assert!((sis_quasipotential_quadrature(l, g).unwrap() - closed).abs() < 1e-10);
        }
        assert!(sis_quasipotential(1.0 + 1e-6, 1.0).unwrap().value < 1e-11);
        assert!(matches!(sis_quasipotential(0.9, 1.0), Err(Error::Subcritical(_))));
    }

    #[test]
    fn unperturbed_flow_costs_nothing() {
        let m = sis_model(2.0, 1.0);
        let path = ControlledPath::unperturbed(&m, &[0.1], 5.0, 1e-3).unwrap();
        assert!(path_cost(&path, &m).unwrap().abs() < 1e-12);
        // Pushing any control off the flow costs something, or breaks
        // flow matching.
        let mut bumped = path.clone();
        for c in &mut bumped.controls {
            c[0] *= 1.01;
            c[1] *= 1.01;
        }
        // Scaling both channels equally changes the flow, so the states no
        // longer match: rejected.
        assert!(matches!(path_cost(&bumped, &m), Err(Error::FlowMismatch { .. })));
    }

    #[test]
    fn optimal_path_cost_approaches_quasipotential() {
        let (l, g) = (2.0, 1.0);
        let x_star = 0.5;
        let path = sis_optimal_path(l, g, x_star - 1e-3, 1e-3, 1e-3).unwrap();
        assert!(path.states.windows(2).all(|w| w[1][0] < w[0][0]));
        for (s, c) in path.states.iter().zip(&path.controls) {
            let x = s[0];
            assert!((c[0] * c[1] - g * l * x * x * (1.0 - x)).abs() < 1e-15);
        }
        let cost = sis_path_cost(l, g, &path).unwrap();
        let v = sis_quasipotential(l, g).unwrap().value;
        assert!((cost - v).abs() < 1e-2, "{cost} vs {v}");
        // Trapezoid error shrinks quadratically with the step.
        let coarse = sis_path_cost(l, g, &sis_optimal_path(l, g, 0.499, 0.001, 4e-3).unwrap()).unwrap();
        assert!((coarse - cost).abs() < 1e-3);
    }

    #[test]
    fn hamiltonian_vanishes_on_optimal_path() {
        let (l, g) = (2.0, 1.0);
        let m = sis_model(l, g);
        let path = sis_optimal_path(l, g, 0.45, 0.01, 1e-2).unwrap();
        for s in &path.states {
            let p = sis_costate(l, g, s[0]);
            assert!(hamiltonian(&m, s, &[p]).abs() < 1e-8);
        }
    }

    #[test]
    fn scales() {
        let qp = sis_quasipotential(2.0, 1.0).unwrap();
        let s = extinction_time_scale(30.0, &qp, 1.1).unwrap();
        assert!(((s.central.ln() / 30.0) - qp.value).abs() < 1e-14);
        assert!((s.central - 330.0).abs() < 5.0);
        assert!(s.lower < s.central && s.central < s.upper);
        assert!(extinction_time_scale(30.0, &qp, 1.0).is_err());
        let report = QuasiPotentialReport::new(&qp, &[20.0, 30.0]);
        assert!(serde_json::to_string(&report).unwrap().contains("\"V_bar\""));
    }
}
