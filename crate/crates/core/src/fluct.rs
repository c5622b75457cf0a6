//! Gaussian fluctuations around the deterministic limit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::CompartmentalModel;
use crate::ode::OdePath;
use crate::rng::SeedSpec;

/// Drift Jacobian `A` and noise matrix `C` (column j = h_j √β_j) at a
/// reference point.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedSystem {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub reference: Vec<f64>,
}

impl LinearizedSystem {
    /// C Cᵀ = Σ_j β_j h_j h_jᵀ.
    pub fn diffusion(&self) -> DMatrix<f64> {
        &self.c * self.c.transpose()
    }
}

/// Central-difference Jacobian of the drift with h = 1e-6·(1 + |x|).
pub fn numerical_jacobian(model: &CompartmentalModel, t: f64, z: &[f64]) -> DMatrix<f64> {
    let d = model.dimension();
    let mut jac = DMatrix::zeros(d, d);
    let mut zp = z.to_vec();
    for k in 0..d {
        let h = 1e-6 * (1.0 + z[k].abs());
        zp[k] = z[k] + h;
        let up = model.drift(t, &zp);
        zp[k] = z[k] - h;
        let down = model.drift(t, &zp);
        zp[k] = z[k];
        for r in 0..d {
            jac[(r, k)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    jac
}

fn jacobian(model: &CompartmentalModel, t: f64, z: &[f64]) -> DMatrix<f64> {
    model.analytic_jacobian(z).unwrap_or_else(|| numerical_jacobian(model, t, z))
}

fn diffusion_matrix(model: &CompartmentalModel, t: f64, z: &[f64]) -> Result<DMatrix<f64>> {
    let d = model.dimension();
    let mut g = DMatrix::zeros(d, d);
    for j in 0..model.n_transitions() {
        let beta = model.rate(j, t, z);
        if !(beta >= 0.0) {
            return Err(Error::NegativeRate { index: j, value: beta });
        }
        let h = model.jump(j);
        for r in 0..d {
            for c in 0..d {
                g[(r, c)] += beta * (h[r] * h[c]) as f64;
            }
        }
    }
    Ok(g)
}

pub fn linearize(model: &CompartmentalModel, point: &[f64]) -> Result<LinearizedSystem> {
    let d = model.dimension();
    if point.len() != d {
        return Err(invalid(format!("point has {} components, model has {d}", point.len())));
    }
    let m = model.n_transitions();
    let mut c = DMatrix::zeros(d, m);
    for j in 0..m {
        let beta = model.rate(j, 0.0, point);
        if !(beta >= 0.0) {
            return Err(Error::NegativeRate { index: j, value: beta });
        }
        let s = beta.sqrt();
        for (r, &h) in model.jump(j).iter().enumerate() {
            c[(r, j)] = h as f64 * s;
        }
    }
    Ok(LinearizedSystem { a: jacobian(model, 0.0, point), c, reference: point.to_vec() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryCovariance {
    pub v: DMatrix<f64>,
    /// Max-norm of A V + V Aᵀ + C Cᵀ.
    pub residual: f64,
}

impl StationaryCovariance {
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<Vec<f64>> = self.v.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "covariance": rows,
            "residual": self.residual,
        }))?)
    }
}

pub fn lyapunov_residual(a: &DMatrix<f64>, v: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a * v + v * a.transpose() + q).amax()
}

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Unique solution of A V + V Aᵀ + C Cᵀ = 0 for stable A, from the
/// d²×d² system (I ⊗ A + A ⊗ I) vec V = −vec(C Cᵀ).
pub fn lyapunov_solve(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<StationaryCovariance> {
    let d = a.nrows();
    if a.ncols() != d || c.nrows() != d {
        return Err(invalid("A must be square and C must have as many rows as A"));
    }
    let abscissa = spectral_abscissa(a);
    if abscissa >= 0.0 {
        return Err(Error::UnstableEquilibrium(abscissa));
    }
    let q = c * c.transpose();
    let eye = DMatrix::<f64>::identity(d, d);
    let big = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = big.lu().solve(&rhs).ok_or(Error::Singular)?;
    let v = DMatrix::from_column_slice(d, d, sol.as_slice());
    let v = 0.5 * (&v + v.transpose());
    let residual = lyapunov_residual(a, &v, &q);
    Ok(StationaryCovariance { v, residual })
}

/// Approximate stationary variance of the scaled infective count in the
/// SIR model with demography, 1/R₀ − 1/R₀² (the ε term dropped).
pub fn stationary_infective_variance(r0: f64) -> f64 {
    1.0 / r0 - 1.0 / (r0 * r0)
}

/// Covariance of the limiting Gaussian process at time t from the
/// explicit solution `V(t) = e^{tA} V₀ e^{tAᵀ} + ∫₀ᵗ e^{uA} CCᵀ e^{uAᵀ} du`
/// for constant A and C (composite Simpson with `intervals` pieces).
pub fn covariance_by_matrix_exponential(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    v0: &DMatrix<f64>,
    t: f64,
    intervals: usize,
) -> DMatrix<f64> {
    let q = c * c.transpose();
    let n = intervals.max(2) + intervals % 2;
    let h = t / n as f64;
    let step = (a * h).exp();
    let mut e = DMatrix::<f64>::identity(a.nrows(), a.ncols());
    let mut integral = DMatrix::zeros(a.nrows(), a.ncols());
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += w * (&e * &q * e.transpose());
        if k < n {
            e = &step * &e;
        }
    }
    integral *= h / 3.0;
    let et = (a * t).exp();
    &et * v0 * et.transpose() + integral
}

/// Mean path z_t and covariance V(t) of the Gaussian limit, integrating
/// dz/dt = b(z) and dV/dt = A(z)V + VA(z)ᵀ + Σβ_j(z) h_j h_jᵀ jointly
/// with RK4.
#[derive(Clone, Debug)]
pub struct CovariancePath {
    pub grid: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

pub fn propagate_covariance(
    model: &CompartmentalModel,
    init: &[f64],
    v0: &DMatrix<f64>,
    horizon: f64,
    step: f64,
) -> Result<CovariancePath> {
    let d = model.dimension();
    if init.len() != d || v0.nrows() != d || v0.ncols() != d {
        return Err(invalid("dimension mismatch between model, initial state and covariance"));
    }
    if !(step > 0.0 && horizon >= 0.0) {
        return Err(invalid("need step > 0 and horizon >= 0"));
    }
    let n = (horizon / step - 1e-9).ceil().max(0.0) as usize;
    let h = if n == 0 { 0.0 } else { horizon / n as f64 };
    let rhs = |t: f64, z: &[f64], v: &DMatrix<f64>| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let a = jacobian(model, t, z);
        let g = diffusion_matrix(model, t, z)?;
        Ok((model.drift(t, z), &a * v + v * a.transpose() + g))
    };
    let axpy = |z: &[f64], k: &[f64], s: f64| -> Vec<f64> { z.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let mut z = init.to_vec();
    let mut v = v0.clone();
    let mut out = CovariancePath { grid: vec![0.0], means: vec![z.clone()], covariances: vec![v.clone()] };
    for k in 0..n {
        let t = k as f64 * h;
        let (k1, m1) = rhs(t, &z, &v)?;
        let (k2, m2) = rhs(t + 0.5 * h, &axpy(&z, &k1, 0.5 * h), &(&v + &m1 * (0.5 * h)))?;
        let (k3, m3) = rhs(t + 0.5 * h, &axpy(&z, &k2, 0.5 * h), &(&v + &m2 * (0.5 * h)))?;
        let (k4, m4) = rhs(t + h, &axpy(&z, &k3, h), &(&v + &m3 * h))?;
        for c in 0..d {
            z[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        v += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
        out.grid.push(if k + 1 == n { horizon } else { (k + 1) as f64 * h });
        out.means.push(z.clone());
        out.covariances.push(v.clone());
    }
    Ok(out)
}

/// Euler–Maruyama for
/// `dX = b(X)dt + Σ_j h_j √(β_j(X)/N) dB_j`, with rates evaluated at the
/// positive part of the state and negative rates clamped to zero. An
/// infinite `n` gives the explicit Euler scheme for the ODE.
pub fn diffusion_simulate(
    model: &CompartmentalModel,
    n: f64,
    init: &[f64],
    horizon: f64,
    step: f64,
    seed: SeedSpec,
) -> Result<OdePath> {
    let d = model.dimension();
    if init.len() != d {
        return Err(invalid(format!("initial state has {} components, model has {d}", init.len())));
    }
    if !(n > 0.0) {
        return Err(invalid("scale N must be positive"));
    }
    if !(step > 0.0 && horizon >= 0.0) {
        return Err(invalid("need step > 0 and horizon >= 0"));
    }
    let steps = (horizon / step - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { horizon / steps as f64 };
    let noise_scale = (h / n).sqrt();
    let mut rng = seed.rng();
    let mut x = init.to_vec();
    let mut pos = vec![0.0; d];
    let mut rates = vec![0.0; model.n_transitions()];
    let mut grid = vec![0.0];
    let mut values = vec![x.clone()];
    for k in 0..steps {
        let t = k as f64 * h;
        for (p, &xi) in pos.iter_mut().zip(&x) {
            *p = xi.max(0.0);
        }
        model.rates_into(t, &pos, &mut rates);
        for (j, &beta) in rates.iter().enumerate() {
            let beta = beta.max(0.0);
            let xi: f64 = rng.sample(StandardNormal);
            let incr = beta * h + beta.sqrt() * noise_scale * xi;
            for (xc, &hj) in x.iter_mut().zip(model.jump(j)) {
                *xc += hj as f64 * incr;
            }
        }
        grid.push(if k + 1 == steps { horizon } else { (k + 1) as f64 * h });
        values.push(x.clone());
    }
    Ok(OdePath {
        system: format!("{} (diffusion, N = {n})", model.name()),
        compartments: model.compartments().to_vec(),
        grid,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub model: String,
    pub point: Vec<f64>,
    pub drift_jacobian: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub residual: f64,
}

impl CovarianceReport {
    pub fn new(model: &CompartmentalModel, lin: &LinearizedSystem, cov: &StationaryCovariance) -> Self {
        let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        CovarianceReport {
            model: model.name().to_string(),
            point: lin.reference.clone(),
            drift_jacobian: rows(&lin.a),
            covariance: rows(&cov.v),
            residual: cov.residual,
        }
    }
}
