//! Energy norms, the Lyapunov functional of the target system and decay-rate
//! estimation.

use std::fmt;

use nalgebra::Matrix2;

use crate::backstepping::{inverse_kernels, target_matrices, transform_to_target, xi_kernels, TargetState};
use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::params::{BeamParams, ControllerParams, SpatialGrid, SystemMatrices};
use crate::quadrature::{cumtrapz, derivative, trapz};
use crate::riemann::{PhysicalState, RiemannState};
use crate::simulator::TimeSeries;

/// `‖u‖²_{H¹} + ‖α‖²_{H¹} + ‖uₜ‖² + ‖αₜ‖²` with derivatives by finite differences.
pub fn energy_h1(ps: &PhysicalState, grid: &SpatialGrid) -> Result<f64> {
    ps.check(grid)?;
    let h = grid.h();
    let ux = derivative(&ps.u, h);
    let ax = derivative(&ps.alpha, h);
    let density: Vec<f64> = (0..grid.len())
        .map(|i| ps.u[i].powi(2) + ux[i].powi(2) + ps.alpha[i].powi(2) + ax[i].powi(2) + ps.ut[i].powi(2) + ps.alphat[i].powi(2))
        .collect();
    Ok(trapz(&density, h))
}

/// The same energy computed directly from Riemann variables
/// (`uₓ = (p+q)/2`, `uₜ = (p−q)/(2√ε)`, `u = x₁ + ∫uₓ`).
pub fn energy_riemann(rs: &RiemannState, params: &BeamParams, grid: &SpatialGrid) -> f64 {
    let h = grid.h();
    let ux: Vec<f64> = rs.p.iter().zip(&rs.q).map(|(p, q)| 0.5 * (p + q)).collect();
    let ax: Vec<f64> = rs.r.iter().zip(&rs.s).map(|(r, s)| 0.5 * (r + s)).collect();
    let u = cumtrapz(&ux, h);
    let alpha = cumtrapz(&ax, h);
    let (se, sm) = (params.sqrt_eps(), params.sqrt_mu());
    let density: Vec<f64> = (0..rs.len())
        .map(|i| {
            let ut = (rs.p[i] - rs.q[i]) / (2.0 * se);
            let at = (rs.r[i] - rs.s[i]) / (2.0 * sm);
            (rs.x1 + u[i]).powi(2) + ux[i].powi(2) + (rs.x2 + alpha[i]).powi(2) + ax[i].powi(2) + ut * ut + at * at
        })
        .collect();
    trapz(&density, h)
}

/// Weights of `V = XᵀX + ζ∫e^{δx}σᵀΣ⁻¹σ + ∫e^{−δx}ψᵀΣ⁻¹ψ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConfig {
    pub zeta: f64,
    pub delta: f64,
}

/// Bounds entering the default weights, all spectral norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovBounds {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
    pub m6: f64,
    pub lambda1: f64,
    pub sigma_inv: f64,
    pub omega: f64,
}

fn norm2(m: &Matrix2<f64>) -> f64 {
    m.singular_values().max()
}

impl LyapunovConfig {
    pub fn validate(self) -> Result<Self> {
        for (name, value) in [("zeta", self.zeta), ("delta", self.delta)] {
            if !value.is_finite() {
                return Err(Error::NonFinite { name });
            }
            if value <= 0.0 {
                return Err(Error::NonPositiveCoefficient { name, value });
            }
        }
        Ok(self)
    }

    /// `δ` and `ζ` from the sufficient conditions of the decay estimate with
    /// `c' = 1`, each enlarged by 10 %. `M₅` is evaluated at the chosen `δ`.
    pub fn default_from_bounds(set: &KernelSet) -> (Self, LyapunovBounds) {
        let p = &set.problem;
        let mats = &p.mats;
        let inv = inverse_kernels(set);
        let xi = xi_kernels(&inv, mats);
        let target = target_matrices(mats, &p.phi0);
        let n = xi.n;
        let h = 1.0 / n as f64;
        let c_prime = 1.0;
        let sigma_inv = norm2(&mats.sigma_inv());
        let lambda1 = norm2(&mats.lambda1);
        let omega = set.omega.values.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let m1 = (p.mats.kappa.powi(2)).max(1.0 / p.params.mu) + 1.0;
        let m2 = norm2(&(target.e2 + target.e3.transpose() * mats.c)).powi(2) + norm2(&mats.c).powi(2);
        let m3 = lambda1.powi(2);
        let m4 = xi.xi1.iter().map(|x| norm2(&(mats.sigma_inv() * x)).powi(2)).fold(0.0, f64::max);
        let m6 = 1.0 + xi.xi3.iter().map(|x| norm2(x).powi(2)).fold(0.0, f64::max);
        let delta_min = (2.0 * lambda1 + m6 + sigma_inv * (c_prime + 1.0 + 2.0 * m4)).max(sigma_inv * (1.0 + 2.0 * omega));
        let delta = 1.1 * delta_min;
        let mut m5 = 0.0f64;
        for i in 0..=n {
            for j in 0..=i {
                let w = (-delta * j as f64 * h).exp();
                m5 = m5.max(norm2(&(xi.xi2[crate::kernel::tri(i, j)] * w)).powi(2));
            }
        }
        let zeta = 1.1 * (m3 + m5).max(m2);
        (
            Self { zeta, delta },
            LyapunovBounds {
                m1,
                m2,
                m3,
                m4,
                m5,
                m6,
                lambda1,
                sigma_inv,
                omega,
            },
        )
    }
}

/// Trapezoid evaluation of `V`.
pub fn lyapunov_v(ts: &TargetState, mats: &SystemMatrices, cfg: &LyapunovConfig, grid: &SpatialGrid) -> Result<f64> {
    grid.check_len(ts.sigma.len())?;
    grid.check_len(ts.psi.len())?;
    let si = mats.sigma_inv();
    let h = grid.h();
    let sig: Vec<f64> = (0..grid.len())
        .map(|i| (cfg.delta * grid.x(i)).exp() * ts.sigma[i].dot(&(si * ts.sigma[i])))
        .collect();
    let psi: Vec<f64> = (0..grid.len())
        .map(|i| (-cfg.delta * grid.x(i)).exp() * ts.psi[i].dot(&(si * ts.psi[i])))
        .collect();
    Ok(ts.x.dot(&ts.x) + cfg.zeta * trapz(&sig, h) + trapz(&psi, h))
}

/// `V` and `sup|σ|` at every snapshot of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMonitor {
    pub times: Vec<f64>,
    pub lyapunov: Vec<f64>,
    pub sigma_sup: Vec<f64>,
    pub sigma_boundary: Vec<f64>,
}

/// Pushes every snapshot through the backstepping transformation.
pub fn monitor_target(series: &TimeSeries, set: &KernelSet, cfg: &LyapunovConfig, grid: &SpatialGrid) -> Result<TargetMonitor> {
    let mut out = TargetMonitor {
        times: Vec::with_capacity(series.snapshots.len()),
        lyapunov: Vec::with_capacity(series.snapshots.len()),
        sigma_sup: Vec::with_capacity(series.snapshots.len()),
        sigma_boundary: Vec::with_capacity(series.snapshots.len()),
    };
    for snap in &series.snapshots {
        let ts = transform_to_target(&snap.riemann, &set.kernels, &set.phi, grid)?;
        out.times.push(snap.t);
        out.lyapunov.push(lyapunov_v(&ts, &set.problem.mats, cfg, grid)?);
        out.sigma_sup.push(ts.sigma_sup());
        out.sigma_boundary.push(ts.boundary_residual());
    }
    Ok(out)
}

/// Result of a log-linear fit of an energy history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    /// `−d(log E)/dt`; negative for growth.
    pub rate: f64,
    /// Root-mean-square residual of the fit in `log E`.
    pub residual: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub c2: Option<f64>,
}

impl fmt::Display for DecayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fitted_rate={}", self.rate)?;
        writeln!(f, "fit_residual={}", self.residual)?;
        writeln!(f, "window_start={}", self.window.0)?;
        writeln!(f, "window_end={}", self.window.1)?;
        writeln!(f, "samples={}", self.samples)?;
        match self.c2 {
            Some(c2) => writeln!(f, "theorem_c2={c2}"),
            None => writeln!(f, "theorem_c2=nan"),
        }
    }
}

/// Minimum number of samples accepted by the decay fit.
pub const MIN_FIT_SAMPLES: usize = 10;

/// Least-squares fit of `log E` against `t` over `window`.
pub fn fit_decay(times: &[f64], energy: &[f64], window: (f64, f64)) -> Result<DecayReport> {
    let mut pts = Vec::new();
    for (&t, &e) in times.iter().zip(energy) {
        if t < window.0 - 1e-12 || t > window.1 + 1e-12 {
            continue;
        }
        if !(e > 0.0) {
            return Err(Error::NonPositiveEnergy { time: t });
        }
        pts.push((t, e.ln()));
    }
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            got: pts.len(),
            min: MIN_FIT_SAMPLES,
        });
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum();
    let slope = sxy / sxx;
    let residual = (pts.iter().map(|p| (p.1 - lm - slope * (p.0 - tm)).powi(2)).sum::<f64>() / m).sqrt();
    Ok(DecayReport {
        rate: -slope,
        residual,
        window,
        samples: pts.len(),
        c2: None,
    })
}

/// The default fit window `[√μ + 0.5, t_final]`.
pub fn default_window(params: &BeamParams, t_final: f64) -> (f64, f64) {
    (params.sqrt_mu() + 0.5, t_final)
}

/// Fits the energy history of a run.
pub fn fit_decay_rate(series: &TimeSeries, window: (f64, f64)) -> Result<DecayReport> {
    fit_decay(&series.times, &series.energy, window)
}

/// `C₂ = min{δ₁, δ₂} − 2 − max{4/(√ε−θ)², 1/μ}`.
pub fn theorem_constant_c2(params: &BeamParams, ctrl: &ControllerParams) -> f64 {
    ctrl.delta1.min(ctrl.delta2) - 2.0 - (4.0 / (params.sqrt_eps() - params.theta).powi(2)).max(1.0 / params.mu)
}
