//! Conversion between the physical beam state `(u, α, uₜ, αₜ)` and the
//! Riemann/ODE representation `(p, q, r, s, x₁, x₂)`.

use nalgebra::Vector2;

use crate::error::Result;
use crate::params::{BeamParams, SpatialGrid};
use crate::quadrature::{cumtrapz, derivative};

/// Physical beam state sampled at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalState {
    pub u: Vec<f64>,
    pub alpha: Vec<f64>,
    pub ut: Vec<f64>,
    pub alphat: Vec<f64>,
}

impl PhysicalState {
    pub fn zeros(grid: &SpatialGrid) -> Self {
        let z = vec![0.0; grid.len()];
        Self {
            u: z.clone(),
            alpha: z.clone(),
            ut: z.clone(),
            alphat: z,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|x| c * x).collect();
        Self {
            u: s(&self.u),
            alpha: s(&self.alpha),
            ut: s(&self.ut),
            alphat: s(&self.alphat),
        }
    }

    pub(crate) fn check(&self, grid: &SpatialGrid) -> Result<()> {
        for v in [&self.u, &self.alpha, &self.ut, &self.alphat] {
            grid.check_len(v.len())?;
        }
        Ok(())
    }
}

/// Riemann variables at the grid nodes plus the two boundary ODE states.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    /// `u(0, t)`
    pub x1: f64,
    /// `α(0, t)`
    pub x2: f64,
}

impl RiemannState {
    pub fn zeros(grid: &SpatialGrid) -> Self {
        let z = vec![0.0; grid.len()];
        Self {
            p: z.clone(),
            q: z.clone(),
            r: z.clone(),
            s: z,
            x1: 0.0,
            x2: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `Z = (p, r)` at node `i`.
    pub fn z(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.p[i], self.r[i])
    }

    /// `Y = (q, s)` at node `i`.
    pub fn y(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.q[i], self.s[i])
    }

    pub fn ode(&self) -> Vector2<f64> {
        Vector2::new(self.x1, self.x2)
    }

    pub fn max_abs(&self) -> f64 {
        [&self.p, &self.q, &self.r, &self.s]
            .iter()
            .flat_map(|v| v.iter())
            .chain([self.x1, self.x2].iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite_below(&self, limit: f64) -> bool {
        [&self.p, &self.q, &self.r, &self.s]
            .iter()
            .flat_map(|v| v.iter())
            .chain([self.x1, self.x2].iter())
            .all(|v| v.is_finite() && v.abs() <= limit)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|x| c * x).collect();
        Self {
            p: s(&self.p),
            q: s(&self.q),
            r: s(&self.r),
            s: s(&self.s),
            x1: c * self.x1,
            x2: c * self.x2,
        }
    }

    pub(crate) fn check(&self, grid: &SpatialGrid) -> Result<()> {
        for v in [&self.p, &self.q, &self.r, &self.s] {
            grid.check_len(v.len())?;
        }
        Ok(())
    }
}

/// `p = uₓ + √ε uₜ`, `q = uₓ − √ε uₜ`, `r = αₓ + √μ αₜ`, `s = αₓ − √μ αₜ`,
/// `x₁ = u(0)`, `x₂ = α(0)`.
pub fn to_riemann(ps: &PhysicalState, params: &BeamParams, grid: &SpatialGrid) -> Result<RiemannState> {
    ps.check(grid)?;
    let h = grid.h();
    let se = params.sqrt_eps();
    let sm = params.sqrt_mu();
    let ux = derivative(&ps.u, h);
    let ax = derivative(&ps.alpha, h);
    let comb = |d: &[f64], v: &[f64], c: f64| -> Vec<f64> {
        d.iter().zip(v).map(|(d, v)| d + c * v).collect()
    };
    Ok(RiemannState {
        p: comb(&ux, &ps.ut, se),
        q: comb(&ux, &ps.ut, -se),
        r: comb(&ax, &ps.alphat, sm),
        s: comb(&ax, &ps.alphat, -sm),
        x1: ps.u[0],
        x2: ps.alpha[0],
    })
}

/// Rebuilds the beam state: `u = x₁ + ½∫₀ˣ(p+q)`, `α = x₂ + ½∫₀ˣ(r+s)`,
/// `uₜ = (p−q)/(2√ε)`, `αₜ = (r−s)/(2√μ)`.
pub fn from_riemann(rs: &RiemannState, params: &BeamParams, grid: &SpatialGrid) -> Result<PhysicalState> {
    rs.check(grid)?;
    let h = grid.h();
    let se = params.sqrt_eps();
    let sm = params.sqrt_mu();
    let half_sum = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| 0.5 * (a + b)).collect() };
    let u = cumtrapz(&half_sum(&rs.p, &rs.q), h)
        .into_iter()
        .map(|v| rs.x1 + v)
        .collect();
    let alpha = cumtrapz(&half_sum(&rs.r, &rs.s), h)
        .into_iter()
        .map(|v| rs.x2 + v)
        .collect();
    let ut = rs.p.iter().zip(&rs.q).map(|(p, q)| (p - q) / (2.0 * se)).collect();
    let alphat = rs.r.iter().zip(&rs.s).map(|(r, s)| (r - s) / (2.0 * sm)).collect();
    Ok(PhysicalState { u, alpha, ut, alphat })
}

/// Reference initial data: `u₀ = 2.8 − 2.8x − 1.8x²`, `α₀ = x²`, zero velocities.
pub fn default_initial_state(grid: &SpatialGrid) -> PhysicalState {
    PhysicalState {
        u: grid.sample(|x| 2.8 - 2.8 * x - 1.8 * x * x),
        alpha: grid.sample(|x| x * x),
        ut: vec![0.0; grid.len()],
        alphat: vec![0.0; grid.len()],
    }
}

/// Residuals of the uncontrolled-end boundary conditions for a given state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatibilityReport {
    /// `uₓ(0) − (α(0) − θuₜ(0) − ξu(0))`
    pub shear_residual: f64,
    /// `αₓ(0)`
    pub rotation_residual: f64,
    /// Tolerance the residuals were judged against.
    pub tolerance: f64,
    /// True when either residual exceeds the tolerance.
    pub flagged: bool,
}

/// Evaluates the boundary conditions at `x = 0` on `ps`. Incompatible data is
/// reported, never rejected.
pub fn check_compatibility(ps: &PhysicalState, params: &BeamParams, grid: &SpatialGrid) -> Result<CompatibilityReport> {
    ps.check(grid)?;
    let h = grid.h();
    let ux0 = (-3.0 * ps.u[0] + 4.0 * ps.u[1] - ps.u[2]) / (2.0 * h);
    let ax0 = (-3.0 * ps.alpha[0] + 4.0 * ps.alpha[1] - ps.alpha[2]) / (2.0 * h);
    let shear = ux0 - (ps.alpha[0] - params.theta * ps.ut[0] - params.xi * ps.u[0]);
    let scale = [&ps.u, &ps.alpha, &ps.ut, &ps.alphat]
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tolerance = 1e-6 * (1.0 + scale);
    Ok(CompatibilityReport {
        shear_residual: shear,
        rotation_residual: ax0,
        tolerance,
        flagged: shear.abs() > tolerance || ax0.abs() > tolerance,
    })
}
