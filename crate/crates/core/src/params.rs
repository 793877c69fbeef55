//! Beam and controller parameters, the spatial grid, and the constant matrices
//! of the Riemann-variable PIDE-ODE system
//!
//! ```text
//! Z_t = Σ Z_x + Λ₁(Z+Y) + Λ₂X + ∫₀ˣ F (Z+Y) dy
//! Y_t = −Σ Y_x + Λ₁(Y+Z) + Λ₂X + ∫₀ˣ F (Z+Y) dy
//! Ẋ   = (A + B₂D) X + (B₁ + B₂C) Z(0)
//! Z(1) = V,   Y(0) = C Z(0) + D X
//! ```
//!
//! with `Z = (p, r)`, `Y = (q, s)` and `X = (u(0), α(0))`.

use nalgebra::Matrix2;

use crate::error::{Error, Result};

/// Smallest admissible number of grid cells.
pub const MIN_CELLS: usize = 8;

/// Non-dimensional Timoshenko beam coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamParams {
    /// Inertia coefficient of the displacement equation.
    pub epsilon: f64,
    /// Rotary inertia coefficient.
    pub mu: f64,
    /// Shear coupling between displacement and rotation.
    pub a: f64,
    /// Anti-damping coefficient at the uncontrolled end.
    pub theta: f64,
    /// Anti-stiffness coefficient at the uncontrolled end.
    pub xi: f64,
}

impl BeamParams {
    /// The configuration used for the reference experiment.
    pub const REFERENCE: BeamParams = BeamParams {
        epsilon: 1.0,
        mu: 2.0,
        a: 1.0,
        theta: -1.0,
        xi: 1.0,
    };

    pub fn sqrt_eps(&self) -> f64 {
        self.epsilon.sqrt()
    }

    pub fn sqrt_mu(&self) -> f64 {
        self.mu.sqrt()
    }

    /// Transport speed of `p`, `q`.
    pub fn fast_speed(&self) -> f64 {
        1.0 / self.sqrt_eps()
    }

    /// Transport speed of `r`, `s`.
    pub fn slow_speed(&self) -> f64 {
        1.0 / self.sqrt_mu()
    }

    /// `κ = 2/(√ε − θ)`.
    pub fn kappa(&self) -> f64 {
        2.0 / (self.sqrt_eps() - self.theta)
    }

    pub fn validate(self) -> Result<Self> {
        validate_params(self)
    }
}

/// Checks positivity, the supported speed ordering and the well-posedness of
/// the anti-damped boundary condition (θ ≠ √ε).
pub fn validate_params(p: BeamParams) -> Result<BeamParams> {
    for (name, v) in [
        ("epsilon", p.epsilon),
        ("mu", p.mu),
        ("a", p.a),
        ("theta", p.theta),
        ("xi", p.xi),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { name });
        }
    }
    if p.epsilon <= 0.0 {
        return Err(Error::NonPositiveCoefficient {
            name: "epsilon",
            value: p.epsilon,
        });
    }
    if p.mu <= 0.0 {
        return Err(Error::NonPositiveCoefficient {
            name: "mu",
            value: p.mu,
        });
    }
    let sqrt_eps = p.epsilon.sqrt();
    if (p.theta - sqrt_eps).abs() < 1e-9 * sqrt_eps.max(1.0) {
        return Err(Error::IllPosedAntiDamping {
            theta: p.theta,
            sqrt_eps,
        });
    }
    if p.mu <= p.epsilon {
        return Err(Error::UnsupportedSpeedOrdering {
            epsilon: p.epsilon,
            mu: p.mu,
        });
    }
    Ok(p)
}

/// Design rates placed on the boundary ODE states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    pub delta1: f64,
    pub delta2: f64,
}

impl ControllerParams {
    pub const REFERENCE: ControllerParams = ControllerParams {
        delta1: 5.0,
        delta2: 2.0,
    };

    pub fn validate(self) -> Result<Self> {
        for (name, v) in [("delta1", self.delta1), ("delta2", self.delta2)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { name });
            }
            if v <= 0.0 {
                return Err(Error::NonPositiveCoefficient { name, value: v });
            }
        }
        Ok(self)
    }
}

/// Constant coefficient matrices of the matrix-form system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMatrices {
    pub sigma: Matrix2<f64>,
    pub lambda1: Matrix2<f64>,
    pub lambda2: Matrix2<f64>,
    pub f: Matrix2<f64>,
    pub a: Matrix2<f64>,
    pub b1: Matrix2<f64>,
    pub b2: Matrix2<f64>,
    pub c: Matrix2<f64>,
    pub d: Matrix2<f64>,
    pub kappa: f64,
}

impl SystemMatrices {
    pub fn sigma_inv(&self) -> Matrix2<f64> {
        Matrix2::new(1.0 / self.sigma[(0, 0)], 0.0, 0.0, 1.0 / self.sigma[(1, 1)])
    }

    /// `A + B₂D`, the drift of the boundary ODE.
    pub fn ode_drift(&self) -> Matrix2<f64> {
        self.a + self.b2 * self.d
    }

    /// `B₁ + B₂C`, the input matrix of `Z(0)` in the boundary ODE.
    pub fn ode_input(&self) -> Matrix2<f64> {
        self.b1 + self.b2 * self.c
    }
}

/// Assembles the nine constant matrices. `p` is assumed validated.
pub fn assemble_matrices(p: &BeamParams) -> SystemMatrices {
    let se = p.sqrt_eps();
    let sm = p.sqrt_mu();
    let den = se - p.theta;
    let kappa = 2.0 / den;
    let shear = p.a / (2.0 * p.epsilon * sm);
    SystemMatrices {
        sigma: Matrix2::new(1.0 / se, 0.0, 0.0, 1.0 / sm),
        lambda1: Matrix2::new(0.0, -1.0 / (2.0 * se), shear, 0.0),
        lambda2: Matrix2::new(0.0, 0.0, 0.0, -2.0 * shear),
        f: Matrix2::new(0.0, 0.0, 0.0, -shear),
        a: Matrix2::new(kappa * p.xi, -kappa, 0.0, 0.0),
        b1: Matrix2::new(kappa, 0.0, 0.0, 0.0),
        b2: Matrix2::new(0.0, 0.0, 0.0, -1.0 / sm),
        c: Matrix2::new(-(se + p.theta) / den, 0.0, 0.0, -1.0),
        d: Matrix2::new(-2.0 * se * p.xi / den, 2.0 * se / den, 0.0, 0.0),
        kappa,
    }
}

/// Uniform grid on `[0, 1]` with `n` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialGrid {
    n: usize,
}

impl SpatialGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_CELLS {
            return Err(Error::GridTooCoarse { n, min: MIN_CELLS });
        }
        Ok(Self { n })
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n {
            1.0
        } else {
            i as f64 / self.n as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(move |i| self.x(i))
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes().map(f).collect()
    }

    pub(crate) fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }
}
