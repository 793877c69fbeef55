//! Explicit time stepping of the transport system
//!
//! ```text
//! Zₜ =  ΣZₓ + Λ₁(Z+Y) + Λ₂X + F∫₀ˣ(Z+Y)
//! Yₜ = −ΣYₓ + Λ₁(Z+Y) + Λ₂X + F∫₀ˣ(Z+Y)
//! Ẋ  = AX + B₁Z(0) + B₂Y(0),   Y(0) = CZ(0) + DX,   Z(1) = V
//! ```
//!
//! with first-order upwinding, explicit sources and a midpoint rule for `X`.

use nalgebra::{Matrix2, Vector2};

use crate::analysis::energy_riemann;
use crate::backstepping::ControlSignal;
use crate::error::{Error, Result};
use crate::kernel::GainSet;
use crate::params::{assemble_matrices, BeamParams, SpatialGrid, SystemMatrices};
use crate::quadrature::cumtrapz;
use crate::riemann::{from_riemann, to_riemann, PhysicalState, RiemannState};

/// States larger than this in magnitude count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub cfl: f64,
    pub t_final: f64,
    pub snapshot_stride: usize,
    pub mode: Mode,
}

impl SimConfig {
    pub fn new(mode: Mode, cfl: f64, t_final: f64) -> Self {
        Self {
            cfl,
            t_final,
            snapshot_stride: 25,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfl.is_finite() && self.t_final.is_finite()) {
            return Err(Error::NonFinite { name: "cfl/t_final" });
        }
        if self.cfl <= 0.0 {
            return Err(Error::NonPositiveCoefficient {
                name: "cfl",
                value: self.cfl,
            });
        }
        if self.cfl > 1.0 {
            return Err(Error::CflViolation { courant: self.cfl });
        }
        if self.t_final <= 0.0 {
            return Err(Error::NonPositiveCoefficient {
                name: "t_final",
                value: self.t_final,
            });
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps and the step size `t_final / steps ≤ cfl·h·√ε`.
    pub fn steps(&self, params: &BeamParams, grid: &SpatialGrid) -> (usize, f64) {
        let dt_max = self.cfl * grid.h() * params.sqrt_eps();
        let steps = ((self.t_final / dt_max) - 1e-9).ceil().max(1.0) as usize;
        (steps, self.t_final / steps as f64)
    }
}

/// Sets the incoming values `p(1)`, `r(1)` once the rest of the new time
/// level is known, and returns them.
pub trait BoundaryLaw {
    fn apply(&self, rs: &mut RiemannState) -> Vector2<f64>;
}

/// Prescribed `(Vp, Vr)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GivenControl(pub f64, pub f64);

impl BoundaryLaw for GivenControl {
    fn apply(&self, rs: &mut RiemannState) -> Vector2<f64> {
        let n = rs.len() - 1;
        rs.p[n] = self.0;
        rs.r[n] = self.1;
        Vector2::new(self.0, self.1)
    }
}

/// `uₓ(1) = αₓ(1) = 0`, i.e. `p(1) = −q(1)`, `r(1) = −s(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeEnd;

impl BoundaryLaw for FreeEnd {
    fn apply(&self, rs: &mut RiemannState) -> Vector2<f64> {
        let n = rs.len() - 1;
        rs.p[n] = -rs.q[n];
        rs.r[n] = -rs.s[n];
        Vector2::new(rs.p[n], rs.r[n])
    }
}

/// The backstepping law, solved together with its own `y = 1` quadrature
/// node so that the discrete control integral is satisfied exactly.
#[derive(Debug, Clone, Copy)]
pub struct Feedback<'a> {
    gains: &'a GainSet,
    closure: Matrix2<f64>,
}

impl<'a> Feedback<'a> {
    pub fn new(gains: &'a GainSet) -> Result<Self> {
        let closure = (Matrix2::identity() - gains.weights_k[gains.n])
            .try_inverse()
            .ok_or(Error::NonFinite { name: "feedback closure" })?;
        Ok(Self { gains, closure })
    }
}

impl BoundaryLaw for Feedback<'_> {
    fn apply(&self, rs: &mut RiemannState) -> Vector2<f64> {
        let g = self.gains;
        let n = g.n;
        let mut rest = g.phi1 * rs.ode();
        for j in 0..=n {
            if j < n {
                rest += g.weights_k[j] * rs.z(j);
            }
            rest += g.weights_l[j] * rs.y(j);
        }
        let v = self.closure * rest;
        rs.p[n] = v[0];
        rs.r[n] = v[1];
        v
    }
}

fn courant(mats: &SystemMatrices, dt: f64, grid: &SpatialGrid) -> f64 {
    mats.sigma[(0, 0)].max(mats.sigma[(1, 1)]) * dt / grid.h()
}

/// Source terms of the `Z`/`Y` equations: `(first components, second components)`.
fn sources(rs: &RiemannState, mats: &SystemMatrices, h: f64) -> (Vec<f64>, Vec<f64>) {
    let l12 = mats.lambda1[(0, 1)];
    let l21 = mats.lambda1[(1, 0)];
    let l2 = mats.lambda2[(1, 1)];
    let f22 = mats.f[(1, 1)];
    let shear_int = cumtrapz(&rs.r.iter().zip(&rs.s).map(|(r, s)| r + s).collect::<Vec<_>>(), h);
    let first = rs.r.iter().zip(&rs.s).map(|(r, s)| l12 * (r + s)).collect();
    let second = (0..rs.len())
        .map(|i| l21 * (rs.p[i] + rs.q[i]) + l2 * rs.x2 + f22 * shear_int[i])
        .collect();
    (first, second)
}

/// One step with a prescribed boundary input.
pub fn step(rs: &RiemannState, mats: &SystemMatrices, control: (f64, f64), dt: f64, grid: &SpatialGrid) -> Result<RiemannState> {
    step_with(rs, mats, &GivenControl(control.0, control.1), dt, grid)
}

/// One step; the boundary input at `x = 1` comes from `law`.
pub fn step_with(rs: &RiemannState, mats: &SystemMatrices, law: &dyn BoundaryLaw, dt: f64, grid: &SpatialGrid) -> Result<RiemannState> {
    rs.check(grid)?;
    let c = courant(mats, dt, grid);
    if c > 1.0 + 1e-12 {
        return Err(Error::CflViolation { courant: c });
    }
    let n = grid.n();
    let h = grid.h();
    let (s1, s2) = (mats.sigma[(0, 0)], mats.sigma[(1, 1)]);
    let src_a = sources(rs, mats, h);
    let mut next = rs.clone();
    for i in 0..n {
        next.p[i] = rs.p[i] + dt * (s1 * (rs.p[i + 1] - rs.p[i]) / h + src_a.0[i]);
        next.r[i] = rs.r[i] + dt * (s2 * (rs.r[i + 1] - rs.r[i]) / h + src_a.1[i]);
    }
    for i in 1..=n {
        next.q[i] = rs.q[i] - dt * s1 * (rs.q[i] - rs.q[i - 1]) / h + dt * src_a.0[i];
        next.s[i] = rs.s[i] - dt * s2 * (rs.s[i] - rs.s[i - 1]) / h + dt * src_a.1[i];
    }
    // Heun corrector on the sources.
    let mut pred = next.clone();
    let xp = rs.ode() + (mats.a * rs.ode() + mats.b1 * rs.z(0) + mats.b2 * rs.y(0)) * dt;
    pred.x1 = xp[0];
    pred.x2 = xp[1];
    let src_b = sources(&pred, mats, h);
    for i in 0..=n {
        let c1 = 0.5 * dt * (src_b.0[i] - src_a.0[i]);
        let c2 = 0.5 * dt * (src_b.1[i] - src_a.1[i]);
        if i < n {
            next.p[i] += c1;
            next.r[i] += c2;
        }
        if i > 0 {
            next.q[i] += c1;
            next.s[i] += c2;
        }
    }

    let x = rs.ode();
    let z0 = (rs.z(0) + next.z(0)) * 0.5;
    let ode_rhs = |x: Vector2<f64>| mats.a * x + mats.b1 * z0 + mats.b2 * (mats.c * z0 + mats.d * x);
    let half = x + ode_rhs(x) * (0.5 * dt);
    let xn = x + ode_rhs(half) * dt;
    next.x1 = xn[0];
    next.x2 = xn[1];

    let y0n = mats.c * next.z(0) + mats.d * xn;
    next.q[0] = y0n[0];
    next.s[0] = y0n[1];
    law.apply(&mut next);
    Ok(next)
}

/// A stored state.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub riemann: RiemannState,
    pub physical: PhysicalState,
}

/// Per-step records and periodic snapshots of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub n: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub controls: Vec<ControlSignal>,
    pub snapshots: Vec<Snapshot>,
    /// Time at which the divergence guard stopped an open-loop run.
    pub diverged_at: Option<f64>,
}

impl TimeSeries {
    pub fn final_energy_ratio(&self) -> f64 {
        self.energy.last().copied().unwrap_or(0.0) / self.energy[0]
    }

    pub fn max_energy_ratio(&self) -> f64 {
        self.energy.iter().fold(0.0f64, |m, e| m.max(*e)) / self.energy[0]
    }
}

/// Integrates from `initial` to `cfg.t_final`. `gains` is required in closed
/// loop and ignored in open loop.
pub fn simulate(initial: &PhysicalState, params: &BeamParams, cfg: &SimConfig, gains: Option<&GainSet>, grid: &SpatialGrid) -> Result<TimeSeries> {
    let params = params.validate()?;
    cfg.validate()?;
    let rs0 = to_riemann(initial, &params, grid)?;
    simulate_riemann(&rs0, &params, cfg, gains, grid)
}

/// As [`simulate`], starting from Riemann variables.
pub fn simulate_riemann(rs0: &RiemannState, params: &BeamParams, cfg: &SimConfig, gains: Option<&GainSet>, grid: &SpatialGrid) -> Result<TimeSeries> {
    rs0.check(grid)?;
    let mats = assemble_matrices(params);
    let feedback;
    let law: &dyn BoundaryLaw = match cfg.mode {
        Mode::OpenLoop => &FreeEnd,
        Mode::ClosedLoop => {
            let g = gains.ok_or_else(|| Error::Config("closed loop requires gains".into()))?;
            if g.n != grid.n() {
                return Err(Error::GridMismatch {
                    expected: grid.len(),
                    got: g.n + 1,
                });
            }
            feedback = Feedback::new(g)?;
            &feedback
        }
    };
    let (steps, dt) = cfg.steps(params, grid);
    let c = courant(&mats, dt, grid);
    if c > 1.0 + 1e-12 {
        return Err(Error::CflViolation { courant: c });
    }
    let n = grid.n();
    let signal = |rs: &RiemannState| {
        let ut1 = (rs.p[n] - rs.q[n]) / (2.0 * params.sqrt_eps());
        let at1 = (rs.r[n] - rs.s[n]) / (2.0 * params.sqrt_mu());
        ControlSignal::from_riemann(rs.p[n], rs.r[n], ut1, at1, params)
    };
    let snapshot = |t: f64, rs: &RiemannState| -> Result<Snapshot> {
        Ok(Snapshot {
            t,
            riemann: rs.clone(),
            physical: from_riemann(rs, params, grid)?,
        })
    };

    let mut series = TimeSeries {
        n,
        dt,
        times: vec![0.0],
        energy: vec![energy_riemann(rs0, params, grid)],
        controls: vec![signal(rs0)],
        snapshots: vec![snapshot(0.0, rs0)?],
        diverged_at: None,
    };
    let mut rs = rs0.clone();
    for k in 1..=steps {
        let t = k as f64 * dt;
        rs = step_with(&rs, &mats, law, dt, grid)?;
        if !rs.is_finite_below(DIVERGENCE_LIMIT) {
            if cfg.mode == Mode::OpenLoop {
                series.diverged_at = Some(t);
                break;
            }
            return Err(Error::NonFiniteState {
                time: t,
                limit: DIVERGENCE_LIMIT,
            });
        }
        series.times.push(t);
        series.energy.push(energy_riemann(&rs, params, grid));
        series.controls.push(signal(&rs));
        if k % cfg.snapshot_stride == 0 || k == steps {
            series.snapshots.push(snapshot(t, &rs)?);
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{extract_gains, solve_kernels};
    use crate::params::ControllerParams;
    use crate::riemann::default_initial_state;

    fn grid(n: usize) -> SpatialGrid {
        SpatialGrid::new(n).unwrap()
    }

    #[test]
    fn equilibrium_is_preserved() {
        let g = grid(20);
        let mats = assemble_matrices(&BeamParams::REFERENCE);
        let zero = RiemannState::zeros(&g);
        assert_eq!(step(&zero, &mats, (0.0, 0.0), 0.01, &g).unwrap(), zero);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = grid(20);
        let mats = assemble_matrices(&BeamParams::REFERENCE);
        let zero = RiemannState::zeros(&g);
        assert!(matches!(step(&zero, &mats, (0.0, 0.0), 0.06, &g), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn pure_transport_moves_the_bump_left() {
        let p = BeamParams {
            epsilon: 1.0,
            mu: 2.0,
            a: 0.0,
            theta: 0.0,
            xi: 0.0,
        };
        let g = grid(400);
        let mats = assemble_matrices(&p);
        let bump = |x: f64| if (0.4..0.6).contains(&x) { (10.0 * std::f64::consts::PI * (x - 0.4)).sin().powi(2) } else { 0.0 };
        let mut rs = RiemannState::zeros(&g);
        rs.p = g.sample(bump);
        let peak = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 as f64 * g.h();
        let start = peak(&rs.p);
        let dt = 0.5 * g.h();
        for _ in 0..100 {
            rs = step(&rs, &mats, (0.0, 0.0), dt, &g).unwrap();
        }
        let moved = start - peak(&rs.p);
        assert!((moved - 100.0 * dt).abs() < 2.0 * g.h(), "moved {moved}");
        assert!(rs.p.iter().all(|v| *v <= 1.0 + 1e-12));
        assert!(rs.q.iter().chain(&rs.r).chain(&rs.s).all(|v| *v == 0.0));
    }

    #[test]
    fn reference_ode_starts_at_rest() {
        let g = grid(50);
        let p = BeamParams::REFERENCE;
        let mats = assemble_matrices(&p);
        let rs = to_riemann(&default_initial_state(&g), &p, &g).unwrap();
        let xdot = mats.a * rs.ode() + mats.b1 * rs.z(0) + mats.b2 * rs.y(0);
        assert!(xdot[0].abs() < 1e-12);
    }

    #[test]
    fn boundary_conditions_hold_after_each_step() {
        let g = grid(40);
        let p = BeamParams::REFERENCE;
        let mats = assemble_matrices(&p);
        let gains = extract_gains(&solve_kernels(&p, &ControllerParams::REFERENCE, &g).unwrap());
        let fb = Feedback::new(&gains).unwrap();
        let mut rs = to_riemann(&default_initial_state(&g), &p, &g).unwrap();
        for _ in 0..30 {
            rs = step_with(&rs, &mats, &fb, 0.02, &g).unwrap();
            assert_eq!(rs.s[0] + rs.r[0], 0.0);
            let y0 = mats.c * rs.z(0) + mats.d * rs.ode();
            assert!((rs.q[0] - y0[0]).abs() < 1e-14);
            let (vp, vr) = crate::backstepping::control_riemann(&rs, &gains, &g).unwrap();
            assert!((rs.p[40] - vp).abs() < 1e-10 && (rs.r[40] - vr).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_initial_state_stays_zero_in_closed_loop() {
        let g = grid(20);
        let p = BeamParams::REFERENCE;
        let gains = extract_gains(&solve_kernels(&p, &ControllerParams::REFERENCE, &g).unwrap());
        let cfg = SimConfig::new(Mode::ClosedLoop, 0.8, 1.0);
        let ts = simulate(&PhysicalState::zeros(&g), &p, &cfg, Some(&gains), &g).unwrap();
        assert!(ts.energy.iter().all(|e| *e == 0.0));
        assert!(ts.controls.iter().all(|c| c.vp == 0.0 && c.vr == 0.0));
    }

    #[test]
    fn flow_is_linear() {
        let g = grid(20);
        let p = BeamParams::REFERENCE;
        let gains = extract_gains(&solve_kernels(&p, &ControllerParams::REFERENCE, &g).unwrap());
        let init = default_initial_state(&g);
        for mode in [Mode::OpenLoop, Mode::ClosedLoop] {
            let cfg = SimConfig::new(mode, 0.8, 1.0);
            let a = simulate(&init, &p, &cfg, Some(&gains), &g).unwrap();
            let b = simulate(&init.scaled(3.0), &p, &cfg, Some(&gains), &g).unwrap();
            let (sa, sb) = (a.snapshots.last().unwrap(), b.snapshots.last().unwrap());
            let scale = sa.riemann.max_abs();
            for (x, y) in sa.riemann.p.iter().zip(&sb.riemann.p) {
                assert!((3.0 * x - y).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn closed_loop_requires_gains() {
        let g = grid(20);
        let cfg = SimConfig::new(Mode::ClosedLoop, 0.8, 1.0);
        let err = simulate(&default_initial_state(&g), &BeamParams::REFERENCE, &cfg, None, &g).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn step_count_respects_cfl() {
        let g = grid(200);
        let cfg = SimConfig::new(Mode::OpenLoop, 0.8, 20.0);
        let (steps, dt) = cfg.steps(&BeamParams::REFERENCE, &g);
        assert_eq!(steps, 5000);
        assert!((dt - 0.004).abs() < 1e-15);
    }
}
