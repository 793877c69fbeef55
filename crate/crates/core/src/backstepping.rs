//! Feedback laws, target-system matrices and the direct and inverse
//! Volterra transformations between `(Z, Y, X)` and `(σ, ψ, X)`.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::kernel::{tri, GainSet, KernelSet, PhiFunction, TriangularKernelGrid};
use crate::params::{BeamParams, SpatialGrid, SystemMatrices};
use crate::quadrature::{add_segment_weights, integrate_split, interp_linear};
use crate::riemann::{PhysicalState, RiemannState};

/// Boundary inputs at `x = 1` in both variable sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSignal {
    pub vp: f64,
    pub vr: f64,
    /// `uₓ(1)`
    pub v1: f64,
    /// `αₓ(1)`
    pub v2: f64,
}

impl ControlSignal {
    /// Fills in `V₁ = Vp − √ε uₜ(1)` and `V₂ = Vr − √μ αₜ(1)`.
    pub fn from_riemann(vp: f64, vr: f64, ut1: f64, alphat1: f64, params: &BeamParams) -> Self {
        Self {
            vp,
            vr,
            v1: vp - params.sqrt_eps() * ut1,
            v2: vr - params.sqrt_mu() * alphat1,
        }
    }
}

fn check_gains(gains: &GainSet, grid: &SpatialGrid, len: usize) -> Result<()> {
    if gains.n != grid.n() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: gains.n + 1,
        });
    }
    grid.check_len(len)
}

/// `(Vp, Vr) = ∫₀¹K(1,y)Z dy + ∫₀¹L(1,y)Y dy + Φ(1)X`.
pub fn control_riemann(rs: &RiemannState, gains: &GainSet, grid: &SpatialGrid) -> Result<(f64, f64)> {
    rs.check(grid)?;
    check_gains(gains, grid, rs.len())?;
    let mut v = gains.phi1 * rs.ode();
    for j in 0..rs.len() {
        v += gains.weights_k[j] * rs.z(j) + gains.weights_l[j] * rs.y(j);
    }
    Ok((v[0], v[1]))
}

/// `(V₁, V₂) = (uₓ(1), αₓ(1))` from the physical state, with the kernel
/// terms integrated by parts so that only `u, α, uₜ, αₜ` appear.
pub fn control_physical(ps: &PhysicalState, gains: &GainSet, params: &BeamParams, grid: &SpatialGrid) -> Result<(f64, f64)> {
    ps.check(grid)?;
    check_gains(gains, grid, ps.u.len())?;
    let n = gains.n;
    let h = gains.h();
    let speeds = [params.sqrt_eps(), params.sqrt_mu()];
    let fields = [(&ps.u, &ps.ut), (&ps.alpha, &ps.alphat)];
    let x0 = [ps.u[0], ps.alpha[0]];
    let mut out = [0.0; 2];
    for (m, v) in out.iter_mut().enumerate() {
        for (c, (w, wt)) in fields.iter().enumerate() {
            let g1 = gains.k[n][(m, c)] + gains.l[n][(m, c)];
            let g0 = gains.k[0][(m, c)] + gains.l[0][(m, c)];
            let gy_w: Vec<f64> = (0..=n).map(|j| (gains.k_y[j][(m, c)] + gains.l_y[j][(m, c)]) * w[j]).collect();
            *v += g1 * w[n] - g0 * w[0] - integrate_split(&gy_w, h, gains.jump_y);
            if m == 0 && c == 1 && gains.jump != 0.0 {
                *v -= gains.jump * interp_linear(w, h, gains.jump_y);
            }
            let odd: f64 = (0..=n)
                .map(|j| (gains.weights_k[j][(m, c)] - gains.weights_l[j][(m, c)]) * wt[j])
                .sum();
            *v += speeds[c] * odd + gains.phi1[(m, c)] * x0[c];
        }
        *v -= speeds[m] * fields[m].1[n];
    }
    Ok((out[0], out[1]))
}

/// The constant matrices of the target system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSystem {
    pub e1: Matrix2<f64>,
    pub e2: Matrix2<f64>,
    pub e3: Matrix2<f64>,
}

/// `E₁ = (B₁+B₂C)Φ(0) + A + B₂D`, `E₂ = CΦ(0) + D`, `E₃ = B₁ + B₂C`.
pub fn target_matrices(mats: &SystemMatrices, phi0: &Matrix2<f64>) -> TargetSystem {
    TargetSystem {
        e1: mats.ode_input() * phi0 + mats.ode_drift(),
        e2: mats.c * phi0 + mats.d,
        e3: mats.ode_input(),
    }
}

/// Target-system state: `σ = Z − ∫KZ − ∫LY − ΦX`, `ψ = Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub sigma: Vec<Vector2<f64>>,
    pub psi: Vec<Vector2<f64>>,
    pub x: Vector2<f64>,
}

impl TargetState {
    pub fn zeros(grid: &SpatialGrid) -> Self {
        Self {
            sigma: vec![Vector2::zeros(); grid.len()],
            psi: vec![Vector2::zeros(); grid.len()],
            x: Vector2::zeros(),
        }
    }

    /// `|σ(1)|`, which the feedback drives to zero.
    pub fn boundary_residual(&self) -> f64 {
        self.sigma.last().map_or(0.0, |v| v.amax())
    }

    pub fn sigma_sup(&self) -> f64 {
        self.sigma.iter().fold(0.0f64, |m, v| m.max(v.amax()))
    }

    /// `sup |σ(x)|` over `x ≥ from`.
    pub fn sigma_sup_from(&self, h: f64, from: f64) -> f64 {
        self.sigma
            .iter()
            .enumerate()
            .filter(|(i, _)| *i as f64 * h >= from - 1e-12)
            .fold(0.0f64, |m, (_, v)| m.max(v.amax()))
    }
}

fn check_kernels(kernels: &TriangularKernelGrid, grid: &SpatialGrid) -> Result<()> {
    if kernels.n != grid.n() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: kernels.n + 1,
        });
    }
    Ok(())
}

/// Applies the direct transformation node by node (jump-aware trapezoid).
pub fn transform_to_target(rs: &RiemannState, kernels: &TriangularKernelGrid, phi: &PhiFunction, grid: &SpatialGrid) -> Result<TargetState> {
    rs.check(grid)?;
    check_kernels(kernels, grid)?;
    let x = rs.ode();
    let sigma = (0..grid.len())
        .map(|i| {
            let (wk, wl) = kernels.row_weights(i);
            let mut v = rs.z(i) - phi.at(i) * x;
            for j in 0..=i {
                v -= wk[j] * rs.z(j) + wl[j] * rs.y(j);
            }
            v
        })
        .collect();
    Ok(TargetState {
        sigma,
        psi: (0..grid.len()).map(|i| rs.y(i)).collect(),
        x,
    })
}

/// Inverts the discrete direct transformation exactly by forward
/// substitution in `x`.
pub fn invert_transform(ts: &TargetState, kernels: &TriangularKernelGrid, phi: &PhiFunction, grid: &SpatialGrid) -> Result<RiemannState> {
    grid.check_len(ts.sigma.len())?;
    grid.check_len(ts.psi.len())?;
    check_kernels(kernels, grid)?;
    let mut z: Vec<Vector2<f64>> = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let (wk, wl) = kernels.row_weights(i);
        let mut rhs = ts.sigma[i] + phi.at(i) * ts.x;
        for j in 0..=i {
            rhs += wl[j] * ts.psi[j];
        }
        for j in 0..i {
            rhs += wk[j] * z[j];
        }
        let lhs = Matrix2::identity() - wk[i];
        let zi = lhs.lu().solve(&rhs).ok_or(Error::NonFinite { name: "transform diagonal" })?;
        z.push(zi);
    }
    Ok(riemann_from_parts(&z, &ts.psi, ts.x))
}

fn riemann_from_parts(z: &[Vector2<f64>], y: &[Vector2<f64>], x: Vector2<f64>) -> RiemannState {
    RiemannState {
        p: z.iter().map(|v| v[0]).collect(),
        r: z.iter().map(|v| v[1]).collect(),
        q: y.iter().map(|v| v[0]).collect(),
        s: y.iter().map(|v| v[1]).collect(),
        x1: x[0],
        x2: x[1],
    }
}

/// Kernels of the inverse map `Z = σ + ∫K̆σ + ∫L̆ψ + Φ̆X`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseKernelSet {
    /// `K̆` (with the same `k₁₂` jump as `K`) and `L̆`.
    pub kernels: TriangularKernelGrid,
    pub phi: PhiFunction,
}

/// Computes the inverse kernels from the resolvent identities
/// `K̆ = K + ∫_y^x K(x,s)K̆(s,y)ds`, `L̆ = L + ∫_y^x K̆(x,s)L(s,y)ds`,
/// `Φ̆ = Φ + ∫₀ˣ K̆(x,s)Φ(s)ds`.
pub fn inverse_kernels(set: &KernelSet) -> InverseKernelSet {
    let kg = &set.kernels;
    let n = kg.n;
    let h = kg.h();
    let (r, jump) = (kg.ratio, kg.jump);
    let e12 = Matrix2::new(0.0, 1.0, 0.0, 0.0);
    let mut inv = TriangularKernelGrid::zeros(n, r, jump);
    let kc = |i: usize, j: usize| kg.k_cont(i, j);
    let mut kic = vec![Matrix2::zeros(); tri(n, n) + 1];

    let weights_on = |i: usize, a: f64, b: f64| {
        let mut w = vec![0.0; i + 1];
        add_segment_weights(&mut w, h, a, b, 1.0);
        w
    };

    for j in 0..=n {
        let y = j as f64 * h;
        for i in j..=n {
            let x = i as f64 * h;
            let trap = weights_on(i, y, x);
            let upper_seg = weights_on(i, y.max(r * x), x);
            let lower_seg = weights_on(i, y, x.min(y / r));
            let mut rhs = kc(i, j);
            for l in j..i {
                rhs += kc(i, l) * kic[tri(l, j)] * trap[l] + e12 * kic[tri(l, j)] * (jump * upper_seg[l]);
            }
            let mut lower = Matrix2::zeros();
            for l in j..=i {
                lower += kc(i, l) * lower_seg[l];
            }
            rhs += lower * e12 * jump;
            let lhs = Matrix2::identity() - kc(i, i) * trap[i] - e12 * (jump * upper_seg[i]);
            kic[tri(i, j)] = lhs.try_inverse().map_or(rhs, |m| m * rhs);
        }
    }
    for (t, m) in kic.iter().enumerate() {
        for e in 0..4 {
            inv.k[e][t] = m[(e / 2, e % 2)];
        }
    }

    for i in 0..=n {
        let x = i as f64 * h;
        for j in 0..=i {
            let y = j as f64 * h;
            let trap = weights_on(i, y, x);
            let upper_seg = weights_on(i, y.max(r * x), x);
            let mut m = kg.l_at(i, j);
            for l in j..=i {
                let lsj = kg.l_at(l, j);
                m += inv.k_cont(i, l) * lsj * trap[l] + e12 * lsj * (jump * upper_seg[l]);
            }
            for e in 0..4 {
                inv.l[e][tri(i, j)] = m[(e / 2, e % 2)];
            }
        }
    }

    let phi = (0..=n)
        .map(|i| {
            let x = i as f64 * h;
            let trap = weights_on(i, 0.0, x);
            let upper_seg = weights_on(i, r * x, x);
            let mut m = set.phi.at(i);
            for l in 0..=i {
                m += inv.k_cont(i, l) * set.phi.at(l) * trap[l] + e12 * set.phi.at(l) * (jump * upper_seg[l]);
            }
            m
        })
        .collect();
    InverseKernelSet {
        kernels: inv,
        phi: PhiFunction { values: phi },
    }
}

/// Evaluates the inverse transformation with the inverse kernels by
/// quadrature. Agrees with [`invert_transform`] up to discretization error.
pub fn apply_inverse_kernels(ts: &TargetState, inv: &InverseKernelSet, grid: &SpatialGrid) -> Result<RiemannState> {
    grid.check_len(ts.sigma.len())?;
    grid.check_len(ts.psi.len())?;
    check_kernels(&inv.kernels, grid)?;
    let z: Vec<Vector2<f64>> = (0..grid.len())
        .map(|i| {
            let (wk, wl) = inv.kernels.row_weights(i);
            let mut v = ts.sigma[i] + inv.phi.at(i) * ts.x;
            for j in 0..=i {
                v += wk[j] * ts.sigma[j] + wl[j] * ts.psi[j];
            }
            v
        })
        .collect();
    Ok(riemann_from_parts(&z, &ts.psi, ts.x))
}

/// The kernels `Ξ₁(x)`, `Ξ₂(x,y)`, `Ξ₃(x,y)` of the target system's
/// integral terms, stored like [`TriangularKernelGrid`] entries (index
/// `i(i+1)/2 + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct XiKernels {
    pub n: usize,
    pub xi1: Vec<Matrix2<f64>>,
    pub xi2: Vec<Matrix2<f64>>,
    pub xi3: Vec<Matrix2<f64>>,
}

impl XiKernels {
    pub fn sup_norm(&self) -> f64 {
        self.xi1
            .iter()
            .chain(&self.xi2)
            .chain(&self.xi3)
            .fold(0.0f64, |m, v| m.max(v.amax()))
    }
}

/// `Ξ₁ = Λ₁Φ̆ + Λ₂ + ∫₀ˣFΦ̆`, `Ξ₂ = Λ₁K̆ + F + ∫_y^xFK̆`, `Ξ₃ = Λ₁L̆ + F + ∫_y^xFL̆`.
pub fn xi_kernels(inv: &InverseKernelSet, mats: &SystemMatrices) -> XiKernels {
    let kg = &inv.kernels;
    let n = kg.n;
    let h = kg.h();
    let len = tri(n, n) + 1;
    let mut xi2 = vec![Matrix2::zeros(); len];
    let mut xi3 = vec![Matrix2::zeros(); len];
    for j in 0..=n {
        let mut acc_k = Matrix2::zeros();
        let mut acc_l = Matrix2::zeros();
        for i in j..=n {
            if i > j {
                acc_k += (kg.k_at(i - 1, j) + kg.k_at(i, j)) * (0.5 * h);
                acc_l += (kg.l_at(i - 1, j) + kg.l_at(i, j)) * (0.5 * h);
            }
            xi2[tri(i, j)] = mats.lambda1 * kg.k_at(i, j) + mats.f + mats.f * acc_k;
            xi3[tri(i, j)] = mats.lambda1 * kg.l_at(i, j) + mats.f + mats.f * acc_l;
        }
    }
    let mut acc = Matrix2::zeros();
    let xi1 = (0..=n)
        .map(|i| {
            if i > 0 {
                acc += (inv.phi.at(i - 1) + inv.phi.at(i)) * (0.5 * h);
            }
            mats.lambda1 * inv.phi.at(i) + mats.lambda2 + mats.f * acc
        })
        .collect();
    XiKernels { n, xi1, xi2, xi3 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{extract_gains, phi0_matrix, solve_kernels, KernelSet, Phi0Design};
    use crate::params::{assemble_matrices, ControllerParams};
    use crate::riemann::{default_initial_state, to_riemann};

    fn grid(n: usize) -> SpatialGrid {
        SpatialGrid::new(n).unwrap()
    }

    fn smooth_state(g: &SpatialGrid) -> RiemannState {
        RiemannState {
            p: g.sample(|x| (2.0 * x).sin() - 0.4),
            q: g.sample(|x| x * x + 0.1),
            r: g.sample(|x| (1.0 - x).exp()),
            s: g.sample(|x| (5.0 * x).cos()),
            x1: 0.7,
            x2: -1.3,
        }
    }

    fn reference_kernels(n: usize) -> KernelSet {
        solve_kernels(&BeamParams::REFERENCE, &ControllerParams::REFERENCE, &grid(n)).unwrap()
    }

    #[test]
    fn zero_state_gives_zero_control() {
        let g = grid(16);
        let set = reference_kernels(16);
        let gains = extract_gains(&set);
        let zero = RiemannState::zeros(&g);
        assert_eq!(control_riemann(&zero, &gains, &g).unwrap(), (0.0, 0.0));
        let ps = PhysicalState::zeros(&g);
        assert_eq!(control_physical(&ps, &gains, &BeamParams::REFERENCE, &g).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn ode_term_only() {
        let g = grid(16);
        let mut gains = GainSet::zeros(16);
        gains.phi1 = Matrix2::identity();
        let mut rs = RiemannState::zeros(&g);
        rs.x1 = 2.8;
        assert_eq!(control_riemann(&rs, &gains, &g).unwrap(), (2.8, 0.0));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let gains = GainSet::zeros(16);
        let g = grid(20);
        let rs = RiemannState::zeros(&g);
        assert!(matches!(control_riemann(&rs, &gains, &g), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn reference_target_matrices() {
        let p = BeamParams::REFERENCE;
        let c = ControllerParams::REFERENCE;
        let mats = assemble_matrices(&p);
        let t = target_matrices(&mats, &phi0_matrix(&p, &c, &mats, Phi0Design::DiagonalE1));
        assert!((t.e1 - Matrix2::new(-5.0, 0.0, 0.0, -2.0)).amax() < 1e-12);
        assert!((t.e3 - Matrix2::new(1.0, 0.0, 0.0, 0.5f64.sqrt())).amax() < 1e-12);
        assert!((t.e2 - Matrix2::new(-1.0, 1.0, 0.0, 2.0 * 2f64.sqrt())).amax() < 1e-12);
    }

    #[test]
    fn tabulated_phi0_leaves_e1_upper_triangular() {
        let p = BeamParams::REFERENCE;
        let c = ControllerParams::REFERENCE;
        let mats = assemble_matrices(&p);
        let t = target_matrices(&mats, &phi0_matrix(&p, &c, &mats, Phi0Design::Tabulated));
        assert_eq!(t.e1[(1, 0)], 0.0);
        assert!((t.e1[(0, 0)] + 5.0).abs() < 1e-12 && (t.e1[(1, 1)] + 2.0).abs() < 1e-12);
        assert!((t.e1[(0, 1)] - mats.kappa / p.sqrt_mu()).abs() < 1e-12);
    }

    #[test]
    fn zero_kernels_give_identity_transform() {
        let g = grid(20);
        let kernels = TriangularKernelGrid::zeros(20, 0.5, 0.0);
        let phi = PhiFunction {
            values: vec![Matrix2::zeros(); 21],
        };
        let rs = smooth_state(&g);
        let ts = transform_to_target(&rs, &kernels, &phi, &g).unwrap();
        for i in 0..=20 {
            assert_eq!(ts.sigma[i], rs.z(i));
            assert_eq!(ts.psi[i], rs.y(i));
        }
        assert_eq!(invert_transform(&ts, &kernels, &phi, &g).unwrap(), rs);
    }

    #[test]
    fn zero_target_state_maps_to_zero() {
        let g = grid(16);
        let set = reference_kernels(16);
        let rs = invert_transform(&TargetState::zeros(&g), &set.kernels, &set.phi, &g).unwrap();
        assert_eq!(rs, RiemannState::zeros(&g));
    }

    #[test]
    fn discrete_inverse_is_exact() {
        let g = grid(40);
        let set = reference_kernels(40);
        let rs = smooth_state(&g);
        let ts = transform_to_target(&rs, &set.kernels, &set.phi, &g).unwrap();
        let back = invert_transform(&ts, &set.kernels, &set.phi, &g).unwrap();
        for (a, b) in back.p.iter().zip(&rs.p).chain(back.r.iter().zip(&rs.r)) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn resolvent_inverse_converges_second_order() {
        let err = |n: usize| {
            let g = grid(n);
            let set = reference_kernels(n);
            let rs = smooth_state(&g);
            let ts = transform_to_target(&rs, &set.kernels, &set.phi, &g).unwrap();
            let back = apply_inverse_kernels(&ts, &inverse_kernels(&set), &g).unwrap();
            back.p
                .iter()
                .zip(&rs.p)
                .chain(back.r.iter().zip(&rs.r))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(20) / err(40);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_kernel_inverse_and_xi() {
        let g = grid(12);
        let mut set = reference_kernels(12);
        set.kernels = TriangularKernelGrid::zeros(12, set.problem.ratio, 0.0);
        let inv = inverse_kernels(&set);
        assert_eq!(inv.kernels.max_abs(), 0.0);
        assert_eq!(inv.phi, set.phi);
        let mats = set.problem.mats;
        let xi = xi_kernels(&inv, &mats);
        assert!(xi.xi2.iter().chain(&xi.xi3).all(|m| *m == mats.f));
        assert_eq!(g.len(), xi.xi1.len());
    }

    #[test]
    fn xi_collapses_without_coupling() {
        let set = reference_kernels(12);
        let inv = inverse_kernels(&set);
        let mut mats = set.problem.mats;
        mats.lambda1 = Matrix2::zeros();
        mats.f = Matrix2::zeros();
        let xi = xi_kernels(&inv, &mats);
        assert!(xi.xi2.iter().chain(&xi.xi3).all(|m| *m == Matrix2::zeros()));
        assert!(xi.xi1.iter().all(|m| *m == mats.lambda2));
    }

    #[test]
    fn xi_bounded_under_refinement() {
        let sup = |n: usize| {
            let set = reference_kernels(n);
            xi_kernels(&inverse_kernels(&set), &set.problem.mats).sup_norm()
        };
        let (a, b) = (sup(20), sup(40));
        assert!(a.is_finite() && (a - b).abs() < 0.05 * b);
    }

    #[test]
    fn physical_and_riemann_laws_agree() {
        let p = BeamParams::REFERENCE;
        for n in [40, 80] {
            let g = grid(n);
            let gains = extract_gains(&reference_kernels(n));
            let ps = default_initial_state(&g);
            let rs = to_riemann(&ps, &p, &g).unwrap();
            let (vp, vr) = control_riemann(&rs, &gains, &g).unwrap();
            let (v1, v2) = control_physical(&ps, &gains, &p, &g).unwrap();
            let h2 = (1.0 / n as f64).powi(2);
            assert!((vp - (v1 + p.sqrt_eps() * ps.ut[n])).abs() < 10.0 * h2);
            assert!((vr - (v2 + p.sqrt_mu() * ps.alphat[n])).abs() < 10.0 * h2);
        }
    }

    #[test]
    fn control_signal_redefinition() {
        let c = ControlSignal::from_riemann(1.0, 2.0, 0.5, 0.25, &BeamParams::REFERENCE);
        assert_eq!(c.v1, 0.5);
        assert!((c.v2 - (2.0 - 0.25 * 2f64.sqrt())).abs() < 1e-15);
    }
}
