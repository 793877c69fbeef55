//! Backstepping kernels `K(x,y)`, `L(x,y)` on the triangle `0 ≤ y ≤ x ≤ 1`,
//! the gain function `Φ(x)` and the absorption term `ω₂₁(x)`.
//!
//! The kernels satisfy
//!
//! ```text
//! Σ K_x + K_y Σ = (K+L)Λ₁ − Ω(x)K − F + ∫_y^x (K+L)(x,s) ds F
//! Σ L_x − L_y Σ = (K+L)Λ₁ − Ω(x)L − F + ∫_y^x (K+L)(x,s) ds F
//! Σ L(x,x) + L(x,x)Σ = −Λ₁
//! Σ K(x,x) − K(x,x)Σ = −Λ₁ + Ω(x)
//! K(x,0) = L(x,0) ΣCΣ⁻¹ + Φ(x)(B₁ + B₂C)Σ⁻¹
//! Φ' = Σ⁻¹[Φ(A + B₂D) − ΩΦ − Λ₂ + ∫₀ˣ(K+L)dy Λ₂ + L(x,0)ΣD]
//! ```
//!
//! Entry `(m, c)` of either kernel is transported along the direction
//! `(σ_m, ±σ_c)`. Every `L` entry takes its data from the diagonal. `k₁₁`,
//! `k₂₁`, `k₂₂` take data from `y = 0`. `k₁₂` takes the diagonal value above
//! the characteristic line `y = (σ₂/σ₁)x` through the origin and the `y = 0`
//! value below it; the two values disagree at the origin, so `k₁₂` jumps by a
//! constant `J` across that line. The jump is carried analytically: the grid
//! stores the continuous part `k̃₁₂ = k₁₂ − J·H(y − rx)`, and every
//! interpolation, path integral and quadrature splits at the line.
//!
//! The solver is a successive-approximation sweep: each sweep marches in `x`,
//! advancing `Φ` by one RK4 step, then recomputing every kernel node of the
//! row by trapezoid integration of the right-hand side along the full
//! characteristic back to its foot, then refreshing `ω₂₁` and the row
//! integrals. Sweeps repeat until the largest nodal change drops below `tol`.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::params::{assemble_matrices, BeamParams, ControllerParams, SpatialGrid, SystemMatrices};
use crate::quadrature::{add_segment_weights, cubic_weights, interp_linear, piecewise_derivative};

/// Additive constant in `ω₂₁(x) = (1/√μ − 1/√ε)k₂₁(x,x) + const`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OmegaConstant {
    /// `(Λ₁)₂₁ = a/(2ε√μ)`; makes the `(2,1)` diagonal condition hold identically.
    #[default]
    Consistent,
    /// `a/(2ε)`, kept for comparison only.
    Printed,
}

/// How `Φ(0)` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phi0Design {
    /// `Φ(0) = (B₁+B₂C)⁻¹(diag(−δ₁,−δ₂) − A − B₂D)`, so that
    /// `E₁ = diag(−δ₁, −δ₂)` exactly. Differs from the tabulated form only in
    /// `φ₁₂(0) = 1`.
    #[default]
    DiagonalE1,
    /// The tabulated closed form with `φ₁₂(0) = 1 + 1/√μ`; `E₁` is then upper
    /// triangular with the same eigenvalues.
    Tabulated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub omega_constant: OmegaConstant,
    pub phi0: Phi0Design,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            omega_constant: OmegaConstant::Consistent,
            phi0: Phi0Design::DiagonalE1,
        }
    }
}

/// The design value of `Φ(0)`.
pub fn phi0_matrix(params: &BeamParams, ctrl: &ControllerParams, mats: &SystemMatrices, design: Phi0Design) -> Matrix2<f64> {
    match design {
        Phi0Design::DiagonalE1 => {
            let target = Matrix2::new(-ctrl.delta1, 0.0, 0.0, -ctrl.delta2);
            let input = mats.ode_input();
            let inv = input.try_inverse().expect("B1 + B2 C is diagonal with nonzero entries");
            inv * (target - mats.ode_drift())
        }
        Phi0Design::Tabulated => Matrix2::new(
            -params.xi - ctrl.delta1 / mats.kappa,
            1.0 + 1.0 / params.sqrt_mu(),
            0.0,
            -ctrl.delta2 * params.sqrt_mu(),
        ),
    }
}

/// Closed-form diagonal values: `l_mc(x,x) = −(Λ₁)_mc/(σ_m+σ_c)`.
pub fn l_diagonal(mats: &SystemMatrices) -> Matrix2<f64> {
    let s = [mats.sigma[(0, 0)], mats.sigma[(1, 1)]];
    Matrix2::from_fn(|m, c| -mats.lambda1[(m, c)] / (s[m] + s[c]))
}

/// Closed-form diagonal value `k₁₂(x,x) = −(Λ₁)₁₂/(σ₁−σ₂)`.
pub fn k12_diagonal(mats: &SystemMatrices) -> f64 {
    -mats.lambda1[(0, 1)] / (mats.sigma[(0, 0)] - mats.sigma[(1, 1)])
}

/// Everything about the kernel problem that does not change during the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelProblem {
    pub params: BeamParams,
    pub ctrl: ControllerParams,
    pub mats: SystemMatrices,
    pub options: KernelOptions,
    pub phi0: Matrix2<f64>,
    pub l_diag: Matrix2<f64>,
    pub k12_diag: f64,
    /// `ΣCΣ⁻¹`
    bc_l: Matrix2<f64>,
    /// `(B₁+B₂C)Σ⁻¹`
    bc_phi: Matrix2<f64>,
    pub omega_const: f64,
    /// `r = σ₂/σ₁`, slope of the `k₁₂` discontinuity line.
    pub ratio: f64,
    /// Jump of `k₁₂` across `y = rx` (upper minus lower).
    pub jump: f64,
}

impl KernelProblem {
    pub fn new(params: &BeamParams, ctrl: &ControllerParams, options: KernelOptions) -> Self {
        let mats = assemble_matrices(params);
        let phi0 = phi0_matrix(params, ctrl, &mats, options.phi0);
        let sigma_inv = mats.sigma_inv();
        let bc_l = mats.sigma * mats.c * sigma_inv;
        let bc_phi = mats.ode_input() * sigma_inv;
        let l_diag = l_diagonal(&mats);
        let k12_diag = k12_diagonal(&mats);
        let omega_const = match options.omega_constant {
            OmegaConstant::Consistent => mats.lambda1[(1, 0)],
            OmegaConstant::Printed => params.a / (2.0 * params.epsilon),
        };
        let k_origin = l_diag * bc_l + phi0 * bc_phi;
        Self {
            params: *params,
            ctrl: *ctrl,
            ratio: mats.sigma[(1, 1)] / mats.sigma[(0, 0)],
            jump: k12_diag - k_origin[(0, 1)],
            mats,
            options,
            phi0,
            l_diag,
            k12_diag,
            bc_l,
            bc_phi,
            omega_const,
        }
    }

    /// The `y = 0` boundary value of `K` given `L(x,0)` and `Φ(x)`.
    pub fn k_bottom(&self, l_bottom: &Matrix2<f64>, phi: &Matrix2<f64>) -> Matrix2<f64> {
        l_bottom * self.bc_l + phi * self.bc_phi
    }

    fn speed(&self, m: usize) -> f64 {
        self.mats.sigma[(m, m)]
    }

    /// Right-hand side of the `Φ` ODE.
    pub fn phi_rhs(&self, phi: &Matrix2<f64>, omega: f64, l_bottom: &Matrix2<f64>, row_int: Vector2<f64>) -> Matrix2<f64> {
        let m = &self.mats;
        let om = Matrix2::new(0.0, 0.0, omega, 0.0);
        let lam2 = m.lambda2[(1, 1)];
        let int_term = Matrix2::new(0.0, row_int[0] * lam2, 0.0, row_int[1] * lam2);
        m.sigma_inv() * (phi * m.ode_drift() - om * phi - m.lambda2 + int_term + l_bottom * m.sigma * m.d)
    }
}

#[inline]
pub(crate) fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// `K` and `L` sampled on the triangular grid. Entry `e = 2m + c` holds the
/// `(m, c)` component; `k[1]` holds the continuous part of `k₁₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularKernelGrid {
    pub n: usize,
    pub k: [Vec<f64>; 4],
    pub l: [Vec<f64>; 4],
    pub ratio: f64,
    pub jump: f64,
}

/// Interpolation stencil on the triangular grid.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    idx: [usize; 4],
    w: [f64; 4],
}

impl Stencil {
    #[inline]
    fn eval(&self, f: &[f64]) -> f64 {
        self.w[0] * f[self.idx[0]] + self.w[1] * f[self.idx[1]] + self.w[2] * f[self.idx[2]] + self.w[3] * f[self.idx[3]]
    }
}

impl TriangularKernelGrid {
    pub fn zeros(n: usize, ratio: f64, jump: f64) -> Self {
        let len = tri(n, n) + 1;
        let z = || vec![0.0; len];
        Self {
            n,
            k: [z(), z(), z(), z()],
            l: [z(), z(), z(), z()],
            ratio,
            jump,
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Whether node `(i, j)` lies on or above the `k₁₂` discontinuity line.
    pub fn is_upper(&self, i: usize, j: usize) -> bool {
        j as f64 >= self.ratio * i as f64 - 1e-9
    }

    /// Full `K(x_i, y_j)` including the jump of `k₁₂`.
    pub fn k_at(&self, i: usize, j: usize) -> Matrix2<f64> {
        let mut m = self.k_cont(i, j);
        if self.is_upper(i, j) {
            m[(0, 1)] += self.jump;
        }
        m
    }

    /// Continuous part of `K(x_i, y_j)`.
    pub fn k_cont(&self, i: usize, j: usize) -> Matrix2<f64> {
        let t = tri(i, j);
        Matrix2::new(self.k[0][t], self.k[1][t], self.k[2][t], self.k[3][t])
    }

    pub fn l_at(&self, i: usize, j: usize) -> Matrix2<f64> {
        let t = tri(i, j);
        Matrix2::new(self.l[0][t], self.l[1][t], self.l[2][t], self.l[3][t])
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..=self.n {
            for j in 0..=i {
                m = m.max(self.k_at(i, j).amax()).max(self.l_at(i, j).amax());
            }
        }
        m
    }

    fn stencil(&self, x: f64, y: f64) -> Stencil {
        let n = self.n;
        let t = (x * n as f64).clamp(0.0, n as f64);
        let i = (t.floor() as usize).min(n - 1);
        let tx = t - i as f64;
        let u = (y * n as f64).clamp(0.0, t);
        let j = u.floor() as usize;
        if j >= i {
            let ty = (u - i as f64).clamp(0.0, tx);
            Stencil {
                idx: [tri(i, i), tri(i + 1, i), tri(i + 1, i + 1), tri(i, i)],
                w: [1.0 - tx, tx - ty, ty, 0.0],
            }
        } else {
            let ty = u - j as f64;
            Stencil {
                idx: [tri(i, j), tri(i + 1, j), tri(i, j + 1), tri(i + 1, j + 1)],
                w: [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
            }
        }
    }

    /// Interpolated full `K` at an arbitrary point of the triangle.
    pub fn k_interp(&self, x: f64, y: f64) -> Matrix2<f64> {
        let st = self.stencil(x, y);
        let mut m = Matrix2::from_fn(|a, b| st.eval(&self.k[2 * a + b]));
        if y >= self.ratio * x {
            m[(0, 1)] += self.jump;
        }
        m
    }

    pub fn l_interp(&self, x: f64, y: f64) -> Matrix2<f64> {
        let st = self.stencil(x, y);
        Matrix2::from_fn(|a, b| st.eval(&self.l[2 * a + b]))
    }

    /// Nodal weight matrices for `∫₀^{x_i} K(x_i,y) Z(y) dy ≈ Σ_j W_j Z_j` and
    /// the same for `L`, with the `k₁₂` jump integrated exactly.
    pub fn row_weights(&self, i: usize) -> (Vec<Matrix2<f64>>, Vec<Matrix2<f64>>) {
        let h = self.h();
        let xi = i as f64 * h;
        let mut trap = vec![0.0; i + 1];
        add_segment_weights(&mut trap, h, 0.0, xi, 1.0);
        let mut jump_w = vec![0.0; i + 1];
        add_segment_weights(&mut jump_w, h, self.ratio * xi, xi, self.jump);
        let wk = (0..=i)
            .map(|j| {
                let mut m = self.k_cont(i, j) * trap[j];
                m[(0, 1)] += jump_w[j];
                m
            })
            .collect();
        let wl = (0..=i).map(|j| self.l_at(i, j) * trap[j]).collect();
        (wk, wl)
    }
}

/// `Φ(x)` at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiFunction {
    pub values: Vec<Matrix2<f64>>,
}

impl PhiFunction {
    pub fn at(&self, i: usize) -> Matrix2<f64> {
        self.values[i]
    }

    pub fn interp(&self, h: f64, x: f64) -> Matrix2<f64> {
        let (idx, w) = cubic_weights(self.values.len(), h, x);
        idx.iter().zip(w).map(|(&i, w)| self.values[i] * w).sum()
    }
}

/// `ω₂₁(x)` at the grid nodes; `Ω(x) = [[0, 0], [ω₂₁, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaFunction {
    pub values: Vec<f64>,
}

impl OmegaFunction {
    pub fn matrix(&self, i: usize) -> Matrix2<f64> {
        Matrix2::new(0.0, 0.0, self.values[i], 0.0)
    }
}

/// A solved (or user-assembled) kernel set together with its problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub problem: KernelProblem,
    pub kernels: TriangularKernelGrid,
    pub phi: PhiFunction,
    pub omega: OmegaFunction,
    /// Row integrals `∫_{y_j}^{x_i} (k_{m2} + l_{m2})(x_i, s) ds`, `m = 1, 2`.
    row_int: [Vec<f64>; 2],
    pub sweeps: usize,
    pub last_change: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    K,
    L,
}

impl KernelSet {
    /// A set with zero kernels, `Φ ≡ Φ(0)` and `ω` from `k₂₁ ≡ 0`.
    pub fn initial(problem: KernelProblem, grid: &SpatialGrid) -> Self {
        let n = grid.n();
        let len = tri(n, n) + 1;
        let mut set = Self {
            kernels: TriangularKernelGrid::zeros(n, problem.ratio, problem.jump),
            phi: PhiFunction {
                values: vec![problem.phi0; n + 1],
            },
            omega: OmegaFunction {
                values: vec![problem.omega_const; n + 1],
            },
            row_int: [vec![0.0; len], vec![0.0; len]],
            problem,
            sweeps: 0,
            last_change: f64::INFINITY,
        };
        // The continuous part of k12 carries −J wherever the jump is added back.
        for i in 0..=n {
            for j in 0..=i {
                if set.kernels.is_upper(i, j) {
                    set.kernels.k[1][tri(i, j)] = -set.problem.jump;
                }
            }
            set.refresh_row_integrals(i);
        }
        set
    }

    pub fn grid(&self) -> SpatialGrid {
        SpatialGrid::new(self.kernels.n).expect("kernel grid was built from a valid grid")
    }

    /// Recomputes the derived data (`ω₂₁` and the row integrals) from the current
    /// kernel arrays. Call after editing `kernels` by hand.
    pub fn refresh(&mut self) {
        for i in 0..=self.kernels.n {
            self.refresh_omega(i);
            self.refresh_row_integrals(i);
        }
    }

    fn refresh_omega(&mut self, i: usize) {
        let p = &self.problem;
        let k21 = self.kernels.k[2][tri(i, i)];
        self.omega.values[i] = (p.speed(1) - p.speed(0)) * k21 + p.omega_const;
    }

    fn refresh_row_integrals(&mut self, i: usize) {
        let kg = &self.kernels;
        let h = kg.h();
        let xi = i as f64 * h;
        for m in 0..2 {
            let f: Vec<f64> = (0..=i)
                .map(|j| kg.k[2 * m + 1][tri(i, j)] + kg.l[2 * m + 1][tri(i, j)])
                .collect();
            // Reverse cumulative trapezoid: ∫_{y_j}^{x_i}.
            let mut acc = 0.0;
            let base = tri(i, 0);
            self.row_int[m][base + i] = 0.0;
            for j in (0..i).rev() {
                acc += 0.5 * h * (f[j] + f[j + 1]);
                let jump_part = if m == 0 {
                    kg.jump * (xi - (j as f64 * h).max(kg.ratio * xi))
                } else {
                    0.0
                };
                self.row_int[m][base + j] = acc + jump_part;
            }
        }
    }

    /// `(∫₀^{x_i}(k₁₂+l₁₂), ∫₀^{x_i}(k₂₂+l₂₂))` along row `i`.
    pub fn bottom_row_integral(&self, i: usize) -> Vector2<f64> {
        let t = tri(i, 0);
        Vector2::new(self.row_int[0][t], self.row_int[1][t])
    }

    fn l_bottom(&self, i: usize) -> Matrix2<f64> {
        self.kernels.l_at(i, 0)
    }

    /// Kernel right-hand side component `(m, c)` at a point, evaluated on the
    /// requested side of the discontinuity line.
    fn rhs(&self, kind: Kind, m: usize, c: usize, x: f64, y: f64, upper: bool) -> f64 {
        let kg = &self.kernels;
        let mats = &self.problem.mats;
        let st = kg.stencil(x, y);
        let k_entry = |a: usize, b: usize| {
            let v = st.eval(&kg.k[2 * a + b]);
            if a == 0 && b == 1 && upper {
                v + kg.jump
            } else {
                v
            }
        };
        let l_entry = |a: usize, b: usize| st.eval(&kg.l[2 * a + b]);
        let other = 1 - c;
        // ((K+L)Λ₁)_{mc} with Λ₁ off-diagonal.
        let mut v = (k_entry(m, other) + l_entry(m, other)) * mats.lambda1[(other, c)];
        if m == 1 {
            let omega = interp_linear(&self.omega.values, kg.h(), x);
            let own = match kind {
                Kind::K => k_entry(0, c),
                Kind::L => l_entry(0, c),
            };
            v -= omega * own;
        }
        v -= mats.f[(m, c)];
        if c == 1 {
            v += mats.f[(1, 1)] * st.eval(&self.row_int[m]);
        }
        v
    }

    fn path_integral(&self, kind: Kind, m: usize, c: usize, x: f64, y: f64, s_end: f64, upper_start: bool) -> f64 {
        let p = &self.problem;
        let h = self.kernels.h();
        let (a, b) = (p.speed(m), p.speed(c));
        let dy = match kind {
            Kind::K => -b,
            Kind::L => b,
        };
        let g0 = y - p.ratio * x;
        let gs = dy - p.ratio * (-a);
        let mut cuts = vec![(0.0, upper_start)];
        if gs != 0.0 {
            let sc = -g0 / gs;
            if sc > 1e-14 && sc < s_end - 1e-14 {
                cuts.push((sc, !upper_start));
            }
        }
        let mut total = 0.0;
        for (k, &(s0, upper)) in cuts.iter().enumerate() {
            let s1 = cuts.get(k + 1).map_or(s_end, |c| c.0);
            let len = s1 - s0;
            if len <= 0.0 {
                continue;
            }
            let steps = ((len * a.max(b) / h - 1e-9).ceil() as usize).max(1);
            let ds = len / steps as f64;
            let mut acc = 0.0;
            for q in 0..=steps {
                let s = s0 + q as f64 * ds;
                let w = if q == 0 || q == steps { 0.5 } else { 1.0 };
                acc += w * self.rhs(kind, m, c, x - a * s, y + dy * s, upper);
            }
            total += acc * ds;
        }
        total
    }

    /// New value at node `(i, j)` for entry `(m, c)` (continuous part for `k₁₂`).
    fn node_update(&self, kind: Kind, m: usize, c: usize, i: usize, j: usize) -> f64 {
        let p = &self.problem;
        let h = self.kernels.h();
        let x = i as f64 * h;
        let y = j as f64 * h;
        let (a, b) = (p.speed(m), p.speed(c));
        let upper = self.kernels.is_upper(i, j);
        match kind {
            Kind::L => {
                let s_end = (x - y) / (a + b);
                p.l_diag[(m, c)] + self.path_integral(kind, m, c, x, y, s_end, upper)
            }
            Kind::K => {
                let (foot, s_end) = if m == 0 && c == 1 && upper {
                    (p.k12_diag, (x - y) / (a - b))
                } else {
                    let s_end = y / b;
                    let xf = x - a * s_end;
                    let lb = self.l_bottom_interp(xf);
                    let phi = self.phi.interp(h, xf);
                    (p.k_bottom(&lb, &phi)[(m, c)], s_end)
                };
                let full = foot + self.path_integral(kind, m, c, x, y, s_end, upper);
                if m == 0 && c == 1 && upper {
                    full - self.kernels.jump
                } else {
                    full
                }
            }
        }
    }

    /// `L(x, 0)` by four-point interpolation along the bottom edge.
    fn l_bottom_interp(&self, x: f64) -> Matrix2<f64> {
        let kg = &self.kernels;
        let (idx, w) = cubic_weights(kg.n + 1, kg.h(), x);
        idx.iter().zip(w).map(|(&i, w)| kg.l_at(i, 0) * w).sum()
    }

    fn phi_coupling(&self, i: usize) -> (f64, Matrix2<f64>, Vector2<f64>) {
        (self.omega.values[i], self.l_bottom(i), self.bottom_row_integral(i))
    }

    /// One Gauss-Seidel sweep in `x`. Returns the largest nodal change.
    fn sweep(&mut self) -> f64 {
        let n = self.kernels.n;
        let h = self.kernels.h();
        let mut change = 0.0f64;
        for i in 0..=n {
            if i > 0 {
                let (w0, l0, r0) = self.phi_coupling(i - 1);
                let (w1, l1, r1) = self.phi_coupling(i);
                let (wm, lm, rm) = (0.5 * (w0 + w1), (l0 + l1) * 0.5, (r0 + r1) * 0.5);
                let prob = &self.problem;
                let y0 = self.phi.values[i - 1];
                let k1 = prob.phi_rhs(&y0, w0, &l0, r0);
                let k2 = prob.phi_rhs(&(y0 + k1 * (0.5 * h)), wm, &lm, rm);
                let k3 = prob.phi_rhs(&(y0 + k2 * (0.5 * h)), wm, &lm, rm);
                let k4 = prob.phi_rhs(&(y0 + k3 * h), w1, &l1, r1);
                let next = y0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                change = change.max((next - self.phi.values[i]).amax());
                self.phi.values[i] = next;
            }
            let mut row: Vec<[f64; 8]> = Vec::with_capacity(i + 1);
            for j in 0..=i {
                let mut vals = [0.0; 8];
                for e in 0..4 {
                    let (m, c) = (e / 2, e % 2);
                    vals[e] = self.node_update(Kind::K, m, c, i, j);
                    vals[4 + e] = self.node_update(Kind::L, m, c, i, j);
                }
                row.push(vals);
            }
            for (j, vals) in row.iter().enumerate() {
                let t = tri(i, j);
                for e in 0..4 {
                    change = change.max((vals[e] - self.kernels.k[e][t]).abs());
                    change = change.max((vals[4 + e] - self.kernels.l[e][t]).abs());
                    self.kernels.k[e][t] = vals[e];
                    self.kernels.l[e][t] = vals[4 + e];
                }
            }
            self.refresh_omega(i);
            self.refresh_row_integrals(i);
        }
        change
    }
}

/// Solves the kernel equations and the `Φ` ODE by successive approximation.
pub fn solve_kernels(params: &BeamParams, ctrl: &ControllerParams, grid: &SpatialGrid) -> Result<KernelSet> {
    solve_kernels_with(params, ctrl, grid, KernelOptions::default())
}

pub fn solve_kernels_with(params: &BeamParams, ctrl: &ControllerParams, grid: &SpatialGrid, options: KernelOptions) -> Result<KernelSet> {
    let params = params.validate()?;
    let ctrl = ctrl.validate()?;
    let problem = KernelProblem::new(&params, &ctrl, options);
    let mut set = KernelSet::initial(problem, grid);
    for sweep in 1..=options.max_iter {
        let change = set.sweep();
        set.sweeps = sweep;
        set.last_change = change;
        if !change.is_finite() {
            break;
        }
        if change < options.tol {
            return Ok(set);
        }
    }
    Err(Error::NonConvergence {
        iterations: set.sweeps,
        residual: set.last_change,
    })
}

/// Max-norm residuals of the kernel equations, boundary conditions and the
/// `Φ` ODE, all evaluated by finite differences on the nodal values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelResiduals {
    pub pde_k: f64,
    pub pde_l: f64,
    /// Interior nodes skipped because their stencil touches the `k₁₂` jump line.
    pub excluded_nodes: usize,
    pub diagonal_l: f64,
    pub diagonal_k: f64,
    pub bottom_k: f64,
    pub phi_ode: f64,
    pub phi0: f64,
    pub omega: f64,
    pub max_kernel: f64,
}

impl KernelResiduals {
    pub fn pde(&self) -> f64 {
        self.pde_k.max(self.pde_l)
    }

    pub fn boundary(&self) -> f64 {
        self.diagonal_l.max(self.diagonal_k).max(self.bottom_k)
    }

    pub fn max(&self) -> f64 {
        self.pde().max(self.boundary()).max(self.phi_ode).max(self.phi0).max(self.omega)
    }
}

/// Independent residual check of a kernel set.
pub fn kernel_residuals(set: &KernelSet) -> KernelResiduals {
    let kg = &set.kernels;
    let p = &set.problem;
    let mats = &p.mats;
    let n = kg.n;
    let h = kg.h();
    let s = [p.speed(0), p.speed(1)];

    let mut pde_k = 0.0f64;
    let mut pde_l = 0.0f64;
    let mut excluded = 0;
    for i in 1..n {
        for j in 1..i {
            let x = i as f64 * h;
            let y = j as f64 * h;
            if (y - p.ratio * x).abs() < 2.5 * h {
                excluded += 1;
                continue;
            }
            let upper = kg.is_upper(i, j);
            for e in 0..4 {
                let (m, c) = (e / 2, e % 2);
                let dk_dx = (kg.k[e][tri(i + 1, j)] - kg.k[e][tri(i - 1, j)]) / (2.0 * h);
                let dk_dy = (kg.k[e][tri(i, j + 1)] - kg.k[e][tri(i, j - 1)]) / (2.0 * h);
                let rk = set.rhs(Kind::K, m, c, x, y, upper);
                pde_k = pde_k.max((s[m] * dk_dx + s[c] * dk_dy - rk).abs());
                let dl_dx = (kg.l[e][tri(i + 1, j)] - kg.l[e][tri(i - 1, j)]) / (2.0 * h);
                let dl_dy = (kg.l[e][tri(i, j + 1)] - kg.l[e][tri(i, j - 1)]) / (2.0 * h);
                let rl = set.rhs(Kind::L, m, c, x, y, upper);
                pde_l = pde_l.max((s[m] * dl_dx - s[c] * dl_dy - rl).abs());
            }
        }
    }

    let mut diagonal_l = 0.0f64;
    let mut diagonal_k = 0.0f64;
    let mut omega = 0.0f64;
    let mut bottom_k = 0.0f64;
    for i in 0..=n {
        let l = kg.l_at(i, i);
        let k = kg.k_at(i, i);
        let om = set.omega.matrix(i);
        diagonal_l = diagonal_l.max((mats.sigma * l + l * mats.sigma + mats.lambda1).amax());
        diagonal_k = diagonal_k.max((mats.sigma * k - k * mats.sigma + mats.lambda1 - om).amax());
        let consistent = (s[1] - s[0]) * k[(1, 0)] + mats.lambda1[(1, 0)];
        omega = omega.max((set.omega.values[i] - consistent).abs());
        if i > 0 {
            let expected = p.k_bottom(&kg.l_at(i, 0), &set.phi.at(i));
            bottom_k = bottom_k.max((kg.k_at(i, 0) - expected).amax());
        }
    }

    let mut phi_ode = 0.0f64;
    for i in 1..n {
        let d = (set.phi.at(i + 1) - set.phi.at(i - 1)) / (2.0 * h);
        let (w, lb, ri) = set.phi_coupling(i);
        let rhs = p.phi_rhs(&set.phi.at(i), w, &lb, ri);
        phi_ode = phi_ode.max((d - rhs).amax());
    }

    KernelResiduals {
        pde_k,
        pde_l,
        excluded_nodes: excluded,
        diagonal_l,
        diagonal_k,
        bottom_k,
        phi_ode,
        phi0: (set.phi.at(0) - p.phi0).amax(),
        omega,
        max_kernel: kg.max_abs(),
    }
}

/// Gains on the row `x = 1`, plus the nodal quadrature weights of the
/// control law `V = ∫K(1,y)Z + ∫L(1,y)Y + Φ(1)X`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub n: usize,
    /// Full `K(1, y_j)`.
    pub k: Vec<Matrix2<f64>>,
    /// Continuous part of `K(1, y_j)` (`k₁₂` without its jump).
    pub k_cont: Vec<Matrix2<f64>>,
    pub l: Vec<Matrix2<f64>>,
    /// `∂_y` of the continuous parts, differenced separately on each side of `jump_y`.
    pub k_y: Vec<Matrix2<f64>>,
    pub l_y: Vec<Matrix2<f64>>,
    pub phi1: Matrix2<f64>,
    /// Location of the `k₁₂(1,·)` discontinuity (and of the kinks of the other entries).
    pub jump_y: f64,
    /// Jump of `k₁₂(1,·)` at `jump_y` (right minus left).
    pub jump: f64,
    /// First node index on the right of `jump_y`, if the row is split.
    pub split: Option<usize>,
    /// Cell `[y_j, y_{j+1}]` flagged by the adjacent-difference outlier test.
    pub detected_jump: Option<usize>,
    pub weights_k: Vec<Matrix2<f64>>,
    pub weights_l: Vec<Matrix2<f64>>,
}

impl GainSet {
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Builds a gain set from row data. `k_cont` is the continuous part of
    /// `K(1,·)`; `jump = Some((y*, J))` adds `J` to `k₁₂` for `y ≥ y*` and
    /// splits derivatives and quadratures at `y*`.
    pub fn from_rows(k_cont: Vec<Matrix2<f64>>, l: Vec<Matrix2<f64>>, phi1: Matrix2<f64>, jump: Option<(f64, f64)>) -> Self {
        let n = k_cont.len() - 1;
        let h = 1.0 / n as f64;
        let split = jump.map(|(y, _)| (0..=n).find(|&j| j as f64 * h >= y - 1e-9 * h).unwrap_or(n + 1));
        let (jump_y, jump) = jump.unwrap_or((1.0, 0.0));
        let entry_deriv = |rows: &[Matrix2<f64>]| -> Vec<Matrix2<f64>> {
            let d: Vec<Vec<f64>> = (0..4)
                .map(|e| {
                    let v: Vec<f64> = rows.iter().map(|m| m[(e / 2, e % 2)]).collect();
                    piecewise_derivative(&v, h, split.unwrap_or(n + 1))
                })
                .collect();
            (0..=n).map(|j| Matrix2::new(d[0][j], d[1][j], d[2][j], d[3][j])).collect()
        };
        let k_y = entry_deriv(&k_cont);
        let l_y = entry_deriv(&l);
        let k: Vec<Matrix2<f64>> = k_cont
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let mut m = *m;
                if split.is_some_and(|s| j >= s) {
                    m[(0, 1)] += jump;
                }
                m
            })
            .collect();
        let mut trap = vec![0.0; n + 1];
        add_segment_weights(&mut trap, h, 0.0, 1.0, 1.0);
        let mut jw = vec![0.0; n + 1];
        add_segment_weights(&mut jw, h, jump_y, 1.0, jump);
        let weights_k = (0..=n)
            .map(|j| {
                let mut m = k_cont[j] * trap[j];
                m[(0, 1)] += jw[j];
                m
            })
            .collect();
        let weights_l = (0..=n).map(|j| l[j] * trap[j]).collect();
        let detected_jump = detect_jump(&k.iter().map(|m| m[(0, 1)]).collect::<Vec<_>>(), 5.0);
        Self {
            n,
            k,
            k_cont,
            l,
            k_y,
            l_y,
            phi1,
            jump_y,
            jump,
            split,
            detected_jump,
            weights_k,
            weights_l,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_rows(vec![Matrix2::zeros(); n + 1], vec![Matrix2::zeros(); n + 1], Matrix2::zeros(), None)
    }
}

/// Adjacent-difference outlier test: returns the cell `j` whose difference
/// `|f_{j+1} − f_j|` exceeds `factor` times the median difference of the row.
pub fn detect_jump(row: &[f64], factor: f64) -> Option<usize> {
    if row.len() < 3 {
        return None;
    }
    let diffs: Vec<f64> = row.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mut sorted = diffs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let (arg, max) = diffs
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    (max > factor * median && max > 1e-12).then_some(arg)
}

/// Copies the `x = 1` row of the kernels and `Φ(1)`, and differentiates the
/// rows in `y` without crossing the `k₁₂` jump.
pub fn extract_gains(set: &KernelSet) -> GainSet {
    let kg = &set.kernels;
    let n = kg.n;
    let k_cont = (0..=n).map(|j| kg.k_cont(n, j)).collect();
    let l = (0..=n).map(|j| kg.l_at(n, j)).collect();
    GainSet::from_rows(k_cont, l, set.phi.at(n), Some((kg.ratio, kg.jump)))
}
