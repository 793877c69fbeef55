//! Uniform-grid quadrature, interpolation and differencing helpers.
//!
//! Integrals treat the integrand as the piecewise-linear interpolant of its
//! nodal values, so integrals over sub-intervals that start or end inside a
//! cell stay second order. That is what makes the jump-aware kernel
//! quadratures work.

/// Composite trapezoid over all nodes.
pub fn trapz(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        len => {
            let inner: f64 = values[1..len - 1].iter().sum();
            h * (inner + 0.5 * (values[0] + values[len - 1]))
        }
    }
}

/// Running trapezoid integral from node 0 to every node.
pub fn cumtrapz(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out.truncate(values.len());
    out
}

/// Adds `scale · (weights of ∫ₐᵇ f)` into `w`, where `f` is the piecewise-linear
/// interpolant of nodal values on a grid of spacing `h`. `w.len()` bounds the
/// node range; `a` and `b` are clamped to it.
pub fn add_segment_weights(w: &mut [f64], h: f64, a: f64, b: f64, scale: f64) {
    if w.len() < 2 || scale == 0.0 {
        return;
    }
    let last = (w.len() - 1) as f64 * h;
    let a = a.clamp(0.0, last);
    let b = b.clamp(0.0, last);
    if b <= a {
        return;
    }
    let first_cell = ((a / h).floor() as usize).min(w.len() - 2);
    let mut k = first_cell;
    while k + 1 < w.len() {
        let x0 = k as f64 * h;
        let x1 = x0 + h;
        if x0 >= b {
            break;
        }
        let lo = a.max(x0);
        let hi = b.min(x1);
        if hi > lo {
            let t_lo = (lo - x0) / h;
            let t_hi = (hi - x0) / h;
            let half = 0.5 * (hi - lo) * scale;
            w[k] += half * ((1.0 - t_lo) + (1.0 - t_hi));
            w[k + 1] += half * (t_lo + t_hi);
        }
        k += 1;
    }
}

/// ∫ₐᵇ of the piecewise-linear interpolant of `values`.
pub fn integrate_segment(values: &[f64], h: f64, a: f64, b: f64) -> f64 {
    let mut w = vec![0.0; values.len()];
    add_segment_weights(&mut w, h, a, b, 1.0);
    w.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Linear interpolation of nodal values at `x` (clamped to the grid).
pub fn interp_linear(values: &[f64], h: f64, x: f64) -> f64 {
    let n = values.len() - 1;
    if n == 0 {
        return values[0];
    }
    let t = (x / h).clamp(0.0, n as f64);
    let k = (t.floor() as usize).min(n - 1);
    let f = t - k as f64;
    values[k] * (1.0 - f) + values[k + 1] * f
}

/// Derivative of a function that is smooth on each side of node index
/// `split` (nodes `..split` on the left, `split..` on the right); no stencil
/// crosses the split.
pub fn piecewise_derivative(values: &[f64], h: f64, split: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for part in [&values[..split.min(values.len())], &values[split.min(values.len())..]] {
        match part.len() {
            0 => {}
            1 => out.push(0.0),
            2 => {
                let d = (part[1] - part[0]) / h;
                out.extend([d, d]);
            }
            _ => out.extend(derivative(part, h)),
        }
    }
    out
}

/// `∫₀ᴸ f` for nodal values of a function that is smooth on `[0, cut)` and on
/// `[cut, L]` but may jump at `cut`. Nodes with `y < cut` belong to the left
/// piece. Each piece is integrated by trapezoid and closed up to `cut` with a
/// linearly extrapolated end value.
pub fn integrate_split(values: &[f64], h: f64, cut: f64) -> f64 {
    let len = values.len();
    if len < 2 || cut <= 0.0 || cut >= (len - 1) as f64 * h {
        return trapz(values, h);
    }
    let split = (0..len).find(|&j| j as f64 * h >= cut - 1e-12 * h).unwrap_or(len);
    let extrapolate = |a: usize, b: usize, at: f64| {
        let (ya, yb) = (a as f64 * h, b as f64 * h);
        values[a] + (values[b] - values[a]) * (at - ya) / (yb - ya)
    };
    let mut total = 0.0;
    if split > 0 {
        total += trapz(&values[..split], h);
        let last = split - 1;
        let gap = cut - last as f64 * h;
        if gap > 0.0 {
            let end = if split >= 2 { extrapolate(last - 1, last, cut) } else { values[last] };
            total += 0.5 * gap * (values[last] + end);
        }
    }
    if split < len {
        total += trapz(&values[split..], h);
        let gap = split as f64 * h - cut;
        if gap > 0.0 {
            let start = if split + 1 < len { extrapolate(split, split + 1, cut) } else { values[split] };
            total += 0.5 * gap * (values[split] + start);
        }
    }
    total
}

/// Nodes and weights of four-point Lagrange interpolation at `x` on a grid
/// with `len` nodes (stencil shifted inward at the ends).
pub fn cubic_weights(len: usize, h: f64, x: f64) -> ([usize; 4], [f64; 4]) {
    assert!(len >= 4, "cubic interpolation needs at least four nodes");
    let n = len - 1;
    let t = (x / h).clamp(0.0, n as f64);
    let k = (t.floor() as usize).clamp(1, n - 2) - 1;
    let idx = [k, k + 1, k + 2, k + 3];
    let mut w = [1.0; 4];
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                w[a] *= (t - idx[b] as f64) / (idx[a] as f64 - idx[b] as f64);
            }
        }
    }
    (idx, w)
}

/// Four-point Lagrange interpolation of nodal values at `x`.
pub fn interp_cubic(values: &[f64], h: f64, x: f64) -> f64 {
    let (idx, w) = cubic_weights(values.len(), h, x);
    idx.iter().zip(w).map(|(&i, w)| w * values[i]).sum()
}

/// Second-order finite-difference derivative: central in the interior,
/// three-point one-sided at both ends.
pub fn derivative(values: &[f64], h: f64) -> Vec<f64> {
    let len = values.len();
    assert!(len >= 3, "derivative needs at least three nodes");
    let mut d = vec![0.0; len];
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    for i in 1..len - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d[len - 1] = (3.0 * values[len - 1] - 4.0 * values[len - 2] + values[len - 3]) / (2.0 * h);
    d
}
