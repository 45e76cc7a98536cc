//! Legendre transform and the toric energy functionals.
//!
//! `phi` is the Legendre transform of the symplectic potential `u`, computed on a
//! truncated box in `xi`-space as the exact transform of the nodal samples of
//! `u`. Maxima are taken one axis at a time, so the 2D transform costs
//! `O(rows * n_xi * (row length + n_xi))`.

use serde::{Deserialize, Serialize};

use crate::affine::AffineFn;
use crate::ding::{dna, l2_norm_sq, PLConvexFn};
use crate::error::{Error, Result};
use crate::grid::{Neumaier, PotentialGrid};
use crate::polytope::Polytope;

/// Box `[-rho, rho]^n` with spacing `h_xi`; `rho = None` picks the radius from the tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DualSpec {
    pub h_xi: f64,
    pub rho: Option<f64>,
}

impl Default for DualSpec {
    fn default() -> Self {
        DualSpec { h_xi: 0.1, rho: None }
    }
}

/// Target relative size of the truncated tail of `int e^{-phi}`.
const TAIL_REL: f64 = 1e-8;
/// Largest dual grid, in points.
const MAX_DUAL_POINTS: usize = 20_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualGrid {
    pub dim: usize,
    pub rho: f64,
    pub h_xi: f64,
    /// Points per axis.
    pub points: usize,
    /// `phi` in row-major order, first coordinate fastest.
    pub phi: Vec<f64>,
    /// Rigorous bound on `int_{|xi|_inf > rho} e^{-phi}`.
    pub tail_bound: f64,
}

impl DualGrid {
    pub fn axis(&self, k: usize) -> f64 {
        -self.rho + k as f64 * self.h_xi
    }

    pub fn xi(&self, idx: usize) -> Vec<f64> {
        if self.dim == 1 {
            vec![self.axis(idx)]
        } else {
            vec![self.axis(idx % self.points), self.axis(idx / self.points)]
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.phi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trapezoidal `int_box e^{-(phi - shift)}`.
    pub fn integral_exp_neg(&self, shift: f64) -> f64 {
        let n = self.points;
        let end = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let mut s = Neumaier::default();
        for (idx, p) in self.phi.iter().enumerate() {
            let w = if self.dim == 1 { end(idx) } else { end(idx % n) * end(idx / n) };
            s.add(w * (-(p - shift)).exp());
        }
        s.sum() * self.h_xi.powi(self.dim as i32)
    }

    /// Largest violation of discrete midpoint convexity along the axes and diagonals.
    pub fn convexity_defect(&self) -> f64 {
        let n = self.points as i64;
        let at = |i: i64, j: i64| self.phi[(i + n * j) as usize];
        let mut worst = 0.0f64;
        let dirs: &[(i64, i64)] = if self.dim == 1 { &[(1, 0)] } else { &[(1, 0), (0, 1), (1, 1), (1, -1)] };
        let rows = if self.dim == 1 { 1 } else { n };
        for j in 0..rows {
            for i in 0..n {
                for &(di, dj) in dirs {
                    let (a, b) = ((i - di, j - dj), (i + di, j + dj));
                    let ok = |(x, y): (i64, i64)| x >= 0 && x < n && y >= 0 && y < rows;
                    if ok(a) && ok(b) {
                        worst = worst.max(2.0 * at(i, j) - at(a.0, a.1) - at(b.0, b.1));
                    }
                }
            }
        }
        worst
    }

    /// `u**(x) = max_xi <x, xi> - phi(xi)` at every node of `grid`.
    pub fn biconjugate(&self, grid: &PotentialGrid) -> Vec<f64> {
        let axis: Vec<f64> = (0..self.points).map(|k| self.axis(k)).collect();
        let (lo, hi) = lattice_box(grid);
        let targets: Vec<Vec<f64>> =
            (0..grid.dim()).map(|d| (lo[d]..=hi[d]).map(|k| k as f64 * grid.h()).collect()).collect();
        let axes = vec![axis; self.dim];
        let full = conjugate_tensor(&axes, &self.phi, &targets);
        let width = (hi[0] - lo[0] + 1) as usize;
        (0..grid.len())
            .map(|i| {
                let k = grid.lattice_coords(i);
                let col = (k[0] - lo[0]) as usize;
                if grid.dim() == 1 {
                    full[col]
                } else {
                    full[col + width * (k[1] - lo[1]) as usize]
                }
            })
            .collect()
    }
}

fn lattice_box(grid: &PotentialGrid) -> ([i64; 2], [i64; 2]) {
    let mut lo = [i64::MAX; 2];
    let mut hi = [i64::MIN; 2];
    for i in 0..grid.len() {
        let k = grid.lattice_coords(i);
        for d in 0..2 {
            lo[d] = lo[d].min(k[d]);
            hi[d] = hi[d].max(k[d]);
        }
    }
    (lo, hi)
}

/// `out(s) = max_t <s, t> - vals(t)` for tensor grids of `t` (`axes`) and `s`
/// (`out_axes`); `+inf` values are absent points. First coordinate fastest.
pub(crate) fn conjugate_tensor(axes: &[Vec<f64>], vals: &[f64], out_axes: &[Vec<f64>]) -> Vec<f64> {
    let conj_1d = |ts: &[f64], v: &dyn Fn(usize) -> f64, s: f64| {
        let mut best = f64::NEG_INFINITY;
        for (i, t) in ts.iter().enumerate() {
            let vi = v(i);
            if vi.is_finite() {
                best = best.max(s * t - vi);
            }
        }
        best
    };
    if axes.len() == 1 {
        return out_axes[0].iter().map(|&s| conj_1d(&axes[0], &|i| vals[i], s)).collect();
    }
    let (n0, n1) = (axes[0].len(), axes[1].len());
    let m0 = out_axes[0].len();
    // Stage 1: per input row j, transform along the first axis.
    let mut g = vec![f64::NEG_INFINITY; n1 * m0];
    for j in 0..n1 {
        let row = &vals[j * n0..(j + 1) * n0];
        if row.iter().all(|v| !v.is_finite()) {
            continue;
        }
        for (a, &s) in out_axes[0].iter().enumerate() {
            g[j * m0 + a] = conj_1d(&axes[0], &|i| row[i], s);
        }
    }
    // Stage 2: along the second axis, with -g as the values.
    let mut out = Vec::with_capacity(m0 * out_axes[1].len());
    for &s in &out_axes[1] {
        for a in 0..m0 {
            let mut best = f64::NEG_INFINITY;
            for j in 0..n1 {
                let gj = g[j * m0 + a];
                if gj > f64::NEG_INFINITY {
                    best = best.max(s * axes[1][j] + gj);
                }
            }
            out.push(best);
        }
    }
    out
}

/// `sum_F l_F log l_F` at any point of `P`.
fn u_can_at(p: &Polytope, x: &[f64]) -> f64 {
    p.facet_values(x).iter().map(|&l| if l > 0.0 { l * l.ln() } else { 0.0 }).sum()
}

/// 1D transform of the model `u_can + I[u - u_can]` (`I` the linear interpolant).
/// The maximizing node is refined by ternary search over its two cells, where
/// the objective is concave; this removes the `O(h)` error of sampling `u` near
/// `∂P`, where `u''` blows up.
fn conjugate_1d_refined(grid: &PotentialGrid, u: &[f64], axis: &[f64]) -> Vec<f64> {
    let p = grid.polytope();
    let n = grid.len();
    let xs: Vec<f64> = (0..n).map(|i| grid.x(i)[0]).collect();
    let v: Vec<f64> = (0..n).map(|i| u[i] - grid.u_can(i)).collect();
    let mut best = 0usize;
    axis.iter()
        .map(|&xi| {
            // The maximizing node is nondecreasing in xi.
            while best + 1 < n && xi * xs[best + 1] - u[best + 1] >= xi * xs[best] - u[best] {
                best += 1;
            }
            let mut value = xi * xs[best] - u[best];
            for (a, b) in [(best.saturating_sub(1), best), (best, (best + 1).min(n - 1))] {
                if a == b {
                    continue;
                }
                let f = |x: f64| {
                    let t = (x - xs[a]) / (xs[b] - xs[a]);
                    xi * x - u_can_at(p, &[x]) - ((1.0 - t) * v[a] + t * v[b])
                };
                let (mut lo, mut hi) = (xs[a], xs[b]);
                for _ in 0..100 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if f(m1) < f(m2) {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                value = value.max(f(0.5 * (lo + hi)));
            }
            value
        })
        .collect()
}

/// `phi(xi) = sup_x <x, xi> - u(x)` on the box of `spec`. In 2D the supremum is
/// over the nodes; in 1D over the model described at [`conjugate_1d_refined`].
///
/// # Errors
///
/// `InvalidInput` for mismatched lengths or non-finite values, `Precision` when the
/// box needed for the tail bound exceeds the size limit.
pub fn legendre(grid: &PotentialGrid, u: &[f64], spec: &DualSpec) -> Result<DualGrid> {
    if u.len() != grid.len() {
        return Err(Error::invalid(format!("{} values for {} nodes", u.len(), grid.len())));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("potential must be finite at every node"));
    }
    if !(spec.h_xi > 0.0) {
        return Err(Error::invalid("dual spacing must be positive"));
    }
    let dim = grid.dim();
    let bound = TailBound::new(grid, u);
    let rho = match spec.rho {
        Some(r) if r > 0.0 => r,
        Some(_) => return Err(Error::invalid("dual radius must be positive")),
        None => bound.radius(TAIL_REL * bound.z_lower),
    };
    let half = (rho / spec.h_xi).ceil() as usize;
    let points = 2 * half + 1;
    if points.pow(dim as u32) > MAX_DUAL_POINTS {
        return Err(Error::Precision(format!(
            "dual box of radius {rho} at spacing {} needs {}^{dim} points",
            spec.h_xi, points
        )));
    }
    let rho = half as f64 * spec.h_xi;
    let axis: Vec<f64> = (0..points).map(|k| -rho + k as f64 * spec.h_xi).collect();

    let (lo, hi) = lattice_box(grid);
    let axes: Vec<Vec<f64>> = (0..dim).map(|d| (lo[d]..=hi[d]).map(|k| k as f64 * grid.h()).collect()).collect();
    let width = axes[0].len();
    let mut vals = vec![f64::INFINITY; axes.iter().map(Vec::len).product()];
    for (i, ui) in u.iter().enumerate() {
        let k = grid.lattice_coords(i);
        let col = (k[0] - lo[0]) as usize;
        let idx = if dim == 1 { col } else { col + width * (k[1] - lo[1]) as usize };
        vals[idx] = *ui;
    }
    let phi =
        if dim == 1 { conjugate_1d_refined(grid, u, &axis) } else { conjugate_tensor(&axes, &vals, &vec![axis; dim]) };
    Ok(DualGrid { dim, rho, h_xi: spec.h_xi, points, phi, tail_bound: bound.tail(rho) })
}

/// `phi(xi) >= r |xi| - U` with `r` the inradius of `P` about 0 and `U = max u`,
/// and `phi(xi) <= R |xi| - min u` with `R = max |vertex|`.
struct TailBound {
    dim: usize,
    r: f64,
    u_max: f64,
    z_lower: f64,
}

impl TailBound {
    fn new(grid: &PotentialGrid, u: &[f64]) -> Self {
        let p = grid.polytope();
        let r = p
            .facets()
            .iter()
            .map(|f| f.offset / f.normal.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        let big_r = p.vertices().iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);
        let dim = grid.dim();
        let z_lower = u_min.exp() * if dim == 1 { 2.0 / big_r } else { 2.0 * std::f64::consts::PI / (big_r * big_r) };
        TailBound { dim, r, u_max, z_lower }
    }

    /// Bound on `int_{|xi| > rho} e^{U - r |xi|}`.
    fn tail(&self, rho: f64) -> f64 {
        let r = self.r;
        let decay = (self.u_max - r * rho).exp();
        if self.dim == 1 {
            2.0 * decay / r
        } else {
            2.0 * std::f64::consts::PI * decay * (rho / r + 1.0 / (r * r))
        }
    }

    /// Smallest radius with `tail(rho) <= target`.
    fn radius(&self, target: f64) -> f64 {
        let mut hi = 1.0;
        while self.tail(hi) > target {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.tail(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DingEnergy {
    /// `D_g(u)`.
    pub value: f64,
    /// `-log int e^{-(phi - inf phi)}`.
    pub log_term: f64,
    /// Truncation error bar on `value`.
    pub error_bar: f64,
    pub inf_phi: f64,
    pub rho: f64,
    pub h_xi: f64,
}

/// `D(u) = -log int e^{-(phi - inf phi)} - u(0) + (1/V) int_P u`.
///
/// # Errors
///
/// As [`modified_ding_energy`].
pub fn ding_energy(grid: &PotentialGrid, u: &[f64], spec: &DualSpec) -> Result<DingEnergy> {
    modified_ding_energy(grid, u, &vec![1.0; grid.len()], spec)
}

/// `D_g(u) = -log int e^{-(phi - inf phi)} + D^NA_g(u)` with `g` given at the nodes.
///
/// # Errors
///
/// `Precision` when the truncation error bar exceeds `1e-6 (1 + |value|)`.
pub fn modified_ding_energy(grid: &PotentialGrid, u: &[f64], g: &[f64], spec: &DualSpec) -> Result<DingEnergy> {
    if g.len() != grid.len() {
        return Err(Error::invalid(format!("{} weight values for {} nodes", g.len(), grid.len())));
    }
    let dual = legendre(grid, u, spec)?;
    // The infimum over all of R^n is -u(0) exactly; the box minimum only samples it.
    let inf_phi = -u[grid.origin()];
    let z = dual.integral_exp_neg(inf_phi);
    let tail = dual.tail_bound * (-inf_phi).exp();
    let log_term = -z.ln();
    let vol = grid.polytope().volume();
    let ug: Vec<f64> = u.iter().zip(g).map(|(a, b)| a * b).collect();
    let value = log_term - u[grid.origin()] + grid.integrate(&ug) / vol;
    // -log(z + tail) differs from -log z by at most tail / z.
    let error_bar = tail / z;
    if error_bar > 1e-6 * (1.0 + value.abs()) {
        return Err(Error::Precision(format!(
            "Legendre tail bound {error_bar:e} at radius {}; increase the dual radius",
            dual.rho
        )));
    }
    Ok(DingEnergy { value, log_term, error_bar, inf_phi, rho: dual.rho, h_xi: dual.h_xi })
}

/// `E = -(1/V) int_P u`.
pub fn aubin_yau(grid: &PotentialGrid, u: &[f64]) -> f64 {
    -grid.integrate(u) / grid.polytope().volume()
}

/// `R = (1/V) int_P (sigma - 1)^2`.
pub fn ricci_calabi(grid: &PotentialGrid, sigma: &[f64]) -> f64 {
    let sq: Vec<f64> = sigma.iter().map(|s| (s - 1.0) * (s - 1.0)).collect();
    grid.integrate(&sq) / grid.polytope().volume()
}

/// `H = -(1/V) int_P log sigma`.
pub fn entropy(grid: &PotentialGrid, sigma: &[f64]) -> f64 {
    let logs: Vec<f64> = sigma.iter().map(|s| s.ln()).collect();
    -grid.integrate(&logs) / grid.polytope().volume()
}

/// `R^{1/2} - (-D^NA(f) / (V^{-1/2} ||f||_{L2}))`; nonnegative by the moment-weight inequality.
///
/// # Errors
///
/// `UndefinedRatio` when `||f||_{L2}` vanishes.
pub fn moment_weight_gap(p: &Polytope, r: f64, f: &PLConvexFn) -> Result<f64> {
    let norm = (l2_norm_sq(p, f) / p.volume()).sqrt();
    if !(norm > 1e-12) {
        return Err(Error::UndefinedRatio);
    }
    Ok(r.max(0.0).sqrt() + dna(p, f) / norm)
}

/// `f - f(0) - <s, x>` with `s` the minimal-norm subgradient at 0, so functions
/// that are already normalized come back unchanged.
pub fn normalize(f: &PLConvexFn) -> PLConvexFn {
    let n = f.dim();
    let origin = vec![0.0; n];
    let top = f.eval(&origin);
    let grads: Vec<Vec<f64>> = f
        .pieces
        .iter()
        .filter(|a| a.eval(&origin) >= top - 1e-12 * (1.0 + top.abs()))
        .map(|a| a.grad.clone())
        .collect();
    let s = min_norm_in_hull(&grads);
    f.add_affine(&AffineFn::new(-top, s.iter().map(|x| -x).collect()))
}

/// Minimal-norm point of the convex hull of a few points (dimension <= 2).
fn min_norm_in_hull(points: &[Vec<f64>]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut best = points[0].clone();
    let mut consider = |c: Vec<f64>| {
        if dot(&c, &c) < dot(&best, &best) {
            best = c;
        }
    };
    for p in points {
        consider(p.clone());
    }
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
            let dd = dot(&d, &d);
            if dd > 0.0 {
                let t = (-dot(a, &d) / dd).clamp(0.0, 1.0);
                consider(a.iter().zip(&d).map(|(x, y)| x + t * y).collect());
            }
        }
    }
    if points.first().is_some_and(|p| p.len() == 2) {
        let cross = |a: &[f64], b: &[f64]| a[0] * b[1] - a[1] * b[0];
        for (i, a) in points.iter().enumerate() {
            for (j, b) in points.iter().enumerate().skip(i + 1) {
                for c in &points[j + 1..] {
                    let s = [cross(a, b), cross(b, c), cross(c, a)];
                    if s.iter().all(|x| *x >= 0.0) || s.iter().all(|x| *x <= 0.0) {
                        consider(vec![0.0, 0.0]);
                    }
                }
            }
        }
    }
    best
}

/// `u - u(0) - <s, x>` with `s` the centered-difference gradient at the origin node.
pub fn normalize_nodal(grid: &PotentialGrid, u: &[f64]) -> Vec<f64> {
    let o = grid.origin();
    let k = grid.lattice_coords(o);
    let mut s = [0.0; 2];
    for (d, sd) in s.iter_mut().enumerate().take(grid.dim()) {
        let mut kp = k;
        let mut km = k;
        kp[d] += 1;
        km[d] -= 1;
        let (ip, im) = (grid.node_at(kp).expect("origin is interior"), grid.node_at(km).expect("origin is interior"));
        *sd = (u[ip] - u[im]) / (2.0 * grid.h());
    }
    (0..grid.len())
        .map(|i| {
            let x = grid.x(i);
            let lin: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
            u[i] - u[o] - lin
        })
        .collect()
}

/// `(1/V) int_P normalize(u)`.
pub fn jt_proxy(grid: &PotentialGrid, u: &[f64]) -> f64 {
    grid.integrate(&normalize_nodal(grid, u)) / grid.polytope().volume()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::catalog::catalog;
    use crate::flow::{step, FlowState, InitSpec};
    use approx::assert_abs_diff_eq;

    fn grid(name: &str, n: f64) -> Arc<PotentialGrid> {
        Arc::new(PotentialGrid::new(&catalog(name).unwrap(), 1.0 / n).unwrap())
    }

    fn u_can(g: &PotentialGrid) -> Vec<f64> {
        (0..g.len()).map(|i| g.u_can(i)).collect()
    }

    #[test]
    fn canonical_interval_potential_has_closed_form_transform() {
        let g = grid("P1", 256.0);
        let dual = legendre(&g, &u_can(&g), &DualSpec { h_xi: 0.01, rho: Some(12.0) }).unwrap();
        for k in 0..dual.len() {
            let xi = dual.xi(k)[0];
            let exact = 2.0 * (2.0 * (xi / 2.0).cosh()).ln() - 2.0 * 2f64.ln();
            assert!((dual.phi[k] - exact).abs() <= 1e-4, "xi = {xi}");
        }
    }

    #[test]
    fn quadratic_is_self_dual_inside_the_slope_range() {
        let g = grid("P1", 128.0);
        let u = g.sample(|x| 0.5 * x[0] * x[0]);
        let dual = legendre(&g, &u, &DualSpec { h_xi: 0.05, rho: Some(3.0) }).unwrap();
        for k in 0..dual.len() {
            let xi = dual.xi(k)[0];
            if xi.abs() < 0.9 {
                assert_abs_diff_eq!(dual.phi[k], 0.5 * xi * xi, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn shift_rule() {
        for name in ["P1", "P2"] {
            let g = grid(name, 16.0);
            let spec = DualSpec { h_xi: 0.25, rho: Some(8.0) };
            let u = u_can(&g);
            let a = [0.5, -1.0];
            let shifted: Vec<f64> =
                (0..g.len()).map(|i| u[i] + g.x(i).iter().zip(&a).map(|(x, ai)| x * ai).sum::<f64>() + 0.3).collect();
            let d0 = legendre(&g, &u, &spec).unwrap();
            let d1 = legendre(&g, &shifted, &spec).unwrap();
            let n = d0.points as i64;
            let (s0, s1) = ((a[0] / spec.h_xi) as i64, (a[1] / spec.h_xi) as i64);
            for idx in 0..d1.len() {
                let (i, j) = if g.dim() == 1 { (idx as i64, 0) } else { ((idx as i64) % n, (idx as i64) / n) };
                let (si, sj) = (i - s0, if g.dim() == 1 { 0 } else { j - s1 });
                if si >= 0 && si < n && sj >= 0 && sj < n {
                    let expect = d0.phi[(si + n * sj) as usize] - 0.3;
                    assert_abs_diff_eq!(d1.phi[idx], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn nested_transform_matches_brute_force() {
        let g = grid("Q6a", 8.0);
        let u: Vec<f64> = (0..g.len()).map(|i| g.u_can(i) + 0.1 * g.x(i)[0] * g.x(i)[1]).collect();
        let dual = legendre(&g, &u, &DualSpec { h_xi: 0.7, rho: Some(7.0) }).unwrap();
        for idx in 0..dual.len() {
            let xi = dual.xi(idx);
            let brute =
                (0..g.len()).map(|i| g.x(i)[0] * xi[0] + g.x(i)[1] * xi[1] - u[i]).fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(dual.phi[idx], brute, epsilon = 1e-12);
        }
        assert!(dual.convexity_defect() <= 1e-12);
    }

    #[test]
    fn involution_error_shrinks_with_refinement() {
        let errs: Vec<f64> = [(16.0, 0.2), (32.0, 0.1)]
            .iter()
            .map(|&(n, hx)| {
                let g = grid("P2", n);
                let u: Vec<f64> = (0..g.len()).map(|i| g.u_can(i) + 0.2 * g.x(i)[0].powi(2)).collect();
                let dual = legendre(&g, &u, &DualSpec { h_xi: hx, rho: Some(20.0) }).unwrap();
                let back = dual.biconjugate(&g);
                (0..g.len()).filter(|&i| !g.is_boundary(i)).map(|i| (back[i] - u[i]).abs()).fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[0] <= 0.05 && errs[1] <= 0.6 * errs[0], "{errs:?}");
    }

    #[test]
    fn ding_energy_matches_the_grid_route() {
        for (name, n, tol) in [("P1", 128.0, 3e-5), ("P2", 32.0, 3e-3)] {
            let g = grid(name, n);
            let s = FlowState::from_init(g.clone(), &InitSpec::Bump(0.1)).unwrap();
            let d = ding_energy(&g, &s.u(), &DualSpec::default()).unwrap();
            assert_abs_diff_eq!(d.value, s.monitors(None).d, epsilon = tol);
            assert!(d.error_bar < 1e-7);
            assert_abs_diff_eq!(d.inf_phi, -s.u()[g.origin()], epsilon = 1e-3);
        }
    }

    #[test]
    fn ding_energy_ignores_constants() {
        let g = grid("P1", 64.0);
        let u = u_can(&g);
        let up: Vec<f64> = u.iter().map(|x| x + 2.5).collect();
        let a = ding_energy(&g, &u, &DualSpec::default()).unwrap().value;
        let b = ding_energy(&g, &up, &DualSpec::default()).unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn ding_slope_matches_ricci_calabi_at_start() {
        let g = grid("P1", 128.0);
        let s0 = FlowState::from_init(g.clone(), &InitSpec::Bump(0.2)).unwrap();
        let dt = 1e-3;
        let s1 = step(&s0, dt).unwrap();
        let spec = DualSpec { h_xi: 0.02, rho: None };
        let d0 = ding_energy(&g, &s0.u(), &spec).unwrap().value;
        let d1 = ding_energy(&g, &s1.u(), &spec).unwrap().value;
        let r = ricci_calabi(&g, s0.sigma());
        assert!(((d1 - d0) / dt + r).abs() <= 5e-3 * (1.0 + r), "{} vs {}", (d1 - d0) / dt, -r);
    }

    #[test]
    fn modified_ding_energy_properties() {
        let g = grid("P2", 16.0);
        let u = u_can(&g);
        let spec = DualSpec::default();
        let ones = vec![1.0; g.len()];
        let plain = ding_energy(&g, &u, &spec).unwrap();
        assert_eq!(modified_ding_energy(&g, &u, &ones, &spec).unwrap().value, plain.value);
        // g = 1 is balancing on P2, so affine changes of u do not matter.
        let aff: Vec<f64> = (0..g.len()).map(|i| u[i] + 0.4 * g.x(i)[0] - 0.7 * g.x(i)[1] + 1.0).collect();
        let shifted = modified_ding_energy(&g, &aff, &ones, &spec).unwrap();
        assert_abs_diff_eq!(shifted.value, plain.value, epsilon = 1e-3);
    }

    #[test]
    fn sigma_modified_ding_energy_is_minimized_by_its_potential() {
        let g = grid("P1", 128.0);
        let spec = DualSpec { h_xi: 0.02, rho: None };
        let s0 = FlowState::from_init(g.clone(), &InitSpec::Bump(0.3)).unwrap();
        let u0 = s0.u();
        let sigma0 = s0.sigma().to_vec();
        let base = modified_ding_energy(&g, &u0, &sigma0, &spec).unwrap().value;
        let others: [fn(&[f64]) -> f64; 2] =
            [|x| 0.2 * x[0] * x[0], |x| 0.3 * (1.0 - x[0] * x[0]).powi(2) + 0.1 * x[0]];
        for other in others {
            let up: Vec<f64> = (0..g.len()).map(|i| g.u_can(i) + other(g.x(i))).collect();
            for k in 1..=10 {
                let s = k as f64 / 10.0;
                let us: Vec<f64> = u0.iter().zip(&up).map(|(a, b)| (1.0 - s) * a + s * b).collect();
                let val = modified_ding_energy(&g, &us, &sigma0, &spec).unwrap().value;
                assert!(val >= base - 1e-6, "s = {s}: {val} < {base}");
            }
        }
    }

    #[test]
    fn ricci_calabi_examples() {
        let g = grid("P1", 256.0);
        assert_eq!(ricci_calabi(&g, &vec![1.0; g.len()]), 0.0);
        let sigma = g.sample(|x| 1.0 + x[0]);
        assert_abs_diff_eq!(ricci_calabi(&g, &sigma), 1.0 / 3.0, epsilon = 1e-5);
    }

    #[test]
    fn moment_weight_gap_examples() {
        let p = catalog("P1").unwrap();
        let f = PLConvexFn::new(vec![AffineFn::new(0.0, vec![1.0]), AffineFn::new(0.0, vec![-1.0])]).unwrap();
        assert!(moment_weight_gap(&p, 0.04, &f).unwrap() >= 0.2);
        let zero = PLConvexFn::zero(1);
        assert!(matches!(moment_weight_gap(&p, 0.1, &zero), Err(Error::UndefinedRatio)));
    }

    #[test]
    fn normalization() {
        let f = PLConvexFn::new(vec![AffineFn::new(0.0, vec![1.0, 0.0]), AffineFn::new(0.0, vec![-1.0, 0.0])]).unwrap();
        let p = catalog("P2").unwrap();
        for x in p.vertices() {
            assert_eq!(normalize(&f).eval(x), f.eval(x));
        }
        let a = PLConvexFn::affine(AffineFn::new(0.3, vec![1.0, -2.0]));
        for x in p.vertices() {
            assert_eq!(normalize(&a).eval(x), 0.0);
        }
        let h = PLConvexFn::new(vec![AffineFn::new(1.0, vec![1.0, 0.0]), AffineFn::new(1.0, vec![0.0, 2.0])]).unwrap();
        let nh = normalize(&h);
        assert_eq!(nh.eval(&[0.0, 0.0]), 0.0);
        assert!(crate::ding::pl_min(&p, &nh) >= -1e-12);
        let g = grid("P1", 64.0);
        let u = u_can(&g);
        let n = normalize_nodal(&g, &u);
        for i in 0..g.len() {
            assert_abs_diff_eq!(n[i], u[i] - u[g.origin()], epsilon = 1e-14);
            assert!(n[i] >= -1e-12);
        }
    }

    #[test]
    fn jt_proxy_examples() {
        let g = grid("P2", 16.0);
        let aff = g.sample(|x| 1.0 + 2.0 * x[0] - x[1]);
        assert_abs_diff_eq!(jt_proxy(&g, &aff), 0.0, epsilon = 1e-13);
        let g = grid("P1", 256.0);
        let j = jt_proxy(&g, &u_can(&g));
        assert_abs_diff_eq!(j, 2.0 * 2f64.ln() - 1.0, epsilon = 1e-4);
        let bigger: Vec<f64> = u_can(&g).iter().enumerate().map(|(i, u)| u + g.x(i)[0].powi(2)).collect();
        assert!(jt_proxy(&g, &bigger) > j);
    }
}
