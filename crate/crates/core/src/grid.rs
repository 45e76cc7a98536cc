//! Uniform grids over a lattice polytope, derivative stencils and quadrature.
//!
//! Nodes are the points `k h` (`1/h` an integer) lying in `P`, boundary included.
//! The symplectic potential is `u = u_can + v` with `u_can = sum_F l_F log l_F`;
//! only the smooth part `v` is differentiated numerically. Interior nodes whose
//! axis neighbours and one diagonal pair lie in `P` use centered differences;
//! every other node uses a weighted least-squares cubic fit on nearby nodes.
//!
//! Quadrature: full cells get `h^n / 2^n` per corner; cells cut by `∂P` get the
//! exact clipped volume times an affine interpolant at the clipped centroid.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_traits::{Signed, ToPrimitive};

use crate::affine::AffineFn;
use crate::error::{Error, Result};
use crate::polytope::{clip_region, region_moments, Polytope};

/// `(v_x, v_y, v_xx, v_xy, v_yy)`; in 1D only slots 0 and 2 are used.
pub type Derivs = [f64; 5];

#[derive(Debug, Clone, Copy)]
enum Stencil {
    /// Neighbour indices `[E, W, N, S, D1, D2]`; `D1/D2` is the diagonal pair
    /// (`NE/SW` when `main_diag`, else `SE/NW`). 1D uses `E, W` only.
    Centered { nb: [u32; 6], main_diag: bool },
    /// Rows `start..end` of the fitted stencil table.
    Fit { start: u32, end: u32 },
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeGeom {
    prod_ell: f64,
    /// Constant part of `det(D^2 u) prod l` (2D: `Q0`; 1D: `sum_F n_F^2 prod_{G != F} l_G`).
    q0: f64,
    /// `Q1 = sum_F (J n_F)(J n_F)^T prod_{H != F} l_H`, as `(xx, xy, yy)`.
    q1: [f64; 3],
    /// `A = D^2 u_can = sum_F n_F n_F^T / l_F`, as `(xx, xy, yy)`; unused on `∂P`.
    a: [f64; 3],
    /// `u_can - <x, grad u_can> - log prod l = sum_F (1 - l_F)`.
    expo0: f64,
    u_can: f64,
}

#[derive(Debug)]
pub struct PotentialGrid {
    polytope: Polytope,
    dim: usize,
    steps: i64,
    h: f64,
    nodes: Vec<[i64; 2]>,
    x: Vec<[f64; 2]>,
    index: HashMap<[i64; 2], usize>,
    origin: usize,
    boundary: Vec<bool>,
    geom: Vec<NodeGeom>,
    stencil: Vec<Stencil>,
    fit_idx: Vec<u32>,
    fit_w: Vec<Derivs>,
    weights: Vec<f64>,
}

/// Unnormalized `sigma` at one node, with the convexity margin.
#[derive(Debug, Clone, Copy)]
pub struct NodeSigma {
    /// `det(D^2 u) e^{u - <x, grad u>}`.
    pub raw: f64,
    /// Smallest eigenvalue of `D^2 u`, `+inf` on `∂P`.
    pub lambda_min: f64,
}

impl PotentialGrid {
    /// # Errors
    ///
    /// `InvalidInput` unless `1/h` is an integer `>= 2` and `P` has exact lattice data
    /// in dimension 1 or 2.
    pub fn new(p: &Polytope, h: f64) -> Result<Self> {
        let dim = p.dim();
        if dim != 1 && dim != 2 {
            return Err(Error::Unsupported(format!("grids in dimension {dim}")));
        }
        let inv = 1.0 / h;
        let steps = inv.round() as i64;
        if !(h > 0.0) || steps < 2 || (inv - steps as f64).abs() > 1e-9 * inv {
            return Err(Error::invalid(format!("grid spacing {h} is not 1/N for an integer N >= 2")));
        }
        let normals = p.lattice_normals().ok_or_else(|| Error::invalid("grid needs lattice facet normals"))?.to_vec();
        let offsets = exact_offsets(p)?;
        // Node test <n, k> + N * offset >= 0, in integers: offset = num / den.
        let scaled: Vec<(i64, i64)> = offsets.iter().map(|(num, den)| (num * steps, *den)).collect();
        let level = |k: [i64; 2], f: usize| -> i64 {
            let n = &normals[f];
            let dot = n[0] * k[0] + if dim == 2 { n[1] * k[1] } else { 0 };
            dot * scaled[f].1 + scaled[f].0
        };
        let inside = |k: [i64; 2]| (0..normals.len()).all(|f| level(k, f) >= 0);

        let mut lo = [0i64; 2];
        let mut hi = [0i64; 2];
        for d in 0..dim {
            let mn = p.vertices().iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
            let mx = p.vertices().iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
            lo[d] = (mn * steps as f64).floor() as i64 - 1;
            hi[d] = (mx * steps as f64).ceil() as i64 + 1;
        }
        let mut nodes = Vec::new();
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                let k = [i, j];
                if inside(k) {
                    nodes.push(k);
                }
            }
        }
        let index: HashMap<[i64; 2], usize> = nodes.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let origin = *index.get(&[0, 0]).ok_or_else(|| Error::invalid("origin is not a grid node"))?;
        let x: Vec<[f64; 2]> = nodes.iter().map(|k| [k[0] as f64 * h, k[1] as f64 * h]).collect();

        let nf: Vec<[f64; 2]> =
            normals.iter().map(|n| [n[0] as f64, if dim == 2 { n[1] as f64 } else { 0.0 }]).collect();
        let mut boundary = Vec::with_capacity(nodes.len());
        let mut geom = Vec::with_capacity(nodes.len());
        for k in &nodes {
            let ell: Vec<f64> =
                (0..normals.len()).map(|f| level(*k, f) as f64 / (steps as f64 * scaled[f].1 as f64)).collect();
            let on_bd = (0..normals.len()).any(|f| level(*k, f) == 0);
            boundary.push(on_bd);
            geom.push(node_geometry(dim, &nf, &ell, on_bd));
        }

        let mut grid = PotentialGrid {
            polytope: p.clone(),
            dim,
            steps,
            h,
            nodes,
            x,
            index,
            origin,
            boundary,
            geom,
            stencil: Vec::new(),
            fit_idx: Vec::new(),
            fit_w: Vec::new(),
            weights: Vec::new(),
        };
        grid.build_stencils()?;
        grid.build_weights(&lo, &hi)?;
        Ok(grid)
    }

    pub fn polytope(&self) -> &Polytope {
        &self.polytope
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `1/h`.
    pub fn steps(&self) -> i64 {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i][..self.dim]
    }

    /// Integer coordinates `k` of node `i` (`x = k h`).
    pub fn lattice_coords(&self, i: usize) -> [i64; 2] {
        self.nodes[i]
    }

    pub fn node_at(&self, k: [i64; 2]) -> Option<usize> {
        self.index.get(&k).copied()
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn u_can(&self, i: usize) -> f64 {
        self.geom[i].u_can
    }

    /// Nodes using a fitted (non-centered) stencil.
    pub fn collar_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| matches!(self.stencil[i], Stencil::Fit { .. }))
    }

    /// `f` evaluated at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.x(i))).collect()
    }

    /// Quadrature of nodal values, compensated summation in node order.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let mut s = Neumaier::default();
        for (w, v) in self.weights.iter().zip(values) {
            s.add(w * v);
        }
        s.sum()
    }

    /// Quadrature of `values * f(x)`.
    pub fn integrate_with(&self, values: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
        let mut s = Neumaier::default();
        for (i, (w, v)) in self.weights.iter().zip(values).enumerate() {
            s.add(w * v * f(self.x(i)));
        }
        s.sum()
    }

    /// Numerical derivatives of `v` at node `i`.
    pub fn derivatives(&self, v: &[f64], i: usize) -> Derivs {
        let h = self.h;
        let vi = v[i];
        match self.stencil[i] {
            Stencil::Centered { nb, main_diag } => {
                let e = v[nb[0] as usize];
                let w = v[nb[1] as usize];
                if self.dim == 1 {
                    return [(e - w) / (2.0 * h), 0.0, (e - 2.0 * vi + w) / (h * h), 0.0, 0.0];
                }
                let n = v[nb[2] as usize];
                let s = v[nb[3] as usize];
                let d1 = v[nb[4] as usize];
                let d2 = v[nb[5] as usize];
                let axis = e + w + n + s;
                let vxy = if main_diag {
                    (d1 + d2 + 2.0 * vi - axis) / (2.0 * h * h)
                } else {
                    (axis - 2.0 * vi - d1 - d2) / (2.0 * h * h)
                };
                [
                    (e - w) / (2.0 * h),
                    (n - s) / (2.0 * h),
                    (e - 2.0 * vi + w) / (h * h),
                    vxy,
                    (n - 2.0 * vi + s) / (h * h),
                ]
            }
            Stencil::Fit { start, end } => {
                let mut d = [0.0; 5];
                for r in start as usize..end as usize {
                    let diff = v[self.fit_idx[r] as usize] - vi;
                    let wr = &self.fit_w[r];
                    for c in 0..5 {
                        d[c] += wr[c] * diff;
                    }
                }
                d
            }
        }
    }

    /// `det(D^2 u) e^{u - <x, grad u>}` at node `i` for `u = u_can + v`, with the
    /// `u_can` parts combined analytically: `det(D^2 u) prod l_F` is a polynomial
    /// in `l` and `D^2 v`, and `u_can - <x, grad u_can> = log prod l_F + sum_F (1 - l_F)`.
    ///
    /// # Errors
    ///
    /// `ConvexityLoss` if `D^2 u` is not positive definite (interior) or the
    /// tangential part degenerates (boundary).
    pub fn node_sigma(&self, v: &[f64], i: usize) -> Result<NodeSigma> {
        let d = self.derivatives(v, i);
        let g = &self.geom[i];
        let x = self.x[i];
        let (det_part, lambda_min) = if self.dim == 1 {
            let gval = g.q0 + d[2] * g.prod_ell;
            let lam = if self.boundary[i] { f64::INFINITY } else { g.a[0] + d[2] };
            (gval, lam)
        } else {
            let (hxx, hxy, hyy) = (d[2], d[3], d[4]);
            let gval =
                g.q0 + g.q1[0] * hxx + 2.0 * g.q1[1] * hxy + g.q1[2] * hyy + (hxx * hyy - hxy * hxy) * g.prod_ell;
            let lam = if self.boundary[i] {
                f64::INFINITY
            } else {
                let (axx, axy, ayy) = (g.a[0] + hxx, g.a[1] + hxy, g.a[2] + hyy);
                let half_tr = 0.5 * (axx + ayy);
                let disc = (0.25 * (axx - ayy) * (axx - ayy) + axy * axy).sqrt();
                half_tr - disc
            };
            (gval, lam)
        };
        if !(det_part > 0.0) || !(lambda_min > 0.0) {
            return Err(Error::ConvexityLoss { node: i, x: self.x(i).to_vec() });
        }
        let x_grad = x[0] * d[0] + if self.dim == 2 { x[1] * d[1] } else { 0.0 };
        Ok(NodeSigma { raw: det_part * (g.expo0 + v[i] - x_grad).exp(), lambda_min })
    }

    fn build_stencils(&mut self) -> Result<()> {
        let n = self.len();
        let mut stencil = Vec::with_capacity(n);
        for i in 0..n {
            let k = self.nodes[i];
            let at = |dx: i64, dy: i64| self.index.get(&[k[0] + dx, k[1] + dy]).map(|&j| j as u32);
            let st = if self.dim == 1 {
                match (at(1, 0), at(-1, 0)) {
                    (Some(e), Some(w)) => Some(Stencil::Centered { nb: [e, w, 0, 0, 0, 0], main_diag: true }),
                    _ => None,
                }
            } else {
                match (at(1, 0), at(-1, 0), at(0, 1), at(0, -1)) {
                    (Some(e), Some(w), Some(nn), Some(s)) => match (at(1, 1), at(-1, -1), at(1, -1), at(-1, 1)) {
                        (Some(ne), Some(sw), _, _) => {
                            Some(Stencil::Centered { nb: [e, w, nn, s, ne, sw], main_diag: true })
                        }
                        (_, _, Some(se), Some(nw)) => {
                            Some(Stencil::Centered { nb: [e, w, nn, s, se, nw], main_diag: false })
                        }
                        _ => None,
                    },
                    _ => None,
                }
            };
            let st = match st {
                Some(s) => s,
                None => {
                    let start = self.fit_idx.len() as u32;
                    self.fit_node(i)?;
                    Stencil::Fit { start, end: self.fit_idx.len() as u32 }
                }
            };
            stencil.push(st);
        }
        self.stencil = stencil;
        Ok(())
    }

    /// Weighted least-squares fit of a cubic Taylor polynomial to `v_j - v_i`.
    fn fit_node(&mut self, i: usize) -> Result<()> {
        let k = self.nodes[i];
        let h = self.h;
        if self.dim == 1 {
            // Second-order one-sided differences from the endpoint inwards.
            let dir = if self.index.contains_key(&[k[0] + 1, 0]) { 1 } else { -1 };
            let s = dir as f64;
            let mut rows = Vec::new();
            for (m, c1, c2) in [(1, 2.0, -5.0), (2, -0.5, 4.0), (3, 0.0, -1.0)] {
                let j = self
                    .index
                    .get(&[k[0] + dir * m, 0])
                    .ok_or_else(|| Error::invalid("grid too coarse for one-sided stencils"))?;
                rows.push((*j as u32, [s * c1 / h, 0.0, c2 / (h * h), 0.0, 0.0]));
            }
            for (j, w) in rows {
                self.fit_idx.push(j);
                self.fit_w.push(w);
            }
            return Ok(());
        }
        // Cubic fits first; quadratic ones only where a sharp vertex leaves too few
        // well-spread nodes (at such vertices only the gradient enters sigma).
        for (terms, max_radius) in [(9usize, 6i64), (5, 10)] {
            for radius in 2..=max_radius {
                let mut pts = Vec::new();
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        if (dx, dy) == (0, 0) {
                            continue;
                        }
                        if let Some(&j) = self.index.get(&[k[0] + dx, k[1] + dy]) {
                            pts.push((j, dx as f64, dy as f64));
                        }
                    }
                }
                if pts.len() < terms + terms / 2 {
                    continue;
                }
                if let Some(rows) = fit_rows(&pts, terms, h) {
                    for (j, w) in rows {
                        self.fit_idx.push(j as u32);
                        self.fit_w.push(w);
                    }
                    return Ok(());
                }
            }
        }
        Err(Error::invalid(format!("no well-posed boundary stencil at node {:?}; grid too coarse", k)))
    }

    fn build_weights(&mut self, lo: &[i64; 2], hi: &[i64; 2]) -> Result<()> {
        let n = self.len();
        let dim = self.dim;
        let h = self.h;
        let mut w = vec![0.0; n];
        let facets: Vec<AffineFn> =
            self.polytope.facets().iter().map(|f| AffineFn::new(f.offset, f.normal.clone())).collect();
        let cell_volume = h.powi(dim as i32);
        let (jlo, jhi) = if dim == 2 { (lo[1], hi[1]) } else { (0, 1) };
        for j in jlo..jhi {
            for i in lo[0]..hi[0] {
                let corners: Vec<[i64; 2]> = if dim == 1 {
                    vec![[i, 0], [i + 1, 0]]
                } else {
                    vec![[i, j], [i + 1, j], [i + 1, j + 1], [i, j + 1]]
                };
                let inside: Vec<usize> = corners.iter().filter_map(|c| self.index.get(c).copied()).collect();
                if inside.len() == corners.len() {
                    for &c in &inside {
                        w[c] += cell_volume / corners.len() as f64;
                    }
                    continue;
                }
                let mut region: Vec<Vec<f64>> =
                    corners.iter().map(|c| c[..dim].iter().map(|&t| t as f64 * h).collect()).collect();
                for a in &facets {
                    region = clip_region(dim, &region, a);
                    if region.is_empty() {
                        break;
                    }
                }
                if region.is_empty() {
                    continue;
                }
                let m = region_moments(dim, &region, 1);
                if m[0] <= 0.0 {
                    continue;
                }
                let centroid: Vec<f64> = (0..dim).map(|d| m[1 + d] / m[0]).collect();
                let base = [i, j];
                let interp = self.affine_interpolation(&inside, &base, &centroid)?;
                for (node, lam) in interp {
                    w[node] += m[0] * lam;
                }
            }
        }
        self.weights = w;
        Ok(())
    }

    /// Weights `lam` with `sum lam p(x_node) = p(target)` for affine `p`, minimal norm.
    fn affine_interpolation(&self, corners: &[usize], cell: &[i64; 2], target: &[f64]) -> Result<Vec<(usize, f64)>> {
        let dim = self.dim;
        let mut cand: Vec<usize> = corners.to_vec();
        let mut radius = 1i64;
        while !self.affinely_spanning(&cand) {
            cand.clear();
            let (jr0, jr1) = if dim == 2 { (cell[1] - radius, cell[1] + 1 + radius) } else { (0, 0) };
            for jj in jr0..=jr1 {
                for ii in cell[0] - radius..=cell[0] + 1 + radius {
                    if let Some(&q) = self.index.get(&[ii, jj]) {
                        cand.push(q);
                    }
                }
            }
            radius += 1;
            if radius > 6 {
                return Err(Error::invalid("grid too coarse for boundary quadrature"));
            }
        }
        // Columns 1, x - target; minimal-norm solution of X^T lam = e_0.
        let x =
            DMatrix::from_fn(
                cand.len(),
                dim + 1,
                |r, c| if c == 0 { 1.0 } else { self.x[cand[r]][c - 1] - target[c - 1] },
            );
        let gram = x.transpose() * &x;
        let inv = gram.try_inverse().ok_or_else(|| Error::Internal("degenerate interpolation nodes".into()))?;
        let mut rhs = DVector::zeros(dim + 1);
        rhs[0] = 1.0;
        let lam = &x * (inv * rhs);
        Ok(cand.iter().enumerate().map(|(r, &q)| (q, lam[r])).collect())
    }

    fn affinely_spanning(&self, nodes: &[usize]) -> bool {
        if nodes.len() < self.dim + 1 {
            return false;
        }
        if self.dim == 1 {
            return true;
        }
        let p0 = self.nodes[nodes[0]];
        nodes.iter().any(|&a| {
            nodes.iter().any(|&b| {
                let (pa, pb) = (self.nodes[a], self.nodes[b]);
                (pa[0] - p0[0]) * (pb[1] - p0[1]) - (pb[0] - p0[0]) * (pa[1] - p0[1]) != 0
            })
        })
    }
}

/// Least-squares derivative weights at the origin of the offsets `pts` (in units
/// of `h`), fitting the first `terms` Taylor monomials `x, y, xx/2, xy, yy/2,
/// xxx/6, xxy/2, xyy/2, yyy/6`. `None` if the system is badly conditioned.
fn fit_rows(pts: &[(usize, f64, f64)], terms: usize, h: f64) -> Option<Vec<(usize, Derivs)>> {
    let m = DMatrix::from_fn(pts.len(), terms, |r, c| {
        let (_, a, b) = pts[r];
        match c {
            0 => a,
            1 => b,
            2 => a * a / 2.0,
            3 => a * b,
            4 => b * b / 2.0,
            5 => a * a * a / 6.0,
            6 => a * a * b / 2.0,
            7 => a * b * b / 2.0,
            _ => b * b * b / 6.0,
        }
    });
    let mw = DMatrix::from_fn(pts.len(), terms, |r, c| {
        let (_, a, b) = pts[r];
        m[(r, c)] / (a * a + b * b)
    });
    let normal = m.transpose() * &mw;
    let sv = normal.clone().svd(false, false).singular_values;
    if !(sv.min() > 1e-10 * sv.max()) {
        return None;
    }
    let coef = normal.try_inverse()? * mw.transpose();
    let scale = [1.0 / h, 1.0 / h, 1.0 / (h * h), 1.0 / (h * h), 1.0 / (h * h)];
    Some(
        pts.iter()
            .enumerate()
            .map(|(r, (j, _, _))| {
                let mut w = [0.0; 5];
                for c in 0..5 {
                    w[c] = coef[(c, r)] * scale[c];
                }
                (*j, w)
            })
            .collect(),
    )
}

fn exact_offsets(p: &Polytope) -> Result<Vec<(i64, i64)>> {
    // Reflexive polytopes have offsets 1; otherwise recover small rationals.
    p.facets()
        .iter()
        .map(|f| {
            let q = num_rational::BigRational::from_float(f.offset)
                .ok_or_else(|| Error::invalid("non-finite facet offset"))?;
            let approx = q.numer().to_i64().zip(q.denom().to_i64());
            match approx {
                Some((n, d)) if q.is_positive() && d <= 1 << 20 => Ok((n, d)),
                _ => Err(Error::invalid("facet offsets must be positive dyadic rationals")),
            }
        })
        .collect()
}

fn node_geometry(dim: usize, nf: &[[f64; 2]], ell: &[f64], on_bd: bool) -> NodeGeom {
    let m = nf.len();
    let prod_except = |skip: &[usize]| -> f64 { (0..m).filter(|f| !skip.contains(f)).map(|f| ell[f]).product::<f64>() };
    let prod_ell: f64 = ell.iter().product();
    let expo0: f64 = ell.iter().map(|l| 1.0 - l).sum();
    let u_can: f64 = ell.iter().map(|&l| if l > 0.0 { l * l.ln() } else { 0.0 }).sum();
    let mut g = NodeGeom { prod_ell, expo0, u_can, ..NodeGeom::default() };
    if dim == 1 {
        g.q0 = (0..m).map(|f| nf[f][0] * nf[f][0] * prod_except(&[f])).sum();
        if !on_bd {
            g.a[0] = (0..m).map(|f| nf[f][0] * nf[f][0] / ell[f]).sum();
        }
        return g;
    }
    for f in 0..m {
        for gg in f + 1..m {
            let det = nf[f][0] * nf[gg][1] - nf[f][1] * nf[gg][0];
            g.q0 += det * det * prod_except(&[f, gg]);
        }
        let pe = prod_except(&[f]);
        let (jx, jy) = (-nf[f][1], nf[f][0]);
        g.q1[0] += jx * jx * pe;
        g.q1[1] += jx * jy * pe;
        g.q1[2] += jy * jy * pe;
        if !on_bd {
            g.a[0] += nf[f][0] * nf[f][0] / ell[f];
            g.a[1] += nf[f][0] * nf[f][1] / ell[f];
            g.a[2] += nf[f][1] * nf[f][1] / ell[f];
        }
    }
    g
}

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Nodal values on a shared grid.
#[derive(Debug, Clone)]
pub struct GridFn {
    pub grid: Arc<PotentialGrid>,
    pub values: Vec<f64>,
}

impl GridFn {
    pub fn new(grid: Arc<PotentialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("nodal value count does not match the grid"));
        }
        Ok(GridFn { grid, values })
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// `int g f` by quadrature.
    pub fn integrate_against(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.grid.integrate_with(&self.values, f)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog;

    #[test]
    fn quadrature_weights_sum_to_volume() {
        for name in ["P1", "P2", "BlpP2", "Q6a", "Q7"] {
            let p = catalog(name).unwrap();
            let g = PotentialGrid::new(&p, 1.0 / 16.0).unwrap();
            let s: f64 = g.weights().iter().sum();
            assert!((s - p.volume()).abs() < 1e-12, "{name}: {s}");
        }
    }

    #[test]
    fn quadrature_is_exact_for_affine() {
        let p = catalog("Q6a").unwrap();
        let g = PotentialGrid::new(&p, 1.0 / 16.0).unwrap();
        let vals = g.sample(|x| 1.0 + 2.0 * x[0] - 3.0 * x[1]);
        let exact = p.volume() + 2.0 * p.moment(&[1, 0]).unwrap() - 3.0 * p.moment(&[0, 1]).unwrap();
        assert!((g.integrate(&vals) - exact).abs() < 1e-12);
    }

    #[test]
    fn stencils_reproduce_cubics() {
        for name in ["P1", "P2", "Bl2P2", "Q5a", "Q6a"] {
            let p = catalog(name).unwrap();
            let g = PotentialGrid::new(&p, 1.0 / 16.0).unwrap();
            let f = |x: &[f64]| {
                let y = x.get(1).copied().unwrap_or(0.0);
                0.3 * x[0] * x[0] - 0.7 * x[0] * y + 0.2 * y * y + 0.5 * x[0] - 0.1 * y
            };
            let v = g.sample(f);
            for i in 0..g.len() {
                let d = g.derivatives(&v, i);
                let x = g.x(i);
                let y = x.get(1).copied().unwrap_or(0.0);
                let want: Derivs = if g.dim() == 1 {
                    [0.6 * x[0] + 0.5, 0.0, 0.6, 0.0, 0.0]
                } else {
                    [0.6 * x[0] - 0.7 * y + 0.5, -0.7 * x[0] + 0.4 * y - 0.1, 0.6, -0.7, 0.4]
                };
                for c in 0..5 {
                    assert!((d[c] - want[c]).abs() < 1e-8, "{name} node {i} comp {c}: {} vs {}", d[c], want[c]);
                }
            }
        }
    }

    #[test]
    fn rejects_non_integer_steps() {
        let p = catalog("P1").unwrap();
        assert!(PotentialGrid::new(&p, 0.3).is_err());
        assert!(PotentialGrid::new(&p, 0.125).is_ok());
    }
}
