//! Convex polytopes in dimension 1 and 2 with exact moments.
//!
//! Lattice polytopes are given by integer facet normals and rational offsets,
//! `P = {x : <n_F, x> + offset_F >= 0}`. Their vertices and monomial moments
//! are computed in exact rational arithmetic and rounded once. Regions produced
//! by [`Polytope::clip`] carry floating-point data only.

use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::affine::AffineFn;
use crate::error::{Error, Result};
use crate::polynomial::{Monomials, Polynomial, MAX_DEGREE};
use crate::rational::{from_i64, to_f64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Facet {
    /// `<normal, x> + offset`, nonnegative on the polytope.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.offset + self.normal.iter().zip(x).map(|(n, xi)| n * xi).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct Polytope {
    name: String,
    dim: usize,
    /// Counter-clockwise in dimension 2, `[lo, hi]` in dimension 1.
    vertices: Vec<Vec<f64>>,
    exact_vertices: Option<Vec<Vec<BigRational>>>,
    facets: Vec<Facet>,
    lattice_normals: Option<Vec<Vec<i64>>>,
    exact_offsets: Option<Vec<BigRational>>,
    /// Vertices followed by the star point of the triangulation.
    points: Vec<Vec<f64>>,
    triangulation: Vec<Vec<usize>>,
    /// Integrals of every monomial in [`Monomials::of`]`(dim)`.
    moments: Vec<f64>,
    exact_moments: Option<Vec<BigRational>>,
}

impl Polytope {
    /// Reflexive polytope whose facet normals are the given fan rays, all offsets 1.
    pub fn from_rays(name: &str, rays: &[Vec<i64>]) -> Result<Self> {
        let offsets = vec![BigRational::one(); rays.len()];
        Self::from_halfspaces(name, rays, &offsets)
    }

    /// `{x : <n_F, x> + offset_F >= 0}` with exact data.
    pub fn from_halfspaces(name: &str, normals: &[Vec<i64>], offsets: &[BigRational]) -> Result<Self> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(Error::invalid("need one offset per facet normal"));
        }
        let dim = normals[0].len();
        if normals.iter().any(|n| n.len() != dim) {
            return Err(Error::invalid("facet normals of mixed dimension"));
        }
        if normals.iter().any(|n| n.iter().all(|c| *c == 0)) {
            return Err(Error::invalid("zero facet normal"));
        }
        let q = |n: &[i64]| n.iter().map(|c| from_i64(*c)).collect::<Vec<_>>();
        let qnormals: Vec<Vec<BigRational>> = normals.iter().map(|n| q(n)).collect();
        let exact_vertices = match dim {
            1 => interval_vertices(&qnormals, offsets)?,
            2 => polygon_vertices(&qnormals, offsets)?,
            _ => return Err(Error::Unsupported(format!("polytopes of dimension {dim}"))),
        };
        // Every facet must be supported: an edge in 2D, an endpoint in 1D.
        for (n, off) in qnormals.iter().zip(offsets) {
            let tight = exact_vertices.iter().filter(|v| dot_q(n, v) + off == BigRational::zero()).count();
            if tight < dim {
                return Err(Error::invalid(format!("facet normal {n:?} does not support a facet")));
            }
        }
        let center = vertex_average(&exact_vertices);
        let mut exact_points = exact_vertices.clone();
        exact_points.push(center);
        let triangulation = star_triangulation(dim, exact_vertices.len());
        let mons = Monomials::of(dim);
        let mut moments = vec![BigRational::zero(); mons.len()];
        for s in &triangulation {
            let verts: Vec<Vec<BigRational>> = s.iter().map(|&i| exact_points[i].clone()).collect();
            for (m, v) in moments.iter_mut().zip(simplex_moments(&verts)) {
                *m += v;
            }
        }
        if !moments[0].is_positive() {
            return Err(Error::invalid("degenerate polytope"));
        }
        let to_f = |v: &Vec<BigRational>| v.iter().map(to_f64).collect::<Vec<f64>>();
        let facets = normals
            .iter()
            .zip(offsets)
            .map(|(n, off)| Facet { normal: n.iter().map(|c| *c as f64).collect(), offset: to_f64(off) })
            .collect();
        Ok(Polytope {
            name: name.to_string(),
            dim,
            vertices: exact_vertices.iter().map(to_f).collect(),
            points: exact_points.iter().map(to_f).collect(),
            exact_vertices: Some(exact_vertices),
            facets,
            lattice_normals: Some(normals.to_vec()),
            exact_offsets: Some(offsets.to_vec()),
            triangulation,
            moments: moments.iter().map(to_f64).collect(),
            exact_moments: Some(moments),
        })
    }

    pub fn empty(dim: usize) -> Self {
        Polytope {
            name: String::new(),
            dim,
            vertices: Vec::new(),
            exact_vertices: None,
            facets: Vec::new(),
            lattice_normals: None,
            exact_offsets: None,
            points: Vec::new(),
            triangulation: Vec::new(),
            moments: vec![0.0; Monomials::of(dim).len()],
            exact_moments: None,
        }
    }

    fn from_float_vertices(dim: usize, vertices: Vec<Vec<f64>>, facets: Vec<Facet>) -> Self {
        let n = vertices.len();
        let mut center = vec![0.0; dim];
        for v in &vertices {
            for k in 0..dim {
                center[k] += v[k] / n as f64;
            }
        }
        let mut points = vertices.clone();
        points.push(center);
        let triangulation = star_triangulation(dim, n);
        let mut moments = vec![0.0; Monomials::of(dim).len()];
        for s in &triangulation {
            let verts: Vec<Vec<f64>> = s.iter().map(|&i| points[i].clone()).collect();
            for (m, v) in moments.iter_mut().zip(simplex_moments(&verts)) {
                *m += v;
            }
        }
        Polytope {
            name: String::new(),
            dim,
            vertices,
            exact_vertices: None,
            facets,
            lattice_normals: None,
            exact_offsets: None,
            points,
            triangulation,
            moments,
            exact_moments: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn exact_vertices(&self) -> Option<&[Vec<BigRational>]> {
        self.exact_vertices.as_deref()
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Integer facet normals (the fan rays for a reflexive polytope).
    pub fn lattice_normals(&self) -> Option<&[Vec<i64>]> {
        self.lattice_normals.as_deref()
    }

    /// Triangulation points: the vertices followed by the star point.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn triangulation(&self) -> &[Vec<usize>] {
        &self.triangulation
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// All offsets equal 1 and the normals are integral.
    pub fn is_reflexive(&self) -> bool {
        match (&self.lattice_normals, &self.exact_offsets) {
            (Some(_), Some(off)) => off.iter().all(|o| o.is_one()),
            _ => false,
        }
    }

    /// Every vertex cone is generated by a lattice basis.
    pub fn is_smooth(&self) -> bool {
        let (Some(normals), Some(verts), Some(offs)) =
            (&self.lattice_normals, &self.exact_vertices, &self.exact_offsets)
        else {
            return false;
        };
        verts.iter().all(|v| {
            let tight: Vec<&Vec<i64>> = normals
                .iter()
                .zip(offs)
                .filter(|(n, off)| {
                    let q: Vec<BigRational> = n.iter().map(|c| from_i64(*c)).collect();
                    dot_q(&q, v) + *off == BigRational::zero()
                })
                .map(|(n, _)| n)
                .collect();
            match self.dim {
                1 => tight.len() == 1 && tight[0][0].abs() == 1,
                2 => tight.len() == 2 && (tight[0][0] * tight[1][1] - tight[0][1] * tight[1][0]).abs() == 1,
                _ => false,
            }
        })
    }

    /// `<n_F, x> + offset_F` for every facet.
    pub fn facet_values(&self, x: &[f64]) -> Vec<f64> {
        self.facets.iter().map(|f| f.eval(x)).collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        !self.is_empty() && self.facets.iter().all(|f| f.eval(x) >= -tol)
    }

    /// Integral of the monomial with exponent vector `exps`.
    pub fn moment(&self, exps: &[u32]) -> Result<f64> {
        let deg = exps.iter().sum::<u32>() as usize;
        Monomials::of(self.dim)
            .index_of(exps)
            .map(|i| self.moments[i])
            .ok_or(Error::UnsupportedDegree { degree: deg, bound: MAX_DEGREE })
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// Exact monomial integrals, available for polytopes built from lattice data.
    pub fn exact_moments(&self) -> Option<&[BigRational]> {
        self.exact_moments.as_deref()
    }

    pub fn volume(&self) -> f64 {
        self.moments[0]
    }

    pub fn integrate_poly(&self, q: &Polynomial) -> Result<f64> {
        if q.dim() != self.dim {
            return Err(Error::invalid("polynomial and polytope dimensions differ"));
        }
        Ok(q.coeffs().iter().zip(&self.moments).map(|(c, m)| c * m).sum())
    }

    /// `(1/V) int x`.
    pub fn barycenter(&self) -> Vec<f64> {
        let v = self.volume();
        (0..self.dim).map(|i| self.moments[1 + i] / v).collect()
    }

    /// `Cov_ij = int (x_i - c_i)(x_j - c_j)`, row-major.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let v = self.volume();
        let c = self.barycenter();
        let mons = Monomials::of(self.dim);
        let mut cov = vec![vec![0.0; self.dim]; self.dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut e = vec![0u32; self.dim];
                e[i] += 1;
                e[j] += 1;
                let m = self.moments[mons.index_of(&e).expect("degree 2")];
                cov[i][j] = m - v * c[i] * c[j];
            }
        }
        cov
    }

    /// `P ∩ {a >= 0}`; empty if the intersection has no interior.
    pub fn clip(&self, a: &AffineFn) -> Polytope {
        if self.is_empty() {
            return self.clone();
        }
        if self.vertices.iter().all(|v| a.eval(v) >= 0.0) {
            return self.clone();
        }
        let mut facets = self.facets.clone();
        facets.push(Facet { normal: a.grad.clone(), offset: a.c0 });
        let verts = clip_region(self.dim, &self.vertices, a);
        if verts.len() <= self.dim {
            return Polytope::empty(self.dim);
        }
        let out = Polytope::from_float_vertices(self.dim, verts, facets);
        if out.volume() <= 0.0 {
            return Polytope::empty(self.dim);
        }
        out
    }
}

/// `region ∩ {a >= 0}` for a convex region given by its vertex list
/// (`[lo, hi]` in 1D, a counter-clockwise loop in 2D). Returns an empty list when
/// the intersection has no interior.
pub fn clip_region(dim: usize, verts: &[Vec<f64>], a: &AffineFn) -> Vec<Vec<f64>> {
    if verts.len() <= dim {
        return Vec::new();
    }
    let vals: Vec<f64> = verts.iter().map(|v| a.eval(v)).collect();
    if vals.iter().all(|&t| t >= 0.0) {
        return verts.to_vec();
    }
    if vals.iter().all(|&t| t <= 0.0) {
        return Vec::new();
    }
    if dim == 1 {
        let (lo, hi) = (verts[0][0], verts[1][0]);
        // a changes sign on [lo, hi], so it is strictly monotone there.
        let root = -a.c0 / a.grad[0];
        let (l, h) = if a.grad[0] > 0.0 { (root.max(lo), hi) } else { (lo, root.min(hi)) };
        return if l < h { vec![vec![l], vec![h]] } else { Vec::new() };
    }
    let out = clip_polygon(verts, &vals);
    if out.len() < 3 || polygon_area(&out) <= 0.0 {
        return Vec::new();
    }
    out
}

fn polygon_area(v: &[Vec<f64>]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| v[i][0] * v[(i + 1) % n][1] - v[(i + 1) % n][0] * v[i][1]).sum::<f64>()
}

/// Monomial integrals of degree `<= deg` over a convex region given by its vertex
/// list, in the graded order of [`Monomials`]. Closed forms for `deg <= 2`.
pub fn region_moments(dim: usize, verts: &[Vec<f64>], deg: usize) -> Vec<f64> {
    let count = Monomials::of(dim).count_up_to(deg);
    let mut m = vec![0.0; count];
    if verts.len() <= dim {
        return m;
    }
    if dim == 1 {
        let (p, q) = (verts[0][0], verts[1][0]);
        if deg <= 2 {
            let l = q - p;
            let closed = [l, l * (p + q) / 2.0, l * (p * p + p * q + q * q) / 3.0];
            m.copy_from_slice(&closed[..count]);
        } else {
            m.copy_from_slice(&simplex_moments(&[vec![p], vec![q]])[..count]);
        }
        return m;
    }
    let v0 = &verts[0];
    for i in 1..verts.len() - 1 {
        let (v1, v2) = (&verts[i], &verts[i + 1]);
        if deg <= 2 {
            let a = 0.5 * ((v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1]));
            let s = [v0[0] + v1[0] + v2[0], v0[1] + v1[1] + v2[1]];
            let t = [a, a * s[0] / 3.0, a * s[1] / 3.0];
            let sq = |i: usize, j: usize| v0[i] * v0[j] + v1[i] * v1[j] + v2[i] * v2[j] + s[i] * s[j];
            let q = [a / 12.0 * sq(0, 0), a / 12.0 * sq(0, 1), a / 12.0 * sq(1, 1)];
            for k in 0..count {
                m[k] += if k < 3 { t[k] } else { q[k - 3] };
            }
        } else {
            let full = simplex_moments(&[v0.clone(), v1.clone(), v2.clone()]);
            for k in 0..count {
                m[k] += full[k];
            }
        }
    }
    m
}

/// Sutherland-Hodgman step for a convex counter-clockwise loop.
fn clip_polygon(verts: &[Vec<f64>], vals: &[f64]) -> Vec<Vec<f64>> {
    let n = verts.len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for i in 0..n {
        let j = (i + 1) % n;
        let (p, q) = (&verts[i], &verts[j]);
        let (ap, aq) = (vals[i], vals[j]);
        if ap >= 0.0 {
            out.push(p.clone());
        }
        if (ap > 0.0 && aq < 0.0) || (ap < 0.0 && aq > 0.0) {
            let t = ap / (ap - aq);
            out.push(vec![p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out.dedup_by(|a, b| a == b);
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn dot_q(n: &[BigRational], x: &[BigRational]) -> BigRational {
    n.iter().zip(x).fold(BigRational::zero(), |acc, (a, b)| acc + a * b)
}

fn interval_vertices(normals: &[Vec<BigRational>], offsets: &[BigRational]) -> Result<Vec<Vec<BigRational>>> {
    let mut lo: Option<BigRational> = None;
    let mut hi: Option<BigRational> = None;
    for (n, off) in normals.iter().zip(offsets) {
        let bound = -off / &n[0];
        if n[0].is_positive() {
            lo = Some(lo.map_or(bound.clone(), |l| l.max(bound)));
        } else {
            hi = Some(hi.map_or(bound.clone(), |h| h.min(bound)));
        }
    }
    match (lo, hi) {
        (Some(l), Some(h)) if l < h => Ok(vec![vec![l], vec![h]]),
        _ => Err(Error::invalid("facets do not bound a nondegenerate interval")),
    }
}

fn polygon_vertices(normals: &[Vec<BigRational>], offsets: &[BigRational]) -> Result<Vec<Vec<BigRational>>> {
    let mut verts: Vec<Vec<BigRational>> = Vec::new();
    for i in 0..normals.len() {
        for j in i + 1..normals.len() {
            let (a, b) = (&normals[i], &normals[j]);
            let det = &a[0] * &b[1] - &a[1] * &b[0];
            if det.is_zero() {
                continue;
            }
            // a.x = -off_i, b.x = -off_j
            let (ri, rj) = (-&offsets[i], -&offsets[j]);
            let x0 = (&ri * &b[1] - &rj * &a[1]) / &det;
            let x1 = (&a[0] * &rj - &b[0] * &ri) / &det;
            let x = vec![x0, x1];
            let feasible = normals.iter().zip(offsets).all(|(n, off)| !(dot_q(n, &x) + off).is_negative());
            if feasible && !verts.contains(&x) {
                verts.push(x);
            }
        }
    }
    if verts.len() < 3 {
        return Err(Error::invalid("facets do not bound a polygon with interior"));
    }
    let c = vertex_average(&verts);
    let cf: Vec<f64> = c.iter().map(to_f64).collect();
    let mut keyed: Vec<(f64, Vec<BigRational>)> = verts
        .into_iter()
        .map(|v| {
            let ang = (to_f64(&v[1]) - cf[1]).atan2(to_f64(&v[0]) - cf[0]);
            (ang, v)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(keyed.into_iter().map(|(_, v)| v).collect())
}

fn vertex_average(verts: &[Vec<BigRational>]) -> Vec<BigRational> {
    let dim = verts[0].len();
    let k = from_i64(verts.len() as i64);
    (0..dim).map(|d| verts.iter().fold(BigRational::zero(), |acc, v| acc + &v[d]) / &k).collect()
}

/// Simplices `(star, v_i, v_{i+1})` over the boundary; star point has index `n_vertices`.
fn star_triangulation(dim: usize, n_vertices: usize) -> Vec<Vec<usize>> {
    match dim {
        1 => vec![vec![0, 2], vec![2, 1]],
        _ => (0..n_vertices).map(|i| vec![n_vertices, i, (i + 1) % n_vertices]).collect(),
    }
}

/// Integrals of every monomial of degree `<= MAX_DEGREE` over the simplex with the
/// given `n + 1` vertices, by pulling back to the reference simplex where
/// `int s^beta = beta! / (n + |beta|)!`.
pub(crate) fn simplex_moments<T>(verts: &[Vec<T>]) -> Vec<T>
where
    T: Clone + Num + Signed + FromPrimitive,
{
    let n = verts.len() - 1;
    let mons = Monomials::of(n);
    let nm = mons.len();
    let edges: Vec<Vec<T>> =
        (1..=n).map(|j| (0..n).map(|i| verts[j][i].clone() - verts[0][i].clone()).collect()).collect();
    let jac = det(&edges).abs();

    // x_i as a dense polynomial in the reference coordinates s_1..s_n.
    let coord = |i: usize| {
        let mut p = vec![T::zero(); nm];
        p[0] = verts[0][i].clone();
        for j in 0..n {
            p[1 + j] = edges[j][i].clone();
        }
        p
    };
    let mul = |a: &[T], b: &[T]| {
        let mut out = vec![T::zero(); nm];
        let mut e = vec![0u32; n];
        for (i, ai) in a.iter().enumerate() {
            if ai.is_zero() {
                continue;
            }
            for (j, bj) in b.iter().enumerate() {
                if bj.is_zero() {
                    continue;
                }
                for (k, ek) in e.iter_mut().enumerate() {
                    *ek = mons.exponents(i)[k] + mons.exponents(j)[k];
                }
                if let Some(idx) = mons.index_of(&e) {
                    out[idx] = out[idx].clone() + ai.clone() * bj.clone();
                }
            }
        }
        out
    };
    let mut one = vec![T::zero(); nm];
    one[0] = T::one();
    let powers: Vec<Vec<Vec<T>>> = (0..n)
        .map(|i| {
            let x = coord(i);
            let mut pw = vec![one.clone()];
            for k in 1..=MAX_DEGREE {
                let next = mul(&pw[k - 1], &x);
                pw.push(next);
            }
            pw
        })
        .collect();
    let fact = |k: u32| (1..=k as u64).fold(T::one(), |acc, m| acc * T::from_u64(m).expect("small integer"));
    let reference: Vec<T> = (0..nm)
        .map(|b| {
            let beta = mons.exponents(b);
            let num = beta.iter().fold(T::one(), |acc, &k| acc * fact(k));
            num / fact(n as u32 + beta.iter().sum::<u32>())
        })
        .collect();

    (0..nm)
        .map(|a| {
            let alpha = mons.exponents(a);
            let mut p = one.clone();
            for (i, &k) in alpha.iter().enumerate() {
                p = mul(&p, &powers[i][k as usize]);
            }
            let s = p.iter().zip(&reference).fold(T::zero(), |acc, (c, r)| acc + c.clone() * r.clone());
            s * jac.clone()
        })
        .collect()
}

fn det<T: Clone + Num>(m: &[Vec<T>]) -> T {
    match m.len() {
        0 => T::one(),
        1 => m[0][0].clone(),
        2 => m[0][0].clone() * m[1][1].clone() - m[0][1].clone() * m[1][0].clone(),
        n => {
            // Cofactor expansion along the first row; only used for tiny matrices.
            let mut acc = T::zero();
            for c in 0..n {
                let minor: Vec<Vec<T>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, v)| v.clone()).collect())
                    .collect();
                let term = m[0][c].clone() * det(&minor);
                acc = if c % 2 == 0 { acc + term } else { acc - term };
            }
            acc
        }
    }
}
