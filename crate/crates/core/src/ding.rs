//! Piecewise-linear convex functions on a polytope and their non-Archimedean Ding
//! invariants, norms, the Futaki-Mabuchi pairing and the extremal affine function.
//!
//! Integrals of a PL function are exact: the polytope is cut into the activity
//! regions of the pieces and each piece is integrated as a polynomial.

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::affine::AffineFn;
use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::polynomial::{Monomials, Polynomial, MAX_DEGREE};
use crate::polytope::{clip_region, region_moments, Polytope};
use crate::rational::to_f64;

/// Pointwise maximum of affine pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct PLConvexFn {
    pub pieces: Vec<AffineFn>,
}

/// `max{a, 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleConvexFn {
    pub a: AffineFn,
}

impl SimpleConvexFn {
    pub fn new(a: AffineFn) -> Self {
        SimpleConvexFn { a }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.a.eval(x).max(0.0)
    }

    pub fn to_pl(&self) -> PLConvexFn {
        PLConvexFn::simple(self.a.clone())
    }
}

impl PLConvexFn {
    pub fn new(pieces: Vec<AffineFn>) -> Result<Self> {
        let Some(first) = pieces.first() else {
            return Err(Error::invalid("a PL convex function needs at least one piece"));
        };
        let dim = first.dim();
        if pieces.iter().any(|p| p.dim() != dim) {
            return Err(Error::invalid("pieces of mixed dimension"));
        }
        Ok(PLConvexFn { pieces })
    }

    pub fn affine(a: AffineFn) -> Self {
        PLConvexFn { pieces: vec![a] }
    }

    pub fn zero(dim: usize) -> Self {
        Self::affine(AffineFn::zero(dim))
    }

    /// `max{a, 0}`.
    pub fn simple(a: AffineFn) -> Self {
        let dim = a.dim();
        PLConvexFn { pieces: vec![a, AffineFn::zero(dim)] }
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].dim()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.pieces.iter().map(|p| p.eval(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scale(&self, s: f64) -> PLConvexFn {
        assert!(s >= 0.0, "negative multiples are not convex");
        PLConvexFn { pieces: self.pieces.iter().map(|p| p.scale(s)).collect() }
    }

    /// `f + g` for affine `g`.
    pub fn add_affine(&self, g: &AffineFn) -> PLConvexFn {
        PLConvexFn { pieces: self.pieces.iter().map(|p| p.add(g)).collect() }
    }

    /// Drops duplicate pieces and pieces that are nowhere active on `p`.
    pub fn pruned(&self, p: &Polytope) -> PLConvexFn {
        let mut uniq: Vec<AffineFn> = Vec::new();
        for piece in &self.pieces {
            if !uniq.contains(piece) {
                uniq.push(piece.clone());
            }
        }
        let f = PLConvexFn { pieces: uniq };
        let active: Vec<AffineFn> = activity_regions(p, &f).into_iter().map(|(k, _)| f.pieces[k].clone()).collect();
        if active.is_empty() {
            f
        } else {
            PLConvexFn { pieces: active }
        }
    }
}

/// Weight `g` in `int f g`.
#[derive(Debug, Clone, Copy)]
pub enum Weight<'a> {
    One,
    Poly(&'a Polynomial),
    PiecewiseLinear(&'a PLConvexFn),
    Grid(&'a GridFn),
}

/// The regions of `p` where each piece of `f` attains the maximum, as vertex lists.
/// Ties are broken towards the lower piece index so regions do not overlap.
pub fn activity_regions(p: &Polytope, f: &PLConvexFn) -> Vec<(usize, Vec<Vec<f64>>)> {
    let mut out = Vec::new();
    if p.is_empty() {
        return out;
    }
    for (k, ak) in f.pieces.iter().enumerate() {
        let mut region = p.vertices().to_vec();
        for (j, aj) in f.pieces.iter().enumerate() {
            if j == k {
                continue;
            }
            let diff = ak.sub(aj);
            if diff.is_zero() {
                if j < k {
                    region.clear();
                }
                if region.is_empty() {
                    break;
                }
                continue;
            }
            region = clip_region(p.dim(), &region, &diff);
            if region.is_empty() {
                break;
            }
        }
        if !region.is_empty() {
            out.push((k, region));
        }
    }
    out
}

/// `int_R a * q` over a region for affine `a` and polynomial `q`.
fn region_affine_poly(dim: usize, region: &[Vec<f64>], a: &AffineFn, q: &Polynomial) -> Result<f64> {
    let prod = Polynomial::affine(a.c0, &a.grad).mul(q)?;
    let deg = prod.degree();
    let m = region_moments(dim, region, deg);
    Ok(prod.coeffs().iter().zip(&m).map(|(c, mi)| c * mi).sum())
}

/// `int_R a * b` for affine `a`, `b`.
fn region_affine_affine(dim: usize, region: &[Vec<f64>], a: &AffineFn, b: &AffineFn) -> f64 {
    affine_product_moment(dim, &region_moments(dim, region, 2), a, b)
}

/// `int_R a * b` from the monomial integrals of degree `<= 2` over `R`.
pub(crate) fn affine_product_moment(dim: usize, m: &[f64], a: &AffineFn, b: &AffineFn) -> f64 {
    let mut s = a.c0 * b.c0 * m[0];
    for i in 0..dim {
        s += (a.c0 * b.grad[i] + b.c0 * a.grad[i]) * m[1 + i];
    }
    // Degree-2 monomials in graded order: x_i x_j for i <= j.
    let mut idx = 1 + dim;
    for i in 0..dim {
        for j in i..dim {
            let c = if i == j { a.grad[i] * b.grad[i] } else { a.grad[i] * b.grad[j] + a.grad[j] * b.grad[i] };
            s += c * m[idx];
            idx += 1;
        }
    }
    s
}

/// `int_R a` from the monomial integrals of degree `<= 1` over `R`.
pub(crate) fn affine_moment(m: &[f64], a: &AffineFn) -> f64 {
    a.c0 * m[0] + a.grad.iter().zip(&m[1..]).map(|(g, mi)| g * mi).sum::<f64>()
}

/// Minimum of `f` over `p`, attained at a vertex of an activity region.
pub fn pl_min(p: &Polytope, f: &PLConvexFn) -> f64 {
    activity_regions(p, f).iter().flat_map(|(_, r)| r.iter().map(|x| f.eval(x))).fold(f64::INFINITY, f64::min)
}

/// `int_P f * g`.
pub fn integrate(p: &Polytope, f: &PLConvexFn, g: &Weight) -> Result<f64> {
    if f.dim() != p.dim() {
        return Err(Error::invalid("function and polytope dimensions differ"));
    }
    match g {
        Weight::Grid(gf) => return Ok(gf.integrate_against(|x| f.eval(x))),
        Weight::Poly(q) if q.degree() + 1 > MAX_DEGREE => {
            return Err(Error::UnsupportedDegree { degree: q.degree() + 1, bound: MAX_DEGREE })
        }
        _ => {}
    }
    let mut total = 0.0;
    for (k, region) in activity_regions(p, f) {
        let a = &f.pieces[k];
        total += match g {
            Weight::One => affine_moment(&region_moments(p.dim(), &region, 1), a),
            Weight::Poly(q) => region_affine_poly(p.dim(), &region, a, q)?,
            Weight::PiecewiseLinear(h) => {
                let mut s = 0.0;
                for (m, b) in h.pieces.iter().enumerate() {
                    let mut r = region.clone();
                    for (j, c) in h.pieces.iter().enumerate() {
                        if j == m {
                            continue;
                        }
                        let diff = b.sub(c);
                        if diff.is_zero() {
                            if j < m {
                                r.clear();
                            }
                        } else {
                            r = clip_region(p.dim(), &r, &diff);
                        }
                        if r.is_empty() {
                            break;
                        }
                    }
                    if !r.is_empty() {
                        s += region_affine_affine(p.dim(), &r, a, b);
                    }
                }
                s
            }
            Weight::Grid(_) => unreachable!(),
        };
    }
    Ok(total)
}

/// `int_P f`.
pub fn integral(p: &Polytope, f: &PLConvexFn) -> f64 {
    integrate(p, f, &Weight::One).expect("unit weight always integrates")
}

/// `int_P f g` for two PL functions.
pub fn integral_product(p: &Polytope, f: &PLConvexFn, g: &PLConvexFn) -> f64 {
    integrate(p, f, &Weight::PiecewiseLinear(g)).expect("PL products always integrate")
}

/// `D^NA(f) = -f(0) + (1/V) int_P f`.
pub fn dna(p: &Polytope, f: &PLConvexFn) -> f64 {
    let origin = vec![0.0; p.dim()];
    -f.eval(&origin) + integral(p, f) / p.volume()
}

/// `D^NA_g(f) = -f(0) + (1/V) int_P f g`.
pub fn dna_modified(p: &Polytope, f: &PLConvexFn, g: &Weight) -> Result<f64> {
    let origin = vec![0.0; p.dim()];
    Ok(-f.eval(&origin) + integrate(p, f, g)? / p.volume())
}

/// `int_P f^2`.
pub fn l2_norm_sq(p: &Polytope, f: &PLConvexFn) -> f64 {
    integral_product(p, f, f)
}

/// `(1/V) int f^2 - ((1/V) int f)^2`, the variance of `f` under normalized Lebesgue measure.
pub fn tc_norm_sq(p: &Polytope, f: &PLConvexFn) -> f64 {
    let v = p.volume();
    let mean = integral(p, f) / v;
    (l2_norm_sq(p, f) / v - mean * mean).max(0.0)
}

/// `a_mu(x) = <mu, x> - avg <mu, x>`.
pub fn a_mu(p: &Polytope, mu: &[f64]) -> AffineFn {
    let c = p.barycenter();
    let mean: f64 = mu.iter().zip(&c).map(|(m, ci)| m * ci).sum();
    AffineFn::new(-mean, mu.to_vec())
}

/// `(1/V) int a_mu1 a_mu2 = mu1^T Cov mu2 / V`.
pub fn fm_inner(p: &Polytope, mu1: &[i64], mu2: &[i64]) -> f64 {
    let cov = p.covariance();
    let mut s = 0.0;
    for i in 0..p.dim() {
        for j in 0..p.dim() {
            s += mu1[i] as f64 * cov[i][j] * mu2[j] as f64;
        }
    }
    s / p.volume()
}

/// Product configuration of the one-parameter subgroup `mu`: `f_mu = -a_mu`.
pub fn product_config_fn(p: &Polytope, mu: &[i64]) -> PLConvexFn {
    let mu: Vec<f64> = mu.iter().map(|m| *m as f64).collect();
    PLConvexFn::affine(a_mu(p, &mu).neg())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Extremal {
    /// `e(x) = <eta, x - c>`.
    pub e: AffineFn,
    /// `l = 1 + e`.
    pub ell: AffineFn,
    pub eta: Vec<f64>,
    /// `a_mu(0) - (1/V) int a_mu e` for the coordinate directions.
    pub residuals: Vec<f64>,
    pub min_ell: f64,
    pub argmin_ell: Vec<f64>,
}

/// Solves `Cov eta = -V c`. Exact rational arithmetic when the moments are exact.
pub fn extremal_affine(p: &Polytope) -> Result<Extremal> {
    let n = p.dim();
    let eta = match p.exact_moments() {
        Some(m) => solve_exact(n, m)?,
        None => {
            let cov = p.covariance();
            let c = p.barycenter();
            let a = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
            let b = DVector::from_fn(n, |i, _| -p.volume() * c[i]);
            let x = a.lu().solve(&b).ok_or_else(|| Error::Internal("singular covariance".into()))?;
            x.iter().copied().collect()
        }
    };
    let c = p.barycenter();
    let e = AffineFn::new(-eta.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>(), eta.clone());
    let ell = e.add(&AffineFn::constant(n, 1.0));
    let cov = p.covariance();
    let v = p.volume();
    let residuals = (0..n)
        .map(|i| {
            let pairing: f64 = (0..n).map(|j| cov[i][j] * eta[j]).sum::<f64>() / v;
            -c[i] - pairing
        })
        .collect();
    let (min_ell, argmin_ell) = p
        .vertices()
        .iter()
        .map(|x| (ell.eval(x), x.clone()))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("nonempty polytope");
    Ok(Extremal { e, ell, eta, residuals, min_ell, argmin_ell })
}

fn solve_exact(n: usize, m: &[BigRational]) -> Result<Vec<f64>> {
    let mons = Monomials::of(n);
    let vol = m[0].clone();
    let first = |i: usize| {
        let mut e = vec![0u32; n];
        e[i] = 1;
        m[mons.index_of(&e).expect("degree 1")].clone()
    };
    let second = |i: usize, j: usize| {
        let mut e = vec![0u32; n];
        e[i] += 1;
        e[j] += 1;
        m[mons.index_of(&e).expect("degree 2")].clone()
    };
    // Cov_ij = m_ij - m_i m_j / V, rhs_i = -m_i.
    let mut a: Vec<Vec<BigRational>> =
        (0..n).map(|i| (0..n).map(|j| second(i, j) - first(i) * first(j) / &vol).collect()).collect();
    let mut b: Vec<BigRational> = (0..n).map(|i| -first(i)).collect();
    for col in 0..n {
        let piv =
            (col..n).find(|&r| !a[r][col].is_zero()).ok_or_else(|| Error::Internal("singular covariance".into()))?;
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let factor = &a[r][col] / &a[col][col];
                let pivot_row = a[col].clone();
                for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= &factor * p;
                }
                let t = &factor * &b[col];
                b[r] -= t;
            }
        }
    }
    Ok((0..n).map(|i| to_f64(&(&b[i] / &a[i][i]))).collect())
}

fn ratio(num: f64, norm_sq: f64, scale: f64) -> Result<f64> {
    if !(norm_sq > 1e-13 * scale.max(1e-300)) {
        return Err(Error::UndefinedRatio);
    }
    Ok(num / norm_sq.sqrt())
}

/// `W(f) = D^NA(f) / ||f||` with the variance norm.
pub fn w_ratio(p: &Polytope, f: &PLConvexFn) -> Result<f64> {
    let v = p.volume();
    let l2 = l2_norm_sq(p, f) / v;
    ratio(dna(p, f), tc_norm_sq(p, f), l2)
}

/// `W_l(f) = D^NA_l(f) / ||f||` with the variance norm.
pub fn w_ell_ratio(p: &Polytope, f: &PLConvexFn, ell: &AffineFn) -> Result<f64> {
    let g = PLConvexFn::affine(ell.clone());
    let v = p.volume();
    let l2 = l2_norm_sq(p, f) / v;
    ratio(dna_modified(p, f, &Weight::PiecewiseLinear(&g))?, tc_norm_sq(p, f), l2)
}

/// Max of `k` affine functions, `k` uniform in `1..=max_pieces`, coefficients uniform in `[-1, 1]`.
pub fn random_convex<R: Rng>(dim: usize, max_pieces: usize, rng: &mut R) -> PLConvexFn {
    let k = rng.gen_range(1..=max_pieces);
    let pieces = (0..k)
        .map(|_| AffineFn::new(rng.gen_range(-1.0..=1.0), (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()))
        .collect();
    PLConvexFn { pieces }
}

/// `(1/V) int_P f`.
pub fn average(p: &Polytope, f: &PLConvexFn) -> f64 {
    integral(p, f) / p.volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{catalog, polygons};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn abs_x() -> PLConvexFn {
        PLConvexFn::new(vec![AffineFn::new(0.0, vec![1.0]), AffineFn::new(0.0, vec![-1.0])]).unwrap()
    }

    fn x1() -> PLConvexFn {
        PLConvexFn::affine(AffineFn::new(0.0, vec![1.0]))
    }

    #[test]
    fn dna_examples_on_interval() {
        let p = catalog("P1").unwrap();
        let k = PLConvexFn::affine(AffineFn::constant(1, 3.5));
        assert_abs_diff_eq!(dna(&p, &k), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dna(&p, &abs_x()), 0.5, epsilon = 1e-15);
        let relu = PLConvexFn::simple(AffineFn::new(0.0, vec![1.0]));
        assert_abs_diff_eq!(dna(&p, &relu), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn modified_dna_examples() {
        let p = catalog("P1").unwrap();
        let g = PLConvexFn::affine(AffineFn::new(1.0, vec![1.0]));
        let v = dna_modified(&p, &abs_x(), &Weight::PiecewiseLinear(&g)).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        let one = dna_modified(&p, &abs_x(), &Weight::One).unwrap();
        assert_eq!(one, dna(&p, &abs_x()));
        let q = Polynomial::constant(1, 1.0);
        assert_abs_diff_eq!(dna_modified(&p, &abs_x(), &Weight::Poly(&q)).unwrap(), 0.5, epsilon = 1e-15);
        // Balancing weights kill affine functions.
        let p2 = catalog("P2").unwrap();
        let f = PLConvexFn::affine(AffineFn::new(0.7, vec![-0.3, 1.1]));
        let b = PLConvexFn::affine(AffineFn::constant(2, 1.0));
        assert_abs_diff_eq!(dna_modified(&p2, &f, &Weight::PiecewiseLinear(&b)).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn norms() {
        let p = catalog("P1").unwrap();
        assert_abs_diff_eq!(tc_norm_sq(&p, &x1()), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l2_norm_sq(&p, &x1()), 2.0 / 3.0, epsilon = 1e-15);
        let k = PLConvexFn::affine(AffineFn::constant(1, -2.0));
        assert_abs_diff_eq!(tc_norm_sq(&p, &k), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn futaki_mabuchi_pairing() {
        assert_abs_diff_eq!(fm_inner(&catalog("P1").unwrap(), &[1], &[1]), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fm_inner(&catalog("P1xP1").unwrap(), &[1, 0], &[0, 1]), 0.0, epsilon = 1e-15);
        assert_eq!(fm_inner(&catalog("P2").unwrap(), &[0, 0], &[1, 2]), 0.0);
    }

    #[test]
    fn extremal_function_vanishes_iff_barycenter_does() {
        for name in ["P1", "P2", "P1xP1", "Bl3P2"] {
            let ext = extremal_affine(&catalog(name).unwrap()).unwrap();
            assert!(ext.e.is_zero(), "{name}: {:?}", ext.e);
        }
        let ext = extremal_affine(&catalog("BlpP2").unwrap()).unwrap();
        assert!(ext.eta[0] != 0.0);
        assert_eq!(ext.eta[0], ext.eta[1]);
    }

    #[test]
    fn extremal_residuals_are_tiny_on_every_polygon() {
        for p in polygons().unwrap() {
            let ext = extremal_affine(&p).unwrap();
            for r in &ext.residuals {
                assert!(r.abs() <= 1e-12, "{}: {r}", p.name());
            }
            assert_abs_diff_eq!(integral(&p, &PLConvexFn::affine(ext.e.clone())), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn w_ratios() {
        let p = catalog("P1").unwrap();
        let norm = tc_norm_sq(&p, &abs_x()).sqrt();
        assert_abs_diff_eq!(w_ratio(&p, &abs_x()).unwrap(), 0.5 / norm, epsilon = 1e-15);
        assert_abs_diff_eq!(w_ratio(&p, &abs_x().scale(2.0)).unwrap(), w_ratio(&p, &abs_x()).unwrap(), epsilon = 1e-15);
        let k = PLConvexFn::affine(AffineFn::constant(1, 1.0));
        assert!(matches!(w_ratio(&p, &k), Err(Error::UndefinedRatio)));
        let p2 = catalog("P2").unwrap();
        let ell = extremal_affine(&p2).unwrap().ell;
        let f = PLConvexFn::simple(AffineFn::new(0.2, vec![1.0, -0.5]));
        assert_abs_diff_eq!(w_ell_ratio(&p2, &f, &ell).unwrap(), w_ratio(&p2, &f).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn product_configurations() {
        let p = catalog("P1").unwrap();
        let f = product_config_fn(&p, &[1]);
        assert_eq!(f.eval(&[0.5]), -0.5);
        assert_abs_diff_eq!(dna(&p, &f), 0.0, epsilon = 1e-15);
        assert_eq!(dna(&p, &product_config_fn(&p, &[0])), 0.0);
        let q = catalog("BlpP2").unwrap();
        let c = q.barycenter();
        let d = dna(&q, &product_config_fn(&q, &[1, 1]));
        assert_abs_diff_eq!(d, -(c[0] + c[1]), epsilon = 1e-14);
        assert!(d.abs() > 1e-3);
    }

    #[test]
    fn relative_invariant_is_the_ell_modified_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in polygons().unwrap() {
            let ext = extremal_affine(&p).unwrap();
            let ell = PLConvexFn::affine(ext.ell.clone());
            let e = PLConvexFn::affine(ext.e.clone());
            for _ in 0..20 {
                let f = random_convex(2, 5, &mut rng);
                let lhs = dna(&p, &f) + integral_product(&p, &f, &e) / p.volume();
                let rhs = dna_modified(&p, &f, &Weight::PiecewiseLinear(&ell)).unwrap();
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pl_minimum_is_found_inside() {
        let p = catalog("P2").unwrap();
        let f = PLConvexFn::new(vec![
            AffineFn::new(0.0, vec![1.0, 0.0]),
            AffineFn::new(0.0, vec![-1.0, 0.0]),
            AffineFn::new(0.0, vec![0.0, 1.0]),
            AffineFn::new(0.0, vec![0.0, -1.0]),
        ])
        .unwrap();
        assert_abs_diff_eq!(pl_min(&p, &f), 0.0, epsilon = 1e-15);
    }
}
