//! The optimal destabilizer `d`, with `b = d + l = max{a, 0}`.
//!
//! `b` is the L2-minimal balancing function. By the KKT conditions it has the
//! form `max{a, 0}` where `a` solves the balancing equations
//! `F(a) = (int b - V, int b x_1, ..., int b x_n) = 0`. `F` is the gradient of the
//! convex functional `Phi(a) = 1/2 int max{a, 0}^2 - V a(0)`, and its Jacobian is
//! the Gram matrix of `(1, x)` over `{a > 0}`; the boundary term from the moving
//! hyperplane vanishes because `b = 0` there.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::AffineFn;
use crate::ding::{
    affine_moment, affine_product_moment, dna_modified, extremal_affine, integral, integral_product, pl_min,
    random_convex, w_ell_ratio, w_ratio, PLConvexFn, Weight,
};
use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::polytope::{clip_region, region_moments, Polytope};

/// A candidate balancing function.
#[derive(Debug, Clone, Copy)]
pub enum Density<'a> {
    PiecewiseLinear(&'a PLConvexFn),
    Grid(&'a GridFn),
}

impl Density<'_> {
    fn weight(&self) -> Weight<'_> {
        match self {
            Density::PiecewiseLinear(f) => Weight::PiecewiseLinear(f),
            Density::Grid(g) => Weight::Grid(g),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BalancingResiduals {
    /// `int b - V`.
    pub mass: f64,
    /// `int b x_i`.
    pub moments: Vec<f64>,
    /// `min_P b`.
    pub min: f64,
}

impl BalancingResiduals {
    /// Largest of `|mass|` and `|moments_i|`.
    pub fn max_abs(&self) -> f64 {
        self.moments.iter().fold(self.mass.abs(), |a, m| a.max(m.abs()))
    }

    pub fn is_balancing(&self, tol: f64) -> bool {
        self.max_abs() <= tol && self.min >= -tol
    }
}

/// Mass, first moments and minimum of `b`. Exact for PL inputs, quadrature for grid inputs.
pub fn check_balancing(p: &Polytope, b: Density) -> BalancingResiduals {
    let n = p.dim();
    match b {
        Density::PiecewiseLinear(f) => {
            let coord = |i: usize| {
                let mut g = vec![0.0; n];
                g[i] = 1.0;
                PLConvexFn::affine(AffineFn::new(0.0, g))
            };
            BalancingResiduals {
                mass: integral(p, f) - p.volume(),
                moments: (0..n).map(|i| integral_product(p, f, &coord(i))).collect(),
                min: pl_min(p, f),
            }
        }
        Density::Grid(g) => BalancingResiduals {
            mass: g.integral() - p.volume(),
            moments: (0..n).map(|i| g.integrate_against(|x| x[i])).collect(),
            min: g.min(),
        },
    }
}

/// Parameter box for [`brute_force_wl`]: `c0` and every gradient component range
/// over `points` equispaced values in `[-range, range]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BruteForceGrid {
    pub points: usize,
    pub range: f64,
}

impl Default for BruteForceGrid {
    fn default() -> Self {
        BruteForceGrid { points: 61, range: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BruteForceResult {
    /// `min W_l(max{a, 0})` over the grid.
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub min_w_ell: f64,
    pub argmin_w_ell: AffineFn,
    /// `min W(max{a, 0})` over the grid.
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub min_w: f64,
    pub argmin_w: AffineFn,
    /// Number of grid functions with a well-defined ratio.
    pub evaluated: usize,
    /// The best few distinct grid points for `W_l`, in increasing order.
    #[serde(skip)]
    pub best: Vec<(f64, AffineFn)>,
}

/// Exhaustive evaluation of `W_l` and `W` over simple functions `max{a, 0}` with
/// `a` on a parameter grid, using exact clipped integrals.
pub fn brute_force_wl(p: &Polytope, ell: &AffineFn, grid: BruteForceGrid) -> Result<BruteForceResult> {
    if grid.points < 2 || !(grid.range > 0.0) {
        return Err(Error::invalid("brute-force grid needs at least two points and a positive range"));
    }
    let n = p.dim();
    let v = p.volume();
    let params = n + 1;
    let total = grid.points.pow(params as u32);
    let value = |k: usize| -grid.range + 2.0 * grid.range * k as f64 / (grid.points - 1) as f64;
    let mut w_ell_all: Vec<(f64, usize)> = Vec::new();
    let mut best_w = (f64::INFINITY, 0usize);
    let decode = |mut idx: usize| {
        let mut c = vec![0.0; params];
        for ci in c.iter_mut().rev() {
            *ci = value(idx % grid.points);
            idx /= grid.points;
        }
        AffineFn::new(c[0], c[1..].to_vec())
    };
    for idx in 0..total {
        let a = decode(idx);
        let region = clip_region(n, p.vertices(), &a);
        if region.is_empty() {
            continue;
        }
        let m = region_moments(n, &region, 2);
        let mean = affine_moment(&m, &a) / v;
        let sq = affine_product_moment(n, &m, &a, &a) / v;
        let var = sq - mean * mean;
        if !(var > 1e-13 * sq) {
            continue;
        }
        let f0 = a.c0.max(0.0);
        let norm = var.sqrt();
        let w_ell = (-f0 + affine_product_moment(n, &m, &a, ell) / v) / norm;
        let w = (-f0 + mean) / norm;
        w_ell_all.push((w_ell, idx));
        if w < best_w.0 {
            best_w = (w, idx);
        }
    }
    if w_ell_all.is_empty() {
        return Err(Error::Internal("every brute-force function has zero norm".into()));
    }
    // Stable sort keeps index order among ties, so the result is deterministic.
    w_ell_all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let best = w_ell_all.iter().take(16).map(|&(w, i)| (w, decode(i))).collect();
    let (min_w_ell, arg) = w_ell_all[0];
    Ok(BruteForceResult {
        min_w_ell,
        argmin_w_ell: decode(arg),
        min_w: best_w.0,
        argmin_w: decode(best_w.1),
        evaluated: w_ell_all.len(),
        best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DestabilizerOptions {
    pub grid: BruteForceGrid,
    /// Random convex functions sampled for the semistability margin.
    pub samples: usize,
    pub seed: u64,
}

impl Default for DestabilizerOptions {
    fn default() -> Self {
        DestabilizerOptions { grid: BruteForceGrid::default(), samples: 1000, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DestabilizerCertificate {
    pub polytope: String,
    pub ell: AffineFn,
    pub min_ell: f64,
    /// `true` when `d = 0`.
    pub semistable: bool,
    /// The affine part `a` of `b = max{a, 0}`; absent when `d = 0`.
    pub a: Option<AffineFn>,
    pub d: PLConvexFn,
    pub b: PLConvexFn,
    pub residuals: BalancingResiduals,
    /// `V b(0) - int b^2`.
    pub yao_normalization: f64,
    /// `int d e`.
    pub orthogonality: f64,
    /// `D^NA_b(b)`.
    pub dna_b_of_b: f64,
    /// `W_l(d)`; absent when `d = 0`.
    pub w_ell_d: Option<f64>,
    pub brute_force: BruteForceResult,
    /// `min_grid W_l - W_l(d)`; absent when `d = 0`.
    pub minimizer_gap: Option<f64>,
    /// `W(d + e) - min_grid W`; absent when `d = 0`.
    pub w_consistency: Option<f64>,
    /// `min D^NA_b(f)` over the sampled convex functions.
    pub semistability_margin: f64,
    pub newton_iterations: usize,
    /// Largest entry of `|J_analytic - J_fd|` relative to `max |J|` at the solution.
    pub jacobian_fd_discrepancy: f64,
}

impl DestabilizerCertificate {
    /// The predicted L2 limit `d + e = b - 1` of `sigma - 1`.
    pub fn limit(&self) -> PLConvexFn {
        self.b.add_affine(&AffineFn::constant(self.ell.dim(), -1.0))
    }
}

/// Balancing equations and their Gram Jacobian at `a`.
fn balancing_system(p: &Polytope, a: &AffineFn) -> (Vec<f64>, DMatrix<f64>) {
    let n = p.dim();
    let region = clip_region(n, p.vertices(), a);
    let m = region_moments(n, &region, 2);
    let mut f = vec![0.0; n + 1];
    f[0] = affine_moment(&m, a) - p.volume();
    for i in 0..n {
        let mut g = vec![0.0; n];
        g[i] = 1.0;
        f[i + 1] = affine_product_moment(n, &m, a, &AffineFn::new(0.0, g));
    }
    let basis = |k: usize| {
        let mut g = vec![0.0; n];
        if k == 0 {
            AffineFn::new(1.0, g)
        } else {
            g[k - 1] = 1.0;
            AffineFn::new(0.0, g)
        }
    };
    let j = DMatrix::from_fn(n + 1, n + 1, |r, c| affine_product_moment(n, &m, &basis(r), &basis(c)));
    (f, j)
}

fn norm(f: &[f64]) -> f64 {
    f.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn params(a: &AffineFn) -> Vec<f64> {
    std::iter::once(a.c0).chain(a.grad.iter().copied()).collect()
}

fn from_params(x: &[f64]) -> AffineFn {
    AffineFn::new(x[0], x[1..].to_vec())
}

/// Central differences of `F`, for the Jacobian cross-check and as a fallback.
fn fd_jacobian(p: &Polytope, a: &AffineFn) -> DMatrix<f64> {
    let x = params(a);
    let k = x.len();
    let mut j = DMatrix::zeros(k, k);
    for c in 0..k {
        let h = 1e-6 * x[c].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let (fp, _) = balancing_system(p, &from_params(&xp));
        let (fm, _) = balancing_system(p, &from_params(&xm));
        for r in 0..k {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// Damped Newton on `F(a) = 0`: halve the step until `|F|` decreases.
fn newton(p: &Polytope, seed: &AffineFn) -> Option<(AffineFn, usize)> {
    let tol = 1e-14 * p.volume().max(1.0);
    let mut a = seed.clone();
    let (mut f, mut j) = balancing_system(p, &a);
    for iter in 0..100 {
        let fn0 = norm(&f);
        if fn0 <= tol {
            return Some((a, iter));
        }
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|x| -x));
        let step = j.clone().lu().solve(&rhs).or_else(|| fd_jacobian(p, &a).lu().solve(&rhs))?;
        let x = params(&a);
        let mut lambda = 1.0;
        loop {
            let trial = from_params(&x.iter().zip(step.iter()).map(|(xi, si)| xi + lambda * si).collect::<Vec<_>>());
            let (ft, jt) = balancing_system(p, &trial);
            if norm(&ft) < fn0 {
                a = trial;
                f = ft;
                j = jt;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                // No further decrease is representable.
                return (fn0 <= 1e-10 * p.volume().max(1.0)).then_some((a, iter));
            }
        }
    }
    (norm(&f) <= tol * 1e4).then_some((a, 100))
}

/// Computes `d` and certifies every characterization of it.
///
/// # Errors
///
/// `Certification` (carrying the best candidate) when Newton fails from every
/// seed or a certificate check fails.
pub fn solve_destabilizer(p: &Polytope, opts: &DestabilizerOptions) -> Result<DestabilizerCertificate> {
    let n = p.dim();
    let v = p.volume();
    let ext = extremal_affine(p)?;
    let ell = ext.ell.clone();
    let brute = brute_force_wl(p, &ell, opts.grid)?;
    let semistable = ext.min_ell >= -1e-10;

    let (a, iterations) = if semistable {
        (None, 0)
    } else {
        let mut seeds = vec![ell.clone()];
        for (_, s) in &brute.best {
            // Rescale to the right mass; W_l is scale invariant.
            let mass = affine_moment(&region_moments(n, &clip_region(n, p.vertices(), s), 1), s);
            if mass > 0.0 {
                seeds.push(s.scale(v / mass));
            }
        }
        let solved = seeds.iter().find_map(|s| newton(p, s));
        match solved {
            Some((a, it)) => (Some(a), it),
            None => {
                return Err(Error::Certification {
                    reason: "Newton iteration failed from every seed".into(),
                    candidate: None,
                })
            }
        }
    };

    let (b, d) = match &a {
        None => (PLConvexFn::affine(ell.clone()), PLConvexFn::zero(n)),
        Some(a) => (PLConvexFn::simple(a.clone()), PLConvexFn::new(vec![a.sub(&ell), ell.neg()])?),
    };
    let origin = vec![0.0; n];
    let residuals = check_balancing(p, Density::PiecewiseLinear(&b));
    let yao_normalization = v * b.eval(&origin) - integral_product(p, &b, &b);
    let e_pl = PLConvexFn::affine(ext.e.clone());
    let orthogonality = if a.is_some() { integral_product(p, &d, &e_pl) } else { 0.0 };
    let b_weight = Weight::PiecewiseLinear(&b);
    let dna_b_of_b = dna_modified(p, &b, &b_weight)?;
    let w_ell_d = a.as_ref().map(|_| w_ell_ratio(p, &d, &ell)).transpose()?;
    let minimizer_gap = w_ell_d.map(|w| brute.min_w_ell - w);
    let w_consistency = match &a {
        Some(_) => Some(w_ratio(p, &d.add_affine(&ext.e))? - brute.min_w),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut margin = dna_b_of_b;
    for _ in 0..opts.samples {
        let f = random_convex(n, 5, &mut rng);
        margin = margin.min(dna_modified(p, &f, &b_weight)?);
    }
    let jacobian_fd_discrepancy = match &a {
        Some(a) => {
            let (_, ja) = balancing_system(p, a);
            let jf = fd_jacobian(p, a);
            (&ja - &jf).amax() / ja.amax()
        }
        None => 0.0,
    };

    let cert = DestabilizerCertificate {
        polytope: p.name().to_string(),
        ell,
        min_ell: ext.min_ell,
        semistable,
        a,
        d,
        b,
        residuals,
        yao_normalization,
        orthogonality,
        dna_b_of_b,
        w_ell_d,
        brute_force: brute,
        minimizer_gap,
        w_consistency,
        semistability_margin: margin,
        newton_iterations: iterations,
        jacobian_fd_discrepancy,
    };
    let fail = |reason: String| Error::Certification { reason, candidate: Some(Box::new(cert.clone())) };
    if cert.residuals.max_abs() > 1e-8 * v || cert.residuals.min < -1e-10 {
        return Err(fail(format!("balancing residuals {:?}", cert.residuals)));
    }
    if cert.yao_normalization.abs() > 1e-8 * v {
        return Err(fail(format!("V b(0) - int b^2 = {:e}", cert.yao_normalization)));
    }
    if cert.orthogonality.abs() > 1e-8 {
        return Err(fail(format!("int d e = {:e}", cert.orthogonality)));
    }
    if semistable && cert.brute_force.min_w_ell < -1e-6 {
        return Err(fail(format!("l >= 0 on P but the brute-force grid finds W_l = {:e}", cert.brute_force.min_w_ell)));
    }
    if let Some(gap) = cert.minimizer_gap {
        if gap < -1e-4 {
            return Err(fail(format!("brute-force grid beats W_l(d) by {:e}", -gap)));
        }
    }
    Ok(cert)
}

/// `max f(0) - (1/V) int f b` over `samples` seeded random convex functions.
///
/// # Errors
///
/// `Precondition` when `b` is not balancing within `tol`.
pub fn verify_jensen(p: &Polytope, b: Density, samples: usize, seed: u64, tol: f64) -> Result<f64> {
    let res = check_balancing(p, b);
    if !res.is_balancing(tol) {
        return Err(Error::Precondition(format!("not a balancing function: {res:?}")));
    }
    let n = p.dim();
    let weight = b.weight();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let f = random_convex(n, 5, &mut rng);
        worst = worst.max(-dna_modified(p, &f, &weight)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog;
    use approx::assert_abs_diff_eq;

    fn small() -> DestabilizerOptions {
        DestabilizerOptions { grid: BruteForceGrid { points: 21, range: 3.0 }, samples: 100, seed: 1 }
    }

    #[test]
    fn balancing_examples() {
        let p = catalog("P1").unwrap();
        let one = PLConvexFn::affine(AffineFn::constant(1, 1.0));
        let r = check_balancing(&p, Density::PiecewiseLinear(&one));
        assert_eq!(r.mass, 0.0);
        assert_eq!(r.moments, vec![0.0]);
        assert_eq!(r.min, 1.0);
        let tilted = PLConvexFn::affine(AffineFn::new(1.0, vec![1.0]));
        let r = check_balancing(&p, Density::PiecewiseLinear(&tilted));
        assert_abs_diff_eq!(r.mass, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.moments[0], 2.0 / 3.0, epsilon = 1e-15);
        assert!(!r.is_balancing(1e-8));
        // Barycenter away from 0: the constant 1 is not balancing.
        let q = catalog("BlpP2").unwrap();
        let r = check_balancing(&q, Density::PiecewiseLinear(&PLConvexFn::affine(AffineFn::constant(2, 1.0))));
        let c = q.barycenter();
        assert_abs_diff_eq!(r.moments[0], c[0] * q.volume(), epsilon = 1e-14);
        // l itself is balancing when it is nonnegative.
        let ell = extremal_affine(&q).unwrap().ell;
        let r = check_balancing(&q, Density::PiecewiseLinear(&PLConvexFn::affine(ell)));
        assert!(r.max_abs() < 1e-14, "{r:?}");
    }

    #[test]
    fn symmetric_cases_are_semistable() {
        for name in ["P1", "P2"] {
            let c = solve_destabilizer(&catalog(name).unwrap(), &small()).unwrap();
            assert!(c.semistable);
            assert!(c.a.is_none());
            assert!(c.brute_force.min_w_ell >= -1e-9);
        }
    }

    #[test]
    fn brute_force_is_scale_invariant() {
        let p = catalog("Q6a").unwrap();
        let ell = extremal_affine(&p).unwrap().ell;
        let g1 = brute_force_wl(&p, &ell, BruteForceGrid { points: 13, range: 3.0 }).unwrap();
        let g2 = brute_force_wl(&p, &ell, BruteForceGrid { points: 13, range: 6.0 }).unwrap();
        assert_abs_diff_eq!(g1.min_w_ell, g2.min_w_ell, epsilon = 1e-12);
        assert_eq!(g1.argmin_w_ell.scale(2.0), g2.argmin_w_ell);
    }

    #[test]
    fn unstable_polygon_certificate() {
        let p = catalog("Q6a").unwrap();
        let c = solve_destabilizer(&p, &small()).unwrap();
        let a = c.a.clone().unwrap();
        // The hyperplane {a = 0} crosses the interior.
        let vals: Vec<f64> = p.vertices().iter().map(|v| a.eval(v)).collect();
        assert!(vals.iter().any(|&x| x > 0.0) && vals.iter().any(|&x| x < 0.0));
        assert!(c.residuals.max_abs() <= 1e-8 * p.volume());
        assert!(c.yao_normalization.abs() <= 1e-8 * p.volume());
        assert!(c.orthogonality.abs() <= 1e-8);
        assert!(c.dna_b_of_b.abs() <= 1e-8);
        assert!(c.semistability_margin >= -1e-8);
        assert!(c.minimizer_gap.unwrap() >= -1e-4);
        assert!(c.w_consistency.unwrap() <= 1e-6);
        assert!(c.jacobian_fd_discrepancy <= 1e-6);
        // W_l(d) = -||d|| / sqrt(V) under the normalization V D^NA_l(d) = -||d||^2.
        let d_norm = crate::ding::l2_norm_sq(&p, &c.d);
        assert_abs_diff_eq!(c.w_ell_d.unwrap(), -(d_norm / p.volume()).sqrt(), epsilon = 1e-10);
        let ell = PLConvexFn::affine(c.ell.clone());
        let dna_l = dna_modified(&p, &c.d, &Weight::PiecewiseLinear(&ell)).unwrap();
        assert_abs_diff_eq!(p.volume() * dna_l, -d_norm, epsilon = 1e-10);
    }

    #[test]
    fn jensen_examples() {
        let p = catalog("P2").unwrap();
        let one = PLConvexFn::affine(AffineFn::constant(2, 1.0));
        let worst = verify_jensen(&p, Density::PiecewiseLinear(&one), 1000, 3, 1e-8).unwrap();
        assert!(worst <= 1e-9, "{worst}");
        let q = catalog("Q6a").unwrap();
        let c = solve_destabilizer(&q, &small()).unwrap();
        let b = &c.b;
        let eq = -dna_modified(&q, b, &Weight::PiecewiseLinear(b)).unwrap();
        assert_abs_diff_eq!(eq, 0.0, epsilon = 1e-12);
        assert!(verify_jensen(&q, Density::PiecewiseLinear(b), 200, 4, 1e-8).unwrap() <= 1e-9);
        let bad = PLConvexFn::affine(AffineFn::new(1.0, vec![1.0, 0.0]));
        assert!(matches!(verify_jensen(&p, Density::PiecewiseLinear(&bad), 10, 0, 1e-8), Err(Error::Precondition(_))));
    }

    #[test]
    fn certificate_round_trips_through_json() {
        let c = solve_destabilizer(&catalog("Q7").unwrap(), &small()).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: DestabilizerCertificate = serde_json::from_str(&s).unwrap();
        assert_eq!(back.a, c.a);
        assert_eq!(back.yao_normalization, c.yao_normalization);
    }
}
