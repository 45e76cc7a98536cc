use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use torific::affine::AffineFn;
use torific::destabilizer::{solve_destabilizer, BruteForceGrid, DestabilizerCertificate, DestabilizerOptions};
use torific::ding::{dna, dna_modified, extremal_affine, l2_norm_sq, pl_min, w_ell_ratio, w_ratio, PLConvexFn, Weight};
use torific::energies::{legendre, normalize, DualSpec};
use torific::flow::{FlowState, InitSpec};
use torific::grid::PotentialGrid;
use torific::rational::{format_rational, parse_rational};
use torific::trace::{parse_csv, to_csv_string, TraceRow};
use torific::{catalog, Polynomial, Polytope};

fn polygons() -> &'static [Polytope] {
    static P: OnceLock<Vec<Polytope>> = OnceLock::new();
    P.get_or_init(|| torific::catalog::polygons().unwrap())
}

fn certificates() -> &'static [DestabilizerCertificate] {
    static C: OnceLock<Vec<DestabilizerCertificate>> = OnceLock::new();
    C.get_or_init(|| {
        let opts = DestabilizerOptions { grid: BruteForceGrid { points: 15, range: 3.0 }, samples: 10, seed: 7 };
        polygons().iter().map(|p| solve_destabilizer(p, &opts).unwrap()).collect()
    })
}

fn affine2() -> impl Strategy<Value = AffineFn> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(c, a, b)| AffineFn::new(c, vec![a, b]))
}

fn convex2() -> impl Strategy<Value = PLConvexFn> {
    prop::collection::vec(affine2(), 1..5).prop_map(|pieces| PLConvexFn { pieces })
}

fn poly2() -> impl Strategy<Value = Polynomial> {
    let terms = prop::collection::vec((0u32..3, 0u32..3, -1.0..1.0f64), 1..6);
    terms.prop_map(|ts| {
        ts.into_iter().fold(Polynomial::zero(2), |acc, (i, j, c)| acc.add(&Polynomial::monomial(&[i, j], c).unwrap()))
    })
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clip_is_additive(k in 0usize..16, a in affine2(), q in poly2()) {
        let p = &polygons()[k];
        let (pos, neg) = (p.clip(&a), p.clip(&a.neg()));
        let v = p.volume();
        prop_assert!((pos.volume() + neg.volume() - v).abs() <= 1e-12 * v);
        let whole = p.integrate_poly(&q).unwrap();
        let parts = pos.integrate_poly(&q).unwrap_or(0.0) + neg.integrate_poly(&q).unwrap_or(0.0);
        let abs_q = Polynomial::constant(2, q.coeffs().iter().map(|c| c.abs()).sum::<f64>() * 8.0);
        let scale = p.integrate_poly(&abs_q).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * scale, "{whole} vs {parts}");
    }

    #[test]
    fn balancing_weights_ignore_affine_terms(k in 0usize..16, f in convex2(), g in affine2()) {
        let cert = &certificates()[k];
        let p = &polygons()[k];
        let w = Weight::PiecewiseLinear(&cert.b);
        let base = dna_modified(p, &f, &w).unwrap();
        let moved = dna_modified(p, &f.add_affine(&g), &w).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9, "{base} vs {moved}");
    }

    #[test]
    fn jensen_holds_for_balancing_weights(k in 0usize..16, f in convex2()) {
        let cert = &certificates()[k];
        let p = &polygons()[k];
        prop_assert!(dna_modified(p, &f, &Weight::PiecewiseLinear(&cert.b)).unwrap() >= -1e-9);
        if cert.min_ell >= 0.0 {
            let ell = PLConvexFn::affine(cert.ell.clone());
            prop_assert!(dna_modified(p, &f, &Weight::PiecewiseLinear(&ell)).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn w_ratios_are_scale_and_constant_invariant(k in 0usize..16, f in convex2(), s in 0.1..10.0f64, c in -3.0..3.0f64) {
        let p = &polygons()[k];
        let ell = extremal_affine(p).unwrap().ell;
        let (Ok(w), Ok(wl)) = (w_ratio(p, &f), w_ell_ratio(p, &f, &ell)) else { return Ok(()) };
        let g = f.scale(s).add_affine(&AffineFn::constant(2, c));
        prop_assert!((w_ratio(p, &g).unwrap() - w).abs() <= 1e-8 * (1.0 + w.abs()));
        prop_assert!((w_ell_ratio(p, &g, &ell).unwrap() - wl).abs() <= 1e-8 * (1.0 + wl.abs()));
    }

    #[test]
    fn optimal_destabilizer_minimizes_w_ell(k in 0usize..16, f in convex2()) {
        let cert = &certificates()[k];
        let Some(best) = cert.w_ell_d else { return Ok(()) };
        if let Ok(w) = w_ell_ratio(&polygons()[k], &f, &cert.ell) {
            prop_assert!(w >= best - 1e-9, "{w} < {best}");
        }
    }

    #[test]
    fn normalization_is_nonnegative_and_vanishes_at_origin(k in 0usize..16, f in convex2()) {
        let g = normalize(&f);
        prop_assert!(g.eval(&[0.0, 0.0]).abs() <= 1e-12);
        prop_assert!(pl_min(&polygons()[k], &g) >= -1e-12);
        let again = normalize(&g);
        for x in [[0.3, -0.2], [-0.5, 0.4], [0.0, 0.7]] {
            prop_assert!((again.eval(&x) - g.eval(&x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn trace_csv_round_trips(vals in prop::collection::vec(prop::array::uniform10(finite()), 1..8)) {
        let rows: Vec<TraceRow> = vals
            .iter()
            .enumerate()
            .map(|(i, v)| TraceRow {
                t: i as f64 * 0.5,
                e: v[0], d: v[1], r: v[2], h: v[3], m: v[4], ding_c: v[5],
                dist_to_limit: v[6], sigma_min: v[7], sigma_max: v[8], dt: v[9],
            })
            .collect();
        prop_assert_eq!(parse_csv(to_csv_string(&rows).as_bytes()).unwrap(), rows);
    }

    #[test]
    fn rationals_round_trip(n in any::<i64>(), d in 1i64..i64::MAX) {
        let q = parse_rational(&format!("{n}/{d}")).unwrap();
        prop_assert_eq!(parse_rational(&format_rational(&q)).unwrap(), q);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn moment_weight_inequality(eps in -0.2..0.3f64, f in convex2()) {
        let p = catalog("BlpP2").unwrap();
        let grid = Arc::new(PotentialGrid::new(&p, 1.0 / 16.0).unwrap());
        let Ok(state) = FlowState::from_init(grid, &InitSpec::Bump(eps)) else { return Ok(()) };
        let r = state.monitors(None).r;
        let norm = (l2_norm_sq(&p, &f) / p.volume()).sqrt();
        prop_assume!(norm > 1e-6);
        prop_assert!(r.sqrt() + 1e-6 >= -dna(&p, &f) / norm);
    }

    #[test]
    fn legendre_shift_rule(k in -3i64..=3, c in -1.0..1.0f64, q in 0.0..0.5f64) {
        let p = catalog("P1").unwrap();
        let grid = PotentialGrid::new(&p, 1.0 / 64.0).unwrap();
        let spec = DualSpec { h_xi: 0.05, rho: Some(8.0) };
        let u: Vec<f64> = (0..grid.len()).map(|i| grid.u_can(i) + q * grid.x(i)[0].powi(2)).collect();
        let a = k as f64 * spec.h_xi;
        let moved: Vec<f64> = (0..grid.len()).map(|i| u[i] + a * grid.x(i)[0] + c).collect();
        let (d0, d1) = (legendre(&grid, &u, &spec).unwrap(), legendre(&grid, &moved, &spec).unwrap());
        for j in 0..d0.len() {
            let src = j as i64 - k;
            if (0..d0.len() as i64).contains(&src) {
                let want = d0.phi[src as usize] - c;
                prop_assert!((d1.phi[j] - want).abs() <= 1e-9 * (1.0 + want.abs()), "{j}: {} vs {want}", d1.phi[j]);
            }
        }
    }
}
