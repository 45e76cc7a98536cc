//! Subcommand implementations. Each returns a document and whether it passed.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use torific::catalog::documents;
use torific::destabilizer::{solve_destabilizer, verify_jensen, Density, DestabilizerCertificate};
use torific::ding::{dna, extremal_affine, l2_norm_sq, pl_min, random_convex, PLConvexFn};
use torific::energies::{ding_energy, entropy, jt_proxy, legendre, modified_ding_energy, normalize, ricci_calabi};
use torific::flow::{run, FlowState, FlowTrace, InitSpec, RunOptions, RunTargets};
use torific::grid::{GridFn, PotentialGrid};
use torific::{Check, Error, Polytope, Result};

use crate::config::RunConfig;
use crate::docs::{ExtremalDoc, FlowSummary, PolytopeInfo, PolytopeList, VerifyReport};

pub fn list_polytopes() -> Result<PolytopeList> {
    let polytopes = documents()?
        .into_iter()
        .map(|doc| {
            let p = doc.to_polytope()?;
            Ok(PolytopeInfo {
                name: doc.name,
                dimension: doc.dimension,
                vertices: doc.vertices,
                volume: p.volume(),
                barycenter: p.barycenter(),
                smooth: p.is_smooth(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(PolytopeList { polytopes })
}

pub fn extremal(cfg: &RunConfig) -> Result<ExtremalDoc> {
    let p = cfg.polytope()?;
    Ok(ExtremalDoc { polytope: p.name().to_string(), extremal: extremal_affine(&p)? })
}

/// The certificate, or the failed candidate with `false`.
pub fn destabilize(cfg: &RunConfig) -> Result<(DestabilizerCertificate, bool)> {
    let p = cfg.polytope()?;
    certify(&p, cfg)
}

fn certify(p: &Polytope, cfg: &RunConfig) -> Result<(DestabilizerCertificate, bool)> {
    match solve_destabilizer(p, &cfg.destabilizer_options()) {
        Ok(c) => Ok((c, true)),
        Err(Error::Certification { candidate: Some(c), .. }) => Ok((*c, false)),
        Err(e) => Err(e),
    }
}

/// `sup_f -D^NA(f) / (|f|_{L2} / sqrt(V))` over `d + e` and `samples` seeded random convex
/// functions; functions of zero norm are skipped.
pub fn moment_weight_sup(p: &Polytope, limit: &PLConvexFn, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = std::iter::once(limit.clone()).chain((0..samples).map(|_| random_convex(p.dim(), 5, &mut rng)));
    let v = p.volume();
    fs.filter_map(|f| {
        let norm = (l2_norm_sq(p, &f) / v).sqrt();
        (norm > 1e-12).then(|| -dna(p, &f) / norm)
    })
    .fold(f64::NEG_INFINITY, f64::max)
}

pub fn limit_norm(p: &Polytope, cert: &DestabilizerCertificate) -> f64 {
    (l2_norm_sq(p, &cert.limit()) / p.volume()).max(0.0).sqrt()
}

fn targets(grid: &PotentialGrid, cert: &DestabilizerCertificate) -> RunTargets {
    let limit = cert.limit();
    RunTargets { limit: Some(grid.sample(|x| limit.eval(x))), b: Some(grid.sample(|x| cert.b.eval(x))) }
}

/// Runs the flow; returns the trace, the summary, and whether every monitor passed.
/// An aborted run still yields its partial trace.
pub fn flow(cfg: &RunConfig) -> Result<(FlowTrace, FlowSummary)> {
    let p = cfg.polytope()?;
    let grid = Arc::new(PotentialGrid::new(&p, cfg.h)?);
    let state = FlowState::from_init(grid.clone(), &InitSpec::parse(&cfg.init)?)?;
    let (cert, _) = certify(&p, cfg)?;
    let (trace, aborted) = match run(state, &cfg.run_options(), &targets(&grid, &cert)) {
        Ok((trace, _)) => (trace, None),
        Err(Error::AbortedRun { partial, reason, .. }) => (*partial, Some(reason.to_string())),
        Err(e) => return Err(e),
    };
    let mut monitors = trace.monitor_checks(&cfg.tolerances.monitors);
    let sup = moment_weight_sup(&p, &cert.limit(), cfg.samples, cfg.seed);
    let r_min = trace.rows.iter().map(|r| r.r).fold(f64::INFINITY, f64::min);
    monitors.push(Check::at_least("moment_weight", r_min.max(0.0).sqrt() - sup, -cfg.tolerances.moment_weight));
    let last = *trace.rows.last().expect("trace has an initial row");
    let pass = aborted.is_none() && monitors.iter().all(|c| c.pass);
    let summary = FlowSummary {
        polytope: p.name().to_string(),
        nodes: grid.len(),
        config: cfg.clone(),
        limit_norm: limit_norm(&p, &cert),
        rows: trace.rows.len(),
        last,
        plateau_r_sqrt: last.r.max(0.0).sqrt(),
        stats: trace.stats,
        monitors,
        aborted,
        pass,
    };
    Ok((trace, summary))
}

/// Invariant sweep for one polytope: extremal function, destabilizer certificate,
/// Jensen inequalities, Legendre transform and energies on a grid state, and a short run.
pub fn verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let p = cfg.polytope()?;
    let t = &cfg.tolerances;
    let vol = p.volume();
    let h = cfg.h;
    let mut checks = Vec::new();

    let ex = extremal_affine(&p)?;
    let res = ex.residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    checks.push(Check::at_most("extremal_residual", res, 1e-12));
    if p.barycenter().iter().all(|&b| b == 0.0) {
        let size = ex.e.grad.iter().fold(ex.e.c0.abs(), |a, g| a.max(g.abs()));
        checks.push(Check::at_most("extremal_vanishes_at_zero_barycenter", size, 0.0));
    }

    let (cert, certified) = certify(&p, cfg)?;
    checks.push(Check::holds("destabilizer_certified", certified));
    checks.push(Check::at_most("balancing_residual", cert.residuals.max_abs(), t.balancing * vol));
    checks.push(Check::at_least("balancing_min", cert.residuals.min, -t.balancing));
    checks.push(Check::at_most("yao_normalization", cert.yao_normalization.abs(), t.balancing * vol));
    checks.push(Check::at_most("orthogonality", cert.orthogonality.abs(), t.balancing));
    checks.push(Check::at_least("semistability_margin", cert.semistability_margin, -t.balancing));
    if let Some(gap) = cert.minimizer_gap {
        checks.push(Check::at_least("brute_force_minimizer", gap, -t.minimizer_gap));
    }
    checks.push(Check::at_most("jacobian_cross_check", cert.jacobian_fd_discrepancy, 1e-6));
    checks.push(Check::holds("semistable_iff_ell_nonnegative", cert.semistable == (cert.min_ell >= -1e-12)));

    let mut jensen = |name: &str, b: Density, tol: f64| {
        let worst = verify_jensen(&p, b, cfg.samples, cfg.seed, tol).unwrap_or(f64::INFINITY);
        checks.push(Check::at_most(name, worst, tol));
    };
    if cert.min_ell >= 0.0 {
        jensen("jensen_ell", Density::PiecewiseLinear(&PLConvexFn::affine(cert.ell.clone())), t.jensen);
    }
    jensen("jensen_destabilizer", Density::PiecewiseLinear(&cert.b), t.jensen);

    let grid = Arc::new(PotentialGrid::new(&p, h)?);
    let state = FlowState::from_init(grid.clone(), &InitSpec::parse(&cfg.init)?)?;
    let sigma = GridFn::new(grid.clone(), state.sigma().to_vec())?;
    let ch2 = t.sigma_jensen_c * h * h;
    jensen("jensen_sigma", Density::Grid(&sigma), ch2);

    let u = state.u();
    let mon = state.monitors(None);
    let dual = legendre(&grid, &u, &cfg.dual)?;
    let phi_scale = dual.phi.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    checks.push(Check::at_most("legendre_convexity", dual.convexity_defect(), 1e-12 * phi_scale));
    let back = dual.biconjugate(&grid);
    let inv = (0..grid.len()).filter(|&i| !grid.is_boundary(i)).map(|i| (back[i] - u[i]).abs()).fold(0.0f64, f64::max);
    checks.push(Check::at_most("legendre_involution", inv, 0.1 * (h + dual.h_xi)));

    let d = ding_energy(&grid, &u, &cfg.dual)?;
    checks.push(Check::at_most("ding_error_bar", d.error_bar, 1e-6 * (1.0 + d.value.abs())));
    checks.push(Check::at_most("ding_routes_agree", (d.value - mon.d).abs(), 0.2 * h));
    let shifted: Vec<f64> = u.iter().map(|x| x + 1.0).collect();
    let ds = ding_energy(&grid, &shifted, &cfg.dual)?;
    checks.push(Check::at_most("ding_constant_invariance", (ds.value - d.value).abs(), 1e-9));
    let ones = vec![1.0; grid.len()];
    let d1 = modified_ding_energy(&grid, &u, &ones, &cfg.dual)?;
    checks.push(Check::at_most("modified_ding_unit_weight", (d1.value - d.value).abs(), 1e-12));

    // Gradient on the dual lattice so the shift rule is exact on the grid.
    let slope = 2.0 * dual.h_xi;
    let tilted: Vec<f64> = (0..grid.len()).map(|i| u[i] + 0.3 + slope * grid.x(i).iter().sum::<f64>()).collect();
    let ds0 = modified_ding_energy(&grid, &u, state.sigma(), &cfg.dual)?;
    let ds1 = modified_ding_energy(&grid, &tilted, state.sigma(), &cfg.dual)?;
    let affine_tol = ch2 * (1.0 + slope * p.dim() as f64) + ds0.error_bar + ds1.error_bar;
    checks.push(Check::at_most("modified_ding_affine_invariance", (ds1.value - ds0.value).abs(), affine_tol));
    let u_can: Vec<f64> = (0..grid.len()).map(|i| grid.u_can(i)).collect();
    let mut worst = f64::INFINITY;
    for k in 1..=10 {
        let s = k as f64 / 10.0;
        let us: Vec<f64> = u.iter().zip(&u_can).map(|(a, b)| (1.0 - s) * a + s * b).collect();
        worst = worst.min(modified_ding_energy(&grid, &us, state.sigma(), &cfg.dual)?.value - ds0.value);
    }
    checks.push(Check::at_least("sigma_weighted_ding_minimal", worst, -1e-6));

    checks.push(Check::at_least("ricci_calabi_nonnegative", ricci_calabi(&grid, state.sigma()), 0.0));
    checks.push(Check::at_least("entropy_nonnegative", entropy(&grid, state.sigma()), -1e-12));
    checks.push(Check::at_least("jt_proxy_nonnegative", jt_proxy(&grid, &u), -1e-12));

    let sup = moment_weight_sup(&p, &cert.limit(), cfg.samples, cfg.seed);
    checks.push(Check::at_least("moment_weight", mon.r.max(0.0).sqrt() - sup, -t.moment_weight));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut at_zero, mut lowest) = (0.0f64, f64::INFINITY);
    for _ in 0..cfg.samples.min(100) {
        let g = normalize(&random_convex(p.dim(), 5, &mut rng));
        at_zero = at_zero.max(g.eval(&vec![0.0; p.dim()]).abs());
        lowest = lowest.min(pl_min(&p, &g));
    }
    checks.push(Check::at_most("normalized_vanishes_at_origin", at_zero, 1e-12));
    checks.push(Check::at_least("normalized_nonnegative", lowest, -1e-12));

    let opts = RunOptions { t_max: 0.02, plateau: false, ..cfg.run_options() };
    match run(state, &opts, &targets(&grid, &cert)) {
        Ok((trace, _)) => checks.extend(trace.monitor_checks(&t.monitors).into_iter().map(|mut c| {
            c.name = format!("short_run_{}", c.name);
            c
        })),
        Err(e) => {
            checks.push(Check::holds("short_run_completed", false));
            eprintln!("short run failed: {e}");
        }
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { polytope: p.name().to_string(), h, checks, pass })
}
