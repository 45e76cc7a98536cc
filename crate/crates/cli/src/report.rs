//! Summary table over flow traces and destabilizer certificates.

use std::collections::BTreeMap;
use std::path::Path;

use torific::destabilizer::DestabilizerCertificate;
use torific::ding::extremal_affine;
use torific::flow::MonitorTolerances;
use torific::trace::{parse_csv, TraceRow};
use torific::{Check, Error, Result};

use crate::commands::limit_norm;
use crate::config::{load_polytope, RunConfig};
use crate::docs::{Report, ReportRow};

/// Splits `NAME=PATH`; a bare `PATH` is named by its file stem.
fn named_input(arg: &str) -> (String, String) {
    if let Some((name, path)) = arg.split_once('=') {
        if !name.is_empty() && !name.contains(['/', '\\']) {
            return (name.to_string(), path.to_string());
        }
    }
    let stem = Path::new(arg).file_stem().map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
    (stem, arg.to_string())
}

/// Monitor checks recomputed from recorded rows.
pub fn trace_checks(rows: &[TraceRow], tol: &MonitorTolerances) -> Vec<Check> {
    let e0 = rows.first().map_or(0.0, |r| r.e);
    let drift = rows.iter().map(|r| (r.e - e0).abs()).fold(0.0f64, f64::max);
    let rise = |f: fn(&TraceRow) -> f64| rows.windows(2).map(|w| f(&w[1]) - f(&w[0])).fold(f64::NEG_INFINITY, f64::max);
    let curvature = rows
        .windows(3)
        .map(|w| {
            let s0 = (w[1].d - w[0].d) / (w[1].t - w[0].t);
            let s1 = (w[2].d - w[1].d) / (w[2].t - w[1].t);
            2.0 * (s1 - s0) / (w[2].t - w[0].t)
        })
        .fold(f64::INFINITY, f64::min);
    vec![
        Check::at_most("e_drift", drift, tol.e_drift * (1.0 + e0.abs())),
        Check::at_most("d_nonincreasing", rise(|r| r.d), tol.monotone),
        Check::at_most("r_nonincreasing", rise(|r| r.r), tol.monotone),
        Check::at_most("m_nonincreasing", rise(|r| r.m), tol.monotone),
        Check::at_most("ding_c_nonincreasing", rise(|r| r.ding_c), tol.monotone),
        Check::at_least("d_convexity", curvature, -tol.d_convexity),
    ]
}

/// Inputs ending in `.json` are certificates, anything else a trace CSV.
/// Polytopes without a certificate get one computed with the configured options.
pub fn report(inputs: &[String], cfg: &RunConfig) -> Result<Report> {
    let mut certs: BTreeMap<String, DestabilizerCertificate> = BTreeMap::new();
    let mut traces = Vec::new();
    for arg in inputs {
        let (name, path) = named_input(arg);
        let bytes = std::fs::read(&path).map_err(|e| Error::InvalidInput(format!("{path}: {e}")))?;
        if path.ends_with(".json") {
            let cert: DestabilizerCertificate =
                serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{path}: {e}")))?;
            certs.insert(cert.polytope.clone(), cert);
        } else {
            let rows = parse_csv(&bytes).map_err(|e| Error::Parse(format!("{path}: {e}")))?;
            if rows.is_empty() {
                return Err(Error::Parse(format!("{path}: trace has no rows")));
            }
            traces.push((name, path, rows));
        }
    }
    let mut out = Report { rows: Vec::new(), pass: true };
    for (name, path, rows) in traces {
        let p = load_polytope(&name)?;
        let cert = match certs.get(p.name()) {
            Some(c) => c.clone(),
            None => crate::commands::destabilize(&RunConfig { polytope: Some(name.clone()), ..cfg.clone() })?.0,
        };
        let limit_norm = limit_norm(&p, &cert);
        let last = rows.last().expect("nonempty");
        let plateau_r_sqrt = last.r.max(0.0).sqrt();
        let difference = (plateau_r_sqrt - limit_norm).abs();
        let monitors = trace_checks(&rows, &cfg.tolerances.monitors);
        let pass = difference <= cfg.tolerances.report && monitors.iter().all(|c| c.pass);
        out.pass &= pass;
        out.rows.push(ReportRow {
            polytope: p.name().to_string(),
            trace: path,
            e: extremal_affine(&p)?.e,
            d: cert.d.clone(),
            limit_norm,
            plateau_r_sqrt,
            difference,
            tolerance: cfg.tolerances.report,
            monitors,
            pass,
        });
    }
    Ok(out)
}
