//! The flow `du/dt = sigma - 1` for the symplectic potential `u = u_can + v`.
//!
//! `sigma = c_norm det(D^2 u) e^{u - <x, grad u>}` with `c_norm` fixed by
//! `int_P sigma = V`. Time stepping is explicit (Euler, or Runge-Kutta-Chebyshev
//! for long runs) with an adaptive step size; a step is rejected and retried at
//! half the size when convexity is lost, the energy `E` drifts, or the Ding
//! energy increases.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::check::Check;
use crate::error::{Error, Result};
use crate::grid::{Neumaier, PotentialGrid};
use crate::trace::TraceRow;

/// Initial correction `v_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Zero,
    /// `eps * prod_F l_F^2`.
    Bump(f64),
    /// Explicit nodal values in grid order.
    Values(Vec<f64>),
}

impl InitSpec {
    /// Parses `zero`, `bump:EPS`; anything else is read as a file of node values.
    pub fn parse(spec: &str) -> Result<InitSpec> {
        let spec = spec.trim();
        if spec == "zero" {
            return Ok(InitSpec::Zero);
        }
        if let Some(eps) = spec.strip_prefix("bump:") {
            let eps: f64 = eps.trim().parse().map_err(|_| Error::parse(format!("bad bump amplitude `{eps}`")))?;
            if !eps.is_finite() {
                return Err(Error::parse("bump amplitude must be finite"));
            }
            return Ok(InitSpec::Bump(eps));
        }
        let bytes = std::fs::read(spec)?;
        Ok(InitSpec::Values(parse_node_values(&bytes)?))
    }

    pub fn values(&self, grid: &PotentialGrid) -> Result<Vec<f64>> {
        match self {
            InitSpec::Zero => Ok(vec![0.0; grid.len()]),
            InitSpec::Bump(eps) => {
                let p = grid.polytope();
                Ok(grid.sample(|x| eps * p.facet_values(x).iter().map(|l| l * l).product::<f64>()))
            }
            InitSpec::Values(v) if v.len() == grid.len() => Ok(v.clone()),
            InitSpec::Values(v) => {
                Err(Error::invalid(format!("{} node values given, grid has {} nodes", v.len(), grid.len())))
            }
        }
    }
}

/// Whitespace- or comma-separated finite floats; `#` starts a comment line.
pub fn parse_node_values(bytes: &[u8]) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::parse("node values are not UTF-8"))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let x: f64 = tok.parse().map_err(|_| Error::parse(format!("line {}: bad number `{tok}`", n + 1)))?;
            if !x.is_finite() {
                return Err(Error::parse(format!("line {}: non-finite value", n + 1)));
            }
            out.push(x);
        }
    }
    Ok(out)
}

/// Time-stepped state: the correction `v` and the normalized `sigma` it determines.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub grid: Arc<PotentialGrid>,
    pub t: f64,
    pub v: Vec<f64>,
    /// `det(D^2 u) e^{u - <x, grad u>}` per node.
    raw: Vec<f64>,
    log_c_norm: f64,
    sigma: Vec<f64>,
    /// `min lambda_min(D^2 u) / sigma` over interior nodes.
    lambda_over_sigma: f64,
}

impl FlowState {
    /// # Errors
    ///
    /// `ConvexityLoss` if `u` is not convex at some node.
    pub fn new(grid: Arc<PotentialGrid>, t: f64, v: Vec<f64>) -> Result<Self> {
        if v.len() != grid.len() {
            return Err(Error::invalid("nodal value count does not match the grid"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite potential values"));
        }
        let mut raw = Vec::with_capacity(v.len());
        let mut lam_raw = f64::INFINITY;
        let mut z = Neumaier::default();
        for (i, w) in grid.weights().iter().enumerate() {
            let s = grid.node_sigma(&v, i)?;
            if s.lambda_min.is_finite() {
                lam_raw = lam_raw.min(s.lambda_min / s.raw);
            }
            z.add(w * s.raw);
            raw.push(s.raw);
        }
        let z = z.sum();
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Precision(format!("normalization integral {z} at t = {t}")));
        }
        let vol = grid.polytope().volume();
        let c_norm = vol / z;
        let sigma: Vec<f64> = raw.iter().map(|r| r * c_norm).collect();
        let lambda_over_sigma = lam_raw / c_norm;
        Ok(FlowState { grid, t, v, raw, log_c_norm: c_norm.ln(), sigma, lambda_over_sigma })
    }

    pub fn from_init(grid: Arc<PotentialGrid>, init: &InitSpec) -> Result<Self> {
        let v = init.values(&grid)?;
        Self::new(grid, 0.0, v)
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn c_norm(&self) -> f64 {
        self.log_c_norm.exp()
    }

    pub fn log_c_norm(&self) -> f64 {
        self.log_c_norm
    }

    /// `log sigma` per node.
    pub fn log_sigma(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s.ln()).collect()
    }

    /// `u = u_can + v` at the nodes.
    pub fn u(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.grid.u_can(i) + self.v[i]).collect()
    }

    /// `kappa h^2 min(lambda_min(D^2 u) / sigma)`.
    pub fn stable_dt(&self, kappa: f64) -> f64 {
        let h = self.grid.h();
        kappa * h * h * self.lambda_over_sigma
    }

    /// `-log int_{R^n} e^{-phi} = -log int_P det(D^2 u) e^{u - <x, grad u>}`.
    pub fn ding_c(&self) -> f64 {
        self.log_c_norm - self.grid.polytope().volume().ln()
    }

    /// Monitored quantities; `limit` holds nodal values of `d + e`.
    pub fn monitors(&self, limit: Option<&[f64]>) -> Monitors {
        let g = &self.grid;
        let vol = g.polytope().volume();
        let w = g.weights();
        let (mut su, mut sr, mut sh, mut sd) =
            (Neumaier::default(), Neumaier::default(), Neumaier::default(), Neumaier::default());
        let (mut sigma_min, mut sigma_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..g.len() {
            let s = self.sigma[i];
            su.add(w[i] * (g.u_can(i) + self.v[i]));
            sr.add(w[i] * (s - 1.0) * (s - 1.0));
            sh.add(w[i] * s.ln());
            if let Some(l) = limit {
                sd.add(w[i] * (s - 1.0 - l[i]).powi(2));
            }
            sigma_min = sigma_min.min(s);
            sigma_max = sigma_max.max(s);
        }
        let avg_u = su.sum() / vol;
        let ding_c = self.ding_c();
        let d = ding_c + avg_u;
        let h = -sh.sum() / vol;
        let dist_to_limit = if limit.is_some() { (sd.sum() / vol).max(0.0).sqrt() } else { f64::NAN };
        Monitors { e: -avg_u, d, r: sr.sum() / vol, h, m: d + h, ding_c, dist_to_limit, sigma_min, sigma_max }
    }

    /// `(int sigma - V, int sigma x_i)`.
    pub fn balancing_residuals(&self) -> (f64, Vec<f64>) {
        let g = &self.grid;
        let mass = g.integrate(&self.sigma) - g.polytope().volume();
        let moments = (0..g.dim()).map(|k| g.integrate_with(&self.sigma, |x| x[k])).collect();
        (mass, moments)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Monitors {
    pub e: f64,
    pub d: f64,
    pub r: f64,
    pub h: f64,
    pub m: f64,
    pub ding_c: f64,
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub dist_to_limit: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Monitors {
    fn row(&self, t: f64, dt: f64) -> TraceRow {
        TraceRow {
            t,
            e: self.e,
            d: self.d,
            r: self.r,
            h: self.h,
            m: self.m,
            ding_c: self.ding_c,
            dist_to_limit: self.dist_to_limit,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            dt,
        }
    }
}

/// One explicit Euler step `v <- v + dt (sigma - 1)`.
pub fn step(state: &FlowState, dt: f64) -> Result<FlowState> {
    let v: Vec<f64> = state.v.iter().zip(&state.sigma).map(|(v, s)| v + dt * (s - 1.0)).collect();
    FlowState::new(state.grid.clone(), state.t + dt, v)
}

/// Time integrator for [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum Integrator {
    /// Explicit Euler at `kappa h^2 min(lambda_min / sigma)`.
    Euler,
    /// Damped second-order Runge-Kutta-Chebyshev with `stages` stages. Its real
    /// stability interval grows like `0.65 stages^2`, so the step is that many
    /// times the Euler step divided by two.
    Rkc { stages: usize },
}

/// Chebyshev data of the damped RKC2 scheme (damping `2/13`).
#[derive(Debug, Clone)]
struct RkcCoefficients {
    w0: f64,
    w1: f64,
    b: Vec<f64>,
    /// `T_j(w0)`.
    t: Vec<f64>,
    /// Real stability interval `[-beta, 0]`.
    beta: f64,
}

impl RkcCoefficients {
    fn new(s: usize) -> Self {
        assert!(s >= 2, "RKC needs at least two stages");
        let eps = 2.0 / 13.0;
        let w0 = 1.0 + eps / (s * s) as f64;
        let (mut t, mut dt, mut ddt) = (vec![0.0; s + 1], vec![0.0; s + 1], vec![0.0; s + 1]);
        t[0] = 1.0;
        t[1] = w0;
        dt[1] = 1.0;
        for j in 2..=s {
            t[j] = 2.0 * w0 * t[j - 1] - t[j - 2];
            dt[j] = 2.0 * t[j - 1] + 2.0 * w0 * dt[j - 1] - dt[j - 2];
            ddt[j] = 4.0 * dt[j - 1] + 2.0 * w0 * ddt[j - 1] - ddt[j - 2];
        }
        let w1 = dt[s] / ddt[s];
        let mut b = vec![0.0; s + 1];
        for j in 2..=s {
            b[j] = ddt[j] / (dt[j] * dt[j]);
        }
        b[0] = b[2];
        b[1] = b[2];
        let beta = (w0 + 1.0) * ddt[s] / dt[s];
        RkcCoefficients { w0, w1, b, t, beta }
    }

    fn stages(&self) -> usize {
        self.b.len() - 1
    }
}

/// One RKC2 step of size `dt`. Every stage is a full sigma evaluation, so
/// convexity loss at any stage fails the step.
fn rkc_step(state: &FlowState, dt: f64, c: &RkcCoefficients) -> Result<FlowState> {
    let s = c.stages();
    let grid = state.grid.clone();
    let f0: Vec<f64> = state.sigma.iter().map(|x| x - 1.0).collect();
    let y0 = &state.v;
    let mu1 = c.b[1] * c.w1;
    let mut prev2 = y0.clone();
    let mut prev: Vec<f64> = y0.iter().zip(&f0).map(|(y, f)| y + mu1 * dt * f).collect();
    for j in 2..=s {
        let stage = FlowState::new(grid.clone(), state.t, prev.clone())?;
        let mu = 2.0 * c.b[j] * c.w0 / c.b[j - 1];
        let nu = -c.b[j] / c.b[j - 2];
        let mu_t = 2.0 * c.b[j] * c.w1 / c.b[j - 1];
        let a_prev = 1.0 - c.b[j - 1] * c.t[j - 1];
        let gamma_t = -a_prev * mu_t;
        let next: Vec<f64> = (0..y0.len())
            .map(|i| {
                (1.0 - mu - nu) * y0[i]
                    + mu * prev[i]
                    + nu * prev2[i]
                    + mu_t * dt * (stage.sigma[i] - 1.0)
                    + gamma_t * dt * f0[i]
            })
            .collect();
        prev2 = std::mem::replace(&mut prev, next);
    }
    FlowState::new(grid, state.t + dt, prev)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct RunOptions {
    pub t_max: f64,
    /// Safety factor in the step-size rule.
    pub kappa: f64,
    pub dt_min: f64,
    /// Minimum time between recorded trace rows; 0 records every step.
    pub record_every: f64,
    /// Stop once `|R(t) - R(t - window)| < plateau_tol (1 + R)`.
    pub plateau: bool,
    pub plateau_window: f64,
    pub plateau_tol: f64,
    /// Per-step rejection thresholds.
    pub e_drift_tol: f64,
    pub d_increase_tol: f64,
    pub integrator: Integrator,
    /// Upper bound on the step size, for accuracy.
    pub dt_max: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            t_max: 1.0,
            kappa: 0.2,
            dt_min: 1e-10,
            record_every: 0.01,
            plateau: true,
            plateau_window: 1.0,
            plateau_tol: 1e-6,
            e_drift_tol: 1e-8,
            d_increase_tol: 1e-8,
            integrator: Integrator::Euler,
            dt_max: 1e-2,
        }
    }
}

/// Optional per-step checks against a modified Ding energy `D_b`.
#[derive(Debug, Clone, Default)]
pub struct RunTargets {
    /// Nodal values of the predicted limit `d + e` of `sigma - 1`.
    pub limit: Option<Vec<f64>>,
    /// Nodal values of `b = d + l` for the inequality
    /// `dD_b/dt <= -(1/V) int (sigma - b)^2`.
    pub b: Option<Vec<f64>>,
}

/// Worst values seen over all accepted steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct RunStats {
    pub steps: usize,
    pub rejected: usize,
    pub max_abs_e_drift: f64,
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub max_d_increase: f64,
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub max_r_increase: f64,
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub max_m_increase: f64,
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub max_ding_c_increase: f64,
    /// Smallest second difference of `D(t)` over samples at least `1e-3` apart.
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub min_d_second_derivative: f64,
    /// Largest `(dD/dt + R) / (1 + R)` per step.
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub max_slope_defect: f64,
    /// Largest `dD_b/dt + (1/V) int (sigma - b)^2 - 1e-4 (1 + R)`; `-inf` if unchecked.
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub max_key_inequality_excess: f64,
    /// Largest `|int sigma x_i| / V`.
    pub max_balancing_moment: f64,
    pub max_abs_v: f64,
    pub plateau_reached: bool,
}

impl Default for RunStats {
    fn default() -> Self {
        RunStats {
            steps: 0,
            rejected: 0,
            max_abs_e_drift: 0.0,
            max_d_increase: f64::NEG_INFINITY,
            max_r_increase: f64::NEG_INFINITY,
            max_m_increase: f64::NEG_INFINITY,
            max_ding_c_increase: f64::NEG_INFINITY,
            min_d_second_derivative: f64::INFINITY,
            max_slope_defect: f64::NEG_INFINITY,
            max_key_inequality_excess: f64::NEG_INFINITY,
            max_balancing_moment: 0.0,
            max_abs_v: 0.0,
            plateau_reached: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct FlowTrace {
    pub polytope: String,
    pub h: f64,
    pub rows: Vec<TraceRow>,
    pub stats: RunStats,
}

/// Minimum spacing of the samples of `D(t)` used for its second difference.
const CONVEXITY_SPACING: f64 = 1e-3;

/// Pass/fail thresholds for the per-run monitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct MonitorTolerances {
    /// `|E(t) - E(0)| <= e_drift (1 + |E(0)|)`.
    pub e_drift: f64,
    /// Per-step increase allowed for `D`, `R`, `M` and `ding_c`.
    pub monotone: f64,
    /// Lower bound on the discrete `d^2 D / dt^2`.
    pub d_convexity: f64,
    /// `(dD/dt + R) / (1 + R)` per step.
    pub slope: f64,
}

impl Default for MonitorTolerances {
    fn default() -> Self {
        MonitorTolerances { e_drift: 1e-6, monotone: 1e-7, d_convexity: 1e-6, slope: 5e-3 }
    }
}

impl FlowTrace {
    /// One check per monitor; the key inequality only when it was evaluated.
    pub fn monitor_checks(&self, tol: &MonitorTolerances) -> Vec<Check> {
        let s = &self.stats;
        let e0 = self.rows.first().map_or(0.0, |r| r.e);
        let mut out = vec![
            Check::at_most("e_drift", s.max_abs_e_drift, tol.e_drift * (1.0 + e0.abs())),
            Check::at_most("d_nonincreasing", s.max_d_increase, tol.monotone),
            Check::at_most("r_nonincreasing", s.max_r_increase, tol.monotone),
            Check::at_most("m_nonincreasing", s.max_m_increase, tol.monotone),
            Check::at_most("ding_c_nonincreasing", s.max_ding_c_increase, tol.monotone),
            Check::at_least("d_convexity", s.min_d_second_derivative, -tol.d_convexity),
            Check::at_most("slope_rate", s.max_slope_defect, tol.slope),
        ];
        if s.max_key_inequality_excess > f64::NEG_INFINITY {
            out.push(Check::at_most("key_inequality", s.max_key_inequality_excess, 0.0));
        }
        out
    }
}

/// Integrates from `state` until `t_max` or a plateau of `R`.
///
/// # Errors
///
/// `AbortedRun` carrying the partial trace when the step size underflows.
pub fn run(state: FlowState, opts: &RunOptions, targets: &RunTargets) -> Result<(FlowTrace, FlowState)> {
    run_observed(state, opts, targets, |_| {})
}

/// [`run`], calling `observe` on the initial state and after every accepted step.
pub fn run_observed(
    mut state: FlowState,
    opts: &RunOptions,
    targets: &RunTargets,
    mut observe: impl FnMut(&FlowState),
) -> Result<(FlowTrace, FlowState)> {
    observe(&state);
    let grid = state.grid.clone();
    let vol = grid.polytope().volume();
    let w = grid.weights().to_vec();
    let limit = targets.limit.as_deref();
    let mut mon = state.monitors(limit);
    let e0 = mon.e;
    let mut trace = FlowTrace { polytope: grid.polytope().name().to_string(), h: grid.h(), ..FlowTrace::default() };
    trace.rows.push(mon.row(state.t, 0.0));
    let mut stats = RunStats { max_abs_v: max_abs(&state.v), ..RunStats::default() };
    let mut last_record = state.t;
    // (t, R) history for the plateau rule, thinned to spacing >= window / 100.
    let mut history: Vec<(f64, f64)> = vec![(state.t, mon.r)];
    // Checkpoints (t, D - D(0)) at least CONVEXITY_SPACING apart; per-step second
    // differences would be dominated by roundoff once dt is small.
    let mut checkpoints: Vec<(f64, f64)> = vec![(state.t, 0.0)];
    let mut d_acc = Neumaier::default();

    let abort = |t: f64, reason: Error, trace: &FlowTrace, stats: &RunStats| {
        let mut partial = trace.clone();
        partial.stats = *stats;
        Error::AbortedRun { t, reason: Box::new(reason), partial: Box::new(partial) }
    };

    let rkc = match opts.integrator {
        Integrator::Euler => None,
        Integrator::Rkc { stages } => {
            if stages < 2 {
                return Err(Error::invalid("RKC needs at least two stages"));
            }
            Some(RkcCoefficients::new(stages))
        }
    };
    let stretch = rkc.as_ref().map_or(1.0, |c| 0.5 * c.beta);

    // A remainder shorter than dt_min counts as done.
    let finished = |t: f64| opts.t_max - t <= opts.dt_min.max(1e-15 * opts.t_max.abs());
    while !finished(state.t) {
        let mut dt = (stretch * state.stable_dt(opts.kappa)).min(opts.dt_max).min(opts.t_max - state.t);
        let next = loop {
            if dt < opts.dt_min {
                let err = Error::Stiffness { t: state.t, dt };
                return Err(abort(state.t, err, &trace, &stats));
            }
            let attempt = match &rkc {
                None => step(&state, dt),
                Some(c) => rkc_step(&state, dt, c),
            };
            let candidate = match attempt {
                Ok(s) => s,
                Err(Error::ConvexityLoss { .. }) => {
                    stats.rejected += 1;
                    dt *= 0.5;
                    continue;
                }
                Err(e) => return Err(abort(state.t, e, &trace, &stats)),
            };
            // Increments computed without cancellation between large totals.
            let dv: Vec<f64> = candidate.v.iter().zip(&state.v).map(|(a, b)| a - b).collect();
            let d_avg_u = grid.integrate(&dv) / vol;
            let mut acc = Neumaier::default();
            for (((wi, s), c), r) in w.iter().zip(&state.sigma).zip(&candidate.raw).zip(&state.raw) {
                acc.add(wi * s * ((c - r) / r));
            }
            let d_ding_c = -(acc.sum() / vol).ln_1p();
            let d_d = d_ding_c + d_avg_u;
            let e_drift = (mon.e - d_avg_u - e0).abs();
            if e_drift > opts.e_drift_tol * (1.0 + e0.abs()) || d_d > opts.d_increase_tol {
                stats.rejected += 1;
                dt *= 0.5;
                continue;
            }
            break (candidate, d_d, d_ding_c, d_avg_u, dv);
        };
        let (candidate, d_d, d_ding_c, _d_avg_u, dv) = next;
        let new_mon = candidate.monitors(limit);

        if let Some(b) = targets.b.as_deref() {
            let d_b = d_ding_c + weighted(&w, &dv, b) / vol;
            // Trapezoidal right-hand side, consistent with the secant slope.
            let gap = |sigma: &[f64]| {
                let g: Vec<f64> = sigma.iter().zip(b).map(|(s, bi)| (s - bi) * (s - bi)).collect();
                grid.integrate(&g) / vol
            };
            let rhs = 0.5 * (gap(&state.sigma) + gap(&candidate.sigma));
            let excess = d_b / dt + rhs - 1e-4 * (1.0 + mon.r);
            stats.max_key_inequality_excess = stats.max_key_inequality_excess.max(excess);
        }
        let slope = d_d / dt;
        stats.max_slope_defect = stats.max_slope_defect.max((slope + mon.r) / (1.0 + mon.r));
        d_acc.add(d_d);
        if state.t + dt - checkpoints.last().expect("nonempty").0 >= CONVEXITY_SPACING {
            checkpoints.push((state.t + dt, d_acc.sum()));
            if let [.., (t0, d0), (t1, d1), (t2, d2)] = checkpoints[..] {
                let (s0, s1) = ((d1 - d0) / (t1 - t0), (d2 - d1) / (t2 - t1));
                stats.min_d_second_derivative = stats.min_d_second_derivative.min(2.0 * (s1 - s0) / (t2 - t0));
                checkpoints.drain(..checkpoints.len() - 2);
            }
        }
        stats.max_d_increase = stats.max_d_increase.max(d_d);
        stats.max_ding_c_increase = stats.max_ding_c_increase.max(d_ding_c);
        stats.max_r_increase = stats.max_r_increase.max(new_mon.r - mon.r);
        stats.max_m_increase = stats.max_m_increase.max(new_mon.m - mon.m);
        stats.max_abs_e_drift = stats.max_abs_e_drift.max((new_mon.e - e0).abs());
        let (_, moments) = candidate.balancing_residuals();
        let bal = moments.iter().fold(0.0f64, |a, m| a.max(m.abs())) / vol;
        stats.max_balancing_moment = stats.max_balancing_moment.max(bal);
        stats.max_abs_v = stats.max_abs_v.max(max_abs(&candidate.v));
        stats.steps += 1;

        state = candidate;
        mon = new_mon;
        observe(&state);
        let done = finished(state.t);
        if done || state.t - last_record >= opts.record_every {
            trace.rows.push(mon.row(state.t, dt));
            last_record = state.t;
        }
        if state.t - history.last().expect("nonempty").0 >= opts.plateau_window / 100.0 {
            history.push((state.t, mon.r));
        }
        if opts.plateau && state.t >= opts.plateau_window {
            let target = state.t - opts.plateau_window;
            let past = history.iter().rev().find(|(t, _)| *t <= target).map(|(_, r)| *r);
            if let Some(r_past) = past {
                if (mon.r - r_past).abs() < opts.plateau_tol * (1.0 + mon.r) {
                    stats.plateau_reached = true;
                    if trace.rows.last().map(|r| r.t) != Some(state.t) {
                        trace.rows.push(mon.row(state.t, dt));
                    }
                    break;
                }
            }
        }
    }
    trace.stats = stats;
    Ok((trace, state))
}

fn weighted(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = Neumaier::default();
    for i in 0..w.len() {
        s.add(w[i] * a[i] * b[i]);
    }
    s.sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog;

    fn grid(name: &str, h: f64) -> Arc<PotentialGrid> {
        Arc::new(PotentialGrid::new(&catalog(name).unwrap(), h).unwrap())
    }

    #[test]
    fn fubini_study_is_fixed_on_p1() {
        let s = FlowState::new(grid("P1", 1.0 / 64.0), 0.0, vec![0.0; 129]).unwrap();
        let dev = s.sigma().iter().fold(0.0f64, |a, x| a.max((x - 1.0).abs()));
        assert!(dev < 1e-13, "{dev}");
    }

    #[test]
    fn init_spec_parsing() {
        assert_eq!(InitSpec::parse("zero").unwrap(), InitSpec::Zero);
        assert_eq!(InitSpec::parse("bump:0.1").unwrap(), InitSpec::Bump(0.1));
        assert!(InitSpec::parse("bump:x").is_err());
        assert!(InitSpec::parse("/nonexistent/values.txt").is_err());
        assert_eq!(parse_node_values(b"# v\n1, 2.5\n-3e-2 4\n").unwrap(), vec![1.0, 2.5, -0.03, 4.0]);
        assert!(parse_node_values(b"1 nan").is_err());
    }

    #[test]
    fn normalization_holds() {
        let g = grid("BlpP2", 1.0 / 16.0);
        let s = FlowState::from_init(g.clone(), &InitSpec::Bump(0.1)).unwrap();
        let (mass, _) = s.balancing_residuals();
        assert!(mass.abs() <= 1e-10 * g.polytope().volume());
    }

    #[test]
    fn remainder_below_dt_min_is_not_stepped() {
        let g = grid("P1", 1.0 / 16.0);
        let s0 = FlowState::from_init(g, &InitSpec::Bump(0.1)).unwrap();
        let opts = RunOptions { t_max: 0.05, plateau: false, ..RunOptions::default() };
        let (_, s1) = run(s0, &opts, &RunTargets::default()).unwrap();
        let tail = RunOptions { t_max: s1.t + 1e-13, ..opts };
        let (trace, _) = run(s1, &tail, &RunTargets::default()).unwrap();
        assert_eq!(trace.stats.steps, 0);
    }

    #[test]
    fn rkc_stability_interval_grows_quadratically() {
        for s in [2usize, 5, 10, 20] {
            let c = RkcCoefficients::new(s);
            let ratio = c.beta / (s * s - 1) as f64;
            assert!(ratio > 0.6 && ratio < 0.7, "{s}: {}", c.beta);
        }
    }

    #[test]
    fn rkc_agrees_with_euler() {
        let g = grid("P2", 1.0 / 16.0);
        let s0 = FlowState::from_init(g.clone(), &InitSpec::Bump(0.1)).unwrap();
        let base = RunOptions { t_max: 0.2, plateau: false, ..RunOptions::default() };
        let (te, se) = run(s0.clone(), &base, &RunTargets::default()).unwrap();
        let rkc = RunOptions { integrator: Integrator::Rkc { stages: 8 }, ..base };
        let (tr, sr) = run(s0, &rkc, &RunTargets::default()).unwrap();
        assert!(tr.stats.steps * 8 < te.stats.steps);
        let diff = se.v.iter().zip(&sr.v).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff < 1e-4, "{diff}");
        assert!(tr.stats.max_abs_e_drift < 1e-12);
    }

    #[test]
    fn fewer_than_two_stages_is_rejected() {
        let g = grid("P1", 1.0 / 16.0);
        let s0 = FlowState::from_init(g, &InitSpec::Zero).unwrap();
        let opts = RunOptions { integrator: Integrator::Rkc { stages: 1 }, ..RunOptions::default() };
        assert!(run(s0, &opts, &RunTargets::default()).is_err());
    }
}
