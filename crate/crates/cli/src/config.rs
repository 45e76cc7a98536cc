//! Run configuration: defaults, optional JSON file, then command-line overrides.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use torific::catalog::{catalog, CatalogDocument};
use torific::destabilizer::{BruteForceGrid, DestabilizerOptions};
use torific::energies::DualSpec;
use torific::flow::{Integrator, MonitorTolerances, RunOptions};
use torific::{Error, Polytope, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Step-size safety factor.
    pub kappa: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub record_every: f64,
    pub plateau_window: f64,
    pub plateau_tol: f64,
    /// Per-step rejection thresholds.
    pub e_drift_step: f64,
    pub d_increase_step: f64,
    pub monitors: MonitorTolerances,
    /// Balancing residuals relative to the volume.
    pub balancing: f64,
    pub jensen: f64,
    /// Constant `C` in the `C h^2` tolerance for balancing and Jensen checks on sigma grids.
    pub sigma_jensen_c: f64,
    pub moment_weight: f64,
    /// Brute-force search may undercut `W_l(d)` by at most this much.
    pub minimizer_gap: f64,
    /// `|R^{1/2} - |d + e| / sqrt(V)|` at the plateau, in `report`.
    pub report: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let run = RunOptions::default();
        Tolerances {
            kappa: run.kappa,
            dt_min: run.dt_min,
            dt_max: run.dt_max,
            record_every: run.record_every,
            plateau_window: run.plateau_window,
            plateau_tol: run.plateau_tol,
            e_drift_step: run.e_drift_tol,
            d_increase_step: run.d_increase_tol,
            monitors: MonitorTolerances::default(),
            balancing: 1e-8,
            jensen: 1e-9,
            sigma_jensen_c: 16.0,
            moment_weight: 1e-6,
            minimizer_gap: 1e-4,
            report: 5e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog name, or path to a catalog document.
    pub polytope: Option<String>,
    /// Grid spacing.
    pub h: f64,
    pub dual: DualSpec,
    pub t_max: f64,
    /// `zero`, `bump:EPS` or a file of node values.
    pub init: String,
    pub integrator: Integrator,
    /// Stop at a plateau of `R`.
    pub plateau: bool,
    /// Points per axis of the brute-force parameter grid.
    pub grid_points: usize,
    /// Random convex functions per sampled check.
    pub samples: usize,
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            polytope: None,
            h: 1.0 / 32.0,
            dual: DualSpec::default(),
            t_max: 1.0,
            init: "zero".to_string(),
            integrator: Integrator::Euler,
            plateau: true,
            grid_points: BruteForceGrid::default().points,
            samples: 1000,
            trace: None,
            out: None,
            seed: 42,
            tolerances: Tolerances::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// # Errors
    ///
    /// `InvalidInput` for a non-positive tolerance or `h` outside `(0, 1/8]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 0.125) {
            return Err(Error::InvalidInput(format!("h = {} must lie in (0, 1/8]", self.h)));
        }
        let t = &self.tolerances;
        let m = &t.monitors;
        let named = [
            ("t_max", self.t_max),
            ("dual.h_xi", self.dual.h_xi),
            ("dual.rho", self.dual.rho.unwrap_or(1.0)),
            ("kappa", t.kappa),
            ("dt_min", t.dt_min),
            ("dt_max", t.dt_max),
            ("record_every", t.record_every),
            ("plateau_window", t.plateau_window),
            ("plateau_tol", t.plateau_tol),
            ("e_drift_step", t.e_drift_step),
            ("d_increase_step", t.d_increase_step),
            ("monitors.e_drift", m.e_drift),
            ("monitors.monotone", m.monotone),
            ("monitors.d_convexity", m.d_convexity),
            ("monitors.slope", m.slope),
            ("balancing", t.balancing),
            ("jensen", t.jensen),
            ("sigma_jensen_c", t.sigma_jensen_c),
            ("moment_weight", t.moment_weight),
            ("minimizer_gap", t.minimizer_gap),
            ("report", t.report),
        ];
        for (name, x) in named {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} = {x} must be positive")));
            }
        }
        if self.samples == 0 || self.grid_points < 2 {
            return Err(Error::InvalidInput("samples must be positive and grid_points at least 2".into()));
        }
        if let Integrator::Rkc { stages } = self.integrator {
            if stages < 2 {
                return Err(Error::InvalidInput("RKC needs at least two stages".into()));
            }
        }
        Ok(())
    }

    pub fn polytope(&self) -> Result<Polytope> {
        let name = self.polytope.as_deref().ok_or_else(|| Error::InvalidInput("no polytope given".into()))?;
        load_polytope(name)
    }

    pub fn run_options(&self) -> RunOptions {
        let t = &self.tolerances;
        RunOptions {
            t_max: self.t_max,
            kappa: t.kappa,
            dt_min: t.dt_min,
            record_every: t.record_every,
            plateau: self.plateau,
            plateau_window: t.plateau_window,
            plateau_tol: t.plateau_tol,
            e_drift_tol: t.e_drift_step,
            d_increase_tol: t.d_increase_step,
            integrator: self.integrator,
            dt_max: t.dt_max,
        }
    }

    pub fn destabilizer_options(&self) -> DestabilizerOptions {
        DestabilizerOptions {
            grid: BruteForceGrid { points: self.grid_points, ..BruteForceGrid::default() },
            samples: self.samples,
            seed: self.seed,
        }
    }
}

/// A catalog name, or a path to a catalog document when the name has a `.json` suffix
/// or a path separator.
pub fn load_polytope(name: &str) -> Result<Polytope> {
    if name.ends_with(".json") || name.contains(std::path::MAIN_SEPARATOR) {
        CatalogDocument::parse(&std::fs::read(name)?)?.to_polytope()
    } else {
        catalog(name)
    }
}

/// `euler` or `rkc:S`.
pub fn parse_integrator(s: &str) -> std::result::Result<Integrator, String> {
    match s {
        "euler" => Ok(Integrator::Euler),
        _ => s
            .strip_prefix("rkc:")
            .and_then(|n| n.parse().ok())
            .map(|stages| Integrator::Rkc { stages })
            .ok_or_else(|| format!("expected `euler` or `rkc:STAGES`, got `{s}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let s = crate::json::to_string(&c);
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let coarse = RunConfig { h: 0.25, ..RunConfig::default() };
        assert!(coarse.validate().is_err());
        let mut neg = RunConfig::default();
        neg.tolerances.monitors.monotone = 0.0;
        assert!(neg.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"hh": 0.1}"#).is_err());
    }

    #[test]
    fn integrator_flag() {
        assert_eq!(parse_integrator("euler").unwrap(), Integrator::Euler);
        assert_eq!(parse_integrator("rkc:12").unwrap(), Integrator::Rkc { stages: 12 });
        assert!(parse_integrator("rk4").is_err());
    }
}
