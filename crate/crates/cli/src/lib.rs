//! The `torific` command line: argument parsing, configuration and output.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 certification or monitor
//! failure, 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use torific::destabilizer::DestabilizerCertificate;
use torific::flow::Integrator;
use torific::trace::write_csv;
use torific::Error;

pub mod commands;
pub mod config;
pub mod docs;
pub mod json;
pub mod report;

use config::{parse_integrator, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "torific", version, about = "Toric inverse Monge-Ampere flow, extremal functions and destabilizers")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Print the JSON schemas of the configuration and every output document.
    #[arg(long)]
    pub json_schema: bool,
    /// JSON run configuration; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Write the JSON result to FILE instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Seed for the sampled test functions.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Names, vertices, volumes and barycenters of the catalog polytopes.
    ListPolytopes,
    /// Extremal affine function e, l = e + 1, min l and the system residuals.
    Extremal(PolytopeArg),
    /// Optimal destabilizer certificate (exit 2 when certification fails).
    Destabilize(DestabilizeArgs),
    /// Run the flow. The trace CSV goes to --trace or stdout; the summary JSON to
    /// --out, or to stdout when --trace is given.
    Flow(FlowArgs),
    /// Invariant sweep for one polytope, as a pass/fail JSON report.
    Verify(VerifyArgs),
    /// Summary table over trace CSVs (NAME=PATH or PATH) and certificate JSONs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PolytopeArg {
    /// Catalog name or path to a catalog document.
    #[arg(long)]
    pub polytope: Option<String>,
}

#[derive(Debug, Args)]
pub struct DestabilizeArgs {
    #[command(flatten)]
    pub polytope: PolytopeArg,
    /// Brute-force grid points per parameter axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Random convex functions for the semistability margin.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub polytope: PolytopeArg,
    /// Grid spacing; 1/h must be an integer.
    #[arg(long)]
    pub h: Option<f64>,
    /// Final time.
    #[arg(long)]
    pub tmax: Option<f64>,
    /// `zero`, `bump:EPS` or a file of node values.
    #[arg(long)]
    pub init: Option<String>,
    /// Write the trace CSV to this file.
    #[arg(long, value_name = "FILE.csv")]
    pub trace: Option<PathBuf>,
    /// `euler` or `rkc:STAGES`.
    #[arg(long, value_parser = parse_integrator)]
    pub integrator: Option<Integrator>,
    /// Step factor in dt = kappa h^2 min(lambda_min / sigma).
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Largest time step.
    #[arg(long)]
    pub dt_max: Option<f64>,
    /// Run to --tmax even if R reaches a plateau.
    #[arg(long)]
    pub no_plateau: bool,
    /// Brute-force grid points for the certificate of the predicted limit.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub polytope: PolytopeArg,
    /// Grid spacing; 1/h must be an integer.
    #[arg(long)]
    pub h: Option<f64>,
    /// State the energy checks run on [default: bump:0.1].
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub inputs: Vec<String>,
    /// Allowed |R^{1/2} - |d + e| / sqrt(V)| at the plateau.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn config(&self) -> torific::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        let poly = |c: &mut RunConfig, p: &PolytopeArg| {
            if p.polytope.is_some() {
                c.polytope = p.polytope.clone();
            }
        };
        match &self.command {
            Some(Command::Extremal(a)) => poly(&mut c, a),
            Some(Command::Destabilize(a)) => {
                poly(&mut c, &a.polytope);
                set(&mut c.grid_points, a.grid);
                set(&mut c.samples, a.samples);
            }
            Some(Command::Flow(a)) => {
                poly(&mut c, &a.polytope);
                set(&mut c.h, a.h);
                set(&mut c.t_max, a.tmax);
                set(&mut c.init, a.init.clone());
                set(&mut c.integrator, a.integrator);
                set(&mut c.tolerances.kappa, a.kappa);
                set(&mut c.tolerances.dt_max, a.dt_max);
                set(&mut c.grid_points, a.grid);
                if a.trace.is_some() {
                    c.trace = a.trace.clone();
                }
                if a.no_plateau {
                    c.plateau = false;
                }
            }
            Some(Command::Verify(a)) => {
                poly(&mut c, &a.polytope);
                set(&mut c.h, a.h);
                c.init = a.init.clone().unwrap_or_else(|| "bump:0.1".to_string());
                set(&mut c.grid_points, a.grid);
                set(&mut c.samples, a.samples);
            }
            Some(Command::Report(a)) => {
                set(&mut c.tolerances.report, a.tolerance);
                set(&mut c.grid_points, a.grid);
            }
            Some(Command::ListPolytopes) | None => {}
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Certification { .. } => EXIT_FAILED,
        Error::InvalidInput(_)
        | Error::UnknownPolytope { .. }
        | Error::Parse(_)
        | Error::Io(_)
        | Error::Precondition(_)
        | Error::UnsupportedDegree { .. }
        | Error::Unsupported(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

/// All output schemas, keyed by the subcommand that emits them.
pub fn schemas() -> BTreeMap<&'static str, schemars::schema::RootSchema> {
    use schemars::schema_for;
    BTreeMap::from([
        ("config", schema_for!(RunConfig)),
        ("list-polytopes", schema_for!(docs::PolytopeList)),
        ("extremal", schema_for!(docs::ExtremalDoc)),
        ("destabilize", schema_for!(DestabilizerCertificate)),
        ("flow", schema_for!(docs::FlowSummary)),
        ("verify", schema_for!(docs::VerifyReport)),
        ("report", schema_for!(docs::Report)),
    ])
}

fn emit<T: Serialize>(out: Option<&Path>, doc: &T) -> torific::Result<()> {
    match out {
        Some(path) => json::write(std::io::BufWriter::new(std::fs::File::create(path)?), doc)?,
        None => json::write(std::io::stdout().lock(), doc)?,
    }
    Ok(())
}

fn execute(cli: &Cli) -> torific::Result<i32> {
    if cli.json_schema {
        emit(None, &schemas())?;
        return Ok(EXIT_OK);
    }
    let cfg = cli.config()?;
    let out = cfg.out.as_deref();
    let verdict = |pass: bool| if pass { EXIT_OK } else { EXIT_FAILED };
    match cli.command.as_ref().expect("clap requires a subcommand") {
        Command::ListPolytopes => emit(out, &commands::list_polytopes()?).map(|_| EXIT_OK),
        Command::Extremal(_) => emit(out, &commands::extremal(&cfg)?).map(|_| EXIT_OK),
        Command::Destabilize(_) => {
            let (cert, ok) = commands::destabilize(&cfg)?;
            emit(out, &cert)?;
            Ok(verdict(ok))
        }
        Command::Flow(_) => {
            let (trace, summary) = commands::flow(&cfg)?;
            match &cfg.trace {
                Some(path) => {
                    write_csv(&trace.rows, std::io::BufWriter::new(std::fs::File::create(path)?))?;
                    emit(out, &summary)?;
                }
                None => {
                    write_csv(&trace.rows, std::io::stdout().lock())?;
                    if let Some(path) = out {
                        emit(Some(path), &summary)?;
                    }
                }
            }
            if let Some(reason) = &summary.aborted {
                eprintln!("flow aborted: {reason}");
                return Ok(EXIT_NUMERICAL);
            }
            Ok(verdict(summary.pass))
        }
        Command::Verify(_) => {
            let rep = commands::verify(&cfg)?;
            emit(out, &rep)?;
            Ok(verdict(rep.pass))
        }
        Command::Report(a) => {
            let rep = report::report(&a.inputs, &cfg)?;
            emit(out, &rep)?;
            Ok(verdict(rep.pass))
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => {
            let _ = std::io::stdout().flush();
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
