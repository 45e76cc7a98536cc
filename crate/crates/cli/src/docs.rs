//! Output documents. Every document written by the binary is one of these types.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use torific::affine::AffineFn;
use torific::ding::{Extremal, PLConvexFn};
use torific::flow::RunStats;
use torific::trace::TraceRow;
use torific::Check;

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PolytopeInfo {
    pub name: String,
    pub dimension: usize,
    /// Exact vertices as `p/q` strings.
    pub vertices: Vec<Vec<String>>,
    pub volume: f64,
    pub barycenter: Vec<f64>,
    pub smooth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PolytopeList {
    pub polytopes: Vec<PolytopeInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct ExtremalDoc {
    pub polytope: String,
    #[serde(flatten)]
    pub extremal: Extremal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FlowSummary {
    pub polytope: String,
    pub nodes: usize,
    pub config: RunConfig,
    /// Norm `|d + e| / sqrt(V)` of the predicted limit of `sigma - 1`.
    pub limit_norm: f64,
    pub rows: usize,
    pub last: TraceRow,
    pub plateau_r_sqrt: f64,
    pub stats: RunStats,
    pub monitors: Vec<Check>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct VerifyReport {
    pub polytope: String,
    pub h: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ReportRow {
    pub polytope: String,
    /// Trace file the row was computed from.
    pub trace: String,
    pub e: AffineFn,
    pub d: PLConvexFn,
    /// `|d + e|_{L2} / sqrt(V)`.
    pub limit_norm: f64,
    /// `R^{1/2}` at the last trace row.
    pub plateau_r_sqrt: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub monitors: Vec<Check>,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub pass: bool,
}
