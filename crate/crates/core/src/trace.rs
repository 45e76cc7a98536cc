//! Flow trace rows and their CSV form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 11] =
    ["t", "E", "D", "R", "H", "M", "ding_c", "dist_to_limit", "sigma_min", "sigma_max", "dt"];

/// One sample of the monitored quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct TraceRow {
    pub t: f64,
    /// `-(1/V) int u`.
    pub e: f64,
    /// Ding energy, up to an additive constant.
    pub d: f64,
    /// `(1/V) int (sigma - 1)^2`.
    pub r: f64,
    /// `-(1/V) int log sigma`.
    pub h: f64,
    /// `D + H`.
    pub m: f64,
    /// `-log int_{R^n} e^{-phi}`.
    pub ding_c: f64,
    /// `||sigma - 1 - (d + e)|| / sqrt(V)`.
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub dist_to_limit: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Step used to reach this row (0 for the initial row).
    pub dt: f64,
}

impl TraceRow {
    fn fields(&self) -> [f64; 11] {
        [
            self.t,
            self.e,
            self.d,
            self.r,
            self.h,
            self.m,
            self.ding_c,
            self.dist_to_limit,
            self.sigma_min,
            self.sigma_max,
            self.dt,
        ]
    }

    fn from_fields(f: &[f64]) -> Self {
        TraceRow {
            t: f[0],
            e: f[1],
            d: f[2],
            r: f[3],
            h: f[4],
            m: f[5],
            ding_c: f[6],
            dist_to_limit: f[7],
            sigma_min: f[8],
            sigma_max: f[9],
            dt: f[10],
        }
    }
}

/// 17 significant digits in scientific notation, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn write_csv<W: std::io::Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.fields().iter().map(|x| fmt_f64(*x))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ASCII output")
}

/// Parses a trace CSV. Rows must have exactly the trace columns and strictly
/// increasing `t`.
///
/// # Errors
///
/// `Parse` naming the offending row (1-based, header excluded).
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = rdr.headers().map_err(|e| Error::parse(format!("trace header: {e}")))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::parse(format!("trace header must be `{}`", CSV_HEADER.join(","))));
    }
    let mut rows: Vec<TraceRow> = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 1;
        let rec = rec.map_err(|e| Error::parse(format!("trace row {row}: {e}")))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::parse(format!("trace row {row}: expected {} fields", CSV_HEADER.len())));
        }
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(format!("trace row {row}: {e}")))?;
        let r = TraceRow::from_fields(&vals);
        if let Some(prev) = rows.last() {
            if !(r.t > prev.t) {
                return Err(Error::parse(format!("trace row {row}: time does not increase")));
            }
        }
        rows.push(r);
    }
    Ok(rows)
}
