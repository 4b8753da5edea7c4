//! Serializable experiment reports.
//!
//! `RateReport` is the JSON artifact of a convergence experiment:
//! `{dts[], errors[], stderr[], slope, slope_ci, intercept, r_squared, meta{}}`.
//! Two CSV projections exist: a wide one (one row per step size) and a long
//! one (`dt,stat,value`) for plotting tools.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::fit::RateFit;
use crate::mc::DtError;
use crate::{Error, Result};

/// Run metadata carried by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub scheme: String,
    pub noise: String,
    pub init: String,
    pub modes: usize,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
    pub norm: String,
    pub moment_p: u32,
    pub time_agg: String,
    pub dt_ref: f64,
    pub divergent: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub stderr: Vec<f64>,
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub intercept: f64,
    pub r_squared: f64,
    pub meta: ReportMeta,
}

impl RateReport {
    pub fn new(rows: &[DtError], fit: &RateFit, meta: ReportMeta) -> Result<Self> {
        let report = Self {
            dts: rows.iter().map(|r| r.dt).collect(),
            errors: rows.iter().map(|r| r.estimate).collect(),
            stderr: rows.iter().map(|r| r.stderr).collect(),
            slope: fit.slope,
            slope_ci: fit.slope_ci,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            meta,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dts.len() != self.errors.len() || self.dts.len() != self.stderr.len() {
            return Err(Error::Config("report columns have mismatched lengths".into()));
        }
        if self.dts.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("report step sizes must be strictly decreasing".into()));
        }
        if self.errors.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("report errors must be positive".into()));
        }
        if !self.slope.is_finite() {
            return Err(Error::Config("report slope must be finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("report serialization failed: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(s)
            .map_err(|e| Error::Parse(format!("report deserialization failed: {e}")))?;
        report.validate()?;
        Ok(report)
    }

    /// One row per step size: `dt,error,stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dt,error,stderr")?;
        for i in 0..self.dts.len() {
            writeln!(w, "{},{},{}", self.dts[i], self.errors[i], self.stderr[i])?;
        }
        Ok(())
    }

    /// Long form for plotting: `dt,stat,value` with per-dt stats followed by
    /// fit summary rows.
    pub fn write_csv_long<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dt,stat,value")?;
        for i in 0..self.dts.len() {
            writeln!(w, "{},error,{}", self.dts[i], self.errors[i])?;
            writeln!(w, "{},stderr,{}", self.dts[i], self.stderr[i])?;
        }
        writeln!(w, ",slope,{}", self.slope)?;
        writeln!(w, ",slope_ci_lo,{}", self.slope_ci.0)?;
        writeln!(w, ",slope_ci_hi,{}", self.slope_ci.1)?;
        writeln!(w, ",intercept,{}", self.intercept)?;
        Ok(())
    }
}

/// Metadata of a probe run (single step size, no reference solution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub scheme: String,
    pub noise: String,
    pub init: String,
    pub modes: usize,
    pub horizon: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
}

/// JSON artifact of a probe run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: String,
    pub items: Vec<ProbeItem>,
    pub meta: ProbeMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeItem {
    pub label: String,
    /// `None` when every sample overflowed the exponential (pure tail run).
    pub estimate: Option<f64>,
    pub stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_exponent: Option<f64>,
    pub divergent: usize,
}

impl ProbeReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("report serialization failed: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("report parse failed: {e}")))
    }
}
