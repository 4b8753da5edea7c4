//! Weighted least squares on `log error` against `log dt`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two-sided 97.5% Student-t quantiles for 1..=30 degrees of freedom; the
/// normal quantile is used beyond.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

fn t_quantile(df: usize) -> f64 {
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        T_975[df - 1]
    } else {
        1.96
    }
}

/// Fitted power law `error ≈ e^intercept · dt^slope`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95% confidence interval for the slope.
    pub slope_ci: (f64, f64),
    pub r_squared: f64,
}

/// Fit `log(errors) = intercept + slope * log(dts)` by (weighted) least
/// squares. Weights are relative; pass `None` for an unweighted fit.
pub fn fit_rate(dts: &[f64], errors: &[f64], weights: Option<&[f64]>) -> Result<RateFit> {
    let n = dts.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {n}")));
    }
    if errors.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Fit("dts, errors and weights must have equal lengths".into()));
    }
    if dts.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Fit("all step sizes must be positive".into()));
    }
    if errors.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::Fit("all errors must be positive and finite".into()));
    }
    if let Some(w) = weights {
        if w.iter().any(|&wi| !(wi > 0.0) || !wi.is_finite()) {
            return Err(Error::Fit("all weights must be positive and finite".into()));
        }
    }

    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], |w| w.to_vec());

    let wsum: f64 = w.iter().sum();
    let xbar = x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() / wsum;
    let ybar = y.iter().zip(&w).map(|(yi, wi)| yi * wi).sum::<f64>() / wsum;

    let sxx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * (xi - xbar) * (xi - xbar)).sum();
    if sxx <= 1e-12 * xbar.abs().max(1.0) {
        return Err(Error::Fit("step sizes are too close together to fit a slope".into()));
    }
    let sxy: f64 = x
        .iter()
        .zip(&y)
        .zip(&w)
        .map(|((xi, yi), wi)| wi * (xi - xbar) * (yi - ybar))
        .sum();

    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;

    let ss_res: f64 = x
        .iter()
        .zip(&y)
        .zip(&w)
        .map(|((xi, yi), wi)| {
            let r = yi - (intercept + slope * xi);
            wi * r * r
        })
        .sum();
    let ss_tot: f64 = y.iter().zip(&w).map(|(yi, wi)| wi * (yi - ybar) * (yi - ybar)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let df = n - 2;
    let sigma_sq = ss_res / df as f64;
    let slope_stderr = (sigma_sq / sxx).sqrt();
    let half = t_quantile(df) * slope_stderr;

    Ok(RateFit {
        slope,
        intercept,
        slope_stderr,
        slope_ci: (slope - half, slope + half),
        r_squared,
    })
}
