//! Closed-form flow of the double-well reaction `dx = (x - x³) dt`.
//!
//! The time-t solution map is
//!
//! ```text
//! Φ_t(z) = z / sqrt(z² + (1 - z²) e^{-2t})
//! ```
//!
//! with fixed points {-1, 0, 1}. The denominator is a convex combination of
//! `z²` and 1, so the map is defined for every real `z` and never overflows.
//! The increment quotient `Ψ_t = (Φ_t - id)/t` is evaluated through the
//! factored identity
//!
//! ```text
//! Ψ_t(z) = z (1 - E)(1 - z²) / (t √D (1 + √D)),   E = e^{-2t},  D = E + z²(1 - E)
//! ```
//!
//! with `1 - E` computed by `expm1`. The naive quotient `(Φ_t(z) - z)/t`
//! loses all significant digits once `t ≲ 1e-8`; the factored form stays
//! accurate down to `t = 0` where it reduces to the drift `z - z³`.

use crate::spectral::GridField;
use crate::{Error, Result};

/// Drift of the reaction part: `F(z) = z - z³`.
#[inline]
pub fn drift(z: f64) -> f64 {
    z - z * z * z
}

/// Per-step quantities shared by every pointwise flow evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FlowFactors {
    dt: f64,
    /// `e^{-2 dt}`
    exp_neg: f64,
    /// `1 - e^{-2 dt}`, computed without cancellation.
    one_minus: f64,
}

impl FlowFactors {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt >= 0.0) {
            return Err(Error::Domain(format!("flow time must be >= 0, got {dt}")));
        }
        Ok(Self { dt, exp_neg: (-2.0 * dt).exp(), one_minus: -(-2.0 * dt).exp_m1() })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn phi(&self, z: f64) -> f64 {
        let d = self.exp_neg + z * z * self.one_minus;
        z / d.sqrt()
    }

    #[inline]
    pub fn psi(&self, z: f64) -> f64 {
        if self.dt == 0.0 {
            return drift(z);
        }
        let d = self.exp_neg + z * z * self.one_minus;
        let sd = d.sqrt();
        z * self.one_minus * (1.0 - z * z) / (self.dt * sd * (1.0 + sd))
    }
}

/// Flow map `Φ_dt(z)`.
pub fn phi(z: f64, dt: f64) -> Result<f64> {
    Ok(FlowFactors::new(dt)?.phi(z))
}

/// Increment quotient `Ψ_dt(z) = (Φ_dt(z) - z)/dt`, with `Ψ_0 = F`.
pub fn psi(z: f64, dt: f64) -> Result<f64> {
    Ok(FlowFactors::new(dt)?.psi(z))
}

/// Step-size bounds shared by the splitting and exponential Euler schemes:
/// `0 ≤ dt ≤ dt0 < 1`.
#[derive(Debug, Clone, Copy)]
pub struct FlowParams {
    pub dt0: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { dt0: 0.5 }
    }
}

impl FlowParams {
    pub fn validate_dt(&self, dt: f64) -> Result<()> {
        if !(self.dt0 > 0.0 && self.dt0 < 1.0) {
            return Err(Error::Config(format!("dt0 must lie in (0,1), got {}", self.dt0)));
        }
        if !(dt >= 0.0 && dt <= self.dt0) {
            return Err(Error::Config(format!(
                "step dt = {dt} outside [0, dt0 = {}]",
                self.dt0
            )));
        }
        Ok(())
    }
}

/// Componentwise flow map on nodal values.
pub fn apply_phi(g: &GridField, dt: f64) -> Result<GridField> {
    let f = FlowFactors::new(dt)?;
    Ok(GridField { values: g.values.iter().map(|&z| f.phi(z)).collect() })
}

/// Componentwise increment quotient on nodal values.
pub fn apply_psi(g: &GridField, dt: f64) -> Result<GridField> {
    let f = FlowFactors::new(dt)?;
    Ok(GridField { values: g.values.iter().map(|&z| f.psi(z)).collect() })
}
