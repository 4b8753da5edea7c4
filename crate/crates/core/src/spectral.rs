//! Dirichlet-Laplacian eigenbasis on (0,1).
//!
//! The negative Laplacian with homogeneous Dirichlet boundary conditions has
//! eigenpairs `λ_k = (kπ)²`, `e_k(x) = √2 sin(kπx)` for `k ≥ 1`. Everything
//! linear (heat semigroup, fractional powers, Sobolev norms) is diagonal in
//! this basis, while the pointwise nonlinearity acts on nodal values at the
//! uniform interior grid `x_j = j/(K+1)`, `j = 1..K`.
//!
//! With exactly K interior nodes the two representations are in exact
//! bijection: the sine matrix `S[j][k] = sin(jkπ/(K+1))` satisfies
//! `S² = (K+1)/2 · I`, so `to_spectral` inverts `to_grid` up to rounding.
//! Transforms run through a length-2(K+1) complex FFT of the odd extension.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Eigenvalues of the negative Dirichlet Laplacian retained by a truncation.
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    lambda: Vec<f64>,
}

impl LaplacianSpectrum {
    /// Spectrum of `-Δ` on (0,1) with Dirichlet conditions: `λ_k = (kπ)²`.
    pub fn dirichlet(modes: usize) -> Self {
        let lambda = (1..=modes).map(|k| (k as f64 * PI).powi(2)).collect();
        Self { lambda }
    }

    /// Custom eigenvalue sequence (nonnegative, nondecreasing). Zero
    /// eigenvalues are admitted so degenerate modes can be exercised in
    /// noise-sampling tests; the sine transforms are only meaningful for
    /// the Dirichlet spectrum.
    pub fn from_eigenvalues(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::Config("spectrum needs at least one mode".into()));
        }
        for w in lambda.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(Error::Config("eigenvalues must be nondecreasing".into()));
            }
        }
        if !(lambda[0] >= 0.0) {
            return Err(Error::Config("eigenvalues must be nonnegative".into()));
        }
        Ok(Self { lambda })
    }

    pub fn modes(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }
}

/// Coefficients of a function in the sine eigenbasis `{e_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub coeffs: Vec<f64>,
}

/// Nodal values at the interior grid points `x_j = j/(K+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(modes: usize) -> Self {
        Self { coeffs: vec![0.0; modes] }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

impl GridField {
    pub fn zeros(modes: usize) -> Self {
        Self { values: vec![0.0; modes] }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Norms used throughout: `L²` (Parseval in spectral form, quadrature on the
/// grid), `L^q` for even `q ≥ 2` and the sup norm via the interior grid with
/// zero boundary values, and `H^s = ‖(-Δ)^{s/2}·‖_{L²}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    Lq(u32),
    Sup,
    Sobolev(f64),
}

/// K-mode sine space: spectrum, grid and cached FFT plan.
///
/// All methods are pure; the plan is shared immutably so one space can be
/// used from many threads.
#[derive(Clone)]
pub struct SineSpace {
    spectrum: LaplacianSpectrum,
    fft: Arc<dyn Fft<f64>>,
    modes: usize,
}

impl std::fmt::Debug for SineSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SineSpace").field("modes", &self.modes).finish()
    }
}

impl SineSpace {
    pub fn new(modes: usize) -> Self {
        assert!(modes >= 1, "a sine space needs at least one mode");
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * (modes + 1));
        Self { spectrum: LaplacianSpectrum::dirichlet(modes), fft, modes }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn spectrum(&self) -> &LaplacianSpectrum {
        &self.spectrum
    }

    pub fn lambda(&self) -> &[f64] {
        self.spectrum.lambda()
    }

    /// Interior node positions `x_j = j/(K+1)`, `j = 1..K`.
    pub fn nodes(&self) -> Vec<f64> {
        let h = 1.0 / (self.modes as f64 + 1.0);
        (1..=self.modes).map(|j| j as f64 * h).collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.modes {
            return Err(Error::Config(format!(
                "field has {len} entries but the space retains {} modes",
                self.modes
            )));
        }
        Ok(())
    }

    /// Plain sine sum `y[k] = Σ_j x[j] sin((j+1)(k+1)π/(K+1))` via the odd
    /// extension trick: embed x into an odd sequence of length 2(K+1) whose
    /// DFT is purely imaginary with `Im X[k] = -2 y[k-1]`.
    fn sine_sum(&self, x: &[f64]) -> Vec<f64> {
        let len = 2 * (self.modes + 1);
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (j, &v) in x.iter().enumerate() {
            buf[j + 1].re = v;
            buf[len - 1 - j].re = -v;
        }
        self.fft.process(&mut buf);
        (1..=self.modes).map(|k| -0.5 * buf[k].im).collect()
    }

    /// Evaluate a coefficient vector at the interior nodes.
    pub fn to_grid(&self, c: &SpectralField) -> Result<GridField> {
        self.check_len(c.coeffs.len())?;
        let mut values = self.sine_sum(&c.coeffs);
        for v in &mut values {
            *v *= std::f64::consts::SQRT_2;
        }
        Ok(GridField { values })
    }

    /// Recover coefficients from nodal values; exact inverse of [`Self::to_grid`]
    /// on the K-mode space up to rounding.
    pub fn to_spectral(&self, g: &GridField) -> Result<SpectralField> {
        self.check_len(g.values.len())?;
        let scale = std::f64::consts::SQRT_2 / (self.modes as f64 + 1.0);
        let mut coeffs = self.sine_sum(&g.values);
        for c in &mut coeffs {
            *c *= scale;
        }
        Ok(SpectralField { coeffs })
    }

    /// Per-mode decay factors `e^{-λ_k t}` of the heat semigroup.
    pub fn semigroup_factors(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("semigroup time must be >= 0, got {t}")));
        }
        Ok(self.lambda().iter().map(|&l| (-l * t).exp()).collect())
    }

    /// Heat semigroup `S(t) = e^{tΔ}`, diagonal in the sine basis.
    pub fn apply_semigroup(&self, c: &SpectralField, t: f64) -> Result<SpectralField> {
        self.check_len(c.coeffs.len())?;
        let factors = self.semigroup_factors(t)?;
        let coeffs = c.coeffs.iter().zip(&factors).map(|(&x, &f)| x * f).collect();
        Ok(SpectralField { coeffs })
    }

    /// Fractional power `(-Δ)^{r/2}`; negative `r` smooths.
    pub fn apply_fractional_power(&self, c: &SpectralField, r: f64) -> Result<SpectralField> {
        self.check_len(c.coeffs.len())?;
        let coeffs = c
            .coeffs
            .iter()
            .zip(self.lambda())
            .map(|(&x, &l)| x * l.powf(r / 2.0))
            .collect();
        Ok(SpectralField { coeffs })
    }

    pub fn norm_spectral(&self, c: &SpectralField, kind: NormKind) -> Result<f64> {
        self.check_len(c.coeffs.len())?;
        match kind {
            NormKind::L2 => Ok(c.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt()),
            NormKind::Sobolev(s) => Ok(c
                .coeffs
                .iter()
                .zip(self.lambda())
                .map(|(&x, &l)| x * x * l.powf(s))
                .sum::<f64>()
                .sqrt()),
            NormKind::Lq(_) | NormKind::Sup => self.norm_grid(&self.to_grid(c)?, kind),
        }
    }

    pub fn norm_grid(&self, g: &GridField, kind: NormKind) -> Result<f64> {
        self.check_len(g.values.len())?;
        let h = 1.0 / (self.modes as f64 + 1.0);
        match kind {
            NormKind::L2 => Ok((g.values.iter().map(|v| v * v).sum::<f64>() * h).sqrt()),
            NormKind::Lq(q) => {
                check_even_exponent(q)?;
                let sum: f64 = g.values.iter().map(|v| v.powi(q as i32)).sum();
                Ok((sum * h).powf(1.0 / q as f64))
            }
            NormKind::Sup => Ok(g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))),
            NormKind::Sobolev(_) => self.norm_spectral(&self.to_spectral(g)?, kind),
        }
    }
}

pub(crate) fn check_even_exponent(q: u32) -> Result<()> {
    if q < 2 || !q.is_multiple_of(2) {
        return Err(Error::Domain(format!("Lq norm requires even q >= 2, got {q}")));
    }
    Ok(())
}
