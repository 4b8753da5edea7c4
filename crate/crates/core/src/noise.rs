//! Exact sampling of the stochastic convolution, mode by mode.
//!
//! The driving noise is diagonal in the sine basis: `W^Q = Σ_k √q_k β_k e_k`.
//! Each mode of the convolution `∫ S(t-s) dW^Q(s)` is an Ornstein-Uhlenbeck
//! integral whose increments over a step of length `dt` are independent
//! Gaussians with variance
//!
//! ```text
//! v_k = q_k (1 - e^{-2 λ_k dt}) / (2 λ_k)        (v_k = q_k dt when λ_k = 0)
//! ```
//!
//! A [`NoiseTape`] pre-draws all fine-step increments of one sample path.
//! Increments over a coarser grid are recovered *exactly* from the same tape
//! by the semigroup-weighted sum
//!
//! ```text
//! I_coarse = Σ_{j=0}^{m-1} e^{-λ_k (m-1-j) dt_f} g_k[nm + j],
//! ```
//!
//! which is the pathwise decomposition of the coarse OU integral over its
//! fine subintervals. Coupling coarse and fine solvers through one tape makes
//! their difference a pathwise strong error with no discretization of the
//! noise itself.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::spectral::{LaplacianSpectrum, SpectralField};
use crate::{Error, Result};

/// Hard cap on tape entries (about 1 GiB of f64).
pub const TAPE_ENTRY_CAP: usize = 1 << 27;

/// Diagonal covariance of the driving Wiener process.
///
/// `White` is `Q = I` (space-time white noise). `Diagonal` sets
/// `q_k = scale · λ_k^{-gamma}`; larger `gamma` means smoother noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QSpec {
    White,
    Diagonal { gamma: f64, scale: f64 },
}

impl QSpec {
    /// Covariance eigenvalue `q_k` for the mode with Laplacian eigenvalue
    /// `lambda`.
    pub fn q_value(&self, lambda: f64) -> f64 {
        match *self {
            QSpec::White => 1.0,
            QSpec::Diagonal { gamma, scale } => scale * lambda.powf(-gamma),
        }
    }

    /// Truncated squared Hilbert-Schmidt norm of `(-Δ)^{s/2} Q`:
    /// `Σ_{k ≤ K} q_k λ_k^s`. Monotone in the truncation level.
    pub fn hs_norm_sq(&self, spectrum: &LaplacianSpectrum, s: f64) -> f64 {
        spectrum.lambda().iter().map(|&l| self.q_value(l) * l.powf(s)).sum()
    }

    /// Variance of the stationary OU law of one convolution mode:
    /// `q_k / (2 λ_k)`.
    pub fn stationary_variance(&self, lambda: f64) -> f64 {
        let q = self.q_value(lambda);
        if q == 0.0 {
            0.0
        } else {
            q / (2.0 * lambda)
        }
    }

    pub fn label(&self) -> String {
        match *self {
            QSpec::White => "white".into(),
            QSpec::Diagonal { gamma, scale } => format!("diagonal(gamma={gamma},scale={scale})"),
        }
    }
}

/// Purpose tag separating independent random streams of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Tape = 0,
    Diagnostics = 1,
}

/// Counter-based stream key `(seed, sample, purpose)`.
///
/// Every Monte Carlo sample draws from its own ChaCha stream, so samples can
/// be generated in parallel in any order and still reproduce bit-identically.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey {
    pub seed: u64,
    pub sample: u64,
    pub purpose: StreamPurpose,
}

impl StreamKey {
    pub fn new(seed: u64, sample: u64, purpose: StreamPurpose) -> Self {
        assert!(sample < (1 << 56), "sample index exceeds the stream id budget");
        Self { seed, sample, purpose }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.sample << 8) | self.purpose as u64);
        rng
    }
}

/// Fine-resolution stochastic-convolution increments of one sample path.
#[derive(Debug, Clone)]
pub struct NoiseTape {
    modes: usize,
    steps: usize,
    dt: f64,
    seed: u64,
    sample: u64,
    /// `e^{-λ_k dt}` per mode, the weights of coarse aggregation.
    decay: Vec<f64>,
    /// Increment variance per mode.
    variance: Vec<f64>,
    /// Mode-major increments: `data[k * steps + j]`.
    data: Vec<f64>,
}

impl NoiseTape {
    /// Draw a full tape: `steps` fine increments for every retained mode.
    pub fn generate(
        spec: &QSpec,
        spectrum: &LaplacianSpectrum,
        steps: usize,
        dt: f64,
        key: &StreamKey,
    ) -> Result<Self> {
        if steps == 0 || !(dt > 0.0) {
            return Err(Error::Config(format!(
                "tape needs steps >= 1 and dt > 0 (got steps={steps}, dt={dt})"
            )));
        }
        let modes = spectrum.modes();
        if modes.saturating_mul(steps) > TAPE_ENTRY_CAP {
            return Err(Error::Resource(format!(
                "tape of {modes} x {steps} entries exceeds the cap of {TAPE_ENTRY_CAP}"
            )));
        }
        let decay: Vec<f64> = spectrum.lambda().iter().map(|&l| (-l * dt).exp()).collect();
        let variance: Vec<f64> = spectrum
            .lambda()
            .iter()
            .map(|&l| {
                let q = spec.q_value(l);
                if l == 0.0 {
                    q * dt
                } else {
                    q * (-(-2.0 * l * dt).exp_m1()) / (2.0 * l)
                }
            })
            .collect();

        let mut rng = key.rng();
        let mut data = vec![0.0f64; modes * steps];
        for (k, row) in data.chunks_mut(steps).enumerate() {
            let sigma = variance[k].sqrt();
            for g in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *g = sigma * z;
            }
        }
        Ok(Self { modes, steps, dt, seed: key.seed, sample: key.sample, decay, variance, data })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.variance[k]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.steps..(k + 1) * self.steps]
    }

    /// Convolution increment over the coarse step `n` of width `m * dt`.
    ///
    /// For `m = 1` this returns the raw tape entries of fine step `n`.
    pub fn coarse_increment(&self, n: usize, m: usize, out: &mut SpectralField) -> Result<()> {
        if m == 0 || !self.steps.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "coarsening factor {m} does not divide the tape resolution {}",
                self.steps
            )));
        }
        let start = n * m;
        if start + m > self.steps {
            return Err(Error::Config(format!(
                "coarse step {n} at factor {m} runs past the tape ({} fine steps)",
                self.steps
            )));
        }
        if out.coeffs.len() != self.modes {
            return Err(Error::Config("increment buffer has the wrong mode count".into()));
        }
        for (k, c) in out.coeffs.iter_mut().enumerate() {
            let row = &self.data[k * self.steps + start..k * self.steps + start + m];
            let d = self.decay[k];
            let mut acc = 0.0;
            for &g in row {
                acc = acc * d + g;
            }
            *c = acc;
        }
        Ok(())
    }

    /// Dump as a self-contained CSV fixture. Floats are written in Rust's
    /// shortest round-trip format, so a read-back is bit-exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "modes,steps,dt,seed,sample")?;
        writeln!(w, "{},{},{},{},{}", self.modes, self.steps, self.dt, self.seed, self.sample)?;
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "decay,{}", join(&self.decay))?;
        writeln!(w, "var,{}", join(&self.variance))?;
        for k in 0..self.modes {
            writeln!(w, "g,{}", join(self.row(k)))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("tape file ended before {what}")))?
                .map_err(Error::Io)
        };
        let header = next("header")?;
        if header.trim() != "modes,steps,dt,seed,sample" {
            return Err(Error::Parse("unrecognized tape header".into()));
        }
        let meta = next("metadata")?;
        let fields: Vec<&str> = meta.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse("tape metadata needs 5 fields".into()));
        }
        let modes: usize = parse(fields[0], "modes")?;
        let steps: usize = parse(fields[1], "steps")?;
        let dt: f64 = parse(fields[2], "dt")?;
        let seed: u64 = parse(fields[3], "seed")?;
        let sample: u64 = parse(fields[4], "sample")?;

        let decay = parse_row(&next("decay row")?, "decay", modes)?;
        let variance = parse_row(&next("var row")?, "var", modes)?;
        let mut data = Vec::with_capacity(modes * steps);
        for k in 0..modes {
            let row = parse_row(&next(&format!("g row {k}"))?, "g", steps)?;
            data.extend_from_slice(&row);
        }
        Ok(Self { modes, steps, dt, seed, sample, decay, variance, data })
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad {what} field: {s:?}")))
}

fn parse_row(line: &str, tag: &str, len: usize) -> Result<Vec<f64>> {
    let mut it = line.trim().split(',');
    match it.next() {
        Some(t) if t == tag => {}
        other => return Err(Error::Parse(format!("expected row tag {tag:?}, got {other:?}"))),
    }
    let row: Vec<f64> = it.map(|s| parse(s, tag)).collect::<Result<_>>()?;
    if row.len() != len {
        return Err(Error::Parse(format!("{tag} row has {} entries, expected {len}", row.len())));
    }
    Ok(row)
}
