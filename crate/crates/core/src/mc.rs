//! Coupled Monte Carlo estimation of strong errors, and statistical probes
//! of moment and exponential-integrability bounds.
//!
//! Strong errors are estimated by self-refinement: the same scheme is run
//! once per sample at a fine reference step `dt_ref` and once per coarse
//! step, all driven by one [`NoiseTape`], so the pathwise difference at
//! shared grid times is exactly the temporal discretization error. The
//! `L^p(Ω)` moment is the plug-in p-th root of the sample mean of `err^p`,
//! with a delta-method standard error.
//!
//! Samples are independent tasks; results are reduced in sample order, so
//! every estimate is reproducible from its seed regardless of thread count.
//! Divergent samples are excluded and counted; more than 1% of them aborts
//! the experiment, since the stable schemes should never diverge at sane
//! parameters and silent exclusion would mask bugs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::noise::{NoiseTape, StreamKey, StreamPurpose};
use crate::scheme::{self, RecordSpec, SchemeConfig};
use crate::spectral::{NormKind, SineSpace, SpectralField};
use crate::{Error, Result};

/// Spatial norm of the pathwise error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormChoice {
    L2,
    Lq { q: u32 },
    Sup,
}

impl NormChoice {
    fn exponent(&self) -> u32 {
        match *self {
            NormChoice::L2 | NormChoice::Sup => 2,
            NormChoice::Lq { q } => q,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            NormChoice::L2 => "l2".into(),
            NormChoice::Lq { q } => format!("l{q}"),
            NormChoice::Sup => "sup".into(),
        }
    }
}

/// Aggregation of the error over the coarse grid times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeAgg {
    /// Error at the final time only.
    Endpoint,
    /// Pathwise sup over all coarse grid times (endpoint included).
    GridSup,
}

impl TimeAgg {
    pub fn label(&self) -> &'static str {
        match self {
            TimeAgg::Endpoint => "endpoint",
            TimeAgg::GridSup => "grid-sup",
        }
    }
}

/// What to estimate: which norm, which time aggregation, which Ω-moment, and
/// how many Monte Carlo samples.
#[derive(Debug, Clone, Copy)]
pub struct ErrorSpec {
    pub norm: NormChoice,
    pub agg: TimeAgg,
    pub moment_p: u32,
    pub samples: usize,
}

impl ErrorSpec {
    pub fn validate(&self) -> Result<()> {
        let q = self.norm.exponent();
        crate::spectral::check_even_exponent(q)?;
        if self.moment_p < q {
            return Err(Error::Config(format!(
                "moment order p = {} must be >= the norm exponent q = {q}",
                self.moment_p
            )));
        }
        if self.samples < 2 {
            return Err(Error::Config("need at least 2 Monte Carlo samples".into()));
        }
        Ok(())
    }
}

/// Estimated error at one step size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DtError {
    pub dt: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub divergent: usize,
}

const DIVERGENCE_BUDGET: f64 = 0.01;

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Plug-in estimate of `E[err^p]^{1/p}` with delta-method standard error.
fn moment_estimate(errs: &[f64], p: u32) -> (f64, f64) {
    let powered: Vec<f64> = errs.iter().map(|e| e.powi(p as i32)).collect();
    let (m, sd) = mean_and_sd(&powered);
    let est = m.powf(1.0 / p as f64);
    let se_mean = sd / (powered.len() as f64).sqrt();
    let stderr = if m > 0.0 {
        est / (p as f64 * m) * se_mean
    } else {
        0.0
    };
    (est, stderr)
}

fn spatial_error(
    space: &SineSpace,
    a: &SpectralField,
    b: &SpectralField,
    norm: NormChoice,
) -> Result<f64> {
    match norm {
        NormChoice::L2 => Ok(a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        NormChoice::Lq { q } => {
            let diff = SpectralField {
                coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect(),
            };
            space.norm_spectral(&diff, NormKind::Lq(q))
        }
        NormChoice::Sup => {
            let diff = SpectralField {
                coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect(),
            };
            space.norm_spectral(&diff, NormKind::Sup)
        }
    }
}

/// Layout of one coupled refinement family.
struct CoupleLayout {
    n_fine: usize,
    /// Coarsening factor of each requested step relative to `dt_ref`.
    factors: Vec<usize>,
    /// Smallest factor: the reference is stored at this fine-step stride.
    stride: usize,
}

fn couple_layout(base: &SchemeConfig, dts: &[f64], dt_ref: f64) -> Result<CoupleLayout> {
    if dts.is_empty() {
        return Err(Error::Config("dts must not be empty".into()));
    }
    if dts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("dts must be strictly decreasing".into()));
    }
    if !(dt_ref > 0.0) {
        return Err(Error::Config(format!("dt_ref must be positive, got {dt_ref}")));
    }
    let n_fine_f = base.horizon / dt_ref;
    let n_fine = n_fine_f.round() as usize;
    if n_fine == 0 || (n_fine as f64 * dt_ref - base.horizon).abs() > 1e-9 * base.horizon {
        return Err(Error::Config(format!(
            "dt_ref = {dt_ref} does not divide the horizon {}",
            base.horizon
        )));
    }
    let mut factors = Vec::with_capacity(dts.len());
    for &dt in dts {
        let m = (dt / dt_ref).round() as usize;
        if m == 0 || (m as f64 * dt_ref - dt).abs() > 1e-12 * dt {
            return Err(Error::Config(format!("dt_ref = {dt_ref} does not divide dt = {dt}")));
        }
        if m < 8 {
            return Err(Error::Config(format!(
                "dt_ref = {dt_ref} must be at most dt/8 for dt = {dt}"
            )));
        }
        factors.push(m);
    }
    let stride = *factors.iter().min().unwrap();
    for &m in &factors {
        if !m.is_multiple_of(stride) {
            return Err(Error::Config(
                "coarse steps must be nested multiples of the smallest step".into(),
            ));
        }
    }
    Ok(CoupleLayout { n_fine, factors, stride })
}

/// Pathwise error of every requested coarse step against the fine reference,
/// for one sample. `None` marks a divergent (coarse or reference) run.
fn couple_one_sample(
    space: &SineSpace,
    base: &SchemeConfig,
    dts: &[f64],
    dt_ref: f64,
    layout: &CoupleLayout,
    espec: &ErrorSpec,
    seed: u64,
    sample: u64,
) -> Result<Vec<Option<f64>>> {
    let key = StreamKey::new(seed, sample, StreamPurpose::Tape);
    let spectrum = space.spectrum().clone();
    let tape = NoiseTape::generate(&base.qspec, &spectrum, layout.n_fine, dt_ref, &key)?;

    let fine_config = SchemeConfig { dt: dt_ref, ..base.clone() };
    let n_slots = layout.n_fine / layout.stride + 1;
    let mut slots: Vec<SpectralField> = Vec::with_capacity(n_slots);
    let stride = layout.stride;
    let rec = scheme::run_with_observer(
        space,
        &fine_config,
        &tape,
        &RecordSpec { every: 0, keep_states: false },
        |n, _, c, _| {
            if n % stride == 0 {
                slots.push(c.clone());
            }
        },
    )?;
    if rec.divergence.is_some() {
        return Ok(vec![None; dts.len()]);
    }

    let mut out = Vec::with_capacity(dts.len());
    for (&dt, &m) in dts.iter().zip(&layout.factors) {
        let coarse_config = SchemeConfig { dt, ..base.clone() };
        let slot_stride = m / layout.stride;
        let n_coarse = coarse_config.steps();
        let mut agg = 0.0f64;
        let mut agg_err: Option<Error> = None;
        let rec = scheme::run_with_observer(
            space,
            &coarse_config,
            &tape,
            &RecordSpec { every: 0, keep_states: false },
            |n, _, c, _| {
                if agg_err.is_some() {
                    return;
                }
                let take = match espec.agg {
                    TimeAgg::Endpoint => n == n_coarse,
                    TimeAgg::GridSup => true,
                };
                if take {
                    match spatial_error(space, c, &slots[n * slot_stride], espec.norm) {
                        Ok(e) => agg = agg.max(e),
                        Err(e) => agg_err = Some(e),
                    }
                }
            },
        )?;
        if let Some(e) = agg_err {
            return Err(e);
        }
        out.push(if rec.divergence.is_some() { None } else { Some(agg) });
    }
    Ok(out)
}

/// Strong-error estimates for a family of coarse steps against one fine
/// reference, sharing tapes across the whole family.
pub fn coupled_strong_errors(
    space: &SineSpace,
    base: &SchemeConfig,
    dts: &[f64],
    dt_ref: f64,
    espec: &ErrorSpec,
    seed: u64,
) -> Result<Vec<DtError>> {
    espec.validate()?;
    SchemeConfig { dt: dt_ref, ..base.clone() }.validate()?;
    for &dt in dts {
        SchemeConfig { dt, ..base.clone() }.validate()?;
    }
    let layout = couple_layout(base, dts, dt_ref)?;

    let per_sample: Vec<Vec<Option<f64>>> = (0..espec.samples as u64)
        .into_par_iter()
        .map(|s| couple_one_sample(space, base, dts, dt_ref, &layout, espec, seed, s))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(dts.len());
    for (i, &dt) in dts.iter().enumerate() {
        let errs: Vec<f64> = per_sample.iter().filter_map(|v| v[i]).collect();
        let divergent = espec.samples - errs.len();
        if (divergent as f64) > DIVERGENCE_BUDGET * espec.samples as f64 {
            return Err(Error::Experiment(format!(
                "{divergent} of {} samples diverged at dt = {dt}",
                espec.samples
            )));
        }
        let (estimate, stderr) = moment_estimate(&errs, espec.moment_p);
        rows.push(DtError { dt, estimate, stderr, divergent });
    }
    Ok(rows)
}

/// Strong error of a single coarse step size; `config.dt` is the coarse step.
pub fn strong_error(
    space: &SineSpace,
    config: &SchemeConfig,
    dt_ref: f64,
    espec: &ErrorSpec,
    seed: u64,
) -> Result<(f64, f64)> {
    let rows = coupled_strong_errors(space, config, &[config.dt], dt_ref, espec, seed)?;
    Ok((rows[0].estimate, rows[0].stderr))
}

/// Error estimate at one coarse grid time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeError {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Per-time error profile of one coarse step against the fine reference:
/// the `L^p(Ω)` moment of the spatial error at every coarse grid time.
/// `config.dt` is the coarse step; the aggregation in `espec` is ignored.
pub fn error_profile(
    space: &SineSpace,
    config: &SchemeConfig,
    dt_ref: f64,
    espec: &ErrorSpec,
    seed: u64,
) -> Result<Vec<TimeError>> {
    espec.validate()?;
    config.validate()?;
    SchemeConfig { dt: dt_ref, ..config.clone() }.validate()?;
    let layout = couple_layout(config, &[config.dt], dt_ref)?;
    let m = layout.factors[0];
    let n_coarse = config.steps();

    let per_sample: Vec<Option<Vec<f64>>> = (0..espec.samples as u64)
        .into_par_iter()
        .map(|s| -> Result<Option<Vec<f64>>> {
            let key = StreamKey::new(seed, s, StreamPurpose::Tape);
            let tape =
                NoiseTape::generate(&config.qspec, space.spectrum(), layout.n_fine, dt_ref, &key)?;
            let fine_config = SchemeConfig { dt: dt_ref, ..config.clone() };
            let mut slots: Vec<SpectralField> = Vec::with_capacity(n_coarse + 1);
            let rec = scheme::run_with_observer(
                space,
                &fine_config,
                &tape,
                &RecordSpec { every: 0, keep_states: false },
                |n, _, c, _| {
                    if n.is_multiple_of(m) {
                        slots.push(c.clone());
                    }
                },
            )?;
            if rec.divergence.is_some() {
                return Ok(None);
            }
            let mut errs = vec![0.0f64; n_coarse + 1];
            let mut obs_err: Option<Error> = None;
            let rec = scheme::run_with_observer(
                space,
                config,
                &tape,
                &RecordSpec { every: 0, keep_states: false },
                |n, _, c, _| {
                    if obs_err.is_some() {
                        return;
                    }
                    match spatial_error(space, c, &slots[n], espec.norm) {
                        Ok(e) => errs[n] = e,
                        Err(e) => obs_err = Some(e),
                    }
                },
            )?;
            if let Some(e) = obs_err {
                return Err(e);
            }
            Ok(if rec.divergence.is_some() { None } else { Some(errs) })
        })
        .collect::<Result<_>>()?;

    let kept: Vec<&Vec<f64>> = per_sample.iter().flatten().collect();
    let divergent = espec.samples - kept.len();
    if (divergent as f64) > DIVERGENCE_BUDGET * espec.samples as f64 {
        return Err(Error::Experiment(format!(
            "{divergent} of {} samples diverged",
            espec.samples
        )));
    }
    Ok((0..=n_coarse)
        .map(|n| {
            let errs: Vec<f64> = kept.iter().map(|v| v[n]).collect();
            let (estimate, stderr) = moment_estimate(&errs, espec.moment_p);
            TimeError { t: n as f64 * config.dt, estimate, stderr }
        })
        .collect())
}

/// Pathwise functionals probing the a priori moment bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MomentFunctional {
    /// `sup_n ‖X_n‖_{L^q}^p`
    SupLqPow { q: u32, p: u32 },
    /// `sup_n ‖X_n‖_{H^1}^2`
    SupH1Sq,
    /// `∫_0^T ‖X‖_{H^2}^2 dt`, trapezoid over grid times.
    IntH2Sq,
    /// `sup_n ‖X_n‖_{H^2}^p`
    SupH2Pow { p: u32 },
}

impl MomentFunctional {
    pub fn label(&self) -> String {
        match *self {
            MomentFunctional::SupLqPow { q, p } => format!("sup-l{q}^{p}"),
            MomentFunctional::SupH1Sq => "sup-h1^2".into(),
            MomentFunctional::IntH2Sq => "int-h2^2".into(),
            MomentFunctional::SupH2Pow { p } => format!("sup-h2^{p}"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MomentFunctional::SupLqPow { q, p } => {
                crate::spectral::check_even_exponent(q)?;
                if p < q {
                    return Err(Error::Config(format!("need p >= q in sup-l{q}^{p}")));
                }
            }
            MomentFunctional::SupH2Pow { p } if p < 2 => {
                return Err(Error::Config("need p >= 2 in the H2 moment".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeEstimate {
    pub label: String,
    pub mean: f64,
    pub stderr: f64,
    pub divergent: usize,
}

enum Acc {
    SupLq { q: u32, p: u32, sup: f64 },
    SupH1 { sup: f64 },
    IntH2 { sum: f64, first: f64, last: f64 },
    SupH2 { p: u32, sup: f64 },
}

impl Acc {
    fn new(f: &MomentFunctional) -> Self {
        match *f {
            MomentFunctional::SupLqPow { q, p } => Acc::SupLq { q, p, sup: 0.0 },
            MomentFunctional::SupH1Sq => Acc::SupH1 { sup: 0.0 },
            MomentFunctional::IntH2Sq => Acc::IntH2 { sum: 0.0, first: f64::NAN, last: 0.0 },
            MomentFunctional::SupH2Pow { p } => Acc::SupH2 { p, sup: 0.0 },
        }
    }

    fn finalize(&self, dt: f64) -> f64 {
        match *self {
            Acc::SupLq { p, sup, .. } => sup.powi(p as i32),
            Acc::SupH1 { sup } => sup,
            Acc::IntH2 { sum, first, last } => {
                if first.is_nan() {
                    0.0
                } else {
                    dt * (sum - 0.5 * first - 0.5 * last)
                }
            }
            Acc::SupH2 { p, sup } => sup.sqrt().powi(p as i32),
        }
    }
}

/// Monte Carlo means of pathwise moment functionals.
pub fn moment_probe(
    space: &SineSpace,
    config: &SchemeConfig,
    functionals: &[MomentFunctional],
    samples: usize,
    seed: u64,
) -> Result<Vec<ProbeEstimate>> {
    config.validate()?;
    if functionals.is_empty() {
        return Err(Error::Config("no functionals requested".into()));
    }
    for f in functionals {
        f.validate()?;
    }
    if samples < 2 {
        return Err(Error::Config("need at least 2 Monte Carlo samples".into()));
    }

    let per_sample: Vec<Option<Vec<f64>>> = (0..samples as u64)
        .into_par_iter()
        .map(|s| -> Result<Option<Vec<f64>>> {
            let key = StreamKey::new(seed, s, StreamPurpose::Tape);
            let tape = NoiseTape::generate(
                &config.qspec,
                space.spectrum(),
                config.steps().max(1),
                if config.steps() == 0 { 1.0 } else { config.dt },
                &key,
            )?;
            let mut accs: Vec<Acc> = functionals.iter().map(Acc::new).collect();
            let lambda = space.lambda().to_vec();
            let h = 1.0 / (space.modes() as f64 + 1.0);
            let rec = scheme::run_with_observer(
                space,
                config,
                &tape,
                &RecordSpec { every: 0, keep_states: false },
                |_, _, c, g| {
                    let h1sq: f64 =
                        c.coeffs.iter().zip(&lambda).map(|(x, l)| x * x * l).sum();
                    let h2sq: f64 =
                        c.coeffs.iter().zip(&lambda).map(|(x, l)| x * x * l * l).sum();
                    for acc in &mut accs {
                        match acc {
                            Acc::SupLq { q, sup, .. } => {
                                let sum: f64 =
                                    g.values.iter().map(|v| v.powi(*q as i32)).sum();
                                *sup = sup.max((sum * h).powf(1.0 / *q as f64));
                            }
                            Acc::SupH1 { sup } => *sup = sup.max(h1sq),
                            Acc::IntH2 { sum, first, last } => {
                                *sum += h2sq;
                                if first.is_nan() {
                                    *first = h2sq;
                                }
                                *last = h2sq;
                            }
                            Acc::SupH2 { sup, .. } => *sup = sup.max(h2sq),
                        }
                    }
                },
            )?;
            if rec.divergence.is_some() {
                return Ok(None);
            }
            Ok(Some(accs.iter().map(|a| a.finalize(config.dt)).collect()))
        })
        .collect::<Result<_>>()?;

    let kept: Vec<&Vec<f64>> = per_sample.iter().flatten().collect();
    let divergent = samples - kept.len();
    if (divergent as f64) > DIVERGENCE_BUDGET * samples as f64 {
        return Err(Error::Experiment(format!("{divergent} of {samples} samples diverged")));
    }
    Ok(functionals
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let xs: Vec<f64> = kept.iter().map(|v| v[i]).collect();
            let (mean, sd) = mean_and_sd(&xs);
            ProbeEstimate {
                label: f.label(),
                mean,
                stderr: sd / (xs.len() as f64).sqrt(),
                divergent,
            }
        })
        .collect())
}

/// Which process the exponential functional integrates over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "kebab-case")]
pub enum ExpTarget {
    /// Left-endpoint rule over the scheme's grid states.
    GridStates,
    /// Left-endpoint rule over the piecewise-flow interpolant, sub-sampled
    /// at `substeps` offsets per step.
    Interpolant { substeps: usize },
}

impl ExpTarget {
    pub fn label(&self) -> String {
        match *self {
            ExpTarget::GridStates => "grid-states".into(),
            ExpTarget::Interpolant { substeps } => format!("interpolant(substeps={substeps})"),
        }
    }
}

/// Exponent above which `exp` is treated as a tail event rather than a value.
const EXP_TAIL_THRESHOLD: f64 = 700.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpProbe {
    /// Mean of `exp(c ∫ ‖·‖_sup² dt)` over non-tail samples.
    pub estimate: f64,
    pub stderr: f64,
    /// Samples whose exponent overflowed `exp`.
    pub tail_count: usize,
    /// Largest exponent observed across all samples.
    pub max_exponent: f64,
    pub divergent: usize,
}

/// Estimate `E[exp(c ∫_0^T ‖·‖_sup² dt)]` for the grid states or the
/// flow interpolant. Overflowing exponents are counted as tail events.
///
/// Requires noise with `‖(-Δ)^{1/2}Q‖` finite (diagonal with `gamma >= 2`,
/// or no noise at all); rougher noise voids the integrability being probed.
pub fn exp_integrability_probe(
    space: &SineSpace,
    config: &SchemeConfig,
    c: f64,
    target: ExpTarget,
    samples: usize,
    seed: u64,
) -> Result<ExpProbe> {
    config.validate()?;
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::Domain(format!("exponent scale must be finite and >= 0, got {c}")));
    }
    match config.qspec {
        crate::noise::QSpec::Diagonal { scale: 0.0, .. } => {}
        crate::noise::QSpec::Diagonal { gamma, .. } if gamma >= 2.0 => {}
        _ => {
            return Err(Error::Domain(
                "exponential-integrability probe needs smooth noise (diagonal with gamma >= 2) \
                 or zero noise"
                    .into(),
            ))
        }
    }
    if samples < 2 {
        return Err(Error::Config("need at least 2 Monte Carlo samples".into()));
    }
    let substeps = match target {
        ExpTarget::GridStates => 1,
        ExpTarget::Interpolant { substeps } => {
            if substeps == 0 {
                return Err(Error::Config("interpolant sub-sampling needs substeps >= 1".into()));
            }
            substeps
        }
    };

    let n_steps = config.steps();
    let exponents: Vec<Option<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|s| -> Result<Option<f64>> {
            let key = StreamKey::new(seed, s, StreamPurpose::Tape);
            let tape = NoiseTape::generate(
                &config.qspec,
                space.spectrum(),
                n_steps.max(1),
                if n_steps == 0 { 1.0 } else { config.dt },
                &key,
            )?;
            let mut integral = 0.0f64;
            let mut obs_err: Option<Error> = None;
            let sub_dt = config.dt / substeps as f64;
            let rec = scheme::run_with_observer(
                space,
                config,
                &tape,
                &RecordSpec { every: 0, keep_states: false },
                |n, _, _, g| {
                    if n == n_steps || obs_err.is_some() {
                        return;
                    }
                    let sup0 = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    integral += sub_dt * sup0 * sup0;
                    for i in 1..substeps {
                        let tau = i as f64 * sub_dt;
                        match crate::flow::apply_phi(g, tau) {
                            Ok(z) => {
                                let sup = z.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                                integral += sub_dt * sup * sup;
                            }
                            Err(e) => obs_err = Some(e),
                        }
                    }
                },
            )?;
            if let Some(e) = obs_err {
                return Err(e);
            }
            if rec.divergence.is_some() {
                return Ok(None);
            }
            Ok(Some(c * integral))
        })
        .collect::<Result<_>>()?;

    let kept: Vec<f64> = exponents.iter().flatten().copied().collect();
    let divergent = samples - kept.len();
    if (divergent as f64) > DIVERGENCE_BUDGET * samples as f64 {
        return Err(Error::Experiment(format!("{divergent} of {samples} samples diverged")));
    }
    let max_exponent = kept.iter().fold(0.0f64, |m, &e| m.max(e));
    let values: Vec<f64> =
        kept.iter().filter(|&&e| e <= EXP_TAIL_THRESHOLD).map(|&e| e.exp()).collect();
    let tail_count = kept.len() - values.len();
    let (mean, sd) = if values.is_empty() {
        (f64::INFINITY, 0.0)
    } else {
        mean_and_sd(&values)
    };
    Ok(ExpProbe {
        estimate: mean,
        stderr: if values.is_empty() { 0.0 } else { sd / (values.len() as f64).sqrt() },
        tail_count,
        max_exponent,
        divergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowParams;
    use crate::noise::QSpec;
    use crate::scheme::{InitialProfile, SchemeKind};
    use approx::assert_relative_eq;

    fn small_config(qspec: QSpec) -> SchemeConfig {
        SchemeConfig {
            scheme: SchemeKind::Splitting,
            modes: 16,
            dt: 1.0 / 32.0,
            horizon: 0.25,
            qspec,
            init: InitialProfile::Sine { mode: 1, amplitude: 1.0 },
            flow: FlowParams::default(),
        }
    }

    #[test]
    fn error_spec_validation() {
        let ok = ErrorSpec { norm: NormChoice::L2, agg: TimeAgg::Endpoint, moment_p: 2, samples: 4 };
        assert!(ok.validate().is_ok());
        let bad_p =
            ErrorSpec { norm: NormChoice::Lq { q: 4 }, agg: TimeAgg::Endpoint, moment_p: 2, samples: 4 };
        assert!(bad_p.validate().is_err());
        let odd_q =
            ErrorSpec { norm: NormChoice::Lq { q: 3 }, agg: TimeAgg::Endpoint, moment_p: 4, samples: 4 };
        assert!(odd_q.validate().is_err());
    }

    #[test]
    fn margin_between_reference_and_coarse_is_enforced() {
        let space = SineSpace::new(16);
        let config = small_config(QSpec::White);
        let espec =
            ErrorSpec { norm: NormChoice::L2, agg: TimeAgg::Endpoint, moment_p: 2, samples: 2 };
        // dt_ref = dt/4 violates the minimum refinement margin of 8.
        let err = strong_error(&space, &config, config.dt / 4.0, &espec, 1);
        assert!(matches!(err, Err(Error::Config(_))));
        // Non-divisor dt_ref is also rejected.
        let err = strong_error(&space, &config, config.dt / 9.5, &espec, 1);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn identical_coupled_paths_have_zero_error() {
        // Two runs of one scheme on one tape are bitwise identical, so the
        // coupled error at equal steps vanishes.
        let space = SineSpace::new(16);
        let config = small_config(QSpec::White);
        let spectrum = space.spectrum().clone();
        let tape = NoiseTape::generate(
            &config.qspec,
            &spectrum,
            config.steps(),
            config.dt,
            &StreamKey::new(5, 0, StreamPurpose::Tape),
        )
        .unwrap();
        let a = scheme::run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).unwrap();
        let b = scheme::run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).unwrap();
        assert_eq!(a.states.last().unwrap().coeffs, b.states.last().unwrap().coeffs);
    }

    #[test]
    fn deterministic_scalar_problem_converges_at_order_one() {
        // Zero noise: the coupled error against a fine reference is the
        // deterministic splitting error, which halves with the step.
        let space = SineSpace::new(1);
        let base = SchemeConfig {
            modes: 1,
            horizon: 0.5,
            qspec: QSpec::Diagonal { gamma: 0.0, scale: 0.0 },
            init: InitialProfile::Sine { mode: 1, amplitude: 0.5 },
            ..small_config(QSpec::White)
        };
        let dts = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let espec =
            ErrorSpec { norm: NormChoice::L2, agg: TimeAgg::Endpoint, moment_p: 2, samples: 2 };
        let rows =
            coupled_strong_errors(&space, &base, &dts, 1.0 / 4096.0, &espec, 9).unwrap();
        assert!(rows[0].estimate > 0.0);
        let r1 = rows[0].estimate / rows[1].estimate;
        let r2 = rows[1].estimate / rows[2].estimate;
        assert!((r1 - 2.0).abs() < 0.3, "halving ratio {r1}");
        assert!((r2 - 2.0).abs() < 0.3, "halving ratio {r2}");
        // Deterministic problem: zero Monte Carlo spread.
        assert!(rows[0].stderr < 1e-14);
    }

    #[test]
    fn estimates_are_reproducible_across_calls() {
        let space = SineSpace::new(16);
        let base = small_config(QSpec::White);
        let dts = [1.0 / 32.0, 1.0 / 64.0];
        let espec =
            ErrorSpec { norm: NormChoice::L2, agg: TimeAgg::GridSup, moment_p: 2, samples: 6 };
        let a = coupled_strong_errors(&space, &base, &dts, 1.0 / 1024.0, &espec, 33).unwrap();
        let b = coupled_strong_errors(&space, &base, &dts, 1.0 / 1024.0, &espec, 33).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.estimate, y.estimate);
            assert_eq!(x.stderr, y.stderr);
        }
    }

    #[test]
    fn refinement_shrinks_the_coupled_error() {
        let space = SineSpace::new(16);
        let base = small_config(QSpec::White);
        let dts = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let espec =
            ErrorSpec { norm: NormChoice::L2, agg: TimeAgg::GridSup, moment_p: 2, samples: 8 };
        let rows = coupled_strong_errors(&space, &base, &dts, 1.0 / 2048.0, &espec, 7).unwrap();
        assert!(rows[0].estimate > rows[1].estimate);
        assert!(rows[1].estimate > rows[2].estimate);
    }

    #[test]
    fn error_profile_starts_at_zero_and_matches_the_endpoint_estimate() {
        let space = SineSpace::new(16);
        let config = SchemeConfig { dt: 1.0 / 32.0, ..small_config(QSpec::White) };
        let espec =
            ErrorSpec { norm: NormChoice::L2, agg: TimeAgg::Endpoint, moment_p: 2, samples: 6 };
        let profile = error_profile(&space, &config, 1.0 / 1024.0, &espec, 21).unwrap();
        assert_eq!(profile.len(), config.steps() + 1);
        assert_eq!(profile[0].t, 0.0);
        assert_eq!(profile[0].estimate, 0.0);
        assert!(profile.last().unwrap().estimate > 0.0);

        let (endpoint, _) = strong_error(&space, &config, 1.0 / 1024.0, &espec, 21).unwrap();
        assert_relative_eq!(profile.last().unwrap().estimate, endpoint, max_relative = 1e-12);
    }

    #[test]
    fn probes_vanish_for_zero_data_and_zero_noise() {
        let space = SineSpace::new(8);
        let config = SchemeConfig {
            modes: 8,
            init: InitialProfile::Zero,
            qspec: QSpec::Diagonal { gamma: 0.0, scale: 0.0 },
            ..small_config(QSpec::White)
        };
        let probes = moment_probe(
            &space,
            &config,
            &[
                MomentFunctional::SupLqPow { q: 4, p: 4 },
                MomentFunctional::SupH1Sq,
                MomentFunctional::IntH2Sq,
                MomentFunctional::SupH2Pow { p: 2 },
            ],
            3,
            1,
        )
        .unwrap();
        for p in &probes {
            assert_eq!(p.mean, 0.0);
            assert_eq!(p.stderr, 0.0);
        }

        let exp = exp_integrability_probe(&space, &config, 1.0, ExpTarget::GridStates, 3, 1).unwrap();
        assert_eq!(exp.estimate, 1.0);
        assert_eq!(exp.tail_count, 0);
    }

    #[test]
    fn exp_probe_tends_to_one_as_c_vanishes() {
        let space = SineSpace::new(8);
        let config = SchemeConfig { modes: 8, ..small_config(QSpec::Diagonal { gamma: 2.0, scale: 1.0 }) };
        let probe =
            exp_integrability_probe(&space, &config, 1e-9, ExpTarget::GridStates, 4, 2).unwrap();
        assert_relative_eq!(probe.estimate, 1.0, epsilon = 1e-6);
        let zero = exp_integrability_probe(&space, &config, 0.0, ExpTarget::GridStates, 4, 2).unwrap();
        assert_eq!(zero.estimate, 1.0);
    }

    #[test]
    fn exp_probe_rejects_rough_noise() {
        let space = SineSpace::new(8);
        let config = SchemeConfig { modes: 8, ..small_config(QSpec::White) };
        let err = exp_integrability_probe(&space, &config, 1.0, ExpTarget::GridStates, 4, 2);
        assert!(matches!(err, Err(Error::Domain(_))));
        let config = SchemeConfig {
            modes: 8,
            ..small_config(QSpec::Diagonal { gamma: 1.5, scale: 1.0 })
        };
        let err = exp_integrability_probe(&space, &config, 1.0, ExpTarget::GridStates, 4, 2);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn huge_exponent_scale_reports_tail_events() {
        let space = SineSpace::new(8);
        let config = SchemeConfig { modes: 8, ..small_config(QSpec::Diagonal { gamma: 2.0, scale: 1.0 }) };
        let probe =
            exp_integrability_probe(&space, &config, 1e6, ExpTarget::GridStates, 4, 2).unwrap();
        assert!(probe.tail_count > 0);
        assert!(probe.max_exponent > EXP_TAIL_THRESHOLD);
    }

    #[test]
    fn interpolant_target_matches_grid_target_in_the_fine_limit() {
        let space = SineSpace::new(8);
        let config = SchemeConfig { modes: 8, ..small_config(QSpec::Diagonal { gamma: 2.0, scale: 0.5 }) };
        let grid =
            exp_integrability_probe(&space, &config, 1.0, ExpTarget::GridStates, 6, 3).unwrap();
        let interp = exp_integrability_probe(
            &space,
            &config,
            1.0,
            ExpTarget::Interpolant { substeps: 4 },
            6,
            3,
        )
        .unwrap();
        // Same tapes, same trajectories; the interpolant only refines the
        // time quadrature, so the estimates are close.
        assert_relative_eq!(grid.estimate, interp.estimate, max_relative = 0.05);
    }

    #[test]
    fn divergence_threshold_aborts_the_experiment() {
        let space = SineSpace::new(8);
        let config = SchemeConfig {
            modes: 8,
            scheme: SchemeKind::ExpEulerPlain,
            dt: 0.25,
            horizon: 2.0,
            init: InitialProfile::ConstantInterior { value: 50.0 },
            qspec: QSpec::Diagonal { gamma: 0.0, scale: 0.0 },
            flow: FlowParams::default(),
        };
        let err = moment_probe(&space, &config, &[MomentFunctional::SupH1Sq], 4, 1);
        assert!(matches!(err, Err(Error::Experiment(_))));
    }
}
