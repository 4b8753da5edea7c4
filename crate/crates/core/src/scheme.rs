//! One-step maps and trajectory drivers.
//!
//! The splitting step integrates the reaction exactly through the closed-form
//! flow, then the linear part plus noise exactly through the semigroup and
//! the sampled convolution increment:
//!
//! ```text
//! X_{n+1} = S(dt) Φ_dt(X_n) + ∫_{t_n}^{t_{n+1}} S(t_{n+1}-s) dW^Q(s).
//! ```
//!
//! Algebraically the same step is an exponential Euler step with modified
//! drift, `X_{n+1} = S(dt)(X_n + dt Ψ_dt(X_n)) + noise`, and both forms are
//! implemented; they agree pathwise to rounding. The plain exponential Euler
//! step keeps the raw drift `F` instead of `Ψ_dt` and serves as the unstable
//! baseline: its blow-ups are reported as data, not failures.
//!
//! State advances in spectral coefficients; the pointwise maps act on nodal
//! values, one transform round trip per step.

use serde::{Deserialize, Serialize};

use crate::flow::{self, FlowFactors, FlowParams};
use crate::noise::{NoiseTape, QSpec};
use crate::spectral::{GridField, NormKind, SineSpace, SpectralField};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Exact reaction flow composed with the exponential/noise half-step.
    Splitting,
    /// Exponential Euler on the modified-drift form; pathwise identical to
    /// `Splitting` up to rounding.
    ExpEulerAux,
    /// Exponential Euler with the raw drift; divergent for coarse steps.
    ExpEulerPlain,
}

impl SchemeKind {
    pub fn label(&self) -> &'static str {
        match self {
            SchemeKind::Splitting => "splitting",
            SchemeKind::ExpEulerAux => "exp-euler-aux",
            SchemeKind::ExpEulerPlain => "exp-euler-plain",
        }
    }
}

/// Named initial profiles, all realized as K-mode projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum InitialProfile {
    Zero,
    /// `amplitude · e_mode`, a single eigenfunction.
    Sine { mode: usize, amplitude: f64 },
    /// `amplitude · exp(-(x-1/2)²/(2 width²)) · sin(πx)`: a smooth bump that
    /// vanishes at the boundary, hence lies in H² uniformly in K.
    Bump { amplitude: f64, width: f64 },
    /// Constant value at interior nodes; the K-mode projection oscillates
    /// near the boundary (Gibbs), which is fine for blow-up demonstrations.
    ConstantInterior { value: f64 },
}

impl InitialProfile {
    pub fn realize(&self, space: &SineSpace) -> Result<SpectralField> {
        match *self {
            InitialProfile::Zero => Ok(SpectralField::zeros(space.modes())),
            InitialProfile::Sine { mode, amplitude } => {
                if mode == 0 || mode > space.modes() {
                    return Err(Error::Config(format!(
                        "sine profile mode {mode} outside 1..={}",
                        space.modes()
                    )));
                }
                let mut c = SpectralField::zeros(space.modes());
                c.coeffs[mode - 1] = amplitude;
                Ok(c)
            }
            InitialProfile::Bump { amplitude, width } => {
                if !(width > 0.0) {
                    return Err(Error::Config(format!("bump width must be positive, got {width}")));
                }
                let values = space
                    .nodes()
                    .iter()
                    .map(|&x| {
                        let arg = (x - 0.5) / width;
                        amplitude
                            * (-0.5 * arg * arg).exp()
                            * (std::f64::consts::PI * x).sin()
                    })
                    .collect();
                space.to_spectral(&GridField { values })
            }
            InitialProfile::ConstantInterior { value } => {
                let values = vec![value; space.modes()];
                space.to_spectral(&GridField { values })
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            InitialProfile::Zero => "zero".into(),
            InitialProfile::Sine { mode, amplitude } => format!("sine(mode={mode},a={amplitude})"),
            InitialProfile::Bump { amplitude, width } => format!("bump(a={amplitude},w={width})"),
            InitialProfile::ConstantInterior { value } => format!("constant({value})"),
        }
    }
}

/// Everything one trajectory needs: scheme, resolution, step, horizon, noise
/// and initial data.
#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub scheme: SchemeKind,
    pub modes: usize,
    pub dt: f64,
    pub horizon: f64,
    pub qspec: QSpec,
    pub init: InitialProfile,
    pub flow: FlowParams,
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::Config("modes must be >= 1".into()));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::Config(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        self.flow.validate_dt(self.dt)?;
        if self.horizon > 0.0 {
            if !(self.dt > 0.0) {
                return Err(Error::Config("dt must be positive for a nonzero horizon".into()));
            }
            let n = (self.horizon / self.dt).round();
            if n < 1.0 || ((n * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(1.0)) {
                return Err(Error::Config(format!(
                    "horizon {} is not an integer multiple of dt {}",
                    self.horizon, self.dt
                )));
            }
        }
        Ok(())
    }

    /// Number of steps N with `N dt = horizon`.
    pub fn steps(&self) -> usize {
        if self.horizon == 0.0 {
            0
        } else {
            (self.horizon / self.dt).round() as usize
        }
    }
}

/// First step index at which the state stopped being finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub step: usize,
}

/// Norm cache computed at recorded times.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormRow {
    pub l2: f64,
    pub l4: f64,
    pub sup: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Which grid times to keep. `every = 0` keeps only the endpoints, `every = j`
/// keeps every j-th grid time (plus start and end).
#[derive(Debug, Clone, Copy)]
pub struct RecordSpec {
    pub every: usize,
    pub keep_states: bool,
}

impl RecordSpec {
    pub fn endpoint_only() -> Self {
        Self { every: 0, keep_states: true }
    }

    pub fn norms_every(every: usize) -> Self {
        Self { every, keep_states: false }
    }

    fn wants(&self, n: usize, total: usize) -> bool {
        n == 0 || n == total || (self.every > 0 && n.is_multiple_of(self.every))
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Recorded states; empty when the record was norms-only.
    pub states: Vec<SpectralField>,
    pub norms: Vec<NormRow>,
    pub divergence: Option<DivergenceReport>,
}

fn norm_row(space: &SineSpace, c: &SpectralField, g: &GridField) -> Result<NormRow> {
    Ok(NormRow {
        l2: space.norm_spectral(c, NormKind::L2)?,
        l4: space.norm_grid(g, NormKind::Lq(4))?,
        sup: space.norm_grid(g, NormKind::Sup)?,
        h1: space.norm_spectral(c, NormKind::Sobolev(1.0))?,
        h2: space.norm_spectral(c, NormKind::Sobolev(2.0))?,
    })
}

struct StepKernel<'a> {
    space: &'a SineSpace,
    scheme: SchemeKind,
    dt: f64,
    decay: Vec<f64>,
    factors: FlowFactors,
}

impl<'a> StepKernel<'a> {
    fn new(space: &'a SineSpace, scheme: SchemeKind, dt: f64) -> Result<Self> {
        Ok(Self {
            space,
            scheme,
            dt,
            decay: space.semigroup_factors(dt)?,
            factors: FlowFactors::new(dt)?,
        })
    }

    /// One step from the state `x` with nodal image `g`, adding the supplied
    /// convolution increment.
    fn advance(&self, x: &SpectralField, g: &GridField, incr: &SpectralField) -> Result<SpectralField> {
        let mut out = match self.scheme {
            SchemeKind::Splitting => {
                let flowed = GridField {
                    values: g.values.iter().map(|&z| self.factors.phi(z)).collect(),
                };
                let mut c = self.space.to_spectral(&flowed)?;
                for (ck, &d) in c.coeffs.iter_mut().zip(&self.decay) {
                    *ck *= d;
                }
                c
            }
            SchemeKind::ExpEulerAux | SchemeKind::ExpEulerPlain => {
                let drift_vals = GridField {
                    values: g
                        .values
                        .iter()
                        .map(|&z| match self.scheme {
                            SchemeKind::ExpEulerAux => self.factors.psi(z),
                            _ => flow::drift(z),
                        })
                        .collect(),
                };
                let mut c = self.space.to_spectral(&drift_vals)?;
                for ((ck, &xk), &d) in c.coeffs.iter_mut().zip(&x.coeffs).zip(&self.decay) {
                    *ck = d * (xk + self.dt * *ck);
                }
                c
            }
        };
        for (ck, &ik) in out.coeffs.iter_mut().zip(&incr.coeffs) {
            *ck += ik;
        }
        Ok(out)
    }
}

/// Single splitting step; `incr` is the convolution increment of the step.
pub fn splitting_step(
    space: &SineSpace,
    x: &SpectralField,
    dt: f64,
    incr: &SpectralField,
) -> Result<SpectralField> {
    let kernel = StepKernel::new(space, SchemeKind::Splitting, dt)?;
    kernel.advance(x, &space.to_grid(x)?, incr)
}

/// Single exponential Euler step on the modified-drift form.
pub fn exp_euler_aux_step(
    space: &SineSpace,
    x: &SpectralField,
    dt: f64,
    incr: &SpectralField,
) -> Result<SpectralField> {
    let kernel = StepKernel::new(space, SchemeKind::ExpEulerAux, dt)?;
    kernel.advance(x, &space.to_grid(x)?, incr)
}

/// Single exponential Euler step with the raw drift (unstable baseline).
pub fn exp_euler_plain_step(
    space: &SineSpace,
    x: &SpectralField,
    dt: f64,
    incr: &SpectralField,
) -> Result<SpectralField> {
    let kernel = StepKernel::new(space, SchemeKind::ExpEulerPlain, dt)?;
    kernel.advance(x, &space.to_grid(x)?, incr)
}

/// Piecewise-flow interpolant between grid times: starting from the grid
/// state at `t_{n-1}`, the value at `t_{n-1} + tau` is `Φ_tau` applied
/// pointwise. Right-continuous at grid points by construction.
pub fn flow_interpolant(
    space: &SineSpace,
    x_prev: &SpectralField,
    tau: f64,
    dt: f64,
) -> Result<GridField> {
    if !(tau >= 0.0 && tau < dt) {
        return Err(Error::Domain(format!("interpolation offset {tau} outside [0, {dt})")));
    }
    flow::apply_phi(&space.to_grid(x_prev)?, tau)
}

/// Drive a full trajectory, calling `observer(n, t_n, state, nodal image)` at
/// every grid time including 0 and N. Returns the requested record; a
/// non-finite state stops the run and is reported in `divergence`.
pub fn run_with_observer<F>(
    space: &SineSpace,
    config: &SchemeConfig,
    tape: &NoiseTape,
    record: &RecordSpec,
    mut observer: F,
) -> Result<TrajectoryRecord>
where
    F: FnMut(usize, f64, &SpectralField, &GridField),
{
    config.validate()?;
    if space.modes() != config.modes {
        return Err(Error::Config(format!(
            "space has {} modes, config wants {}",
            space.modes(),
            config.modes
        )));
    }
    if tape.modes() != config.modes {
        return Err(Error::Config("tape mode count does not match the configuration".into()));
    }
    let n_steps = config.steps();
    let mut m = 1usize;
    if n_steps > 0 {
        let ratio = config.dt / tape.dt();
        m = ratio.round() as usize;
        if m == 0 || (m as f64 * tape.dt() - config.dt).abs() > 1e-12 * config.dt {
            return Err(Error::Config(format!(
                "scheme step {} is not an integer multiple of the tape step {}",
                config.dt,
                tape.dt()
            )));
        }
        if !tape.steps().is_multiple_of(m) || tape.steps() / m < n_steps {
            return Err(Error::Config(format!(
                "tape with {} fine steps cannot drive {} coarse steps at factor {m}",
                tape.steps(),
                n_steps
            )));
        }
    }

    let kernel = StepKernel::new(space, config.scheme, config.dt)?;
    let mut x = config.init.realize(space)?;
    let mut incr = SpectralField::zeros(config.modes);

    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        states: Vec::new(),
        norms: Vec::new(),
        divergence: None,
    };
    let push = |rec: &mut TrajectoryRecord, n: usize, c: &SpectralField, g: &GridField| -> Result<()> {
        if record.wants(n, n_steps) {
            rec.times.push(n as f64 * config.dt);
            if record.keep_states {
                rec.states.push(c.clone());
            }
            rec.norms.push(norm_row(space, c, g)?);
        }
        Ok(())
    };

    for n in 0..n_steps {
        if !x.is_finite() {
            rec.divergence = Some(DivergenceReport { step: n });
            return Ok(rec);
        }
        let g = space.to_grid(&x)?;
        observer(n, n as f64 * config.dt, &x, &g);
        push(&mut rec, n, &x, &g)?;
        tape.coarse_increment(n, m, &mut incr)?;
        x = kernel.advance(&x, &g, &incr)?;
    }
    if !x.is_finite() {
        rec.divergence = Some(DivergenceReport { step: n_steps });
        return Ok(rec);
    }
    let g = space.to_grid(&x)?;
    observer(n_steps, config.horizon, &x, &g);
    push(&mut rec, n_steps, &x, &g)?;
    Ok(rec)
}

/// [`run_with_observer`] without the callback.
pub fn run_trajectory(
    space: &SineSpace,
    config: &SchemeConfig,
    tape: &NoiseTape,
    record: &RecordSpec,
) -> Result<TrajectoryRecord> {
    run_with_observer(space, config, tape, record, |_, _, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{StreamKey, StreamPurpose};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn zero_noise() -> QSpec {
        QSpec::Diagonal { gamma: 0.0, scale: 0.0 }
    }

    fn tape_for(config: &SchemeConfig, seed: u64, sample: u64) -> NoiseTape {
        let spectrum = crate::spectral::LaplacianSpectrum::dirichlet(config.modes);
        NoiseTape::generate(
            &config.qspec,
            &spectrum,
            config.steps().max(1),
            if config.steps() == 0 { 1.0 } else { config.dt },
            &StreamKey::new(seed, sample, StreamPurpose::Tape),
        )
        .unwrap()
    }

    fn base_config(scheme: SchemeKind, modes: usize, dt: f64, horizon: f64) -> SchemeConfig {
        SchemeConfig {
            scheme,
            modes,
            dt,
            horizon,
            qspec: zero_noise(),
            init: InitialProfile::Zero,
            flow: FlowParams::default(),
        }
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut c = base_config(SchemeKind::Splitting, 8, 0.3, 1.0);
        assert!(c.validate().is_err()); // 1.0/0.3 not integer
        c.dt = 0.25;
        assert!(c.validate().is_ok());
        assert_eq!(c.steps(), 4);
        c.dt = 0.6;
        assert!(c.validate().is_err()); // above dt0
        c.dt = 0.25;
        c.modes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn profiles_realize() {
        let space = SineSpace::new(16);
        let zero = InitialProfile::Zero.realize(&space).unwrap();
        assert!(zero.coeffs.iter().all(|&c| c == 0.0));

        let sine = InitialProfile::Sine { mode: 3, amplitude: 2.0 }.realize(&space).unwrap();
        assert_eq!(sine.coeffs[2], 2.0);
        assert!(InitialProfile::Sine { mode: 17, amplitude: 1.0 }.realize(&space).is_err());
        assert!(InitialProfile::Sine { mode: 0, amplitude: 1.0 }.realize(&space).is_err());

        let bump = InitialProfile::Bump { amplitude: 1.0, width: 0.15 }.realize(&space).unwrap();
        let g = space.to_grid(&bump).unwrap();
        let mid = space.modes() / 2;
        assert!(g.values[mid] > 0.8 && g.values[mid] <= 1.0);
        assert!(InitialProfile::Bump { amplitude: 1.0, width: 0.0 }.realize(&space).is_err());

        let flat = InitialProfile::ConstantInterior { value: 3.0 }.realize(&space).unwrap();
        let g = space.to_grid(&flat).unwrap();
        for &v in &g.values {
            assert_relative_eq!(v, 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_state_is_an_equilibrium_for_all_schemes() {
        for scheme in [SchemeKind::Splitting, SchemeKind::ExpEulerAux, SchemeKind::ExpEulerPlain] {
            let config = base_config(scheme, 8, 0.125, 1.0);
            let space = SineSpace::new(8);
            let tape = tape_for(&config, 0, 0);
            let rec = run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).unwrap();
            assert!(rec.divergence.is_none());
            assert!(rec.states.last().unwrap().coeffs.iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn splitting_and_aux_steps_agree_pathwise() {
        let space = SineSpace::new(32);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let x = SpectralField {
                coeffs: (0..32).map(|_| rng.random_range(-2.0..2.0)).collect(),
            };
            let incr = SpectralField {
                coeffs: (0..32).map(|_| rng.random_range(-0.1..0.1)).collect(),
            };
            let dt = rng.random_range(1e-6..0.5);
            let a = splitting_step(&space, &x, dt, &incr).unwrap();
            let b = exp_euler_aux_step(&space, &x, dt, &incr).unwrap();
            let norm: f64 = x.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
            for (ca, cb) in a.coeffs.iter().zip(&b.coeffs) {
                assert!((ca - cb).abs() <= 1e-12 * (1.0 + norm));
            }
        }
    }

    #[test]
    fn splitting_step_linearizes_at_small_amplitude() {
        // For x = eps e_1 one step is e^{(1-pi^2) dt} eps to high relative
        // accuracy: the flow linearizes as Φ'_dt(0) = e^{dt}.
        let space = SineSpace::new(1);
        let dt = 0.01;
        let eps = 1e-6;
        let x = SpectralField { coeffs: vec![eps] };
        let incr = SpectralField::zeros(1);
        let out = splitting_step(&space, &x, dt, &incr).unwrap();
        let expected = ((1.0 - PI * PI) * dt).exp() * eps;
        assert_relative_eq!(out.coeffs[0], expected, max_relative = 1e-8);
    }

    #[test]
    fn plain_step_differs_from_aux_by_dt_squared() {
        let space = SineSpace::new(16);
        let x = InitialProfile::Sine { mode: 1, amplitude: 1.0 }.realize(&space).unwrap();
        let incr = SpectralField::zeros(16);
        let dt = 1e-4;
        let aux = exp_euler_aux_step(&space, &x, dt, &incr).unwrap();
        let plain = exp_euler_plain_step(&space, &x, dt, &incr).unwrap();
        let g = space.to_grid(&x).unwrap();
        let zmax = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // |Ψ_dt - F| <= 5 dt (1 + |z|^5) pointwise, scaled by one more dt in
        // the step; the grid L2 norm is below the pointwise sup.
        let bound = 5.0 * dt * dt * (1.0 + zmax.powi(5));
        let diff: f64 = aux
            .coeffs
            .iter()
            .zip(&plain.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= bound, "diff {diff} vs bound {bound}");
        assert!(diff > 0.0);
    }

    #[test]
    fn aux_step_is_consistent_as_dt_vanishes() {
        let space = SineSpace::new(8);
        let x = InitialProfile::Sine { mode: 1, amplitude: 1.0 }.realize(&space).unwrap();
        let incr = SpectralField::zeros(8);
        let out = exp_euler_aux_step(&space, &x, 1e-10, &incr).unwrap();
        let diff: f64 = out
            .coeffs
            .iter()
            .zip(&x.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 5e-9, "one tiny step moved the state by {diff}");
    }

    #[test]
    fn zero_horizon_records_only_the_initial_state() {
        let config = SchemeConfig { horizon: 0.0, ..base_config(SchemeKind::Splitting, 4, 0.1, 0.0) };
        let space = SineSpace::new(4);
        let tape = tape_for(&config, 1, 0);
        let rec = run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).unwrap();
        assert_eq!(rec.times, vec![0.0]);
        assert_eq!(rec.states.len(), 1);
    }

    #[test]
    fn splitting_and_aux_trajectories_match_on_one_tape() {
        let mut config = base_config(SchemeKind::Splitting, 32, 1.0 / 64.0, 0.5);
        config.qspec = QSpec::White;
        config.init = InitialProfile::Bump { amplitude: 1.0, width: 0.2 };
        let space = SineSpace::new(32);
        let tape = tape_for(&config, 42, 0);
        let rec_a = run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).unwrap();
        config.scheme = SchemeKind::ExpEulerAux;
        let rec_b = run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).unwrap();
        let (a, b) = (rec_a.states.last().unwrap(), rec_b.states.last().unwrap());
        for (ca, cb) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((ca - cb).abs() <= 1e-11);
        }
    }

    #[test]
    fn plain_exp_euler_blows_up_from_large_data() {
        // The scalar recursion x -> x + dt (x - x^3) diverges once
        // |x| > sqrt(1 + 2/dt); iterating it from 50 confirms the threshold.
        let dt = 0.1;
        let mut z: f64 = 50.0;
        let mut scalar_steps = 0;
        while z.is_finite() && scalar_steps < 20 {
            z += dt * (z - z * z * z);
            scalar_steps += 1;
        }
        assert!(!z.is_finite() && scalar_steps <= 10);

        let mut config = base_config(SchemeKind::ExpEulerPlain, 32, dt, 2.0);
        config.init = InitialProfile::ConstantInterior { value: 50.0 };
        let space = SineSpace::new(32);
        let tape = tape_for(&config, 3, 0);
        let rec = run_trajectory(&space, &config, &tape, &RecordSpec::norms_every(1)).unwrap();
        let report = rec.divergence.expect("plain exponential Euler should diverge");
        assert!(report.step <= 10, "diverged only at step {}", report.step);
        // Norms grow monotonically until the blow-up.
        for w in rec.norms.windows(2) {
            assert!(w[1].l2 >= w[0].l2);
        }
    }

    #[test]
    fn splitting_handles_the_same_large_data() {
        let mut config = base_config(SchemeKind::Splitting, 32, 0.1, 2.0);
        config.init = InitialProfile::ConstantInterior { value: 50.0 };
        let space = SineSpace::new(32);
        let tape = tape_for(&config, 3, 0);
        let rec = run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).unwrap();
        assert!(rec.divergence.is_none());
        let last = rec.norms.last().unwrap();
        assert!(last.sup < 2.0);
    }

    #[test]
    fn interpolant_limits_and_domain() {
        let space = SineSpace::new(8);
        let x = InitialProfile::Bump { amplitude: 2.0, width: 0.2 }.realize(&space).unwrap();
        let dt = 0.25;

        let at_zero = flow_interpolant(&space, &x, 0.0, dt).unwrap();
        let grid = space.to_grid(&x).unwrap();
        assert_eq!(at_zero.values, grid.values);

        let near_end = flow_interpolant(&space, &x, dt - 1e-12, dt).unwrap();
        let full = flow::apply_phi(&grid, dt).unwrap();
        for (a, b) in near_end.values.iter().zip(&full.values) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }

        // Pointwise values match the scalar flow map.
        let mid = flow_interpolant(&space, &x, 0.1, dt).unwrap();
        for (v, z) in mid.values.iter().zip(&grid.values) {
            assert_relative_eq!(*v, flow::phi(*z, 0.1).unwrap(), epsilon = 1e-14);
        }

        assert!(flow_interpolant(&space, &x, dt, dt).is_err());
        assert!(flow_interpolant(&space, &x, -0.1, dt).is_err());
    }

    #[test]
    fn refinement_on_shared_tapes_is_consistent() {
        // Halving dt moves the endpoint less and less. One tape fluctuates,
        // so the decrease is asserted on the average over a small ensemble,
        // for every scheme in its stable regime.
        let space = SineSpace::new(32);
        let spectrum = crate::spectral::LaplacianSpectrum::dirichlet(32);
        let qspec = QSpec::Diagonal { gamma: 1.5, scale: 1.0 };
        let l2 = |a: &SpectralField, b: &SpectralField| {
            a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        for scheme in [SchemeKind::Splitting, SchemeKind::ExpEulerAux, SchemeKind::ExpEulerPlain] {
            let mut diffs = [0.0f64; 3];
            for seed in 0..10 {
                let tape = NoiseTape::generate(
                    &qspec,
                    &spectrum,
                    256,
                    1.0 / 512.0,
                    &StreamKey::new(seed, 0, StreamPurpose::Tape),
                )
                .unwrap();
                let endpoint = |dt: f64| {
                    let config = SchemeConfig {
                        qspec,
                        init: InitialProfile::Sine { mode: 1, amplitude: 1.0 },
                        ..base_config(scheme, 32, dt, 0.5)
                    };
                    let rec =
                        run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only())
                            .unwrap();
                    rec.states.last().unwrap().clone()
                };
                let levels =
                    [endpoint(1.0 / 16.0), endpoint(1.0 / 32.0), endpoint(1.0 / 64.0), endpoint(1.0 / 128.0)];
                for (d, w) in diffs.iter_mut().zip(levels.windows(2)) {
                    *d += l2(&w[0], &w[1]);
                }
            }
            assert!(diffs[1] < diffs[0], "{scheme:?}: {diffs:?}");
            assert!(diffs[2] < diffs[1], "{scheme:?}: {diffs:?}");
        }
    }

    #[test]
    fn tape_mismatches_are_rejected() {
        let config = base_config(SchemeKind::Splitting, 8, 0.125, 1.0);
        let space = SineSpace::new(8);
        let spectrum = crate::spectral::LaplacianSpectrum::dirichlet(8);
        // dt not a multiple of the tape resolution
        let tape = NoiseTape::generate(
            &config.qspec,
            &spectrum,
            10,
            0.3,
            &StreamKey::new(0, 0, StreamPurpose::Tape),
        )
        .unwrap();
        assert!(run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).is_err());
        // too short
        let tape = NoiseTape::generate(
            &config.qspec,
            &spectrum,
            4,
            0.125,
            &StreamKey::new(0, 0, StreamPurpose::Tape),
        )
        .unwrap();
        assert!(run_trajectory(&space, &config, &tape, &RecordSpec::endpoint_only()).is_err());
    }
}
