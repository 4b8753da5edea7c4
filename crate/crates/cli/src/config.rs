//! Experiment configuration: TOML with one table per concern.
//!
//! The same file feeds `run`, `rates` and `probe`; each command reads the
//! sections it needs and validates them with diagnostics that name the
//! offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use allencahn_core::{
    ErrorSpec, ExpTarget, InitialProfile, MomentFunctional, NormChoice, QSpec, SchemeConfig,
    SchemeKind, TimeAgg,
};

/// Configuration error carrying the offending key.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn key_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub noise: QSpec,
    pub mc: McSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub scheme: SchemeKind,
    pub modes: usize,
    pub horizon: f64,
    /// Step size for `run` and `probe`; ignored by `rates`, whose steps
    /// come from `[rates].dts`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_dt0")]
    pub dt0: f64,
    pub init: InitialProfile,
}

fn default_dt0() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub samples: usize,
    pub seed: u64,
    /// 0 = use all available cores.
    #[serde(default)]
    pub threads: usize,
    /// Reductions always run in sample order, so outputs are reproducible
    /// for a fixed seed; this key records that the caller relies on it.
    #[serde(default)]
    pub bit_reproducible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub dts: Vec<f64>,
    pub dt_ref: f64,
    #[serde(default = "default_norm")]
    pub norm: String,
    #[serde(default = "default_moment_p")]
    pub moment_p: u32,
    #[serde(default = "default_agg")]
    pub time_agg: TimeAgg,
    /// Weight the log-log fit by inverse squared relative stderr.
    #[serde(default)]
    pub weighted: bool,
}

fn default_norm() -> String {
    "l2".into()
}

fn default_moment_p() -> u32 {
    2
}

fn default_agg() -> TimeAgg {
    TimeAgg::GridSup
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum ProbeSection {
    Moments {
        functionals: Vec<String>,
    },
    ExpIntegrability {
        c: f64,
        #[serde(default = "default_target")]
        target: String,
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
}

fn default_target() -> String {
    "grid-states".into()
}

fn default_substeps() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Record norms every j-th grid time (0 keeps endpoints only).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Also dump recorded states as a binary snapshot keyed by config hash.
    #[serde(default)]
    pub state_snapshots: bool,
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| ConfigError(format!("malformed TOML: {e}")))?;
        config.validate_model()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    fn validate_model(&self) -> Result<()> {
        if self.model.modes == 0 {
            return key_err("[model].modes must be >= 1");
        }
        if !(self.model.horizon > 0.0) {
            return key_err("[model].horizon must be positive");
        }
        if !(self.model.dt0 > 0.0 && self.model.dt0 < 1.0) {
            return key_err("[model].dt0 must lie in (0, 1)");
        }
        if self.mc.samples == 0 {
            return key_err("[mc].samples must be >= 1");
        }
        if let QSpec::Diagonal { gamma, scale } = self.noise {
            if !(gamma >= 0.0) {
                return key_err("[noise].gamma must be >= 0");
            }
            if !(scale >= 0.0) {
                return key_err("[noise].scale must be >= 0");
            }
        }
        Ok(())
    }

    /// Scheme configuration at the given step size.
    pub fn scheme_config(&self, dt: f64) -> Result<SchemeConfig> {
        let config = SchemeConfig {
            scheme: self.model.scheme,
            modes: self.model.modes,
            dt,
            horizon: self.model.horizon,
            qspec: self.noise,
            init: self.model.init,
            flow: allencahn_core::flow::FlowParams { dt0: self.model.dt0 },
        };
        config
            .validate()
            .map_err(|e| ConfigError(format!("[model] rejected: {e}")))?;
        Ok(config)
    }

    pub fn base_dt(&self) -> Result<f64> {
        self.model.dt.ok_or_else(|| ConfigError("[model].dt is required for this command".into()))
    }

    pub fn rates_section(&self) -> Result<&RatesSection> {
        self.rates.as_ref().ok_or_else(|| ConfigError("missing [rates] section".into()))
    }

    pub fn probe_section(&self) -> Result<&ProbeSection> {
        self.probe.as_ref().ok_or_else(|| ConfigError("missing [probe] section".into()))
    }

    pub fn error_spec(&self) -> Result<ErrorSpec> {
        let rates = self.rates_section()?;
        let spec = ErrorSpec {
            norm: parse_norm(&rates.norm)?,
            agg: rates.time_agg,
            moment_p: rates.moment_p,
            samples: self.mc.samples,
        };
        spec.validate().map_err(|e| ConfigError(format!("[rates] rejected: {e}")))?;
        Ok(spec)
    }

    /// Full validation of the `[rates]` grid against the model.
    pub fn validate_rates(&self) -> Result<()> {
        let rates = self.rates_section()?;
        if rates.dts.len() < 3 {
            return key_err("[rates].dts needs at least 3 step sizes");
        }
        if rates.dts.windows(2).any(|w| w[1] >= w[0]) {
            return key_err("[rates].dts must be strictly decreasing");
        }
        if !(rates.dt_ref > 0.0) {
            return key_err("[rates].dt_ref must be positive");
        }
        for (i, &dt) in rates.dts.iter().enumerate() {
            let m = (dt / rates.dt_ref).round();
            if m < 1.0 || (m * rates.dt_ref - dt).abs() > 1e-12 * dt {
                return key_err(format!(
                    "[rates].dt_ref = {} does not divide [rates].dts[{i}] = {dt}",
                    rates.dt_ref
                ));
            }
            if m < 8.0 {
                return key_err(format!(
                    "[rates].dt_ref must be at most dts[{i}]/8 (got ratio {m})"
                ));
            }
            self.scheme_config(dt)
                .map_err(|e| ConfigError(format!("[rates].dts[{i}]: {e}")))?;
        }
        self.scheme_config(rates.dt_ref)
            .map_err(|e| ConfigError(format!("[rates].dt_ref: {e}")))?;
        self.error_spec()?;
        Ok(())
    }

    pub fn moment_functionals(&self) -> Result<Vec<MomentFunctional>> {
        match self.probe_section()? {
            ProbeSection::Moments { functionals } => {
                if functionals.is_empty() {
                    return key_err("[probe].functionals must not be empty");
                }
                functionals.iter().map(|s| parse_functional(s)).collect()
            }
            _ => key_err("[probe].kind is not \"moments\""),
        }
    }

    pub fn exp_probe_params(&self) -> Result<(f64, ExpTarget)> {
        match self.probe_section()? {
            ProbeSection::ExpIntegrability { c, target, substeps } => {
                if !(*c >= 0.0) || !c.is_finite() {
                    return key_err("[probe].c must be finite and >= 0");
                }
                let target = match target.as_str() {
                    "grid-states" => ExpTarget::GridStates,
                    "interpolant" => {
                        if *substeps == 0 {
                            return key_err("[probe].substeps must be >= 1");
                        }
                        ExpTarget::Interpolant { substeps: *substeps }
                    }
                    other => {
                        return key_err(format!(
                            "[probe].target must be \"grid-states\" or \"interpolant\", got {other:?}"
                        ))
                    }
                };
                Ok((*c, target))
            }
            _ => key_err("[probe].kind is not \"exp-integrability\""),
        }
    }

    /// FNV-1a hash of the canonical serialization plus the effective seed;
    /// keys snapshot artifacts to their experiment.
    pub fn fingerprint(&self, seed: u64) -> u64 {
        let mut hash = 0xcbf29ce484222325u64;
        for byte in self.to_toml().bytes().chain(seed.to_le_bytes()) {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
}

pub fn parse_norm(s: &str) -> Result<NormChoice> {
    match s {
        "l2" => Ok(NormChoice::L2),
        "sup" => Ok(NormChoice::Sup),
        _ => {
            if let Some(q) = s.strip_prefix('l').and_then(|q| q.parse::<u32>().ok()) {
                Ok(NormChoice::Lq { q })
            } else {
                key_err(format!("[rates].norm must be \"l2\", \"sup\" or \"l<q>\", got {s:?}"))
            }
        }
    }
}

/// Functional names follow the report labels: `sup-l<q>^<p>`, `sup-h1^2`,
/// `int-h2^2`, `sup-h2^<p>`.
pub fn parse_functional(s: &str) -> Result<MomentFunctional> {
    if s == "sup-h1^2" {
        return Ok(MomentFunctional::SupH1Sq);
    }
    if s == "int-h2^2" {
        return Ok(MomentFunctional::IntH2Sq);
    }
    if let Some(rest) = s.strip_prefix("sup-h2^") {
        if let Ok(p) = rest.parse::<u32>() {
            return Ok(MomentFunctional::SupH2Pow { p });
        }
    }
    if let Some(rest) = s.strip_prefix("sup-l") {
        if let Some((q, p)) = rest.split_once('^') {
            if let (Ok(q), Ok(p)) = (q.parse::<u32>(), p.parse::<u32>()) {
                return Ok(MomentFunctional::SupLqPow { q, p });
            }
        }
    }
    key_err(format!(
        "[probe].functionals entry {s:?} is not one of sup-l<q>^<p>, sup-h1^2, int-h2^2, sup-h2^<p>"
    ))
}
