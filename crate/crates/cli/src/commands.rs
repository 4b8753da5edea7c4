//! Command implementations: single runs, rate experiments, probes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use allencahn_core::{
    coupled_strong_errors, exp_integrability_probe, fit_rate, moment_probe, NoiseTape,
    ProbeItem, ProbeMeta, ProbeReport, RateReport, RecordSpec, ReportMeta, StreamKey,
    StreamPurpose, SineSpace,
};

use crate::config::{ExperimentConfig, ProbeSection};

/// Failures mapped to exit codes: configuration problems exit 2,
/// runtime/experiment problems exit 1.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<crate::config::ConfigError> for Failure {
    fn from(e: crate::config::ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn runtime(e: allencahn_core::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Effective output paths of one invocation.
pub struct Effective {
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub fn effective(config: &ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>) -> Effective {
    Effective {
        seed: seed.unwrap_or(config.mc.seed),
        out_dir: out.unwrap_or_else(|| PathBuf::from(&config.output.dir)),
    }
}

fn report_meta(config: &ExperimentConfig, seed: u64, dt_ref: f64, divergent: usize) -> ReportMeta {
    let rates = config.rates.as_ref();
    ReportMeta {
        scheme: config.model.scheme.label().to_string(),
        noise: config.noise.label(),
        init: config.model.init.label(),
        modes: config.model.modes,
        horizon: config.model.horizon,
        samples: config.mc.samples,
        seed,
        norm: rates.map_or_else(|| "l2".into(), |r| r.norm.clone()),
        moment_p: rates.map_or(2, |r| r.moment_p),
        time_agg: rates.map_or("grid-sup", |r| r.time_agg.label()).to_string(),
        dt_ref,
        divergent,
    }
}

fn probe_meta(config: &ExperimentConfig, seed: u64, dt: f64) -> ProbeMeta {
    ProbeMeta {
        scheme: config.model.scheme.label().to_string(),
        noise: config.noise.label(),
        init: config.model.init.label(),
        modes: config.model.modes,
        horizon: config.model.horizon,
        dt,
        samples: config.mc.samples,
        seed,
    }
}

/// Convergence-rate experiment: coupled strong errors over `[rates].dts`,
/// log-log fit, JSON + CSV artifacts.
pub fn cmd_rates(config: &ExperimentConfig, eff: &Effective) -> Result<(), Failure> {
    config.validate_rates()?;
    let rates = config.rates_section()?;
    let espec = config.error_spec()?;
    let space = SineSpace::new(config.model.modes);
    let base = config.scheme_config(rates.dts[0])?;

    let rows = coupled_strong_errors(&space, &base, &rates.dts, rates.dt_ref, &espec, eff.seed)
        .map_err(runtime)?;
    let errors: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    let weights: Option<Vec<f64>> = if rates.weighted && rows.iter().all(|r| r.stderr > 0.0) {
        Some(rows.iter().map(|r| (r.estimate / r.stderr).powi(2)).collect())
    } else {
        None
    };
    let fit = fit_rate(&rates.dts, &errors, weights.as_deref()).map_err(runtime)?;

    let divergent = rows.iter().map(|r| r.divergent).max().unwrap_or(0);
    let report = RateReport::new(&rows, &fit, report_meta(config, eff.seed, rates.dt_ref, divergent))
        .map_err(runtime)?;

    ensure_dir(&eff.out_dir)?;
    write_file(
        &eff.out_dir.join("rates.json"),
        report.to_json().map_err(runtime)?.as_bytes(),
    )?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(runtime)?;
    write_file(&eff.out_dir.join("rates.csv"), &csv)?;
    let mut long = Vec::new();
    report.write_csv_long(&mut long).map_err(runtime)?;
    write_file(&eff.out_dir.join("rates_long.csv"), &long)?;

    println!(
        "rates: slope {:.4} (95% ci {:.4}..{:.4}), intercept {:.4}, r^2 {:.4}",
        fit.slope, fit.slope_ci.0, fit.slope_ci.1, fit.intercept, fit.r_squared
    );
    for r in &rows {
        println!("  dt {:<12} error {:.6e} stderr {:.2e}", r.dt, r.estimate, r.stderr);
    }
    println!("wrote {}", eff.out_dir.join("rates.json").display());
    Ok(())
}

/// Statistical probe: moment functionals or exponential integrability.
pub fn cmd_probe(config: &ExperimentConfig, eff: &Effective) -> Result<(), Failure> {
    let dt = config.base_dt()?;
    let scheme_config = config.scheme_config(dt)?;
    let space = SineSpace::new(config.model.modes);

    let (kind, items): (&str, Vec<ProbeItem>) = match config.probe_section()? {
        ProbeSection::Moments { .. } => {
            let functionals = config.moment_functionals()?;
            let estimates =
                moment_probe(&space, &scheme_config, &functionals, config.mc.samples, eff.seed)
                    .map_err(runtime)?;
            (
                "moments",
                estimates
                    .iter()
                    .map(|e| ProbeItem {
                        label: e.label.clone(),
                        estimate: Some(e.mean),
                        stderr: e.stderr,
                        tail_count: None,
                        max_exponent: None,
                        divergent: e.divergent,
                    })
                    .collect(),
            )
        }
        ProbeSection::ExpIntegrability { .. } => {
            let (c, target) = config.exp_probe_params()?;
            let probe = exp_integrability_probe(
                &space,
                &scheme_config,
                c,
                target,
                config.mc.samples,
                eff.seed,
            )
            .map_err(runtime)?;
            (
                "exp-integrability",
                vec![ProbeItem {
                    label: format!("exp({c} * int sup^2), {}", target.label()),
                    estimate: probe.estimate.is_finite().then_some(probe.estimate),
                    stderr: probe.stderr,
                    tail_count: Some(probe.tail_count),
                    max_exponent: Some(probe.max_exponent),
                    divergent: probe.divergent,
                }],
            )
        }
    };

    let report = ProbeReport {
        kind: kind.to_string(),
        items,
        meta: probe_meta(config, eff.seed, dt),
    };
    ensure_dir(&eff.out_dir)?;
    write_file(
        &eff.out_dir.join("probe.json"),
        report.to_json().map_err(runtime)?.as_bytes(),
    )?;
    for item in &report.items {
        let shown = item
            .estimate
            .map_or_else(|| "overflow".to_string(), |e| format!("{e:.6e}"));
        match item.tail_count {
            Some(tails) => println!(
                "probe {}: estimate {shown} stderr {:.2e} tail events {} max exponent {:.3}",
                item.label,
                item.stderr,
                tails,
                item.max_exponent.unwrap_or(0.0)
            ),
            None => println!(
                "probe {}: estimate {shown} stderr {:.2e}",
                item.label, item.stderr
            ),
        }
    }
    println!("wrote {}", eff.out_dir.join("probe.json").display());
    Ok(())
}

/// Single trajectory: norm time series as CSV, optional state snapshots.
pub fn cmd_run(config: &ExperimentConfig, eff: &Effective) -> Result<(), Failure> {
    let dt = config.base_dt()?;
    let scheme_config = config.scheme_config(dt)?;
    let space = SineSpace::new(config.model.modes);
    let tape = NoiseTape::generate(
        &config.noise,
        space.spectrum(),
        scheme_config.steps().max(1),
        dt,
        &StreamKey::new(eff.seed, 0, StreamPurpose::Tape),
    )
    .map_err(runtime)?;
    let record = RecordSpec {
        every: config.run.record_every,
        keep_states: config.run.state_snapshots,
    };
    let rec = allencahn_core::run_trajectory(&space, &scheme_config, &tape, &record)
        .map_err(runtime)?;

    ensure_dir(&eff.out_dir)?;
    let mut csv = Vec::new();
    writeln!(csv, "t,l2,l4,sup,h1,h2").unwrap();
    for (t, row) in rec.times.iter().zip(&rec.norms) {
        writeln!(csv, "{t},{},{},{},{},{}", row.l2, row.l4, row.sup, row.h1, row.h2).unwrap();
    }
    write_file(&eff.out_dir.join("trajectory.csv"), &csv)?;
    println!("wrote {} ({} rows)", eff.out_dir.join("trajectory.csv").display(), rec.times.len());

    if let Some(divergence) = rec.divergence {
        println!("trajectory diverged at step {}", divergence.step);
    }

    if config.run.state_snapshots {
        let path = eff
            .out_dir
            .join(format!("states_{:016x}.bin", config.fingerprint(eff.seed)));
        let mut buf = Vec::new();
        buf.extend_from_slice(b"ACSN\x01\x00\x00\x00");
        buf.extend_from_slice(&(config.model.modes as u64).to_le_bytes());
        buf.extend_from_slice(&(rec.states.len() as u64).to_le_bytes());
        for (t, state) in rec.times.iter().zip(&rec.states) {
            buf.extend_from_slice(&t.to_le_bytes());
            for c in &state.coeffs {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        write_file(&path, &buf)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
