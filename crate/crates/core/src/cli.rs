//! `mvdc` command line: simulate, sweep and replay. All file I/O lives here.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{EventReport, MetricConfig, MetricEngine, MetricSample, MetricsError};
use crate::plant::SystemParams;
use crate::scenario::{parse_with_overrides, split_override, Scenario, ScenarioError};
use crate::sim::{Sample, SimError, Simulator};

pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const REPORTS_FILE: &str = "reports.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Scenario {
        context: String,
        #[source]
        source: ScenarioError,
    },
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Metrics(#[from] MetricsError),
    #[error("{context}: {message}")]
    Trace { context: String, message: String },
    #[error("{failed} of {total} sweep values failed")]
    SweepFailed { failed: usize, total: usize },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Scenario {
                source: ScenarioError::Parse { .. },
                ..
            } => 3,
            Self::Trace { .. } => 3,
            Self::Scenario { .. } => 4,
            Self::Sim(_) | Self::Metrics(_) | Self::SweepFailed { .. } => 5,
            Self::Io { .. } => 6,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn csv_err(context: &str, e: csv::Error) -> CliError {
    let context = context.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io { context, source },
        other => CliError::Trace {
            context,
            message: format!("{other:?}"),
        },
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mvdc",
    version,
    about = "MVDC microgrid simulator with voltage resilience metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write telemetry and event reports.
    Simulate(RunArgs),
    /// Run every value of the scenario's [sweep] section in parallel.
    Sweep(RunArgs),
    /// Score a recorded (t, v_t) trace with the metric engine only.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the integration step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Write every n-th telemetry row.
    #[arg(long)]
    pub decimate: Option<u64>,
    /// Override a scenario field, e.g. `system.c_eq=0.04`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// CSV with a header naming at least `t` and `v_t`.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Reference voltage; defaults to the scenario's, else 6000 V.
    #[arg(long)]
    pub vref: Option<f64>,
    /// Take the metric settings (and reference) from this scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub decimate: Option<u64>,
    /// Override a scenario field, e.g. `metrics.hold=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Paths and printable summary of one completed run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub telemetry: PathBuf,
    pub reports: PathBuf,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportsFile {
    pub scenario_digest: String,
    pub events: Vec<EventReport>,
}

/// `i_` followed by the unit id with underscores dropped.
pub fn current_column(id: &str) -> String {
    format!("i_{}", id.replace('_', ""))
}

pub fn telemetry_header(params: &SystemParams) -> Vec<String> {
    let mut h = vec!["t".to_string(), "v_t".to_string()];
    h.extend(params.units.iter().map(|u| current_column(&u.id)));
    for c in ["p_cpl", "p_ppl", "rv", "vdi", "vrei", "phase"] {
        h.push(c.to_string());
    }
    h
}

pub const REPLAY_HEADER: [&str; 6] = ["t", "v_t", "rv", "vdi", "vrei", "phase"];

/// Shortest decimal that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x}")
}

/// Nine significant digits.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Simulates a scenario, feeding every sample through the metric engine.
/// `sink` sees each grid point in order.
pub fn run_scenario(
    scenario: &Scenario,
    mut sink: impl FnMut(&Sample, &MetricSample) -> Result<(), CliError>,
) -> Result<Vec<EventReport>, CliError> {
    let sim = Simulator::from_equilibrium(
        scenario.params.clone(),
        scenario.events.clone(),
        scenario.horizon,
        scenario.dt,
    )?;
    let mut engine = MetricEngine::new(scenario.params.v_ref, &scenario.metrics);
    for sample in sim {
        let sample = sample?;
        let m = engine.update(sample.t, sample.v_t)?;
        sink(&sample, &m)?;
    }
    Ok(engine.finish())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))
}

fn write_reports(path: &Path, digest: String, events: Vec<EventReport>) -> Result<(), CliError> {
    let file = ReportsFile {
        scenario_digest: digest,
        events,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("reports serialize");
    text.push('\n');
    fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
}

pub fn summarize(v_ref: f64, reports: &[EventReport]) -> String {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), sig9);
    let mut s = format!("events: {}\n", reports.len());
    for (n, r) in reports.iter().enumerate() {
        s += &format!(
            "event {n}: t_d={} t_r={} t_pr={} v_pe={} depth={} delta_rv={} vdi_peak={} vrei={}{}\n",
            sig9(r.t_d),
            opt(r.t_r),
            opt(r.t_pr),
            sig9(r.v_pe),
            sig9(r.depth(v_ref)),
            sig9(r.delta_rv),
            sig9(r.vdi_peak),
            opt(r.vrei),
            if r.resolved { "" } else { " (unresolved)" },
        );
    }
    s
}

/// Runs one validated scenario into `out`.
pub fn simulate_into(scenario: &Scenario, out: &Path) -> Result<RunOutputs, CliError> {
    let mut scenario = scenario.clone();
    scenario.sweep = None;
    ensure_dir(out)?;
    let telemetry = out.join(TELEMETRY_FILE);
    let mut w = csv::Writer::from_path(&telemetry)
        .map_err(|e| csv_err(&telemetry.display().to_string(), e))?;
    let ctx = telemetry.display().to_string();
    w.write_record(telemetry_header(&scenario.params))
        .map_err(|e| csv_err(&ctx, e))?;
    let decimate = scenario.decimate.max(1);
    let mut row: Vec<String> = Vec::new();
    let reports = run_scenario(&scenario, |s, m| {
        if s.step % decimate != 0 {
            return Ok(());
        }
        row.clear();
        row.push(num(s.t));
        row.push(num(s.v_t));
        row.extend(s.state.currents.iter().map(|&i| num(i)));
        row.push(num(s.p_cpl));
        row.push(num(s.p_ppl));
        row.push(num(m.rv));
        row.push(num(m.vdi));
        row.push(num(m.vrei));
        row.push(m.phase.code().to_string());
        w.write_record(&row).map_err(|e| csv_err(&ctx, e))
    })?;
    w.flush().map_err(io_err(ctx))?;
    let summary = summarize(scenario.params.v_ref, &reports);
    let reports_path = out.join(REPORTS_FILE);
    write_reports(&reports_path, scenario.digest(), reports)?;
    fs::write(out.join(SUMMARY_FILE), &summary).map_err(io_err("writing summary"))?;
    Ok(RunOutputs {
        telemetry,
        reports: reports_path,
        summary,
    })
}

fn overrides(
    set: &[String],
    dt: Option<f64>,
    decimate: Option<u64>,
) -> Result<Vec<(String, String)>, CliError> {
    let mut out = set
        .iter()
        .map(|s| split_override(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(dt) = dt {
        out.push(("dt".into(), format!("{dt:?}")));
    }
    if let Some(d) = decimate {
        out.push(("decimate".into(), d.to_string()));
    }
    Ok(out)
}

pub fn load_scenario(path: &Path, overrides: &[(String, String)]) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    parse_with_overrides(&text, overrides).map_err(|source| CliError::Scenario {
        context: path.display().to_string(),
        source,
    })
}

pub fn cmd_simulate(args: &RunArgs) -> Result<RunOutputs, CliError> {
    let ov = overrides(&args.set, args.dt, args.decimate)?;
    let scenario = load_scenario(&args.scenario, &ov)?;
    simulate_into(&scenario, &args.out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub depth: Option<f64>,
    pub recovery_time: Option<f64>,
    pub vrei: Option<f64>,
    pub vdi_peak: Option<f64>,
    pub error: Option<String>,
}

/// Directory name for the `n`-th sweep value.
pub fn sweep_dir(n: usize) -> String {
    format!("value_{n:03}")
}

pub fn cmd_sweep(args: &RunArgs) -> Result<Vec<SweepRow>, CliError> {
    let ov = overrides(&args.set, args.dt, args.decimate)?;
    let scenario = load_scenario(&args.scenario, &ov)?;
    let variants = scenario
        .sweep_variants()
        .map_err(|source| CliError::Scenario {
            context: args.scenario.display().to_string(),
            source,
        })?;
    ensure_dir(&args.out)?;
    let rows: Vec<SweepRow> = variants
        .into_par_iter()
        .enumerate()
        .map(|(n, (value, variant))| {
            let result = variant
                .map_err(|source| CliError::Scenario {
                    context: format!("sweep value {value}"),
                    source,
                })
                .and_then(|s| {
                    let out = simulate_into(&s, &args.out.join(sweep_dir(n)))?;
                    let text =
                        fs::read_to_string(&out.reports).map_err(io_err("reading reports"))?;
                    let file: ReportsFile = serde_json::from_str(&text).expect("own reports parse");
                    Ok((s.params.v_ref, file.events))
                });
            match result {
                Ok((v_ref, events)) => {
                    let first = events.first();
                    SweepRow {
                        value,
                        depth: first.map(|r| r.depth(v_ref)),
                        recovery_time: first.and_then(|r| r.recovery_time()),
                        vrei: first.and_then(|r| r.vrei),
                        vdi_peak: first.map(|r| r.vdi_peak),
                        error: None,
                    }
                }
                Err(e) => SweepRow {
                    value,
                    depth: None,
                    recovery_time: None,
                    vrei: None,
                    vdi_peak: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let path = args.out.join(SWEEP_SUMMARY_FILE);
    let ctx = path.display().to_string();
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&ctx, e))?;
    w.write_record([
        "value",
        "depth",
        "recovery_time",
        "vrei",
        "vdi_peak",
        "error",
    ])
    .map_err(|e| csv_err(&ctx, e))?;
    let opt = |x: Option<f64>| x.map_or(String::new(), num);
    for r in &rows {
        w.write_record([
            num(r.value),
            opt(r.depth),
            opt(r.recovery_time),
            opt(r.vrei),
            opt(r.vdi_peak),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_err(&ctx, e))?;
    }
    w.flush().map_err(io_err(ctx))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::SweepFailed {
            failed,
            total: rows.len(),
        });
    }
    Ok(rows)
}

/// Reads `(t, v_t)` pairs from a CSV with a header row.
pub fn read_trace(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let ctx = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(&ctx, e))?;
    let headers = r.headers().map_err(|e| csv_err(&ctx, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::Trace {
                context: ctx.clone(),
                message: format!("missing column '{name}'"),
            })
    };
    let (ti, vi) = (col("t")?, col("v_t")?);
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(&ctx, e))?;
        let line = n + 2;
        let field = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CliError::Trace {
                    context: format!("{ctx}:{line}"),
                    message: format!("bad number in column {}", headers.get(i).unwrap_or("?")),
                })
        };
        let (t, v) = (field(ti)?, field(vi)?);
        if let Some(&(last_t, _)) = out.last() {
            if !(t > last_t) {
                return Err(CliError::Trace {
                    context: format!("{ctx}:{line}"),
                    message: MetricsError::NonMonotoneTime { t, last_t }.to_string(),
                });
            }
        }
        out.push((t, v));
    }
    if out.is_empty() {
        return Err(CliError::Trace {
            context: ctx,
            message: "trace has no samples".into(),
        });
    }
    Ok(out)
}

/// Metric columns for a trace, one per sample, plus the event reports.
pub fn replay_trace(
    trace: &[(f64, f64)],
    v_ref: f64,
    config: &MetricConfig,
) -> Result<(Vec<MetricSample>, Vec<EventReport>), CliError> {
    let mut engine = MetricEngine::new(v_ref, config);
    let rows = trace
        .iter()
        .map(|&(t, v)| engine.update(t, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((rows, engine.finish()))
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<RunOutputs, CliError> {
    let ov = overrides(&args.set, None, args.decimate)?;
    let base = match &args.scenario {
        Some(p) => load_scenario(p, &ov)?,
        None => {
            parse_with_overrides("horizon = 1.0\n", &ov).map_err(|source| CliError::Scenario {
                context: "--set".into(),
                source,
            })?
        }
    };
    let v_ref = args.vref.unwrap_or(base.params.v_ref);
    if !(v_ref > 0.0) {
        return Err(CliError::Usage(format!("--vref must be > 0 (got {v_ref})")));
    }
    let trace = read_trace(&args.trace)?;
    let (rows, reports) = replay_trace(&trace, v_ref, &base.metrics)?;

    ensure_dir(&args.out)?;
    let telemetry = args.out.join(TELEMETRY_FILE);
    let ctx = telemetry.display().to_string();
    let mut w = csv::Writer::from_path(&telemetry).map_err(|e| csv_err(&ctx, e))?;
    w.write_record(REPLAY_HEADER)
        .map_err(|e| csv_err(&ctx, e))?;
    let decimate = base.decimate.max(1) as usize;
    for (k, (m, &(_, v))) in rows.iter().zip(&trace).enumerate() {
        if k % decimate != 0 {
            continue;
        }
        w.write_record([
            num(m.t),
            num(v),
            num(m.rv),
            num(m.vdi),
            num(m.vrei),
            m.phase.code().to_string(),
        ])
        .map_err(|e| csv_err(&ctx, e))?;
    }
    w.flush().map_err(io_err(ctx))?;

    let bytes =
        fs::read(&args.trace).map_err(io_err(format!("reading {}", args.trace.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    h.update(v_ref.to_le_bytes());
    h.update(
        toml::to_string(&base.metrics)
            .expect("metric config serializes")
            .as_bytes(),
    );
    let summary = summarize(v_ref, &reports);
    let reports_path = args.out.join(REPORTS_FILE);
    write_reports(&reports_path, hex::encode(h.finalize()), reports)?;
    fs::write(args.out.join(SUMMARY_FILE), &summary).map_err(io_err("writing summary"))?;
    Ok(RunOutputs {
        telemetry,
        reports: reports_path,
        summary,
    })
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|o| o.summary),
        Command::Replay(a) => cmd_replay(a).map(|o| o.summary),
        Command::Sweep(a) => cmd_sweep(a).map(|rows| {
            let opt = |x: Option<f64>| x.map_or("-".to_string(), sig9);
            rows.iter()
                .map(|r| {
                    format!(
                        "value={} depth={} recovery_time={} vrei={} vdi_peak={}\n",
                        sig9(r.value),
                        opt(r.depth),
                        opt(r.recovery_time),
                        opt(r.vrei),
                        opt(r.vdi_peak)
                    )
                })
                .collect()
        }),
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_params;

    #[test]
    fn header_matches_default_units() {
        assert_eq!(
            telemetry_header(&default_params()).join(","),
            "t,v_t,i_sga,i_sgb,i_ba,i_bb,i_sca,i_scb,p_cpl,p_ppl,rv,vdi,vrei,phase"
        );
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 5e-5 * 123457.0, 6000.0, -2.5e-300, 0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(sig9(1.0 / 3.0), "3.33333333e-1");
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Usage(String::new()).exit_code(),
            CliError::Scenario {
                context: String::new(),
                source: ScenarioError::Parse {
                    line: None,
                    message: String::new(),
                },
            }
            .exit_code(),
            CliError::Scenario {
                context: String::new(),
                source: ScenarioError::Validation(vec![]),
            }
            .exit_code(),
            CliError::Sim(SimError::BadStep(0.0)).exit_code(),
            CliError::Io {
                context: String::new(),
                source: io::Error::other("x"),
            }
            .exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 5, 6]);
    }
}
