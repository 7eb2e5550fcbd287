//! The `netmbt` command line.
//!
//! ```text
//! netmbt run --model server-main --backend sim --seed 42 --tests 1000
//! netmbt replay --replay failures.trace
//! netmbt export-dot --model worker
//! netmbt list-models
//! ```
//!
//! Exit codes: 0 when every test passed (or every replay reproduced its
//! recording), 1 when a test failed or a replay diverged, 2 for bad flags
//! and backend errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::explorer::{
    export_dot, parse_traces, replay, run_suite, ReplayError, SuiteConfig, Trace, Verdict,
};
use crate::models::{Catalog, ModelSettings, SocketFactory, SocketOptions, MODEL_NAMES};
use crate::portman::PortRange;
use crate::simnet::{FaultKind, FaultSpec, LatencyModel};
use crate::sut::{BackendKind, DEFAULT_WATCHDOG};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "netmbt",
    version,
    about = "Model-based testing of a TCP socket API"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a test suite and print the report.
    Run(RunArgs),
    /// Re-execute recorded traces and check every step.
    Replay(ReplayArgs),
    /// Print a model as Graphviz DOT.
    ExportDot {
        #[arg(long, default_value = "server-main")]
        model: String,
    },
    /// List the registered models.
    ListModels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Sim,
    Real,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Sim => BackendKind::Sim,
            Backend::Real => BackendKind::Real,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    None,
    DuplicateBytes,
    DropBytes,
    PhantomReadiness,
}

impl Fault {
    fn kind(self) -> Option<FaultKind> {
        match self {
            Fault::None => None,
            Fault::DuplicateBytes => Some(FaultKind::DuplicateBytes),
            Fault::DropBytes => Some(FaultKind::DropBytes),
            Fault::PhantomReadiness => Some(FaultKind::PhantomReadiness),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Latency {
    Zero,
    Default,
}

/// A probability written as a decimal (`0.25`) or a fraction (`1/4`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probability(pub f64);

impl FromStr for Probability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("`{s}` is not a probability (use 0.25 or 1/4)");
        let p = match s.split_once('/') {
            Some((n, d)) => {
                let n: u64 = n.trim().parse().map_err(|_| bad())?;
                let d: u64 = d.trim().parse().map_err(|_| bad())?;
                if d == 0 {
                    return Err(bad());
                }
                n as f64 / d as f64
            }
            None => s.trim().parse::<f64>().map_err(|_| bad())?,
        };
        if (0.0..=1.0).contains(&p) {
            Ok(Probability(p))
        } else {
            Err(format!("probability {s} is outside [0, 1]"))
        }
    }
}

/// Flags shared by `run` and `replay`.
#[derive(Debug, Args)]
struct SuiteArgs {
    #[arg(long, value_enum, default_value = "sim")]
    backend: Backend,
    #[arg(long, default_value_t = SuiteConfig::DEFAULT_MAX_STEPS)]
    max_steps: usize,
    /// Listen ports for the real backend.
    #[arg(long, value_name = "LO:HI")]
    port_range: Option<PortRange>,
    #[arg(long, value_enum, default_value = "none")]
    fault: Fault,
    /// Network step from which the fault is armed.
    #[arg(long, default_value_t = 0)]
    fault_step: u64,
    #[arg(long, value_enum, default_value = "default")]
    latency: Latency,
    /// Chance that a client's close decision closes.
    #[arg(long, default_value = "1/10")]
    p_close: Probability,
    /// Seconds a blocking call may wait on the real backend.
    #[arg(long, default_value_t = DEFAULT_WATCHDOG.as_secs_f64())]
    watchdog: f64,
}

impl SuiteArgs {
    fn options(&self) -> Result<SocketOptions, String> {
        if !(self.watchdog.is_finite() && self.watchdog > 0.0) {
            return Err(format!(
                "--watchdog must be positive, got {}",
                self.watchdog
            ));
        }
        Ok(SocketOptions {
            latency: match self.latency {
                Latency::Zero => LatencyModel::zero(),
                Latency::Default => LatencyModel::default(),
            },
            fault: self.fault.kind().map(|kind| FaultSpec {
                kind,
                trigger_step: self.fault_step,
            }),
            settings: ModelSettings {
                p_close: self.p_close.0,
                ..ModelSettings::default()
            },
            watchdog: Duration::from_secs_f64(self.watchdog),
            ..SocketOptions::default()
        })
    }

    fn config(&self, seed: u64, backend: BackendKind) -> SuiteConfig {
        let mut config = SuiteConfig::new(seed)
            .max_steps(self.max_steps)
            .backend(backend);
        if self.port_range.is_some() {
            config.port_range = self.port_range;
        }
        config
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, default_value = "server-main")]
    model: String,
    /// Suite seed; a random one is chosen (and printed) when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = SuiteConfig::DEFAULT_TESTS)]
    tests: u64,
    /// Write every trace of the suite to this file.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    abort_on_failure: bool,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Trace file to replay.
    #[arg(long = "replay", value_name = "PATH", required_unless_present = "path")]
    replay_flag: Option<PathBuf>,
    #[arg(value_name = "PATH", conflicts_with = "replay_flag")]
    path: Option<PathBuf>,
    /// Model to replay against; defaults to the root model of each trace.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    suite: SuiteArgs,
}

/// Failure that maps to exit code 2.
struct Fatal(String);

impl<T: std::fmt::Display> From<T> for Fatal {
    fn from(e: T) -> Self {
        Fatal(e.to_string())
    }
}

/// Runs the command line in `args` (including the program name), writing
/// normal output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_PASS;
            }
            let _ = writeln!(err, "netmbt: {}", first_line(&e.to_string()));
            return EXIT_ERROR;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Replay(a) => cmd_replay(&a, out),
        Command::ExportDot { model } => cmd_export_dot(&model, out),
        Command::ListModels => {
            for name in MODEL_NAMES {
                let _ = writeln!(out, "{name}");
            }
            Ok(EXIT_PASS)
        }
    };
    let _ = out.flush();
    match result {
        Ok(code) => code,
        Err(Fatal(msg)) => {
            let _ = writeln!(err, "netmbt: {}", first_line(&msg));
            EXIT_ERROR
        }
    }
}

/// Stdout that treats a closed pipe (`netmbt run | head`) as a sink.
struct PipeOut<W>(W);

impl<W: Write> Write for PipeOut<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match self.0.write(buf) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(buf.len()),
            r => r,
        }
    }

    fn flush(&mut self) -> std::io::Result<()> {
        match self.0.flush() {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r,
        }
    }
}

/// Entry point of the `netmbt` binary.
pub fn main() -> ExitCode {
    let mut out = PipeOut(std::io::stdout().lock());
    let code = run_cli(std::env::args_os(), &mut out, &mut std::io::stderr().lock());
    ExitCode::from(code)
}

fn first_line(s: &str) -> &str {
    s.trim_start_matches("error: ")
        .lines()
        .next()
        .unwrap_or("")
        .trim()
}

fn catalog_spec<'a>(catalog: &'a Catalog, name: &str) -> Result<&'a crate::models::Spec, Fatal> {
    catalog.get(name).ok_or_else(|| {
        Fatal(format!(
            "unknown model `{name}` (known: {})",
            MODEL_NAMES.join(", ")
        ))
    })
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<u8, Fatal> {
    let seed = a.seed.unwrap_or_else(rand::random);
    writeln!(out, "seed={seed}")?;
    let catalog = Catalog::new();
    let spec = catalog_spec(&catalog, &a.model)?;
    let options = a.suite.options()?;
    let mut config = a.suite.config(seed, a.suite.backend.into()).tests(a.tests);
    config.abort_on_first_failure = a.abort_on_failure;
    config.trace_path = a.trace_out.clone();
    config.validate()?;
    let mut factory = SocketFactory::new(&config, options)?;
    let report = run_suite(spec, &config, &mut factory)?;
    write!(out, "{report}")?;
    if report.all_passed() {
        return Ok(EXIT_PASS);
    }
    let path = failures_path(a.trace_out.as_deref(), seed);
    let text: String = report
        .failures
        .iter()
        .map(|r| r.trace.to_string())
        .collect();
    fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    writeln!(
        out,
        "{} failing trace(s) written to {}",
        report.failures.len(),
        path.display()
    )?;
    Ok(EXIT_FAIL)
}

/// Where failing traces go: next to `--trace-out`, or in the working
/// directory.
pub fn failures_path(trace_out: Option<&Path>, seed: u64) -> PathBuf {
    match trace_out {
        Some(p) => {
            let mut s = p.as_os_str().to_owned();
            s.push(".failures");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("netmbt-failures-{seed}.trace")),
    }
}

fn failing_step(trace: &Trace) -> Option<u64> {
    match &trace.verdict {
        Verdict::Fail { failing_step, .. } => *failing_step,
        Verdict::Pass => None,
    }
}

fn cmd_replay(a: &ReplayArgs, out: &mut dyn Write) -> Result<u8, Fatal> {
    let path = a
        .replay_flag
        .as_ref()
        .or(a.path.as_ref())
        .expect("clap requires a path");
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let traces = parse_traces(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if traces.is_empty() {
        return Err(Fatal(format!("{} holds no traces", path.display())));
    }
    let catalog = Catalog::new();
    let options = a.suite.options()?;
    let mut diverged = 0;
    for trace in &traces {
        let name = match &a.model {
            Some(m) => m.as_str(),
            None => trace
                .root_model()
                .ok_or_else(|| Fatal(format!("test {} has no records", trace.test_index)))?,
        };
        let spec = catalog_spec(&catalog, name)?;
        let config = a.suite.config(trace.suite_seed, trace.backend);
        config.validate()?;
        let mut factory = SocketFactory::new(&config, options)?;
        match replay(trace, spec, &config, &mut factory) {
            Ok(run) => {
                let at = failing_step(&run.trace)
                    .map(|s| format!(" at step {s}"))
                    .unwrap_or_default();
                writeln!(
                    out,
                    "replay seed={} test={}: reproduced {} steps, verdict {}{at}",
                    trace.suite_seed,
                    trace.test_index,
                    run.trace.records.len(),
                    verdict_word(&run.trace.verdict),
                )?;
            }
            Err(ReplayError::Divergence(d)) => {
                diverged += 1;
                writeln!(
                    out,
                    "replay seed={} test={}: {d}",
                    trace.suite_seed, trace.test_index
                )?;
            }
            Err(ReplayError::Suite(e)) => return Err(e.into()),
        }
    }
    Ok(if diverged == 0 { EXIT_PASS } else { EXIT_FAIL })
}

fn verdict_word(v: &Verdict) -> &'static str {
    if v.is_pass() {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_export_dot(model: &str, out: &mut dyn Write) -> Result<u8, Fatal> {
    let catalog = Catalog::new();
    let spec = catalog_spec(&catalog, model)?;
    write!(out, "{}", export_dot(spec))?;
    Ok(EXIT_PASS)
}
