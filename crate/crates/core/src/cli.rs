//! Command-line front end. `run` takes the argument list and output sinks so
//! the binary and the tests share one code path.
//!
//! Exit codes: 0 success, 1 failed verification or runtime failure,
//! 2 configuration, schema or input errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::error::Error;
use crate::fisher::{check_theorem1, fisher_mc, identity_checks, FisherEstimate, MatchReport};
use crate::mle::fit;
use crate::rates::{run as run_rates, with_workers};
use crate::rng::StreamId;
use crate::stabilizer::stabilizer_default;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const RATES_CSV: &str = "rates.csv";
pub const RATES_SUMMARY: &str = "rates_summary.json";

// top-level streams under the master seed, one per subcommand
const STREAM_SAMPLE: u64 = 0;
const STREAM_ESTIMATE: u64 = 1;
const STREAM_FISHER: u64 = 2;
const STREAM_VERIFY: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "mra-lab", about = "Estimation experiments for group-orbit Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file (sample, estimate, fisher, verify-geometry) or directory (rates).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "MRA_LAB_WORKERS")]
    workers: Option<usize>,

    /// Dataset to estimate from (CSV or binary).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from the model at theta_star.
    Sample,
    /// Fit the MLE to a dataset and print the result as JSON.
    Estimate,
    /// Monte Carlo Fisher information at theta_star and its null-space check.
    Fisher,
    /// Score and derivative identity checks at theta_star.
    VerifyGeometry,
    /// Convergence-rate experiment over a grid of sample sizes.
    Rates,
    /// Print the version and group ordering convention.
    Version,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DegenerateEigensolve { .. } | Error::SingularFisher => Failure::Runtime(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

#[derive(Serialize, serde::Deserialize)]
pub struct FisherOutput {
    pub fisher: FisherEstimate,
    pub null_space_check: MatchReport,
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Failure::Runtime(e.to_string())),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    if let Command::Version = cli.command {
        writeln!(stdout, "{}", crate::version_string()).map_err(|e| Failure::Runtime(e.to_string()))?;
        return Ok(EXIT_OK);
    }
    let cfg = load_config(cli)?;
    let _ = writeln!(stderr, "resolved config: {}", serde_json::to_string(&cfg).expect("config serializes"));
    let _ = writeln!(stderr, "seed: {}", cfg.seed);
    let root = StreamId::new(cfg.seed);
    let workers = cli.workers;
    let out = cli.out.as_deref();

    match cli.command {
        Command::Version => unreachable!(),
        Command::Sample => {
            let n = cfg.sample.as_ref().ok_or_else(|| Failure::Config("missing `sample` block".into()))?.n;
            let data = cfg.model()?.sample(n, &mut root.child(STREAM_SAMPLE).rng());
            match out {
                Some(path) => data.write_path(path)?,
                None => data.write_csv(&mut *stdout)?,
            }
            Ok(EXIT_OK)
        }
        Command::Estimate => {
            let path = cli.data.as_ref().ok_or_else(|| Failure::Config("--data is required".into()))?;
            let data = Dataset::read_path(path)?;
            let group = cfg.build_group()?;
            let res = fit(&group, &data, &cfg.fit_config(), &root.child(STREAM_ESTIMATE).rng())?;
            emit(&to_json(&res), out, stdout)?;
            Ok(EXIT_OK)
        }
        Command::Fisher => {
            let model = cfg.model()?;
            let report = stabilizer_default(model.group(), model.theta())?;
            let fisher = with_workers(workers, || fisher_mc(&model, cfg.fisher_n_mc(), &root.child(STREAM_FISHER).rng()))??;
            let null_space_check = check_theorem1(&fisher, &report)?;
            let pass = null_space_check.pass;
            emit(&to_json(&FisherOutput { fisher, null_space_check }), out, stdout)?;
            Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::VerifyGeometry => {
            let model = cfg.model()?;
            let report = stabilizer_default(model.group(), model.theta())?;
            let n_mc = cfg.fisher.as_ref().map_or(100_000, |f| f.n_mc);
            let suite =
                with_workers(workers, || identity_checks(&model, &report, n_mc, &root.child(STREAM_VERIFY).rng()))??;
            for c in suite.checks.iter().filter(|c| !c.pass) {
                let _ = writeln!(stderr, "check failed: {} ({})", c.name, c.detail);
            }
            emit(&to_json(&suite), out, stdout)?;
            Ok(if suite.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Rates => {
            let rc = cfg.rate_config()?;
            let dir = out.ok_or_else(|| Failure::Config("--out DIR is required for rates".into()))?;
            let result = run_rates(&rc, workers)?;
            std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
            let csv = dir.join(RATES_CSV);
            std::fs::write(&csv, result.csv_string()).map_err(|e| Failure::Runtime(e.to_string()))?;
            let summary = to_json(&result.summary_json());
            std::fs::write(dir.join(RATES_SUMMARY), &summary).map_err(|e| Failure::Runtime(e.to_string()))?;
            stdout.write_all(summary.as_bytes()).map_err(|e| Failure::Runtime(e.to_string()))?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_CHECK_FAILED
        }
    }
}
