//! `qkd`: batch runner for simulations, full protocol runs and sweeps.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qkd_core::config::{ConfigError, SessionConfig};
use qkd_core::pipeline::{self, PipelineError};
use qkd_core::sim::simulate_session;
use qkd_core::TimePs;

const EXIT_ABORTED: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_CONFIG: u8 = 65;
const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(name = "qkd", version, about = "Free-space QKD link simulator and post-processing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one session and write alice_log.csv, bob_log.csv, truth.csv.
    Simulate(Common),
    /// Simulate, run both endpoints over loopback, write logs, transcript and summary.
    Pipeline(Common),
    /// QBER and sift rate per acceptance window, from one simulated log pair.
    SweepWindow {
        #[command(flatten)]
        common: Common,
        /// Full window widths, e.g. `1ns,5ns,10ns` (bare numbers are ps).
        #[arg(long, value_name = "CSVLIST", value_delimiter = ',', value_parser = parse_time, required = true)]
        windows: Vec<TimePs>,
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
    },
    /// BB84, decoy and EPCD key rates per mean photon number.
    SweepMu {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "CSVLIST", value_delimiter = ',', required = true)]
        mu: Vec<f64>,
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
    },
    /// Source leakage from a characterization CSV (`a,p_a,<outcome>...`).
    Leakage {
        input: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
}

fn parse_time(s: &str) -> Result<TimePs, String> {
    let s = s.trim();
    let (num, scale) = if let Some(v) = s.strip_suffix("ns") {
        (v, 1_000.0)
    } else if let Some(v) = s.strip_suffix("us") {
        (v, 1_000_000.0)
    } else if let Some(v) = s.strip_suffix("ps") {
        (v, 1.0)
    } else {
        (s, 1.0)
    };
    let x: f64 = num.trim().parse().map_err(|_| format!("not a duration: {s:?}"))?;
    let ps = (x * scale).round();
    if !(ps.is_finite() && ps >= 0.0) {
        return Err(format!("not a duration: {s:?}"));
    }
    Ok(TimePs(ps as i64))
}

#[derive(Debug)]
enum Failure {
    Aborted(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Pipeline(e.into())
    }
}

fn load_config(common: &Common) -> Result<SessionConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => SessionConfig::load(path)?,
        None => SessionConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|source| PipelineError::Io { path, source })
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate(common) => {
            let cfg = load_config(&common)?;
            let sim = simulate_session(&cfg, cfg.seed(), cfg.run.n_slots)?;
            pipeline::write_simulation(&sim, &common.out)?;
            println!("simulated {} slots, {} detections -> {}", cfg.run.n_slots, sim.bob_log.len(), common.out.display());
        }
        Command::Pipeline(common) => {
            let cfg = load_config(&common)?;
            let result = pipeline::run_pipeline(&cfg)?;
            pipeline::write_run(&result, &common.out)?;
            let s = &result.summary;
            println!(
                "sift_rate={:.0} bps qber={} secure_rate={:.0} bps blocks={} discarded={} verdict={}",
                s.sift_rate_bps,
                s.qber.map_or("n/a".to_string(), |q| format!("{q:.4}")),
                s.secure_rate_bps,
                s.blocks,
                s.discarded_blocks,
                s.verdict
            );
            if !s.verified() {
                return Err(Failure::Aborted(s.verdict.clone()));
            }
        }
        Command::SweepWindow { common, windows, jobs } => {
            let cfg = load_config(&common)?;
            let rows = pipeline::sweep_windows(&cfg, &windows, jobs)?;
            pipeline::write_window_csv(create(&common.out, "sweep_window.csv")?, &rows).map_err(PipelineError::from)?;
            println!("{} windows -> {}", rows.len(), common.out.join("sweep_window.csv").display());
        }
        Command::SweepMu { common, mu, jobs } => {
            let cfg = load_config(&common)?;
            let rows = pipeline::sweep_mu(&cfg, &mu, jobs)?;
            pipeline::write_mu_csv(create(&common.out, "sweep_mu.csv")?, &rows).map_err(PipelineError::from)?;
            println!("{} points -> {}", rows.len(), common.out.join("sweep_mu.csv").display());
        }
        Command::Leakage { input, out } => {
            let file = File::open(&input).map_err(|source| PipelineError::Io { path: input.clone(), source })?;
            let c = pipeline::read_characterization(file)?;
            let report = pipeline::leakage_report(&c)?;
            pipeline::write_leakage_csv(create(&out, "leakage.csv")?, &report).map_err(PipelineError::from)?;
            let s = report.security_parameter.map_or("unbounded".to_string(), |s| s.to_string());
            let tag = if report.leakage.experimental { " (experimental: more than two outcomes)" } else { "" };
            println!("leakage={} bits security_parameter={s}{tag}", report.leakage.bits);
        }
    }
    Ok(())
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Aborted(_) => EXIT_ABORTED,
        Failure::Pipeline(PipelineError::Config(_)) => EXIT_CONFIG,
        Failure::Pipeline(PipelineError::Usage(_)) => EXIT_USAGE,
        Failure::Pipeline(PipelineError::Io { .. } | PipelineError::Csv(_) | PipelineError::Log(_)) => EXIT_IO,
        Failure::Pipeline(_) => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Aborted(v) => eprintln!("session {v}"),
                Failure::Pipeline(PipelineError::Config(c)) => {
                    eprintln!("invalid configuration:");
                    for issue in &c.issues {
                        eprintln!("  {issue}");
                    }
                }
                Failure::Pipeline(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_parse_with_units() {
        assert_eq!(parse_time("10ns"), Ok(TimePs(10_000)));
        assert_eq!(parse_time("2.5ns"), Ok(TimePs(2_500)));
        assert_eq!(parse_time("700"), Ok(TimePs(700)));
        assert_eq!(parse_time("1us"), Ok(TimePs(1_000_000)));
        assert!(parse_time("-1ns").is_err());
        assert!(parse_time("ten").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
