//! `platoon`: run scenarios and sweeps, check car-following models, and
//! validate scenario files.
//!
//! Exit status: 0 success, 1 invalid input, 2 run aborted by a collision,
//! 3 internal error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use platoon_core::cfm::eligibility::{check_eligibility, probe_grid};
use platoon_core::config::{ConfigError, OutputFormat, ScenarioConfig};
use platoon_core::sim::{run, SimError, SimulationTrace};
use platoon_core::sweep::SweepSpec;

const OUT_DIR_ENV: &str = "PLATOON_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "out";

#[derive(Parser)]
#[command(name = "platoon", version, about = "Platoon formation behind a receding-horizon CAV")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress progress and summary output.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace and summary.
    Run {
        config: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run a parameter sweep and write the sweep table.
    Sweep {
        spec: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Report whether the configured car-following model is eligible.
    CheckCfm {
        config: PathBuf,
        /// Number of equilibrium probes.
        #[arg(long, default_value_t = 10)]
        probes: usize,
        #[arg(long, default_value_t = 10.0)]
        v_lo: f64,
        #[arg(long, default_value_t = 29.0)]
        v_hi: f64,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Parse and validate a scenario file, then print it with defaults filled in.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct OutputArgs {
    /// Overrides the scenario seed (the base seed for sweeps).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config, then $PLATOON_OUT_DIR, then ./out.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Keep every n-th trace row.
    #[arg(long)]
    downsample: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Aborted(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Aborted(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Aborted(e) | Failure::Internal(e) => e,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Internal(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config, out } => run_scenario(config, out, cli.quiet),
        Command::Sweep { spec, out } => run_sweep(spec, out, cli.quiet),
        Command::CheckCfm {
            config,
            probes,
            v_lo,
            v_hi,
            json,
        } => check_cfm(config, *probes, *v_lo, *v_hi, *json, cli.quiet),
        Command::Validate { config } => validate(config, cli.quiet),
    }
}

/// Applies command-line overrides to the config's output section.
fn apply_output_args(config: &mut ScenarioConfig, args: &OutputArgs) {
    if let Some(seed) = args.seed {
        config.init.seed = seed;
    }
    if let Some(format) = args.format {
        config.output.format = format.into();
    }
    if let Some(n) = args.downsample {
        config.output.downsample = n;
    }
}

fn output_dir(config: &ScenarioConfig, args: &OutputArgs) -> PathBuf {
    args.out_dir
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_trace(dir: &Path, trace: &SimulationTrace, config: &ScenarioConfig) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &trace.summary)?;
    let trace_path = match config.output.format {
        OutputFormat::Csv => {
            let path = dir.join("trace.csv");
            let mut w = create_file(&path)?;
            trace.write_csv(&mut w, config.output.downsample)?;
            w.flush()?;
            path
        }
        OutputFormat::Json => {
            let path = dir.join("trace.json");
            let every = config.output.downsample.max(1);
            let last = trace.rows.len().saturating_sub(1);
            let rows: Vec<_> = trace
                .rows
                .iter()
                .enumerate()
                .filter(|(i, _)| i % every == 0 || *i == last)
                .map(|(_, r)| r)
                .collect();
            write_json(&path, &rows)?;
            path
        }
    };
    Ok(vec![trace_path, summary_path])
}

fn run_scenario(path: &Path, args: &OutputArgs, quiet: bool) -> Result<(), Failure> {
    let mut config = ScenarioConfig::load(path)?;
    apply_output_args(&mut config, args);
    let scenario = config.resolve()?;
    let dir = output_dir(&config, args);
    let (trace, aborted) = match run(&scenario) {
        Ok(trace) => (trace, None),
        Err(SimError::Collision { trace, .. }) => {
            let reason = trace.summary.aborted.clone().unwrap_or_default();
            (*trace, Some(reason))
        }
        Err(SimError::Invalid(reason)) => return Err(Failure::Invalid(anyhow::anyhow!(reason))),
        Err(e) => return Err(Failure::Internal(e.into())),
    };
    let written = write_trace(&dir, &trace, &config)?;
    if !quiet {
        let s = &trace.summary;
        let formed = s
            .formation_time
            .map_or_else(|| "not formed".to_string(), |t| format!("formed at {t:.1} s"));
        println!(
            "{} N={} seed={}: {formed}, hard violations {}, rear-end violations {}, mean |u| {:.4}",
            s.model,
            s.n_vehicles,
            config.init.seed,
            s.violations.hard(),
            s.violations.rear_end,
            s.mean_abs_u_cav,
        );
        for p in &written {
            println!("wrote {}", p.display());
        }
    }
    match aborted {
        None => Ok(()),
        Some(reason) => Err(Failure::Aborted(anyhow::anyhow!("run aborted: {reason}; partial trace written"))),
    }
}

fn run_sweep(path: &Path, args: &OutputArgs, quiet: bool) -> Result<(), Failure> {
    let mut spec = SweepSpec::load(path)?;
    apply_output_args(&mut spec.base, args);
    spec.validate()?;
    let table = spec.run();
    let dir = output_dir(&spec.base, args);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let out = match spec.base.output.format {
        OutputFormat::Csv => {
            let path = dir.join("sweep.csv");
            let mut w = create_file(&path)?;
            table.write_csv(&mut w).context("writing sweep table")?;
            w.flush().context("writing sweep table")?;
            path
        }
        OutputFormat::Json => {
            let path = dir.join("sweep.json");
            write_json(&path, &table)?;
            path
        }
    };
    if !quiet {
        for r in &table.rows {
            let t = r
                .formation_time
                .map_or_else(|| "-".to_string(), |t| format!("{t:.1}"));
            println!(
                "{}={} rep={} seed={} {} t_p={t}",
                spec.parameter.key(),
                r.value,
                r.repetition,
                r.seed,
                r.status.as_str()
            );
        }
        match table.spearman() {
            Some(rho) => println!("spearman(value, formation time) = {rho:.3}"),
            None => println!("spearman(value, formation time) undefined"),
        }
        if let Some(spread) = table.formation_spread() {
            println!("formation time spread = {spread:.2} s");
        }
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn check_cfm(path: &Path, probes: usize, v_lo: f64, v_hi: f64, json: bool, quiet: bool) -> Result<(), Failure> {
    let config = ScenarioConfig::load(path)?;
    let scenario = config.resolve()?;
    let model = &scenario.model;
    let inputs = probe_grid(model, v_lo, v_hi, probes).map_err(|e| Failure::Invalid(e.into()))?;
    let report = check_eligibility(model, &inputs).map_err(|e| Failure::Invalid(e.into()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).context("encoding report")?);
    } else if !quiet {
        println!("{:>6} {:>9} {:>9} {:>9} {:>9}  {:<22} platoon string", "v", "gap", "f_gap", "f_rate", "f_speed", "signs");
        for p in &report.probes {
            println!(
                "{:>6.2} {:>9.3} {:>9.4} {:>9.4} {:>9.4}  {:<22} {:<7} {}",
                p.input.v,
                p.input.delta_p,
                p.partials.d_gap,
                p.partials.d_rate,
                p.partials.d_speed,
                format!("{:?}", p.rational).to_lowercase(),
                p.platoon_stable,
                p.string_stable,
            );
        }
        println!("{}: {}", report.model, report.verdict());
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Invalid(anyhow::anyhow!("{} is not eligible over [{v_lo}, {v_hi}]", report.model)))
    }
}

fn validate(path: &Path, quiet: bool) -> Result<(), Failure> {
    let config = ScenarioConfig::load(path)?;
    if !quiet {
        print!("{}", config.to_toml_string());
    }
    Ok(())
}
