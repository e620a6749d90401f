use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cosr_core::caching::{AnchorStrategy, CacheLayout};
use cosr_core::field::Scenario;
use cosr_core::harness::{
    export_dataset, read_records_csv, run_sweep, solve_instance, summarize, write_sweep_outputs,
    DatasetConfig, ExperimentConfig, InstanceSpec, Method, Summary,
};
use cosr_core::solver::{write_trace_csv, SolveOptions};

#[derive(Parser)]
#[command(
    name = "cosr",
    version,
    about = "Compressed sensor caching experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic deployment or a training dataset.
    Generate {
        #[command(subcommand)]
        what: Generate,
    },
    /// Recover one window with one method.
    Solve(SolveArgs),
    /// Run a seeded sweep and write its records and summary.
    Sweep(SweepArgs),
    /// Summarize a records CSV.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum Generate {
    /// Sensor positions, source trajectories, observations and coverage as CSV.
    Field {
        /// Experiment config supplying the deployment parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Windowed samples split into train, validation and test files.
    Dataset {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        deployments: Option<usize>,
        /// Print the effective dataset config as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Experiment config supplying deployment and solver parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Last instant of the window; defaults to the horizon.
    #[arg(long)]
    end_time: Option<usize>,
    #[arg(long, default_value = "cosr-aa")]
    method: String,
    /// Measurements per cache per instant.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Anchors per cache pair.
    #[arg(long, default_value_t = 25)]
    q: usize,
    #[arg(long, default_value = "pairwise-union")]
    strategy: String,
    /// Per-iteration residuals and NMSE as CSV (cosr-aa only).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Every delivered anchor message as CSV (cosr-aa only).
    #[arg(long)]
    messages: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Records CSV written by `sweep`.
    records: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_experiment(path: Option<&Path>) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn generate_field(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let dep = load_experiment(config)?.deployment;
    dep.validate()?;
    let sc = Scenario::generate(&dep.scenario(), seed)?;
    let layout = CacheLayout::assign(&sc.field, dep.n_caches)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    sc.field.write_csv(create(&out.join("sensors.csv"))?)?;
    sc.trajectories
        .write_csv(create(&out.join("sources.csv"))?)?;
    sc.write_observations_csv(create(&out.join("observations.csv"))?)?;
    layout.write_coverage_csv(create(&out.join("coverage.csv"))?)?;
    println!("wrote deployment {seed} to {}", out.display());
    Ok(())
}

fn generate_dataset(
    config: Option<&Path>,
    out: Option<PathBuf>,
    deployments: Option<usize>,
    print: bool,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            DatasetConfig::from_toml_str(&text)?
        }
        None => DatasetConfig::default(),
    };
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(d) = deployments {
        cfg.n_deployments = d;
    }
    if print {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let manifest = export_dataset(&cfg, &cfg.output_dir)?;
    for s in &manifest.splits {
        println!("{}: {} samples", s.split.name(), s.samples);
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let cfg = load_experiment(args.config.as_deref())?;
    if args.print_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let method: Method = args.method.parse()?;
    let strategy: AnchorStrategy = args.strategy.parse()?;
    let spec = InstanceSpec {
        seed: args.seed,
        end_time: args.end_time.unwrap_or(cfg.deployment.horizon),
        m: args.m,
        q: args.q,
        strategy,
    };
    let options = SolveOptions {
        trace: args.trace.is_some(),
        message_log: args.messages.is_some(),
        truth: None,
    };
    if method != Method::CosrAa && (options.trace || options.message_log) {
        bail!("--trace and --messages need --method cosr-aa");
    }
    let rep = solve_instance(&cfg.deployment, &cfg.solver, &spec, method, &options)?;
    if let Some(path) = &args.trace {
        write_trace_csv(&rep.trace, create(path)?)?;
    }
    if let (Some(path), Some(log)) = (&args.messages, &rep.log) {
        log.write_csv(create(path)?)?;
    }
    let mut out = serde_json::json!({
        "method": method.name(),
        "seed": spec.seed,
        "end_time": spec.end_time,
        "m": spec.m,
        "q": spec.q,
        "strategy": strategy.name(),
        "nmse": rep.nmse,
        "iterations": rep.iterations,
        "converged": rep.converged,
    });
    if let Some(comm) = &rep.comm {
        out["comm"] = serde_json::to_value(comm)?;
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = load_experiment(args.config.as_deref())?;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if args.print_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let records = run_sweep(&cfg)?;
    let out = write_sweep_outputs(&cfg.output_dir, &cfg.name, &records)?;
    println!("{} records -> {}", records.len(), out.records.display());
    println!("summary -> {}", out.summary.display());
    Ok(())
}

fn write_curves_csv(summary: &Summary, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "point",
        "x",
        "m",
        "q",
        "strategy",
        "mean_nmse",
        "std_nmse",
        "seeds",
    ])?;
    for c in &summary.curves {
        for p in &c.points {
            w.write_record(&[
                c.method.name().to_string(),
                p.point.to_string(),
                p.x.to_string(),
                p.m.to_string(),
                p.q.to_string(),
                p.strategy.name().to_string(),
                p.mean_nmse.to_string(),
                p.std_nmse.to_string(),
                p.seeds.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let file =
        File::open(&args.records).with_context(|| format!("opening {}", args.records.display()))?;
    let records =
        read_records_csv(file).with_context(|| format!("parsing {}", args.records.display()))?;
    let name = args
        .records
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("sweep");
    let summary = summarize(name, &records);
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    match args.format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut sink, &summary)?;
            writeln!(sink)?;
        }
        ReportFormat::Csv => write_curves_csv(&summary, sink)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            what: Generate::Field { config, seed, out },
        } => generate_field(config.as_deref(), seed, &out),
        Command::Generate {
            what:
                Generate::Dataset {
                    config,
                    out,
                    deployments,
                    print_config,
                },
        } => generate_dataset(config.as_deref(), out, deployments, print_config),
        Command::Solve(args) => solve(args),
        Command::Sweep(args) => sweep(args),
        Command::Report(args) => report(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
