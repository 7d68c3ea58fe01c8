//! Command-line front end: run communication-design pipelines, merge their
//! reports into comparison tables, and synthesize benchmark scenarios.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use overmix::pipeline::{compare_report, run_pipeline, PipelineConfig, RunReport};
use overmix::underlay::{generate_scenario, GeneratorKind};

#[derive(Parser)]
#[command(
    name = "overmix",
    version,
    about = "Design and evaluate communication plans for decentralized learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every algorithm in a config and write report.json plus traces.
    ///
    /// Exits with 0 only when all requested algorithms completed.
    Run {
        /// Pipeline configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Merge run reports from the same scenario into a ranking table.
    Compare {
        /// report.json files produced by `run`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Where to write the table.
        #[arg(long, default_value = "comparison.csv")]
        out: PathBuf,
    },
    /// Synthesize a benchmark scenario and print or save its JSON.
    GenScenario {
        /// Which topology family to generate.
        #[arg(long)]
        generator: GeneratorArg,
        /// Seed for the generator's randomness.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum GeneratorArg {
    /// Rooftop mesh: 33 nodes, 187 one-megabit directed links.
    RoofnetLike,
    /// Backhaul grid: 19 nodes, 56 directed links at 0.4 Gbps.
    IabLike,
}

impl From<GeneratorArg> for GeneratorKind {
    fn from(arg: GeneratorArg) -> Self {
        match arg {
            GeneratorArg::RoofnetLike => GeneratorKind::RoofnetLike,
            GeneratorArg::IabLike => GeneratorKind::IabLike,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run { config, out, seed } => run(&config, out, seed),
        Command::Compare { reports, out } => compare(&reports, &out),
        Command::GenScenario { generator, seed, out } => gen_scenario(generator, seed, out),
    }
}

fn run(config_path: &PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<ExitCode> {
    let mut config = PipelineConfig::load(config_path)
        .with_context(|| format!("loading config {}", config_path.display()))?;
    if let Some(dir) = out {
        config.out_dir = dir;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }

    let report = run_pipeline(&config).context("running the pipeline")?;
    for entry in &report.entries {
        match (&entry.error, &entry.report) {
            (None, Some(rep)) => match rep.time_to_target_s {
                Some(t) => println!("{:<12} ok  time-to-target {t:.6} s", entry.algorithm.name()),
                None => println!("{:<12} ok  target not reached", entry.algorithm.name()),
            },
            (Some(err), _) => println!("{:<12} failed: {err}", entry.algorithm.name()),
            (None, None) => println!("{:<12} failed: no report", entry.algorithm.name()),
        }
    }
    println!("report: {}", config.out_dir.join("report.json").display());
    Ok(if report.all_completed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn compare(paths: &[PathBuf], out: &PathBuf) -> anyhow::Result<ExitCode> {
    let reports = paths
        .iter()
        .map(|p| RunReport::load(p).with_context(|| format!("loading report {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let table = compare_report(&reports).context("building the comparison table")?;
    fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    println!("comparison: {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn gen_scenario(
    generator: GeneratorArg,
    seed: u64,
    out: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let file = generate_scenario(generator.into(), seed);
    let mut json = serde_json::to_string_pretty(&file).context("serializing the scenario")?;
    json.push('\n');
    match out {
        Some(path) => {
            fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
            println!("scenario: {}", path.display());
        }
        None => print!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}
