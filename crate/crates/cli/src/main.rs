use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use yarnshell::error::Error;
use yarnshell::pipeline::{export_bundle, Pipeline, RunConfig, Stage};

/// Yarn-level homogenization of woven fabrics into orthotropic shells.
#[derive(Parser)]
#[command(name = "yarnshell", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relax the periodic yarn pattern to its rest state.
    Relax(RunArgs),
    /// Sample the homogenized energy over the deformation grid.
    Homogenize(RunArgs),
    /// Fit shell material parameters to the sampled energies.
    Fit(RunArgs),
    /// Simulate uniaxial stretch tests at the configured cut angles.
    StretchTest(RunArgs),
    /// Drape a swatch under gravity over the configured obstacle.
    Drape(RunArgs),
    /// Run every stage in order.
    Pipeline(RunArgs),
    /// Collect plot-ready CSV tables from finished runs.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML, or JSON by extension).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads for homogenization; all cores by default.
    #[arg(short, long)]
    jobs: Option<usize>,
    /// Accept upstream artifacts produced under a different config.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Finished run directories, optionally labelled as `label=dir`.
    #[arg(required = true)]
    runs: Vec<String>,
    /// Directory receiving the CSV tables.
    #[arg(short, long, default_value = "export")]
    out: PathBuf,
}

fn pipeline(args: &RunArgs) -> Result<Pipeline, Error> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if args.jobs == Some(0) {
        return Err(Error::Config { field: "--jobs".into(), reason: "must be at least 1".into() });
    }
    let mut p = Pipeline::new(config)?;
    p.force = args.force;
    p.jobs = args.jobs;
    Ok(p)
}

fn run_stage(stage: Stage, args: &RunArgs) -> Result<(), Error> {
    let p = pipeline(args)?;
    p.run_stage(stage)?;
    println!("{stage}: artifacts in {}", p.output_dir().display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Relax(a) => run_stage(Stage::Relax, a),
        Command::Homogenize(a) => run_stage(Stage::Homogenize, a),
        Command::Fit(a) => run_stage(Stage::Fit, a),
        Command::StretchTest(a) => run_stage(Stage::StretchTest, a),
        Command::Drape(a) => run_stage(Stage::Drape, a),
        Command::Pipeline(args) => {
            let manifest = pipeline(args)?.run_all()?;
            for (stage, records) in &manifest.stages {
                for r in records {
                    println!("{stage}\t{}\t{}", r.sha256, r.path);
                }
            }
            Ok(())
        }
        Command::Export(args) => {
            let runs: Vec<(String, PathBuf)> = args.runs.iter().map(|r| parse_run(r)).collect();
            for path in export_bundle(&runs, &args.out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

/// `label=dir`, or a bare directory labelled by its final component.
fn parse_run(arg: &str) -> (String, PathBuf) {
    if let Some((label, dir)) = arg.split_once('=') {
        return (label.to_string(), PathBuf::from(dir));
    }
    let dir = PathBuf::from(arg);
    let label = dir.file_name().map_or_else(|| arg.to_string(), |n| n.to_string_lossy().into_owned());
    (label, dir)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Load { .. } | Error::InvalidInput(_) | Error::Json(_) => 2,
        Error::Convergence { .. } => 3,
        Error::StageDependency { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("YARNSHELL_LOG", "info")).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
