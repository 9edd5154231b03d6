use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use misc_uq::config::LoadedConfig;
use misc_uq::error::CliResult;
use misc_uq::pipeline::{self, Context};

#[derive(Parser)]
#[command(
    name = "misc-uq",
    version,
    about = "Multi-index stochastic collocation calibration and forward UQ"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "pipeline.toml")]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Oracle processes run in parallel.
    #[arg(long, global = true)]
    lanes: Option<usize>,
    /// Only warnings and errors on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the calibration surrogate.
    Build,
    /// MAP estimate and Laplace posterior from the stored surrogate.
    Calibrate,
    /// Prior and posterior predictive bands.
    Forward,
    /// Collect existing artifacts into one report.
    Report,
    /// Write synthetic observations at the configured truth.
    Synthesize,
    /// build, calibrate, forward and report in sequence.
    Run,
}

fn context(cli: &Cli) -> CliResult<Context> {
    let cfg = LoadedConfig::from_file(&cli.config)?;
    Context::new(cfg, cli.out.clone(), cli.seed, cli.lanes)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match cli.command {
        Cmd::Build => {
            pipeline::cmd_build(&context(cli)?)?;
        }
        Cmd::Calibrate => {
            let (_, table) = pipeline::cmd_calibrate(&context(cli)?)?;
            print!("{table}");
        }
        Cmd::Forward => {
            let f = pipeline::cmd_forward(&context(cli)?)?;
            println!("uncertainty reduction: {:.2}%", f.reduction);
        }
        Cmd::Report => {
            let out = match &cli.out {
                Some(o) => o.clone(),
                None => {
                    let cfg = LoadedConfig::from_file(&cli.config)?;
                    cfg.resolve(&cfg.config.output_dir)
                }
            };
            print!("{}", pipeline::cmd_report(&out)?);
        }
        Cmd::Synthesize => {
            let ctx = context(cli)?;
            pipeline::cmd_synthesize(&ctx)?;
            println!("{}", ctx.path(pipeline::OBSERVATIONS_FILE).display());
        }
        Cmd::Run => {
            let ctx = context(cli)?;
            let r = pipeline::cmd_run(&ctx)?;
            println!("uncertainty reduction: {:.2}%", r.forward.reduction);
            println!("report: {}", ctx.path(pipeline::REPORT_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
