use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use toolforge_cli::{analyze, domains, envs, episodes, pipeline, report, simulate, CliError, RunConfig, SimMode};

#[derive(Debug, Parser)]
#[command(name = "toolforge", version, about = "Synthetic tool-use environments, episodes and rollout simulation")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Simulation mode; overrides the config's.
    #[arg(long, global = true, value_enum)]
    mode: Option<SimMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate domain tool graphs and validate them.
    GenDomains,
    /// Assemble environments and tasks from the generated domains.
    BuildEnvs,
    /// Run the skill by noise-level episode grid and the noise curriculum.
    RunEpisodes,
    /// Simulate synchronous and asynchronous rollout.
    Simulate,
    /// Budget, curriculum schedule, selection and scaling analyses.
    Analyze,
    /// Write report.md from existing artifacts.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Command::Report = cli.command {
        report::report(&cli.out)?;
        return Ok(format!("wrote {}", cli.out.join(report::FILE).display()));
    }
    let seed = config.resolve_seed(cli.seed)?;
    let mode = cli.mode.unwrap_or(config.simulation.mode);
    let out = &cli.out;
    Ok(match cli.command {
        Command::GenDomains => {
            let r = domains::gen_domains(&config, seed, out)?;
            format!("generated {} domains", r.count)
        }
        Command::BuildEnvs => {
            let r = envs::build_envs(&config, seed, out)?;
            format!("built {} environments over {} domains", r.count, r.domains)
        }
        Command::RunEpisodes => {
            let r = episodes::run_episodes(&config, seed, out)?;
            format!("ran {} episodes over {} environments", r.episodes, r.envs)
        }
        Command::Simulate => {
            let r = simulate::simulate(&config, seed, mode, out)?;
            match r.speedup {
                Some(s) => format!("simulated {} modes, async speedup {s:.3}", r.runs.len()),
                None => format!("simulated {} mode", r.runs.len()),
            }
        }
        Command::Analyze => {
            let r = analyze::analyze(&config, out)?;
            format!("analyzed {} tasks", r.tasks)
        }
        Command::Pipeline => {
            pipeline(&config, seed, mode, out)?;
            format!("pipeline finished in {}", out.display())
        }
        Command::Report => unreachable!(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli).context("toolforge failed") {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
