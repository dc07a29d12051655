use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mug_cli::commands::{self, EXIT_FATAL, EXIT_OK};
use mug_cli::{Overrides, RunConfig};
use mug_core::bench::{synthetic_items, write_normalized};

#[derive(Parser)]
#[command(name = "mug", version, about = "Undercover-detection debates over visual questions")]
struct Cli {
    /// More logging (-v info, -vv debug). RUST_LOG wins when set.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// normalized-lines, pope-native or hallusion-native.
    #[arg(long)]
    format: Option<String>,
    /// single, self_refine, mad_vote, mad_judge, mug or all.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    agent_endpoint: Option<String>,
    #[arg(long)]
    scoring_endpoint: Option<String>,
    #[arg(long)]
    edit_endpoint: Option<String>,
    /// Any config key, e.g. `--set game.t_max=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> mug_core::Result<RunConfig> {
        let o = Overrides {
            dataset: self.dataset.clone(),
            format: self.format.clone(),
            protocol: self.protocol.clone(),
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            agent_endpoint: self.agent_endpoint.clone(),
            scoring_endpoint: self.scoring_endpoint.clone(),
            edit_endpoint: self.edit_endpoint.clone(),
            set: self.set.clone(),
        };
        RunConfig::load(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run protocols over a dataset; writes transcripts and report.json.
    Run(ConfigArgs),
    /// Monte Carlo over a scripted scenario file.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from a directory of transcripts.
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one image pair and print the gate decision.
    EditGate {
        factual: PathBuf,
        counterfactual: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Check every configured backend.
    Doctor(ConfigArgs),
    /// Write a synthetic fact-set dataset in the normalized format.
    Synth {
        #[arg(long, default_value_t = 20)]
        items: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        out: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> mug_core::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    if let Some(path) = out {
        std::fs::write(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> mug_core::Result<i32> {
    match cli.command {
        Command::Run(args) => {
            let summary = commands::cmd_run(&args.load()?)?;
            print!("{}", summary.report.to_json()?);
            eprintln!("wrote {} transcripts", summary.transcripts.len());
            Ok(summary.exit_code)
        }
        Command::Simulate { scenario, workers, out } => {
            print_json(&commands::cmd_simulate(&scenario, workers)?, out.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Report { dir, out } => {
            let report = commands::cmd_report(&dir)?;
            if let Some(path) = &out {
                std::fs::write(path, report.to_json()?)?;
            }
            print!("{}", report.to_json()?);
            Ok(EXIT_OK)
        }
        Command::EditGate {
            factual,
            counterfactual,
            config,
        } => {
            print_json(
                &commands::cmd_edit_gate(&config.load()?, &factual, &counterfactual)?,
                None,
            )?;
            Ok(EXIT_OK)
        }
        Command::Doctor(args) => {
            let (lines, code) = commands::cmd_doctor(&args.load()?)?;
            for l in &lines {
                println!("{:<8} {:<40} {}", l.role, l.endpoint, l.status);
            }
            Ok(code)
        }
        Command::Synth { items, seed, out } => {
            write_normalized(&synthetic_items(items, seed), &out)?;
            eprintln!("wrote {items} items to {}", out.display());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into());
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FATAL as u8)
        }
    }
}
