use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use young_core::config::{RunConfig, Stage};
use young_core::pipeline;

#[derive(Parser)]
#[command(name = "ystruct", version, about = "Build and verify Young structures for the built-in maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Map used when no configuration file is given.
    #[arg(long, global = true)]
    map: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    plots: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Rectangle net.
    BuildNet,
    /// Filtration checks on a random curve corpus.
    Filtrate,
    /// Auxiliary partitions on every rectangle.
    Partition,
    /// Refined return-time partition on the base rectangle.
    Refine,
    /// Axiom verification.
    Verify,
    /// Ergodic statistics.
    Stats,
    /// Rewrite reports from existing stage records.
    Report,
    /// Every stage in order.
    All,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::BuildNet => vec![Stage::Net],
            Command::Filtrate => vec![Stage::Filtrate],
            Command::Partition => vec![Stage::Partition],
            Command::Refine => vec![Stage::Refine],
            Command::Verify => vec![Stage::Verify],
            Command::Stats => vec![Stage::Stats],
            Command::Report => vec![],
            Command::All => Stage::ALL.to_vec(),
        }
    }
}

fn config(cli: &Cli) -> young_core::Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::parse(&std::fs::read_to_string(p)?)?,
        None => RunConfig::for_map(c.map.as_deref().unwrap_or("solenoid")),
    };
    if let (Some(m), Some(_)) = (&c.map, &c.config) {
        cfg.set("map", m)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    cfg.plots |= c.plots;
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| young_core::YoungError::Config(format!("override '{kv}' is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.stages = cli.command.stages();
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            let rec = pipeline::ErrorRecord { stage: None, error: e.to_string() };
            if let Some(out) = &cli.common.out {
                let _ = std::fs::create_dir_all(out);
                let _ = std::fs::write(out.join("error.json"), serde_json::to_string_pretty(&rec).unwrap_or_default());
            }
            return ExitCode::from(2);
        }
    };
    match pipeline::execute(&cfg) {
        Ok(r) => {
            println!("{}: report written to {}", r.map, cfg.out.join("report.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
