use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use mocap_cli::pipeline::{self, Workspace};
use mocap_cli::{PipelineConfig, Result};

#[derive(Parser)]
#[command(name = "mocap", about = "Synthetic monocular capture pipeline", version)]
struct Cli {
    /// `pipeline/1` JSON configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: ground truth, cameras, detections.
    Synth,
    /// Monocular keypoint fit (initial motion).
    Fit,
    /// Multi-view keypoint fit of the reference cameras.
    SparseFit,
    /// Train the network on the monocular fit paired with the sparse-view fit.
    Train {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Correct the initial motion with a trained network.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Optimize the corrected motion against the monocular detections.
    Refine,
    /// Score every available stage against the ground truth.
    Eval,
    /// Every stage in order.
    Run {
        /// Use `--checkpoint` instead of training.
        #[arg(long, requires = "checkpoint")]
        skip_train: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    if let Command::Train { checkpoint: Some(c) } | Command::Infer { checkpoint: Some(c) } | Command::Run { checkpoint: Some(c), .. } =
        &cli.command
    {
        cfg.paths.checkpoint = Some(c.clone());
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &PipelineConfig, ws: &mut Workspace) -> Result<()> {
    match &cli.command {
        Command::Synth => drop(pipeline::synth(cfg, ws)?),
        Command::Fit => drop(pipeline::fit(cfg, ws)?),
        Command::SparseFit => drop(pipeline::sparse_fit(cfg, ws)?),
        Command::Train { .. } => drop(pipeline::train(cfg, ws)?),
        Command::Infer { .. } => drop(pipeline::infer(cfg, ws)?),
        Command::Refine => drop(pipeline::refine(cfg, ws)?),
        Command::Eval => print_report(&pipeline::eval(cfg, ws)?),
        Command::Run { skip_train, .. } => print_report(&pipeline::run(cfg, ws, *skip_train)?),
        Command::Config => {
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout(), "{}", cfg.to_json());
        }
    }
    Ok(())
}

fn print_report(report: &mocap_cli::EvalReport) {
    println!("{:<8} {:>10} {:>9} {:>9}", "stage", "MPJPE mm", "PCK@0.5", "PCK@0.3");
    for s in &report.stages {
        println!("{:<8} {:>10.2} {:>9.2} {:>9.2}", s.stage, s.mpjpe_mm, s.pck_0_5, s.pck_0_3);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let mut ws = match Workspace::create(&cfg.out_dir()) {
        Ok(ws) => ws,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(&cli, &cfg, &mut ws) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            for p in ws.mark_partial() {
                error!("kept partial artifact {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
