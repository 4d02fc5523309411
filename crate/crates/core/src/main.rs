use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lsta_core::commands;
use lsta_core::config::RunConfig;
use lsta_core::{parallel, Result};

#[derive(Parser)]
#[command(name = "lsta", version, about = "Long-short temporal attention for video object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the dataset directory for gen-data).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and val splits.
    GenData,
    /// Train a model on the train split.
    Train,
    /// Segment a dataset split or a single clip directory.
    Infer,
    /// Score predicted masks against ground truth.
    Eval,
    /// Measure runtime scaling of the attention paths.
    Bench,
}

fn load_config(common: &Common, gen_data: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        if gen_data {
            cfg.data_dir = o.clone();
        } else {
            cfg.out = o.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common, matches!(cli.command, Command::GenData))?;
    match cli.command {
        Command::GenData => {
            let m = commands::gen_data(&cfg)?;
            println!(
                "wrote {} clips ({} frames) to {}",
                m.clip_ids().len(),
                m.entries.len(),
                cfg.data_dir.display()
            );
        }
        Command::Train => {
            let s = commands::train(&cfg)?;
            let last = s.losses.last().map_or(f64::NAN, |l| l.1);
            println!(
                "trained to step {} (final loss {last:.5}); checkpoint {}",
                s.state.step,
                s.checkpoint.display()
            );
        }
        Command::Infer => {
            let s = commands::infer(&cfg)?;
            println!(
                "segmented {} clips, {} frames in {:.2}s ({:.2} frames/s); masks in {}",
                s.clips.len(),
                s.frames,
                s.seconds,
                s.fps(),
                s.out.display()
            );
        }
        Command::Eval => {
            let r = commands::eval(&cfg)?;
            print!("{}", r.summary());
        }
        Command::Bench => {
            let r = commands::bench(&cfg)?;
            print!("{}", r.to_markdown());
            if !r.all_pass() {
                println!("slope thresholds not met");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    parallel::init_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
