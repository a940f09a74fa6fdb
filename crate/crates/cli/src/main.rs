use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use reid_cli::config::PipelineConfig;
use reid_cli::io::{write_atomic, FloatWidth};
use reid_cli::pipeline::{rerank_only, run_eval};
use reid_cli::synth::{gen_synthetic, SynthParams};
use reid_cli::tools::{augment_demo, dump_schedule, save_png, DemoOp};
use reid_cli::{CliError, Result};
use reid_core::augment::AugmentConfig;

#[derive(Parser)]
#[command(
    name = "reid",
    about = "Re-identification evaluation toolkit",
    disable_version_flag = true
)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides paths.out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for distance and metric computation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distances, optional post-processing, metrics and artifacts.
    Eval,
    /// Re-ranked distances and rank lists, without evaluation.
    RerankOnly,
    /// Write synthetic query/gallery embedding files.
    GenSynthetic {
        #[arg(long, default_value_t = 10)]
        num_ids: usize,
        #[arg(long, default_value_t = 5)]
        per_id: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        /// Stored float width in bytes.
        #[arg(long, default_value_t = 4, value_parser = parse_width)]
        width: u8,
    },
    /// Learning-rate schedule as CSV (`iter,lr,frozen`).
    DumpSchedule {
        /// Overrides schedule.stride.
        #[arg(long)]
        stride: Option<u64>,
    },
    /// Apply one augmentation with a fixed seed and print a digest of the result.
    AugmentDemo {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DemoOp::Chain)]
        op: DemoOp,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 0.5)]
        flip_prob: f64,
        #[arg(long, default_value_t = 0.5)]
        erase_prob: f64,
    },
    /// Print the tool version.
    Version,
}

fn parse_width(s: &str) -> std::result::Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err(format!("width must be 4 or 8, got {s}")),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Config("--out is required for this command".into()))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Eval => {
            let report = run_eval(&load_config(cli)?)?;
            println!(
                "mAP {:.4}  mINP {:.4}  rank-1 {:.4}  queries {} (skipped {})",
                report.map, report.minp, report.cmc[0], report.num_queries, report.skipped_queries
            );
        }
        Command::RerankOnly => {
            let d = rerank_only(&load_config(cli)?)?;
            println!(
                "re-ranked {}x{} distances",
                d.num_queries(),
                d.num_gallery()
            );
        }
        Command::GenSynthetic {
            num_ids,
            per_id,
            dim,
            sigma,
            width,
        } => {
            let out = require_out(cli)?;
            let params = SynthParams {
                num_ids: *num_ids,
                per_id: *per_id,
                dim: *dim,
                noise_sigma: *sigma,
                seed: cli.seed.unwrap_or(0),
            };
            let width = FloatWidth::from_bytes(*width).expect("validated by clap");
            let data = gen_synthetic(&params, out, width)?;
            println!(
                "wrote {} queries and {} gallery items to {}",
                data.query.len(),
                data.gallery.len(),
                out.display()
            );
        }
        Command::DumpSchedule { stride } => {
            let cfg = load_config(cli)?;
            let mut sched = cfg
                .schedule
                .ok_or_else(|| CliError::Config("config has no schedule section".into()))?;
            if let Some(s) = stride {
                sched.stride = *s;
            }
            let csv = dump_schedule(&sched)?;
            match &cli.out {
                Some(dir) => {
                    let path = dir.join("schedule.csv");
                    write_atomic(&path, csv.as_bytes())?;
                    info!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
        }
        Command::AugmentDemo {
            input,
            output,
            op,
            height,
            width,
            flip_prob,
            erase_prob,
        } => {
            let cfg = AugmentConfig {
                target_h: *height,
                target_w: *width,
                flip_prob: *flip_prob,
                erase_prob: *erase_prob,
                seed: cli.seed.unwrap_or(0),
                ..AugmentConfig::default()
            };
            let (img, digest) = augment_demo(input.as_deref(), *op, &cfg)?;
            if let Some(path) = output {
                save_png(&img, path)?;
            }
            println!("{digest}");
        }
        Command::Version => println!("reid {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REID_LOG_LEVEL", "warn"))
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
