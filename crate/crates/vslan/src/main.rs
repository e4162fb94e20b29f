use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use vslan::checkpoint::Checkpoint;
use vslan::config::{RunConfig, SCHEMA};
use vslan::dataset::Dataset;
use vslan::{evaluate, inference, mock, synthdata, train, Result, VslanError};

#[derive(Parser)]
#[command(name = "vslan", version, about = "Stacked local-attention video captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `paths.data_dir`.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train; writes a checkpoint and a JSON log line per epoch to `paths.out_dir`.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Beam-search captions for one video, best first.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video_id: String,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long)]
        max_len: Option<usize>,
        /// Dataset directory (defaults to the one the checkpoint was trained on).
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// One caption per sampled POS sequence.
    SampleDiverse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video_id: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Metrics of a predictions file as JSON.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Serve the token-overlap entailment stand-in on 127.0.0.1.
    MockEntailment {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Exit after answering this many requests.
        #[arg(long)]
        max_requests: Option<usize>,
    },
    /// Print the JSON Schema of run configuration files.
    Schema,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string(value).expect("output serializes");
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| VslanError::io("<stdout>", e))
}

fn load_for_inference(checkpoint: &Path, data_dir: Option<PathBuf>) -> Result<(Checkpoint, Dataset)> {
    let ck = Checkpoint::load(checkpoint)?;
    let dir = data_dir.unwrap_or_else(|| ck.config.paths.data_dir.clone());
    let data = Dataset::load(&dir)?;
    Ok((ck, data))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config } => {
            let cfg = RunConfig::load(&config)?;
            synthdata::gen_synthetic(&cfg.synth_config(), &cfg.paths.data_dir)?;
            log::info!("wrote synthetic dataset to {}", cfg.paths.data_dir.display());
            print_json(&serde_json::json!({ "data_dir": cfg.paths.data_dir, "videos": cfg.data.n_videos }))
        }
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = train::train(&cfg)?;
            print_json(&serde_json::json!({
                "checkpoint": outcome.checkpoint,
                "log": outcome.log_path,
                "epochs": outcome.logs.len(),
                "last": outcome.logs.last(),
            }))
        }
        Command::Caption {
            checkpoint,
            video_id,
            beam,
            max_len,
            data_dir,
        } => {
            let (ck, data) = load_for_inference(&checkpoint, data_dir)?;
            let max_len = max_len.unwrap_or_else(|| ck.config.train_config().max_len);
            print_json(&inference::caption(&ck, &data, &video_id, beam, max_len)?)
        }
        Command::SampleDiverse {
            checkpoint,
            video_id,
            n,
            seed,
            beam,
            max_len,
            data_dir,
        } => {
            let (ck, data) = load_for_inference(&checkpoint, data_dir)?;
            let max_len = max_len.unwrap_or_else(|| ck.config.train_config().max_len);
            print_json(&inference::sample_diverse(&ck, &data, &video_id, n, seed, beam, max_len)?)
        }
        Command::Evaluate { predictions } => {
            let records = evaluate::read_predictions(&predictions)?;
            print_json(&evaluate::evaluate(&records)?)
        }
        Command::MockEntailment { port, max_requests } => mock::run_blocking(port, max_requests, |addr| {
            log::info!("mock entailment scorer listening on {addr}");
            let _ = print_json(&serde_json::json!({ "listening": addr.to_string() }));
        })
        .map_err(|e| VslanError::io(format!("127.0.0.1:{port}"), e)),
        Command::Schema => {
            let mut out = std::io::stdout().lock();
            out.write_all(SCHEMA.as_bytes()).map_err(|e| VslanError::io("<stdout>", e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
