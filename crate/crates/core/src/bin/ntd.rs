//! Command-line front end for the experiment harness.
//!
//!   ntd run --config exp.toml --sampler ntd,reservoir --seeds 1,2,3 --out results.json
//!   ntd config > exp.toml
//!   ntd stream --config exp.toml --seed 1 --out stream.jsonl

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ntd::harness::{report, run_experiment, summary, ExperimentConfig, SamplerKind};
use ntd::streamgen::{generate_stream, NoiseType};
use ntd::Error;

#[derive(Debug, Parser)]
#[command(name = "ntd", version, about = "Noisy-label episodic memory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write a results document.
    Run(RunArgs),
    /// Print the default configuration as TOML.
    Config,
    /// Export the training stream of one seed as line-delimited JSON.
    Stream {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML file with flat experiment keys; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    noise_type: Option<NoiseType>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    memory_size: Option<usize>,
    /// One or more of ntd, reservoir (comma separated).
    #[arg(long, value_delimiter = ',')]
    sampler: Option<Vec<SamplerKind>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mem_epochs: Option<usize>,
    /// Number of augmentation policies, identity included.
    #[arg(long)]
    tta: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.noise_type {
            config.noise_type = v;
        }
        if let Some(v) = self.noise_rate {
            config.noise_rate = v;
        }
        if let Some(v) = self.memory_size {
            config.memory_size = v;
        }
        if let Some(v) = &self.sampler {
            config.sampler = v.clone();
        }
        if let Some(v) = &self.seeds {
            config.seeds = v.clone();
        }
        if let Some(v) = &self.out {
            config.out = Some(v.clone());
        }
        if let Some(v) = self.mem_epochs {
            config.mem_epochs = v;
        }
        if let Some(v) = self.tta {
            config.tta_count = v;
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(args: &RunArgs) -> Result<bool, Error> {
    let config = args.resolve()?;
    let out = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("results.json"));
    let doc = run_experiment(&config)?;
    report(&doc, &out)?;
    let mut digest = summary(&doc);
    digest["out"] = serde_json::json!(out);
    println!("{digest}");
    let all_ok = doc.failed().next().is_none();
    Ok(all_ok)
}

fn export_stream(config: Option<&PathBuf>, seed: u64, out: &PathBuf) -> Result<(), Error> {
    let config = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let stream = generate_stream(&config.stream_spec(seed))?;
    let io = |e| Error::Io {
        path: out.clone(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(out).map_err(io)?);
    stream.write_jsonl(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn error_record(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Config => {
            print!("{}", ExperimentConfig::default().to_toml_string());
            Ok(true)
        }
        Command::Stream { config, seed, out } => {
            export_stream(config.as_ref(), *seed, out).map(|()| true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        // Results were written but at least one trial failed.
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
