use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sysid_cli::config::{RunConfig, TaskConfig};
use sysid_cli::error::{PipelineError, Result};
use sysid_cli::synth::{generate_synthetic, write_synthetic, SynthSpec};
use sysid_cli::{pipeline, report, steps};

#[derive(Parser)]
#[command(name = "sysid", version, about = "Process-model identification with hyperparameter tuning")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Campaign {
    Basic,
    Comprehensive,
}

#[derive(Subcommand)]
enum Command {
    /// Read the data of a run config and report the experiment split.
    IngestCheck { config: PathBuf },
    /// Generate synthetic plant data from the model zoo.
    Synth {
        /// Synthesis spec (TOML); overrides the campaign flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "basic")]
        campaign: Campaign,
        #[arg(long, default_value_t = 2.0)]
        days: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify the single-output model of a run config.
    RunBasic { config: PathBuf },
    /// Identify the chained subprocess models of a run config.
    RunComprehensive { config: PathBuf },
    /// Write step-response tables of a model.
    StepResponse {
        /// Zoo id or model file.
        #[arg(long)]
        model: String,
        /// Inputs to step; all when omitted.
        #[arg(long = "input")]
        inputs: Vec<String>,
        #[arg(long = "amplitude")]
        amplitudes: Vec<f64>,
        /// Seconds.
        #[arg(long, default_value_t = 20_000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 5.0)]
        sample_period: f64,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the metrics table of a run directory.
    Report { run_dir: PathBuf },
}

fn label_of(model: &str) -> String {
    Path::new(model)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| model.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::IngestCheck { config } => {
            let mut cfg = RunConfig::load(&config)?;
            if cfg.tasks.is_empty() {
                cfg.tasks = vec![TaskConfig::basic()];
            }
            cfg.validate()?;
            let mut record = cfg.read_record()?;
            let mut needed = vec![cfg.split.setpoint.as_str()];
            for t in &cfg.tasks {
                needed.extend(t.inputs());
                needed.push(&t.output);
            }
            // Derived channels only exist after preprocessing.
            if cfg.check_columns(&record, needed.iter().copied()).is_err() {
                let mut derived = record.clone();
                if pipeline::preprocess(&mut derived, &cfg).is_ok() {
                    record = derived;
                }
                cfg.check_columns(&record, needed.iter().copied())?;
            }
            let s = &cfg.split;
            let split = sysid_core::dataset::split_experiments(&record, &s.setpoint, s.lead_time, s.threshold)?;
            println!(
                "{} rows, {} channels, sample period {} s",
                record.len(),
                record.channels.len(),
                record.sample_period
            );
            for c in &record.channels {
                println!("  {} [{}]", c.name, c.unit);
            }
            println!("{} experiments", split.set.len());
            if split.warning.is_some() {
                println!("warning: no major setpoint change detected");
            }
        }
        Command::Synth { spec, campaign, days, seed, out } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
                    toml::from_str(&text)?
                }
                None => match campaign {
                    Campaign::Basic => SynthSpec::basic_campaign(days, seed),
                    Campaign::Comprehensive => SynthSpec::comprehensive_campaign(days, seed),
                },
            };
            let data = generate_synthetic(&spec)?;
            let path = write_synthetic(&data, &out)?;
            println!("{} rows written to {}", data.record.len(), path.display());
        }
        Command::RunBasic { config } => {
            let cfg = RunConfig::load(&config)?;
            let run = pipeline::run_basic(&cfg)?;
            report::write_basic(&run, &cfg)?;
            print!("{}", report::render_report(&cfg.output_dir)?.0);
        }
        Command::RunComprehensive { config } => {
            let cfg = RunConfig::load(&config)?;
            let run = pipeline::run_comprehensive(&cfg)?;
            report::write_comprehensive(&run, &cfg)?;
            print!("{}", report::render_report(&cfg.output_dir)?.0);
        }
        Command::StepResponse { model, inputs, amplitudes, horizon, sample_period, level, out } => {
            let file = steps::load_model(&model)?;
            let written = steps::emit_step_responses(
                &file,
                &label_of(&model),
                &inputs,
                &amplitudes,
                horizon,
                sample_period,
                level,
                &out,
            )?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Report { run_dir } => {
            print!("{}", report::render_report(&run_dir)?.0);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
