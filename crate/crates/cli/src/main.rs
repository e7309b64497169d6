use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use coldchain_core::config::RunConfig;
use coldchain_core::pipeline::{self, SweepGrid};
use coldchain_core::Error;
use serde_json::{json, Value};

/// Vaccine demand forecasting, cold-chain cost simulation and DQN allocation.
///
/// Every stage reads its inputs from and writes its artifacts to the output
/// directory, so stages can be run one at a time or all at once with
/// `pipeline`. COLDCHAIN_OUTPUT_DIR and COLDCHAIN_SEED override the config.
#[derive(Debug, Parser)]
#[command(name = "coldchain", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Print the effective configuration (defaults merged with --config) and exit.
    #[arg(long)]
    print_config: bool,

    /// More log output (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the vaccination and population CSVs and write the feature file.
    Ingest,
    /// Train the demand predictor and its attention ablation twin.
    TrainPredictor,
    /// Score both predictors on the test split (PR curves, AUC, F1, convergence ratio).
    EvalPredictor,
    /// Simulate per-state cost matrices and aggregate them.
    SimulateCosts,
    /// Forecast demand and train the allocation agent.
    TrainAgent,
    /// Greedy allocation with the trained agent.
    EvalAgent,
    /// Every stage in order.
    Pipeline,
    /// Train one agent per learning-rate × discount cell on the persisted demand and costs.
    Sweep {
        /// Learning rates, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = SweepGrid::default().lrs)]
        lr: Vec<f64>,
        /// Discount factors, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = SweepGrid::default().gammas)]
        gamma: Vec<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::TrainPredictor => "train-predictor",
            Command::EvalPredictor => "eval-predictor",
            Command::SimulateCosts => "simulate-costs",
            Command::TrainAgent => "train-agent",
            Command::EvalAgent => "eval-agent",
            Command::Pipeline => "pipeline",
            Command::Sweep { .. } => "sweep",
        }
    }
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_MISSING_FILE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Exit status and the machine-readable error line for `err`.
fn describe(err: &Error) -> (u8, Value) {
    let message = err.to_string();
    match err {
        Error::Config { field, message } => (
            EXIT_CONFIG,
            json!({"error": "config", "field": field, "message": message}),
        ),
        Error::MissingFile(path) => (
            EXIT_MISSING_FILE,
            json!({"error": "missing_file", "path": path, "message": message}),
        ),
        Error::Numerical { stage, message } => (
            EXIT_NUMERICAL,
            json!({"error": "numerical", "stage": stage, "message": message}),
        ),
        Error::NonFinite(what) => (
            EXIT_NUMERICAL,
            json!({"error": "numerical", "stage": what, "message": message}),
        ),
        other => {
            let kind = match other {
                Error::Io { .. } => "io",
                Error::Schema { .. } | Error::Row { .. } | Error::EmptyFile(_) | Error::Csv(_) => "input",
                Error::Shape { .. } => "shape",
                Error::UnknownState(_) => "unknown_state",
                Error::Checkpoint(_) => "checkpoint",
                _ => "invalid_input",
            };
            (EXIT_FAILURE, json!({"error": kind, "message": message}))
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> coldchain_core::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env(|k| std::env::var(k).ok())?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn run(cli: &Cli, command: &Command) -> coldchain_core::Result<Value> {
    let cfg = load_config(cli.config.as_ref())?;
    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| Error::Io {
        path: cfg.output.dir.clone(),
        source: e,
    })?;
    let summary = match command {
        Command::Ingest => {
            let report = pipeline::run_ingest(&cfg)?;
            json!({"states": report.states, "clamped_partial": report.features.total_clamped()})
        }
        Command::TrainPredictor => {
            let run = pipeline::run_train_predictor(&cfg)?;
            json!({
                "final_train_mse": run.curve.epochs.last().map(|e| e.train_mse),
                "final_train_mse_ablation": run.ablation_curve.epochs.last().map(|e| e.train_mse),
            })
        }
        Command::EvalPredictor => json!(pipeline::run_eval_predictor(&cfg)?),
        Command::SimulateCosts => json!(pipeline::run_simulate_costs(&cfg)?),
        Command::TrainAgent => json!(pipeline::run_train_agent(&cfg)?),
        Command::EvalAgent => {
            let allocations = pipeline::run_eval_agent(&cfg)?;
            json!(allocations
                .iter()
                .map(|a| json!({"state": a.state, "total_allocation": a.total_allocation, "total_reward": a.total_reward}))
                .collect::<Vec<_>>())
        }
        Command::Pipeline => json!(pipeline::run_pipeline(&cfg)?.metrics),
        Command::Sweep { lr, gamma } => {
            let grid = SweepGrid {
                lrs: lr.clone(),
                gammas: gamma.clone(),
            };
            json!(pipeline::run_sweep(&cfg, &grid)?)
        }
    };
    Ok(json!({"status": "ok", "command": command.name(), "output_dir": cfg.output.dir, "summary": summary}))
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("{}", json!({"error": "usage", "message": message}));
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return usage_error(&e.kind().to_string());
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if cli.print_config {
        return match load_config(cli.config.as_ref()).map(|c| c.to_toml()) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => report(&e),
        };
    }
    let Some(command) = cli.command.as_ref() else {
        let _ = Cli::command().print_help();
        return usage_error("no subcommand given");
    };
    match run(&cli, command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

fn report(err: &Error) -> ExitCode {
    let (code, line) = describe(err);
    eprintln!("{line}");
    ExitCode::from(code)
}
