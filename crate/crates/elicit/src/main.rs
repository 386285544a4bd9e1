//! Command-line entry point.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use elicit::cli::{
    cmd_audit, cmd_interview, cmd_regimes, cmd_train, resolve_config, CliError, InterviewMode,
    Overrides, RunProfile,
};

#[derive(Parser)]
#[command(
    name = "elicit",
    about = "Train and audit an interactive skill-elicitation model with multi-accuracy calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration profile.
    #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
    profile: String,
    /// JSON config file merged over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set solver.max_iters=500.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    sets: Vec<String>,
    /// Number of training epochs.
    #[arg(long)]
    epochs: Option<u64>,
    /// Master seed (ELICIT_SEED env var wins over this flag).
    #[arg(long)]
    seed: Option<u64>,
    /// Fairness tolerance epsilon.
    #[arg(long)]
    eps: Option<f64>,
    /// Fairness-correction schedule.
    #[arg(long, value_parser = ["every", "never", "only-final", "until-t"])]
    regime: Option<String>,
    /// Epoch parameter for only-final / until-t regimes.
    #[arg(long)]
    t: Option<u64>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Overrides, CliError> {
        let mut sets = Vec::new();
        for raw in &self.sets {
            let (path, value) = raw.split_once('=').ok_or_else(|| {
                CliError::ConfigInvalid(format!("--set expects PATH=VALUE, got '{raw}'"))
            })?;
            sets.push((path.to_string(), value.to_string()));
        }
        Ok(Overrides {
            config_file: self.config.clone(),
            sets,
            epochs: self.epochs,
            seed: self.seed,
            eps: self.eps,
            regime: self.regime.clone(),
            t: self.t,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a training loop and write metrics, checkpoints and a final audit.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Audit a checkpoint against a persona file.
    Audit {
        /// Checkpoint JSON produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Persona file (JSON lines; persona or profile schema).
        #[arg(long)]
        personas: PathBuf,
        /// Audit tolerance.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Interview a respondent on the terminal against a checkpoint.
    Interview {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Question selection: rollout argmax or direct policy sampling.
        #[arg(long, default_value = "argmax", value_parser = ["argmax", "sample"])]
        mode: String,
        #[arg(long, default_value_t = 2)]
        max_questions: usize,
        /// Transcript log (JSON lines).
        #[arg(long, default_value = "interview_log.jsonl")]
        log: PathBuf,
    },
    /// Train each regime on shared seeds and emit figure CSVs.
    Regimes {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated regimes to compare.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "every,never,only-final,until-t"
        )]
        regimes: Vec<String>,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Train { config, out } => {
            let profile = RunProfile::by_name(&config.profile, &out)?;
            let cfg = resolve_config(&profile.config, &config.overrides()?)?;
            let summary = cmd_train(&cfg, &out, &mut stdout)?;
            writeln!(stdout, "metrics: {}", summary.metrics_path.display())
                .map_err(|e| CliError::IoFailure(e.to_string()))?;
            writeln!(stdout, "checkpoint: {}", summary.final_checkpoint.display())
                .map_err(|e| CliError::IoFailure(e.to_string()))?;
            Ok(())
        }
        Command::Audit {
            checkpoint,
            personas,
            eps,
        } => {
            let report = cmd_audit(&checkpoint, &personas, eps, &mut stdout)?;
            if report.passed {
                Ok(())
            } else {
                Err(CliError::AuditFailed)
            }
        }
        Command::Interview {
            checkpoint,
            mode,
            max_questions,
            log,
        } => {
            let mode = InterviewMode::parse(&mode)
                .ok_or_else(|| CliError::ConfigInvalid(format!("unknown mode '{mode}'")))?;
            let stdin = std::io::stdin();
            let mut input = stdin.lock();
            cmd_interview(&checkpoint, mode, max_questions, &log, &mut input, &mut stdout)?;
            Ok(())
        }
        Command::Regimes {
            config,
            out,
            regimes,
        } => {
            let profile = RunProfile::by_name(&config.profile, &out)?;
            let cfg = resolve_config(&profile.config, &config.overrides()?)?;
            cmd_regimes(&cfg, &regimes, config.t.or(cfg.regime_t), &out, &mut stdout)?;
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
