//! `zsc`: shaping selection, population training, and cross-play evaluation.
//!
//! Exit codes: 0 success, 2 usage or validation, 3 external service, 4
//! internal failure (non-finite losses, unwritable artifacts).

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zsc_core::checkpoint::CheckpointError;
use zsc_core::{EnsembleError, LayoutError, LlmError, MarlError, ShapingError, SurrogateError};

use commands::{EvalOpts, PartnersOpts, ReportOpts, SelectOpts, TrainOpts};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Provider(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Provider(_) => ExitCode::from(3),
            CliError::Internal(_) => ExitCode::from(4),
        }
    }
}

impl From<ShapingError> for CliError {
    fn from(e: ShapingError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<LayoutError> for CliError {
    fn from(e: LayoutError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SurrogateError> for CliError {
    fn from(e: SurrogateError) -> Self {
        match e {
            SurrogateError::NonFiniteLoss { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MarlError> for CliError {
    fn from(e: MarlError) -> Self {
        match e {
            MarlError::NonFiniteLoss { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Train(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::ProviderUnreachable(_)
            | LlmError::ProviderTimeout(_)
            | LlmError::BadResponse(_)
            | LlmError::ExhaustedRetries { .. } => CliError::Provider(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "zsc", version, about = "Reward-shaping selection and cross-play evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select a set of reward shapings.
    Select(SelectOpts),
    /// Train one diverse population plus best response per shaping.
    Train(TrainOpts),
    /// Train the held-out partner pool.
    TrainPartners(PartnersOpts),
    /// Cross-play an ego against the partner pool.
    Eval(EvalOpts),
    /// Render eval reports as markdown and CSV tables.
    Report(ReportOpts),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Select(opts) => commands::cmd_select(opts),
        Command::Train(opts) => commands::cmd_train(opts),
        Command::TrainPartners(opts) => commands::cmd_train_partners(opts),
        Command::Eval(opts) => commands::cmd_eval(opts),
        Command::Report(opts) => commands::cmd_report(opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
