//! `seafog` command-line driver.
//!
//! Each subcommand reads its settings from built-in defaults, an optional
//! `--config` TOML file and its flags, in increasing priority. The resolved
//! settings are written next to every output as `<output>.run.toml`.

mod commands;
mod output;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use seafog::Error;

use crate::commands::{
    AblateArgs, BaselineFslArgs, EvaluateArgs, FeaturizeArgs, IngestArgs, PredictArgs, SynthArgs, TlcaArgs, TrainArgs,
};

#[derive(Debug, Parser)]
#[command(name = "seafog", about = "Station sea-fog forecasting from gridded NWP output")]
struct Cli {
    /// TOML settings file; a table named after the subcommand takes precedence over top-level keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (1 gives the bit-exact reference mode; 0 uses every core).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Join station observations with interpolated forecast fields into a dataset container.
    Ingest(IngestArgs),
    /// Lagged correlation analysis and predictor selection.
    Tlca(TlcaArgs),
    /// Build a feature container from a dataset and a predictor list.
    Featurize(FeaturizeArgs),
    /// Train a boosted model or an easy-ensemble.
    Train(TrainArgs),
    /// Score a feature container and write forecast/observation pairs.
    Predict(PredictArgs),
    /// Verification scores by lead time.
    Evaluate(EvaluateArgs),
    /// Reference forecasts.
    #[command(subcommand)]
    Baseline(Baseline),
    /// Generate a synthetic observation and forecast corpus.
    Synth(SynthArgs),
    /// Run the comparison grid of predictor sets, losses and learning strategies.
    Ablate(AblateArgs),
}

#[derive(Debug, Subcommand)]
enum Baseline {
    /// Visibility from temperature, dew point and humidity.
    Fsl(BaselineFslArgs),
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn version_text() -> String {
    use seafog::{container, ensemble, gbdt, synth};
    format!(
        "{}\ndataset container {} v{}\nfeature container {} v{}\nmodel {} v{}\nensemble {} v{}\nsynthetic truth {} v{}\npairing csv v1\nreport csv v1",
        env!("CARGO_PKG_VERSION"),
        String::from_utf8_lossy(container::DATASET_MAGIC),
        container::DATASET_VERSION,
        String::from_utf8_lossy(container::FEATURES_MAGIC),
        container::FEATURES_VERSION,
        gbdt::MODEL_FORMAT,
        gbdt::MODEL_VERSION,
        ensemble::ENSEMBLE_FORMAT,
        ensemble::ENSEMBLE_VERSION,
        synth::TRUTH_FORMAT,
        synth::TRUTH_VERSION,
    )
}

fn report(kind: &str, message: &str) {
    let doc = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{doc}");
}

fn run(cli: Cli) -> seafog::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let config = cli.config.as_deref();
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a, config),
        Command::Tlca(a) => commands::tlca(&a, config),
        Command::Featurize(a) => commands::featurize(&a, config),
        Command::Train(a) => commands::train(&a, config),
        Command::Predict(a) => commands::predict(&a, config),
        Command::Evaluate(a) => commands::evaluate(&a, config),
        Command::Baseline(Baseline::Fsl(a)) => commands::baseline_fsl(&a, config),
        Command::Synth(a) => commands::synth(&a, config),
        Command::Ablate(a) => commands::ablate(&a, config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let version: &'static str = Box::leak(version_text().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.render().to_string().trim());
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            report("usage", e.render().to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
