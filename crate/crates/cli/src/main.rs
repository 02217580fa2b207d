use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segaug::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "segaug", version, about = "Label-map augmentation and evaluation pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Class table JSON; defaults to the 19 Cityscapes train ids.
    #[arg(long, global = true)]
    classes: Option<PathBuf>,
    /// Palette JSON; defaults to the Cityscapes colors.
    #[arg(long, global = true)]
    palette: Option<PathBuf>,
    /// Root seed; every stage derives its own from this.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Appearance frequency per class, target selection, and optionally
    /// rank correlation against an IoU report.
    Analyze(commands::AnalyzeArgs),
    /// Split label maps into per-class masks.
    ExtractMasks(commands::ExtractArgs),
    /// Synthesize label maps by overlay or reconstruction.
    Augment(commands::AugmentArgs),
    /// Render label maps to images with the palette or an external generator.
    Render(commands::RenderArgs),
    /// Mix original and supplementary pairs into a manifest and schedule.
    Mix(commands::MixArgs),
    /// Train the pixel classifier on a manifest.
    Train(commands::TrainArgs),
    /// Score a model on a directory of pairs.
    Eval(commands::EvalArgs),
    /// Sweep seeds, ratios and strategies end to end.
    Experiment(commands::ExperimentArgs),
    /// Re-render a saved experiment report.
    Report(commands::ReportArgs),
    /// Generate a procedural dataset.
    Synth(commands::SynthArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 1,
        Error::Generator(_) => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = std::panic::catch_unwind(|| commands::run(&cli.global, &cli.command));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(4),
    }
}
