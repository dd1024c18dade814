use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfam_cli::synth::{write_planted_suite, SuiteConfig};
use sfam_cli::{
    cmd_evaluate, cmd_explain, cmd_sanity, parse_fractions, Method, Outcome, RunConfig, UsageError,
};
use sfam_core::synthetic::PlantedConfig;
use sfam_core::{BoxMode, Metric};

#[derive(Parser)]
#[command(
    name = "sfam",
    version,
    about = "Gradient-free visual explanations for metric-learning models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write raw and normalized maps plus overlays for every episode.
    Explain(Common),
    /// Score maps against truth boxes and report mean IoU and accuracy.
    Evaluate(Common),
    /// Compare maps before and after randomizing channel activations.
    Sanity {
        #[command(flatten)]
        common: Common,
        /// Comma-separated fractions of channels to randomize.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        fractions: String,
    },
    /// Generate a planted-blob episode suite with ground-truth boxes.
    Synth {
        /// Output directory; the manifest is written to <out>/manifest.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep episodes whose query is nearest to a wrong-class support.
        #[arg(long)]
        include_misclassified: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    manifest: PathBuf,
    /// sfam, ram or decomposition.
    #[arg(long, default_value = "sfam")]
    method: Method,
    /// euclidean or cosine; overrides the manifest.
    #[arg(long)]
    metric: Option<Metric>,
    /// Mask cut as a fraction of the map maximum.
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
    /// component or all.
    #[arg(long, default_value = "component")]
    box_mode: BoxMode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip failing episodes instead of stopping at the first.
    #[arg(long)]
    keep_going: bool,
    /// Heatmap weight in overlays.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

impl Common {
    fn config(self) -> RunConfig {
        RunConfig {
            manifest: self.manifest,
            method: self.method,
            metric: self.metric,
            threshold: self.threshold,
            box_mode: self.box_mode,
            output_dir: self.out,
            jobs: self.jobs,
            seed: self.seed,
            keep_going: self.keep_going,
            alpha: self.alpha,
        }
    }
}

fn report_failures(outcome: &Outcome) {
    if outcome.failures.is_empty() {
        return;
    }
    eprintln!("{} episode(s) failed:", outcome.failures.len());
    for (id, msg) in &outcome.failures {
        eprintln!("  {id}: {msg}");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Explain(c) => report_failures(&cmd_explain(&c.config(), &mut out)?),
        Command::Evaluate(c) => report_failures(&cmd_evaluate(&c.config(), &mut out)?.outcome),
        Command::Sanity { common, fractions } => {
            let fractions = parse_fractions(&fractions)?;
            report_failures(&cmd_sanity(&common.config(), &fractions, &mut out)?.outcome);
        }
        Command::Synth {
            out: dir,
            episodes,
            seed,
            include_misclassified,
        } => {
            let cfg = SuiteConfig {
                episodes,
                seed,
                planted: PlantedConfig::default(),
                correct_only: !include_misclassified,
                metric: Metric::Euclidean,
            };
            let path = write_planted_suite(&dir, &cfg)?;
            writeln!(out, "{}", path.display())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SFAM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
