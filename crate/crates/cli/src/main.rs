//! `onset`: generate synthetic data, train, detect, evaluate, ablate and
//! benchmark early detectors from the command line.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "onset", version, about = "Early activity detection with onset signatures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config sources shared by every subcommand that trains.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; omitted keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set sgd.lambda=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        /// Scenario configuration file.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// STRONG_ONSET, WEAK_ONSET or NO_ONSET_CONTROL.
        #[arg(long, default_value = "STRONG_ONSET")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector on every stream of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides the codebook and sampling seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_model: PathBuf,
    },
    /// Run a trained detector over one stream.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// A `.jsonl` or `.csv` stream.
        #[arg(long)]
        stream: PathBuf,
        /// Detections JSON.
        #[arg(long)]
        out: PathBuf,
        /// Score traces CSV; defaults to `<out>.traces.csv`.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Mean AP against observation ratio, for a trained model or under
    /// leave-one-set-out cross-validation.
    Eval {
        #[arg(long, required_unless_present = "cv")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated observation ratios.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Cross-validate the onset method against the baselines.
        #[arg(long)]
        cv: bool,
        /// Methods to cross-validate (comma-separated).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cross-validate onset representations under identical splits.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Representations (comma-separated); all of them by default.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-frame latency of the detection loop on a precomputed stream.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Train { .. } => "train",
            Command::Detect { .. } => "detect",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Bench { .. } => "bench",
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Gen {
            config,
            preset,
            seed,
            overrides,
            out,
        } => commands::gen(config.as_deref(), &preset, seed, &overrides, &out),
        Command::Train {
            data,
            cfg,
            seed,
            out_model,
        } => commands::train(&data, &cfg, seed, &out_model),
        Command::Detect {
            model,
            stream,
            out,
            traces,
        } => commands::detect(&model, &stream, &out, traces.as_deref()),
        Command::Eval {
            model,
            data,
            ratios,
            cv,
            methods,
            cfg,
            out_dir,
        } => {
            if cv {
                commands::eval_cv(&data, &cfg, ratios, methods, &out_dir)
            } else {
                let model = model.expect("clap requires --model without --cv");
                commands::eval_model(&model, &data, ratios, &out_dir)
            }
        }
        Command::Ablate {
            data,
            variants,
            ratios,
            cfg,
            out_dir,
        } => commands::ablate(&data, &cfg, variants, ratios, &out_dir),
        Command::Bench {
            model,
            stream,
            repeat,
            out,
        } => commands::bench(&model, &stream, repeat, out.as_deref()),
    }
}

/// Collapses an error chain onto one line.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        // Wrapping errors often repeat their source in their own message.
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let head: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.is_empty() && !l.starts_with("Usage:"))
                .collect();
            eprintln!("error: usage: {}", head.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {name}: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
