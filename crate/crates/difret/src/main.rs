use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use difret::config::PipelineConfig;
use difret::pipeline::{self, Split, SweepOutcome, TrainOptions};
use difret::synth::{synth_corpus, SynthConfig};
use difret::{jsonl, Result};

#[derive(Parser)]
#[command(name = "difret", version, about = "Generative document retrieval with masked diffusion")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured working directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Use artifacts even if they were produced by a different config.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Load the corpus, add pseudo-queries, split, and write the dataset bundle.
    Ingest,
    /// Assign document identifiers and write the registry (and codebooks).
    BuildDocids,
    /// Train the denoiser, checkpointing after every epoch.
    Train {
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed epochs.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Evaluate retrieval on a split and write reports/eval.json.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Sweep denoising steps, or ablate strategies with `--strategy all`.
    Sweep {
        /// Comma-separated step budgets.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        /// Strategy name, or `all` for the four-way ablation.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Write a synthetic corpus in JSON Lines.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        docs: usize,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = &cli.workdir {
        cfg.paths.workdir = w.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { out, docs } = &cli.command {
        let seed = cli.seed.unwrap_or(0);
        return jsonl::write_records(out, &synth_corpus(&SynthConfig { docs: *docs, seed, ..SynthConfig::default() }));
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest => print_json(&pipeline::cmd_ingest(&cfg)?),
        Command::BuildDocids => print_json(&pipeline::cmd_build_docids(&cfg, cli.force)?),
        Command::Train { resume, stop_after } => {
            let report = pipeline::cmd_train(&cfg, TrainOptions { resume, stop_after, force: cli.force })?;
            print_json(&report);
        }
        Command::Eval { split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            print_json(&pipeline::cmd_eval(&cfg, split, cli.force)?);
        }
        Command::Sweep { steps, strategy } => {
            match pipeline::cmd_sweep(&cfg, steps.as_deref(), strategy.as_deref(), cli.force)? {
                SweepOutcome::Tradeoff(points) => print_json(&points),
                SweepOutcome::Ablation(rows) => print_json(&rows),
            }
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg: String = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

