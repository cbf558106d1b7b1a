use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advparse::commands::{cmd_eval, cmd_probe, cmd_synth, cmd_train, reports_jsonl, reports_table};
use advparse::config::RunConfig;
use advparse::data::{SynthSpec, VectorSpec};
use advparse::eval::ProbeConfig;
use advparse::Result;

#[derive(Parser)]
#[command(name = "advparse", version, about = "Cross-lingual dependency parsing with language-adversarial encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set train.seed=3`.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on target treebanks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "target")]
        targets: Vec<PathBuf>,
        /// Write one JSON report per target to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write predicted CoNLL-U files to this directory.
        #[arg(long)]
        predict: Option<PathBuf>,
    },
    /// Language-identification probe on a frozen encoder.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus `k` (in order) is class `k`.
        #[arg(long = "corpus")]
        corpora: Vec<PathBuf>,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Permute labels before training (chance-level control).
        #[arg(long)]
        shuffle_labels: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a synthetic treebank.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_sentences: usize,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, default_value_t = 15)]
    max_len: usize,
    #[arg(long, default_value_t = 40)]
    vocab_size: usize,
    /// Probability that a dependent precedes its head.
    #[arg(long, default_value_t = 0.5)]
    head_direction_p: f64,
    #[arg(long, default_value_t = 0)]
    lang_id: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write aligned word vectors for this language's lexicon.
    #[arg(long)]
    vectors_out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Languages of one family share an offset in vector space.
    #[arg(long, default_value_t = 0)]
    family: u64,
    /// Shared by every language whose vectors should be aligned.
    #[arg(long, default_value_t = 0)]
    vector_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    offset_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let summary = cmd_train(&cfg)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string(&summary).expect("summaries serialize"));
        }
        Command::Eval {
            checkpoint,
            targets,
            report,
            predict,
        } => {
            let reports = cmd_eval(&checkpoint, &targets, predict.as_deref())?;
            print!("{}", reports_table(&reports));
            if let Some(p) = report {
                std::fs::write(p, reports_jsonl(&reports))?;
            }
        }
        Command::Probe {
            checkpoint,
            corpora,
            epochs,
            hidden,
            seed,
            shuffle_labels,
            report,
        } => {
            let cfg = ProbeConfig {
                epochs,
                hidden,
                seed,
                shuffle_labels,
                ..ProbeConfig::default()
            };
            let r = cmd_probe(&checkpoint, &corpora, &cfg)?;
            eprintln!("probe accuracy {:.2}% over {} classes", r.accuracy, r.n_classes);
            write_or_print(report.as_deref(), &(serde_json::to_string(&r).expect("reports serialize") + "\n"))?;
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                n_sentences: a.n_sentences,
                min_len: a.min_len,
                max_len: a.max_len,
                vocab_size: a.vocab_size,
                head_direction_p: a.head_direction_p,
                lang_id: a.lang_id,
                seed: a.seed,
            };
            let vspec = VectorSpec {
                dim: a.dim,
                vocab_size: a.vocab_size,
                lang_id: a.lang_id,
                family: a.family,
                seed: a.vector_seed,
                offset_scale: a.offset_scale,
                noise_scale: a.noise_scale,
            };
            cmd_synth(&spec, &a.out, a.vectors_out.as_deref().map(|p| (&vspec, p)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
