//! `myanner` — syllable-level NER for Myanmar text.
//!
//! Subcommands: `segment`, `convert`, `train`, `tag`, `eval`, `synth`. All
//! file arguments accept `-` for stdin/stdout. Exit codes: 0 success, 1
//! usage error, 2 data error.

mod commands;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "myanner", version, about = "Syllable-level NER for Myanmar text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment raw sentences (one per line) into space-separated syllables.
    Segment {
        /// Report ill-formed Myanmar sequences instead of accepting them.
        #[arg(long)]
        strict: bool,
        /// Input file, or - for stdin.
        #[arg(default_value = "-")]
        input: String,
        /// Output file, or - for stdout.
        #[arg(default_value = "-")]
        output: String,
    },
    /// Convert a CoNLL file between tagging schemes.
    Convert {
        /// Source scheme: iob2 or iobes.
        #[arg(long = "from")]
        from: String,
        /// Target scheme: iob2 or iobes.
        #[arg(long = "to")]
        to: String,
        #[arg(default_value = "-")]
        input: String,
        #[arg(default_value = "-")]
        output: String,
    },
    /// Train a tagger; writes the model file and a history CSV next to it.
    Train {
        /// key=value config file.
        #[arg(long)]
        config: String,
        /// Training data (CoNLL).
        #[arg(long)]
        train: String,
        /// Development data (CoNLL) for early stopping.
        #[arg(long)]
        dev: String,
        /// Optional pretrained syllable embeddings (text word2vec format).
        #[arg(long)]
        embeddings: Option<String>,
        /// Output model path.
        #[arg(long)]
        out: String,
    },
    /// Tag sentences with a trained model; output is two-column CoNLL.
    Tag {
        /// Model file written by `train`.
        #[arg(long)]
        model: String,
        /// Input is already one syllable per CoNLL row (labels optional).
        #[arg(long)]
        pre_segmented: bool,
        #[arg(default_value = "-")]
        input: String,
        #[arg(default_value = "-")]
        output: String,
    },
    /// Score predictions against gold (both CoNLL); prints P/R/F1 rows.
    Eval {
        gold: String,
        pred: String,
        /// Also print the macro-averaged row.
        #[arg(long)]
        macro_avg: bool,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        #[arg(long)]
        seed: u64,
        /// Number of sentences.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "-")]
        out: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap help/version are not errors
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Segment {
            strict,
            input,
            output,
        } => commands::segment(strict, &input, &output),
        Command::Convert {
            from,
            to,
            input,
            output,
        } => commands::convert(&from, &to, &input, &output),
        Command::Train {
            config,
            train,
            dev,
            embeddings,
            out,
        } => commands::train(&config, &train, &dev, embeddings.as_deref(), &out),
        Command::Tag {
            model,
            pre_segmented,
            input,
            output,
        } => commands::tag(&model, pre_segmented, &input, &output),
        Command::Eval {
            gold,
            pred,
            macro_avg,
        } => commands::eval(&gold, &pred, macro_avg),
        Command::Synth { seed, n, out } => commands::synth(seed, n, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("myanner: {err}");
            ExitCode::from(2)
        }
    }
}
