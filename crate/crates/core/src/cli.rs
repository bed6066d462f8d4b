//! Command-line front end. Exit codes: 0 success, 2 usage, config or input
//! format errors, 3 I/O and model-container errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::corpus::{load_dataset, read_dataset, write_dataset, CorpusError, Label, LabeledCorpus, LabeledRecord};
use crate::metrics::{evaluate_model, MetricsError};
use crate::model::{build_detector, parse_kv_lines, ConfigError, DetectorModel, ModelConfig, ModelError};
use crate::textprep::{clean, clean_stage_a, clean_stage_b, CleanConfig};
use crate::training::{fit_with, TrainConfig, TrainError};
use crate::vectorizer::{build_vocabulary, VectorizerError};

#[derive(Debug, Parser)]
#[command(name = "aitd", version, about = "Detect AI-generated text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    A,
    B,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean the text column of a corpus CSV.
    Clean {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        stage: Stage,
    },
    /// Build a vocabulary from a corpus and write one token per line.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a detector, writing the best checkpoint and the history CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        history: PathBuf,
    },
    /// Score a saved model on a labeled corpus and write report files.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print `<probability>\t<label>` for each input text.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        text: Option<String>,
        /// File with one text per line.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print the layer table for a configuration.
    Summarize {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Vectorizer(#[from] VectorizerError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::Io { .. } => 3,
        _ => 2,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Vectorizer(_) => 2,
            CliError::Corpus(e) => corpus_code(e),
            CliError::Train(TrainError::Config(_)) => 2,
            CliError::Train(TrainError::Corpus(e)) => corpus_code(e),
            CliError::Train(TrainError::EmptyCorpus) => 2,
            CliError::Model(ModelError::Config(_) | ModelError::VocabTooLarge { .. }) => 2,
            CliError::Model(_) | CliError::Train(_) | CliError::Metrics(_) | CliError::Io { .. } => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Reads a flat `key=value` file into model and training settings.
/// `seed` applies to both.
pub fn load_config(path: Option<&Path>) -> Result<(ModelConfig, TrainConfig), CliError> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        for entry in parse_kv_lines(&text) {
            let (_, key, value) = entry?;
            let in_model = model.set(key, value)?;
            let in_train = train.set(key, value)?;
            if !in_model && !in_train {
                return Err(ConfigError::UnknownKey(key.to_string()).into());
            }
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

fn cleaned_texts(corpus: &LabeledCorpus) -> Vec<String> {
    let cfg = CleanConfig::default();
    corpus.iter().map(|r| clean(&r.text, &cfg)).collect()
}

fn label_name(label: Label) -> &'static str {
    match label {
        Label::Ai => "AI",
        Label::Human => "HUMAN",
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let stdout = |e| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    match cli.command {
        Command::Clean { input, output, stage } => {
            let bytes = fs::read(&input).map_err(io_err(&input))?;
            if bytes.iter().all(u8::is_ascii_whitespace) {
                return write_file(&output, "");
            }
            let corpus = read_dataset(bytes.as_slice())?;
            let cfg = CleanConfig::default();
            let cleaned: LabeledCorpus = corpus
                .into_records()
                .into_iter()
                .map(|r| {
                    let text = match stage {
                        Stage::A => clean_stage_a(&r.text, &cfg),
                        Stage::B => clean_stage_b(&r.text, &cfg),
                        Stage::Both => clean(&r.text, &cfg),
                    };
                    LabeledRecord { text, ..r }
                })
                .collect();
            let file = fs::File::create(&output).map_err(io_err(&output))?;
            write_dataset(&cleaned, std::io::BufWriter::new(file))?;
        }
        Command::BuildVocab { data, output, config } => {
            let (model_cfg, _) = load_config(config.as_deref())?;
            let corpus = load_dataset(&data)?;
            let vocab = build_vocabulary(&cleaned_texts(&corpus), &model_cfg.vectorizer())?;
            write_file(&output, vocab.to_lines())?;
            writeln!(out, "{} tokens", vocab.len()).map_err(stdout)?;
        }
        Command::Train {
            data,
            config,
            checkpoint,
            history,
        } => {
            let (model_cfg, mut train_cfg) = load_config(config.as_deref())?;
            train_cfg.checkpoint_path = Some(checkpoint);
            let corpus = load_dataset(&data)?;
            let vocab = build_vocabulary(&cleaned_texts(&corpus), &model_cfg.vectorizer())?;
            let mut model = build_detector(model_cfg, vocab)?;
            let mut progress = Ok(());
            let hist = fit_with(&mut model, &corpus, &train_cfg, |r| {
                if progress.is_ok() {
                    progress = writeln!(
                        out,
                        "epoch {}: train_loss {:.6} train_accuracy {:.6} val_loss {:.6} val_accuracy {:.6}",
                        r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
                    );
                }
            })?;
            progress.map_err(stdout)?;
            write_file(&history, hist.to_csv())?;
            if let Some(last) = hist.last() {
                writeln!(
                    out,
                    "final: {},{:.6},{:.6},{:.6},{:.6}",
                    last.epoch, last.train_loss, last.train_accuracy, last.val_loss, last.val_accuracy
                )
                .map_err(stdout)?;
            }
            if let Some(epoch) = hist.stopped_at {
                writeln!(out, "stopped early after epoch {epoch}").map_err(stdout)?;
            }
        }
        Command::Evaluate { model, data, report } => {
            let model = DetectorModel::load(&model)?;
            let corpus = load_dataset(&data)?;
            let (cm, rep) = evaluate_model(&model, &corpus)?;
            fs::create_dir_all(&report).map_err(io_err(&report))?;
            write_file(&report.join("report.json"), rep.to_json())?;
            write_file(&report.join("report.txt"), rep.to_string())?;
            write_file(&report.join("confusion.csv"), cm.to_csv())?;
            write_file(&report.join("confusion.svg"), cm.to_svg())?;
            write!(out, "{rep}").map_err(stdout)?;
            writeln!(out, "accuracy: {:.2}", rep.accuracy).map_err(stdout)?;
        }
        Command::Predict { model, text, input } => {
            let model = DetectorModel::load(&model)?;
            let texts: Vec<String> = match (text, input) {
                (Some(t), _) => vec![t],
                (None, Some(path)) => fs::read_to_string(&path)
                    .map_err(io_err(&path))?
                    .lines()
                    .map(str::to_string)
                    .collect(),
                (None, None) => unreachable!("clap requires --text or --input"),
            };
            for t in &texts {
                let p = model.predict(t)?;
                writeln!(out, "{p:.4}\t{}", label_name(Label::from_probability(p))).map_err(stdout)?;
            }
        }
        Command::Summarize { config } => {
            let (model_cfg, _) = load_config(config.as_deref())?;
            writeln!(out, "{}", model_cfg.summary()?).map_err(stdout)?;
        }
    }
    Ok(())
}
