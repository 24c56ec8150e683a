//! Command-line entry point: train, predict, and evaluate subcommands.
//!
//! Hyperparameter precedence is flags over `--config` file over built-in
//! defaults. Exit codes: 0 success, 2 I/O error, 3 data error, 4 config
//! error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{parse_conll, parse_conll_lenient, write_conll, LabelVocab, Sentence};
use crate::encoders::{parse_embeddings, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::evaluation::{format_report, score_sentences};
use crate::training::serialize::{from_bytes, to_bytes};
use crate::training::{
    decode_sentence, format_epoch_log, train, Architecture, EmbeddingSource, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "seqtag",
    version,
    about = "Train, run, and score sequence-labeling taggers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a tagger and write a model file
    Train(TrainArgs),
    /// Tag a CoNLL file with a trained model
    Predict(PredictArgs),
    /// Score a prediction file against gold annotations
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Tagged CoNLL training data
    #[arg(long)]
    train_file: PathBuf,
    /// Tagged CoNLL data for per-epoch model selection
    #[arg(long)]
    dev_file: Option<PathBuf>,
    /// Where to write the trained model
    #[arg(long)]
    model: PathBuf,
    /// Precomputed per-sentence embeddings; omit to train a token table
    #[arg(long)]
    embeddings_file: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug, Default)]
struct HyperArgs {
    /// Architecture: linear, crf, or bilstm-crf
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Append one-hot part-of-speech features to every token vector
    #[arg(long)]
    pos_features: bool,
    /// Pin transitions that would break BIO to the masked score
    #[arg(long)]
    bio_mask: bool,
    /// key=value file; keys are the flag names above without the leading --
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model file written by `seqtag train`
    #[arg(long)]
    model: PathBuf,
    /// CoNLL input; a tag column, if present, is ignored
    #[arg(long)]
    input: PathBuf,
    /// Output path; omit to print to standard output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra precomputed embeddings for sentence ids not seen at training
    #[arg(long)]
    embeddings_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// CoNLL file with gold tags
    #[arg(long)]
    gold: PathBuf,
    /// CoNLL file with predicted tags, aligned with the gold file
    #[arg(long)]
    pred: PathBuf,
}

/// Runs the CLI on the given argv and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| named_io_error(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| named_io_error(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| named_io_error(path, e))
}

fn named_io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn parse_config_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {}: expected key=value", idx + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parsed<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("config key {key}: bad value {value:?}")))
}

fn apply_config_key(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "arch" => config.architecture = value.parse()?,
        "epochs" => config.epochs = parsed(key, value)?,
        "lr" => config.learning_rate = parsed(key, value)?,
        "dropout" => config.dropout = parsed(key, value)?,
        "batch-size" => config.batch_size = parsed(key, value)?,
        "seed" => config.seed = parsed(key, value)?,
        "embed-dim" => config.embed_dim = parsed(key, value)?,
        "hidden-dim" => config.hidden_dim = parsed(key, value)?,
        "pos-features" => config.pos_features = parsed(key, value)?,
        "bio-mask" => config.bio_mask = parsed(key, value)?,
        "patience" => config.patience = parsed(key, value)?,
        "optimizer" => config.optimizer = value.parse()?,
        "clip-norm" => config.clip_norm = Some(parsed(key, value)?),
        other => return Err(Error::Config(format!("unknown config key {other:?}"))),
    }
    Ok(())
}

fn build_config(hyper: &HyperArgs) -> Result<TrainConfig> {
    let file_pairs = match &hyper.config {
        Some(path) => parse_config_file(&read_file(path)?)?,
        None => Vec::new(),
    };

    // The architecture decides the other defaults, so resolve it first:
    // flag, then config file, then bilstm-crf.
    let arch_name = hyper
        .arch
        .clone()
        .or_else(|| {
            file_pairs
                .iter()
                .rev()
                .find(|(k, _)| k == "arch")
                .map(|(_, v)| v.clone())
        })
        .unwrap_or_else(|| "bilstm-crf".to_string());
    let mut config = TrainConfig::defaults_for(arch_name.parse::<Architecture>()?);

    for (key, value) in &file_pairs {
        if key != "arch" {
            apply_config_key(&mut config, key, value)?;
        }
    }

    if let Some(v) = hyper.epochs {
        config.epochs = v;
    }
    if let Some(v) = hyper.lr {
        config.learning_rate = v;
    }
    if let Some(v) = hyper.dropout {
        config.dropout = v;
    }
    if let Some(v) = hyper.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = hyper.seed {
        config.seed = v;
    }
    if let Some(v) = hyper.embed_dim {
        config.embed_dim = v;
    }
    if let Some(v) = hyper.hidden_dim {
        config.hidden_dim = v;
    }
    if hyper.pos_features {
        config.pos_features = true;
    }
    if hyper.bio_mask {
        config.bio_mask = true;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = build_config(&args.hyper)?;
    let vocab = LabelVocab::full();
    let train_set = parse_conll(&read_file(&args.train_file)?, &vocab)?;
    let dev_set = match &args.dev_file {
        Some(path) => Some(parse_conll(&read_file(path)?, &vocab)?),
        None => None,
    };
    let source = match &args.embeddings_file {
        Some(path) => EmbeddingSource::Precomputed(parse_embeddings(&read_file(path)?)?),
        None => EmbeddingSource::Trainable,
    };

    let (params, log) = train(&train_set, dev_set.as_deref(), &config, source)?;
    write_bytes(&args.model, &to_bytes(&params))?;
    eprint!("{}", format_epoch_log(&log));

    if let Some(dev) = &dev_set {
        let preds = dev
            .iter()
            .map(|s| decode_sentence(&params, s))
            .collect::<Result<Vec<_>>>()?;
        let report = score_sentences(dev, &preds, &params.vocab)?;
        print!("{}", format_report(&report));
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let mut params = from_bytes(&read_bytes(&args.model)?)?;
    if let Some(path) = &args.embeddings_file {
        let EmbeddingProvider::Precomputed { dim: extra_dim, cache: extra_cache } =
            parse_embeddings(&read_file(path)?)?
        else {
            unreachable!("parse_embeddings always builds a precomputed provider");
        };
        match &mut params.provider {
            EmbeddingProvider::Precomputed { dim, cache } => {
                if *dim != extra_dim {
                    return Err(Error::Shape(format!(
                        "model expects {dim}-dimensional embeddings, file has {extra_dim}"
                    )));
                }
                cache.extend(extra_cache);
            }
            EmbeddingProvider::Trainable { .. } => {
                return Err(Error::Config(
                    "model trains its own embeddings; --embeddings-file does not apply".into(),
                ));
            }
        }
    }

    let input = parse_conll_lenient(&read_file(&args.input)?)?;
    let mut tagged: Vec<Sentence> = Vec::with_capacity(input.len());
    for sentence in &input {
        let tags = decode_sentence(&params, sentence)?;
        let mut out = sentence.clone();
        out.gold_tags = Some(tags);
        tagged.push(out);
    }
    let text = write_conll(&tagged);
    match &args.out {
        Some(path) => write_bytes(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let vocab = LabelVocab::full();
    let gold = parse_conll(&read_file(&args.gold)?, &vocab)?;
    let pred_sentences = parse_conll(&read_file(&args.pred)?, &vocab)?;
    let preds = pred_sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.gold_tags.clone().ok_or(Error::Alignment {
                sentence: i,
                msg: "prediction file sentence has no tag column".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = score_sentences(&gold, &preds, &vocab)?;
    print!("{}", format_report(&report));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Optimizer;

    #[test]
    fn defaults_depend_on_architecture() {
        let config = build_config(&HyperArgs::default()).unwrap();
        assert_eq!(config.architecture, Architecture::BilstmCrf);
        assert_eq!((config.epochs, config.learning_rate), (20, 0.01));

        let linear = build_config(&HyperArgs {
            arch: Some("linear".into()),
            ..HyperArgs::default()
        })
        .unwrap();
        assert_eq!((linear.epochs, linear.learning_rate), (5, 0.05));
    }

    #[test]
    fn flags_override_config_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# comment\narch = crf\nepochs = 7\nlr = 0.2\noptimizer = adam\nclip-norm = 2.5\n",
        )
        .unwrap();
        let config = build_config(&HyperArgs {
            lr: Some(0.3),
            config: Some(path),
            ..HyperArgs::default()
        })
        .unwrap();
        assert_eq!(config.architecture, Architecture::Crf);
        assert_eq!(config.epochs, 7); // file over default 20
        assert_eq!(config.learning_rate, 0.3); // flag over file 0.2
        assert_eq!(config.optimizer, Optimizer::Adam);
        assert_eq!(config.clip_norm, Some(2.5));
    }

    #[test]
    fn bad_config_input_is_config_error() {
        for text in ["epochs", "volume=11", "epochs=minus one", "arch=rnn"] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("run.conf");
            std::fs::write(&path, text).unwrap();
            let err = build_config(&HyperArgs {
                config: Some(path),
                ..HyperArgs::default()
            })
            .unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text} -> {err}");
        }
    }

    #[test]
    fn flag_values_are_validated() {
        let err = build_config(&HyperArgs {
            dropout: Some(1.5),
            ..HyperArgs::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn help_exits_zero_and_bad_flags_exit_four() {
        assert_eq!(run(["seqtag", "--help"]), 0);
        assert_eq!(run(["seqtag", "train", "--help"]), 0);
        assert_eq!(run(["seqtag", "--no-such-flag"]), 4);
        assert_eq!(run(["seqtag", "train"]), 4); // missing required flags
    }

    #[test]
    fn missing_files_exit_two() {
        assert_eq!(
            run([
                "seqtag",
                "train",
                "--train-file",
                "/nonexistent/corpus.txt",
                "--model",
                "/nonexistent/model.bin",
            ]),
            2
        );
        assert_eq!(
            run(["seqtag", "evaluate", "--gold", "/nonexistent/a", "--pred", "/nonexistent/b"]),
            2
        );
    }
}
