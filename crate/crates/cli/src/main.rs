//! Command-line front end for the explainable text classifier.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lrptext_core::corpus::DataFormat;
use lrptext_core::lrp::LrpConfig;
use lrptext_core::nn::{ArchName, Hyper};
use lrptext_core::train::{Optimizer, TrainConfig};
use lrptext_core::{Error, Result};

use commands::{
    cmd_evaluate, cmd_explain, cmd_inspect_data, cmd_train, embed_spec, EvaluateArgs, ExplainArgs,
    InspectArgs, TrainArgs,
};
use config::{pick, require, require_path, resolve_out_dir, FileConfig};

#[derive(Parser)]
#[command(
    name = "lrptext",
    version,
    about = "Train, evaluate, and explain text classifiers with layer-wise relevance propagation"
)]
struct Cli {
    /// TOML config file; command-line flags take precedence over its keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct DataOpts {
    /// Labeled dataset (CSV with header, or JSONL)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format: csv or jsonl
    #[arg(long)]
    format: Option<String>,
    /// Column/field holding the document text
    #[arg(long)]
    text_field: Option<String>,
    /// Column/field holding the class label
    #[arg(long)]
    label_field: Option<String>,
}

#[derive(Args, Default)]
struct EmbedOpts {
    /// Word-vector file in text .vec format
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Use a deterministic synthetic embedding of this dimension instead
    #[arg(long)]
    synthetic_dim: Option<usize>,
}

#[derive(Args, Default)]
struct OutOpts {
    /// Output directory (also settable via LRPTEXT_OUT_DIR)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and write model, history, and metrics artifacts
    Train {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        embed: EmbedOpts,
        #[command(flatten)]
        out: OutOpts,
        /// Architecture: bilstm, cnn, or cnn_bilstm
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Optimizer: adam or sgd
        #[arg(long)]
        optimizer: Option<String>,
        /// Maximum tokens per document
        #[arg(long)]
        max_len: Option<usize>,
        /// Early-stopping patience in epochs; 0 disables early stopping
        #[arg(long)]
        patience: Option<usize>,
        /// Fraction of documents used for training; the rest validate
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Units of the two recurrent layers, e.g. "64,32"
        #[arg(long)]
        bilstm_units: Option<String>,
        #[arg(long)]
        dense_hidden: Option<usize>,
        #[arg(long)]
        conv_filters: Option<usize>,
        #[arg(long)]
        conv_kernel: Option<usize>,
        /// RNG seed (required; every run is deterministic under it)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a trained model against a labeled dataset
    Evaluate {
        /// Trained model file
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        embed: EmbedOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Explain one prediction as an HTML/JSON heatmap plus top-k words
    Explain {
        /// Trained model file
        #[arg(long)]
        model: PathBuf,
        /// Document text to explain
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        /// File whose contents are the document text
        #[arg(long)]
        input: Option<PathBuf>,
        /// Class to explain (name or index); defaults to the prediction
        #[arg(long)]
        target_class: Option<String>,
        /// Number of top words to report
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// LRP stabilizer
        #[arg(long)]
        epsilon: Option<f64>,
        /// LRP bias handling: 1 redistributes bias shares, 0 leaks them
        #[arg(long)]
        delta: Option<f64>,
        /// Maximum tokens per document
        #[arg(long)]
        max_len: Option<usize>,
        #[command(flatten)]
        embed: EmbedOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Report a dataset's class distribution, or generate a synthetic one
    InspectData {
        #[command(flatten)]
        data: DataOpts,
        /// Generate the keyword corpus instead of reading a dataset
        #[arg(long)]
        make_synthetic: bool,
        #[arg(long, default_value_t = 200)]
        num_docs: usize,
        #[arg(long, default_value_t = 20)]
        tokens_per_doc: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the generated JSONL corpus
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        out_dir: OutOpts,
    },
}

fn parse_units(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::config(format!(
            "bilstm_units must be 'first,second', got '{s}'"
        )));
    }
    let a = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bilstm_units: bad number '{}'", parts[0])))?;
    let b = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bilstm_units: bad number '{}'", parts[1])))?;
    Ok((a, b))
}

fn parse_optimizer(s: &str) -> Result<Optimizer> {
    match s {
        "adam" => Ok(Optimizer::default()),
        "sgd" => Ok(Optimizer::Sgd),
        other => Err(Error::config(format!("unknown optimizer '{other}'"))),
    }
}

fn data_args(cli: &DataOpts, file: &FileConfig) -> Result<(PathBuf, DataFormat, String, String)> {
    let data = require_path(pick(&cli.data, &file.data), "data")?;
    let format: DataFormat = pick(&cli.format, &file.format)
        .unwrap_or_else(|| "jsonl".into())
        .parse()?;
    let text_field = pick(&cli.text_field, &file.text_field).unwrap_or_else(|| "text".into());
    let label_field = pick(&cli.label_field, &file.label_field).unwrap_or_else(|| "label".into());
    Ok((data, format, text_field, label_field))
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train {
            data,
            embed,
            out,
            arch,
            epochs,
            batch_size,
            learning_rate,
            optimizer,
            max_len,
            patience,
            train_fraction,
            bilstm_units,
            dense_hidden,
            conv_filters,
            conv_kernel,
            seed,
        } => {
            let (data, format, text_field, label_field) = data_args(&data, &file)?;
            let embedding = embed_spec(
                pick(&embed.embedding, &file.embedding),
                pick(&embed.synthetic_dim, &file.synthetic_dim),
                None,
            )?;
            let arch: ArchName = pick(&arch, &file.arch)
                .unwrap_or_else(|| "bilstm".into())
                .parse()?;
            let seed = require(seed.or(file.seed), "seed")?;

            let defaults = Hyper::default();
            let file_units = file
                .bilstm_units
                .as_ref()
                .map(|v| {
                    if v.len() == 2 {
                        Ok((v[0], v[1]))
                    } else {
                        Err(Error::config("bilstm_units must have two entries"))
                    }
                })
                .transpose()?;
            let hyper = Hyper {
                bilstm_units: bilstm_units
                    .as_deref()
                    .map(parse_units)
                    .transpose()?
                    .or(file_units)
                    .unwrap_or(defaults.bilstm_units),
                dense_hidden: pick(&dense_hidden, &file.dense_hidden)
                    .unwrap_or(defaults.dense_hidden),
                conv_filters: pick(&conv_filters, &file.conv_filters)
                    .unwrap_or(defaults.conv_filters),
                conv_kernel: pick(&conv_kernel, &file.conv_kernel).unwrap_or(defaults.conv_kernel),
            };

            let base = TrainConfig::default();
            let train_config = TrainConfig {
                epochs: pick(&epochs, &file.epochs).unwrap_or(base.epochs),
                batch_size: pick(&batch_size, &file.batch_size).unwrap_or(base.batch_size),
                learning_rate: pick(&learning_rate, &file.learning_rate)
                    .unwrap_or(base.learning_rate),
                optimizer: pick(&optimizer, &file.optimizer)
                    .as_deref()
                    .map(parse_optimizer)
                    .transpose()?
                    .unwrap_or(base.optimizer),
                seed,
                max_len: pick(&max_len, &file.max_len).unwrap_or(base.max_len),
                class_weights: None,
                patience: pick(&patience, &file.patience).unwrap_or(base.patience),
            };

            cmd_train(&TrainArgs {
                data,
                format,
                text_field,
                label_field,
                embedding,
                arch,
                hyper,
                train_config,
                train_fraction: pick(&train_fraction, &file.train_fraction).unwrap_or(0.8),
                out_dir: resolve_out_dir(&out.out_dir, &file.out_dir),
            })
        }
        Command::Evaluate {
            model,
            data,
            embed,
            out,
        } => {
            let (data, format, text_field, label_field) = data_args(&data, &file)?;
            let embedding = match (
                pick(&embed.embedding, &file.embedding),
                pick(&embed.synthetic_dim, &file.synthetic_dim),
            ) {
                (None, None) => None,
                (e, s) => Some(embed_spec(e, s, None)?),
            };
            cmd_evaluate(&EvaluateArgs {
                model,
                data,
                format,
                text_field,
                label_field,
                embedding,
                out_dir: resolve_out_dir(&out.out_dir, &file.out_dir),
            })
        }
        Command::Explain {
            model,
            text,
            input,
            target_class,
            k,
            epsilon,
            delta,
            max_len,
            embed,
            out,
        } => {
            let (text, doc_id) = match (text, input) {
                (Some(t), None) => (t, "cli".to_string()),
                (None, Some(path)) => {
                    let t = std::fs::read_to_string(&path)
                        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
                    let id = path
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "input".into());
                    (t, id)
                }
                _ => {
                    return Err(Error::config(
                        "exactly one of --text or --input is required",
                    ))
                }
            };
            let base = LrpConfig::default();
            let lrp = LrpConfig {
                epsilon: epsilon.or(file.epsilon).unwrap_or(base.epsilon),
                delta: delta.or(file.delta).unwrap_or(base.delta),
            };
            let embedding = match (
                pick(&embed.embedding, &file.embedding),
                pick(&embed.synthetic_dim, &file.synthetic_dim),
            ) {
                (None, None) => None,
                (e, s) => Some(embed_spec(e, s, None)?),
            };
            cmd_explain(&ExplainArgs {
                model,
                text,
                doc_id,
                target_class,
                k,
                lrp,
                max_len: pick(&max_len, &file.max_len).unwrap_or(256),
                embedding,
                out_dir: resolve_out_dir(&out.out_dir, &file.out_dir),
            })
        }
        Command::InspectData {
            data,
            make_synthetic,
            num_docs,
            tokens_per_doc,
            seed,
            out,
            out_dir,
        } => {
            let args = if make_synthetic {
                InspectArgs::MakeSynthetic {
                    num_docs,
                    tokens_per_doc,
                    seed: require(seed.or(file.seed), "seed")?,
                    out: out.unwrap_or_else(|| {
                        resolve_out_dir(&out_dir.out_dir, &file.out_dir).join("synthetic.jsonl")
                    }),
                }
            } else {
                let (data, format, text_field, label_field) = data_args(&data, &file)?;
                InspectArgs::Dataset {
                    data,
                    format,
                    text_field,
                    label_field,
                }
            };
            cmd_inspect_data(&args)
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::ModelFile(_) | Error::Io(_) => 3,
        Error::Numeric { .. } | Error::Shape { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
