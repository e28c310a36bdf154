//! The four pipeline commands: train, evaluate, explain, inspect-data.

use std::path::{Path, PathBuf};

use lrptext_core::corpus::{load_dataset, split_dataset, tokenize, DataFormat, Dataset};
use lrptext_core::embedding::EmbeddingTable;
use lrptext_core::explain::{build_explanation, render_html, render_json, top_k_tsv};
use lrptext_core::lrp::{explain_prediction, LrpConfig};
use lrptext_core::nn::{build_model, load_model, save_model, ArchName, Hyper};
use lrptext_core::synth::{corpus_to_jsonl, synthetic_corpus};
use lrptext_core::train::{
    embed_dataset, evaluate_samples, history_csv, metrics_report, train, TrainConfig,
};
use lrptext_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sidecar written next to the model file: label order plus the
/// embedding the model was trained against, so evaluate/explain can
/// reconstruct the input space without re-specifying it.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    pub labels: Vec<String>,
    pub embedding: EmbedSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedSpec {
    Synthetic { dim: usize },
    File { path: PathBuf },
}

impl EmbedSpec {
    pub fn open(&self) -> Result<EmbeddingTable> {
        match self {
            EmbedSpec::Synthetic { dim } => Ok(EmbeddingTable::synthetic(
                *dim,
                lrptext_core::embedding::DEFAULT_BUCKET_COUNT,
            )),
            EmbedSpec::File { path } => EmbeddingTable::load_vec_file(path),
        }
    }
}

/// Resolve `--embedding` / `--synthetic-dim` into a spec; both set is a
/// config error, neither falls back to `fallback` when given.
pub fn embed_spec(
    embedding: Option<PathBuf>,
    synthetic_dim: Option<usize>,
    fallback: Option<EmbedSpec>,
) -> Result<EmbedSpec> {
    match (embedding, synthetic_dim) {
        (Some(_), Some(_)) => Err(Error::config(
            "embedding and synthetic_dim are mutually exclusive",
        )),
        (Some(path), None) => {
            if !path.exists() {
                return Err(Error::config(format!(
                    "embedding: path does not exist: {}",
                    path.display()
                )));
            }
            Ok(EmbedSpec::File { path })
        }
        (None, Some(dim)) => {
            if dim == 0 {
                return Err(Error::config("synthetic_dim must be positive"));
            }
            Ok(EmbedSpec::Synthetic { dim })
        }
        (None, None) => fallback
            .ok_or_else(|| Error::config("one of 'embedding' or 'synthetic_dim' is required")),
    }
}

fn meta_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("meta.json")
}

fn write_meta(model_path: &Path, meta: &ModelMeta) -> Result<()> {
    let json =
        serde_json::to_string_pretty(meta).map_err(|e| Error::Data(format!("meta encode: {e}")))?;
    std::fs::write(meta_path(model_path), json)?;
    Ok(())
}

fn read_meta(model_path: &Path) -> Result<Option<ModelMeta>> {
    let path = meta_path(model_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let meta = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("meta file {}: {e}", path.display())))?;
    Ok(Some(meta))
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub format: DataFormat,
    pub text_field: String,
    pub label_field: String,
    pub embedding: EmbedSpec,
    pub arch: ArchName,
    pub hyper: Hyper,
    pub train_config: TrainConfig,
    pub train_fraction: f64,
    pub out_dir: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    if !(args.train_fraction > 0.0 && args.train_fraction <= 1.0) {
        return Err(Error::config("train_fraction must be in (0, 1]"));
    }
    let ds = load_dataset(&args.data, args.format, &args.text_field, &args.label_field)?;
    let table = args.embedding.open()?;
    let (train_ds, valid_ds) = if args.train_fraction < 1.0 {
        split_dataset(&ds, args.train_fraction, args.train_config.seed)?
    } else {
        (ds.clone(), ds.clone())
    };

    let mut model = build_model(
        args.arch,
        table.dim(),
        ds.num_classes(),
        args.hyper,
        args.train_config.seed,
    )?;
    let train_samples = embed_dataset(&train_ds, &table, args.train_config.max_len)?;
    let valid_samples = embed_dataset(&valid_ds, &table, args.train_config.max_len)?;
    let history = train(
        &mut model,
        &train_samples,
        &valid_samples,
        &args.train_config,
    )?;
    let metrics = evaluate_samples(&model, &valid_samples)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let model_path = args.out_dir.join("model.lrpm");
    save_model(&model, &model_path)?;
    write_meta(
        &model_path,
        &ModelMeta {
            labels: ds.label_map.names().to_vec(),
            embedding: args.embedding.clone(),
        },
    )?;
    std::fs::write(args.out_dir.join("history.csv"), history_csv(&history))?;
    let report = metrics_report(&metrics, ds.label_map.names());
    std::fs::write(args.out_dir.join("metrics.tsv"), &report)?;

    println!(
        "trained {} for {} epoch(s); validation macro-F1 {:.4}",
        args.arch,
        history.len(),
        metrics.macro_f1
    );
    println!("artifacts written to {}", args.out_dir.display());
    Ok(())
}

pub struct EvaluateArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub format: DataFormat,
    pub text_field: String,
    pub label_field: String,
    /// explicit override; `None` uses the model's sidecar
    pub embedding: Option<EmbedSpec>,
    pub out_dir: PathBuf,
}

/// Map the dataset's labels onto the model's label order; unknown names
/// or a class-count mismatch are data errors.
fn align_labels(ds: &Dataset, meta: Option<&ModelMeta>, k: usize) -> Result<Vec<usize>> {
    let model_labels: Vec<String> = match meta {
        Some(m) => m.labels.clone(),
        None => ds.label_map.names().to_vec(),
    };
    if model_labels.len() != k {
        return Err(Error::data(format!(
            "model expects {k} classes, label map has {}",
            model_labels.len()
        )));
    }
    ds.label_map
        .names()
        .iter()
        .map(|name| {
            model_labels
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| Error::data(format!("dataset label '{name}' unknown to the model")))
        })
        .collect()
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let meta = read_meta(&args.model)?;
    let ds = load_dataset(&args.data, args.format, &args.text_field, &args.label_field)?;
    let remap = align_labels(&ds, meta.as_ref(), model.num_classes)?;

    let spec = match &args.embedding {
        Some(s) => s.clone(),
        None => meta
            .as_ref()
            .map(|m| m.embedding.clone())
            .unwrap_or(EmbedSpec::Synthetic {
                dim: model.input_dim,
            }),
    };
    let table = spec.open()?;
    if table.dim() != model.input_dim {
        return Err(Error::config(format!(
            "embedding dim {} does not match model input dim {}",
            table.dim(),
            model.input_dim
        )));
    }

    let mut samples = embed_dataset(&ds, &table, 256)?;
    for s in &mut samples {
        s.label = remap[s.label];
    }
    let metrics = evaluate_samples(&model, &samples)?;

    let names: Vec<String> = match &meta {
        Some(m) => m.labels.clone(),
        None => ds.label_map.names().to_vec(),
    };
    let report = metrics_report(&metrics, &names);
    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(args.out_dir.join("eval_metrics.tsv"), &report)?;
    print!("{report}");
    if !metrics.zero_denominator_classes.is_empty() {
        let flagged: Vec<&str> = metrics
            .zero_denominator_classes
            .iter()
            .map(|&c| names[c].as_str())
            .collect();
        println!("note: zero-denominator classes: {}", flagged.join(", "));
    }
    Ok(())
}

pub struct ExplainArgs {
    pub model: PathBuf,
    pub text: String,
    pub doc_id: String,
    pub target_class: Option<String>,
    pub k: usize,
    pub lrp: LrpConfig,
    pub max_len: usize,
    pub embedding: Option<EmbedSpec>,
    pub out_dir: PathBuf,
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let meta = read_meta(&args.model)?;
    let names: Vec<String> = match &meta {
        Some(m) => m.labels.clone(),
        None => (0..model.num_classes)
            .map(|c| format!("class_{c}"))
            .collect(),
    };
    if names.len() != model.num_classes {
        return Err(Error::data(format!(
            "model expects {} classes, label map has {}",
            model.num_classes,
            names.len()
        )));
    }

    let tokens = tokenize(&args.text);
    if tokens.is_empty() {
        return Err(Error::data("input text tokenizes to empty"));
    }

    let spec = match &args.embedding {
        Some(s) => s.clone(),
        None => meta
            .as_ref()
            .map(|m| m.embedding.clone())
            .unwrap_or(EmbedSpec::Synthetic {
                dim: model.input_dim,
            }),
    };
    let table = spec.open()?;
    if table.dim() != model.input_dim {
        return Err(Error::config(format!(
            "embedding dim {} does not match model input dim {}",
            table.dim(),
            model.input_dim
        )));
    }

    let target = match &args.target_class {
        None => None,
        Some(s) => Some(match s.parse::<usize>() {
            Ok(idx) if idx < model.num_classes => idx,
            Ok(idx) => {
                return Err(Error::config(format!(
                    "target class {idx} outside 0..{}",
                    model.num_classes
                )))
            }
            Err(_) => names
                .iter()
                .position(|n| n == s)
                .ok_or_else(|| Error::config(format!("unknown target class '{s}'")))?,
        }),
    };

    let doc = table.embed_document(&tokens, tokens.len().min(args.max_len))?;
    let result = explain_prediction(&model, &doc, &tokens, target, &args.lrp)?;
    let explanation = build_explanation(&args.doc_id, &names[result.target_class], &result);

    std::fs::create_dir_all(&args.out_dir)?;
    render_html(&explanation, &args.out_dir.join("explanation.html"))?;
    render_json(&explanation, &args.out_dir.join("explanation.json"))?;
    std::fs::write(
        args.out_dir.join("topk.tsv"),
        top_k_tsv(&explanation, args.k),
    )?;

    let marker = if explanation.counterfactual_target {
        " (counterfactual target)"
    } else {
        ""
    };
    println!(
        "predicted: {} | explained: {}{}",
        names[result.prediction.predicted_class], names[result.target_class], marker
    );
    println!("target score f_c = {:.6}", result.f_c);
    println!(
        "conservation residual = {:.3e}",
        result.conservation_residual
    );
    println!("artifacts written to {}", args.out_dir.display());
    Ok(())
}

pub enum InspectArgs {
    Dataset {
        data: PathBuf,
        format: DataFormat,
        text_field: String,
        label_field: String,
    },
    MakeSynthetic {
        num_docs: usize,
        tokens_per_doc: usize,
        seed: u64,
        out: PathBuf,
    },
}

pub fn cmd_inspect_data(args: &InspectArgs) -> Result<()> {
    let ds = match args {
        InspectArgs::Dataset {
            data,
            format,
            text_field,
            label_field,
        } => load_dataset(data, *format, text_field, label_field)?,
        InspectArgs::MakeSynthetic {
            num_docs,
            tokens_per_doc,
            seed,
            out,
        } => {
            let ds = synthetic_corpus(*num_docs, *tokens_per_doc, *seed);
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(out, corpus_to_jsonl(&ds))?;
            println!("wrote {} documents to {}", ds.len(), out.display());
            ds
        }
    };
    print!("{}", lrptext_core::corpus::distribution_report(&ds));
    Ok(())
}
