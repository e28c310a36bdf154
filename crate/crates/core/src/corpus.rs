//! Dataset ingestion: tokenization, label mapping, splitting and
//! class-distribution reporting.

use std::collections::HashMap;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled, tokenized text sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub raw_text: String,
}

/// Bijection between class names and indices 0..K-1, in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelMap {
    pub fn new() -> Self {
        LabelMap {
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        LabelMap { names, index }
    }

    /// Index of `name`, inserting it if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Default for LabelMap {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub label_map: LabelMap,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for doc in &self.documents {
            if doc.label >= self.label_map.len() {
                return Err(Error::data(format!(
                    "document {} has label {} outside 0..{}",
                    doc.id,
                    doc.label,
                    self.label_map.len()
                )));
            }
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::data(format!("duplicate document id {}", doc.id)));
            }
        }
        Ok(())
    }
}

/// Lowercase, strip punctuation to spaces, split on whitespace.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    raw_text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::config(format!("unknown dataset format '{other}'"))),
        }
    }
}

/// Load a labeled dataset from CSV (header row required) or JSONL.
///
/// The label map is built from distinct labels in first-seen order.
/// Documents whose text tokenizes to empty are dropped with a warning on
/// stderr rather than admitted.
pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    text_field: &str,
    label_field: &str,
) -> Result<Dataset> {
    let records: Vec<(usize, String, String)> = match format {
        DataFormat::Csv => read_csv_records(path, text_field, label_field)?,
        DataFormat::Jsonl => read_jsonl_records(path, text_field, label_field)?,
    };
    if records.is_empty() {
        return Err(Error::data(format!("empty dataset: {}", path.display())));
    }

    let mut label_map = LabelMap::new();
    let mut documents = Vec::with_capacity(records.len());
    for (line, text, label) in records {
        let tokens = tokenize(&text);
        let label_idx = label_map.intern(&label);
        if tokens.is_empty() {
            eprintln!(
                "warning: {}:{line}: document tokenizes to empty, skipping",
                path.display()
            );
            continue;
        }
        documents.push(Document {
            id: format!("{}:{line}", path.display()),
            tokens,
            label: label_idx,
            raw_text: text,
        });
    }
    if documents.is_empty() {
        return Err(Error::data(format!(
            "empty dataset after preprocessing: {}",
            path.display()
        )));
    }
    if label_map.len() < 2 {
        return Err(Error::data(format!(
            "dataset has {} distinct label(s); need at least 2",
            label_map.len()
        )));
    }

    let ds = Dataset {
        documents,
        label_map,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_csv_records(
    path: &Path,
    text_field: &str,
    label_field: &str,
) -> Result<Vec<(usize, String, String)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let text_idx = headers
        .iter()
        .position(|h| h == text_field)
        .ok_or_else(|| Error::config(format!("text field '{text_field}' not found in header")))?;
    let label_idx = headers
        .iter()
        .position(|h| h == label_field)
        .ok_or_else(|| Error::config(format!("label field '{label_field}' not found in header")))?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after header
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let text = record.get(text_idx).ok_or_else(|| Error::Parse {
            line,
            message: format!("missing field '{text_field}'"),
        })?;
        let label = record.get(label_idx).ok_or_else(|| Error::Parse {
            line,
            message: format!("missing field '{label_field}'"),
        })?;
        out.push((line, text.to_string(), label.to_string()));
    }
    Ok(out)
}

fn read_jsonl_records(
    path: &Path,
    text_field: &str,
    label_field: &str,
) -> Result<Vec<(usize, String, String)>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let text = value
            .get(text_field)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("missing string field '{text_field}'"),
            })?;
        let label = match value.get(label_field) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("missing field '{label_field}'"),
                })
            }
        };
        out.push((line, text.to_string(), label));
    }
    Ok(out)
}

/// Deterministic shuffled split; the first half holds ceil(n * fraction)
/// documents and both halves share the label map.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction must be in (0,1), got {train_fraction}"
        )));
    }
    if ds.len() < 2 {
        return Err(Error::data(
            "cannot split a dataset with fewer than 2 documents",
        ));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let train_size = ((ds.len() as f64) * train_fraction).ceil() as usize;
    let train_docs = order[..train_size]
        .iter()
        .map(|&i| ds.documents[i].clone())
        .collect();
    let test_docs = order[train_size..]
        .iter()
        .map(|&i| ds.documents[i].clone())
        .collect();
    Ok((
        Dataset {
            documents: train_docs,
            label_map: ds.label_map.clone(),
        },
        Dataset {
            documents: test_docs,
            label_map: ds.label_map.clone(),
        },
    ))
}

/// Per-class document counts, indexed by class; classes with no documents
/// report zero.
pub fn class_distribution(ds: &Dataset) -> Vec<usize> {
    let mut counts = vec![0usize; ds.num_classes()];
    for doc in &ds.documents {
        counts[doc.label] += 1;
    }
    counts
}

/// Render the class distribution as a TSV table (class, label, count).
pub fn distribution_report(ds: &Dataset) -> String {
    let counts = class_distribution(ds);
    let mut out = String::from("class\tlabel\tcount\n");
    for (i, count) in counts.iter().enumerate() {
        let _ = writeln!(out, "{}\t{}\t{}", ds.label_map.name(i), i, count);
    }
    let _ = writeln!(out, "total\t\t{}", ds.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    #[test]
    fn tokenize_strips_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Alkali-soluble Polymer."),
            vec!["alkali", "soluble", "polymer"]
        );
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("POWER power Power"), vec!["power"; 3]);
    }

    #[test]
    fn load_jsonl_builds_label_map_in_first_seen_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"text":"acid monomer","label":"chem"}}"#).unwrap();
        writeln!(f, r#"{{"text":"alkyl polymer","label":"chem"}}"#).unwrap();
        writeln!(f, r#"{{"text":"modem power","label":"elec"}}"#).unwrap();
        let ds = load_dataset(f.path(), DataFormat::Jsonl, "text", "label").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.label_map.name(0), "chem");
        assert_eq!(ds.label_map.name(1), "elec");
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let err = load_dataset(f.path(), DataFormat::Jsonl, "text", "label").unwrap_err();
        assert!(err.to_string().contains("empty dataset"));
    }

    #[test]
    fn missing_label_column_is_a_config_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "text,category").unwrap();
        writeln!(f, "acid monomer,chem").unwrap();
        let err = load_dataset(f.path(), DataFormat::Csv, "text", "label").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn malformed_jsonl_names_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"text":"ok","label":"a"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        let err = load_dataset(f.path(), DataFormat::Jsonl, "text", "label").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected: {other}"),
        }
    }

    fn toy_dataset(n: usize) -> Dataset {
        let label_map = LabelMap::from_names(vec!["a".into(), "b".into()]);
        let documents = (0..n)
            .map(|i| Document {
                id: format!("doc{i}"),
                tokens: vec!["word".into()],
                label: i % 2,
                raw_text: "word".into(),
            })
            .collect();
        Dataset {
            documents,
            label_map,
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy_dataset(10);
        let (tr, te) = split_dataset(&ds, 0.8, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split_dataset(&ds, 0.8, 7).unwrap();
        let ids = |d: &Dataset| d.documents.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&tr), ids(&tr2));
        assert_eq!(ids(&te), ids(&te2));
    }

    #[test]
    fn split_is_disjoint_partition() {
        let ds = toy_dataset(100);
        let (tr, te) = split_dataset(&ds, 0.8, 3).unwrap();
        let tr_ids: HashSet<_> = tr.documents.iter().map(|d| d.id.clone()).collect();
        let te_ids: HashSet<_> = te.documents.iter().map(|d| d.id.clone()).collect();
        assert!(tr_ids.is_disjoint(&te_ids));
        assert_eq!(tr_ids.len() + te_ids.len(), 100);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = toy_dataset(4);
        assert!(split_dataset(&ds, 0.0, 1).is_err());
        assert!(split_dataset(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn distribution_counts_and_zero_classes() {
        let mut ds = toy_dataset(3);
        ds.documents[2].label = 0;
        let mut lm = LabelMap::from_names(vec!["a".into(), "b".into(), "c".into()]);
        lm.intern("a");
        ds.label_map = lm;
        let counts = class_distribution(&ds);
        assert_eq!(counts, vec![2, 1, 0]);
        let report = distribution_report(&ds);
        assert!(report.contains("c\t2\t0"));
    }

    proptest! {
        #[test]
        fn tokenize_idempotent(s in "\\PC{0,80}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn distribution_sums_to_len(labels in proptest::collection::vec(0usize..3, 1..50)) {
            let label_map = LabelMap::from_names(vec!["a".into(), "b".into(), "c".into()]);
            let documents = labels.iter().enumerate().map(|(i, &l)| Document {
                id: format!("d{i}"),
                tokens: vec!["t".into()],
                label: l,
                raw_text: "t".into(),
            }).collect();
            let ds = Dataset { documents, label_map };
            let counts = class_distribution(&ds);
            prop_assert_eq!(counts.iter().sum::<usize>(), ds.len());
        }
    }
}
