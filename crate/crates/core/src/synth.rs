//! Hermetic synthetic keyword corpus: nine themed classes, each with a
//! planted keyword set that fully determines the label. Used by the
//! acceptance checks and the `inspect-data --make-synthetic` command.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Document, LabelMap};

/// Class names with their planted keyword sets.
pub const CLASSES: [(&str, [&str; 4]); 9] = [
    (
        "human_necessities",
        ["garment", "nutrient", "hygiene", "furniture"],
    ),
    (
        "performing_operations",
        ["conveyor", "drilling", "molding", "welding"],
    ),
    ("chemistry", ["alkali", "monomer", "acid", "polymer"]),
    ("textiles", ["yarn", "weaving", "fabric", "loom"]),
    (
        "fixed_constructions",
        ["girder", "masonry", "pavement", "scaffold"],
    ),
    (
        "mechanical_engineering",
        ["piston", "gearbox", "turbine", "crankshaft"],
    ),
    ("physics", ["photon", "lens", "oscillator", "spectrometer"]),
    (
        "electricity",
        ["modem", "bandwidth", "voltage", "transistor"],
    ),
    ("general", ["container", "fastener", "holder", "bracket"]),
];

const FILLER: [&str; 24] = [
    "the",
    "method",
    "device",
    "system",
    "wherein",
    "comprising",
    "first",
    "second",
    "portion",
    "configured",
    "member",
    "surface",
    "element",
    "having",
    "means",
    "plurality",
    "assembly",
    "process",
    "between",
    "formed",
    "invention",
    "according",
    "claim",
    "includes",
];

/// Number of planted keyword tokens per document.
const KEYWORDS_PER_DOC: usize = 5;

/// Deterministic labeled corpus of `num_docs` documents with
/// `tokens_per_doc` tokens each, cycling through the nine classes.
pub fn synthetic_corpus(num_docs: usize, tokens_per_doc: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label_map = LabelMap::from_names(CLASSES.iter().map(|(n, _)| n.to_string()).collect());
    let documents = (0..num_docs)
        .map(|i| {
            let class = i % CLASSES.len();
            let keywords = &CLASSES[class].1;
            let mut tokens: Vec<String> = (0..tokens_per_doc)
                .map(|_| FILLER.choose(&mut rng).unwrap().to_string())
                .collect();
            // plant keywords at distinct positions
            let mut positions: Vec<usize> = (0..tokens_per_doc).collect();
            for k in 0..KEYWORDS_PER_DOC.min(tokens_per_doc) {
                let pick = rng.random_range(0..positions.len());
                let pos = positions.swap_remove(pick);
                tokens[pos] = keywords[k % keywords.len()].to_string();
            }
            let raw_text = tokens.join(" ");
            Document {
                id: format!("synth-{i}"),
                tokens,
                label: class,
                raw_text,
            }
        })
        .collect();
    Dataset {
        documents,
        label_map,
    }
}

/// True if `token` is one of `class`'s planted keywords.
pub fn is_planted_keyword(class: usize, token: &str) -> bool {
    CLASSES[class].1.contains(&token)
}

/// Serialize the corpus as JSONL with `text` and `label` fields.
pub fn corpus_to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for doc in &ds.documents {
        let obj = serde_json::json!({
            "text": doc.raw_text,
            "label": ds.label_map.name(doc.label),
        });
        out.push_str(&obj.to_string());
        out.push('\n');
    }
    out
}
