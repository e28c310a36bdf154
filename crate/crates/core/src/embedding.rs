//! Token vectors: `.vec` file loading plus hashed character n-gram
//! fallback for out-of-vocabulary tokens, and per-document matrices.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const DEFAULT_NGRAM_MIN: usize = 3;
pub const DEFAULT_NGRAM_MAX: usize = 6;
pub const DEFAULT_BUCKET_COUNT: usize = 50_000;

/// Seed for bucket-vector initialization when no subword file exists.
const BUCKET_SEED: u64 = 0x5eed_0042;

/// Immutable token -> vector table with a hashed-subword fallback.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: HashMap<String, Vec<f64>>,
    ngram_min: usize,
    ngram_max: usize,
    bucket_count: usize,
    bucket_vectors: Vec<Vec<f64>>,
    /// Rescale token vectors to unit L2 norm. Mean-pooling over n-gram
    /// buckets shrinks vectors by roughly sqrt(#grams); a table whose
    /// every token goes through that path would otherwise hand the
    /// network near-zero inputs. Loaded tables keep their file values.
    normalize: bool,
}

impl EmbeddingTable {
    /// Table with an empty vocabulary: every token goes through the
    /// subword path. Deterministic for a fixed (dim, bucket_count).
    pub fn synthetic(dim: usize, bucket_count: usize) -> Self {
        EmbeddingTable {
            dim,
            vocab: HashMap::new(),
            ngram_min: DEFAULT_NGRAM_MIN,
            ngram_max: DEFAULT_NGRAM_MAX,
            bucket_count,
            bucket_vectors: init_buckets(dim, bucket_count),
            normalize: true,
        }
    }

    /// Parse a text `.vec` file: first line `count dim`, then one
    /// `token v1 .. vd` per line. Duplicate tokens keep the last
    /// occurrence with a warning.
    pub fn load_vec_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut lines = content.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty .vec file".into(),
        })?;
        let mut parts = header.split_whitespace();
        let count: usize =
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    message: "header must be 'count dim'".into(),
                })?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "header must be 'count dim'".into(),
            })?;
        if count == 0 || dim == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "count and dim must be positive".into(),
            });
        }

        let mut vocab: HashMap<String, Vec<f64>> = HashMap::with_capacity(count);
        let mut seen = 0usize;
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut fields = raw.split_whitespace();
            let token = fields.next().unwrap().to_string();
            let vector: Vec<f64> = fields
                .map(|s| {
                    s.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad number '{s}'"),
                    })
                })
                .collect::<Result<_>>()?;
            if vector.len() != dim {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {dim} values, got {}", vector.len()),
                });
            }
            if vocab.insert(token.clone(), vector).is_some() {
                eprintln!(
                    "warning: duplicate token '{token}' in {}, keeping last",
                    path.display()
                );
            }
            seen += 1;
        }
        if seen != count {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares {count} vectors, file has {seen}"),
            });
        }

        Ok(EmbeddingTable {
            dim,
            vocab,
            ngram_min: DEFAULT_NGRAM_MIN,
            ngram_max: DEFAULT_NGRAM_MAX,
            bucket_count: DEFAULT_BUCKET_COUNT,
            bucket_vectors: init_buckets(dim, DEFAULT_BUCKET_COUNT),
            normalize: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    /// Vector for `token`: vocabulary lookup, else the mean of its hashed
    /// character n-gram bucket vectors. Never fails for non-empty tokens.
    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        assert!(!token.is_empty(), "embed_token requires a non-empty token");
        let mut out = if let Some(v) = self.vocab.get(token) {
            v.clone()
        } else {
            let grams = char_ngrams(token, self.ngram_min, self.ngram_max);
            let mut acc = vec![0.0; self.dim];
            for gram in &grams {
                let bucket = (fnv1a_64(gram.as_bytes()) % self.bucket_count as u64) as usize;
                for (o, b) in acc.iter_mut().zip(&self.bucket_vectors[bucket]) {
                    *o += *b;
                }
            }
            let n = grams.len() as f64;
            for o in &mut acc {
                *o /= n;
            }
            acc
        };
        if self.normalize {
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for o in &mut out {
                    *o /= norm;
                }
            }
        }
        out
    }

    /// Embed the first min(|tokens|, max_len) tokens; remaining rows are
    /// zero with mask false.
    pub fn embed_document(&self, tokens: &[String], max_len: usize) -> Result<DocumentMatrix> {
        if tokens.is_empty() {
            return Err(Error::data("cannot embed an empty token list"));
        }
        let t_real = tokens.len().min(max_len);
        let mut values = Mat::zeros(max_len, self.dim);
        let mut mask = vec![false; max_len];
        for (t, token) in tokens.iter().take(t_real).enumerate() {
            let v = self.embed_token(token);
            values.row_mut(t).copy_from_slice(&v);
            mask[t] = true;
        }
        Ok(DocumentMatrix { values, mask })
    }
}

/// A T x d embedding matrix with a padding mask. Real tokens occupy a
/// contiguous prefix; padded rows are all-zero.
#[derive(Debug, Clone)]
pub struct DocumentMatrix {
    pub values: Mat,
    pub mask: Vec<bool>,
}

impl DocumentMatrix {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Character n-grams of the token wrapped in `<` `>` boundary markers.
pub fn char_ngrams(token: &str, min: usize, max: usize) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut grams = Vec::new();
    for n in min..=max.min(wrapped.len()) {
        for start in 0..=wrapped.len() - n {
            grams.push(wrapped[start..start + n].iter().collect());
        }
    }
    grams
}

/// FNV-1a 64-bit; also used as the model-file checksum.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn init_buckets(dim: usize, bucket_count: usize) -> Vec<Vec<f64>> {
    assert!(bucket_count >= 1, "bucket_count must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(BUCKET_SEED);
    let half = 0.5 / dim as f64;
    (0..bucket_count)
        .map(|_| (0..dim).map(|_| rng.random_range(-half..half)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_vec_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{content}").unwrap();
        f
    }

    #[test]
    fn loads_small_vec_file() {
        let f = write_vec_file("2 3\na 1 0 0\nb 0 1 0\n");
        let table = EmbeddingTable::load_vec_file(f.path()).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.vocab_len(), 2);
        assert_eq!(table.embed_token("a"), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let f = write_vec_file("5 3\na 1 0 0\nb 0 1 0\nc 0 0 1\nd 1 1 0\n");
        assert!(EmbeddingTable::load_vec_file(f.path()).is_err());
    }

    #[test]
    fn dimension_mismatch_reports_line() {
        let f = write_vec_file("2 3\na 1 0 0\nb 0 1\n");
        match EmbeddingTable::load_vec_file(f.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn duplicate_token_keeps_last() {
        let f = write_vec_file("2 2\na 1 0\na 0 1\n");
        let table = EmbeddingTable::load_vec_file(f.path()).unwrap();
        assert_eq!(table.embed_token("a"), vec![0.0, 1.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_vec_file("");
        assert!(EmbeddingTable::load_vec_file(f.path()).is_err());
    }

    // Independent re-implementation of the subword path: same published
    // conventions, different code path, used as the oracle for OOV vectors.
    fn oov_oracle(table: &EmbeddingTable, token: &str) -> Vec<f64> {
        let wrapped = format!("<{token}>");
        let chars: Vec<char> = wrapped.chars().collect();
        let mut grams: Vec<String> = Vec::new();
        for n in 3..=6usize {
            if n > chars.len() {
                break;
            }
            for w in chars.windows(n) {
                grams.push(w.iter().collect());
            }
        }
        let mut sum = vec![0.0; table.dim()];
        for g in &grams {
            // FNV-1a, written out longhand
            let mut h: u64 = 14695981039346656037;
            for b in g.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(1099511628211);
            }
            let bucket = (h % table.bucket_count as u64) as usize;
            for (s, v) in sum.iter_mut().zip(&table.bucket_vectors[bucket]) {
                *s += *v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / grams.len() as f64).collect();
        // synthetic tables rescale to unit norm
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        mean.iter().map(|v| v / norm).collect()
    }

    #[test]
    fn oov_vector_matches_independent_rehash() {
        let table = EmbeddingTable::synthetic(8, 1000);
        for token in ["acrylonitrile", "qx", "modem"] {
            assert_eq!(table.embed_token(token), oov_oracle(&table, token));
        }
    }

    #[test]
    fn oov_is_deterministic_across_tables() {
        let a = EmbeddingTable::synthetic(16, 500);
        let b = EmbeddingTable::synthetic(16, 500);
        assert_eq!(a.embed_token("monomer"), b.embed_token("monomer"));
    }

    #[test]
    fn distinct_oov_tokens_generally_differ() {
        let table = EmbeddingTable::synthetic(16, 50_000);
        let tokens = ["alkali", "modem", "polymer", "bandwidth", "acetate"];
        let mut distinct = 0;
        for i in 0..tokens.len() {
            for j in i + 1..tokens.len() {
                if table.embed_token(tokens[i]) != table.embed_token(tokens[j]) {
                    distinct += 1;
                }
            }
        }
        assert_eq!(distinct, 10);
    }

    #[test]
    fn embed_document_pads_and_truncates() {
        let table = EmbeddingTable::synthetic(4, 100);
        let tokens: Vec<String> = vec!["acid".into(), "base".into()];
        let m = table.embed_document(&tokens, 4).unwrap();
        assert_eq!(m.values.rows(), 4);
        assert_eq!(m.mask, vec![true, true, false, false]);
        assert_eq!(m.values.row(2), &[0.0; 4]);
        assert_eq!(m.values.row(0), table.embed_token("acid").as_slice());

        let long: Vec<String> = (0..300).map(|i| format!("t{i}")).collect();
        let m = table.embed_document(&long, 256).unwrap();
        assert_eq!(m.real_len(), 256);
        assert_eq!(m.values.row(255), table.embed_token("t255").as_slice());
    }

    #[test]
    fn embed_document_rejects_empty() {
        let table = EmbeddingTable::synthetic(4, 100);
        assert!(table.embed_document(&[], 4).is_err());
    }
}
