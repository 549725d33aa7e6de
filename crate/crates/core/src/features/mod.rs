//! Handcrafted pair features: lexical/IR scores, embedding distances and
//! answer readability, plus the dense layer that maps them to `c_ext`.
//!
//! What gets extracted is driven by a [`FeatureManifest`], an ordered list
//! of `(name, family, extractor id)` rows. The default manifest has 51 rows.

mod cache;
mod lexical;
mod neural;
mod norm;
mod readability;
mod stats;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::QAExample;
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};

pub use cache::{cache_path, dataset_hash, load_or_extract, CacheStatus, FeatureTable};
pub use lexical::{bm25, contains_run, lexical_features, lm_score, LexicalFeatures, BM25_B, BM25_K1, DIRICHLET_MU};
pub use neural::{neural_features, sentence_vectors, CONSTRUCTIONS, MEASURES};
pub use norm::{normalize_backward, normalize_features, normalize_forward, FeatureNormParams};
pub use readability::{char_length, is_complex, readability_features, syllables, ReadabilityFeatures};
pub use stats::{build_stats, CorpusStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFamily {
    Lexical,
    Neural,
    Readability,
}
string_enum!(FeatureFamily { Lexical => "lexical", Neural => "neural", Readability => "readability" });

const LEXICAL_IDS: [&str; 8] = [
    "q_len",
    "a_len",
    "overlap",
    "overlap_ratio",
    "exact_match",
    "idf_overlap",
    "bm25",
    "lm_dirichlet",
];
const READABILITY_IDS: [&str; 8] = ["cpw", "spw", "wps", "cwps", "cwr", "dale_chall", "a_char_len", "q_char_len"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub family: FeatureFamily,
    /// `lexical.<id>`, `neural.<measure>.<construction>` or `readability.<id>`.
    pub extractor: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Lexical(usize),
    Neural { construction: usize, measure: usize },
    Readability(usize),
}

fn resolve(extractor: &str) -> Option<(FeatureFamily, Slot)> {
    let (family, rest) = extractor.split_once('.')?;
    match family {
        "lexical" => LEXICAL_IDS
            .iter()
            .position(|&i| i == rest)
            .map(|i| (FeatureFamily::Lexical, Slot::Lexical(i))),
        "readability" => READABILITY_IDS
            .iter()
            .position(|&i| i == rest)
            .map(|i| (FeatureFamily::Readability, Slot::Readability(i))),
        "neural" => {
            let (m, c) = rest.split_once('.')?;
            let measure = MEASURES.iter().position(|&x| x == m)?;
            let construction = CONSTRUCTIONS.iter().position(|&x| x == c)?;
            Some((FeatureFamily::Neural, Slot::Neural { construction, measure }))
        }
        _ => None,
    }
}

/// Ordered feature list; the order fixes the layout of every feature vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureManifest {
    entries: Vec<FeatureEntry>,
    slots: Vec<Slot>,
}

impl FeatureManifest {
    pub fn new(entries: Vec<FeatureEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("feature manifest is empty".into()));
        }
        let mut names = HashSet::new();
        let mut slots = Vec::with_capacity(entries.len());
        for e in &entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate feature name `{}`", e.name)));
            }
            match resolve(&e.extractor) {
                Some((family, slot)) if family == e.family => slots.push(slot),
                Some((family, _)) => {
                    return Err(Error::Config(format!(
                        "feature `{}` declares family {} but extractor `{}` is {family}",
                        e.name, e.family, e.extractor
                    )))
                }
                None => return Err(Error::Config(format!("unknown feature extractor `{}`", e.extractor))),
            }
        }
        Ok(FeatureManifest { entries, slots })
    }

    /// The standard 51-feature layout: 8 lexical, 7 measures × 5
    /// constructions, 8 readability.
    pub fn default_51() -> Self {
        let mut entries = Vec::with_capacity(51);
        for id in LEXICAL_IDS {
            entries.push(FeatureEntry {
                name: id.into(),
                family: FeatureFamily::Lexical,
                extractor: format!("lexical.{id}"),
            });
        }
        for c in CONSTRUCTIONS {
            for m in MEASURES {
                entries.push(FeatureEntry {
                    name: format!("{m}.{c}"),
                    family: FeatureFamily::Neural,
                    extractor: format!("neural.{m}.{c}"),
                });
            }
        }
        for id in READABILITY_IDS {
            entries.push(FeatureEntry {
                name: id.into(),
                family: FeatureFamily::Readability,
                extractor: format!("readability.{id}"),
            });
        }
        Self::new(entries).expect("default manifest is valid")
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    /// One `name<TAB>family<TAB>extractor` line per entry.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}", e.name, e.family, e.extractor);
        }
        s
    }

    /// Parses [`FeatureManifest::to_text`] output; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [name, family, extractor] = cols[..] else {
                return Err(Error::Parse {
                    path: "<manifest>".into(),
                    line: n + 1,
                    msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            };
            entries.push(FeatureEntry {
                name: name.into(),
                family: family.parse()?,
                extractor: extractor.into(),
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    fn needs(&self, family: FeatureFamily) -> bool {
        self.entries.iter().any(|e| e.family == family)
    }
}

/// Feature values aligned with a manifest; always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {i} is {}", values[i])));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Everything extraction reads. Stats must come from training data only.
#[derive(Clone, Copy)]
pub struct FeatureExtractor<'a> {
    pub manifest: &'a FeatureManifest,
    pub stats: &'a CorpusStats,
    pub primary: &'a EmbeddingStore<f64>,
    pub secondary: Option<&'a EmbeddingStore<f64>>,
    pub easy_words: Option<&'a HashSet<String>>,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(manifest: &'a FeatureManifest, stats: &'a CorpusStats, primary: &'a EmbeddingStore<f64>) -> Self {
        FeatureExtractor {
            manifest,
            stats,
            primary,
            secondary: None,
            easy_words: None,
        }
    }

    pub fn extract_pair<S: AsRef<str>>(&self, q: &[S], a: &[S], answer_sentences: usize) -> Result<FeatureVector> {
        if q.is_empty() || a.is_empty() {
            return Err(Error::EmptyInput("extract"));
        }
        let lex = self
            .manifest
            .needs(FeatureFamily::Lexical)
            .then(|| lexical_features(q, a, self.stats).named().map(|(_, v)| v));
        let neural = if self.manifest.needs(FeatureFamily::Neural) {
            let vq = sentence_vectors(q, self.primary, self.secondary, self.stats)?;
            let va = sentence_vectors(a, self.primary, self.secondary, self.stats)?;
            let mut table = [[0.0; 7]; 5];
            for c in 0..5 {
                table[c] = neural_features(&vq[c], &va[c])?;
            }
            Some(table)
        } else {
            None
        };
        let read = self.manifest.needs(FeatureFamily::Readability).then(|| {
            let r = readability_features(a, answer_sentences, self.easy_words).named().map(|(_, v)| v);
            let mut out = [0.0; 8];
            out[..6].copy_from_slice(&r);
            out[6] = char_length(a);
            out[7] = char_length(q);
            out
        });
        let values = self
            .manifest
            .slots
            .iter()
            .map(|slot| match *slot {
                Slot::Lexical(i) => lex.as_ref().expect("lexical computed")[i],
                Slot::Neural { construction, measure } => neural.as_ref().expect("neural computed")[construction][measure],
                Slot::Readability(i) => read.as_ref().expect("readability computed")[i],
            })
            .collect();
        FeatureVector::new(values)
    }

    pub fn extract(&self, ex: &QAExample) -> Result<FeatureVector> {
        self.extract_pair(&ex.question_tokens, &ex.answer_tokens, ex.answer_sentences)
    }

    /// Extracts in parallel; output order follows `examples`.
    pub fn extract_all(&self, examples: &[&QAExample]) -> Result<Vec<FeatureVector>> {
        examples.par_iter().map(|ex| self.extract(ex)).collect()
    }
}

/// Per-feature standardization fitted on training vectors. Raw features span
/// several orders of magnitude (lengths vs. ratios), so they are z-scored
/// before the dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(n: usize) -> Self {
        FeatureScaler {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn fit<'v>(vectors: impl IntoIterator<Item = &'v [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = vectors.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(Error::EmptyInput("FeatureScaler::fit"));
        };
        let n = first.len();
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for r in &rows {
            if r.len() != n {
                return Err(Error::shape("FeatureScaler::fit", &[r.len()], &[n]));
            }
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v / count);
        }
        let mut var = vec![0.0; n];
        for r in &rows {
            var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m) / count);
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(FeatureScaler { mean, std })
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}
