//! On-disk feature table keyed by dataset and manifest hashes.
//!
//! ```text
//! # rtm-features 1
//! # manifest <sha256>
//! # dataset <sha256>
//! # names<TAB>bm25<TAB>...
//! <qid><TAB><aid><TAB><v1><TAB>...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! a read-back table is bit-identical to the one written.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, QAExample, SplitName};
use crate::error::{Error, Result};

use super::{FeatureExtractor, FeatureManifest};

const MAGIC: &str = "# rtm-features 1";

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub manifest_hash: String,
    pub dataset_hash: String,
    pub names: Vec<String>,
    rows: IndexMap<(String, String), Vec<f64>>,
}

impl FeatureTable {
    pub fn new(manifest: &FeatureManifest, dataset_hash: &str) -> Self {
        FeatureTable {
            manifest_hash: manifest.hash(),
            dataset_hash: dataset_hash.to_string(),
            names: manifest.names().into_iter().map(String::from).collect(),
            rows: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, qid: &str, aid: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::Dimension {
                expected: self.names.len(),
                found: values.len(),
            });
        }
        self.rows.insert((qid.to_string(), aid.to_string()), values);
        Ok(())
    }

    pub fn get(&self, qid: &str, aid: &str) -> Option<&[f64]> {
        self.rows.get(&(qid.to_string(), aid.to_string())).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &[f64])> {
        self.rows.iter().map(|((q, a), v)| (q.as_str(), a.as_str(), v.as_slice()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(fs::File::create(&tmp).map_err(io)?);
        writeln!(w, "{MAGIC}").map_err(io)?;
        writeln!(w, "# manifest {}", self.manifest_hash).map_err(io)?;
        writeln!(w, "# dataset {}", self.dataset_hash).map_err(io)?;
        writeln!(w, "# names\t{}", self.names.join("\t")).map_err(io)?;
        for ((qid, aid), values) in &self.rows {
            if [qid, aid].iter().any(|s| s.contains(['\t', '\n'])) {
                return Err(Error::Contract(format!("identifier `{qid}`/`{aid}` contains a tab or newline")));
            }
            write!(w, "{qid}\t{aid}").map_err(io)?;
            for v in values {
                write!(w, "\t{v:?}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)?;
        drop(w);
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut header = |want: &str| -> Result<String> {
            let (n, line) = lines.next().ok_or_else(|| perr(0, "truncated header".into()))?;
            let line = line.map_err(|e| Error::io(path, e))?;
            line.strip_prefix(want)
                .map(str::to_string)
                .ok_or_else(|| perr(n + 1, format!("expected `{want}`")))
        };
        header(MAGIC)?;
        let manifest_hash = header("# manifest ")?;
        let dataset_hash = header("# dataset ")?;
        let names: Vec<String> = header("# names\t")?.split('\t').map(String::from).collect();
        let mut table = FeatureTable {
            manifest_hash,
            dataset_hash,
            names,
            rows: IndexMap::new(),
        };
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut cols = line.split('\t');
            let (Some(qid), Some(aid)) = (cols.next(), cols.next()) else {
                return Err(perr(n + 1, "missing identifiers".into()));
            };
            let values = cols
                .map(|c| c.parse::<f64>().map_err(|e| perr(n + 1, format!("bad value `{c}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            table.insert(qid, aid, values).map_err(|e| perr(n + 1, e.to_string()))?;
        }
        Ok(table)
    }
}

/// Identity of a featurization input: every split's pairs plus any extra
/// keys (embedding fingerprints, word lists).
pub fn dataset_hash(corpus: &Corpus, extra: &[&str]) -> String {
    let mut h = Sha256::new();
    for name in SplitName::ALL {
        h.update(name.as_str().as_bytes());
        for ex in corpus.split(name).examples() {
            for field in [&ex.qid, &ex.aid] {
                h.update(field.as_bytes());
                h.update([0x1f]);
            }
            for toks in [&ex.question_tokens, &ex.answer_tokens] {
                h.update(toks.join(" ").as_bytes());
                h.update([0x1f]);
            }
            h.update(ex.label.to_bits().to_le_bytes());
            h.update((ex.answer_sentences as u64).to_le_bytes());
        }
    }
    for e in extra {
        h.update([0x1e]);
        h.update(e.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn cache_path(dir: &Path, dataset_hash: &str, manifest_hash: &str) -> PathBuf {
    dir.join(format!("features-{}-{}.tsv", &dataset_hash[..16], &manifest_hash[..16]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
}

impl fmt::Display for CacheStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheStatus::Hit => "hit",
            CacheStatus::Miss => "miss",
        })
    }
}

/// Reads the cached table when it matches both hashes and covers every
/// example; otherwise extracts and writes it.
pub fn load_or_extract(
    dir: &Path,
    dataset_hash: &str,
    examples: &[&QAExample],
    extractor: &FeatureExtractor<'_>,
) -> Result<(FeatureTable, CacheStatus)> {
    let manifest_hash = extractor.manifest.hash();
    let path = cache_path(dir, dataset_hash, &manifest_hash);
    if path.exists() {
        match FeatureTable::read(&path) {
            Ok(t)
                if t.manifest_hash == manifest_hash
                    && t.dataset_hash == dataset_hash
                    && examples.iter().all(|e| t.get(&e.qid, &e.aid).is_some()) =>
            {
                return Ok((t, CacheStatus::Hit));
            }
            Ok(_) => log::warn!("feature cache {} is stale, rebuilding", path.display()),
            Err(e) => log::warn!("feature cache {} unreadable ({e}), rebuilding", path.display()),
        }
    }
    let vectors = extractor.extract_all(examples)?;
    let mut table = FeatureTable::new(extractor.manifest, dataset_hash);
    for (ex, v) in examples.iter().zip(vectors) {
        table.insert(&ex.qid, &ex.aid, v.into_inner())?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    table.write(&path)?;
    Ok((table, CacheStatus::Miss))
}
