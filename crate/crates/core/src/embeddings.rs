//! Frozen pre-trained word vectors.
//!
//! Vectors are read from the GloVe-style text layout (`token v1 … vd` per
//! line, optional `count dim` header). The binary word2vec layout is only
//! supported through [`convert_word2vec_binary`], which rewrites it as text.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::{Rng, Scalar, Tensor};

/// What [`EmbeddingStore::lookup`] returns for unknown tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    Zeros,
    /// Per-token vector drawn from `U(−0.25, 0.25)`, seeded by a hash of the
    /// token, so repeated lookups agree.
    HashedUniform,
}

impl FromStr for OovPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(OovPolicy::Zeros),
            "hashed_uniform" => Ok(OovPolicy::HashedUniform),
            other => Err(Error::Config(format!("unknown OOV policy `{other}`"))),
        }
    }
}

const OOV_RANGE: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct EmbeddingStore<T> {
    dim: usize,
    vocab: HashMap<String, usize>,
    matrix: Tensor<T>,
    oov_policy: OovPolicy,
    duplicates: usize,
    fingerprint: String,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl<T: Scalar> EmbeddingStore<T> {
    /// Builds a store from `(token, vector)` rows; the first occurrence of a
    /// token wins.
    pub fn from_rows(rows: Vec<(String, Vec<T>)>, oov_policy: OovPolicy) -> Result<Self> {
        let dim = rows.first().map(|r| r.1.len()).ok_or(Error::EmptyInput("embedding rows"))?;
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut vocab = HashMap::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut duplicates = 0;
        for (token, v) in rows {
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: v.len(),
                });
            }
            if vocab.contains_key(&token) {
                duplicates += 1;
                continue;
            }
            vocab.insert(token, vocab.len());
            data.extend(v);
        }
        let matrix = Tensor::from_vec(&[vocab.len(), dim], data)?;
        let fingerprint = Self::compute_fingerprint(dim, &vocab, &matrix);
        Ok(EmbeddingStore {
            dim,
            vocab,
            matrix,
            oov_policy,
            duplicates,
            fingerprint,
        })
    }

    fn compute_fingerprint(dim: usize, vocab: &HashMap<String, usize>, matrix: &Tensor<T>) -> String {
        let mut tokens: Vec<(&String, &usize)> = vocab.iter().collect();
        tokens.sort();
        let mut h = Sha256::new();
        h.update((dim as u64).to_le_bytes());
        for (tok, &row) in tokens {
            h.update((tok.len() as u64).to_le_bytes());
            h.update(tok.as_bytes());
            for v in matrix.row(row) {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn set_oov_policy(&mut self, policy: OovPolicy) {
        self.oov_policy = policy;
    }

    /// Order-independent content hash (tokens sorted), hex encoded.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    /// Writes the vector for `token` into `out` (length `dim`).
    pub fn lookup_into(&self, token: &str, out: &mut [T]) {
        match self.index_of(token) {
            Some(row) => out.copy_from_slice(self.matrix.row(row)),
            None => match self.oov_policy {
                OovPolicy::Zeros => out.fill(T::zero()),
                OovPolicy::HashedUniform => {
                    let mut rng = Rng::new(fnv1a(token.as_bytes()));
                    for v in out.iter_mut() {
                        *v = T::lit(rng.uniform(-OOV_RANGE, OOV_RANGE));
                    }
                }
            },
        }
    }

    pub fn lookup(&self, token: &str) -> Tensor<T> {
        let mut v = vec![T::zero(); self.dim];
        self.lookup_into(token, &mut v);
        Tensor::vector(v)
    }

    /// `[T × dim]` matrix whose row `t` is `lookup(tokens[t])`.
    pub fn embed_sequence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Tensor<T>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("embed_sequence"));
        }
        let mut out = Tensor::zeros(&[tokens.len(), self.dim]);
        for (t, tok) in tokens.iter().enumerate() {
            self.lookup_into(tok.as_ref(), out.row_mut(t));
        }
        Ok(out)
    }

    /// Mean of the sequence's word vectors.
    pub fn sentence_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Tensor<T>> {
        let seq = self.embed_sequence(tokens)?;
        let n = T::lit(tokens.len() as f64);
        let mut mean = vec![T::zero(); self.dim];
        for t in 0..tokens.len() {
            for (m, &v) in mean.iter_mut().zip(seq.row(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Tensor::vector(mean))
    }
}

/// Reads GloVe-style text vectors. A first line made of exactly two
/// integers is treated as a `count dim` header and skipped.
pub fn load_text_vectors<T: Scalar>(
    path: &Path,
    expected_dim: Option<usize>,
    oov_policy: OovPolicy,
) -> Result<EmbeddingStore<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_text_vectors(BufReader::new(file), &path.display().to_string(), expected_dim, oov_policy)
}

pub fn read_text_vectors<T: Scalar, R: BufRead>(
    reader: R,
    source: &str,
    expected_dim: Option<usize>,
    oov_policy: OovPolicy,
) -> Result<EmbeddingStore<T>> {
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        if rows.is_empty()
            && dim.is_none()
            && values.len() == 1
            && token.parse::<usize>().is_ok()
            && values[0].parse::<usize>().is_ok()
        {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno,
            msg,
        };
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(parse_err(format!("expected {d} components, found {}", values.len())));
        }
        let mut v = Vec::with_capacity(d);
        for s in values {
            match s.parse::<f64>() {
                Ok(x) if x.is_finite() => v.push(T::lit(x)),
                _ => return Err(parse_err(format!("invalid component `{s}`"))),
            }
        }
        rows.push((token.to_string(), v));
    }
    let found = dim.ok_or(Error::EmptyInput("embedding file"))?;
    if let Some(expected) = expected_dim {
        if expected != found {
            return Err(Error::Dimension { expected, found });
        }
    }
    let store = EmbeddingStore::from_rows(rows, oov_policy)?;
    if store.duplicates() > 0 {
        log::warn!("{source}: {} duplicate tokens ignored (first kept)", store.duplicates());
    }
    Ok(store)
}

/// Rewrites a binary word2vec file as text vectors. Returns `(count, dim)`.
pub fn convert_word2vec_binary(input: &Path, output: &Path) -> Result<(usize, usize)> {
    let src = input.display().to_string();
    let file = File::open(input).map_err(|e| Error::io(input, e))?;
    let mut r = BufReader::new(file);
    let mut header = String::new();
    r.read_line(&mut header).map_err(|e| Error::io(input, e))?;
    let bad_header = || Error::Parse {
        path: src.clone(),
        line: 1,
        msg: format!("invalid header `{}`", header.trim()),
    };
    let mut parts = header.split_whitespace().map(str::parse::<usize>);
    let (count, dim) = match (parts.next(), parts.next()) {
        (Some(Ok(c)), Some(Ok(d))) if d > 0 => (c, d),
        _ => return Err(bad_header()),
    };
    let out = File::create(output).map_err(|e| Error::io(output, e))?;
    let mut w = BufWriter::new(out);
    let mut vec_buf = vec![0u8; 4 * dim];
    for i in 0..count {
        let mut word = Vec::new();
        loop {
            let mut b = [0u8; 1];
            r.read_exact(&mut b).map_err(|e| Error::io(input, e))?;
            match b[0] {
                b' ' => break,
                b'\n' if word.is_empty() => continue,
                c => word.push(c),
            }
        }
        r.read_exact(&mut vec_buf).map_err(|e| Error::io(input, e))?;
        let word = String::from_utf8_lossy(&word);
        let mut line = String::with_capacity(word.len() + 12 * dim);
        line.push_str(&word);
        for chunk in vec_buf.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: src.clone(),
                    line: i + 2,
                    msg: format!("non-finite component for `{word}`"),
                });
            }
            line.push(' ');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(|e| Error::io(output, e))?;
    }
    w.flush().map_err(|e| Error::io(output, e))?;
    Ok((count, dim))
}
