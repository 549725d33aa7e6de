use std::collections::{HashMap, HashSet};

use crate::corpus::DatasetSplit;
use crate::error::{Error, Result};

/// Document and collection statistics over training answers. Each candidate
/// answer is one document.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub document_frequency: HashMap<String, usize>,
    pub num_documents: usize,
    pub average_answer_length: f64,
    pub collection_counts: HashMap<String, usize>,
    pub collection_size: usize,
}

impl CorpusStats {
    pub fn from_documents<S: AsRef<str>>(docs: &[Vec<S>]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyInput("build_stats"));
        }
        let mut df = HashMap::new();
        let mut cf = HashMap::new();
        let mut total = 0;
        for doc in docs {
            let mut seen = HashSet::new();
            for tok in doc {
                let tok = tok.as_ref();
                *cf.entry(tok.to_string()).or_insert(0) += 1;
                if seen.insert(tok) {
                    *df.entry(tok.to_string()).or_insert(0) += 1;
                }
            }
            total += doc.len();
        }
        Ok(CorpusStats {
            document_frequency: df,
            num_documents: docs.len(),
            average_answer_length: total as f64 / docs.len() as f64,
            collection_counts: cf,
            collection_size: total,
        })
    }

    pub fn df(&self, token: &str) -> usize {
        self.document_frequency.get(token).copied().unwrap_or(0)
    }

    /// `ln((N+1)/(df+1)) + 1`.
    pub fn idf(&self, token: &str) -> f64 {
        ((self.num_documents as f64 + 1.0) / (self.df(token) as f64 + 1.0)).ln() + 1.0
    }

    /// Add-one smoothed collection probability, so unseen terms stay finite.
    pub fn collection_prob(&self, token: &str) -> f64 {
        let cf = self.collection_counts.get(token).copied().unwrap_or(0) as f64;
        (cf + 1.0) / (self.collection_size as f64 + self.collection_counts.len() as f64 + 1.0)
    }
}

/// Statistics over the answers of the training split.
pub fn build_stats(train: &DatasetSplit) -> Result<CorpusStats> {
    let docs: Vec<&Vec<String>> = train.examples().map(|e| &e.answer_tokens).collect();
    let docs: Vec<Vec<&str>> = docs.iter().map(|d| d.iter().map(String::as_str).collect()).collect();
    CorpusStats::from_documents(&docs)
}
