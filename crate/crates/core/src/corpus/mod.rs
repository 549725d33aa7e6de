//! Dataset loading into one labeled question/candidate schema.
//!
//! WikiQA and TrecQA are read from tab-separated files (canonical five-column
//! form `qid, question, aid, answer, label`, or the official seven-column
//! WikiQA release). Yahoo! Answers L4 is read from its XML dump and split
//! with a seeded shuffle. Everything downstream only sees [`Corpus`].

mod tokenize;
mod tsv;
mod yahoo;

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use tokenize::{count_sentences, tokenize, truncate};
pub use tsv::{
    convert_trecqa_dir, convert_wikiqa_official, load_trecqa, load_tsv_split, load_wikiqa,
    write_canonical, RawPair,
};
pub use yahoo::{load_yahoo_l4, YahooOptions};

/// One question paired with one candidate answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub qid: String,
    pub aid: String,
    pub question_tokens: Vec<String>,
    pub answer_tokens: Vec<String>,
    /// 1 for relevant (or best) answers, 0 otherwise.
    pub label: f64,
    /// Sentence count of the raw answer text, used by readability features.
    pub answer_sentences: usize,
}

impl QAExample {
    pub fn is_relevant(&self) -> bool {
        self.label > 0.0
    }
}

/// All candidates of one question, in load order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionGroup {
    pub qid: String,
    pub examples: Vec<QAExample>,
}

impl QuestionGroup {
    pub fn has_positive(&self) -> bool {
        self.examples.iter().any(QAExample::is_relevant)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub groups: Vec<QuestionGroup>,
}

impl DatasetSplit {
    pub fn pair_count(&self) -> usize {
        self.groups.iter().map(|g| g.examples.len()).sum()
    }

    pub fn examples(&self) -> impl Iterator<Item = &QAExample> {
        self.groups.iter().flat_map(|g| g.examples.iter())
    }
}

/// Counts gathered while loading one split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub questions: usize,
    pub pairs: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
    /// Yahoo only: questions dropped for having several best answers.
    pub dropped_multi_best: usize,
    pub skipped: [usize; 3],
}

impl Corpus {
    pub fn split(&self, name: SplitName) -> &DatasetSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    pub fn report(&self, name: SplitName) -> SplitReport {
        let s = self.split(name);
        let idx = SplitName::ALL.iter().position(|&n| n == name).unwrap_or(0);
        SplitReport {
            questions: s.groups.len(),
            pairs: s.pair_count(),
            skipped: self.skipped[idx],
        }
    }

    /// Fails if any question id appears in more than one split.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen: IndexMap<&str, SplitName> = IndexMap::new();
        for name in SplitName::ALL {
            for g in &self.split(name).groups {
                if let Some(prev) = seen.insert(&g.qid, name) {
                    if prev != name {
                        return Err(Error::Contract(format!(
                            "question {} appears in both {prev} and {name}",
                            g.qid
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Truncation limits applied at load time (`None` keeps everything).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub question_limit: Option<usize>,
    pub answer_limit: Option<usize>,
}

impl LoadOptions {
    /// 40-token cap on both sides.
    pub fn wikiqa() -> Self {
        LoadOptions {
            question_limit: Some(40),
            answer_limit: Some(40),
        }
    }

    pub fn trecqa() -> Self {
        LoadOptions {
            question_limit: None,
            answer_limit: None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.question_limit == Some(0) || self.answer_limit == Some(0) {
            return Err(Error::Config("truncation limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tokenizes and truncates one raw pair. Returns `None` (and logs) when
/// either side is empty after preprocessing.
pub(crate) fn build_example(raw: &RawPair, opts: &LoadOptions) -> Option<QAExample> {
    let mut q = tokenize(&raw.question);
    let mut a = tokenize(&raw.answer);
    if q.is_empty() || a.is_empty() {
        log::debug!("skipping {}/{}: empty after tokenization", raw.qid, raw.aid);
        return None;
    }
    if let Some(l) = opts.question_limit {
        q.truncate(l);
    }
    if let Some(l) = opts.answer_limit {
        a.truncate(l);
    }
    Some(QAExample {
        qid: raw.qid.clone(),
        aid: raw.aid.clone(),
        question_tokens: q,
        answer_tokens: a,
        label: raw.label,
        answer_sentences: count_sentences(&raw.answer),
    })
}

/// Stable grouping: question order is first appearance, candidate order is
/// input order.
pub fn group_by_question(examples: impl IntoIterator<Item = QAExample>) -> Vec<QuestionGroup> {
    let mut groups: IndexMap<String, Vec<QAExample>> = IndexMap::new();
    for ex in examples {
        groups.entry(ex.qid.clone()).or_default().push(ex);
    }
    groups
        .into_iter()
        .map(|(qid, examples)| QuestionGroup { qid, examples })
        .collect()
}

/// Drops later duplicates of an `(qid, aid)` pair, returning how many.
pub(crate) fn dedup_pairs(examples: &mut Vec<QAExample>) -> usize {
    let mut seen = HashSet::new();
    let before = examples.len();
    examples.retain(|e| seen.insert((e.qid.clone(), e.aid.clone())));
    let dropped = before - examples.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} duplicate candidate ids");
    }
    dropped
}
