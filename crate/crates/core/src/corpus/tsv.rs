use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{build_example, dedup_pairs, group_by_question, Corpus, DatasetSplit, LoadOptions, SplitName};

/// Untokenized pair as it appears in a dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPair {
    pub qid: String,
    pub question: String,
    pub aid: String,
    pub answer: String,
    pub label: f64,
}

const OFFICIAL_WIKIQA_HEADER: &str = "QuestionID\tQuestion\tDocumentID\tDocumentTitle\tSentenceID\tSentence\tLabel";

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_label(field: &str, path: &Path, line: usize) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(Error::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("invalid label `{field}`"),
        }),
    }
}

/// Reads a canonical five-column file or an official seven-column WikiQA
/// file (detected by its header line).
pub(crate) fn parse_pairs(path: &Path) -> Result<Vec<RawPair>> {
    let text = read_to_string(path)?;
    let mut pairs = Vec::new();
    let mut official = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 && line.starts_with("QuestionID\t") {
            official = true;
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg,
        };
        let pair = match (official, cols.len()) {
            (false, 5) => RawPair {
                qid: cols[0].trim().to_string(),
                question: cols[1].to_string(),
                aid: cols[2].trim().to_string(),
                answer: cols[3].to_string(),
                label: parse_label(cols[4], path, lineno)?,
            },
            (true, 7) => RawPair {
                qid: cols[0].trim().to_string(),
                question: cols[1].to_string(),
                aid: cols[4].trim().to_string(),
                answer: cols[5].to_string(),
                label: parse_label(cols[6], path, lineno)?,
            },
            (_, n) => {
                let want = if official { 7 } else { 5 };
                return Err(bad(format!("expected {want} tab-separated columns, found {n}")));
            }
        };
        if pair.qid.is_empty() || pair.aid.is_empty() {
            return Err(bad("empty question or candidate id".into()));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Loads one split file, returning the split and the number of skipped pairs.
pub fn load_tsv_split(path: &Path, name: SplitName, opts: &LoadOptions) -> Result<(DatasetSplit, usize)> {
    opts.validate()?;
    let raw = parse_pairs(path)?;
    let mut examples = Vec::with_capacity(raw.len());
    let mut skipped = 0;
    for r in &raw {
        match build_example(r, opts) {
            Some(e) => examples.push(e),
            None => skipped += 1,
        }
    }
    skipped += dedup_pairs(&mut examples);
    if skipped > 0 {
        log::info!("{}: skipped {skipped} pairs", path.display());
    }
    Ok((
        DatasetSplit {
            name,
            groups: group_by_question(examples),
        },
        skipped,
    ))
}

fn resolve(dir: &Path, split: SplitName, prefixes: &[&str]) -> PathBuf {
    for prefix in prefixes {
        let p = dir.join(format!("{prefix}{split}.tsv"));
        if p.exists() {
            return p;
        }
    }
    dir.join(format!("{split}.tsv"))
}

fn load_dir(dir: &Path, opts: &LoadOptions, prefixes: &[&str]) -> Result<Corpus> {
    let mut splits = Vec::with_capacity(3);
    let mut skipped = [0; 3];
    for (i, name) in SplitName::ALL.into_iter().enumerate() {
        let (split, s) = load_tsv_split(&resolve(dir, name, prefixes), name, opts)?;
        skipped[i] = s;
        splits.push(split);
    }
    let test = splits.pop().expect("three splits");
    let dev = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let corpus = Corpus {
        train,
        dev,
        test,
        dropped_multi_best: 0,
        skipped,
    };
    corpus.check_disjoint()?;
    for name in SplitName::ALL {
        let r = corpus.report(name);
        log::info!("{name}: {} questions, {} pairs", r.questions, r.pairs);
    }
    Ok(corpus)
}

/// Loads `train/dev/test` from `dir` (`{split}.tsv` or `WikiQA-{split}.tsv`).
pub fn load_wikiqa(dir: &Path, opts: &LoadOptions) -> Result<Corpus> {
    load_dir(dir, opts, &["", "WikiQA-"])
}

/// Loads canonical `train/dev/test.tsv` files from `dir`.
pub fn load_trecqa(dir: &Path, opts: &LoadOptions) -> Result<Corpus> {
    load_dir(dir, opts, &[""])
}

fn clean_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn write_canonical(path: &Path, pairs: &[RawPair]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            clean_field(&p.qid),
            clean_field(&p.question),
            clean_field(&p.aid),
            clean_field(&p.answer),
            p.label
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Official seven-column WikiQA file to canonical form. Returns the pair count.
pub fn convert_wikiqa_official(input: &Path, output: &Path) -> Result<usize> {
    let text = read_to_string(input)?;
    if !text.starts_with(OFFICIAL_WIKIQA_HEADER) {
        return Err(Error::Parse {
            path: input.display().to_string(),
            line: 1,
            msg: "missing official WikiQA header".into(),
        });
    }
    let pairs = parse_pairs(input)?;
    write_canonical(output, &pairs)?;
    Ok(pairs.len())
}

/// TrecQA directory in the `a.toks` / `b.toks` / `id.txt` / `sim.txt`
/// layout (one line per pair) to canonical form. Candidate ids are numbered
/// per question in file order.
pub fn convert_trecqa_dir(dir: &Path, output: &Path) -> Result<usize> {
    let read_lines = |name: &str| -> Result<Vec<String>> {
        Ok(read_to_string(&dir.join(name))?.lines().map(str::to_string).collect())
    };
    let questions = read_lines("a.toks")?;
    let answers = read_lines("b.toks")?;
    let ids = read_lines("id.txt")?;
    let sims = read_lines("sim.txt")?;
    let n = questions.len();
    if answers.len() != n || ids.len() != n || sims.len() != n {
        return Err(Error::Parse {
            path: dir.display().to_string(),
            line: 0,
            msg: format!(
                "line counts differ: a.toks {n}, b.toks {}, id.txt {}, sim.txt {}",
                answers.len(),
                ids.len(),
                sims.len()
            ),
        });
    }
    let sim_path = dir.join("sim.txt");
    let mut counters: indexmap::IndexMap<String, usize> = indexmap::IndexMap::new();
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let qid = ids[i].trim().to_string();
        let c = counters.entry(qid.clone()).or_insert(0);
        let aid = format!("{qid}-{c}");
        *c += 1;
        pairs.push(RawPair {
            qid,
            question: questions[i].clone(),
            aid,
            answer: answers[i].clone(),
            label: parse_label(&sims[i], &sim_path, i + 1)?,
        });
    }
    write_canonical(output, &pairs)?;
    Ok(pairs.len())
}
