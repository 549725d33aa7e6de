use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::numkit::Rng;

use super::{build_example, Corpus, DatasetSplit, LoadOptions, QuestionGroup, RawPair, SplitName};

/// Loading and splitting options for the Yahoo! Answers L4 dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YahooOptions {
    pub load: LoadOptions,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for YahooOptions {
    fn default() -> Self {
        YahooOptions {
            load: LoadOptions {
                question_limit: None,
                answer_limit: Some(300),
            },
            train_size: 116_031,
            dev_size: 10_000,
            test_size: 15_000,
            seed: 13,
        }
    }
}

#[derive(Default)]
struct Document {
    uri: String,
    subject: String,
    content: String,
    best: Vec<String>,
    answers: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Uri,
    Subject,
    Content,
    Best,
    Answer,
}

fn field_of(name: &[u8]) -> Option<Field> {
    match name {
        b"uri" => Some(Field::Uri),
        b"subject" => Some(Field::Subject),
        b"content" => Some(Field::Content),
        b"bestanswer" => Some(Field::Best),
        b"answer_item" => Some(Field::Answer),
        _ => None,
    }
}

/// Decodes (possibly double-escaped) entities, strips the markup that
/// decoding exposes and collapses whitespace.
fn clean_text(raw: &str) -> String {
    let once = html_escape::decode_html_entities(raw);
    let decoded = html_escape::decode_html_entities(&once);
    let mut stripped = String::with_capacity(decoded.len());
    let mut in_tag = false;
    for c in decoded.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                stripped.push(' ');
            }
            _ if !in_tag => stripped.push(c),
            _ => {}
        }
    }
    let twice = html_escape::decode_html_entities(&stripped);
    twice.split_whitespace().collect::<Vec<_>>().join(" ")
}

enum Outcome {
    Group(QuestionGroup),
    MultiBest,
    Skipped,
}

fn finish(doc: Document, index: usize, opts: &LoadOptions) -> Outcome {
    if doc.best.len() > 1 {
        return Outcome::MultiBest;
    }
    let Some(best_raw) = doc.best.first() else {
        return Outcome::Skipped;
    };
    let qid = if doc.uri.trim().is_empty() {
        format!("yahoo-{index}")
    } else {
        doc.uri.trim().to_string()
    };
    let question = if doc.subject.trim().is_empty() {
        clean_text(&doc.content)
    } else {
        clean_text(&doc.subject)
    };
    let best = clean_text(best_raw);
    let mut raws = vec![RawPair {
        qid: qid.clone(),
        question: question.clone(),
        aid: format!("{qid}-best"),
        answer: best.clone(),
        label: 1.0,
    }];
    for (i, a) in doc.answers.iter().enumerate() {
        let text = clean_text(a);
        if text == best || raws.iter().any(|r| r.answer == text) {
            continue;
        }
        raws.push(RawPair {
            qid: qid.clone(),
            question: question.clone(),
            aid: format!("{qid}-{i}"),
            answer: text,
            label: 0.0,
        });
    }
    let mut examples = Vec::with_capacity(raws.len());
    for (i, r) in raws.iter().enumerate() {
        match build_example(r, opts) {
            Some(e) => examples.push(e),
            // Without its best answer the question has no positive.
            None if i == 0 => return Outcome::Skipped,
            None => {}
        }
    }
    Outcome::Group(QuestionGroup { qid, examples })
}

/// Parses the L4 XML dump: the best answer is labeled 1, every other answer
/// 0; questions with several best answers are dropped; the remaining
/// questions are shuffled with `opts.seed` and cut into train/dev/test.
pub fn load_yahoo_l4(path: &Path, opts: &YahooOptions) -> Result<Corpus> {
    opts.load.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader::from_reader(BufReader::new(file));
    let xml_err = |reader: &Reader<BufReader<File>>, msg: String| Error::Xml {
        path: path.display().to_string(),
        offset: reader.error_position(),
        msg,
    };

    let mut buf = Vec::new();
    let mut doc: Option<Document> = None;
    let mut field: Option<Field> = None;
    let mut groups = Vec::new();
    let mut dropped_multi_best = 0;
    let mut skipped = 0;
    let mut seen_docs = 0;
    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| xml_err(&reader, e.to_string()))?;
        match event {
            Event::Eof => break,
            Event::Start(e) => {
                let name = e.name();
                if name.as_ref() == b"document" {
                    doc = Some(Document::default());
                } else if let (Some(d), Some(f)) = (doc.as_mut(), field_of(name.as_ref())) {
                    field = Some(f);
                    match f {
                        Field::Best => d.best.push(String::new()),
                        Field::Answer => d.answers.push(String::new()),
                        _ => {}
                    }
                }
            }
            Event::End(e) => {
                let name = e.name();
                if name.as_ref() == b"document" {
                    if let Some(d) = doc.take() {
                        match finish(d, seen_docs, &opts.load) {
                            Outcome::Group(g) => groups.push(g),
                            Outcome::MultiBest => dropped_multi_best += 1,
                            Outcome::Skipped => skipped += 1,
                        }
                        seen_docs += 1;
                    }
                    field = None;
                } else if field_of(name.as_ref()).is_some() {
                    field = None;
                }
            }
            Event::Text(t) => {
                if let (Some(d), Some(f)) = (doc.as_mut(), field) {
                    let s = std::str::from_utf8(&t).map_err(|e| xml_err(&reader, e.to_string()))?;
                    push_text(d, f, s);
                }
            }
            Event::CData(c) => {
                if let (Some(d), Some(f)) = (doc.as_mut(), field) {
                    let s = std::str::from_utf8(&c).map_err(|e| xml_err(&reader, e.to_string()))?;
                    push_text(d, f, s);
                }
            }
            _ => {}
        }
        buf.clear();
    }
    if doc.is_some() {
        return Err(xml_err(&reader, "unterminated <document>".into()));
    }
    if dropped_multi_best > 0 {
        log::info!("dropped {dropped_multi_best} questions with several best answers");
    }

    let mut rng = Rng::new(opts.seed);
    rng.shuffle(&mut groups);
    let mut rest = groups.into_iter();
    let mut take = |n: usize, name| DatasetSplit {
        name,
        groups: rest.by_ref().take(n).collect(),
    };
    let train = take(opts.train_size, SplitName::Train);
    let dev = take(opts.dev_size, SplitName::Dev);
    let test = take(opts.test_size, SplitName::Test);
    let corpus = Corpus {
        train,
        dev,
        test,
        dropped_multi_best,
        skipped: [skipped, 0, 0],
    };
    corpus.check_disjoint()?;
    Ok(corpus)
}

fn push_text(d: &mut Document, f: Field, s: &str) {
    let target = match f {
        Field::Uri => &mut d.uri,
        Field::Subject => &mut d.subject,
        Field::Content => &mut d.content,
        Field::Best => d.best.last_mut().expect("opened best answer"),
        Field::Answer => d.answers.last_mut().expect("opened answer"),
    };
    target.push_str(s);
}
