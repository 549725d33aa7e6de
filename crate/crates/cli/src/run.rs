//! Run configuration and the shared load → featurize pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rtm_core::corpus::{load_trecqa, load_wikiqa, load_yahoo_l4, Corpus, LoadOptions, QAExample, YahooOptions};
use rtm_core::embeddings::{load_text_vectors, EmbeddingStore, OovPolicy};
use rtm_core::features::{
    build_stats, dataset_hash, load_or_extract, CacheStatus, CorpusStats, FeatureExtractor, FeatureManifest,
    FeatureTable,
};
use rtm_core::synthetic::{separable_corpus, synthetic_store, SyntheticSpec};
use rtm_core::trainer::ModelConfig;
use rtm_core::{Error, Result};

pub const DEFAULT_CACHE_DIR: &str = ".rtm-cache";
pub const DEFAULT_OUT_DIR: &str = "rtm-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Wikiqa,
    Trecqa,
    Yahoo,
    /// Built-in marker task; needs no files.
    Synthetic,
}

impl DatasetFormat {
    fn as_str(self) -> &'static str {
        match self {
            DatasetFormat::Wikiqa => "wikiqa",
            DatasetFormat::Trecqa => "trecqa",
            DatasetFormat::Yahoo => "yahoo",
            DatasetFormat::Synthetic => "synthetic",
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wikiqa" => Ok(DatasetFormat::Wikiqa),
            "trecqa" => Ok(DatasetFormat::Trecqa),
            "yahoo" => Ok(DatasetFormat::Yahoo),
            "synthetic" => Ok(DatasetFormat::Synthetic),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Model hyper-parameters plus everything that locates the data.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub dataset: Option<PathBuf>,
    pub format: DatasetFormat,
    pub embeddings: Option<PathBuf>,
    pub secondary_embeddings: Option<PathBuf>,
    pub easy_words: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub oov: OovPolicy,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            dataset: None,
            format: DatasetFormat::Wikiqa,
            embeddings: None,
            secondary_embeddings: None,
            easy_words: None,
            manifest: None,
            oov: OovPolicy::HashedUniform,
            cache_dir: PathBuf::from(DEFAULT_CACHE_DIR),
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
        }
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets a run key or a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = opt_path(value),
            "format" => self.format = value.parse()?,
            "embeddings" => self.embeddings = opt_path(value),
            "secondary_embeddings" => self.secondary_embeddings = opt_path(value),
            "easy_words" => self.easy_words = opt_path(value),
            "manifest" => self.manifest = opt_path(value),
            "oov" => self.oov = value.parse()?,
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => self.model.set(&key, value)?,
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        for (k, v) in self.model.apply_kv(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Every setting, run keys first, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let oov = match self.oov {
            OovPolicy::Zeros => "zeros",
            OovPolicy::HashedUniform => "hashed_uniform",
        };
        let mut out: Vec<(String, String)> = [
            ("dataset", path_text(&self.dataset)),
            ("format", self.format.as_str().to_string()),
            ("embeddings", path_text(&self.embeddings)),
            ("secondary_embeddings", path_text(&self.secondary_embeddings)),
            ("easy_words", path_text(&self.easy_words)),
            ("manifest", path_text(&self.manifest)),
            ("oov", oov.to_string()),
            ("cache_dir", self.cache_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(self.model.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// `run.<key>` entries for model-file metadata and report provenance.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        self.entries().into_iter().map(|(k, v)| (format!("run.{k}"), v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.format != DatasetFormat::Synthetic {
            if self.dataset.is_none() {
                return Err(Error::Config("no dataset given (--dataset or dataset=)".into()));
            }
            if self.embeddings.is_none() {
                return Err(Error::Config("no embeddings given (--embeddings or embeddings=)".into()));
            }
        }
        Ok(())
    }
}

/// Loaded corpus, word vectors and the feature table for all three splits.
pub struct Prepared {
    pub corpus: Corpus,
    pub store: EmbeddingStore<f64>,
    pub manifest: FeatureManifest,
    pub stats: CorpusStats,
    pub features: FeatureTable,
    pub cache: CacheStatus,
    pub cache_file: PathBuf,
    pub dataset_hash: String,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn load_corpus(run: &RunConfig) -> Result<Corpus> {
    let path = || run.dataset.clone().expect("validated");
    match run.format {
        DatasetFormat::Wikiqa => load_wikiqa(&path(), &LoadOptions::wikiqa()),
        DatasetFormat::Trecqa => load_trecqa(&path(), &LoadOptions::trecqa()),
        DatasetFormat::Yahoo => load_yahoo_l4(&path(), &YahooOptions::default()),
        DatasetFormat::Synthetic => Ok(separable_corpus(&synthetic_spec(run))),
    }
}

fn synthetic_spec(run: &RunConfig) -> SyntheticSpec {
    SyntheticSpec {
        d_e: run.model.d_e,
        ..SyntheticSpec::default()
    }
}

fn load_store(run: &RunConfig) -> Result<EmbeddingStore<f64>> {
    if run.format == DatasetFormat::Synthetic && run.embeddings.is_none() {
        return synthetic_store(run.model.d_e, SyntheticSpec::default().seed);
    }
    let path = run.embeddings.as_ref().expect("validated");
    load_text_vectors(path, Some(run.model.d_e), run.oov)
}

fn load_easy_words(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
}

pub fn all_examples(corpus: &Corpus) -> Vec<&QAExample> {
    corpus
        .train
        .examples()
        .chain(corpus.dev.examples())
        .chain(corpus.test.examples())
        .collect()
}

/// Loads everything and reads or fills the feature cache. Corpus statistics
/// come from the train split only.
pub fn prepare(run: &RunConfig) -> Result<Prepared> {
    run.validate()?;
    let corpus = load_corpus(run)?;
    let store = load_store(run)?;
    let secondary = match &run.secondary_embeddings {
        Some(p) => Some(load_text_vectors::<f64>(p, None, run.oov)?),
        None => None,
    };
    let easy = run.easy_words.as_deref().map(load_easy_words).transpose()?;
    let manifest = match &run.manifest {
        Some(p) => FeatureManifest::load(p)?,
        None => FeatureManifest::default_51(),
    };
    if manifest.len() != run.model.features {
        return Err(Error::Config(format!(
            "manifest has {} features but features={}",
            manifest.len(),
            run.model.features
        )));
    }
    let stats = build_stats(&corpus.train)?;

    let mut keys = vec![store.fingerprint().to_string()];
    keys.extend(secondary.as_ref().map(|s| s.fingerprint().to_string()));
    if let Some(words) = &easy {
        let mut sorted: Vec<&String> = words.iter().collect();
        sorted.sort();
        keys.push(format!("easy:{}", sorted.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ")));
    }
    let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
    let hash = dataset_hash(&corpus, &key_refs);

    let mut extractor = FeatureExtractor::new(&manifest, &stats, &store);
    extractor.secondary = secondary.as_ref();
    extractor.easy_words = easy.as_ref();
    let examples = all_examples(&corpus);
    let (features, cache) = load_or_extract(&run.cache_dir, &hash, &examples, &extractor)?;
    let cache_file = rtm_core::features::cache_path(&run.cache_dir, &hash, &manifest.hash());
    Ok(Prepared {
        corpus,
        store,
        manifest,
        stats,
        features,
        cache,
        cache_file,
        dataset_hash: hash,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn write_bytes(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}
