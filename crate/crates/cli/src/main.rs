//! `rtm`: prepare, train, evaluate and study answer-ranking models.
//!
//! Exit codes: 0 ok, 1 usage or configuration error, 2 I/O or malformed
//! input, 3 training diverged, 4 provenance mismatch, 5 gradient check
//! failed.

mod run;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rtm_core::attention::AttentionMode;
use rtm_core::corpus::{convert_trecqa_dir, convert_wikiqa_official, load_yahoo_l4, write_canonical, RawPair, SplitName, YahooOptions};
use rtm_core::embeddings::convert_word2vec_binary;
use rtm_core::encoder::Pooling;
use rtm_core::evalkit::{
    answerable_only, kfold_variance, trigger_eval, tune_threshold, EvalReport, KFoldOptions, MetricOptions, RankedGroup,
    RankedPair,
};
use rtm_core::synthetic::{model_grad_check, tiny_config, GRAD_CHECK_EPS, GRAD_CHECK_TOLERANCE};
use rtm_core::trainer::{load_model, save_model, score_split, train, EpochReport};
use rtm_core::Error;

use run::{prepare, write_bytes, write_file, Prepared, RunConfig};

/// A failure with a fixed exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl Exit {
    fn usage(message: impl Into<String>) -> Self {
        Exit { code: 1, message: message.into() }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Parse { .. } | Error::Xml { .. } | Error::ModelFormat(_) => 2,
            Error::Diverged { .. } => 3,
            Error::Provenance(_) | Error::ConfigMismatch(_) => 4,
            _ => 1,
        };
        Exit { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Exit>;

#[derive(Parser)]
#[command(name = "rtm", version, about = "Attentive recurrent tensor model for answer ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert binary word2vec vectors to the text format.
    ConvertEmbeddings {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Convert a dataset to canonical `qid question aid answer label` TSV.
    ConvertDataset(ConvertDatasetArgs),
    /// Load data and build the feature cache.
    Prepare(CommonArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a split and report ranking (and triggering) metrics.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the full model on a tiny instance.
    GradCheck(GradCheckArgs),
    /// Held-out MAP spread across folds for several tensor slice counts.
    Kfold(KfoldArgs),
    /// Dump feature vectors.
    Features(FeaturesArgs),
}

/// Data location. Any of these may also come from the config file.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// `key=value` file with run and model settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (wikiqa, trecqa) or XML dump (yahoo).
    #[arg(long)]
    dataset: Option<String>,
    /// wikiqa, trecqa, yahoo or synthetic.
    #[arg(long)]
    format: Option<String>,
    /// Text word vectors.
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    secondary_embeddings: Option<String>,
    /// One easy word per line, for the Dale-Chall score.
    #[arg(long)]
    easy_words: Option<String>,
    /// Feature manifest (default: the built-in 51 features).
    #[arg(long)]
    manifest: Option<String>,
    /// zeros or hashed_uniform.
    #[arg(long)]
    oov: Option<String>,
    #[arg(long, env = "RTM_CACHE_DIR")]
    cache_dir: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

/// Model settings; names match the config keys.
#[derive(Args, Clone, Default)]
struct ModelArgs {
    #[arg(long)]
    d_e: Option<String>,
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    features: Option<String>,
    /// phrase or token.
    #[arg(long)]
    attention: Option<String>,
    #[arg(long)]
    attention_norm: Option<String>,
    #[arg(long)]
    token_alignment: Option<String>,
    /// max or average.
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    n_h: Option<String>,
    #[arg(long)]
    tensor_activation: Option<String>,
    #[arg(long)]
    feature_activation: Option<String>,
    #[arg(long)]
    hidden_activation: Option<String>,
    #[arg(long)]
    tie_encoders: Option<String>,
    #[arg(long)]
    train_embeddings: Option<String>,
    #[arg(long)]
    standardize_features: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        [
            ("dataset", &self.dataset),
            ("format", &self.format),
            ("embeddings", &self.embeddings),
            ("secondary_embeddings", &self.secondary_embeddings),
            ("easy_words", &self.easy_words),
            ("manifest", &self.manifest),
            ("oov", &self.oov),
            ("cache_dir", &self.cache_dir),
            ("out_dir", &self.out_dir),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }
}

impl ModelArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        [
            ("d_e", &self.d_e),
            ("h", &self.h),
            ("features", &self.features),
            ("attention", &self.attention),
            ("attention_norm", &self.attention_norm),
            ("token_alignment", &self.token_alignment),
            ("pooling", &self.pooling),
            ("n_h", &self.n_h),
            ("tensor_activation", &self.tensor_activation),
            ("feature_activation", &self.feature_activation),
            ("hidden_activation", &self.hidden_activation),
            ("tie_encoders", &self.tie_encoders),
            ("train_embeddings", &self.train_embeddings),
            ("standardize_features", &self.standardize_features),
            ("dropout", &self.dropout),
            ("lr", &self.lr),
            ("lambda", &self.lambda),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Tensor slices.
    #[arg(long)]
    k: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model file (default: <out_dir>/model.rtm).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Only used with --scores; a model file brings its own settings.
    #[command(flatten)]
    model_args: ModelArgs,
    /// Model file to score with.
    #[arg(long, required_unless_present = "scores")]
    model: Option<PathBuf>,
    /// Precomputed `qid aid score` TSV instead of a model.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// train, dev or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Also report answer triggering, with the threshold tuned on dev.
    #[arg(long)]
    trigger: bool,
    /// Keep questions without a correct answer in triggering.
    #[arg(long)]
    include_untriggerable: bool,
    /// JSON report path (default: <out_dir>/eval-<split>.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, value_delimiter = ',', default_values = ["phrase", "token"])]
    attention: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values = ["max", "average"])]
    pooling: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
    k: Vec<usize>,
    /// Scale the analytic gradient of one block (test hook).
    #[arg(long)]
    corrupt: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = GRAD_CHECK_EPS)]
    eps: f64,
    #[arg(long, default_value_t = GRAD_CHECK_TOLERANCE)]
    tolerance: f64,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct KfoldArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Seed of the question-to-fold assignment.
    #[arg(long, default_value_t = 1)]
    fold_seed: u64,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "train")]
    split: String,
    /// Stop after this many pairs.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ConvertDatasetArgs {
    /// wikiqa-official (file), trecqa (a.toks/b.toks/id.txt/sim.txt directory)
    /// or yahoo (XML dump, written as train/dev/test.tsv).
    #[arg(long)]
    from: String,
    #[arg(long)]
    input: PathBuf,
    /// Output file, or directory for yahoo.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    dev_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

fn build_run(run: &RunArgs, model: Option<&ModelArgs>, k: Option<&String>) -> Result<RunConfig, Exit> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &run.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in run.overrides() {
        cfg.set(key, value)?;
    }
    for (key, value) in model.map(ModelArgs::overrides).unwrap_or_default() {
        cfg.set(key, value)?;
    }
    if let Some(k) = k {
        cfg.set("k", k)?;
    }
    Ok(cfg)
}

fn common_run(c: &CommonArgs) -> Result<RunConfig, Exit> {
    build_run(&c.run, Some(&c.model), c.k.as_ref())
}

fn split_name(s: &str) -> Result<SplitName, Exit> {
    SplitName::ALL
        .into_iter()
        .find(|n| n.as_str() == s)
        .ok_or_else(|| Exit::usage(format!("unknown split `{s}` (train, dev or test)")))
}

fn config_header(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "# {k}\t{v}");
    }
    s
}

fn describe(p: &Prepared) {
    for name in SplitName::ALL {
        let r = p.corpus.report(name);
        println!("{name}: {} questions, {} pairs", r.questions, r.pairs);
    }
}

fn cmd_prepare(args: &CommonArgs) -> CmdResult {
    let run = common_run(args)?;
    let p = prepare(&run)?;
    describe(&p);
    let stats = format!(
        "{}# documents\t{}\n# average_answer_length\t{}\n# vocabulary\t{}\n# collection_size\t{}\n",
        config_header(&run.entries()),
        p.stats.num_documents,
        p.stats.average_answer_length,
        p.stats.document_frequency.len(),
        p.stats.collection_size
    );
    let stats_path = run.cache_dir.join(format!("stats-{}.txt", &p.dataset_hash[..16]));
    write_file(&stats_path, &stats)?;
    println!("features: {}", p.manifest.len());
    println!("manifest: {}", p.manifest.hash());
    println!("dataset: {}", p.dataset_hash);
    println!("cache: {} ({})", p.cache, p.cache_file.display());
    println!("stats: {}", stats_path.display());
    Ok(())
}

fn epoch_table(reports: &[EpochReport]) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
    let mut s = String::from("epoch\ttrain_loss\tdev_map\tdev_mrr\tseconds\n");
    for r in reports {
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{:.3}", r.epoch, r.train_loss, opt(r.dev_map), opt(r.dev_mrr), r.seconds);
    }
    s
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let run = common_run(&args.common)?;
    let p = prepare(&run)?;
    describe(&p);
    let dev = (!p.corpus.dev.groups.is_empty()).then_some(&p.corpus.dev);
    let outcome = match train::<f64>(run.model.clone(), &p.store, &p.corpus.train, dev, &p.features) {
        Ok(o) => o,
        Err(Error::Diverged { epoch, example, checkpoint }) => {
            let path = run.out_dir.join(format!("diverged-epoch{epoch}.rtm"));
            write_bytes(&path, &checkpoint.0)?;
            return Err(Exit {
                code: 3,
                message: format!(
                    "training diverged at epoch {epoch} on example {example}; last good checkpoint: {}",
                    path.display()
                ),
            });
        }
        Err(e) => return Err(e.into()),
    };

    let mut meta = run.provenance();
    meta.insert("train.best_epoch".into(), outcome.best_epoch.to_string());
    meta.insert("train.epochs".into(), outcome.reports.len().to_string());
    meta.insert("train.stopped_early".into(), outcome.stopped_early.to_string());
    meta.insert("train.dataset_hash".into(), p.dataset_hash.clone());
    let model_path = args.output.clone().unwrap_or_else(|| run.out_dir.join("model.rtm"));
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Exit { code: 2, message: format!("{}: {e}", dir.display()) })?;
    }
    save_model(&model_path, &outcome.state, &meta)?;

    let table = epoch_table(&outcome.reports);
    let text = format!(
        "{}# best_epoch\t{}\n# stopped_early\t{}\n{table}",
        config_header(&run.entries()),
        outcome.best_epoch,
        outcome.stopped_early
    );
    write_file(&run.out_dir.join("train-report.txt"), &text)?;
    let epochs: Vec<_> = outcome
        .reports
        .iter()
        .map(|r| json!({"epoch": r.epoch, "train_loss": r.train_loss, "dev_map": r.dev_map, "dev_mrr": r.dev_mrr, "seconds": r.seconds}))
        .collect();
    let report = json!({
        "config": run.entries().into_iter().collect::<BTreeMap<_, _>>(),
        "model": model_path.display().to_string(),
        "best_epoch": outcome.best_epoch,
        "stopped_early": outcome.stopped_early,
        "epochs": epochs,
    });
    write_file(&run.out_dir.join("train-report.json"), &pretty(&report))?;
    write_file(&run.out_dir.join("run.cfg"), &run.to_kv())?;
    print!("{table}");
    println!("best epoch: {}", outcome.best_epoch);
    println!("model: {}", model_path.display());
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

fn read_scores(path: &Path) -> Result<HashMap<(String, String), f64>, Exit> {
    let text = fs::read_to_string(path).map_err(|e| Exit { code: 2, message: format!("{}: {e}", path.display()) })?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let score = match cols.as_slice() {
            [_, _, s] => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()),
            _ => None,
        };
        let Some(score) = score else {
            return Err(Exit { code: 2, message: format!("{}:{}: expected qid<TAB>aid<TAB>score", path.display(), n + 1) });
        };
        out.insert((cols[0].to_string(), cols[1].to_string()), score);
    }
    Ok(out)
}

fn groups_from_scores(p: &Prepared, name: SplitName, scores: &HashMap<(String, String), f64>) -> Result<Vec<RankedGroup>, Exit> {
    p.corpus
        .split(name)
        .groups
        .iter()
        .map(|g| {
            let pairs = g
                .examples
                .iter()
                .map(|ex| {
                    let score = *scores
                        .get(&(ex.qid.clone(), ex.aid.clone()))
                        .ok_or_else(|| Exit::usage(format!("no score for {}/{}", ex.qid, ex.aid)))?;
                    Ok(RankedPair { aid: ex.aid.clone(), score, relevant: ex.is_relevant() })
                })
                .collect::<Result<Vec<_>, Exit>>()?;
            Ok(RankedGroup::new(g.qid.clone(), pairs)?)
        })
        .collect()
}

fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    let name = split_name(&args.split)?;
    let mut run = build_run(&args.run, Some(&args.model_args), None)?;
    let model = match &args.model {
        Some(path) if args.scores.is_none() => Some(load_model::<f64>(path)?),
        _ => None,
    };
    if let Some(m) = &model {
        // Architecture comes from the model file; data settings from the run.
        run.model = m.state.config.clone();
    }
    let p = prepare(&run)?;
    if args.trigger && p.corpus.dev.groups.is_empty() {
        return Err(Exit::usage("--trigger needs a non-empty dev split to tune the threshold"));
    }

    let score = |split: SplitName| -> Result<Vec<RankedGroup>, Exit> {
        match (&model, &args.scores) {
            (_, Some(path)) => groups_from_scores(&p, split, &read_scores(path)?),
            (Some(m), None) => Ok(score_split(&m.state, &p.store, p.corpus.split(split), &p.features)?),
            (None, None) => Err(Exit::usage("give --model or --scores")),
        }
    };
    if let Some(m) = &model {
        m.state.check_provenance(&p.features.manifest_hash, p.store.fingerprint())?;
    }
    let groups = score(name)?;
    let mut report = EvalReport::ranking(&groups, MetricOptions::default())?;
    if args.trigger {
        let keep = |g: Vec<RankedGroup>| if args.include_untriggerable { g } else { answerable_only(&g) };
        let tuned = tune_threshold(&keep(score(SplitName::Dev)?))?;
        report = report.with_trigger(trigger_eval(&keep(groups), tuned.threshold));
        report.push("dev_trigger_f1", tuned.f1);
    }
    report.provenance = run.provenance();
    report.provenance.insert("eval.split".into(), name.to_string());
    report.provenance.insert("eval.dataset_hash".into(), p.dataset_hash.clone());
    if let Some(m) = &model {
        report.provenance.insert("eval.model".into(), args.model.as_ref().expect("model").display().to_string());
        report.provenance.extend(m.meta.iter().map(|(k, v)| (format!("model.{k}"), v.clone())));
    }
    if let Some(s) = &args.scores {
        report.provenance.insert("eval.scores".into(), s.display().to_string());
    }
    let path = args.report.clone().unwrap_or_else(|| run.out_dir.join(format!("eval-{name}.json")));
    write_file(&path, &report.to_json())?;
    print!("{}", report.to_text());
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_grad_check(args: &GradCheckArgs) -> CmdResult {
    let mut failures = Vec::new();
    let mut combos = Vec::new();
    println!("combination\tblock\ttensors\tcoordinates\tskipped_kinks\tmax_rel_error\tresult");
    for att in &args.attention {
        let attention: AttentionMode = att.parse()?;
        for pool in &args.pooling {
            let pooling = match pool.as_str() {
                "max" => Pooling::Max,
                "average" => Pooling::Average,
                other => return Err(Exit::usage(format!("unknown pooling `{other}`"))),
            };
            for &k in &args.k {
                let mut config = tiny_config(attention, pooling, k);
                config.seed = args.seed;
                let label = format!("{attention}/{pooling}/k={k}");
                let blocks = model_grad_check(&config, args.eps, args.corrupt.as_deref())?;
                let mut rows = Vec::new();
                for b in &blocks {
                    let ok = b.passed(args.tolerance);
                    println!(
                        "{label}\t{}\t{}\t{}\t{}\t{:.3e}\t{}",
                        b.block,
                        b.tensors,
                        b.coordinates,
                        b.skipped_kinks,
                        b.max_rel_error,
                        if ok { "PASS" } else { "FAIL" }
                    );
                    if !ok {
                        failures.push(format!("{} ({label}, max rel err {:.3e} at {}[{}])", b.block, b.max_rel_error, b.worst_tensor, b.worst_index));
                    }
                    rows.push(json!({
                        "block": b.block, "tensors": b.tensors, "coordinates": b.coordinates,
                        "skipped_kinks": b.skipped_kinks, "max_rel_error": b.max_rel_error,
                        "worst_tensor": b.worst_tensor, "worst_index": b.worst_index, "passed": ok,
                    }));
                }
                println!("{label}\ttensor slices checked: {} (3 relations x {k})", 3 * k);
                combos.push(json!({"attention": attention.to_string(), "pooling": pooling.to_string(), "k": k, "tensor_slices": 3 * k, "blocks": rows}));
            }
        }
    }
    if let Some(path) = &args.report {
        let report = json!({
            "eps": args.eps, "tolerance": args.tolerance, "seed": args.seed,
            "corrupt": args.corrupt, "combinations": combos, "failures": failures,
        });
        write_file(path, &pretty(&report))?;
    }
    if failures.is_empty() {
        println!("gradient check passed");
        Ok(())
    } else {
        Err(Exit { code: 5, message: format!("gradient check failed: {}", failures.join("; ")) })
    }
}

fn cmd_kfold(args: &KfoldArgs) -> CmdResult {
    let run = build_run(&args.run, Some(&args.model), None)?;
    let p = prepare(&run)?;
    // Train and dev questions are pooled; test stays untouched.
    let questions: Vec<_> = p.corpus.train.groups.iter().chain(&p.corpus.dev.groups).cloned().collect();
    let opts = KFoldOptions { k_values: args.k.clone(), folds: args.folds, seed: args.fold_seed, jobs: args.jobs };
    println!("questions: {}", questions.len());
    println!("scheduled runs: {}", opts.k_values.len() * opts.folds);
    let report = kfold_variance(&questions, &run.model, &p.store, &p.features, &opts)?;

    let mut comparisons = Vec::new();
    for w in args.k.windows(2) {
        if let Some(holds) = report.spread_at_most(w[0], w[1]) {
            comparisons.push((w[0], w[1], holds));
        }
    }
    let mut text = config_header(&run.entries());
    text.push_str(&report.to_text());
    for (a, b, holds) in &comparisons {
        let _ = writeln!(text, "spread(k={a}) <= spread(k={b})\t{holds}");
    }
    let json = json!({
        "config": run.entries().into_iter().collect::<BTreeMap<_, _>>(),
        "dataset_hash": p.dataset_hash,
        "report": report,
        "spread_comparisons": comparisons.iter().map(|(a, b, h)| json!({"a": a, "b": b, "holds": h})).collect::<Vec<_>>(),
    });
    write_file(&run.out_dir.join("kfold.txt"), &text)?;
    write_file(&run.out_dir.join("kfold.json"), &pretty(&json))?;
    print!("{}", report.to_text());
    for (a, b, holds) in &comparisons {
        println!("spread(k={a}) <= spread(k={b})\t{holds}");
    }
    println!("report: {}", run.out_dir.join("kfold.json").display());
    if let Some(failed) = report.runs.iter().find(|r| r.error.is_some()) {
        log::warn!("k={} fold {} failed: {}", failed.k, failed.fold, failed.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn cmd_features(args: &FeaturesArgs) -> CmdResult {
    let name = split_name(&args.split)?;
    let run = common_run(&args.common)?;
    let p = prepare(&run)?;
    let mut out = format!("qid\taid\t{}\n", p.features.names.join("\t"));
    for ex in p.corpus.split(name).examples().take(args.limit.unwrap_or(usize::MAX)) {
        let row = p.features.get(&ex.qid, &ex.aid).unwrap_or_default();
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}\t{}\t{}", ex.qid, ex.aid, vals.join("\t"));
    }
    print!("{out}");
    Ok(())
}

fn cmd_convert_dataset(args: &ConvertDatasetArgs) -> CmdResult {
    match args.from.as_str() {
        "wikiqa-official" => {
            let n = convert_wikiqa_official(&args.input, &args.output)?;
            println!("pairs: {n}");
        }
        "trecqa" => {
            let n = convert_trecqa_dir(&args.input, &args.output)?;
            println!("pairs: {n}");
        }
        "yahoo" => {
            let d = YahooOptions::default();
            let opts = YahooOptions {
                train_size: args.train_size.unwrap_or(d.train_size),
                dev_size: args.dev_size.unwrap_or(d.dev_size),
                test_size: args.test_size.unwrap_or(d.test_size),
                ..d
            };
            let corpus = load_yahoo_l4(&args.input, &opts)?;
            fs::create_dir_all(&args.output).map_err(|e| Exit { code: 2, message: format!("{}: {e}", args.output.display()) })?;
            for name in SplitName::ALL {
                let pairs: Vec<RawPair> = corpus
                    .split(name)
                    .examples()
                    .map(|ex| RawPair {
                        qid: ex.qid.clone(),
                        question: ex.question_tokens.join(" "),
                        aid: ex.aid.clone(),
                        answer: ex.answer_tokens.join(" "),
                        label: ex.label,
                    })
                    .collect();
                write_canonical(&args.output.join(format!("{name}.tsv")), &pairs)?;
                println!("{name}: {} questions, {} pairs", corpus.split(name).groups.len(), pairs.len());
            }
            println!("dropped (several best answers): {}", corpus.dropped_multi_best);
        }
        other => return Err(Exit::usage(format!("unknown source format `{other}` (wikiqa-official, trecqa, yahoo)"))),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::ConvertEmbeddings { input, output } => {
            let (count, dim) = convert_word2vec_binary(input, output)?;
            println!("vectors: {count}\ndim: {dim}");
            Ok(())
        }
        Command::ConvertDataset(a) => cmd_convert_dataset(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Kfold(a) => cmd_kfold(a),
        Command::Features(a) => cmd_features(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
