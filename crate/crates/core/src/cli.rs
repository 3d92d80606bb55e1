//! Command-line entry point. Every command reads its inputs from the data root
//! or from earlier stage directories under the work directory, writes its
//! outputs into its own stage directory together with a `manifest.json`, and
//! only replaces that directory once the command has succeeded.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, sha256_file};
use crate::config::{self, ExperimentConfig};
use crate::corpus::{make_splits, weak_label_corpus, VerifiedClaim};
use crate::datamodel::{read_jsonl, read_splits, validate_corpus, write_jsonl, write_splits, SplitKind, Tweet, UserProfile};
use crate::error::{Error, Result};
use crate::evalharness::{evaluate, report, EvalMode, MetricsReport};
use crate::fusion::Standardizer;
use crate::hetgraph::{build_graph, read_follow_edges, GraphEmbeddings, SageParams};
use crate::knowledge::{build_evidence, EvidenceSet, EvidenceStore, FetchMode};
use crate::params::ParamSet;
use crate::pipeline::{self, evidence_mode_for, index_evidence, DataBundle};
use crate::textenc::{Vocabulary, PAD_TOKEN, UNK_TOKEN};
use crate::training::EpochLog;

#[derive(Debug, Parser)]
#[command(name = "endemic", version, about = "Early fake-tweet detection experiments")]
pub struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override as dotted key=value; repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate tweets.jsonl / users.jsonl and copy them into the work directory.
    Ingest,
    /// Label unlabelled tweets by similarity to verified claims.
    WeakLabel {
        #[arg(long)]
        claims: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Rumour clusters and the train / general-test / early-test splits.
    MakeSplits {
        #[arg(long)]
        max_cluster_size: Option<usize>,
        #[arg(long)]
        max_age: Option<i64>,
    },
    /// Build the user/tweet graph and write edges.tsv.
    BuildGraph,
    /// Train the graph encoder and export node embeddings.
    EmbedGraph {
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        teleport: Option<f64>,
    },
    /// Select evidence sentences for every tweet.
    FetchEvidence {
        #[arg(long, default_value = "train_time")]
        mode: String,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        store: Option<String>,
    },
    /// Train the classifier.
    Train,
    /// Evaluate the trained classifier on one split.
    Eval {
        #[arg(long, default_value = "general_test")]
        split: String,
        #[arg(long)]
        mask_detect: bool,
        /// Run name; defaults to eval-<split>[-mask].
        #[arg(long)]
        name: Option<String>,
    },
    /// Combine evaluation runs into one table; the first run is the ΔAcc reference.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        compare: Vec<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::WeakLabel { .. } => "weak-label",
            Command::MakeSplits { .. } => "make-splits",
            Command::BuildGraph => "build-graph",
            Command::EmbedGraph { .. } => "embed-graph",
            Command::FetchEvidence { .. } => "fetch-evidence",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
        }
    }

    /// Flags that are shorthands for config keys.
    fn flag_overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        };
        match self {
            Command::WeakLabel { claims, tau } => {
                push("paths.claims", claims.as_ref().map(|c| format!("{c:?}")));
                push("corpus.tau", tau.map(|t| t.to_string()));
            }
            Command::MakeSplits { max_cluster_size, max_age } => {
                push("corpus.max_cluster_size", max_cluster_size.map(|v| v.to_string()));
                push("corpus.max_age", max_age.map(|v| v.to_string()));
            }
            Command::EmbedGraph { layers, teleport } => {
                push("graph.layers", layers.map(|v| v.to_string()));
                push("graph.teleport", teleport.map(|v| v.to_string()));
            }
            Command::FetchEvidence { epsilon, store, .. } => {
                push("knowledge.epsilon", epsilon.map(|v| v.to_string()));
                push("paths.evidence_store", store.as_ref().map(|s| format!("{s:?}")));
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: Vec<String>,
    config_hash: String,
    config: &'a ExperimentConfig,
    overrides: &'a [String],
    seeds: BTreeMap<String, u64>,
    status: &'a str,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

fn seeds(cfg: &ExperimentConfig) -> BTreeMap<String, u64> {
    BTreeMap::from([
        ("corpus".to_string(), cfg.corpus.seed),
        ("encoder".to_string(), cfg.encoder.seed),
        ("graph".to_string(), cfg.graph.seed),
        ("model".to_string(), cfg.model.seed),
        ("train".to_string(), cfg.train.seed),
    ])
}

/// A stage's output directory, written under a staging name and swapped in on commit.
struct Stage {
    staging: PathBuf,
    target: PathBuf,
    root: PathBuf,
    inputs: BTreeMap<String, String>,
}

impl Stage {
    fn open(ctx: &Context, name: &str) -> Result<Self> {
        let workdir = &ctx.workdir;
        let staging = workdir.join(format!(".{name}.staging"));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(Stage {
            staging,
            target: workdir.join(name),
            root: ctx.root.clone(),
            inputs: BTreeMap::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.staging.join(rel)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        // Relative to the data root so manifests do not depend on where the data lives.
        let key = path.strip_prefix(&self.root).unwrap_or(path);
        self.inputs.insert(key.to_string_lossy().replace('\\', "/"), sha256_file(path)?);
        Ok(())
    }

    fn commit(self, ctx: &Context, status: &str) -> Result<PathBuf> {
        let mut artifacts = BTreeMap::new();
        collect_checksums(&self.staging, &self.staging, &mut artifacts)?;
        let manifest = RunManifest {
            command: ctx.command,
            args: ctx.args.clone(),
            config_hash: ctx.cfg.hash(),
            config: &ctx.cfg,
            overrides: &ctx.overrides,
            seeds: seeds(&ctx.cfg),
            status,
            inputs: self.inputs.clone(),
            artifacts,
        };
        let path = self.staging.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        std::fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        Ok(self.target.clone())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        // Only reached with the staging directory still present on failure.
        let _ = std::fs::remove_dir_all(&self.staging);
    }
}

fn collect_checksums(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_checksums(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_file(&p)?);
        }
    }
    Ok(())
}

struct Context {
    cfg: ExperimentConfig,
    root: PathBuf,
    workdir: PathBuf,
    command: &'static str,
    args: Vec<String>,
    overrides: Vec<String>,
}

impl Context {
    fn data_path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// A path that must exist; a missing one is a usage error.
    fn require(&self, path: PathBuf, what: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::Config(format!("missing {what}: {}", path.display())))
        }
    }

    fn stage_file(&self, stage: &str, file: &str, hint: &str) -> Result<PathBuf> {
        self.require(self.workdir.join(stage).join(file), &format!("{file} (run `{hint}` first)"))
    }

    fn optional_data(&self, rel: &Option<String>, what: &str) -> Result<Option<PathBuf>> {
        rel.as_ref().map(|r| self.require(self.data_path(r), what)).transpose()
    }

    /// Weak-labelled tweets if available, else the ingested ones.
    fn tweets_path(&self) -> Result<PathBuf> {
        let labelled = self.workdir.join("weak-label").join("tweets.jsonl");
        if labelled.exists() {
            return Ok(labelled);
        }
        self.stage_file("ingest", "tweets.jsonl", "ingest")
    }

    fn load_tweets(&self, stage: &mut Stage) -> Result<Vec<Tweet>> {
        let p = self.tweets_path()?;
        stage.input(&p)?;
        read_jsonl(&p)
    }

    fn load_users(&self, stage: &mut Stage) -> Result<Vec<UserProfile>> {
        let p = self.stage_file("ingest", "users.jsonl", "ingest")?;
        stage.input(&p)?;
        read_jsonl(&p)
    }

    fn encoder(&self) -> Result<Box<dyn crate::encoder::SentenceEncoder>> {
        let vectors = self.optional_data(&self.cfg.paths.sentence_vectors, "sentence vectors")?;
        pipeline::make_encoder(&self.cfg, vectors.as_deref())
    }
}

fn evidence_stage(mode: FetchMode) -> String {
    match mode {
        FetchMode::TrainTime => "evidence-train_time".into(),
        FetchMode::TestTime => "evidence-test_time".into(),
    }
}

fn mode_name(mode: FetchMode) -> &'static str {
    match mode {
        FetchMode::TrainTime => "train_time",
        FetchMode::TestTime => "test_time",
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize, serde::Deserialize)]
struct SageFile {
    dims: Vec<usize>,
    weights: Vec<f64>,
}

fn run_ingest(ctx: &Context) -> Result<()> {
    let tweets_path = ctx.require(ctx.data_path(&ctx.cfg.paths.tweets), "tweets file")?;
    let users_path = ctx.require(ctx.data_path(&ctx.cfg.paths.users), "users file")?;
    let mut stage = Stage::open(ctx, "ingest")?;
    stage.input(&tweets_path)?;
    stage.input(&users_path)?;
    let tweets: Vec<Tweet> = read_jsonl(&tweets_path)?;
    let users: Vec<UserProfile> = read_jsonl(&users_path)?;
    let report = validate_corpus(&tweets, &users, &ctx.cfg.schema);
    if !report.is_valid() {
        for issue in report.issues.iter().take(20) {
            log::error!("{issue:?}");
        }
        return Err(Error::Schema(format!("corpus has {} validation issues", report.issues.len())));
    }
    write_jsonl(&stage.path("tweets.jsonl"), &tweets)?;
    write_jsonl(&stage.path("users.jsonl"), &users)?;
    write_json(&stage.path("validation.json"), &report)?;
    log::info!("ingested {} tweets, {} users", tweets.len(), users.len());
    stage.commit(ctx, "ok")?;
    Ok(())
}

fn run_weak_label(ctx: &Context) -> Result<()> {
    let claims_rel = ctx
        .cfg
        .paths
        .claims
        .clone()
        .ok_or_else(|| Error::Config("no claims file: pass --claims or set paths.claims".into()))?;
    let claims_path = ctx.require(ctx.data_path(&claims_rel), "claims file")?;
    let tweets_in = ctx.stage_file("ingest", "tweets.jsonl", "ingest")?;
    let mut stage = Stage::open(ctx, "weak-label")?;
    stage.input(&claims_path)?;
    stage.input(&tweets_in)?;
    let claims: Vec<VerifiedClaim> = read_jsonl(&claims_path)?;
    let mut tweets: Vec<Tweet> = read_jsonl(&tweets_in)?;
    let encoder = ctx.encoder()?;
    let n = weak_label_corpus(&mut tweets, &claims, encoder.as_ref(), ctx.cfg.corpus.tau)?;
    log::info!("weak-labelled {n} of {} tweets", tweets.len());
    write_jsonl(&stage.path("tweets.jsonl"), &tweets)?;
    write_json(&stage.path("summary.json"), &serde_json::json!({ "newly_labelled": n, "tweets": tweets.len() }))?;
    stage.commit(ctx, "ok")?;
    Ok(())
}

fn run_make_splits(ctx: &Context) -> Result<()> {
    let mut stage = Stage::open(ctx, "splits")?;
    let tweets = ctx.load_tweets(&mut stage)?;
    let encoder = ctx.encoder()?;
    let splits = make_splits(&tweets, encoder.as_ref(), &ctx.cfg.split_params())?;
    for s in splits.all() {
        log::info!("{}: {} tweets ({} labelled)", s.kind.as_str(), s.tweet_ids.len(), s.labelled_ids.len());
    }
    write_splits(&stage.path("splits.json"), &splits.all().map(Clone::clone))?;
    write_json(&stage.path("clusters.json"), &splits.clusters)?;
    stage.commit(ctx, "ok")?;
    Ok(())
}

fn follows(ctx: &Context, stage: &mut Stage) -> Result<Vec<(String, String)>> {
    match ctx.optional_data(&ctx.cfg.paths.follows, "follows file")? {
        Some(p) => {
            stage.input(&p)?;
            read_follow_edges(&p)
        }
        None => Ok(Vec::new()),
    }
}

fn run_build_graph(ctx: &Context) -> Result<()> {
    let mut stage = Stage::open(ctx, "graph")?;
    let tweets = ctx.load_tweets(&mut stage)?;
    let users = ctx.load_users(&mut stage)?;
    let follows = follows(ctx, &mut stage)?;
    let g = build_graph(&tweets, &users, &follows, ctx.cfg.graph_options())?;
    g.write_edges_tsv(&stage.path("edges.tsv"))?;
    write_json(
        &stage.path("graph.json"),
        &serde_json::json!({ "nodes": g.num_nodes(), "edges": g.num_edges(), "adjacency_bytes": g.adjacency_bytes() }),
    )?;
    log::info!("graph: {} nodes, {} edges", g.num_nodes(), g.num_edges());
    stage.commit(ctx, "ok")?;
    Ok(())
}

fn run_embed_graph(ctx: &Context) -> Result<()> {
    let edges = ctx.stage_file("graph", "edges.tsv", "build-graph")?;
    let mut stage = Stage::open(ctx, "graph-embed")?;
    let tweets = ctx.load_tweets(&mut stage)?;
    let users = ctx.load_users(&mut stage)?;
    stage.input(&edges)?;
    let follows = read_follow_edges(&edges)?;
    let g = build_graph(&tweets, &users, &follows, ctx.cfg.graph_options())?;
    let (sage, embeddings, history) = pipeline::embed_graph(&g, &ctx.cfg)?;
    embeddings.save(&stage.path("embeddings"))?;
    write_json(
        &stage.path("sage.json"),
        &SageFile {
            dims: ctx.cfg.sage_dims(),
            weights: sage.flatten(),
        },
    )?;
    let log: String = history.iter().enumerate().map(|(i, l)| format!("{i},{l:.9}\n")).collect();
    std::fs::write(stage.path("loss.csv"), format!("epoch,loss\n{log}")).map_err(|e| Error::io(stage.path("loss.csv"), e))?;
    stage.commit(ctx, "ok")?;
    Ok(())
}

fn run_fetch_evidence(ctx: &Context, mode: &str) -> Result<()> {
    let mode: FetchMode = mode.parse()?;
    let store_rel = ctx
        .cfg
        .paths
        .evidence_store
        .clone()
        .ok_or_else(|| Error::Config("no evidence store: pass --store or set paths.evidence_store".into()))?;
    let store_path = ctx.require(ctx.data_path(&store_rel), "evidence store")?;
    let mut stage = Stage::open(ctx, &evidence_stage(mode))?;
    stage.input(&store_path)?;
    let tweets = ctx.load_tweets(&mut stage)?;
    let store = EvidenceStore::load(&store_path)?;
    let encoder = ctx.encoder()?;
    let sets = build_evidence(&tweets, &store, encoder.as_ref(), mode, &ctx.cfg.selection_params())?;
    let total: usize = sets.iter().map(|s| s.selected.len()).sum();
    log::info!("{}: {total} sentences selected for {} tweets", mode_name(mode), sets.len());
    write_jsonl(&stage.path("evidence.jsonl"), &sets)?;
    stage.commit(ctx, "ok")?;
    Ok(())
}

/// Loads everything except vocabulary and standardizer, which `train` fits and `eval` reloads.
fn load_bundle_parts(
    ctx: &Context,
    stage: &mut Stage,
    modes: &[FetchMode],
) -> Result<(Vec<crate::datamodel::DatasetSplit>, DataBundle)> {
    let tweets = ctx.load_tweets(stage)?;
    let users = ctx.load_users(stage)?;
    let splits_path = ctx.stage_file("splits", "splits.json", "make-splits")?;
    stage.input(&splits_path)?;
    let splits = read_splits(&splits_path, &tweets)?;
    let emb_prefix = ctx.workdir.join("graph-embed").join("embeddings");
    let (bin, ids) = GraphEmbeddings::paths(&emb_prefix);
    let bin = ctx.require(bin, "graph embeddings (run `embed-graph` first)")?;
    stage.input(&bin)?;
    stage.input(&ids)?;
    let graph = GraphEmbeddings::load(&emb_prefix)?;
    let mut evidence = std::collections::HashMap::new();
    for &mode in modes {
        let p = ctx.stage_file(
            &evidence_stage(mode),
            "evidence.jsonl",
            &format!("fetch-evidence --mode {}", mode_name(mode)),
        )?;
        stage.input(&p)?;
        let sets: Vec<EvidenceSet> = read_jsonl(&p)?;
        evidence.insert(mode, index_evidence(sets));
    }
    let n = ctx.cfg.schema.n_total();
    let bundle = DataBundle {
        tweets: tweets.into_iter().map(|t| (t.id.clone(), t)).collect(),
        users: users.into_iter().map(|u| (u.id.clone(), u)).collect(),
        schema: ctx.cfg.schema.clone(),
        vocab: Vocabulary::from_tokens(vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()])?,
        standardizer: Standardizer::identity(n),
        graph,
        evidence,
    };
    Ok((splits, bundle))
}

fn find_split(splits: &[crate::datamodel::DatasetSplit], kind: SplitKind) -> Result<&crate::datamodel::DatasetSplit> {
    splits
        .iter()
        .find(|s| s.kind == kind)
        .ok_or_else(|| Error::Split(format!("splits.json has no {} split", kind.as_str())))
}

fn run_train(ctx: &Context) -> Result<()> {
    let mut stage = Stage::open(ctx, "train")?;
    let (splits, mut bundle) = load_bundle_parts(ctx, &mut stage, &[FetchMode::TrainTime])?;
    let train_split = find_split(&splits, SplitKind::Train)?.clone();
    let sage_path = ctx.stage_file("graph-embed", "sage.json", "embed-graph")?;
    stage.input(&sage_path)?;
    let sage_file: SageFile = read_json(&sage_path)?;
    let mut sage = SageParams::new(&sage_file.dims, &mut crate::math::seeded_rng(&[0]))?;
    if sage.num_params() != sage_file.weights.len() {
        return Err(Error::Checkpoint("sage.json weight count does not match its dims".into()));
    }
    sage.load_flat(&sage_file.weights);

    bundle.vocab = pipeline::build_vocab(&bundle.tweets, &train_split, ctx.cfg.vocab.min_count, ctx.cfg.vocab.max_size);
    bundle.standardizer = pipeline::fit_standardizer(&bundle.tweets, &bundle.users, &train_split, &ctx.cfg.schema);
    bundle.vocab.save(&stage.path("vocab.txt"))?;
    write_json(&stage.path("standardizer.json"), &bundle.standardizer)?;

    let ck_dir = stage.path("checkpoint");
    let log_path = stage.path("train_log.csv");
    let mut log = String::from(EpochLog::CSV_HEADER);
    log.push('\n');
    let seeds = seeds(&ctx.cfg);
    let p_drop = ctx.cfg.model.p_drop;
    let result = pipeline::train_model(&ctx.cfg, &bundle, &train_split, |model, entry| {
        log.push_str(&entry.csv_row());
        log.push('\n');
        std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        save_checkpoint(&ck_dir, model, Some(&sage), p_drop, &seeds)?;
        Ok(())
    });
    match result {
        Ok((_, logs)) => {
            if let Some(last) = logs.last() {
                log::info!("trained {} epochs, train accuracy {:.4}", logs.len(), last.train_acc);
            }
            stage.commit(ctx, "ok")?;
            Ok(())
        }
        Err(e @ Error::Divergence { .. }) if ck_dir.join("model.bin").exists() => {
            // Keep the last good checkpoint.
            stage.commit(ctx, "diverged")?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn run_eval(ctx: &Context, split: &str, mask: bool, name: Option<&str>) -> Result<()> {
    let kind: SplitKind = split.parse()?;
    let run = name
        .map(str::to_string)
        .unwrap_or_else(|| format!("eval-{}{}", kind.as_str(), if mask { "-mask" } else { "" }));
    if run.is_empty() || run.contains(['/', '\\']) || run.starts_with('.') {
        return Err(Error::Config(format!("invalid run name {run:?}")));
    }
    let train_dir = ctx.require(ctx.workdir.join("train"), "trained model (run `train` first)")?;
    let mut stage = Stage::open(ctx, &run)?;
    let (splits, mut bundle) = load_bundle_parts(ctx, &mut stage, &[evidence_mode_for(kind)])?;
    for f in ["checkpoint/model.bin", "checkpoint/manifest.json", "vocab.txt", "standardizer.json"] {
        stage.input(&train_dir.join(f))?;
    }
    let ck = load_checkpoint(&train_dir.join("checkpoint"))?;
    bundle.vocab = Vocabulary::load(&train_dir.join("vocab.txt"))?;
    bundle.standardizer = read_json(&train_dir.join("standardizer.json"))?;
    let split = find_split(&splits, kind)?;
    let mode = if mask { EvalMode::MaskDetect } else { EvalMode::Plain };
    let metrics = evaluate(&ck.model, &bundle, split, mode, &run)?;
    log::info!(
        "{run}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1
    );
    write_json(&stage.path("metrics.json"), &metrics)?;
    report(std::slice::from_ref(&metrics), &stage.staging)?;
    stage.commit(ctx, "ok")?;
    Ok(())
}

fn run_report(ctx: &Context, compare: &[String]) -> Result<()> {
    let mut stage = Stage::open(ctx, "report")?;
    let mut runs: Vec<MetricsReport> = Vec::new();
    for r in compare {
        let dir = if Path::new(r).is_absolute() {
            PathBuf::from(r)
        } else {
            ctx.workdir.join(r)
        };
        let p = ctx.require(dir.join("metrics.json"), &format!("metrics for run {r}"))?;
        stage.input(&p)?;
        runs.push(read_json(&p)?);
    }
    report(&runs, &stage.staging)?;
    stage.commit(ctx, "ok")?;
    Ok(())
}

/// Exit status for an error: 2 for usage and configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Runs one command. `env_root` stands in for the data-root environment variable.
pub fn run(cli: Cli, env_root: Option<OsString>) -> Result<()> {
    let command = cli.command.name();
    let mut overrides = cli.set.clone();
    overrides.extend(cli.command.flag_overrides());
    let parsed = overrides
        .iter()
        .map(|o| config::parse_override(o))
        .collect::<Result<Vec<_>>>()?;
    if let Some(p) = &cli.config {
        if !p.exists() {
            return Err(Error::Config(format!("missing config file {}", p.display())));
        }
    }
    let cfg = config::load(cli.config.as_deref(), &parsed)?;
    let root = env_root
        .map(PathBuf::from)
        .unwrap_or_else(|| config::data_root(cli.config.as_deref()));
    if !root.is_dir() {
        return Err(Error::Config(format!("data root {} is not a directory", root.display())));
    }
    let workdir = root.join(&cfg.paths.workdir);
    std::fs::create_dir_all(&workdir).map_err(|e| Error::io(&workdir, e))?;
    for o in &overrides {
        log::info!("override {o}");
    }
    let args = match &cli.command {
        Command::FetchEvidence { mode, .. } => vec![format!("mode={mode}")],
        Command::Eval { split, mask_detect, name } => {
            let mut a = vec![format!("split={split}"), format!("mask_detect={mask_detect}")];
            if let Some(n) = name {
                a.push(format!("name={n}"));
            }
            a
        }
        Command::Report { compare } => compare.iter().map(|c| format!("compare={c}")).collect(),
        _ => Vec::new(),
    };
    let ctx = Context {
        cfg,
        root,
        workdir,
        command,
        args,
        overrides,
    };
    match &cli.command {
        Command::Ingest => run_ingest(&ctx),
        Command::WeakLabel { .. } => run_weak_label(&ctx),
        Command::MakeSplits { .. } => run_make_splits(&ctx),
        Command::BuildGraph => run_build_graph(&ctx),
        Command::EmbedGraph { .. } => run_embed_graph(&ctx),
        Command::FetchEvidence { mode, .. } => run_fetch_evidence(&ctx, mode),
        Command::Train => run_train(&ctx),
        Command::Eval { split, mask_detect, name } => run_eval(&ctx, split, *mask_detect, name.as_deref()),
        Command::Report { compare } => run_report(&ctx, compare),
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with<I, T>(args: I, env_root: Option<OsString>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, env_root) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
