//! Experiment configuration: a TOML file, dotted-key overrides on top, and
//! path resolution against the data root.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::sha256_hex;
use crate::corpus::{SplitParams, DEFAULT_LABEL_THRESHOLD, DEFAULT_MAX_CLUSTER_SIZE};
use crate::datamodel::FeatureSchema;
use crate::error::{Error, Result};
use crate::hetgraph::{GraphOptions, SageTrainConfig, DEFAULT_EMBED_DIM, DEFAULT_TELEPORT};
use crate::knowledge::{Ranking, SelectionParams, DEFAULT_EPSILON, MAX_EVIDENCE, MAX_PER_SOURCE};
use crate::model::ModelDims;
use crate::params::OptimizerKind;
use crate::training::TrainConfig;

pub const DATA_ROOT_ENV: &str = "ENDEMIC_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Where every command writes its stage directory.
    pub workdir: String,
    pub tweets: String,
    pub users: String,
    pub follows: Option<String>,
    pub claims: Option<String>,
    pub evidence_store: Option<String>,
    /// Optional precomputed sentence vectors (JSONL of `{text, vector}`).
    pub sentence_vectors: Option<String>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            workdir: "work".into(),
            tweets: "tweets.jsonl".into(),
            users: "users.jsonl".into(),
            follows: None,
            claims: None,
            evidence_store: None,
            sentence_vectors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimsConfig {
    pub k: usize,
    pub g: usize,
    pub c: usize,
    pub attn_hidden: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub evidence_rows: usize,
}

impl Default for DimsConfig {
    fn default() -> Self {
        DimsConfig {
            k: 512,
            g: DEFAULT_EMBED_DIM,
            c: crate::fusion::DEFAULT_CONTEXT_DIM,
            attn_hidden: 256,
            seq_len: 64,
            embed_dim: 300,
            evidence_rows: MAX_EVIDENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub min_count: usize,
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_count: 1,
            max_size: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Weak-labelling similarity threshold.
    pub tau: f64,
    pub cluster_threshold: f64,
    pub max_cluster_size: usize,
    pub max_age: i64,
    pub collected_at: Option<i64>,
    pub general_test_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let s = SplitParams::default();
        CorpusConfig {
            tau: DEFAULT_LABEL_THRESHOLD,
            cluster_threshold: s.cluster_threshold,
            max_cluster_size: DEFAULT_MAX_CLUSTER_SIZE,
            max_age: s.max_age_seconds,
            collected_at: None,
            general_test_fraction: s.general_test_fraction,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeConfig {
    pub epsilon: f64,
    pub max_total: usize,
    pub max_per_source: usize,
    pub ranking: Ranking,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        KnowledgeConfig {
            epsilon: DEFAULT_EPSILON,
            max_total: MAX_EVIDENCE,
            max_per_source: MAX_PER_SOURCE,
            ranking: Ranking::ScanOrder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub layers: usize,
    pub teleport: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub label_tags: bool,
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        let t = SageTrainConfig::default();
        GraphConfig {
            layers: 2,
            teleport: DEFAULT_TELEPORT,
            walk_length: t.walk_length,
            walks_per_node: t.walks_per_node,
            window: t.window,
            negatives: t.negatives,
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            label_tags: false,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub p_drop: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            p_drop: crate::fusion::DEFAULT_DROPOUT,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    pub dims: DimsConfig,
    pub vocab: VocabConfig,
    pub schema: FeatureSchema,
    pub corpus: CorpusConfig,
    pub knowledge: KnowledgeConfig,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        let d = &self.dims;
        let named = [
            ("dims.k", d.k),
            ("dims.g", d.g),
            ("dims.c", d.c),
            ("dims.attn_hidden", d.attn_hidden),
            ("dims.seq_len", d.seq_len),
            ("dims.embed_dim", d.embed_dim),
            ("dims.evidence_rows", d.evidence_rows),
            ("graph.layers", self.graph.layers),
            ("train.batch_size", self.train.batch_size),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if d.k % 2 != 0 {
            return Err(Error::Config(format!("dims.k = {} must be even", d.k)));
        }
        if !(self.knowledge.epsilon > 0.0 && self.knowledge.epsilon < 1.0) {
            return Err(Error::Config("knowledge.epsilon must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.graph.teleport) {
            return Err(Error::Config("graph.teleport must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.model.p_drop) {
            return Err(Error::Config("model.p_drop must lie in [0, 1)".into()));
        }
        self.schema.check().map_err(|e| Error::Config(e.to_string()))?;
        self.train.loss.check()
    }

    pub fn model_dims(&self, vocab_size: usize) -> ModelDims {
        let d = &self.dims;
        ModelDims {
            k: d.k,
            g: d.g,
            c: d.c,
            attn_hidden: d.attn_hidden,
            seq_len: d.seq_len,
            embed_dim: d.embed_dim,
            evidence_rows: d.evidence_rows,
            vocab_size,
            n_features: self.schema.n_total(),
        }
    }

    pub fn split_params(&self) -> SplitParams {
        SplitParams {
            cluster_threshold: self.corpus.cluster_threshold,
            max_cluster_size: self.corpus.max_cluster_size,
            max_age_seconds: self.corpus.max_age,
            collected_at: self.corpus.collected_at,
            general_test_fraction: self.corpus.general_test_fraction,
            seed: self.corpus.seed,
        }
    }

    pub fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            epsilon: self.knowledge.epsilon,
            max_total: self.knowledge.max_total,
            max_per_source: self.knowledge.max_per_source,
            ranking: self.knowledge.ranking,
        }
    }

    pub fn sage_config(&self) -> SageTrainConfig {
        let g = &self.graph;
        SageTrainConfig {
            walk_length: g.walk_length,
            walks_per_node: g.walks_per_node,
            window: g.window,
            negatives: g.negatives,
            epochs: g.epochs,
            lr: g.lr,
            batch_size: g.batch_size,
            teleport: g.teleport,
            optimizer: OptimizerKind::Adam,
            seed: g.seed,
        }
    }

    /// `[node features, G, …, G]` with `graph.layers` layers.
    pub fn sage_dims(&self) -> Vec<usize> {
        let mut dims = vec![crate::hetgraph::NODE_FEATURE_DIM];
        dims.extend(std::iter::repeat_n(self.dims.g, self.graph.layers));
        dims
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            label_tags: self.graph.label_tags,
        }
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to a
/// plain string.
pub fn parse_override(arg: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override {arg:?} has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Builds the configuration from file text plus overrides; overrides win.
pub fn resolve(file_text: Option<&str>, overrides: &[(String, toml::Value)]) -> Result<ExperimentConfig> {
    let mut table = match file_text {
        Some(text) => toml::from_str::<toml::Table>(text).map_err(|e| Error::Config(format!("config: {e}")))?,
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_dotted(&mut table, k, v.clone())?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
    cfg.check()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    resolve(text.as_deref(), overrides)
}

/// Data root: the environment variable if set, else the config file's directory, else `.`.
pub fn data_root(config_path: Option<&Path>) -> PathBuf {
    if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
        return PathBuf::from(root);
    }
    config_path
        .and_then(Path::parent)
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
