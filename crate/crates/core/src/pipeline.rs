//! Turns corpus artifacts into model inputs: vocabulary, feature
//! standardization, evidence matrices and frozen graph embeddings.

use std::collections::{BTreeMap, HashMap};

use crate::datamodel::{DatasetSplit, FeatureSchema, SplitKind, Tweet, UserProfile};
use crate::error::{Error, Result};
use crate::fusion::Standardizer;
use crate::hetgraph::{GraphEmbeddings, NodeKind};
use crate::knowledge::{EvidenceSet, FetchMode};
use crate::model::{ModelDims, ModelInput};
use crate::textenc::Vocabulary;
use crate::training::Example;

/// Evidence regime per split: training and early-test tweets only see
/// documents published before them.
pub fn evidence_mode_for(kind: SplitKind) -> FetchMode {
    match kind {
        SplitKind::Train | SplitKind::EarlyTest => FetchMode::TrainTime,
        SplitKind::GeneralTest => FetchMode::TestTime,
    }
}

/// Raw contextual features of a tweet and its author.
pub fn raw_features(tweet: &Tweet, user: &UserProfile) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    (
        tweet.tweet_features.iter().map(|&v| Some(v)).collect(),
        user.user_features.iter().map(|&v| Some(v)).collect(),
    )
}

pub fn joined(tf: &[Option<f64>], uf: &[Option<f64>]) -> Vec<Option<f64>> {
    tf.iter().chain(uf).copied().collect()
}

#[derive(Debug, Clone)]
pub struct DataBundle {
    pub tweets: BTreeMap<String, Tweet>,
    pub users: HashMap<String, UserProfile>,
    pub schema: FeatureSchema,
    pub vocab: Vocabulary,
    pub standardizer: Standardizer,
    pub graph: GraphEmbeddings,
    pub evidence: HashMap<FetchMode, HashMap<String, EvidenceSet>>,
}

impl DataBundle {
    pub fn tweet(&self, id: &str) -> Result<&Tweet> {
        self.tweets
            .get(id)
            .ok_or_else(|| Error::Split(format!("tweet {id} is not in the corpus")))
    }

    pub fn author(&self, tweet: &Tweet) -> Result<&UserProfile> {
        self.users
            .get(&tweet.user_id)
            .ok_or_else(|| Error::Schema(format!("tweet {} references unknown user {}", tweet.id, tweet.user_id)))
    }

    /// Model input for one tweet. `mask` replaces the time-variant features
    /// with the masking token before standardization.
    pub fn input(&self, dims: &ModelDims, id: &str, mode: FetchMode, mask: bool) -> Result<ModelInput> {
        let tweet = self.tweet(id)?;
        let user = self.author(tweet)?;
        let (mut tf, mut uf) = raw_features(tweet, user);
        if mask {
            (tf, uf) = crate::evalharness::mask_time_variant(&tf, &uf, &self.schema);
        }
        let evidence = self
            .evidence
            .get(&mode)
            .and_then(|m| m.get(id))
            .map(|e| e.to_matrix(dims.evidence_rows, dims.k))
            .unwrap_or_else(|| ndarray::Array2::zeros((dims.evidence_rows, dims.k)));
        let tweet_graph = self.graph.get(NodeKind::Tweet, id);
        let user_graph = self.graph.get(NodeKind::User, &tweet.user_id);
        if tweet_graph.len() != dims.g {
            return Err(Error::Dimension(format!(
                "graph embeddings have width {}, model expects {}",
                tweet_graph.len(),
                dims.g
            )));
        }
        Ok(ModelInput {
            token_ids: self.vocab.encode(&tweet.text, dims.seq_len),
            evidence,
            tweet_graph,
            user_graph,
            context: self.standardizer.apply(&joined(&tf, &uf))?,
        })
    }

    /// Examples for every tweet of `split`, in split order.
    pub fn examples(&self, dims: &ModelDims, split: &DatasetSplit) -> Result<Vec<Example>> {
        let mode = evidence_mode_for(split.kind);
        split
            .tweet_ids
            .iter()
            .map(|id| {
                Ok(Example {
                    id: id.clone(),
                    input: self.input(dims, id, mode, false)?,
                    label: self.tweet(id)?.label.class_index(),
                })
            })
            .collect()
    }
}

/// Vocabulary over the texts of `split`.
pub fn build_vocab(tweets: &BTreeMap<String, Tweet>, split: &DatasetSplit, min_count: usize, max_size: usize) -> Vocabulary {
    Vocabulary::build(
        split.tweet_ids.iter().filter_map(|id| tweets.get(id)).map(|t| t.text.as_str()),
        min_count,
        max_size,
    )
}

/// Standardizer fitted on the contextual features of `split`.
pub fn fit_standardizer(
    tweets: &BTreeMap<String, Tweet>,
    users: &HashMap<String, UserProfile>,
    split: &DatasetSplit,
    schema: &FeatureSchema,
) -> Standardizer {
    let rows: Vec<Vec<Option<f64>>> = split
        .tweet_ids
        .iter()
        .filter_map(|id| tweets.get(id))
        .filter_map(|t| users.get(&t.user_id).map(|u| raw_features(t, u)))
        .map(|(tf, uf)| joined(&tf, &uf))
        .collect();
    Standardizer::fit(rows.iter().map(Vec::as_slice), schema.n_total())
}

pub fn index_evidence(sets: Vec<EvidenceSet>) -> HashMap<String, EvidenceSet> {
    sets.into_iter().map(|s| (s.tweet_id.clone(), s)).collect()
}

/// Hash encoder, or a precomputed table with hash fallback when a vectors file is configured.
pub fn make_encoder(
    cfg: &crate::config::ExperimentConfig,
    vectors: Option<&std::path::Path>,
) -> Result<Box<dyn crate::encoder::SentenceEncoder>> {
    use crate::encoder::{HashEncoder, PrecomputedEncoder};
    Ok(match vectors {
        Some(p) => Box::new(PrecomputedEncoder::load(p, cfg.dims.k, cfg.encoder.seed)?),
        None => Box::new(HashEncoder::new(cfg.dims.k, cfg.encoder.seed)),
    })
}

/// Unsupervised graph-encoder training followed by full-neighbourhood embedding of every node.
pub fn embed_graph(
    graph: &crate::hetgraph::HeteroGraph,
    cfg: &crate::config::ExperimentConfig,
) -> Result<(crate::hetgraph::SageParams, GraphEmbeddings, Vec<f64>)> {
    use crate::hetgraph::{embed_nodes, node_features, train_unsupervised, SageParams};
    let feats = node_features(graph);
    let init = SageParams::new(&cfg.sage_dims(), &mut crate::math::seeded_rng(&[cfg.graph.seed, 0x5a6e]))?;
    let (sage, history) = train_unsupervised(graph, &feats, &init, &cfg.sage_config())?;
    let all: Vec<usize> = (0..graph.num_nodes()).collect();
    let matrix = embed_nodes(graph, &feats, &sage, &all)?;
    Ok((sage, GraphEmbeddings::from_graph(graph, matrix)?, history))
}

/// Everything needed to train and evaluate, built in memory.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub splits: crate::corpus::Splits,
    pub bundle: DataBundle,
    pub sage: crate::hetgraph::SageParams,
}

/// Splits, graph embeddings, evidence for both fetch modes, vocabulary and
/// standardizer from raw corpus objects.
pub fn prepare(
    cfg: &crate::config::ExperimentConfig,
    tweets: Vec<Tweet>,
    users: Vec<UserProfile>,
    follows: &[(String, String)],
    store: &crate::knowledge::EvidenceStore,
    encoder: &dyn crate::encoder::SentenceEncoder,
) -> Result<PreparedExperiment> {
    let splits = crate::corpus::make_splits(&tweets, encoder, &cfg.split_params())?;
    let graph = crate::hetgraph::build_graph(&tweets, &users, follows, cfg.graph_options())?;
    let (sage, embeddings, _) = embed_graph(&graph, cfg)?;
    let mut evidence = HashMap::new();
    for mode in [FetchMode::TrainTime, FetchMode::TestTime] {
        let sets = crate::knowledge::build_evidence(&tweets, store, encoder, mode, &cfg.selection_params())?;
        evidence.insert(mode, index_evidence(sets));
    }
    let tweets: BTreeMap<String, Tweet> = tweets.into_iter().map(|t| (t.id.clone(), t)).collect();
    let users: HashMap<String, UserProfile> = users.into_iter().map(|u| (u.id.clone(), u)).collect();
    let vocab = build_vocab(&tweets, &splits.train, cfg.vocab.min_count, cfg.vocab.max_size);
    let standardizer = fit_standardizer(&tweets, &users, &splits.train, &cfg.schema);
    Ok(PreparedExperiment {
        splits,
        sage,
        bundle: DataBundle {
            tweets,
            users,
            schema: cfg.schema.clone(),
            vocab,
            standardizer,
            graph: embeddings,
            evidence,
        },
    })
}

/// Initializes a model from the config and trains it on the train split.
pub fn train_model(
    cfg: &crate::config::ExperimentConfig,
    bundle: &DataBundle,
    train_split: &DatasetSplit,
    on_epoch: impl FnMut(&crate::model::EndemicModel, &crate::training::EpochLog) -> Result<()>,
) -> Result<(crate::model::EndemicModel, Vec<crate::training::EpochLog>)> {
    let dims = cfg.model_dims(bundle.vocab.len());
    let model = crate::model::EndemicModel::new(dims, cfg.model.p_drop, cfg.model.seed)?;
    let examples = bundle.examples(&dims, train_split)?;
    crate::training::train(&model, &examples, &cfg.train, on_epoch)
}
