//! Dataset construction: weak labels from a verified-claims base, rumour
//! clusters, and the train / general-test / early-test splits.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DatasetSplit, Label, SplitKind, Tweet};
use crate::encoder::SentenceEncoder;
use crate::error::{Error, Result};
use crate::math::{cosine, seeded_rng};

pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MAX_CLUSTER_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stance {
    TrueClaim,
    FalseClaim,
}

impl Stance {
    pub fn label(self) -> Label {
        match self {
            Stance::TrueClaim => Label::Genuine,
            Stance::FalseClaim => Label::Fake,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedClaim {
    pub id: String,
    pub text: String,
    pub stance: Stance,
    pub source: String,
}

/// Claim embeddings computed once, reused across tweets.
pub struct WeakLabeler<'a> {
    encoder: &'a dyn SentenceEncoder,
    claims: Vec<(Stance, Vec<f64>)>,
    threshold: f64,
}

impl<'a> WeakLabeler<'a> {
    pub fn new(claims: &[VerifiedClaim], encoder: &'a dyn SentenceEncoder, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Precondition(format!(
                "label threshold must lie in (0, 1), got {threshold}"
            )));
        }
        if let Some(c) = claims.iter().find(|c| c.text.trim().is_empty()) {
            return Err(Error::Precondition(format!("claim {} has empty text", c.id)));
        }
        let claims = claims.iter().map(|c| (c.stance, encoder.encode(&c.text))).collect();
        Ok(WeakLabeler {
            encoder,
            claims,
            threshold,
        })
    }

    /// Stance of the most similar claim (first on ties) if its cosine clears the threshold.
    pub fn label(&self, text: &str) -> Label {
        let v = self.encoder.encode(text);
        let mut best: Option<(f64, Stance)> = None;
        for (stance, c) in &self.claims {
            let sim = cosine(&v, c);
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, *stance));
            }
        }
        match best {
            Some((sim, stance)) if sim >= self.threshold => stance.label(),
            _ => Label::Unlabelled,
        }
    }
}

pub fn weak_label(tweet: &Tweet, claims: &[VerifiedClaim], encoder: &dyn SentenceEncoder, threshold: f64) -> Result<Label> {
    Ok(WeakLabeler::new(claims, encoder, threshold)?.label(&tweet.text))
}

/// Weak-labels every unlabelled tweet; existing labels are kept.
pub fn weak_label_corpus(
    tweets: &mut [Tweet],
    claims: &[VerifiedClaim],
    encoder: &dyn SentenceEncoder,
    threshold: f64,
) -> Result<usize> {
    let labeler = WeakLabeler::new(claims, encoder, threshold)?;
    let mut assigned = 0;
    for t in tweets.iter_mut().filter(|t| !t.label.is_labelled()) {
        t.label = labeler.label(&t.text);
        if t.label.is_labelled() {
            assigned += 1;
        }
    }
    Ok(assigned)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RumourCluster {
    pub id: usize,
    pub member_tweet_ids: Vec<String>,
    /// Embedding of the seed tweet that opened the cluster.
    pub centroid: Vec<f64>,
    pub size: usize,
}

/// Threshold leader clustering in input order.
///
/// Each tweet joins the existing cluster whose seed embedding is most similar
/// (first on ties) if that cosine is at least `threshold`; otherwise it opens a
/// new cluster with itself as seed. Clusters are returned largest first, ties
/// kept in creation order, and ids renumbered after sorting.
pub fn find_rumour_clusters(tweets: &[Tweet], encoder: &dyn SentenceEncoder, threshold: f64) -> Vec<RumourCluster> {
    let mut clusters: Vec<RumourCluster> = Vec::new();
    for t in tweets {
        let v = encoder.encode(&t.text);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in clusters.iter().enumerate() {
            let sim = cosine(&v, &c.centroid);
            if sim >= threshold && best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        match best {
            Some((i, _)) => {
                clusters[i].member_tweet_ids.push(t.id.clone());
                clusters[i].size += 1;
            }
            None => clusters.push(RumourCluster {
                id: clusters.len(),
                member_tweet_ids: vec![t.id.clone()],
                centroid: v,
                size: 1,
            }),
        }
    }
    clusters.sort_by(|a, b| b.size.cmp(&a.size));
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = i;
    }
    clusters
}

/// Members of small clusters whose age at `collected_at` is within `max_age_seconds`.
pub fn build_early_test(
    clusters: &[RumourCluster],
    tweets: &[Tweet],
    max_size: usize,
    max_age_seconds: i64,
    collected_at: i64,
    train: Option<&DatasetSplit>,
) -> Result<DatasetSplit> {
    if max_size < 1 {
        return Err(Error::Precondition("max cluster size must be at least 1".into()));
    }
    let by_id: HashMap<&str, &Tweet> = tweets.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut ids = Vec::new();
    for c in clusters.iter().filter(|c| c.size <= max_size) {
        for id in &c.member_tweet_ids {
            let t = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Split(format!("cluster member {id} not in corpus")))?;
            if collected_at - t.created_at <= max_age_seconds {
                ids.push(id.clone());
            }
        }
    }
    if let Some(train) = train {
        let train_ids: HashSet<&str> = train.tweet_ids.iter().map(String::as_str).collect();
        if let Some(dup) = ids.iter().find(|id| train_ids.contains(id.as_str())) {
            return Err(Error::Split(format!("early-test tweet {dup} also appears in the train split")));
        }
    }
    Ok(DatasetSplit::from_ids(SplitKind::EarlyTest, ids, tweets))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitParams {
    pub cluster_threshold: f64,
    pub max_cluster_size: usize,
    pub max_age_seconds: i64,
    /// Reference time for tweet age; defaults to the newest tweet in the corpus.
    pub collected_at: Option<i64>,
    pub general_test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            cluster_threshold: DEFAULT_LABEL_THRESHOLD,
            max_cluster_size: DEFAULT_MAX_CLUSTER_SIZE,
            max_age_seconds: 86_400,
            collected_at: None,
            general_test_fraction: 0.2,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: DatasetSplit,
    pub general_test: DatasetSplit,
    pub early_test: DatasetSplit,
    pub clusters: Vec<RumourCluster>,
}

impl Splits {
    pub fn all(&self) -> [&DatasetSplit; 3] {
        [&self.train, &self.general_test, &self.early_test]
    }
}

/// Clusters the labelled tweets, carves out the early-test split from small
/// fresh clusters, holds out a seeded fraction of the remaining labelled
/// tweets as general-test, and puts everything else (including all
/// unlabelled tweets) in train. Whole early-test clusters are kept out of
/// train and general-test.
pub fn make_splits(tweets: &[Tweet], encoder: &dyn SentenceEncoder, params: &SplitParams) -> Result<Splits> {
    if !(0.0..1.0).contains(&params.general_test_fraction) {
        return Err(Error::Precondition("general_test_fraction must lie in [0, 1)".into()));
    }
    let labelled: Vec<Tweet> = tweets.iter().filter(|t| t.label.is_labelled()).cloned().collect();
    let clusters = find_rumour_clusters(&labelled, encoder, params.cluster_threshold);
    let collected_at = params
        .collected_at
        .unwrap_or_else(|| tweets.iter().map(|t| t.created_at).max().unwrap_or(0));
    let early = build_early_test(
        &clusters,
        tweets,
        params.max_cluster_size,
        params.max_age_seconds,
        collected_at,
        None,
    )?;

    let held_out: HashSet<&str> = clusters
        .iter()
        .filter(|c| c.member_tweet_ids.iter().any(|id| early.contains(id)))
        .flat_map(|c| c.member_tweet_ids.iter().map(String::as_str))
        .collect();

    let mut pool: Vec<&Tweet> = labelled.iter().filter(|t| !held_out.contains(t.id.as_str())).collect();
    let mut rng = seeded_rng(&[params.seed, 0x5711]);
    pool.shuffle(&mut rng);
    let n_test = (pool.len() as f64 * params.general_test_fraction).round() as usize;
    let test_ids: HashSet<&str> = pool[..n_test].iter().map(|t| t.id.as_str()).collect();

    let mut general_ids = Vec::new();
    let mut train_ids = Vec::new();
    for t in tweets {
        if held_out.contains(t.id.as_str()) {
            continue;
        }
        if test_ids.contains(t.id.as_str()) {
            general_ids.push(t.id.clone());
        } else {
            train_ids.push(t.id.clone());
        }
    }
    let train = DatasetSplit::from_ids(SplitKind::Train, train_ids, tweets);
    let general_test = DatasetSplit::from_ids(SplitKind::GeneralTest, general_ids, tweets);
    // Re-run with the train split to enforce disjointness.
    let early_test = build_early_test(
        &clusters,
        tweets,
        params.max_cluster_size,
        params.max_age_seconds,
        collected_at,
        Some(&train),
    )?;
    Ok(Splits {
        train,
        general_test,
        early_test,
        clusters,
    })
}
