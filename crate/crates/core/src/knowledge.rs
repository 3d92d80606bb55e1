//! External-evidence pipeline: time-relative document retrieval, sentence
//! extraction, similarity filtering with per-source and total caps, and the
//! fixed-shape evidence matrix consumed by the model.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datamodel::{read_jsonl, Tweet};
use crate::encoder::SentenceEncoder;
use crate::error::{Error, Result};
use crate::math::cosine;

pub const DEFAULT_EPSILON: f64 = 0.8;
pub const MAX_EVIDENCE: usize = 50;
pub const MAX_PER_SOURCE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDocument {
    pub url: String,
    pub domain: String,
    pub publish_time: i64,
    pub sentences: Vec<String>,
}

/// One line of `evidence_store.jsonl`. Either `sentences` or raw `text` is
/// given; raw text is split into sentences on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub tweet_id: String,
    pub url: String,
    pub domain: String,
    pub publish_time: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl EvidenceRecord {
    pub fn into_document(self) -> (String, EvidenceDocument) {
        let sentences = match (self.sentences, self.text) {
            (Some(s), _) => s,
            (None, Some(text)) => split_sentences(&text),
            (None, None) => Vec::new(),
        };
        (
            self.tweet_id,
            EvidenceDocument {
                url: self.url,
                domain: self.domain,
                publish_time: self.publish_time,
                sentences,
            },
        )
    }
}

/// Splits on `.`, `!` or `?` followed by whitespace (or end of text).
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            let s = current.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            current.clear();
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

/// Source of candidate documents for a tweet query. A live search client
/// implements the same trait; tests use the file-backed store.
pub trait EvidenceSource {
    fn documents(&self, tweet_id: &str) -> Vec<EvidenceDocument>;
}

/// Pre-fetched search results keyed by tweet id, in retrieval order.
#[derive(Debug, Clone, Default)]
pub struct EvidenceStore {
    docs: HashMap<String, Vec<EvidenceDocument>>,
}

impl EvidenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tweet_id: &str, doc: EvidenceDocument) {
        self.docs.entry(tweet_id.to_string()).or_default().push(doc);
    }

    pub fn from_records(records: Vec<EvidenceRecord>) -> Result<Self> {
        let mut store = EvidenceStore::new();
        for r in records {
            if r.publish_time <= 0 {
                return Err(Error::Precondition(format!(
                    "evidence document {} has non-positive publish_time",
                    r.url
                )));
            }
            let (id, doc) = r.into_document();
            store.insert(&id, doc);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(read_jsonl(path)?)
    }

    pub fn len(&self) -> usize {
        self.docs.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

impl EvidenceSource for EvidenceStore {
    fn documents(&self, tweet_id: &str) -> Vec<EvidenceDocument> {
        self.docs.get(tweet_id).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchMode {
    /// Only documents published no later than the tweet.
    TrainTime,
    /// Everything available at evaluation time.
    TestTime,
}

impl std::str::FromStr for FetchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_time" => Ok(FetchMode::TrainTime),
            "test_time" => Ok(FetchMode::TestTime),
            other => Err(Error::Config(format!("unknown fetch mode {other:?}"))),
        }
    }
}

/// Documents for `tweet`, newest first (stable for equal timestamps).
/// A store miss yields an empty list.
pub fn fetch_documents(tweet: &Tweet, source: &dyn EvidenceSource, mode: FetchMode) -> Vec<EvidenceDocument> {
    let mut docs = source.documents(&tweet.id);
    if mode == FetchMode::TrainTime {
        docs.retain(|d| d.publish_time <= tweet.created_at);
    }
    docs.sort_by(|a, b| b.publish_time.cmp(&a.publish_time));
    docs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Document order, then sentence order.
    #[default]
    ScanOrder,
    /// Highest similarity first; ties in scan order.
    SimilaritySorted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSentence {
    pub text: String,
    pub url: String,
    pub domain: String,
    pub similarity: f64,
    pub encoding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub tweet_id: String,
    pub selected: Vec<SelectedSentence>,
}

impl EvidenceSet {
    pub fn empty(tweet_id: &str) -> Self {
        EvidenceSet {
            tweet_id: tweet_id.to_string(),
            selected: Vec::new(),
        }
    }

    /// `rows × dim` matrix of encodings, zero-padded.
    pub fn to_matrix(&self, rows: usize, dim: usize) -> Array2<f64> {
        let mut m = Array2::zeros((rows, dim));
        for (i, s) in self.selected.iter().take(rows).enumerate() {
            for (j, &x) in s.encoding.iter().take(dim).enumerate() {
                m[[i, j]] = x;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub epsilon: f64,
    pub max_total: usize,
    pub max_per_source: usize,
    pub ranking: Ranking,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            epsilon: DEFAULT_EPSILON,
            max_total: MAX_EVIDENCE,
            max_per_source: MAX_PER_SOURCE,
            ranking: Ranking::ScanOrder,
        }
    }
}

/// Keeps sentences whose cosine with the tweet text is at least `epsilon`,
/// honouring the per-domain and total caps.
pub fn select_evidence(
    tweet: &Tweet,
    docs: &[EvidenceDocument],
    encoder: &dyn SentenceEncoder,
    params: &SelectionParams,
) -> Result<EvidenceSet> {
    if !(params.epsilon > 0.0 && params.epsilon < 1.0) {
        return Err(Error::Precondition(format!(
            "epsilon must lie in (0, 1), got {}",
            params.epsilon
        )));
    }
    let query = encoder.encode(&tweet.text);
    let mut candidates = Vec::new();
    for doc in docs {
        for sentence in &doc.sentences {
            let enc = encoder.encode(sentence);
            let sim = cosine(&enc, &query);
            if sim >= params.epsilon {
                candidates.push(SelectedSentence {
                    text: sentence.clone(),
                    url: doc.url.clone(),
                    domain: doc.domain.clone(),
                    similarity: sim,
                    encoding: enc,
                });
            }
        }
    }
    if params.ranking == Ranking::SimilaritySorted {
        candidates.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    }

    let mut per_source: HashMap<String, usize> = HashMap::new();
    let mut selected = Vec::new();
    for c in candidates {
        if selected.len() >= params.max_total {
            break;
        }
        let count = per_source.entry(c.domain.clone()).or_insert(0);
        if *count >= params.max_per_source {
            continue;
        }
        *count += 1;
        selected.push(c);
    }
    Ok(EvidenceSet {
        tweet_id: tweet.id.clone(),
        selected,
    })
}

/// Fetch and select for every tweet, preserving input order.
pub fn build_evidence(
    tweets: &[Tweet],
    source: &(dyn EvidenceSource + Sync),
    encoder: &dyn SentenceEncoder,
    mode: FetchMode,
    params: &SelectionParams,
) -> Result<Vec<EvidenceSet>> {
    use rayon::prelude::*;
    tweets
        .par_iter()
        .map(|t| {
            let docs = fetch_documents(t, source, mode);
            select_evidence(t, &docs, encoder, params)
        })
        .collect()
}
