//! Social objects (tweets, users), the contextual feature schema, dataset
//! splits, and JSONL ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Veracity label. `Unlabelled` is an explicit value, never an absent field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Fake,
    Genuine,
    #[default]
    Unlabelled,
}

impl Label {
    /// Class index used by the classifier head: genuine = 0, fake = 1.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Genuine => Some(0),
            Label::Fake => Some(1),
            Label::Unlabelled => None,
        }
    }

    pub fn from_class_index(index: usize) -> Label {
        if index == 1 {
            Label::Fake
        } else {
            Label::Genuine
        }
    }

    pub fn is_labelled(self) -> bool {
        self != Label::Unlabelled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    pub user_id: String,
    /// UTC seconds.
    pub created_at: i64,
    #[serde(default)]
    pub retweet_of: Option<String>,
    pub tweet_features: Vec<f64>,
    #[serde(default)]
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub followers: u64,
    pub followees: u64,
    pub verified: bool,
    pub tweet_count: u64,
    pub user_features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub time_variant: bool,
}

impl FeatureDef {
    pub fn new(name: &str, time_variant: bool) -> Self {
        FeatureDef {
            name: name.to_string(),
            time_variant,
        }
    }
}

/// Ordered tweet and user feature definitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub tweet: Vec<FeatureDef>,
    pub user: Vec<FeatureDef>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema {
            tweet: vec![
                FeatureDef::new("favourites", true),
                FeatureDef::new("retweets", true),
                FeatureDef::new("domain_pagerank", false),
                FeatureDef::new("sentiment", false),
            ],
            user: vec![
                FeatureDef::new("followers", true),
                FeatureDef::new("followees", true),
                FeatureDef::new("verified", false),
                FeatureDef::new("tweet_count", true),
            ],
        }
    }
}

impl FeatureSchema {
    pub fn new(tweet: Vec<FeatureDef>, user: Vec<FeatureDef>) -> Result<Self> {
        let schema = FeatureSchema { tweet, user };
        schema.check()?;
        Ok(schema)
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for def in self.tweet.iter().chain(&self.user) {
            if !seen.insert(def.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", def.name)));
            }
        }
        Ok(())
    }

    pub fn n_tweet(&self) -> usize {
        self.tweet.len()
    }

    pub fn n_user(&self) -> usize {
        self.user.len()
    }

    pub fn n_total(&self) -> usize {
        self.tweet.len() + self.user.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    GeneralTest,
    EarlyTest,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::GeneralTest => "general_test",
            SplitKind::EarlyTest => "early_test",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "general_test" => Ok(SplitKind::GeneralTest),
            "early_test" => Ok(SplitKind::EarlyTest),
            other => Err(Error::Config(format!("unknown split kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub kind: SplitKind,
    pub tweet_ids: Vec<String>,
    pub labelled_ids: Vec<String>,
}

impl DatasetSplit {
    /// Builds a split over `ids`, deriving `labelled_ids` from the tweets' labels.
    pub fn from_ids<'a>(kind: SplitKind, ids: Vec<String>, tweets: impl IntoIterator<Item = &'a Tweet>) -> Self {
        let labelled: HashSet<&str> = tweets
            .into_iter()
            .filter(|t| t.label.is_labelled())
            .map(|t| t.id.as_str())
            .collect();
        let labelled_ids = ids.iter().filter(|id| labelled.contains(id.as_str())).cloned().collect();
        DatasetSplit {
            kind,
            tweet_ids: ids,
            labelled_ids,
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.tweet_ids.iter().any(|t| t == id)
    }
}

/// On-disk form of `splits.json`: split kind name to tweet ids.
pub type SplitsFile = BTreeMap<SplitKind, Vec<String>>;

pub fn write_splits(path: &Path, splits: &[DatasetSplit]) -> Result<()> {
    let map: SplitsFile = splits.iter().map(|s| (s.kind, s.tweet_ids.clone())).collect();
    let text = serde_json::to_string_pretty(&map)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_splits(path: &Path, tweets: &[Tweet]) -> Result<Vec<DatasetSplit>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: SplitsFile = serde_json::from_str(&text).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(map
        .into_iter()
        .map(|(kind, ids)| DatasetSplit::from_ids(kind, ids, tweets))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum ValidationIssue {
    DuplicateId { kind: String, id: String },
    EmptyId { kind: String, index: usize },
    NonPositiveTimestamp { tweet_id: String, created_at: i64 },
    SelfRetweet { tweet_id: String },
    DanglingUser { tweet_id: String, user_id: String },
    DanglingRetweet { tweet_id: String, retweet_of: String },
    TweetSchemaMismatch { tweet_id: String, expected: usize, found: usize },
    UserSchemaMismatch { user_id: String, expected: usize, found: usize },
    NonFiniteFeature { owner: String },
}

/// Sorted list of problems found in a corpus; the corpus is valid iff it is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_corpus(tweets: &[Tweet], users: &[UserProfile], schema: &FeatureSchema) -> ValidationReport {
    let mut issues = Vec::new();

    let mut user_ids = HashSet::new();
    for (i, u) in users.iter().enumerate() {
        if u.id.is_empty() {
            issues.push(ValidationIssue::EmptyId {
                kind: "user".into(),
                index: i,
            });
        } else if !user_ids.insert(u.id.as_str()) {
            issues.push(ValidationIssue::DuplicateId {
                kind: "user".into(),
                id: u.id.clone(),
            });
        }
        if u.user_features.len() != schema.n_user() {
            issues.push(ValidationIssue::UserSchemaMismatch {
                user_id: u.id.clone(),
                expected: schema.n_user(),
                found: u.user_features.len(),
            });
        }
        if !u.user_features.iter().all(|v| v.is_finite()) {
            issues.push(ValidationIssue::NonFiniteFeature { owner: u.id.clone() });
        }
    }

    let mut tweet_ids = HashSet::new();
    for (i, t) in tweets.iter().enumerate() {
        if t.id.is_empty() {
            issues.push(ValidationIssue::EmptyId {
                kind: "tweet".into(),
                index: i,
            });
        } else if !tweet_ids.insert(t.id.as_str()) {
            issues.push(ValidationIssue::DuplicateId {
                kind: "tweet".into(),
                id: t.id.clone(),
            });
        }
    }

    for t in tweets {
        if t.created_at <= 0 {
            issues.push(ValidationIssue::NonPositiveTimestamp {
                tweet_id: t.id.clone(),
                created_at: t.created_at,
            });
        }
        if !user_ids.contains(t.user_id.as_str()) {
            issues.push(ValidationIssue::DanglingUser {
                tweet_id: t.id.clone(),
                user_id: t.user_id.clone(),
            });
        }
        if let Some(parent) = &t.retweet_of {
            if parent == &t.id {
                issues.push(ValidationIssue::SelfRetweet { tweet_id: t.id.clone() });
            } else if !tweet_ids.contains(parent.as_str()) {
                issues.push(ValidationIssue::DanglingRetweet {
                    tweet_id: t.id.clone(),
                    retweet_of: parent.clone(),
                });
            }
        }
        if t.tweet_features.len() != schema.n_tweet() {
            issues.push(ValidationIssue::TweetSchemaMismatch {
                tweet_id: t.id.clone(),
                expected: schema.n_tweet(),
                found: t.tweet_features.len(),
            });
        }
        if !t.tweet_features.iter().all(|v| v.is_finite()) {
            issues.push(ValidationIssue::NonFiniteFeature { owner: t.id.clone() });
        }
    }

    issues.sort();
    ValidationReport { issues }
}

/// Reads one JSON object per line. Blank lines are skipped; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn tweet(id: &str, user: &str) -> Tweet {
        Tweet {
            id: id.into(),
            text: format!("text of {id}"),
            user_id: user.into(),
            created_at: 1_600_000_000,
            retweet_of: None,
            tweet_features: vec![1.0, 2.0, 0.5, 0.1],
            label: Label::Unlabelled,
        }
    }

    pub(crate) fn user(id: &str) -> UserProfile {
        UserProfile {
            id: id.into(),
            followers: 10,
            followees: 3,
            verified: false,
            tweet_count: 40,
            user_features: vec![10.0, 3.0, 0.0, 40.0],
        }
    }

    #[test]
    fn well_formed_corpus_is_valid() {
        let report = validate_corpus(&[tweet("t1", "u1")], &[user("u1")], &FeatureSchema::default());
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn missing_retweet_parent_is_one_issue() {
        let mut t = tweet("t1", "u1");
        t.retweet_of = Some("ghost".into());
        let report = validate_corpus(&[t], &[user("u1")], &FeatureSchema::default());
        assert_eq!(
            report.issues,
            vec![ValidationIssue::DanglingRetweet {
                tweet_id: "t1".into(),
                retweet_of: "ghost".into()
            }]
        );
    }

    #[test]
    fn five_tweets_two_users_one_bad_reference() {
        let users = vec![user("u1"), user("u2")];
        let mut tweets: Vec<Tweet> = (0..5)
            .map(|i| tweet(&format!("t{i}"), if i % 2 == 0 { "u1" } else { "u2" }))
            .collect();
        tweets[3].user_id = "u9".into();

        // Exhaustive scan: every (tweet, user-reference) pair checked against the user list.
        let expected = tweets
            .iter()
            .filter(|t| !users.iter().any(|u| u.id == t.user_id))
            .count();
        assert_eq!(expected, 1);

        let report = validate_corpus(&tweets, &users, &FeatureSchema::default());
        assert_eq!(report.issues.len(), expected);
        assert!(matches!(
            &report.issues[0],
            ValidationIssue::DanglingUser { tweet_id, user_id } if tweet_id == "t3" && user_id == "u9"
        ));
    }

    #[test]
    fn schema_mismatch_and_invalid_fields_are_reported() {
        let mut t = tweet("t1", "u1");
        t.tweet_features.pop();
        t.created_at = 0;
        t.retweet_of = Some("t1".into());
        let report = validate_corpus(&[t], &[user("u1")], &FeatureSchema::default());
        assert_eq!(report.issues.len(), 3, "{report:?}");
    }

    #[test]
    fn duplicate_feature_names_rejected() {
        let err = FeatureSchema::new(vec![FeatureDef::new("a", true)], vec![FeatureDef::new("a", false)]);
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn ingest_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tweets.jsonl");
        let good = serde_json::to_string(&tweet("t1", "u1")).unwrap();
        std::fs::write(&path, format!("{good}\n\n{{not json\n")).unwrap();
        match read_jsonl::<Tweet>(&path) {
            Err(Error::Ingest { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn missing_label_defaults_to_unlabelled() {
        let json = r#"{"id":"t","text":"x","user_id":"u","created_at":5,"tweet_features":[]}"#;
        let t: Tweet = serde_json::from_str(json).unwrap();
        assert_eq!(t.label, Label::Unlabelled);
        assert_eq!(t.retweet_of, None);
    }

    fn arb_label() -> impl Strategy<Value = Label> {
        prop_oneof![Just(Label::Fake), Just(Label::Genuine), Just(Label::Unlabelled)]
    }

    prop_compose! {
        fn arb_tweet()(id in "[a-z0-9]{1,8}", text in "\\PC{0,40}", user_id in "[a-z]{1,5}",
                       created_at in 1i64..2_000_000_000, rt in proptest::option::of("[a-z0-9]{1,8}"),
                       feats in proptest::collection::vec(-1e6f64..1e6, 0..6), label in arb_label()) -> Tweet {
            Tweet { id, text, user_id, created_at, retweet_of: rt, tweet_features: feats, label }
        }
    }

    prop_compose! {
        fn arb_user()(id in "[a-z]{1,5}", followers in any::<u64>(), followees in any::<u64>(), verified in any::<bool>(),
                      tweet_count in any::<u64>(), feats in proptest::collection::vec(-1e6f64..1e6, 0..6)) -> UserProfile {
            UserProfile { id, followers, followees, verified, tweet_count, user_features: feats }
        }
    }

    proptest! {
        #[test]
        fn tweet_and_user_round_trip(t in arb_tweet(), u in arb_user()) {
            let t2: Tweet = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
            prop_assert_eq!(t2, t);
            let u2: UserProfile = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
            prop_assert_eq!(u2, u);
        }

        #[test]
        fn validation_is_order_insensitive_and_idempotent(
            tweets in proptest::collection::vec(arb_tweet(), 0..8),
            users in proptest::collection::vec(arb_user(), 0..4),
        ) {
            let schema = FeatureSchema::default();
            let a = validate_corpus(&tweets, &users, &schema);
            let b = validate_corpus(&tweets, &users, &schema);
            prop_assert_eq!(&a, &b);
            // Reversal changes which duplicate is "second", so compare on duplicate-free inputs.
            let uniq_t: HashSet<_> = tweets.iter().map(|t| t.id.clone()).collect();
            let uniq_u: HashSet<_> = users.iter().map(|u| u.id.clone()).collect();
            if uniq_t.len() == tweets.len() && uniq_u.len() == users.len() {
                let mut rt = tweets.clone();
                rt.reverse();
                let mut ru = users.clone();
                ru.reverse();
                prop_assert_eq!(validate_corpus(&rt, &ru, &schema), a);
            }
        }
    }
}
