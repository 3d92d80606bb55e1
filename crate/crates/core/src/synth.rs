//! Seeded synthetic corpora for tests, demos and smoke runs.
//!
//! Fake tweets carry a planted word in their text and their evidence adds
//! "debunked"; genuine tweets carry a different word and evidence adding
//! "confirmed". Contextual features are label-independent noise.

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{Stance, VerifiedClaim};
use crate::datamodel::{write_jsonl, Label, Tweet, UserProfile};
use crate::error::{Error, Result};
use crate::knowledge::EvidenceRecord;
use crate::math::seeded_rng;

pub const BASE_TIME: i64 = 1_600_000_000;

const TOPICS: [&str; 8] = [
    "vaccine shipment",
    "bridge collapse",
    "election ballots",
    "flood warning",
    "celebrity arrest",
    "bank closure",
    "school lockdown",
    "power outage",
];

const FILLER: [&str; 24] = [
    "city", "today", "people", "reports", "video", "share", "breaking", "news", "morning", "police", "river", "market",
    "council", "road", "night", "crowd", "photo", "update", "local", "street", "north", "south", "week", "station",
];

const FAKE_WORDS: [&str; 3] = ["hoax", "fabricated", "staged"];
const GENUINE_WORDS: [&str; 3] = ["official", "announced", "statement"];

#[derive(Debug, Clone, Copy)]
pub struct SynthParams {
    pub n_tweets: usize,
    pub n_users: usize,
    /// Share of tweets that keep their label; the rest are unlabelled.
    pub labelled_fraction: f64,
    pub seed: u64,
    /// Seconds between consecutive tweets.
    pub spacing: i64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_tweets: 40,
            n_users: 10,
            labelled_fraction: 1.0,
            seed: 1,
            spacing: 600,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub tweets: Vec<Tweet>,
    pub users: Vec<UserProfile>,
    pub follows: Vec<(String, String)>,
    pub claims: Vec<VerifiedClaim>,
    pub evidence: Vec<EvidenceRecord>,
}

/// Alternating fake / genuine tweets (fake at even indices).
pub fn generate(p: &SynthParams) -> SyntheticCorpus {
    let mut rng = seeded_rng(&[p.seed, 0x5717]);
    let n_users = p.n_users.max(1);
    let users: Vec<UserProfile> = (0..n_users)
        .map(|u| {
            let followers = rng.random_range(0..5000u64);
            let followees = rng.random_range(0..2000u64);
            let verified = rng.random_bool(0.2);
            let tweet_count = rng.random_range(1..10_000u64);
            UserProfile {
                id: format!("u{u:03}"),
                followers,
                followees,
                verified,
                tweet_count,
                user_features: vec![
                    followers as f64,
                    followees as f64,
                    f64::from(u8::from(verified)),
                    tweet_count as f64,
                ],
            }
        })
        .collect();

    let mut follows = Vec::new();
    for u in 0..n_users {
        for _ in 0..2 {
            let v = rng.random_range(0..n_users);
            if v != u {
                follows.push((users[u].id.clone(), users[v].id.clone()));
            }
        }
    }

    let mut tweets = Vec::with_capacity(p.n_tweets);
    let mut evidence = Vec::new();
    for i in 0..p.n_tweets {
        let fake = i % 2 == 0;
        let topic = TOPICS[(i / 2) % TOPICS.len()];
        let marker = *if fake { &FAKE_WORDS } else { &GENUINE_WORDS }.choose(&mut rng).unwrap();
        let fill: Vec<&str> = (0..3).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
        let text = format!("{topic} {} {marker} {}", fill[..2].join(" "), fill[2]);
        let id = format!("t{i:04}");
        let created_at = BASE_TIME + i as i64 * p.spacing;
        let label = if rng.random_bool(p.labelled_fraction.clamp(0.0, 1.0)) {
            if fake {
                Label::Fake
            } else {
                Label::Genuine
            }
        } else {
            Label::Unlabelled
        };
        let retweet_of = (i >= 2 && i % 5 == 0).then(|| format!("t{:04}", i - 2));
        tweets.push(Tweet {
            id: id.clone(),
            text: text.clone(),
            user_id: users[i % n_users].id.clone(),
            created_at,
            retweet_of,
            tweet_features: vec![
                rng.random_range(0.0..500.0),
                rng.random_range(0.0..200.0),
                rng.random_range(0.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
            label,
        });

        let verdict = if fake { "debunked" } else { "confirmed" };
        let noise: Vec<&str> = (0..5).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
        evidence.push(EvidenceRecord {
            tweet_id: id.clone(),
            url: format!("https://news{}.example/{id}", i % 3),
            domain: format!("news{}.example", i % 3),
            publish_time: created_at - 3600,
            sentences: Some(vec![format!("{text} {verdict}"), noise.join(" ")]),
            text: None,
        });
        evidence.push(EvidenceRecord {
            tweet_id: id.clone(),
            url: format!("https://later.example/{id}"),
            domain: "later.example".into(),
            publish_time: created_at + 7200,
            sentences: Some(vec![format!("{text} {verdict} later")]),
            text: None,
        });
    }

    let claims = TOPICS
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            [
                VerifiedClaim {
                    id: format!("c{i}f"),
                    text: format!("{t} hoax fabricated staged"),
                    stance: Stance::FalseClaim,
                    source: "factcheck.example".into(),
                },
                VerifiedClaim {
                    id: format!("c{i}t"),
                    text: format!("{t} official announced statement"),
                    stance: Stance::TrueClaim,
                    source: "factcheck.example".into(),
                },
            ]
        })
        .collect();

    SyntheticCorpus {
        tweets,
        users,
        follows,
        claims,
        evidence,
    }
}

impl SyntheticCorpus {
    /// Writes `tweets.jsonl`, `users.jsonl`, `follows.tsv`, `claims.jsonl` and
    /// `evidence_store.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<PathBuf> = ["tweets.jsonl", "users.jsonl", "follows.tsv", "claims.jsonl", "evidence_store.jsonl"]
            .iter()
            .map(|f| dir.join(f))
            .collect();
        write_jsonl(&paths[0], &self.tweets)?;
        write_jsonl(&paths[1], &self.users)?;
        let follows: String = self.follows.iter().map(|(a, b)| format!("{a}\t{b}\tfollow\n")).collect();
        std::fs::write(&paths[2], follows).map_err(|e| Error::io(&paths[2], e))?;
        write_jsonl(&paths[3], &self.claims)?;
        write_jsonl(&paths[4], &self.evidence)?;
        Ok(paths)
    }
}
