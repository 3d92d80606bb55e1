//! Fake-news detection from tweet text, retrieved evidence, a user/tweet graph
//! and tabular context features, trained semi-supervised.

pub mod checkpoint;
pub mod cli;
pub mod coattn;
pub mod config;
pub mod corpus;
pub mod datamodel;
pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod fusion;
pub mod gradcheck;
pub mod hetgraph;
pub mod knowledge;
pub mod math;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod synth;
pub mod textenc;
pub mod training;

pub use error::{Error, Result};
