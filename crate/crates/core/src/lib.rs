//! Storyline planning over knowledge graphs and reward-weighted story
//! generation.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`corpus`] and [`kgraph`] turn detections, annotated stories and
//!    triples into story elements, golden storylines and knowledge graphs.
//! 2. [`predictor`] walks a per-sequence [`kgraph::StoryGraph`] one hop at a
//!    time, picking relations with a learned scorer, to produce a storyline.
//! 3. [`generator`] writes one sentence per storyline event; [`trainer`]
//!    fits it with sentence- and story-level likelihood, weighting the story
//!    term by the frozen [`evaluator`]'s reward after a warm-up period.

pub mod autograd;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod generator;
pub mod io;
pub mod kgraph;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod synth;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
