//! Electric-bus route planning from urban sensing data: geographic indexing,
//! CSV ingestion, feature extraction, emission labeling, neural predictors,
//! route recommendation and a synthetic city generator.

pub mod cli;
pub mod emission;
pub mod error;
pub mod features;
pub mod geo;
pub mod ingest;
pub mod neural;
pub mod pipeline;
pub mod recommend;
pub mod synthcity;
