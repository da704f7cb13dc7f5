//! Candidate-pool diversification harness.
//!
//! `poolforge` generates pools of LLM outputs under six inference-time
//! generation methods and two instruction strategies, then measures each
//! pool's semantic diversity, quality proxies, rarefaction behavior and
//! full-pipeline token cost.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`model`]: cell coordinates, output records, pools, token usage
//! - [`manifest`]: the user-editable list of models and prompt conditions
//! - [`prompts`]: template rendering, the strat planning protocol
//! - [`backend`] and [`orchestrator`]: generation pipelines per cell
//! - [`geometry`]: embeddings, distance matrices, medoid, anchors
//! - [`diversity`]: pool diversity metrics, semantic regions, rarefaction
//! - [`quality`]: slogan boilerplate score, standardization, score files
//! - [`analysis`]: token accounting, contrasts, design averages, bootstrap
//! - [`config`], [`pipeline`] and [`cli`]: the staged operator surface
//!
//! Runnable walkthroughs of each capability live in the crate's
//! `examples/` directory.

pub mod analysis;
pub mod backend;
pub mod cli;
pub mod config;
pub mod diversity;
pub mod error;
pub mod geometry;
pub mod hashing;
pub mod manifest;
pub mod model;
pub mod orchestrator;
pub mod pipeline;
pub mod prompts;
pub mod quality;
pub mod stats;

pub use error::{Error, Result};
pub use model::{CellCoord, Family, Method, OutputRecord, Pool, Stage, Strategy, TokenUsage};
