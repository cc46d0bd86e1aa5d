//! Files, remote clients and the command line around `dualhead-core`.
//!
//! * [`io`]: line-delimited JSON and hashing.
//! * [`checkpoint`]: the binary checkpoint container.
//! * [`templates`]: prompt templates as plain-text files.
//! * [`config`]: the TOML run config, profiles and stage hashes.
//! * [`chat`]: the chat-completions client for remote teachers and judges.
//! * [`stages`]: the pipeline stages behind each subcommand.
//! * [`report`]: aggregate result tables.

pub mod chat;
pub mod checkpoint;
pub mod config;
pub mod desk;
pub mod io;
pub mod report;
pub mod stages;
pub mod templates;

pub use config::{BaselineMethod, Overrides, Resolved, Source, Stage, ThresholdChoice};
pub use stages::{Outcome, Pipeline};
