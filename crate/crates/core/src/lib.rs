//! Synthetic megadoc corpora and packed training streams.
//!
//! The pipeline runs corpus ingestion, generation against a chat-completion
//! endpoint, megadoc assembly and two-stream packing. Alongside it sit the
//! analysis tools: local hyperparameter search, power-law fits, data
//! efficiency and ensemble loss.

pub mod analysis;
pub mod arena;
pub mod corpus;
pub mod genclient;
pub mod megadoc;
pub mod packer;
pub mod presets;
pub mod report;
pub mod rng;
pub mod search;
pub mod tokenizer;
