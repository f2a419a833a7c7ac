//! Generation orchestration against an external chat-completion endpoint.

pub mod client;
pub mod mock;
pub mod pool;
pub mod prompts;

pub use client::{ChatBackend, FinishReason, HttpBackend, RetryPolicy};
pub use pool::{
    generate_pool, GenerateConfig, GenerationKey, GenerationKind, GenerationPool,
    GenerationReport, PoolManifest, SyntheticGeneration,
};
pub use prompts::{render_latent_prompt, render_rephrase_prompt, split_points};
