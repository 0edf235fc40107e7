//! Extractive summarization toolkit built around chat-completion LLMs.
//!
//! The crate covers the full experiment loop: deterministic sentence
//! segmentation and tokenization ([`text`]), from-scratch ROUGE metrics
//! ([`rouge`]), greedy oracle label construction ([`oracle`]), the six
//! prompt schemas ([`prompt`]), a chat-completions client with caching,
//! retries and a deterministic mock ([`client`]), model-output parsing and
//! sentence alignment ([`align`]), experiment orchestration ([`pipeline`]),
//! aggregate statistics and figure data ([`analysis`]), and JSONL corpus
//! handling with seeded sampling ([`corpus`]).
//!
//! The `extsum` binary exposes everything as `oracle`, `summarize`,
//! `evaluate` and `analyze` subcommands; see [`cli`].

pub mod align;
pub mod analysis;
pub mod cli;
pub mod client;
pub mod corpus;
pub mod oracle;
pub mod pipeline;
pub mod prompt;
pub mod rouge;
pub mod text;

mod rng;
