//! Hierarchical leader/follower reasoning engine for math problem solving.
//!
//! A pluggable chat-completion model is framed as a two-tier policy: a
//! *leader* proposes high-level tactic hints (by prompting or by retrieving
//! similar solved problems), a *follower* samples groups of reasoning chains
//! under each hint, and a *tournament* of pairwise model comparisons selects
//! the final chain. The crate also ships the scoring suite (grouped-majority
//! recall, accuracy, recall curves, exploration-gain calculator), a
//! tree-of-thoughts baseline, and the evaluation harness (dataset ingestion,
//! caching, persistence, reports).

pub mod answers;
pub mod follower;
pub mod gateway;
pub mod harness;
pub mod leader;
pub mod metrics;
pub mod rng;
pub mod selection;
pub mod tot;

pub use answers::{extract_boxed, majority_vote, normalize, ExtractedAnswer, VoteTally};
pub use follower::{ReasoningChain, ReasoningGroup};
pub use gateway::{
    ChatBackend, ChatClient, ChatRequest, ChatResponse, Embedder, GatewayError, HashingEmbedder,
    ScriptedBackend, Stage, Usage, UsageLedger,
};
pub use harness::{Question, RunConfig, RunRecord};
pub use leader::{Exemplar, Hint, HintKind, RetrievalIndex};
pub use selection::{ComparatorVerdict, FinalSelection, Judge, Preference};
