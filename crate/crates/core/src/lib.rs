//! Dual-stage visual token compression for vision-language models.
//!
//! The vision side keeps the `k1` tokens that receive the most self-attention
//! verbatim and folds the rest into `k2` contextual tokens, each the mean of a
//! small attention-ranked neighbourhood of width `w`. Residual tokens that no
//! cluster claims are dropped before the language backbone. The language side
//! re-ranks the surviving visual tokens at configured layer boundaries using
//! cross-attention from a salient subset of text tokens, and drops the tail.
//!
//! This crate is `#![no_std]` (it needs `alloc`). Everything here is pure and
//! deterministic; file IO, the CLI and parallel sweeps live in the `duet`
//! companion crate.

#![no_std]

extern crate alloc;

pub mod budget;
pub mod error;
pub mod matrix;
pub mod prune;
pub mod sim;
pub mod tensor;
pub mod topk;
pub mod vision;

pub use budget::{average_tokens, budget_report, flop_proxy, plan_entry_tokens, BudgetReport};
pub use error::{Error, ErrorKind, FormatError};
pub use matrix::{AttentionMap, Matrix, ScoreVector};
pub use prune::{
    drop_stage, retained_count, run_prune, select_salient, t2v_scores, DropSchedule, PruneTrace,
    SalientSelector, ScheduleKind, StageState,
};
pub use tensor::{Archive, DType, ReadOptions, Tensor, TensorData};
pub use topk::top_k;
pub use vision::{
    attention_scores, cluster_neighbors, compress_vision, merge_cluster, ClusterMode,
    CompressionConfig, CompressionResult,
};
