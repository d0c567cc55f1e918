//! Offline front end: log ingestion, corpus generation, replay, and the
//! performance benchmark.
//!
//! Everything here works on [`TimedQuery`](crate::sql::TimedQuery) lists —
//! statements with a timestamp and a connection id — so the same replay
//! path serves captured general query logs, plain statement files, and the
//! generated attack corpus alike.

pub mod bench;
pub mod gen;
pub mod logs;
pub mod replay;

pub use bench::{bench, render_bench, synthetic_queries, BenchReport, Stats};
pub use gen::{benign_twin, generate_attacks, AttackCase, AttackGenConfig, AttackStep};
pub use logs::{parse_general_log, parse_plain, LogParse};
pub use replay::{render_summary, replay, ReplayOptions, ReplayReport, VerdictTotals};

use crate::classifier::ClassifierError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
