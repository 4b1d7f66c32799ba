//! Corpus replay and scoring.

mod corpus;
mod replay;
mod report;
mod score;

pub use corpus::{Corpus, CorpusEntry, CorpusError};
pub use replay::{log_to_string, parse_log, replay, replay_stream, ReplayConfig, ReplayMode, StreamReplay};
pub use report::{percentile, ConfusionReport, Counts, LatencyReport, Summary};
pub use score::{score, MismatchedCorpus, MATCH_TOLERANCE_S};
