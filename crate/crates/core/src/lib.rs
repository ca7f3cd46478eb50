//! Stochastic process discovery with stochastic process trees.
//!
//! The crate covers the full pipeline: event-log parsing, inductive-miner
//! discovery of a process tree, probability annotation, the stochastic
//! language of a stochastic process tree (exact under truncation, and by
//! simulation), translation to stochastic workflow nets, Earth Mover's
//! Distance conformance between stochastic languages, and derivative-free
//! fitting of the tree parameters against a log.

pub mod distance;
pub mod fixtures;
pub mod lang;
pub mod miner;
pub mod optimize;
pub mod petrinet;
pub mod prob;
pub mod semantics;
pub mod tree;

pub use lang::{Activity, EventLog, LogFormat, StochasticLanguage, Trace};
pub use prob::{Prob, EPS_NORM};
pub use semantics::TruncationConfig;
pub use tree::{InitPolicy, ParamCounts, PlainTree, SptNode};
