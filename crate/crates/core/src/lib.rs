//! Bayesian graph convolutional networks for node classification, sampled
//! with parallel-tempered MCMC and Langevin-gradient proposals.

pub mod cli;
pub mod error;
pub mod graph_data;
pub mod model;
pub mod posterior;
pub mod proposals;
pub mod target;
pub mod tempering;

pub use error::{Error, Result};
pub use graph_data::{load_dataset, normalize, Dataset, NormalizedGraph, SparseMatrix};
pub use model::{param_count, Activation, Gcn, GcnPosterior, ParamVector, Topology};
pub use posterior::{gelman_rubin, pool, summarize, ChainStore, PosteriorSummary};
pub use proposals::{ProposalConfig, ProposalKind};
pub use target::{Evaluation, LogTarget, StreamRng};
pub use tempering::{build_ladder, coordinate, swap_log_prob, EnsembleRun, Ladder, RunConfig};
