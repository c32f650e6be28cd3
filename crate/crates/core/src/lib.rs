//! Pairwise wiki surveys: prompt selection, vote intake and filtering, the
//! real-time score, and a hierarchical probit model of per-session appeals.

pub mod dataset;
pub mod domain;
pub mod error;
pub mod estimator;
pub mod normal;
pub mod prompt;
pub mod report;
pub mod score;
pub mod session;
pub mod sim;
pub mod stats;
pub mod store;
pub mod votes_csv;

pub use dataset::{build_estimation_dataset, filter_votes, DatasetVote, EstimationDataset, FilterReport};
pub use domain::*;
pub use error::{Error, Result};
pub use normal::{std_normal_cdf, std_normal_quantile};
pub use prompt::{compute_prompt_distribution, sample_prompt, PromptDistribution, PromptPolicyConfig};
pub use score::{rank_tallies, simple_score, SimpleScore, Tally, DEFAULT_MIN_APPEARANCES};
pub use session::SessionPolicyConfig;
pub use store::SurveyStore;
pub use votes_csv::{CsvRow, VoteLog};
