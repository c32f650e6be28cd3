//! Hierarchical probit model fit by Gibbs sampling with data augmentation.

pub mod chains;
pub mod design;
pub mod gibbs;
pub mod linalg;
pub mod rhat;
pub mod scores;

pub use chains::{run_chains, ChainDraws, Convergence, ItemPrior, ModelConfig, PosteriorDraws};
pub use design::{Cell, DesignMatrix, DesignRow};
pub use gibbs::{
    gibbs_step_mu, gibbs_step_theta_h, gibbs_step_z, hidden_item_sums, mu_conditional, MuPrior, VisibleConditional,
};
pub use rhat::rhat;
pub use scores::{modeled_scores, per_draw_scores, summarize_scores, ModeledScore};
