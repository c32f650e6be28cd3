//! The end-to-end fit and its two output documents.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{EstimationDataset, FilterReport};
use crate::domain::ItemId;
use crate::error::Result;
use crate::estimator::{modeled_scores, run_chains, DesignMatrix, ModelConfig, PosteriorDraws};
use crate::score::{smoothed_win_percentage, Tally};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub item_id: ItemId,
    pub modeled_score: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub simple_score: f64,
    pub wins: u64,
    pub losses: u64,
}

/// Per-item results, highest modeled score first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub converged: bool,
    pub seed: u64,
    pub interval_level: f64,
    pub items: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRhat {
    pub item_id: ItemId,
    pub rhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub votes: usize,
    pub sessions: usize,
    pub items: usize,
    pub visible_columns: usize,
    pub hidden_cells: usize,
    pub column_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub rhat_threshold: f64,
    pub max_rhat_mu: f64,
    pub max_rhat_theta_v: f64,
    pub theta_v_above_threshold: usize,
    pub monitored_parameters: usize,
    pub rhat_mu: Vec<ItemRhat>,
    pub chains: usize,
    pub kept_per_chain: usize,
    pub total_draws: usize,
    pub seed: u64,
    pub anchor_item: ItemId,
    pub config: ModelConfig,
    pub filter: FilterReport,
    pub design: DesignSummary,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub results: ResultsDocument,
    pub diagnostics: Diagnostics,
    pub draws: PosteriorDraws,
}

/// Builds the design, runs the chains and scores the items. `tallies`
/// supply the simple scores; items without a tally get 0 wins and losses.
pub fn fit(
    dataset: &EstimationDataset,
    filter: &FilterReport,
    tallies: &[Tally],
    config: &ModelConfig,
) -> Result<FitOutput> {
    let start = Instant::now();
    config.validate()?;
    let design = DesignMatrix::build(dataset)?;
    let draws = run_chains(&design, config)?;
    let scores = modeled_scores(&draws)?;
    let tally: BTreeMap<ItemId, &Tally> = tallies.iter().map(|t| (t.item_id, t)).collect();
    let mut items: Vec<ResultRow> = scores
        .into_iter()
        .map(|s| {
            let (wins, losses) = tally.get(&s.item_id).map_or((0, 0), |t| (t.wins, t.losses));
            ResultRow {
                item_id: s.item_id,
                modeled_score: s.score,
                ci_low: s.ci_low,
                ci_high: s.ci_high,
                simple_score: smoothed_win_percentage(wins, losses),
                wins,
                losses,
            }
        })
        .collect();
    items.sort_by(|a, b| b.modeled_score.total_cmp(&a.modeled_score).then(a.item_id.cmp(&b.item_id)));

    let conv = draws.convergence();
    let diagnostics = Diagnostics {
        converged: conv.converged,
        rhat_threshold: conv.threshold,
        max_rhat_mu: conv.max_rhat_mu,
        max_rhat_theta_v: conv.max_rhat_theta_v,
        theta_v_above_threshold: conv.theta_v_above_threshold,
        monitored_parameters: draws.item_ids().len() + draws.columns().len(),
        rhat_mu: draws
            .item_ids()
            .iter()
            .zip(&conv.rhat_mu)
            .map(|(&item_id, &rhat)| ItemRhat { item_id, rhat })
            .collect(),
        chains: draws.chain_count(),
        kept_per_chain: draws.kept_per_chain(),
        total_draws: draws.draw_count(),
        seed: config.seed,
        anchor_item: draws.anchor(),
        config: config.clone(),
        filter: filter.clone(),
        design: DesignSummary {
            votes: design.vote_count(),
            sessions: design.session_count(),
            items: design.item_count(),
            visible_columns: design.columns().len(),
            hidden_cells: design.hidden().len(),
            column_reduction: design.reduction(),
        },
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(FitOutput {
        results: ResultsDocument {
            converged: conv.converged,
            seed: config.seed,
            interval_level: crate::estimator::scores::INTERVAL_LEVEL,
            items,
        },
        diagnostics,
        draws,
    })
}
