//! Modeled scores: the chance, times 100, that an item beats a randomly
//! chosen other item for a randomly chosen session.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chains::PosteriorDraws;
use crate::domain::{ItemId, OpinionMatrix};
use crate::error::{Error, Result};
use crate::normal::std_normal_cdf;
use crate::stats::quantile_sorted;

pub const INTERVAL_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeledScore {
    pub item_id: ItemId,
    pub score: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Scores of every item under one appeal matrix.
pub fn per_draw_scores(theta: &OpinionMatrix) -> Result<Vec<f64>> {
    let k = theta.items();
    let j = theta.sessions();
    if k < 2 {
        return Err(Error::TooFewItems);
    }
    if j == 0 {
        return Err(Error::InvalidDataset("no sessions".into()));
    }
    let mut wins = vec![0.0; k];
    for s in 0..j {
        let row = theta.row(s);
        for a in 0..k {
            for b in a + 1..k {
                let p = std_normal_cdf(row[a] - row[b]);
                wins[a] += p;
                wins[b] += 1.0 - p;
            }
        }
    }
    let denom = (j * (k - 1)) as f64;
    Ok(wins.into_iter().map(|w| w / denom * 100.0).collect())
}

/// Posterior mean and central interval of each item's score, given per-draw
/// scores laid out one `Vec` per draw.
pub fn summarize_scores(item_ids: &[ItemId], per_draw: &[Vec<f64>], level: f64) -> Result<Vec<ModeledScore>> {
    if per_draw.is_empty() {
        return Err(Error::InvalidInput("no draws".into()));
    }
    let tail = (1.0 - level) / 2.0;
    Ok(item_ids
        .iter()
        .enumerate()
        .map(|(k, &item_id)| {
            let mut xs: Vec<f64> = per_draw.iter().map(|d| d[k]).collect();
            let score = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.sort_by(f64::total_cmp);
            ModeledScore {
                item_id,
                score,
                ci_low: quantile_sorted(&xs, tail).min(score),
                ci_high: quantile_sorted(&xs, 1.0 - tail).max(score),
            }
        })
        .collect())
}

pub fn modeled_scores(draws: &PosteriorDraws) -> Result<Vec<ModeledScore>> {
    if draws.item_ids().len() < 2 {
        return Err(Error::TooFewItems);
    }
    let per_draw: Vec<Vec<f64>> = (0..draws.draw_count())
        .into_par_iter()
        .map(|d| per_draw_scores(&draws.opinion_matrix(d)))
        .collect::<Result<_>>()?;
    summarize_scores(draws.item_ids(), &per_draw, INTERVAL_LEVEL)
}
