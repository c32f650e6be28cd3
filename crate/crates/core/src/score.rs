//! The real-time score: the posterior-mean winning percentage under a uniform
//! prior, `(w + 1) / ((w + 1) + (l + 1)) * 100`.

use serde::{Deserialize, Serialize};

use crate::domain::{Item, ItemId};
use crate::error::{Error, Result};

/// Default reporting threshold on completed appearances.
pub const DEFAULT_MIN_APPEARANCES: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleScore {
    pub item_id: ItemId,
    pub score: f64,
    pub wins: u64,
    pub losses: u64,
    pub completed_appearances: u64,
}

pub fn simple_score(wins: i64, losses: i64) -> Result<f64> {
    if wins < 0 || losses < 0 {
        return Err(Error::NegativeTally { wins: wins as f64, losses: losses as f64 });
    }
    Ok(smoothed_win_percentage(wins as u64, losses as u64))
}

pub(crate) fn smoothed_win_percentage(wins: u64, losses: u64) -> f64 {
    let w = wins as f64 + 1.0;
    let l = losses as f64 + 1.0;
    w / (w + l) * 100.0
}

/// Per-item tallies from any source (live counters or an imported log).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub item_id: ItemId,
    pub wins: u64,
    pub losses: u64,
    pub completed_appearances: u64,
}

impl From<&Item> for Tally {
    fn from(item: &Item) -> Self {
        Self {
            item_id: item.id,
            wins: item.wins,
            losses: item.losses,
            completed_appearances: item.completed_appearances,
        }
    }
}

/// Scores items with at least `min_appearances` completed appearances,
/// highest score first and lower id first among equal scores.
pub fn rank_tallies(tallies: impl IntoIterator<Item = Tally>, min_appearances: u64) -> Vec<SimpleScore> {
    let mut scores: Vec<SimpleScore> = tallies
        .into_iter()
        .filter(|t| t.completed_appearances >= min_appearances)
        .map(|t| SimpleScore {
            item_id: t.item_id,
            score: smoothed_win_percentage(t.wins, t.losses),
            wins: t.wins,
            losses: t.losses,
            completed_appearances: t.completed_appearances,
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item_id.cmp(&b.item_id)));
    scores
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(id: u64, w: u64, l: u64) -> Tally {
        Tally { item_id: ItemId(id), wins: w, losses: l, completed_appearances: w + l }
    }

    #[test]
    fn formula_cases() {
        assert_eq!(simple_score(0, 0).unwrap(), 50.0);
        assert!((simple_score(3, 1).unwrap() - 200.0 / 3.0).abs() < 1e-9);
        for w in [1, 7, 1000] {
            assert!((simple_score(w, w).unwrap() - 50.0).abs() < 1e-9);
        }
        assert!((simple_score(5, 0).unwrap() - 600.0 / 7.0).abs() < 1e-9);
        assert!((simple_score(0, 5).unwrap() - 100.0 / 7.0).abs() < 1e-9);
        assert!(simple_score(-1, 0).is_err());
        assert!(simple_score(0, -2).is_err());
    }

    #[test]
    fn monotone_and_strictly_inside_bounds() {
        for w in 0..40 {
            for l in 0..40 {
                let s = simple_score(w, l).unwrap();
                assert!(s > 0.0 && s < 100.0);
                assert!(simple_score(w + 1, l).unwrap() > s);
                assert!(simple_score(w, l + 1).unwrap() < s);
            }
        }
    }

    #[test]
    fn approaches_raw_percentage() {
        let n = 10_000i64;
        for w in (0..=n).step_by(37) {
            let raw = w as f64 / n as f64 * 100.0;
            assert!((simple_score(w, n - w).unwrap() - raw).abs() < 0.5);
        }
    }

    #[test]
    fn ranking_order_threshold_and_ties() {
        let ranked = rank_tallies([t(1, 0, 5), t(2, 5, 0)], 0);
        assert_eq!(ranked[0].item_id, ItemId(2));
        assert!((ranked[0].score - 85.714_285_714_285_7).abs() < 1e-9);
        assert!((ranked[1].score - 14.285_714_285_714_3).abs() < 1e-9);

        assert!(rank_tallies([t(1, 3, 4), t(2, 10, 9)], 50).is_empty());

        let ranked = rank_tallies([t(9, 2, 2), t(4, 1, 1)], 0);
        assert_eq!(ranked.iter().map(|s| s.item_id.0).collect::<Vec<_>>(), vec![4, 9]);
    }
}
