//! Outcome vector and reduced design matrix.
//!
//! The full design matrix has one column per (session, item) cell, with +1 in
//! the left item's cell and -1 in the right item's cell of the voting
//! session. Most cells never appear in a vote, so only the columns of cells
//! seen by their session are built. Those columns are the vote-informed
//! appeals; the remaining cells are informed only through the item means.
//!
//! Columns are ordered by session, then by item, so each session owns one
//! contiguous column block and no row touches two blocks.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataset::EstimationDataset;
use crate::domain::{ItemId, SessionId};
use crate::error::{Error, Result};

/// A (session row, item column) position in the opinion matrix, both as
/// dataset indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub session: usize,
    pub item: usize,
}

/// One row of the reduced design matrix: +1 at `plus`, -1 at `minus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRow {
    pub plus: usize,
    pub minus: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    item_ids: Vec<ItemId>,
    session_ids: Vec<SessionId>,
    outcomes: Vec<u8>,
    rows: Vec<DesignRow>,
    columns: Vec<Cell>,
    hidden: Vec<Cell>,
    blocks: Vec<Range<usize>>,
}

impl DesignMatrix {
    pub fn build(dataset: &EstimationDataset) -> Result<Self> {
        // Re-run the structural checks so a hand-assembled dataset cannot
        // smuggle in an inconsistent vote.
        let dataset = EstimationDataset::new(
            dataset.votes().to_vec(),
            dataset.items().to_vec(),
            dataset.sessions().to_vec(),
        )?;
        let sessions = dataset.session_count();
        let items = dataset.item_count();
        let mut seen: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); sessions];
        let mut indexed = Vec::with_capacity(dataset.vote_count());
        for v in dataset.votes() {
            let j = dataset.session_index(v.session).expect("validated");
            let l = dataset.item_index(v.left).expect("validated");
            let r = dataset.item_index(v.right).expect("validated");
            seen[j].insert(l);
            seen[j].insert(r);
            indexed.push((j, l, r, v.outcome()));
        }

        let mut columns = Vec::new();
        let mut hidden = Vec::new();
        let mut blocks = Vec::with_capacity(sessions);
        // column position of each (session, item), usize::MAX if hidden
        let mut position = vec![usize::MAX; sessions * items];
        for (j, seen_j) in seen.iter().enumerate() {
            let start = columns.len();
            for k in 0..items {
                if seen_j.contains(&k) {
                    position[j * items + k] = columns.len();
                    columns.push(Cell { session: j, item: k });
                } else {
                    hidden.push(Cell { session: j, item: k });
                }
            }
            if columns.len() == start {
                return Err(Error::InvalidDataset(format!("session index {j} has no votes")));
            }
            blocks.push(start..columns.len());
        }

        let mut rows = Vec::with_capacity(indexed.len());
        let mut outcomes = Vec::with_capacity(indexed.len());
        for (j, l, r, y) in indexed {
            rows.push(DesignRow { plus: position[j * items + l], minus: position[j * items + r] });
            outcomes.push(y);
        }

        Ok(Self {
            item_ids: dataset.items().to_vec(),
            session_ids: dataset.sessions().to_vec(),
            outcomes,
            rows,
            columns,
            hidden,
            blocks,
        })
    }

    pub fn item_ids(&self) -> &[ItemId] {
        &self.item_ids
    }

    pub fn session_ids(&self) -> &[SessionId] {
        &self.session_ids
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn session_count(&self) -> usize {
        self.session_ids.len()
    }

    pub fn vote_count(&self) -> usize {
        self.rows.len()
    }

    /// The outcome vector: 1 when the left item won.
    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn rows(&self) -> &[DesignRow] {
        &self.rows
    }

    /// Cells of the vote-informed appeals, in column order.
    pub fn columns(&self) -> &[Cell] {
        &self.columns
    }

    /// Cells informed only through the item means.
    pub fn hidden(&self) -> &[Cell] {
        &self.hidden
    }

    /// Column range owned by each session.
    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// Fraction of full-matrix columns removed by the reduction.
    pub fn reduction(&self) -> f64 {
        let full = self.session_count() * self.item_count();
        1.0 - self.columns.len() as f64 / full as f64
    }

    /// Dense copy of the reduced matrix, one `Vec` per vote.
    pub fn to_dense(&self) -> Vec<Vec<i8>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0i8; self.columns.len()];
                dense[row.plus] = 1;
                dense[row.minus] = -1;
                dense
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetVote;
    use crate::domain::ResponseId;

    fn v(id: u64, session: u64, left: u64, right: u64, left_won: bool) -> DatasetVote {
        DatasetVote {
            id: ResponseId(id),
            session: SessionId(session),
            left: ItemId(left),
            right: ItemId(right),
            left_won,
        }
    }

    #[test]
    fn single_vote() {
        let d = EstimationDataset::from_votes(vec![v(1, 1, 1, 2, true)]).unwrap();
        let x = DesignMatrix::build(&d).unwrap();
        assert_eq!(x.to_dense(), vec![vec![1, -1]]);
        assert_eq!(x.outcomes(), &[1]);
        assert!(x.hidden().is_empty());
    }

    #[test]
    fn column_count_is_distinct_items_per_session() {
        let votes = vec![
            v(1, 1, 1, 2, true),
            v(2, 1, 2, 3, false),
            v(3, 1, 1, 2, false),
            v(4, 2, 4, 1, true),
            v(5, 3, 2, 4, true),
            v(6, 3, 4, 3, true),
        ];
        let d = EstimationDataset::from_votes(votes).unwrap();
        let x = DesignMatrix::build(&d).unwrap();
        assert_eq!(x.columns().len(), 3 + 2 + 3);
        assert_eq!(x.hidden().len(), 3 * 4 - 8);
        for (row, dense) in x.rows().iter().zip(x.to_dense()) {
            assert_eq!(dense.iter().filter(|e| **e == 1).count(), 1);
            assert_eq!(dense.iter().filter(|e| **e == -1).count(), 1);
            assert_eq!(x.columns()[row.plus].session, x.columns()[row.minus].session);
        }
        assert!((x.reduction() - (1.0 - 8.0 / 12.0)).abs() < 1e-12);
    }
}
