//! The filtered vote set the estimator is fitted on.
//!
//! Starting from every valid vote and the items active at the end of voting,
//! items lacking a win or a loss are dropped, then every vote not between two
//! remaining items is dropped. Dropping votes can strip another item of its
//! only win or loss, so the two steps repeat until nothing changes. The result
//! is the largest item set in which every item has at least one win and one
//! loss against other members of the set.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::domain::{ItemId, ResponseId, Response, SessionId, Vote};
use crate::error::{Error, Result};

/// A vote reduced to what the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetVote {
    pub id: ResponseId,
    pub session: SessionId,
    pub left: ItemId,
    pub right: ItemId,
    pub left_won: bool,
}

impl DatasetVote {
    pub fn winner(&self) -> ItemId {
        if self.left_won {
            self.left
        } else {
            self.right
        }
    }

    pub fn loser(&self) -> ItemId {
        if self.left_won {
            self.right
        } else {
            self.left
        }
    }

    /// 1 when the left item won.
    pub fn outcome(&self) -> u8 {
        u8::from(self.left_won)
    }

    fn between(&self, items: &BTreeSet<ItemId>) -> bool {
        items.contains(&self.left) && items.contains(&self.right)
    }
}

impl From<&Vote> for DatasetVote {
    fn from(v: &Vote) -> Self {
        Self {
            id: v.id,
            session: v.session_id,
            left: v.left,
            right: v.right,
            left_won: v.winner == v.left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimationDataset {
    votes: Vec<DatasetVote>,
    items: Vec<ItemId>,
    sessions: Vec<SessionId>,
}

impl EstimationDataset {
    /// Checks the structural invariants: distinct items per vote, every vote's
    /// items and session listed, and every listed session and item used.
    ///
    /// The win/loss condition is not checked here (see
    /// [`EstimationDataset::check_win_loss`]), so hand-built examples such as
    /// a short vote log can still be turned into design matrices.
    pub fn new(
        votes: Vec<DatasetVote>,
        items: Vec<ItemId>,
        sessions: Vec<SessionId>,
    ) -> Result<Self> {
        let item_set: BTreeSet<ItemId> = items.iter().copied().collect();
        let session_set: BTreeSet<SessionId> = sessions.iter().copied().collect();
        if item_set.len() != items.len() || session_set.len() != sessions.len() {
            return Err(Error::InvalidDataset("duplicate item or session ids".into()));
        }
        let mut used_items = BTreeSet::new();
        let mut used_sessions = BTreeSet::new();
        let mut ids = HashSet::new();
        for v in &votes {
            if v.left == v.right {
                return Err(Error::InvalidDataset(format!("vote {} compares an item with itself", v.id)));
            }
            if !v.between(&item_set) {
                return Err(Error::InvalidDataset(format!("vote {} references an excluded item", v.id)));
            }
            if !session_set.contains(&v.session) {
                return Err(Error::InvalidDataset(format!("vote {} references an excluded session", v.id)));
            }
            if !ids.insert(v.id) {
                return Err(Error::InvalidDataset(format!("duplicate vote id {}", v.id)));
            }
            used_items.insert(v.left);
            used_items.insert(v.right);
            used_sessions.insert(v.session);
        }
        if used_items != item_set {
            return Err(Error::InvalidDataset("an item has no votes".into()));
        }
        if used_sessions != session_set {
            return Err(Error::InvalidDataset("a session cast no votes".into()));
        }
        let mut items = items;
        items.sort_unstable();
        let mut sessions = sessions;
        sessions.sort_unstable();
        Ok(Self { votes, items, sessions })
    }

    /// Derives items and sessions from the votes themselves.
    pub fn from_votes(votes: Vec<DatasetVote>) -> Result<Self> {
        let items: BTreeSet<ItemId> = votes.iter().flat_map(|v| [v.left, v.right]).collect();
        let sessions: BTreeSet<SessionId> = votes.iter().map(|v| v.session).collect();
        Self::new(votes, items.into_iter().collect(), sessions.into_iter().collect())
    }

    pub fn votes(&self) -> &[DatasetVote] {
        &self.votes
    }

    /// Items in ascending id order; position is the column index k.
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    /// Sessions in ascending id order; position is the row index j.
    pub fn sessions(&self) -> &[SessionId] {
        &self.sessions
    }

    pub fn vote_count(&self) -> usize {
        self.votes.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn item_index(&self, item: ItemId) -> Option<usize> {
        self.items.binary_search(&item).ok()
    }

    pub fn session_index(&self, session: SessionId) -> Option<usize> {
        self.sessions.binary_search(&session).ok()
    }

    /// Items lacking a win or a loss within the dataset's votes.
    pub fn items_missing_win_or_loss(&self) -> Vec<ItemId> {
        let tallies = tally(&self.votes);
        self.items
            .iter()
            .copied()
            .filter(|i| tallies.get(i).is_none_or(|(w, l)| *w == 0 || *l == 0))
            .collect()
    }

    pub fn check_win_loss(&self) -> Result<()> {
        let missing = self.items_missing_win_or_loss();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidDataset(format!("items without both a win and a loss: {missing:?}")))
        }
    }
}

/// Stage counts of one filtering run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub raw_votes: usize,
    pub valid_votes: usize,
    pub active_items: usize,
    /// Items kept after the first win/loss screening.
    pub proposed_items: usize,
    /// Votes kept after the first drop of votes outside the proposed items.
    pub proposed_votes: usize,
    /// Number of item-screening passes until the fixed point.
    pub rounds: usize,
    pub final_votes: usize,
    pub final_items: usize,
    pub final_sessions: usize,
    /// Active items that did not make it into the estimation set.
    pub dropped_items: Vec<ItemId>,
}

fn tally(votes: &[DatasetVote]) -> BTreeMap<ItemId, (u64, u64)> {
    let mut t: BTreeMap<ItemId, (u64, u64)> = BTreeMap::new();
    for v in votes {
        t.entry(v.winner()).or_default().0 += 1;
        t.entry(v.loser()).or_default().1 += 1;
    }
    t
}

/// Filters valid votes down to an estimation dataset.
///
/// `votes` must already exclude invalid votes; `active` is the set of items
/// active at the end of voting.
pub fn filter_votes(
    votes: Vec<DatasetVote>,
    active: &BTreeSet<ItemId>,
) -> Result<(EstimationDataset, FilterReport)> {
    let mut report = FilterReport {
        raw_votes: votes.len(),
        valid_votes: votes.len(),
        active_items: active.len(),
        ..FilterReport::default()
    };
    let mut votes = votes;
    let mut items = active.clone();
    loop {
        let tallies = tally(&votes);
        let kept: BTreeSet<ItemId> = items
            .iter()
            .copied()
            .filter(|i| tallies.get(i).is_some_and(|(w, l)| *w > 0 && *l > 0))
            .collect();
        report.rounds += 1;
        let items_changed = kept.len() != items.len();
        items = kept;
        let before = votes.len();
        votes.retain(|v| v.between(&items));
        if report.rounds == 1 {
            report.proposed_items = items.len();
            report.proposed_votes = votes.len();
        }
        if !items_changed && votes.len() == before {
            break;
        }
    }
    report.dropped_items = active.difference(&items).copied().collect();
    if votes.is_empty() {
        return Err(Error::InsufficientData { dropped_items: report.dropped_items });
    }
    let sessions: BTreeSet<SessionId> = votes.iter().map(|v| v.session).collect();
    let dataset = EstimationDataset::new(votes, items.into_iter().collect(), sessions.into_iter().collect())?;
    report.final_votes = dataset.vote_count();
    report.final_items = dataset.item_count();
    report.final_sessions = dataset.session_count();
    Ok((dataset, report))
}

/// Runs the full pipeline from a raw response log: invalid votes and skips are
/// excluded before [`filter_votes`].
pub fn build_estimation_dataset<'a>(
    responses: impl IntoIterator<Item = &'a Response>,
    active: &BTreeSet<ItemId>,
) -> Result<(EstimationDataset, FilterReport)> {
    let mut raw = 0;
    let valid: Vec<DatasetVote> = responses
        .into_iter()
        .filter_map(Response::as_vote)
        .inspect(|_| raw += 1)
        .filter(|v| v.valid)
        .map(DatasetVote::from)
        .collect();
    let valid_count = valid.len();
    let (dataset, mut report) = filter_votes(valid, active)?;
    report.raw_votes = raw;
    report.valid_votes = valid_count;
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(id: u64, session: u64, left: u64, right: u64, left_won: bool) -> DatasetVote {
        DatasetVote {
            id: ResponseId(id),
            session: SessionId(session),
            left: ItemId(left),
            right: ItemId(right),
            left_won,
        }
    }

    fn items(ids: &[u64]) -> BTreeSet<ItemId> {
        ids.iter().map(|i| ItemId(*i)).collect()
    }

    #[test]
    fn two_items_kept() {
        let votes = vec![v(1, 1, 1, 2, true), v(2, 1, 1, 2, false)];
        let (d, _) = filter_votes(votes, &items(&[1, 2])).unwrap();
        assert_eq!(d.items(), &[ItemId(1), ItemId(2)]);
        assert_eq!(d.vote_count(), 2);
    }

    #[test]
    fn item_without_win_is_dropped() {
        // A>B, B>A, A>C with A=1, B=2, C=3
        let votes = vec![v(1, 1, 1, 2, true), v(2, 1, 2, 1, true), v(3, 2, 1, 3, true)];
        let (d, report) = filter_votes(votes, &items(&[1, 2, 3])).unwrap();
        assert_eq!(d.items(), &[ItemId(1), ItemId(2)]);
        assert_eq!(d.vote_count(), 2);
        assert_eq!(d.sessions(), &[SessionId(1)]);
        assert_eq!(report.dropped_items, vec![ItemId(3)]);
    }

    #[test]
    fn cascading_drop_reaches_fixed_point() {
        // 3 only wins against 4 and 4 has no win at all; once 4 and its votes
        // go, 3 has no win left and must go too.
        let votes = vec![
            v(1, 1, 1, 2, true),
            v(2, 1, 1, 2, false),
            v(3, 1, 3, 4, true),
            v(4, 1, 1, 3, true),
        ];
        let (d, report) = filter_votes(votes, &items(&[1, 2, 3, 4])).unwrap();
        assert_eq!(d.items(), &[ItemId(1), ItemId(2)]);
        assert!(report.rounds >= 2);
    }

    #[test]
    fn inactive_items_are_excluded() {
        let votes = vec![v(1, 1, 1, 2, true), v(2, 1, 1, 2, false), v(3, 1, 1, 5, false)];
        let (d, _) = filter_votes(votes, &items(&[1, 2])).unwrap();
        assert_eq!(d.vote_count(), 2);
    }

    #[test]
    fn empty_result_is_an_error() {
        let votes = vec![v(1, 1, 1, 2, true)];
        match filter_votes(votes, &items(&[1, 2])) {
            Err(Error::InsufficientData { dropped_items }) => {
                assert_eq!(dropped_items, vec![ItemId(1), ItemId(2)])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_validation() {
        assert!(EstimationDataset::new(vec![v(1, 1, 1, 1, true)], vec![ItemId(1)], vec![SessionId(1)]).is_err());
        assert!(EstimationDataset::new(vec![v(1, 1, 1, 2, true)], vec![ItemId(1)], vec![SessionId(1)]).is_err());
        assert!(EstimationDataset::new(vec![v(1, 1, 1, 2, true)], vec![ItemId(1), ItemId(2)], vec![SessionId(1), SessionId(2)]).is_err());
        let d = EstimationDataset::from_votes(vec![v(1, 1, 1, 2, true)]).unwrap();
        assert_eq!(d.items_missing_win_or_loss(), vec![ItemId(1), ItemId(2)]);
    }

    /// Brute force: the largest subset of active items in which every member
    /// has a win and a loss against other members. The union of two such sets
    /// is again such a set, so the largest one is unique.
    fn brute_force(votes: &[DatasetVote], active: &[ItemId]) -> BTreeSet<ItemId> {
        let mut best = BTreeSet::new();
        for mask in 0u32..(1 << active.len()) {
            let set: BTreeSet<ItemId> =
                active.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, x)| *x).collect();
            let ok = set.iter().all(|item| {
                let within = votes.iter().filter(|v| set.contains(&v.left) && set.contains(&v.right));
                let (mut w, mut l) = (false, false);
                for x in within {
                    w |= x.winner() == *item;
                    l |= x.loser() == *item;
                }
                w && l
            });
            if ok && set.len() > best.len() {
                best = set;
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn matches_brute_force_and_is_idempotent(
            n_items in 2u64..=8,
            n_inactive in 0u64..3,
            raw in proptest::collection::vec((0u64..8, 0u64..8, 0u64..4, any::<bool>()), 0..50),
        ) {
            let votes: Vec<DatasetVote> = raw
                .iter()
                .enumerate()
                .filter(|(_, (a, b, _, _))| a % n_items != b % n_items)
                .map(|(i, (a, b, s, w))| v(i as u64, *s, a % n_items, b % n_items, *w))
                .collect();
            let active: Vec<ItemId> = (n_inactive.min(n_items)..n_items).map(ItemId).collect();
            let expected = brute_force(&votes, &active);
            let active_set: BTreeSet<ItemId> = active.iter().copied().collect();
            match filter_votes(votes.clone(), &active_set) {
                Ok((d, _)) => {
                    let got: BTreeSet<ItemId> = d.items().iter().copied().collect();
                    prop_assert_eq!(&got, &expected);
                    prop_assert!(d.items_missing_win_or_loss().is_empty());
                    let again = filter_votes(d.votes().to_vec(), &got).unwrap().0;
                    prop_assert_eq!(again, d);
                }
                Err(Error::InsufficientData { .. }) => prop_assert!(expected.is_empty()),
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }
    }
}
