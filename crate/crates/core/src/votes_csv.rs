//! Vote log CSV: one row per response, votes and skips alike.
//!
//! ```text
//! vote_id,session_id,left_item_id,right_item_id,winner_item_id,outcome_y,response_type,valid,cast_at_iso8601
//! ```
//!
//! `winner_item_id` and `outcome_y` are empty for skips.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, DatasetVote, EstimationDataset, FilterReport};
use crate::domain::{ItemId, ResponseId, Response, SessionId};
use crate::error::{Error, Result};
use crate::score::Tally;

pub const HEADER: [&str; 9] = [
    "vote_id",
    "session_id",
    "left_item_id",
    "right_item_id",
    "winner_item_id",
    "outcome_y",
    "response_type",
    "valid",
    "cast_at_iso8601",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    Vote,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvRow {
    pub vote_id: u64,
    pub session_id: u64,
    pub left_item_id: u64,
    pub right_item_id: u64,
    pub winner_item_id: Option<u64>,
    pub outcome_y: Option<u8>,
    pub response_type: ResponseType,
    pub valid: bool,
    pub cast_at_iso8601: String,
}

impl CsvRow {
    pub fn from_response(r: &Response) -> Self {
        match r {
            Response::Vote(v) => Self {
                vote_id: v.id.0,
                session_id: v.session_id.0,
                left_item_id: v.left.0,
                right_item_id: v.right.0,
                winner_item_id: Some(v.winner.0),
                outcome_y: Some(v.outcome()),
                response_type: ResponseType::Vote,
                valid: v.valid,
                cast_at_iso8601: format_time(v.cast_at),
            },
            Response::Skip(s) => Self {
                vote_id: s.id.0,
                session_id: s.session_id.0,
                left_item_id: s.left.0,
                right_item_id: s.right.0,
                winner_item_id: None,
                outcome_y: None,
                response_type: ResponseType::Skip,
                valid: s.valid,
                cast_at_iso8601: format_time(s.cast_at),
            },
        }
    }

    fn check(&self, line: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::Csv(format!("row {line}: {msg}")));
        if self.left_item_id == self.right_item_id {
            return bad("left and right items are the same");
        }
        DateTime::parse_from_rfc3339(&self.cast_at_iso8601)
            .map_err(|e| Error::Csv(format!("row {line}: bad timestamp: {e}")))?;
        match self.response_type {
            ResponseType::Skip => {
                if self.winner_item_id.is_some() || self.outcome_y.is_some() {
                    return bad("skip rows carry no winner or outcome");
                }
            }
            ResponseType::Vote => {
                let (Some(w), Some(y)) = (self.winner_item_id, self.outcome_y) else {
                    return bad("vote rows need a winner and an outcome");
                };
                let expected = match y {
                    1 => self.left_item_id,
                    0 => self.right_item_id,
                    _ => return bad("outcome_y must be 0 or 1"),
                };
                if w != expected {
                    return bad("winner does not match outcome_y");
                }
            }
        }
        Ok(())
    }

    pub fn dataset_vote(&self) -> Option<DatasetVote> {
        (self.response_type == ResponseType::Vote).then(|| DatasetVote {
            id: ResponseId(self.vote_id),
            session: SessionId(self.session_id),
            left: ItemId(self.left_item_id),
            right: ItemId(self.right_item_id),
            left_won: self.outcome_y == Some(1),
        })
    }
}

fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn write_rows<'a>(rows: impl IntoIterator<Item = &'a CsvRow>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

pub fn write_responses(responses: &[Response]) -> Result<Vec<u8>> {
    let rows: Vec<CsvRow> = responses.iter().map(CsvRow::from_response).collect();
    write_rows(&rows)
}

/// A parsed vote log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteLog {
    rows: Vec<CsvRow>,
}

impl VoteLog {
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().ne(HEADER.iter().copied()) {
            return Err(Error::Csv(format!("unexpected header: {}", header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut rows = Vec::new();
        for (i, row) in r.deserialize::<CsvRow>().enumerate() {
            let row = row?;
            row.check(i + 2)?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<CsvRow>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[CsvRow] {
        &self.rows
    }

    /// Every item the log mentions.
    pub fn items(&self) -> BTreeSet<ItemId> {
        self.rows.iter().flat_map(|r| [ItemId(r.left_item_id), ItemId(r.right_item_id)]).collect()
    }

    /// Tallies over valid votes, for every item mentioned in the log.
    pub fn tallies(&self) -> Vec<Tally> {
        let mut t: BTreeMap<ItemId, Tally> = self
            .items()
            .into_iter()
            .map(|id| (id, Tally { item_id: id, wins: 0, losses: 0, completed_appearances: 0 }))
            .collect();
        for v in self.rows.iter().filter(|r| r.valid).filter_map(CsvRow::dataset_vote) {
            let w = t.get_mut(&v.winner()).expect("item listed");
            w.wins += 1;
            w.completed_appearances += 1;
            let l = t.get_mut(&v.loser()).expect("item listed");
            l.losses += 1;
            l.completed_appearances += 1;
        }
        t.into_values().collect()
    }

    /// Runs the estimation filter, treating every item in the log as active
    /// unless `active` narrows the set.
    pub fn estimation_dataset(
        &self,
        active: Option<&BTreeSet<ItemId>>,
    ) -> Result<(EstimationDataset, FilterReport)> {
        let all = self.items();
        let active = active.unwrap_or(&all);
        let raw = self.rows.iter().filter(|r| r.response_type == ResponseType::Vote).count();
        let valid: Vec<DatasetVote> =
            self.rows.iter().filter(|r| r.valid).filter_map(CsvRow::dataset_vote).collect();
        let valid_count = valid.len();
        let (d, mut report) = dataset::filter_votes(valid, active)?;
        report.raw_votes = raw;
        report.valid_votes = valid_count;
        Ok((d, report))
    }
}
