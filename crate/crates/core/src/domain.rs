//! Identifiers and value records shared by every part of the survey.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::prompt::PromptPolicyConfig;
use crate::session::SessionPolicyConfig;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u64> for $name {
            fn from(v: u64) -> Self {
                Self(v)
            }
        }
    };
}

id_type!(SurveyId);
id_type!(
    /// Item ids increase monotonically within a survey; the lowest id is the
    /// default identifiability anchor of the estimator.
    ItemId
);
id_type!(SessionId);
id_type!(AppearanceId);
id_type!(
    /// Identifier of one stored response (vote or skip).
    ResponseId
);
id_type!(SubmissionId);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub prompt: PromptPolicyConfig,
    pub session: SessionPolicyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub id: SurveyId,
    pub question: String,
    pub created_at: DateTime<Utc>,
    pub config: SurveyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemOrigin {
    Seed,
    UserSubmitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemState {
    /// Awaiting moderation; never shown in prompts.
    Pending,
    Active,
    /// Soft-deleted: history is kept, but the item leaves prompts and results.
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub survey_id: SurveyId,
    pub text: String,
    pub origin: ItemOrigin,
    pub state: ItemState,
    pub submitted_by: Option<SessionId>,
    pub wins: u64,
    pub losses: u64,
    pub completed_appearances: u64,
}

impl Item {
    pub fn is_active(&self) -> bool {
        self.state == ItemState::Active
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub survey_id: SurveyId,
    pub token: String,
    pub started_at: DateTime<Utc>,
    pub last_activity: DateTime<Utc>,
}

/// An unordered pair of distinct items.
///
/// The pair is normalized so that `low < high`; display orientation is chosen
/// separately when the prompt is served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Prompt {
    low: ItemId,
    high: ItemId,
}

impl Prompt {
    /// Returns `None` when both items are the same.
    pub fn new(a: ItemId, b: ItemId) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Self { low: a, high: b }),
            std::cmp::Ordering::Greater => Some(Self { low: b, high: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn low(&self) -> ItemId {
        self.low
    }

    pub fn high(&self) -> ItemId {
        self.high
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.low == item || self.high == item
    }
}

/// A prompt as displayed: which item is on the left and which on the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrientedPrompt {
    pub left: ItemId,
    pub right: ItemId,
}

impl OrientedPrompt {
    pub fn pair(&self) -> Prompt {
        Prompt::new(self.left, self.right).expect("oriented prompt holds two distinct items")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppearanceState {
    Open,
    Completed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Appearance {
    pub id: AppearanceId,
    pub survey_id: SurveyId,
    pub session_id: SessionId,
    pub prompt: OrientedPrompt,
    pub served_at: DateTime<Utc>,
    pub state: AppearanceState,
}

/// What the voter clicked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Left,
    Right,
    CantDecide,
}

/// A completed contest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub id: ResponseId,
    pub appearance_id: AppearanceId,
    pub session_id: SessionId,
    pub left: ItemId,
    pub right: ItemId,
    pub winner: ItemId,
    pub loser: ItemId,
    pub valid: bool,
    pub cast_at: DateTime<Utc>,
}

impl Vote {
    /// 1 when the left item won, 0 when the right item won.
    pub fn outcome(&self) -> u8 {
        u8::from(self.winner == self.left)
    }
}

/// An "I can't decide" response. It never changes tallies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub id: ResponseId,
    pub appearance_id: AppearanceId,
    pub session_id: SessionId,
    pub left: ItemId,
    pub right: ItemId,
    pub valid: bool,
    pub cast_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Vote(Vote),
    Skip(SkipRecord),
}

impl Response {
    pub fn id(&self) -> ResponseId {
        match self {
            Response::Vote(v) => v.id,
            Response::Skip(s) => s.id,
        }
    }

    pub fn session_id(&self) -> SessionId {
        match self {
            Response::Vote(v) => v.session_id,
            Response::Skip(s) => s.session_id,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Response::Vote(v) => v.valid,
            Response::Skip(s) => s.valid,
        }
    }

    pub fn is_skip(&self) -> bool {
        matches!(self, Response::Skip(_))
    }

    pub fn as_vote(&self) -> Option<&Vote> {
        match self {
            Response::Vote(v) => Some(v),
            Response::Skip(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmissionState {
    Pending,
    Activated,
    Rejected,
}

/// A voter-submitted idea awaiting (or past) moderation by the survey creator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdeaSubmission {
    pub id: SubmissionId,
    pub survey_id: SurveyId,
    pub session_id: SessionId,
    /// The pending item created for this idea.
    pub item_id: ItemId,
    pub text: String,
    pub state: SubmissionState,
    pub submitted_at: DateTime<Utc>,
}

/// The J x K matrix of per-session appeals, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionMatrix {
    sessions: usize,
    items: usize,
    values: Vec<f64>,
}

impl OpinionMatrix {
    pub fn zeros(sessions: usize, items: usize) -> Self {
        Self { sessions, items, values: vec![0.0; sessions * items] }
    }

    /// Panics if `values.len() != sessions * items`.
    pub fn from_row_major(sessions: usize, items: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), sessions * items, "opinion matrix shape mismatch");
        Self { sessions, items, values }
    }

    pub fn sessions(&self) -> usize {
        self.sessions
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn get(&self, session: usize, item: usize) -> f64 {
        self.values[session * self.items + item]
    }

    pub fn set(&mut self, session: usize, item: usize, value: f64) {
        self.values[session * self.items + item] = value;
    }

    pub fn row(&self, session: usize) -> &[f64] {
        &self.values[session * self.items..(session + 1) * self.items]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Adds `c` to every entry.
    pub fn shift(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v += c);
    }
}
