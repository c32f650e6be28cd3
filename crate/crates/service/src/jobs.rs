use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use wikisurvey_core::estimator::ModelConfig;
use wikisurvey_core::report::{Diagnostics, ResultsDocument};
use wikisurvey_core::SurveyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Converged,
    NotConverged,
    Failed,
}

impl JobState {
    pub fn is_active(self) -> bool {
        matches!(self, JobState::Queued | JobState::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSize {
    pub votes: usize,
    pub items: usize,
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationJob {
    pub job_id: JobId,
    pub survey_id: SurveyId,
    pub state: JobState,
    pub config: ModelConfig,
    pub snapshot: SnapshotSize,
    pub queued_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub results: Option<Box<ResultsDocument>>,
    pub diagnostics: Option<Box<Diagnostics>>,
    pub error: Option<String>,
}
