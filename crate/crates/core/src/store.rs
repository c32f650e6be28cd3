//! In-memory survey state: items, sessions, appearances and the ordered
//! response log, with win/loss and per-pair counters cached alongside.
//!
//! Every mutation is a deterministic function of its arguments and the prior
//! state, so replaying the same calls in the same order against an empty
//! store rebuilds identical state. The service layer relies on this for
//! recovery from its append-only event log.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, EstimationDataset, FilterReport};
use crate::domain::{
    Appearance, AppearanceId, AppearanceState, Choice, IdeaSubmission, Item, ItemId, ItemOrigin,
    ItemState, OrientedPrompt, Prompt, Response, ResponseId, Session, SessionId, SkipRecord,
    SubmissionId, SubmissionState, Survey, SurveyConfig, SurveyId, Vote,
};
use crate::error::{Error, Result};
use crate::prompt::{compute_prompt_distribution, PromptDistribution};
use crate::score::{rank_tallies, SimpleScore, Tally};

#[derive(Debug, Clone, PartialEq)]
struct SurveyRecord {
    survey: Survey,
    items: BTreeMap<ItemId, Item>,
    next_item: u64,
    /// Most recent session per browser token.
    current_session: HashMap<String, SessionId>,
    responses: Vec<Response>,
    pair_counts: HashMap<Prompt, u64>,
}

#[derive(Debug, Clone, PartialEq)]
struct SessionRecord {
    session: Session,
    last_response_was_skip: bool,
}

/// Outcome of [`SurveyStore::record_response`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recorded {
    pub response: Response,
    /// True when the appearance already had a response; the new one is
    /// stored but marked invalid.
    pub duplicate: bool,
}

/// Counters that must be reproducible from the response log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub items: BTreeMap<ItemId, (u64, u64, u64)>,
    pub pairs: BTreeMap<Prompt, u64>,
    pub responses: usize,
    pub sessions: usize,
    pub appearances: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurveyStore {
    surveys: BTreeMap<SurveyId, SurveyRecord>,
    sessions: HashMap<SessionId, SessionRecord>,
    appearances: HashMap<AppearanceId, Appearance>,
    submissions: BTreeMap<SubmissionId, IdeaSubmission>,
    next_survey: u64,
    next_session: u64,
    next_appearance: u64,
    next_response: u64,
    next_submission: u64,
}

fn next(counter: &mut u64) -> u64 {
    *counter += 1;
    *counter
}

impl SurveyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_survey(
        &mut self,
        question: &str,
        seed_items: &[String],
        config: SurveyConfig,
        now: DateTime<Utc>,
    ) -> Result<SurveyId> {
        if question.trim().is_empty() {
            return Err(Error::InvalidInput("question text must not be empty".into()));
        }
        if let Some(blank) = seed_items.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::InvalidInput(format!("seed item {blank} has empty text")));
        }
        config.prompt.validate()?;
        config.session.validate()?;
        let id = SurveyId(next(&mut self.next_survey));
        let mut record = SurveyRecord {
            survey: Survey { id, question: question.to_owned(), created_at: now, config },
            items: BTreeMap::new(),
            next_item: 0,
            current_session: HashMap::new(),
            responses: Vec::new(),
            pair_counts: HashMap::new(),
        };
        for text in seed_items {
            add_item(&mut record, text, ItemOrigin::Seed, ItemState::Active, None);
        }
        self.surveys.insert(id, record);
        Ok(id)
    }

    fn record(&self, survey: SurveyId) -> Result<&SurveyRecord> {
        self.surveys.get(&survey).ok_or(Error::UnknownSurvey(survey))
    }

    fn record_mut(&mut self, survey: SurveyId) -> Result<&mut SurveyRecord> {
        self.surveys.get_mut(&survey).ok_or(Error::UnknownSurvey(survey))
    }

    pub fn survey(&self, survey: SurveyId) -> Result<&Survey> {
        Ok(&self.record(survey)?.survey)
    }

    pub fn survey_ids(&self) -> impl Iterator<Item = SurveyId> + '_ {
        self.surveys.keys().copied()
    }

    pub fn items(&self, survey: SurveyId) -> Result<impl Iterator<Item = &Item>> {
        Ok(self.record(survey)?.items.values())
    }

    pub fn item(&self, survey: SurveyId, item: ItemId) -> Result<&Item> {
        self.record(survey)?.items.get(&item).ok_or(Error::UnknownItem { survey, item })
    }

    pub fn active_items(&self, survey: SurveyId) -> Result<BTreeSet<ItemId>> {
        Ok(self.record(survey)?.items.values().filter(|i| i.is_active()).map(|i| i.id).collect())
    }

    pub fn responses(&self, survey: SurveyId) -> Result<&[Response]> {
        Ok(&self.record(survey)?.responses)
    }

    pub fn session(&self, id: SessionId) -> Result<&Session> {
        self.sessions.get(&id).map(|r| &r.session).ok_or(Error::UnknownSession(id))
    }

    pub fn appearance(&self, id: AppearanceId) -> Result<&Appearance> {
        self.appearances.get(&id).ok_or(Error::UnknownAppearance(id))
    }

    pub fn submission(&self, id: SubmissionId) -> Result<&IdeaSubmission> {
        self.submissions.get(&id).ok_or(Error::UnknownSubmission(id))
    }

    pub fn submissions(&self, survey: SurveyId) -> Result<Vec<&IdeaSubmission>> {
        self.record(survey)?;
        Ok(self.submissions.values().filter(|s| s.survey_id == survey).collect())
    }

    /// Returns the open session for `(token, survey)`, refreshing its
    /// activity time, or starts a new one if there is none or it timed out.
    pub fn resolve_session(
        &mut self,
        survey: SurveyId,
        token: &str,
        now: DateTime<Utc>,
    ) -> Result<Session> {
        if token.is_empty() {
            return Err(Error::InvalidInput("session token must not be empty".into()));
        }
        let record = self.surveys.get_mut(&survey).ok_or(Error::UnknownSurvey(survey))?;
        let policy = record.survey.config.session;
        if let Some(id) = record.current_session.get(token) {
            let session = self.sessions.get_mut(id).expect("indexed session exists");
            if policy.is_open(session.session.last_activity, now) {
                session.session.last_activity = session.session.last_activity.max(now);
                return Ok(session.session.clone());
            }
        }
        let id = SessionId(next(&mut self.next_session));
        let session = Session {
            id,
            survey_id: survey,
            token: token.to_owned(),
            started_at: now,
            last_activity: now,
        };
        record.current_session.insert(token.to_owned(), id);
        self.sessions.insert(id, SessionRecord { session: session.clone(), last_response_was_skip: false });
        Ok(session)
    }

    fn open_session_mut(&mut self, id: SessionId, now: DateTime<Utc>) -> Result<&mut SessionRecord> {
        let record = self.sessions.get_mut(&id).ok_or(Error::UnknownSession(id))?;
        let policy = self.surveys[&record.session.survey_id].survey.config.session;
        if !policy.is_open(record.session.last_activity, now) {
            return Err(Error::SessionExpired);
        }
        record.session.last_activity = record.session.last_activity.max(now);
        Ok(record)
    }

    /// Unordered pairs of active items with their valid completed-contest
    /// counts (both orientations), in ascending pair order.
    pub fn active_prompt_counts(&self, survey: SurveyId) -> Result<Vec<(Prompt, u64)>> {
        let record = self.record(survey)?;
        let active: Vec<ItemId> =
            record.items.values().filter(|i| i.is_active()).map(|i| i.id).collect();
        let mut out = Vec::with_capacity(active.len() * active.len().saturating_sub(1) / 2);
        for (i, a) in active.iter().enumerate() {
            for b in &active[i + 1..] {
                let pair = Prompt::new(*a, *b).expect("distinct ids");
                out.push((pair, record.pair_counts.get(&pair).copied().unwrap_or(0)));
            }
        }
        Ok(out)
    }

    pub fn prompt_distribution(&self, survey: SurveyId) -> Result<PromptDistribution> {
        let config = self.survey(survey)?.config.prompt;
        let counts: Vec<(Prompt, f64)> =
            self.active_prompt_counts(survey)?.into_iter().map(|(p, n)| (p, n as f64)).collect();
        compute_prompt_distribution(&counts, &config)
    }

    /// Opens an appearance of `prompt` for `session`.
    pub fn serve(
        &mut self,
        session: SessionId,
        prompt: OrientedPrompt,
        now: DateTime<Utc>,
    ) -> Result<Appearance> {
        let survey = self.session(session)?.survey_id;
        let record = self.record(survey)?;
        for side in [prompt.left, prompt.right] {
            let item = record.items.get(&side).ok_or(Error::UnknownItem { survey, item: side })?;
            if !item.is_active() {
                return Err(Error::InactiveItem { item: side });
            }
        }
        if prompt.left == prompt.right {
            return Err(Error::InvalidInput("a prompt needs two distinct items".into()));
        }
        self.open_session_mut(session, now)?;
        let appearance = Appearance {
            id: AppearanceId(next(&mut self.next_appearance)),
            survey_id: survey,
            session_id: session,
            prompt,
            served_at: now,
            state: AppearanceState::Open,
        };
        self.appearances.insert(appearance.id, appearance.clone());
        Ok(appearance)
    }

    /// Stores a response to an appearance and applies the validity rules:
    /// only the first response to an appearance is valid, and a vote that
    /// immediately follows an "I can't decide" in the same session is invalid.
    /// Only valid votes move the tallies.
    pub fn record_response(
        &mut self,
        appearance: AppearanceId,
        choice: Choice,
        now: DateTime<Utc>,
    ) -> Result<Recorded> {
        let app = self.appearances.get(&appearance).ok_or(Error::UnknownAppearance(appearance))?;
        let (survey, session_id, prompt) = (app.survey_id, app.session_id, app.prompt);
        let duplicate = app.state != AppearanceState::Open;
        let session = self.open_session_mut(session_id, now)?;
        let after_skip = session.last_response_was_skip;
        session.last_response_was_skip = choice == Choice::CantDecide;

        let id = ResponseId(next(&mut self.next_response));
        let response = match choice {
            Choice::CantDecide => Response::Skip(SkipRecord {
                id,
                appearance_id: appearance,
                session_id,
                left: prompt.left,
                right: prompt.right,
                valid: !duplicate,
                cast_at: now,
            }),
            Choice::Left | Choice::Right => {
                let (winner, loser) = if choice == Choice::Left {
                    (prompt.left, prompt.right)
                } else {
                    (prompt.right, prompt.left)
                };
                Response::Vote(Vote {
                    id,
                    appearance_id: appearance,
                    session_id,
                    left: prompt.left,
                    right: prompt.right,
                    winner,
                    loser,
                    valid: !duplicate && !after_skip,
                    cast_at: now,
                })
            }
        };
        if !duplicate {
            let app = self.appearances.get_mut(&appearance).expect("checked above");
            app.state = match choice {
                Choice::CantDecide => AppearanceState::Skipped,
                _ => AppearanceState::Completed,
            };
        }
        let record = self.record_mut(survey)?;
        if let Response::Vote(v) = &response {
            if v.valid {
                apply_vote(record, v);
            }
        }
        record.responses.push(response.clone());
        Ok(Recorded { response, duplicate })
    }

    /// Creates a pending item for a voter's idea.
    pub fn submit_idea(
        &mut self,
        survey: SurveyId,
        session: SessionId,
        text: &str,
        now: DateTime<Utc>,
    ) -> Result<IdeaSubmission> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("idea text must not be empty".into()));
        }
        self.record(survey)?;
        if self.session(session)?.survey_id != survey {
            return Err(Error::InvalidInput(format!("session {session} belongs to another survey")));
        }
        self.open_session_mut(session, now)?;
        let record = self.record_mut(survey)?;
        let item = add_item(record, text, ItemOrigin::UserSubmitted, ItemState::Pending, Some(session));
        let submission = IdeaSubmission {
            id: SubmissionId(next(&mut self.next_submission)),
            survey_id: survey,
            session_id: session,
            item_id: item,
            text: text.to_owned(),
            state: SubmissionState::Pending,
            submitted_at: now,
        };
        self.submissions.insert(submission.id, submission.clone());
        Ok(submission)
    }

    /// Moves a pending idea into the active pool (`activate`) or rejects it.
    pub fn moderate_idea(&mut self, id: SubmissionId, activate: bool) -> Result<IdeaSubmission> {
        let submission = self.submissions.get(&id).ok_or(Error::UnknownSubmission(id))?;
        if submission.state != SubmissionState::Pending {
            return Err(Error::AlreadyModerated(id));
        }
        let (survey, item) = (submission.survey_id, submission.item_id);
        let record = self.record_mut(survey)?;
        let entry = record.items.get_mut(&item).ok_or(Error::UnknownItem { survey, item })?;
        entry.state = if activate { ItemState::Active } else { ItemState::Inactive };
        let submission = self.submissions.get_mut(&id).expect("checked above");
        submission.state = if activate { SubmissionState::Activated } else { SubmissionState::Rejected };
        Ok(submission.clone())
    }

    /// Sets an item's activation state directly (creator action).
    pub fn set_item_state(&mut self, survey: SurveyId, item: ItemId, state: ItemState) -> Result<()> {
        let record = self.record_mut(survey)?;
        let entry = record.items.get_mut(&item).ok_or(Error::UnknownItem { survey, item })?;
        entry.state = state;
        Ok(())
    }

    pub fn build_estimation_dataset(
        &self,
        survey: SurveyId,
    ) -> Result<(EstimationDataset, FilterReport)> {
        let record = self.record(survey)?;
        let active = self.active_items(survey)?;
        if active.is_empty() {
            return Err(Error::InvalidInput("survey has no active items".into()));
        }
        dataset::build_estimation_dataset(&record.responses, &active)
    }

    pub fn export_votes_csv(&self, survey: SurveyId) -> Result<Vec<u8>> {
        let record = self.record(survey)?;
        crate::votes_csv::write_responses(&record.responses)
    }

    /// Simple-score ranking of active items.
    pub fn rank_items(&self, survey: SurveyId, min_appearances: u64) -> Result<Vec<SimpleScore>> {
        let tallies = self.items(survey)?.filter(|i| i.is_active()).map(Tally::from);
        Ok(rank_tallies(tallies, min_appearances))
    }

    pub fn counters(&self, survey: SurveyId) -> Result<CounterSnapshot> {
        let record = self.record(survey)?;
        Ok(CounterSnapshot {
            items: record
                .items
                .values()
                .map(|i| (i.id, (i.wins, i.losses, i.completed_appearances)))
                .collect(),
            pairs: record.pair_counts.iter().map(|(k, v)| (*k, *v)).collect(),
            responses: record.responses.len(),
            sessions: self.sessions.values().filter(|s| s.session.survey_id == survey).count(),
            appearances: self.appearances.values().filter(|a| a.survey_id == survey).count(),
        })
    }

    /// Recomputes the counters from the response log alone.
    pub fn recount(&self, survey: SurveyId) -> Result<CounterSnapshot> {
        let record = self.record(survey)?;
        let mut items: BTreeMap<ItemId, (u64, u64, u64)> =
            record.items.keys().map(|id| (*id, (0, 0, 0))).collect();
        let mut pairs: BTreeMap<Prompt, u64> = BTreeMap::new();
        for v in record.responses.iter().filter_map(Response::as_vote).filter(|v| v.valid) {
            let w = items.entry(v.winner).or_default();
            w.0 += 1;
            w.2 += 1;
            let l = items.entry(v.loser).or_default();
            l.1 += 1;
            l.2 += 1;
            *pairs.entry(Prompt::new(v.left, v.right).expect("distinct")).or_default() += 1;
        }
        let mut snapshot = self.counters(survey)?;
        snapshot.items = items;
        snapshot.pairs = pairs;
        Ok(snapshot)
    }
}

fn add_item(
    record: &mut SurveyRecord,
    text: &str,
    origin: ItemOrigin,
    state: ItemState,
    submitted_by: Option<SessionId>,
) -> ItemId {
    record.next_item += 1;
    let id = ItemId(record.next_item);
    record.items.insert(
        id,
        Item {
            id,
            survey_id: record.survey.id,
            text: text.to_owned(),
            origin,
            state,
            submitted_by,
            wins: 0,
            losses: 0,
            completed_appearances: 0,
        },
    );
    id
}

fn apply_vote(record: &mut SurveyRecord, vote: &Vote) {
    if let Some(w) = record.items.get_mut(&vote.winner) {
        w.wins += 1;
        w.completed_appearances += 1;
    }
    if let Some(l) = record.items.get_mut(&vote.loser) {
        l.losses += 1;
        l.completed_appearances += 1;
    }
    *record.pair_counts.entry(Prompt::new(vote.left, vote.right).expect("distinct")).or_default() += 1;
}
