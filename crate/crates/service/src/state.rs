//! Service state: the survey store, creator credentials and estimation
//! jobs, changed only through [`Event`]s.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wikisurvey_core::estimator::ModelConfig;
use wikisurvey_core::report::{fit, FitOutput};
use wikisurvey_core::store::Recorded;
use wikisurvey_core::{
    sample_prompt, Appearance, AppearanceId, Choice, EstimationDataset, FilterReport, IdeaSubmission,
    ItemId, ItemState, OrientedPrompt, Session, SubmissionId, SurveyConfig, SurveyId, SurveyStore,
    Tally,
};

use crate::error::ApiError;
use crate::events::{read_events, repair_tail, Event, EventLog};
use crate::jobs::{EstimationJob, JobId, JobState, SnapshotSize};

/// Frozen inputs of an estimation job.
#[derive(Debug, Clone)]
pub struct JobSnapshot {
    pub job_id: JobId,
    pub dataset: EstimationDataset,
    pub filter: FilterReport,
    pub tallies: Vec<Tally>,
    pub config: ModelConfig,
}

#[derive(Debug)]
pub struct ServiceState {
    store: SurveyStore,
    creators: HashMap<SurveyId, String>,
    jobs: BTreeMap<JobId, EstimationJob>,
    next_job: u64,
    log: EventLog,
    rng: ChaCha8Rng,
}

impl ServiceState {
    pub fn new(log: EventLog, seed: u64) -> Self {
        Self {
            store: SurveyStore::new(),
            creators: HashMap::new(),
            jobs: BTreeMap::new(),
            next_job: 0,
            log,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Rebuilds state from the events in `log_path`, then keeps appending to
    /// the same file. Jobs left queued or running by a crash are failed.
    pub fn recover(log_path: &std::path::Path, seed: u64, now: DateTime<Utc>) -> anyhow::Result<Self> {
        repair_tail(log_path)?;
        let events = read_events(log_path)?;
        let mut state = Self::new(EventLog::in_memory(), seed);
        for (i, e) in events.iter().enumerate() {
            state.apply(e).map_err(|err| anyhow::anyhow!("replaying event {}: {}", i + 1, err.message))?;
        }
        state.log = EventLog::open(log_path)?;
        let interrupted: Vec<JobId> =
            state.jobs.values().filter(|j| j.state.is_active()).map(|j| j.job_id).collect();
        for job_id in interrupted {
            state.commit(Event::JobFinished {
                job_id,
                state: JobState::Failed,
                results: None,
                diagnostics: None,
                error: Some("interrupted by a service restart".into()),
                at: now,
            })?;
        }
        Ok(state)
    }

    /// Replays `events` into a fresh in-memory state.
    pub fn replay(events: &[Event]) -> Result<Self, ApiError> {
        let mut state = Self::new(EventLog::in_memory(), 0);
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn store(&self) -> &SurveyStore {
        &self.store
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn job(&self, id: JobId) -> Option<&EstimationJob> {
        self.jobs.get(&id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &EstimationJob> {
        self.jobs.values()
    }

    pub fn latest_converged_job(&self, survey: SurveyId) -> Option<&EstimationJob> {
        self.jobs.values().rev().find(|j| j.survey_id == survey && j.state == JobState::Converged)
    }

    pub fn is_creator(&self, survey: SurveyId, token: &str) -> bool {
        self.creators.get(&survey).is_some_and(|t| t == token)
    }

    fn log_event(&mut self, event: Event) -> Result<(), ApiError> {
        self.log.append(&event).map_err(|e| ApiError::internal(format!("event log: {e}")))
    }

    fn commit(&mut self, event: Event) -> Result<(), ApiError> {
        self.apply(&event)?;
        self.log_event(event)
    }

    /// Re-executes one logged change, checking that it reproduces the ids
    /// recorded when it first ran.
    fn apply(&mut self, event: &Event) -> Result<(), ApiError> {
        let mismatch = |what: &str| ApiError::internal(format!("replayed {what} does not match the log"));
        match event {
            Event::SurveyCreated { survey_id, question, seed_items, config, creator_token, at } => {
                let id = self.store.create_survey(question, seed_items, config.clone(), *at)?;
                if id != *survey_id {
                    return Err(mismatch("survey id"));
                }
                self.creators.insert(id, creator_token.clone());
            }
            Event::SessionResolved { survey_id, token, session_id, at } => {
                if self.store.resolve_session(*survey_id, token, *at)?.id != *session_id {
                    return Err(mismatch("session id"));
                }
            }
            Event::PromptServed { session_id, appearance_id, left, right, at } => {
                let prompt = OrientedPrompt { left: *left, right: *right };
                if self.store.serve(*session_id, prompt, *at)?.id != *appearance_id {
                    return Err(mismatch("appearance id"));
                }
            }
            Event::ResponseRecorded { appearance_id, choice, at } => {
                self.store.record_response(*appearance_id, *choice, *at)?;
            }
            Event::IdeaSubmitted { survey_id, session_id, submission_id, text, at } => {
                if self.store.submit_idea(*survey_id, *session_id, text, *at)?.id != *submission_id {
                    return Err(mismatch("submission id"));
                }
            }
            Event::IdeaModerated { submission_id, activate } => {
                self.store.moderate_idea(*submission_id, *activate)?;
            }
            Event::ItemStateSet { survey_id, item_id, state } => {
                self.store.set_item_state(*survey_id, *item_id, *state)?;
            }
            Event::JobQueued { job_id, survey_id, config, votes, items, sessions, at } => {
                self.store.survey(*survey_id)?;
                if job_id.0 != self.next_job + 1 {
                    return Err(mismatch("job id"));
                }
                self.next_job = job_id.0;
                self.jobs.insert(
                    *job_id,
                    EstimationJob {
                        job_id: *job_id,
                        survey_id: *survey_id,
                        state: JobState::Queued,
                        config: config.clone(),
                        snapshot: SnapshotSize { votes: *votes, items: *items, sessions: *sessions },
                        queued_at: *at,
                        started_at: None,
                        finished_at: None,
                        results: None,
                        diagnostics: None,
                        error: None,
                    },
                );
            }
            Event::JobStarted { job_id, at } => {
                let job = self.jobs.get_mut(job_id).ok_or_else(|| ApiError::not_found(format!("unknown job {job_id}")))?;
                job.state = JobState::Running;
                job.started_at = Some(*at);
            }
            Event::JobFinished { job_id, state, results, diagnostics, error, at } => {
                let job = self.jobs.get_mut(job_id).ok_or_else(|| ApiError::not_found(format!("unknown job {job_id}")))?;
                if !job.state.is_active() {
                    return Err(ApiError::conflict(format!("job {job_id} already finished")));
                }
                job.state = *state;
                job.results = results.clone();
                job.diagnostics = diagnostics.clone();
                job.error = error.clone();
                job.finished_at = Some(*at);
            }
        }
        Ok(())
    }

    pub fn create_survey(
        &mut self,
        question: String,
        seed_items: Vec<String>,
        config: SurveyConfig,
        creator_token: String,
        now: DateTime<Utc>,
    ) -> Result<SurveyId, ApiError> {
        let survey_id = self.store.create_survey(&question, &seed_items, config.clone(), now)?;
        self.creators.insert(survey_id, creator_token.clone());
        self.log_event(Event::SurveyCreated { survey_id, question, seed_items, config, creator_token, at: now })?;
        Ok(survey_id)
    }

    pub fn resolve_session(&mut self, survey: SurveyId, token: &str, now: DateTime<Utc>) -> Result<Session, ApiError> {
        let session = self.store.resolve_session(survey, token, now)?;
        self.log_event(Event::SessionResolved {
            survey_id: survey,
            token: token.to_owned(),
            session_id: session.id,
            at: now,
        })?;
        Ok(session)
    }

    /// Resolves the session and opens an appearance of a freshly sampled
    /// prompt.
    pub fn serve_prompt(&mut self, survey: SurveyId, token: &str, now: DateTime<Utc>) -> Result<Appearance, ApiError> {
        let dist = self.store.prompt_distribution(survey)?;
        let session = self.resolve_session(survey, token, now)?;
        let prompt = sample_prompt(&dist, &mut self.rng);
        let a = self.store.serve(session.id, prompt, now)?;
        self.log_event(Event::PromptServed {
            session_id: session.id,
            appearance_id: a.id,
            left: prompt.left,
            right: prompt.right,
            at: now,
        })?;
        Ok(a)
    }

    pub fn record_response(
        &mut self,
        appearance: AppearanceId,
        choice: Choice,
        now: DateTime<Utc>,
    ) -> Result<Recorded, ApiError> {
        let r = self.store.record_response(appearance, choice, now)?;
        self.log_event(Event::ResponseRecorded { appearance_id: appearance, choice, at: now })?;
        Ok(r)
    }

    pub fn submit_idea(
        &mut self,
        survey: SurveyId,
        token: &str,
        text: String,
        now: DateTime<Utc>,
    ) -> Result<IdeaSubmission, ApiError> {
        if text.trim().is_empty() {
            return Err(ApiError::bad_request("idea text must not be empty"));
        }
        let session = self.resolve_session(survey, token, now)?;
        let s = self.store.submit_idea(survey, session.id, &text, now)?;
        self.log_event(Event::IdeaSubmitted { survey_id: survey, session_id: session.id, submission_id: s.id, text, at: now })?;
        Ok(s)
    }

    pub fn moderate_idea(&mut self, submission: SubmissionId, activate: bool) -> Result<IdeaSubmission, ApiError> {
        let s = self.store.moderate_idea(submission, activate)?;
        self.log_event(Event::IdeaModerated { submission_id: submission, activate })?;
        Ok(s)
    }

    pub fn set_item_state(&mut self, survey: SurveyId, item: ItemId, state: ItemState) -> Result<(), ApiError> {
        self.commit(Event::ItemStateSet { survey_id: survey, item_id: item, state })
    }

    /// Freezes the survey's estimation dataset and queues a job for it.
    pub fn enqueue_job(
        &mut self,
        survey: SurveyId,
        config: ModelConfig,
        now: DateTime<Utc>,
    ) -> Result<JobSnapshot, ApiError> {
        self.store.survey(survey)?;
        if let Some(j) = self.jobs.values().find(|j| j.survey_id == survey && j.state.is_active()) {
            return Err(ApiError::conflict(format!("job {} is still active for this survey", j.job_id)));
        }
        config.validate()?;
        let (dataset, filter) = self.store.build_estimation_dataset(survey)?;
        let tallies: Vec<Tally> = self.store.items(survey)?.map(Tally::from).collect();
        let job_id = JobId(self.next_job + 1);
        self.commit(Event::JobQueued {
            job_id,
            survey_id: survey,
            config: config.clone(),
            votes: dataset.vote_count(),
            items: dataset.item_count(),
            sessions: dataset.session_count(),
            at: now,
        })?;
        Ok(JobSnapshot { job_id, dataset, filter, tallies, config })
    }

    pub fn start_job(&mut self, job: JobId, now: DateTime<Utc>) -> Result<(), ApiError> {
        self.commit(Event::JobStarted { job_id: job, at: now })
    }

    pub fn finish_job(&mut self, job: JobId, outcome: Result<FitOutput, String>, now: DateTime<Utc>) -> Result<(), ApiError> {
        let event = match outcome {
            Ok(out) => Event::JobFinished {
                job_id: job,
                state: if out.results.converged { JobState::Converged } else { JobState::NotConverged },
                results: Some(Box::new(out.results)),
                diagnostics: Some(Box::new(out.diagnostics)),
                error: None,
                at: now,
            },
            Err(error) => Event::JobFinished {
                job_id: job,
                state: JobState::Failed,
                results: None,
                diagnostics: None,
                error: Some(error),
                at: now,
            },
        };
        self.commit(event)
    }
}

/// Runs a frozen job to completion.
pub fn run_job(snapshot: &JobSnapshot) -> Result<FitOutput, String> {
    fit(&snapshot.dataset, &snapshot.filter, &snapshot.tallies, &snapshot.config)
        .map_err(|e| e.to_string())
}

