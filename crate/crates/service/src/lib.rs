//! HTTP service for running pairwise wiki surveys: voters compare ideas and
//! contribute new ones, creators moderate and request model-based results.

pub mod api;
pub mod config;
pub mod error;
pub mod events;
pub mod jobs;
pub mod state;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, MutexGuard};
use wikisurvey_core::estimator::ModelConfig;
use wikisurvey_core::SurveyId;

pub use config::ServiceConfig;
pub use error::ApiError;
pub use events::{read_events, Event, EventLog};
pub use jobs::{EstimationJob, JobId, JobState};
pub use state::{JobSnapshot, ServiceState};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

struct Shared {
    config: ServiceConfig,
    state: Mutex<ServiceState>,
    clock: Clock,
}

/// Cheaply clonable handle to one running service.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl Service {
    /// Opens the service, replaying the event log if `storage_path` is set.
    pub fn open(config: ServiceConfig) -> anyhow::Result<Self> {
        Self::with_clock(config, Arc::new(Utc::now))
    }

    pub fn with_clock(config: ServiceConfig, clock: Clock) -> anyhow::Result<Self> {
        config.validate()?;
        let seed = config.seed.unwrap_or_else(rand::random);
        let state = match &config.storage_path {
            Some(path) => ServiceState::recover(path, seed, clock())?,
            None => ServiceState::new(EventLog::in_memory(), seed),
        };
        Ok(Self { shared: Arc::new(Shared { config, state: Mutex::new(state), clock }) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.shared.clock)()
    }

    pub fn lock(&self) -> MutexGuard<'_, ServiceState> {
        self.shared.state.lock()
    }

    pub fn router(&self) -> axum::Router {
        api::router(self.clone())
    }

    /// Queues an estimation job and runs it on the blocking thread pool.
    /// Must be called from within a Tokio runtime.
    pub fn enqueue(&self, survey: SurveyId, config: ModelConfig) -> Result<EstimationJob, ApiError> {
        let snapshot = self.lock().enqueue_job(survey, config, self.now())?;
        let job = self.lock().job(snapshot.job_id).cloned().expect("job was just queued");
        let service = self.clone();
        tokio::task::spawn_blocking(move || service.run(snapshot));
        Ok(job)
    }

    fn run(&self, snapshot: JobSnapshot) {
        let id = snapshot.job_id;
        if let Err(e) = self.lock().start_job(id, self.now()) {
            tracing::error!(job = %id, "could not start job: {e}");
            return;
        }
        let outcome = state::run_job(&snapshot);
        match &outcome {
            Ok(out) => tracing::info!(job = %id, converged = out.results.converged, "estimation finished"),
            Err(e) => tracing::warn!(job = %id, "estimation failed: {e}"),
        }
        if let Err(e) = self.lock().finish_job(id, outcome, self.now()) {
            tracing::error!(job = %id, "could not record job outcome: {e}");
        }
    }
}
