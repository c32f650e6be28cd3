use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionPolicyConfig {
    /// A session ends after this many seconds without activity.
    pub inactivity_timeout_secs: i64,
}

impl Default for SessionPolicyConfig {
    fn default() -> Self {
        Self { inactivity_timeout_secs: 10 * 60 }
    }
}

impl SessionPolicyConfig {
    pub fn from_minutes(minutes: i64) -> Self {
        Self { inactivity_timeout_secs: minutes * 60 }
    }

    pub fn timeout(&self) -> Duration {
        Duration::seconds(self.inactivity_timeout_secs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inactivity_timeout_secs <= 0 {
            return Err(Error::InvalidConfig("session timeout must be positive".into()));
        }
        Ok(())
    }

    /// Whether a session last active at `last_activity` is still open at `now`.
    ///
    /// Exactly `timeout` of inactivity terminates the session.
    pub fn is_open(&self, last_activity: DateTime<Utc>, now: DateTime<Utc>) -> bool {
        now - last_activity < self.timeout()
    }
}
