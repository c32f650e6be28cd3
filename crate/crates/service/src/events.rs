//! Append-only JSON-lines event log.
//!
//! Each line records one state change that succeeded. Replaying the lines in
//! order against an empty state rebuilds the service exactly.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use wikisurvey_core::estimator::ModelConfig;
use wikisurvey_core::report::{Diagnostics, ResultsDocument};
use wikisurvey_core::{
    AppearanceId, Choice, ItemId, ItemState, SessionId, SubmissionId, SurveyConfig, SurveyId,
};

use crate::jobs::{JobId, JobState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SurveyCreated {
        survey_id: SurveyId,
        question: String,
        seed_items: Vec<String>,
        config: SurveyConfig,
        creator_token: String,
        at: DateTime<Utc>,
    },
    SessionResolved {
        survey_id: SurveyId,
        token: String,
        session_id: SessionId,
        at: DateTime<Utc>,
    },
    PromptServed {
        session_id: SessionId,
        appearance_id: AppearanceId,
        left: ItemId,
        right: ItemId,
        at: DateTime<Utc>,
    },
    ResponseRecorded {
        appearance_id: AppearanceId,
        choice: Choice,
        at: DateTime<Utc>,
    },
    IdeaSubmitted {
        survey_id: SurveyId,
        session_id: SessionId,
        submission_id: SubmissionId,
        text: String,
        at: DateTime<Utc>,
    },
    IdeaModerated {
        submission_id: SubmissionId,
        activate: bool,
    },
    ItemStateSet {
        survey_id: SurveyId,
        item_id: ItemId,
        state: ItemState,
    },
    JobQueued {
        job_id: JobId,
        survey_id: SurveyId,
        config: ModelConfig,
        votes: usize,
        items: usize,
        sessions: usize,
        at: DateTime<Utc>,
    },
    JobStarted {
        job_id: JobId,
        at: DateTime<Utc>,
    },
    JobFinished {
        job_id: JobId,
        state: JobState,
        results: Option<Box<ResultsDocument>>,
        diagnostics: Option<Box<Diagnostics>>,
        error: Option<String>,
        at: DateTime<Utc>,
    },
}

#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
    appended: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self { path: None, writer: None, appended: 0 }
    }

    /// Opens `path` for appending, creating parent directories as needed.
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self { path: Some(path.to_owned()), writer: Some(BufWriter::new(file)), appended: 0 })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn appended(&self) -> u64 {
        self.appended
    }

    pub fn append(&mut self, event: &Event) -> anyhow::Result<()> {
        if let Some(w) = self.writer.as_mut() {
            serde_json::to_writer(&mut *w, event)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.appended += 1;
        Ok(())
    }
}

/// Cuts off a final line that does not hold a complete event, so appends
/// after a crash start on a fresh line.
pub fn repair_tail(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let start = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if start == bytes.len() {
        return Ok(());
    }
    let complete = serde_json::from_slice::<Event>(&bytes[start..]).is_ok();
    let file = OpenOptions::new().write(true).open(path)?;
    if complete {
        drop(file);
        OpenOptions::new().append(true).open(path)?.write_all(b"\n")?;
    } else {
        file.set_len(start as u64)?;
    }
    Ok(())
}

/// Reads every event in `path`. A final line cut short by a crash is
/// ignored; a malformed line anywhere else is an error.
pub fn read_events(path: &Path) -> anyhow::Result<Vec<Event>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let last = lines.len().saturating_sub(1);
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => events.push(e),
            Err(_) if i == last => break,
            Err(e) => anyhow::bail!("{}:{}: {e}", path.display(), i + 1),
        }
    }
    Ok(events)
}
