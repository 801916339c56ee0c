use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the event log. `time` is a logical clock that counts events,
/// so identical runs produce identical logs. Resume markers do not advance
/// the clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: u64,
    pub iteration: usize,
    pub phase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub const RESUME_ACTION: &str = "resume";
pub const RUN_PHASE: &str = "run";

impl Event {
    pub fn is_resume_marker(&self) -> bool {
        self.phase == RUN_PHASE && self.action == RESUME_ACTION
    }

    pub fn new(iteration: usize, phase: &str, action: &str) -> Self {
        Event {
            time: 0,
            iteration,
            phase: phase.into(),
            network: None,
            group: None,
            action: action.into(),
            metric: None,
            detail: None,
        }
    }

    pub fn network(mut self, network: &str) -> Self {
        self.network = Some(network.into());
        self
    }

    pub fn group(mut self, group: usize) -> Self {
        self.group = Some(group);
        self
    }

    pub fn metric(mut self, metric: f64) -> Self {
        self.metric = Some(metric);
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Append-only event log kept in memory and optionally mirrored to a
/// line-delimited JSON file.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Vec<Event>,
    clock: u64,
    sink: Option<(PathBuf, File)>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog::default()
    }

    /// Starts a fresh log file, truncating any previous content.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(EventLog { events: Vec::new(), clock: 0, sink: Some((path.to_path_buf(), file)) })
    }

    /// Reopens a log, keeping only its first `keep` records and appending after them.
    pub fn reopen(path: &Path, keep: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut events: Vec<Event> = Vec::with_capacity(keep);
        for line in BufReader::new(file).lines().take(keep) {
            let line = line.map_err(|e| Error::io(path, e))?;
            events.push(serde_json::from_str(&line)?);
        }
        if events.len() < keep {
            return Err(Error::PipelineState(format!(
                "{}: expected at least {keep} events, found {}",
                path.display(),
                events.len()
            )));
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &events {
            writeln!(file, "{}", serde_json::to_string(e)?).map_err(|err| Error::io(path, err))?;
        }
        let clock = events.iter().filter(|e| !e.is_resume_marker()).count() as u64;
        Ok(EventLog {
            events,
            clock,
            sink: Some((
                path.to_path_buf(),
                OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?,
            )),
        })
    }

    pub fn push(&mut self, mut event: Event) -> Result<()> {
        event.time = self.clock;
        if !event.is_resume_marker() {
            self.clock += 1;
        }
        if let Some((path, file)) = &mut self.sink {
            writeln!(file, "{}", serde_json::to_string(&event)?).map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, file)) = &mut self.sink {
            file.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }
}

/// Reads every record of a log file.
pub fn read_log(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
