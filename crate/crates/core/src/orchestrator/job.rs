use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use crate::kernel::ItemId;
use crate::model::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(Uuid);

impl JobId {
    pub fn from_uuid(u: Uuid) -> Self {
        JobId(u)
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.hyphenated().fmt(f)
    }
}

/// One dispatchable unit of work: a single step (or fork slot) for a single
/// analysis element, with every parameter bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub analysis: ItemId,
    /// `None` for post-processing jobs, which run over the whole analysis.
    pub analysis_element: Option<ItemId>,
    pub element_index: Option<usize>,
    pub step: String,
    pub fork_index: u32,
    pub fork_width: u32,
    pub attempt: u32,
    pub script_ref: String,
    pub params: Params,
    pub inputs: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub common_dirs: Vec<String>,
    /// When the last upstream result ended. Executors that simulate time
    /// start the job no earlier than this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_before: Option<DateTime<Utc>>,
}

impl Job {
    /// Arguments passed to the step script: `--key value` for every
    /// parameter in key order, then the input locators.
    pub fn args(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.params.len() * 2 + self.inputs.len());
        for (k, v) in &self.params {
            out.push(format!("--{k}"));
            out.push(match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            });
        }
        out.extend(self.inputs.iter().cloned());
        out
    }

    /// Stable key used to derive simulated behaviour independent of ids.
    pub fn sim_key(&self) -> String {
        let unit = self
            .element_index
            .map_or_else(|| "post".to_owned(), |i| i.to_string());
        format!("{unit}/{}/{}/{}", self.step, self.fork_index, self.attempt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobError {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_status: Option<i32>,
    pub message: String,
}

impl JobError {
    pub fn new(message: impl Into<String>) -> Self {
        JobError {
            exit_status: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub job_id: JobId,
    pub status: JobStatus,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    pub resource: String,
    pub outputs: Vec<String>,
    pub error: Option<JobError>,
    pub stdout_tail: String,
    pub stderr_tail: String,
}

impl JobResult {
    pub fn failed(job: &Job, at: DateTime<Utc>, resource: &str, error: JobError) -> Self {
        JobResult {
            job_id: job.id,
            status: JobStatus::Failed,
            started_at: at,
            ended_at: at,
            resource: resource.to_owned(),
            outputs: Vec::new(),
            error: Some(error),
            stdout_tail: String::new(),
            stderr_tail: String::new(),
        }
    }

    /// Enforces `ended_at >= started_at` and `Failed => error`.
    pub(crate) fn normalized(mut self) -> Self {
        if self.ended_at < self.started_at {
            self.ended_at = self.started_at;
        }
        if self.status == JobStatus::Failed {
            match &mut self.error {
                None => self.error = Some(JobError::new("job failed")),
                Some(e) if e.message.trim().is_empty() => e.message = "job failed".into(),
                _ => {}
            }
        }
        self
    }
}
