use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::job::{JobError, JobId, JobStatus};
use crate::error::{Error, Result};
use crate::kernel::{ItemId, StoreState, VersionNumber};
use crate::model::{
    body, type_of, AnalysisState, Params, WorkflowInstance, TYPE_PROVENANCE_RECORD,
};

/// Step name of the record describing a whole analysis run.
pub const WORKFLOW_STEP: &str = "<workflow>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervened {
    pub original: Value,
    pub value: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordInputs {
    pub files: Vec<String>,
    pub params: Params,
    /// Data elements whose files fed this job.
    pub elements: Vec<ItemId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub intervened: BTreeMap<String, Intervened>,
}

/// Immutable account of one job attempt, or of a whole analysis run when
/// `step` is [`WORKFLOW_STEP`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub analysis: ItemId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_element: Option<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<ItemId>,
    pub step: String,
    pub attempt: u32,
    pub fork_index: u32,
    pub fork_width: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<JobId>,
    pub pipeline: ItemId,
    pub pipeline_version: VersionNumber,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_ref: Option<String>,
    pub inputs: RecordInputs,
    pub outputs: Vec<String>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    pub duration_ms: f64,
    pub resource: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
    pub links: Vec<ItemId>,
    /// Final analysis state; workflow records only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_state: Option<AnalysisState>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stdout_tail: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stderr_tail: String,
}

impl ProvenanceRecord {
    pub fn is_workflow(&self) -> bool {
        self.step == WORKFLOW_STEP
    }

    pub fn is_post_processing(&self) -> bool {
        self.analysis_element.is_none() && !self.is_workflow()
    }
}

pub(crate) fn duration_ms(start: DateTime<Utc>, end: DateTime<Utc>) -> f64 {
    (end - start).num_nanoseconds().unwrap_or(i64::MAX) as f64 / 1e6
}

/// A record together with its item id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoredRecord {
    pub id: ItemId,
    #[serde(flatten)]
    pub record: ProvenanceRecord,
}

/// Link to the aggregated result of an analysis, attached to the analysis item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub analysis: ItemId,
    pub result_link: String,
    pub produced_by: Vec<ItemId>,
    pub registered_at: DateTime<Utc>,
}

pub fn record(s: &StoreState, id: ItemId) -> Result<StoredRecord> {
    let st = s
        .item(&id)
        .filter(|st| type_of(st) == Some(TYPE_PROVENANCE_RECORD))
        .ok_or(Error::UnknownItem(id))?;
    Ok(StoredRecord {
        id,
        record: body(st)?,
    })
}

/// All records of an analysis, in write order.
pub fn records_of(s: &StoreState, analysis: ItemId) -> Vec<StoredRecord> {
    s.children(&analysis)
        .iter()
        .filter_map(|c| record(s, *c).ok())
        .collect()
}

pub fn outcome_of(s: &StoreState, analysis: ItemId) -> Option<OutcomeRecord> {
    let st = s.item(&analysis)?;
    st.outcomes
        .last()
        .and_then(|v| OutcomeRecord::deserialize(v).ok())
}

/// The records that close a unit's run: for each (step, fork slot) the latest
/// attempt, restricted to steps none of whose transitive dependents produced
/// a record. Ordered by workflow position, then fork slot.
pub(crate) fn frontier(
    workflow: &WorkflowInstance,
    records: &[&StoredRecord],
) -> Vec<StoredRecord> {
    let mut latest: BTreeMap<(&str, u32), &StoredRecord> = BTreeMap::new();
    for r in records {
        let key = (r.record.step.as_str(), r.record.fork_index);
        match latest.get(&key) {
            Some(prev) if prev.record.attempt >= r.record.attempt => {}
            _ => {
                latest.insert(key, r);
            }
        }
    }
    let recorded: BTreeSet<&str> = latest.keys().map(|(s, _)| *s).collect();
    let dependents = |name: &str| -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![name.to_owned()];
        while let Some(n) = stack.pop() {
            for s in &workflow.steps {
                if s.spec.depends_on.contains(&n) && out.insert(s.spec.name.clone()) {
                    stack.push(s.spec.name.clone());
                }
            }
        }
        out
    };
    let mut out = Vec::new();
    for s in &workflow.steps {
        let name = s.spec.name.as_str();
        if !recorded.contains(name)
            || dependents(name)
                .iter()
                .any(|d| recorded.contains(d.as_str()))
        {
            continue;
        }
        out.extend(
            latest
                .range((name, 0)..=(name, u32::MAX))
                .map(|(_, r)| (*r).clone()),
        );
    }
    out
}
