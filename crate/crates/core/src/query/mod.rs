//! Read-side queries over a consistent snapshot of the store.

mod lineage;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use self::lineage::{lineage, Direction, Edge, LineageGraph, NodeKind, NodeRef, Relation};
use crate::error::{Error, Result};
use crate::kernel::{ActorId, ActorRef, ItemId, Kernel, Payload, StoreState, VersionNumber};
use crate::model::{
    self, type_of, AnalysisState, PROP_BODY, TYPE_ANALYSIS, TYPE_DATASET, TYPE_DATA_ELEMENT,
};
use crate::orchestrator::{records_of, StoredRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Eq,
    Neq,
    Lt,
    Lte,
    Gt,
    Gte,
    Contains,
}

/// One conjunct of a metadata query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub attribute: String,
    pub op: Op,
    pub value: Value,
}

impl Constraint {
    pub fn new(attribute: impl Into<String>, op: Op, value: impl Into<Value>) -> Self {
        Constraint {
            attribute: attribute.into(),
            op,
            value: value.into(),
        }
    }

    fn malformed(&self, why: &str) -> Error {
        Error::MalformedConstraint(format!(
            "{} {:?} {}: {why}",
            self.attribute, self.op, self.value
        ))
    }

    /// Checks the constraint on its own, before any data is seen.
    pub fn validate(&self) -> Result<()> {
        if self.attribute.trim().is_empty() {
            return Err(self.malformed("empty attribute"));
        }
        match (&self.op, &self.value) {
            (_, Value::Array(_) | Value::Object(_)) => {
                Err(self.malformed("value must be a scalar"))
            }
            (Op::Lt | Op::Lte | Op::Gt | Op::Gte, v) if !v.is_number() && !v.is_string() => {
                Err(self.malformed("ordering needs a number or text"))
            }
            (Op::Contains, Value::Null) => Err(self.malformed("contains needs a value")),
            _ => Ok(()),
        }
    }

    /// Evaluates against one attribute value. An absent attribute never
    /// matches; an ordering between different types is an error.
    pub fn matches(&self, attr: Option<&Value>) -> Result<bool> {
        let Some(attr) = attr else {
            return Ok(false);
        };
        let want = &self.value;
        Ok(match self.op {
            Op::Eq => scalar_eq(attr, want),
            Op::Neq => !scalar_eq(attr, want),
            Op::Lt | Op::Lte | Op::Gt | Op::Gte => {
                let ord = match (attr, want) {
                    (Value::Number(a), Value::Number(b)) => a
                        .as_f64()
                        .partial_cmp(&b.as_f64())
                        .unwrap_or(Ordering::Equal),
                    (Value::String(a), Value::String(b)) => a.cmp(b),
                    _ => {
                        return Err(
                            self.malformed(&format!("attribute value {attr} has another type"))
                        )
                    }
                };
                match self.op {
                    Op::Lt => ord == Ordering::Less,
                    Op::Lte => ord != Ordering::Greater,
                    Op::Gt => ord == Ordering::Greater,
                    _ => ord != Ordering::Less,
                }
            }
            Op::Contains => match (attr, want) {
                (Value::String(a), Value::String(b)) => a.contains(b.as_str()),
                (Value::Array(items), _) => items.iter().any(|i| scalar_eq(i, want)),
                (Value::String(_), _) => {
                    return Err(self.malformed("text contains needs a text value"))
                }
                _ => {
                    return Err(
                        self.malformed(&format!("attribute value {attr} is not text or a list"))
                    )
                }
            },
        })
    }
}

fn scalar_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        _ => a == b,
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Eq => "eq",
            Op::Neq => "neq",
            Op::Lt => "lt",
            Op::Lte => "lte",
            Op::Gt => "gt",
            Op::Gte => "gte",
            Op::Contains => "contains",
        })
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_owned()))
            .map_err(|_| Error::MalformedConstraint(format!("unknown operator `{s}`")))
    }
}

impl FromStr for Constraint {
    type Err = Error;

    /// Parses `attribute op value`, e.g. `age gte 70` or `site eq "MNI"`.
    /// The value is read as JSON when it parses, as text otherwise.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().splitn(3, char::is_whitespace);
        let (Some(attribute), Some(op), Some(value)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::MalformedConstraint(format!(
                "expected `attribute op value`, got `{s}`"
            )));
        };
        let value = value.trim();
        let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_owned()));
        let c = Constraint::new(attribute, op.parse()?, value);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementMatch {
    pub id: ItemId,
    pub dataset: ItemId,
    pub metadata: BTreeMap<String, Value>,
    pub files: Vec<String>,
}

/// Data elements, of one dataset or of all, whose metadata satisfies every
/// constraint. Sorted by id.
pub fn find_data_elements(
    s: &StoreState,
    dataset: Option<ItemId>,
    constraints: &[Constraint],
) -> Result<Vec<ElementMatch>> {
    constraints.iter().try_for_each(Constraint::validate)?;
    let candidates: &[ItemId] = match dataset {
        Some(ds) => {
            model::dataset(s, ds)?;
            s.children(&ds)
        }
        None => s.of_type(TYPE_DATA_ELEMENT),
    };
    let mut out = Vec::new();
    for id in candidates {
        let Some(st) = s
            .item(id)
            .filter(|st| type_of(st) == Some(TYPE_DATA_ELEMENT))
        else {
            continue;
        };
        let meta = st.prop(PROP_BODY).and_then(|b| b.get("metadata"));
        let mut ok = true;
        for c in constraints {
            if !c.matches(meta.and_then(|m| m.get(&c.attribute)))? {
                ok = false;
                break;
            }
        }
        if ok {
            let de = model::data_element(s, *id)?;
            out.push(ElementMatch {
                id: de.id,
                dataset: de.dataset,
                metadata: de.metadata,
                files: de.files,
            });
        }
    }
    out.sort_by_key(|m| m.id);
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFilter {
    #[serde(default)]
    pub owner: Option<ActorId>,
    #[serde(default)]
    pub state: Option<AnalysisState>,
    #[serde(default)]
    pub pipeline: Option<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub id: ItemId,
    pub owner: ActorId,
    pub pipeline: ItemId,
    pub pipeline_version: VersionNumber,
    pub dataset: ItemId,
    pub elements: usize,
    pub state: AnalysisState,
    pub created_at: DateTime<Utc>,
    pub cloned_from: Option<ItemId>,
}

/// Analyses visible to `viewer` matching every set filter field, by id.
pub fn list_analyses(
    s: &StoreState,
    viewer: &ActorId,
    filter: &AnalysisFilter,
) -> Vec<AnalysisSummary> {
    let mut out: Vec<AnalysisSummary> = s
        .of_type(TYPE_ANALYSIS)
        .iter()
        .filter_map(|id| model::analysis(s, *id).ok())
        .filter(|a| a.visible_to(viewer))
        .filter(|a| filter.owner.as_ref().is_none_or(|o| *o == a.def.owner))
        .filter(|a| filter.state.is_none_or(|st| st == a.state))
        .filter(|a| filter.pipeline.is_none_or(|p| p == a.def.pipeline))
        .map(|a| AnalysisSummary {
            id: a.id,
            owner: a.def.owner,
            pipeline: a.def.pipeline,
            pipeline_version: a.def.pipeline_version,
            dataset: a.def.dataset,
            elements: a.def.element_ids.len(),
            state: a.state,
            created_at: a.created_at,
            cloned_from: a.def.cloned_from,
        })
        .collect();
    out.sort_by_key(|a| a.id);
    out
}

/// The stored content of one pipeline version, exactly as registered.
pub fn get_workflow_version(s: &StoreState, pipeline: ItemId, version: u32) -> Result<Value> {
    let st = model::pipeline_state(s, pipeline)?;
    VersionNumber::new(version)
        .and_then(|v| st.version(v))
        .cloned()
        .ok_or(Error::UnknownVersion { pipeline, version })
}

/// Every provenance record of an analysis, the whole-run record included,
/// ordered by start time then id.
pub fn job_results(
    s: &StoreState,
    analysis: ItemId,
    viewer: &ActorId,
) -> Result<Vec<StoredRecord>> {
    let a = model::analysis(s, analysis)?;
    if !a.visible_to(viewer) {
        return Err(Error::NotVisible(analysis));
    }
    let mut recs = records_of(s, analysis);
    recs.sort_by(|x, y| {
        x.record
            .started_at
            .cmp(&y.record.started_at)
            .then(x.id.cmp(&y.id))
    });
    Ok(recs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UsageTarget {
    PipelineVersion {
        pipeline: ItemId,
        version: VersionNumber,
    },
    Dataset {
        id: ItemId,
    },
    DataElement {
        id: ItemId,
    },
}

impl FromStr for UsageTarget {
    type Err = Error;

    /// `pipeline:<id>@<v>`, `dataset:<id>` or `element:<id>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownTarget(s.to_owned());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "pipeline" => {
                let (id, v) = rest.split_once('@').ok_or_else(bad)?;
                Ok(UsageTarget::PipelineVersion {
                    pipeline: id.parse().map_err(|_| bad())?,
                    version: v
                        .parse::<u32>()
                        .ok()
                        .and_then(VersionNumber::new)
                        .ok_or_else(bad)?,
                })
            }
            "dataset" => Ok(UsageTarget::Dataset {
                id: rest.parse().map_err(|_| bad())?,
            }),
            "element" => Ok(UsageTarget::DataElement {
                id: rest.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for UsageTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UsageTarget::PipelineVersion { pipeline, version } => {
                write!(f, "pipeline:{pipeline}@{version}")
            }
            UsageTarget::Dataset { id } => write!(f, "dataset:{id}"),
            UsageTarget::DataElement { id } => write!(f, "element:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageRow {
    pub analysis: ItemId,
    pub owner: ActorId,
    pub state: AnalysisState,
    pub pipeline: ItemId,
    pub pipeline_version: VersionNumber,
    pub created_at: DateTime<Utc>,
    pub run_started: Option<DateTime<Utc>>,
    pub run_ended: Option<DateTime<Utc>>,
}

/// Analyses referencing `target` that `viewer` may see, by analysis id.
pub fn usage(s: &StoreState, target: &UsageTarget, viewer: &ActorId) -> Result<Vec<UsageRow>> {
    let unknown = || Error::UnknownTarget(target.to_string());
    let (anchor, expect_type) = match target {
        UsageTarget::PipelineVersion { pipeline, version } => {
            let st = model::pipeline_state(s, *pipeline).map_err(|_| unknown())?;
            st.version(*version).ok_or_else(unknown)?;
            (*pipeline, None)
        }
        UsageTarget::Dataset { id } => (*id, Some(TYPE_DATASET)),
        UsageTarget::DataElement { id } => (*id, Some(TYPE_DATA_ELEMENT)),
    };
    if let Some(t) = expect_type {
        s.item(&anchor)
            .filter(|st| type_of(st) == Some(t))
            .ok_or_else(unknown)?;
    }
    let mut rows: Vec<UsageRow> = s
        .referrers(&anchor)
        .iter()
        .filter_map(|id| model::analysis(s, *id).ok())
        .filter(|a| match target {
            UsageTarget::PipelineVersion { version, .. } => a.def.pipeline_version == *version,
            _ => true,
        })
        .filter(|a| a.visible_to(viewer))
        .map(|a| {
            let (run_started, run_ended) = run_times(s, a.id);
            UsageRow {
                analysis: a.id,
                owner: a.def.owner,
                state: a.state,
                pipeline: a.def.pipeline,
                pipeline_version: a.def.pipeline_version,
                created_at: a.created_at,
                run_started,
                run_ended,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.analysis);
    rows.dedup_by_key(|r| r.analysis);
    Ok(rows)
}

/// Times of the transition into Running and into a terminal state.
pub(crate) fn run_times(
    s: &StoreState,
    analysis: ItemId,
) -> (Option<DateTime<Utc>>, Option<DateTime<Utc>>) {
    let mut started = None;
    let mut ended = None;
    for e in s.item_events(&analysis) {
        if let Payload::StateTransition { to, .. } = &e.payload {
            match to.parse::<AnalysisState>() {
                Ok(AnalysisState::Running) => started = Some(e.at),
                Ok(st) if st.is_terminal() => ended = Some(e.at),
                _ => {}
            }
        }
    }
    (started, ended)
}

/// Query facade bound to a kernel; each call reads one snapshot.
#[derive(Debug, Clone)]
pub struct QueryService {
    kernel: Arc<Kernel>,
}

impl QueryService {
    pub fn new(kernel: Arc<Kernel>) -> Self {
        QueryService { kernel }
    }

    pub fn find_data_elements(
        &self,
        dataset: Option<ItemId>,
        constraints: &[Constraint],
    ) -> Result<Vec<ElementMatch>> {
        self.kernel
            .read(|s| find_data_elements(s, dataset, constraints))
    }

    pub fn list_analyses(
        &self,
        viewer: &ActorRef,
        filter: &AnalysisFilter,
    ) -> Vec<AnalysisSummary> {
        self.kernel.read(|s| list_analyses(s, &viewer.id, filter))
    }

    pub fn get_workflow_version(&self, pipeline: ItemId, version: u32) -> Result<Value> {
        self.kernel
            .read(|s| get_workflow_version(s, pipeline, version))
    }

    pub fn job_results(&self, analysis: ItemId, viewer: &ActorRef) -> Result<Vec<StoredRecord>> {
        self.kernel.read(|s| job_results(s, analysis, &viewer.id))
    }

    pub fn lineage(
        &self,
        node: &NodeRef,
        direction: Direction,
        depth: Option<usize>,
    ) -> Result<LineageGraph> {
        self.kernel.read(|s| lineage(s, node, direction, depth))
    }

    pub fn usage(&self, target: &UsageTarget, viewer: &ActorRef) -> Result<Vec<UsageRow>> {
        self.kernel.read(|s| usage(s, target, &viewer.id))
    }
}
