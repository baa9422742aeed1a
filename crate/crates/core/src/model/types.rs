use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kernel::{ActorId, Annotation, ItemId, VersionNumber};

/// Resolved or override parameter map.
pub type Params = BTreeMap<String, Value>;

/// Versioned workflow description content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub name: String,
    pub steps: Vec<StepSpec>,
    #[serde(default)]
    pub default_env: BTreeMap<String, String>,
    #[serde(default)]
    pub common_dirs: Vec<String>,
    #[serde(default)]
    pub param_schema: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub name: String,
    pub script_ref: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork: Option<ForkSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
}

impl StepSpec {
    pub fn new(name: impl Into<String>, script_ref: impl Into<String>) -> Self {
        StepSpec {
            name: name.into(),
            script_ref: script_ref.into(),
            inputs: Vec::new(),
            fork: None,
            depends_on: Vec::new(),
        }
    }

    pub fn after(mut self, dep: impl Into<String>) -> Self {
        self.depends_on.push(dep.into());
        self
    }

    pub fn forked(mut self, fork: ForkSpec) -> Self {
        self.fork = Some(fork);
        self
    }

    pub fn input(mut self, name: impl Into<String>, from: InputSource) -> Self {
        self.inputs.push(InputBinding {
            name: name.into(),
            from,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBinding {
    pub name: String,
    pub from: InputSource,
}

/// Where a step input comes from: `"element"` (the data element's files) or
/// `"step:<name>"` (the outputs of an upstream step).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    Element,
    Step(String),
}

impl fmt::Display for InputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSource::Element => f.write_str("element"),
            InputSource::Step(s) => write!(f, "step:{s}"),
        }
    }
}

impl FromStr for InputSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "element" => Ok(InputSource::Element),
            _ => match s.strip_prefix("step:") {
                Some(name) if !name.is_empty() => Ok(InputSource::Step(name.to_owned())),
                _ => Err(Error::ValidationFailed(format!("bad input source `{s}`"))),
            },
        }
    }
}

impl Serialize for InputSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InputSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Fan width of a forking step: a fixed number of parallel jobs, or one job
/// per input locator (`"per-input-list"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForkSpec {
    Width(u32),
    PerInputList,
}

const PER_INPUT_LIST: &str = "per-input-list";

impl Serialize for ForkSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ForkSpec::Width(n) => s.serialize_u32(*n),
            ForkSpec::PerInputList => s.serialize_str(PER_INPUT_LIST),
        }
    }
}

impl<'de> Deserialize<'de> for ForkSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Width(u32),
            Mode(String),
        }
        match Raw::deserialize(d)? {
            Raw::Width(n) => Ok(ForkSpec::Width(n)),
            Raw::Mode(m) if m == PER_INPUT_LIST => Ok(ForkSpec::PerInputList),
            Raw::Mode(m) => Err(serde::de::Error::custom(format!("unknown fork mode `{m}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Text,
    Integer,
    Real,
    Boolean,
    /// A file locator.
    File,
}

impl ParamType {
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::Text => v.is_string(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Real => v.is_number(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::File => v.as_str().is_some_and(|s| !s.is_empty()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default)]
    pub schema_note: String,
    pub elements: Vec<DataElementSpec>,
}

/// Files processed together in one job, plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataElementSpec {
    pub files: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub id: ItemId,
    pub name: String,
    pub schema_note: String,
    /// In registration order.
    pub elements: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataElement {
    pub id: ItemId,
    pub dataset: ItemId,
    pub files: Vec<String>,
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnalysisState {
    Defined,
    Running,
    Completed,
    PartiallyFailed,
    Failed,
}

impl AnalysisState {
    pub const ALL: [AnalysisState; 5] = [
        AnalysisState::Defined,
        AnalysisState::Running,
        AnalysisState::Completed,
        AnalysisState::PartiallyFailed,
        AnalysisState::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisState::Defined => "Defined",
            AnalysisState::Running => "Running",
            AnalysisState::Completed => "Completed",
            AnalysisState::PartiallyFailed => "PartiallyFailed",
            AnalysisState::Failed => "Failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            AnalysisState::Completed | AnalysisState::PartiallyFailed | AnalysisState::Failed
        )
    }
}

impl fmt::Display for AnalysisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnalysisState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnalysisState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::ValidationFailed(format!("unknown analysis state `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementState {
    Pending,
    Dispatched,
    Succeeded,
    Failed,
}

impl ElementState {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementState::Pending => "Pending",
            ElementState::Dispatched => "Dispatched",
            ElementState::Succeeded => "Succeeded",
            ElementState::Failed => "Failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ElementState::Succeeded | ElementState::Failed)
    }
}

impl fmt::Display for ElementState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElementState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ElementState::Pending,
            ElementState::Dispatched,
            ElementState::Succeeded,
            ElementState::Failed,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| Error::ValidationFailed(format!("unknown element state `{s}`")))
    }
}

/// Request to create an analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub pipeline: ItemId,
    /// Latest version when absent.
    #[serde(default)]
    pub version: Option<VersionNumber>,
    pub dataset: ItemId,
    pub element_ids: Vec<ItemId>,
    #[serde(default)]
    pub overrides: Params,
    #[serde(default)]
    pub post_processing: Option<Vec<StepSpec>>,
}

/// Fields of an analysis fixed at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDef {
    pub owner: ActorId,
    pub pipeline: ItemId,
    pub pipeline_version: VersionNumber,
    pub dataset: ItemId,
    pub element_ids: Vec<ItemId>,
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_processing: Option<Vec<StepSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloned_from: Option<ItemId>,
}

/// Partial analysis content for [`crate::model::Registry::clone_analysis`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisChanges {
    #[serde(default)]
    pub element_ids: Option<Vec<ItemId>>,
    /// Merged over the source's resolved parameters.
    #[serde(default)]
    pub overrides: Option<Params>,
    #[serde(default)]
    pub post_processing: Option<Vec<StepSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub id: ItemId,
    #[serde(flatten)]
    pub def: AnalysisDef,
    pub state: AnalysisState,
    pub shared_with: BTreeSet<ActorId>,
    pub annotations: Vec<Annotation>,
    pub created_at: DateTime<Utc>,
}

impl Analysis {
    pub fn visible_to(&self, actor: &ActorId) -> bool {
        self.def.owner == *actor || self.shared_with.contains(actor)
    }
}
