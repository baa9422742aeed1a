use serde::{Deserialize, Serialize};

use super::{body, Params, StepSpec, PROP_ERROR, PROP_WORKFLOW};
use crate::error::{Error, Result};
use crate::kernel::{ItemId, ItemState};
use crate::model::ElementState;

/// Per-element copy of the pinned pipeline's step graph. Interventions edit
/// this copy, never the pipeline description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowInstance {
    pub steps: Vec<InstanceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceStep {
    pub spec: StepSpec,
    /// The pipeline's step item; absent for steps appended during a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_item: Option<ItemId>,
    /// Parameter values set by interventions, applied over the analysis params.
    #[serde(default, skip_serializing_if = "Params::is_empty")]
    pub params: Params,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub appended: bool,
}

impl WorkflowInstance {
    pub fn from_steps(steps: &[StepSpec], step_item: impl Fn(&str) -> Option<ItemId>) -> Self {
        WorkflowInstance {
            steps: steps
                .iter()
                .map(|s| InstanceStep {
                    step_item: step_item(&s.name),
                    spec: s.clone(),
                    params: Params::new(),
                    skipped: false,
                    appended: false,
                })
                .collect(),
        }
    }

    pub fn step(&self, name: &str) -> Option<&InstanceStep> {
        self.steps.iter().find(|s| s.spec.name == name)
    }

    pub fn step_mut(&mut self, name: &str) -> Option<&mut InstanceStep> {
        self.steps.iter_mut().find(|s| s.spec.name == name)
    }

    pub fn specs(&self) -> Vec<StepSpec> {
        self.steps.iter().map(|s| s.spec.clone()).collect()
    }

    /// Steps no other step depends on.
    pub fn sinks(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter(|s| {
                !self
                    .steps
                    .iter()
                    .any(|o| o.spec.depends_on.contains(&s.spec.name))
            })
            .map(|s| s.spec.name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementBody {
    pub analysis: ItemId,
    pub element: ItemId,
    /// Position of the element in the analysis' selection.
    pub index: usize,
}

/// Child of an analysis bound to one data element.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisElement {
    pub id: ItemId,
    pub analysis: ItemId,
    pub element: ItemId,
    pub index: usize,
    pub workflow: WorkflowInstance,
    pub state: ElementState,
    pub error: Option<String>,
}

impl AnalysisElement {
    pub fn from_state(st: &ItemState) -> Result<Self> {
        let b: ElementBody = body(st)?;
        let workflow = st
            .prop(PROP_WORKFLOW)
            .ok_or_else(|| Error::ValidationFailed(format!("{} has no workflow", st.id)))
            .and_then(|v| {
                WorkflowInstance::deserialize(v)
                    .map_err(|e| Error::ValidationFailed(format!("{}: {e}", st.id)))
            })?;
        Ok(AnalysisElement {
            id: st.id,
            analysis: b.analysis,
            element: b.element,
            index: b.index,
            workflow,
            state: st.state.as_deref().unwrap_or("Pending").parse()?,
            error: st.prop_str(PROP_ERROR).map(str::to_owned),
        })
    }
}
