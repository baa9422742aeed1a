//! In-memory step progress for one unit of work: an analysis element, or the
//! post-processing pass over a whole analysis.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde_json::{json, Value};

use super::job::{Job, JobId, JobResult, JobStatus};
use crate::kernel::ItemId;
use crate::model::{
    topo_order, ElementState, ForkSpec, InputSource, Params, StepSpec, WorkflowInstance,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
    Skipped,
}

impl StepStatus {
    fn is_done(self) -> bool {
        matches!(self, StepStatus::Succeeded | StepStatus::Skipped)
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    attempt: u32,
    finished: bool,
    succeeded: bool,
    outputs: Vec<String>,
    record: Option<ItemId>,
    ended_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone)]
struct StepProgress {
    status: StepStatus,
    slots: Vec<Slot>,
}

/// Values fixed for every job of one analysis.
pub(crate) struct JobContext<'a> {
    pub analysis: ItemId,
    pub params: &'a Params,
    pub env: &'a BTreeMap<String, String>,
    pub common_dirs: &'a [String],
    pub new_id: &'a dyn Fn() -> JobId,
}

/// Provenance facts known at dispatch time that the result alone lacks.
#[derive(Debug, Clone)]
pub(crate) struct DispatchMeta {
    pub links: Vec<ItemId>,
    pub input_elements: Vec<ItemId>,
    pub step_item: Option<ItemId>,
    /// Parameters changed by intervention: key -> (original, applied).
    pub intervened: BTreeMap<String, (Value, Value)>,
}

pub(crate) struct Dispatch {
    pub job: Job,
    pub meta: DispatchMeta,
}

pub(crate) enum Outcome {
    Settled,
    Retry,
}

#[derive(Debug, Clone)]
pub(crate) struct Unit {
    /// `None` for post-processing.
    pub analysis_element: Option<ItemId>,
    pub index: Option<usize>,
    pub workflow: WorkflowInstance,
    pub element_files: Vec<String>,
    pub input_elements: Vec<ItemId>,
    /// Links given to steps without dependencies.
    pub root_links: Vec<ItemId>,
    /// Earliest start of steps without dependencies.
    pub root_ready: Option<DateTime<Utc>>,
    pub state: ElementState,
    pub error: Option<String>,
    progress: BTreeMap<String, StepProgress>,
    running: usize,
}

impl Unit {
    pub fn new(
        analysis_element: Option<ItemId>,
        index: Option<usize>,
        workflow: WorkflowInstance,
        element_files: Vec<String>,
        input_elements: Vec<ItemId>,
        root_links: Vec<ItemId>,
    ) -> Self {
        Unit {
            analysis_element,
            index,
            workflow,
            element_files,
            input_elements,
            root_links,
            root_ready: None,
            state: ElementState::Pending,
            error: None,
            progress: BTreeMap::new(),
            running: 0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal()
    }

    /// Jobs still out at the executor.
    pub fn running(&self) -> usize {
        self.running
    }

    /// `None` when the workflow has no such step.
    pub fn step_status(&self, name: &str) -> Option<StepStatus> {
        self.workflow.step(name)?;
        Some(
            self.progress
                .get(name)
                .map_or(StepStatus::Pending, |p| p.status),
        )
    }

    pub fn cancel(&mut self, message: String) {
        if !self.is_terminal() {
            self.state = ElementState::Failed;
            self.error = Some(message);
        }
    }

    fn status(&self, name: &str) -> StepStatus {
        self.progress
            .get(name)
            .map_or(StepStatus::Pending, |p| p.status)
    }

    fn spec(&self, name: &str) -> &StepSpec {
        &self.workflow.step(name).expect("step exists").spec
    }

    fn default_inputs(&self, spec: &StepSpec) -> Vec<String> {
        if spec.depends_on.is_empty() {
            self.element_files.clone()
        } else {
            spec.depends_on
                .iter()
                .flat_map(|d| self.step_outputs(d))
                .collect()
        }
    }

    fn inputs_of(&self, spec: &StepSpec) -> Vec<String> {
        if spec.inputs.is_empty() {
            return self.default_inputs(spec);
        }
        spec.inputs
            .iter()
            .flat_map(|b| match &b.from {
                InputSource::Element => self.element_files.clone(),
                InputSource::Step(s) => self.step_outputs(s),
            })
            .collect()
    }

    /// Outputs of a finished step; a skipped step passes its inputs through.
    fn step_outputs(&self, name: &str) -> Vec<String> {
        match self.status(name) {
            StepStatus::Skipped => self.inputs_of(self.spec(name)),
            _ => self
                .progress
                .get(name)
                .into_iter()
                .flat_map(|p| p.slots.iter().flat_map(|s| s.outputs.iter().cloned()))
                .collect(),
        }
    }

    fn links_of(&self, spec: &StepSpec) -> Vec<ItemId> {
        if spec.depends_on.is_empty() {
            return self.root_links.clone();
        }
        let mut out = Vec::new();
        for d in &spec.depends_on {
            for l in self.step_links(d) {
                if !out.contains(&l) {
                    out.push(l);
                }
            }
        }
        out
    }

    fn step_links(&self, name: &str) -> Vec<ItemId> {
        match self.status(name) {
            StepStatus::Skipped => self.links_of(self.spec(name)),
            _ => self
                .progress
                .get(name)
                .into_iter()
                .flat_map(|p| p.slots.iter().filter_map(|s| s.record))
                .collect(),
        }
    }

    fn ready_at(&self, spec: &StepSpec) -> Option<DateTime<Utc>> {
        if spec.depends_on.is_empty() {
            return self.root_ready;
        }
        spec.depends_on
            .iter()
            .filter_map(|d| self.step_ended(d))
            .max()
    }

    fn step_ended(&self, name: &str) -> Option<DateTime<Utc>> {
        match self.status(name) {
            StepStatus::Skipped => self.ready_at(self.spec(name)),
            _ => self
                .progress
                .get(name)?
                .slots
                .iter()
                .filter_map(|s| s.ended_at)
                .max(),
        }
    }

    /// Dispatches every step whose dependencies are satisfied, marking
    /// skipped steps done on the way.
    pub fn advance(&mut self, ctx: &JobContext<'_>) -> Vec<Dispatch> {
        let mut out = Vec::new();
        if self.is_terminal() {
            return out;
        }
        let order = topo_order(&self.workflow.specs()).expect("workflow validated");
        loop {
            let mut changed = false;
            for &i in &order {
                let step = &self.workflow.steps[i];
                let name = step.spec.name.clone();
                if self.status(&name) != StepStatus::Pending
                    || !step
                        .spec
                        .depends_on
                        .iter()
                        .all(|d| self.status(d).is_done())
                {
                    continue;
                }
                changed = true;
                if step.skipped {
                    self.progress.insert(
                        name,
                        StepProgress {
                            status: StepStatus::Skipped,
                            slots: Vec::new(),
                        },
                    );
                    continue;
                }
                let dispatches = self.dispatch_step(i, ctx);
                out.extend(dispatches);
            }
            if !changed {
                break;
            }
        }
        if !out.is_empty() && self.state == ElementState::Pending {
            self.state = ElementState::Dispatched;
        }
        self.settle();
        out
    }

    fn dispatch_step(&mut self, i: usize, ctx: &JobContext<'_>) -> Vec<Dispatch> {
        let step = &self.workflow.steps[i];
        let spec = &step.spec;
        let inputs = self.inputs_of(spec);
        let (width, split) = match spec.fork {
            None => (1, false),
            Some(ForkSpec::Width(n)) => (n.max(1), false),
            Some(ForkSpec::PerInputList) => (inputs.len().max(1) as u32, true),
        };
        let mut params = ctx.params.clone();
        let mut intervened = BTreeMap::new();
        for (k, v) in &step.params {
            let original = ctx.params.get(k).cloned().unwrap_or(Value::Null);
            intervened.insert(k.clone(), (original, v.clone()));
            params.insert(k.clone(), v.clone());
        }
        let not_before = self.ready_at(spec);
        let meta = DispatchMeta {
            links: self.links_of(spec),
            input_elements: self.input_elements.clone(),
            step_item: step.step_item,
            intervened,
        };
        let mut out = Vec::with_capacity(width as usize);
        for fork in 0..width {
            let mut params = params.clone();
            if width > 1 {
                params.insert("fork_index".into(), json!(fork));
                params.insert("fork_width".into(), json!(width));
            }
            let job_inputs = if split {
                inputs.get(fork as usize).cloned().into_iter().collect()
            } else {
                inputs.clone()
            };
            out.push(Dispatch {
                job: Job {
                    id: (ctx.new_id)(),
                    analysis: ctx.analysis,
                    analysis_element: self.analysis_element,
                    element_index: self.index,
                    step: spec.name.clone(),
                    fork_index: fork,
                    fork_width: width,
                    attempt: 1,
                    script_ref: spec.script_ref.clone(),
                    params,
                    inputs: job_inputs,
                    env: ctx.env.clone(),
                    common_dirs: ctx.common_dirs.to_vec(),
                    not_before,
                },
                meta: meta.clone(),
            });
        }
        let name = spec.name.clone();
        self.progress.insert(
            name,
            StepProgress {
                status: StepStatus::Running,
                slots: vec![
                    Slot {
                        attempt: 1,
                        ..Slot::default()
                    };
                    width as usize
                ],
            },
        );
        self.running += width as usize;
        out
    }

    /// Applies a result whose provenance record is `record`. `Retry` asks the
    /// caller to resubmit the job with the next attempt number.
    pub fn on_result(
        &mut self,
        job: &Job,
        result: &JobResult,
        record: ItemId,
        max_attempts: u32,
    ) -> Outcome {
        self.running = self.running.saturating_sub(1);
        let terminal = self.is_terminal();
        let Some(progress) = self.progress.get_mut(&job.step) else {
            return Outcome::Settled;
        };
        let Some(slot) = progress.slots.get_mut(job.fork_index as usize) else {
            return Outcome::Settled;
        };
        slot.record = Some(record);
        slot.ended_at = Some(result.ended_at);
        if result.status == JobStatus::Succeeded {
            slot.finished = true;
            slot.succeeded = true;
            slot.outputs = result.outputs.clone();
            if progress.slots.iter().all(|s| s.succeeded) {
                progress.status = StepStatus::Succeeded;
            }
        } else if job.attempt < max_attempts && !terminal {
            slot.attempt = job.attempt + 1;
            self.running += 1;
            return Outcome::Retry;
        } else {
            slot.finished = true;
            progress.status = StepStatus::Failed;
            if !terminal {
                self.state = ElementState::Failed;
                let msg = result
                    .error
                    .as_ref()
                    .map_or("job failed", |e| e.message.as_str());
                self.error = Some(format!("step `{}` failed: {msg}", job.step));
            }
        }
        self.settle();
        Outcome::Settled
    }

    fn settle(&mut self) {
        if self.is_terminal() {
            return;
        }
        if self
            .workflow
            .steps
            .iter()
            .all(|s| self.status(&s.spec.name).is_done())
        {
            self.state = ElementState::Succeeded;
        }
    }
}
