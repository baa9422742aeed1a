//! Runs analyses: one child element per selected data element, jobs derived
//! from each element's copy of the pipeline steps, a provenance record per
//! job attempt and one for the whole run.
//!
//! Each running analysis has a coordinator thread. It alone consumes job
//! completions and writes the resulting events; interventions take the same
//! per-run lock before touching the kernel, so the lock order is always run
//! state first, kernel second.

mod executor;
mod job;
mod records;
mod schedule;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::thread;
use std::time::Duration as StdDuration;

use crossbeam_channel::{Receiver, Sender};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use self::executor::{
    from_config as executor_from_config, Executor, LocalExecutor, SimExecutor,
};
use self::executor::{Completion, JobBroker};
pub use self::job::{Job, JobError, JobId, JobResult, JobStatus};
use self::records::{duration_ms, frontier};
pub use self::records::{
    outcome_of, record, records_of, Intervened, OutcomeRecord, ProvenanceRecord, RecordInputs,
    StoredRecord, WORKFLOW_STEP,
};
pub use self::schedule::StepStatus;
use self::schedule::{Dispatch, DispatchMeta, JobContext, Outcome, Unit};
use crate::config::{Config, LfnConfig};
use crate::error::{Error, Result};
use crate::kernel::{
    ActorRef, ItemId, Kernel, NewItem, Payload, Props, Seq, VersionNumber, PROP_PARENT, PROP_REFS,
    PROP_TYPE,
};
use crate::model::{
    analysis, analysis_elements, check_param, data_element, ids_value, pipeline_spec, step_item,
    validate_steps, AnalysisElement, AnalysisState, ElementBody, ElementState, Params,
    PipelineSpec, StepSpec, WorkflowInstance, PROP_BODY, PROP_ERROR, PROP_WORKFLOW,
    TYPE_ANALYSIS_ELEMENT, TYPE_PROVENANCE_RECORD,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorSettings {
    /// Attempts per job, including the first.
    pub max_attempts: u32,
    pub lfn: LfnConfig,
}

impl Default for OrchestratorSettings {
    fn default() -> Self {
        OrchestratorSettings {
            max_attempts: 1,
            lfn: LfnConfig::default(),
        }
    }
}

impl From<&Config> for OrchestratorSettings {
    fn from(c: &Config) -> Self {
        OrchestratorSettings {
            max_attempts: c.exec.max_attempts.max(1),
            lfn: c.lfn.clone(),
        }
    }
}

/// A change to the not-yet-dispatched part of a running analysis. `element`
/// accepts either the analysis element id or the data element id; when it
/// is absent the change applies to every element where it still can.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    SetParam {
        step: String,
        key: String,
        value: Value,
        #[serde(default)]
        element: Option<ItemId>,
    },
    SkipStep {
        step: String,
        #[serde(default)]
        element: Option<ItemId>,
    },
    CancelElement {
        element: ItemId,
    },
    AppendStep {
        step: StepSpec,
        #[serde(default)]
        element: Option<ItemId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionAck {
    pub analysis: ItemId,
    /// Analysis elements the change was applied to.
    pub elements: Vec<ItemId>,
    pub seq: Seq,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementStatus {
    pub id: ItemId,
    pub element: ItemId,
    pub index: usize,
    pub state: ElementState,
    pub error: Option<String>,
    /// Step progress; only known while the analysis is executing here.
    pub steps: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatus {
    pub analysis: ItemId,
    pub state: AnalysisState,
    pub active: bool,
    pub elements: Vec<ElementStatus>,
    pub records: usize,
    pub outcome: Option<OutcomeRecord>,
}

struct Outstanding {
    job: Job,
    meta: DispatchMeta,
    actor: ActorRef,
    pipeline: ItemId,
    version: VersionNumber,
    element: Option<ItemId>,
}

struct RunCtx {
    params: Params,
    spec: PipelineSpec,
    pipeline: ItemId,
    version: VersionNumber,
}

struct RunUnits {
    ctx: RunCtx,
    units: Vec<Unit>,
    /// Element states as last written to the kernel.
    written: Vec<ElementState>,
}

struct Run {
    analysis: ItemId,
    actor: ActorRef,
    /// Absent while only finalizing.
    units: Option<Mutex<RunUnits>>,
    wake: Option<Sender<Completion>>,
    done: Mutex<Option<Result<AnalysisState, String>>>,
    cv: Condvar,
}

impl Run {
    fn finish(&self, res: Result<AnalysisState>) {
        *self.done.lock() = Some(res.map_err(|e| e.to_string()));
        self.cv.notify_all();
    }
}

/// Handle on a started run.
#[derive(Clone)]
pub struct RunHandle {
    run: Arc<Run>,
}

impl RunHandle {
    pub fn analysis(&self) -> ItemId {
        self.run.analysis
    }

    pub fn is_finished(&self) -> bool {
        self.run.done.lock().is_some()
    }

    /// Blocks until the analysis reaches a terminal state.
    pub fn wait(&self) -> Result<AnalysisState> {
        let mut done = self.run.done.lock();
        while done.is_none() {
            self.run.cv.wait(&mut done);
        }
        Self::unpack(done.as_ref().unwrap())
    }

    pub fn wait_timeout(&self, timeout: StdDuration) -> Option<Result<AnalysisState>> {
        let mut done = self.run.done.lock();
        if done.is_none() {
            self.run.cv.wait_for(&mut done, timeout);
        }
        done.as_ref().map(Self::unpack)
    }

    fn unpack(r: &Result<AnalysisState, String>) -> Result<AnalysisState> {
        r.clone().map_err(|m| Error::Io(std::io::Error::other(m)))
    }
}

struct Inner {
    kernel: Arc<Kernel>,
    broker: JobBroker,
    settings: OrchestratorSettings,
    runs: Mutex<HashMap<ItemId, Arc<Run>>>,
    outstanding: Mutex<HashMap<JobId, Outstanding>>,
}

#[derive(Clone)]
pub struct Orchestrator {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("active_runs", &self.inner.runs.lock().len())
            .finish()
    }
}

impl Orchestrator {
    pub fn new(
        kernel: Arc<Kernel>,
        executor: Arc<dyn Executor>,
        settings: OrchestratorSettings,
    ) -> Self {
        Orchestrator {
            inner: Arc::new(Inner {
                kernel,
                broker: JobBroker::new(executor),
                settings,
                runs: Mutex::new(HashMap::new()),
                outstanding: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.inner.kernel
    }

    pub fn executor(&self) -> &Arc<dyn Executor> {
        self.inner.broker.executor()
    }

    /// Instantiates one analysis element per selected data element, moves the
    /// analysis to Running and starts scheduling.
    pub fn run_analysis(&self, id: ItemId, actor: &ActorRef) -> Result<RunHandle> {
        let inner = &self.inner;
        let mut runs = inner.runs.lock();
        if runs.contains_key(&id) {
            return Err(Error::AlreadyRunning(id));
        }
        let (ctx, units) = inner.kernel.transact(|tx| {
            let s = tx.state();
            let a = analysis(s, id)?;
            if !a.visible_to(&actor.id) {
                return Err(Error::NotVisible(id));
            }
            match a.state {
                AnalysisState::Defined => {}
                AnalysisState::Running => return Err(Error::AlreadyRunning(id)),
                st => {
                    return Err(Error::IllegalTransition(format!(
                        "analysis {id} is {st}; clone it to run again"
                    )))
                }
            }
            let (version, spec) = pipeline_spec(s, a.def.pipeline, Some(a.def.pipeline_version))?;
            let workflow = WorkflowInstance::from_steps(&spec.steps, |n| {
                step_item(s, a.def.pipeline, version, n)
            });
            let elements = a
                .def
                .element_ids
                .iter()
                .map(|e| data_element(s, *e))
                .collect::<Result<Vec<_>>>()?;
            let mut units = Vec::with_capacity(elements.len());
            for (index, de) in elements.into_iter().enumerate() {
                let body = ElementBody {
                    analysis: id,
                    element: de.id,
                    index,
                };
                let props: Props = [
                    (PROP_TYPE, json!(TYPE_ANALYSIS_ELEMENT)),
                    (PROP_PARENT, json!(id.to_string())),
                    (PROP_REFS, ids_value([de.id])),
                    (PROP_BODY, serde_json::to_value(&body).unwrap()),
                    (PROP_WORKFLOW, serde_json::to_value(&workflow).unwrap()),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect();
                let new = NewItem::instance(a.def.pipeline, props)
                    .with_state(ElementState::Pending.as_str());
                let ae = tx.create_item(new, actor, "instantiate analysis element")?;
                units.push(Unit::new(
                    Some(ae),
                    Some(index),
                    workflow.clone(),
                    de.files,
                    vec![de.id],
                    vec![],
                ));
            }
            tx.record_event(
                id,
                Payload::StateTransition {
                    from: Some(AnalysisState::Defined.as_str().into()),
                    to: AnalysisState::Running.as_str().into(),
                },
                actor,
                "run analysis",
            )?;
            let ctx = RunCtx {
                params: a.def.params,
                spec,
                pipeline: a.def.pipeline,
                version,
            };
            Ok((ctx, units))
        })?;
        let (tx, rx) = crossbeam_channel::unbounded();
        let written = vec![ElementState::Pending; units.len()];
        let run = Arc::new(Run {
            analysis: id,
            actor: actor.clone(),
            units: Some(Mutex::new(RunUnits {
                ctx,
                units,
                written,
            })),
            wake: Some(tx),
            done: Mutex::new(None),
            cv: Condvar::new(),
        });
        runs.insert(id, run.clone());
        drop(runs);
        let inner = self.inner.clone();
        let coordinator = run.clone();
        thread::Builder::new()
            .name(format!("run-{id}"))
            .spawn(move || inner.coordinate(coordinator, rx))
            .map_err(Error::Io)?;
        Ok(RunHandle { run })
    }

    /// Handle of an analysis executing in this process.
    pub fn handle(&self, id: ItemId) -> Option<RunHandle> {
        self.inner
            .runs
            .lock()
            .get(&id)
            .map(|run| RunHandle { run: run.clone() })
    }

    /// Writes the provenance record of a dispatched job. Results of jobs this
    /// orchestrator did not dispatch, or already recorded, are rejected.
    pub fn record_job_provenance(&self, job: &Job, result: &JobResult) -> Result<ItemId> {
        self.inner.record(job, result).map(|(id, _)| id)
    }

    /// Runs post-processing and settles the final state once every element
    /// is terminal. Waits for the coordinator when the run is active here.
    pub fn finalize_analysis(&self, id: ItemId, actor: &ActorRef) -> Result<AnalysisState> {
        let inner = &self.inner;
        let run = {
            let mut runs = inner.runs.lock();
            if let Some(run) = runs.get(&id) {
                if let Some(units) = &run.units {
                    if units.lock().units.iter().any(|u| !u.is_terminal()) {
                        return Err(Error::ElementsStillRunning(id));
                    }
                }
                let handle = RunHandle { run: run.clone() };
                drop(runs);
                return handle.wait();
            }
            let run = Arc::new(Run {
                analysis: id,
                actor: actor.clone(),
                units: None,
                wake: None,
                done: Mutex::new(None),
                cv: Condvar::new(),
            });
            runs.insert(id, run.clone());
            run
        };
        let res = inner.finalize(id, actor);
        inner.runs.lock().remove(&id);
        let out = res
            .as_ref()
            .map(|s| *s)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())));
        run.finish(out);
        res
    }

    pub fn intervene(
        &self,
        id: ItemId,
        modification: &Intervention,
        actor: &ActorRef,
        reason: &str,
    ) -> Result<InterventionAck> {
        self.inner.intervene(id, modification, actor, reason)
    }

    pub fn status(&self, id: ItemId) -> Result<RunStatus> {
        let run = self.inner.runs.lock().get(&id).cloned();
        let progress: HashMap<ItemId, BTreeMap<String, String>> = run
            .as_ref()
            .and_then(|r| r.units.as_ref())
            .map(|u| {
                u.lock()
                    .units
                    .iter()
                    .filter_map(|unit| {
                        let steps = unit
                            .workflow
                            .steps
                            .iter()
                            .map(|s| {
                                let st = unit
                                    .step_status(&s.spec.name)
                                    .unwrap_or(StepStatus::Pending);
                                (s.spec.name.clone(), format!("{st:?}"))
                            })
                            .collect();
                        Some((unit.analysis_element?, steps))
                    })
                    .collect()
            })
            .unwrap_or_default();
        self.inner.kernel.read(|s| {
            let a = analysis(s, id)?;
            let elements = analysis_elements(s, id)?
                .into_iter()
                .map(|e| ElementStatus {
                    steps: progress.get(&e.id).cloned().unwrap_or_default(),
                    id: e.id,
                    element: e.element,
                    index: e.index,
                    state: e.state,
                    error: e.error,
                })
                .collect();
            Ok(RunStatus {
                analysis: id,
                state: a.state,
                active: run.is_some(),
                elements,
                records: records_of(s, id).len(),
                outcome: outcome_of(s, id),
            })
        })
    }
}

fn io_err(msg: &str) -> Error {
    Error::Io(std::io::Error::other(msg.to_owned()))
}

impl Inner {
    fn new_job_id(&self) -> JobId {
        JobId::from_uuid(self.kernel.fresh_uuid())
    }

    fn coordinate(self: Arc<Self>, run: Arc<Run>, rx: Receiver<Completion>) {
        let res = self
            .drive(&run, &rx)
            .and_then(|_| self.finalize(run.analysis, &run.actor));
        if let Err(e) = &res {
            tracing::error!(analysis = %run.analysis, error = %e, "run aborted");
        }
        self.runs.lock().remove(&run.analysis);
        run.finish(res);
    }

    fn drive(&self, run: &Run, rx: &Receiver<Completion>) -> Result<()> {
        let units = run.units.as_ref().expect("executing run");
        loop {
            {
                let mut st = units.lock();
                self.pump(run, &mut st)?;
                if st.units.iter().all(|u| u.is_terminal() && u.running() == 0) {
                    return Ok(());
                }
            }
            match rx.recv() {
                Ok(Completion::Done(done)) => {
                    let (job, result) = *done;
                    let mut st = units.lock();
                    let (rec, o) = self.record(&job, &result)?;
                    let Some(unit) = st
                        .units
                        .iter_mut()
                        .find(|u| u.analysis_element == job.analysis_element)
                    else {
                        continue;
                    };
                    if let Outcome::Retry =
                        unit.on_result(&job, &result, rec, self.settings.max_attempts)
                    {
                        self.resubmit(o, run.wake.clone().expect("executing run"));
                    }
                    self.sync_states(&mut st, &run.actor, "job completed")?;
                }
                Ok(Completion::Wake) => {}
                Err(_) => return Err(io_err("completion channel closed")),
            }
        }
    }

    fn pump(&self, run: &Run, st: &mut RunUnits) -> Result<()> {
        let new_id = || self.new_job_id();
        let mut dispatches = Vec::new();
        let ctx = JobContext {
            analysis: run.analysis,
            params: &st.ctx.params,
            env: &st.ctx.spec.default_env,
            common_dirs: &st.ctx.spec.common_dirs,
            new_id: &new_id,
        };
        for unit in st.units.iter_mut() {
            let element = unit.input_elements.first().copied();
            dispatches.extend(unit.advance(&ctx).into_iter().map(|d| (d, element)));
        }
        let reply = run.wake.clone().expect("executing run");
        for (d, element) in dispatches {
            self.submit(
                d,
                &run.actor,
                st.ctx.pipeline,
                st.ctx.version,
                element,
                &reply,
            );
        }
        self.sync_states(st, &run.actor, "scheduling")
    }

    fn submit(
        &self,
        d: Dispatch,
        actor: &ActorRef,
        pipeline: ItemId,
        version: VersionNumber,
        element: Option<ItemId>,
        reply: &Sender<Completion>,
    ) {
        let job = d.job.clone();
        self.outstanding.lock().insert(
            job.id,
            Outstanding {
                job: d.job,
                meta: d.meta,
                actor: actor.clone(),
                pipeline,
                version,
                element,
            },
        );
        self.broker.submit(job, reply.clone());
    }

    fn resubmit(&self, prev: Outstanding, reply: Sender<Completion>) {
        let job = Job {
            id: self.new_job_id(),
            attempt: prev.job.attempt + 1,
            ..prev.job
        };
        self.submit(
            Dispatch {
                job,
                meta: prev.meta,
            },
            &prev.actor,
            prev.pipeline,
            prev.version,
            prev.element,
            &reply,
        );
    }

    /// Writes element state changes made in memory since the last call.
    fn sync_states(&self, st: &mut RunUnits, actor: &ActorRef, reason: &str) -> Result<()> {
        let changed: Vec<usize> = (0..st.units.len())
            .filter(|&i| st.units[i].state != st.written[i])
            .collect();
        if changed.is_empty() {
            return Ok(());
        }
        self.kernel.transact(|tx| {
            for &i in &changed {
                let unit = &st.units[i];
                let ae = unit.analysis_element.expect("element unit");
                if let (true, Some(err)) = (unit.state == ElementState::Failed, &unit.error) {
                    tx.record_event(
                        ae,
                        Payload::PropertySet {
                            key: PROP_ERROR.into(),
                            value: json!(err),
                        },
                        actor,
                        reason,
                    )?;
                }
                tx.record_event(
                    ae,
                    Payload::StateTransition {
                        from: Some(st.written[i].as_str().into()),
                        to: unit.state.as_str().into(),
                    },
                    actor,
                    reason,
                )?;
            }
            Ok(())
        })?;
        for i in changed {
            st.written[i] = st.units[i].state;
        }
        Ok(())
    }

    fn record(&self, job: &Job, result: &JobResult) -> Result<(ItemId, Outstanding)> {
        let o = self
            .outstanding
            .lock()
            .remove(&job.id)
            .ok_or_else(|| Error::UnknownJob(job.id.to_string()))?;
        if result.job_id != job.id {
            return Err(Error::UnknownJob(result.job_id.to_string()));
        }
        let result = result.clone().normalized();
        let rec = ProvenanceRecord {
            analysis: job.analysis,
            analysis_element: job.analysis_element,
            element: o.element,
            step: job.step.clone(),
            attempt: job.attempt,
            fork_index: job.fork_index,
            fork_width: job.fork_width,
            job_id: Some(job.id),
            pipeline: o.pipeline,
            pipeline_version: o.version,
            script_ref: Some(job.script_ref.clone()),
            inputs: RecordInputs {
                files: job.inputs.clone(),
                params: job.params.clone(),
                elements: o.meta.input_elements.clone(),
                intervened: o
                    .meta
                    .intervened
                    .iter()
                    .map(|(k, (original, value))| {
                        (
                            k.clone(),
                            Intervened {
                                original: original.clone(),
                                value: value.clone(),
                            },
                        )
                    })
                    .collect(),
            },
            outputs: result.outputs.clone(),
            started_at: result.started_at,
            ended_at: result.ended_at,
            duration_ms: duration_ms(result.started_at, result.ended_at),
            resource: result.resource.clone(),
            status: result.status,
            error: result.error.clone(),
            links: o.meta.links.clone(),
            analysis_state: None,
            stdout_tail: result.stdout_tail.clone(),
            stderr_tail: result.stderr_tail.clone(),
        };
        let mut refs = vec![o.pipeline];
        refs.extend(job.analysis_element);
        refs.extend(rec.inputs.elements.iter().copied());
        refs.extend(rec.links.iter().copied());
        let described_by = o.meta.step_item.unwrap_or(o.pipeline);
        let reason = format!("job {} attempt {}", job.id, job.attempt);
        let id = self.kernel.transact(|tx| {
            tx.create_item(
                record_item(described_by, job.analysis, refs, &rec),
                &o.actor,
                &reason,
            )
        })?;
        Ok((id, o))
    }

    /// Post-processing, the whole-run record, the outcome and the final
    /// state transition. A post-processing failure demotes the result to
    /// PartiallyFailed.
    fn finalize(&self, id: ItemId, actor: &ActorRef) -> Result<AnalysisState> {
        let (a, spec, elements) = self.kernel.read(|s| -> Result<_> {
            let a = analysis(s, id)?;
            let (_, spec) = pipeline_spec(s, a.def.pipeline, Some(a.def.pipeline_version))?;
            Ok((a, spec, analysis_elements(s, id)?))
        })?;
        match a.state {
            AnalysisState::Running => {}
            AnalysisState::Defined => {
                return Err(Error::IllegalTransition(format!(
                    "analysis {id} has not been run"
                )))
            }
            st => return Ok(st),
        }
        if elements.iter().any(|e| !e.state.is_terminal()) {
            return Err(Error::ElementsStillRunning(id));
        }
        let all = self.kernel.read(|s| records_of(s, id));
        let finals_of = |e: &AnalysisElement| -> Vec<StoredRecord> {
            let mine: Vec<&StoredRecord> = all
                .iter()
                .filter(|r| r.record.analysis_element == Some(e.id))
                .collect();
            frontier(&e.workflow, &mine)
        };
        let mut element_finals = Vec::new();
        let mut success_finals = Vec::new();
        let mut success_outputs = Vec::new();
        let mut success_elements = Vec::new();
        let mut success_ended = None;
        for e in &elements {
            let finals = finals_of(e);
            element_finals.extend(finals.iter().map(|r| r.id));
            if e.state == ElementState::Succeeded {
                success_elements.push(e.element);
                success_finals.extend(finals.iter().map(|r| r.id));
                success_ended = finals
                    .iter()
                    .map(|r| r.record.ended_at)
                    .chain(success_ended)
                    .max();
                success_outputs
                    .extend(finals.iter().flat_map(|r| r.record.outputs.iter().cloned()));
            }
        }
        let mut post: Option<(bool, Vec<ItemId>, Option<String>)> = None;
        if let (false, Some(steps)) = (success_elements.is_empty(), &a.def.post_processing) {
            let mut unit = Unit::new(
                None,
                None,
                WorkflowInstance::from_steps(steps, |_| None),
                success_outputs,
                success_elements.clone(),
                success_finals.clone(),
            );
            unit.root_ready = success_ended;
            post = Some(self.run_post(
                &a.def.params,
                &spec,
                a.def.pipeline,
                a.def.pipeline_version,
                id,
                unit,
                actor,
            )?);
        }
        let total = elements.len();
        let ok = success_elements.len();
        let post_ok = post.as_ref().is_none_or(|p| p.0);
        let state = if ok == 0 {
            AnalysisState::Failed
        } else if ok == total && post_ok {
            AnalysisState::Completed
        } else {
            AnalysisState::PartiallyFailed
        };
        let mut problems = Vec::new();
        if ok < total {
            problems.push(format!("{} of {total} elements failed", total - ok));
        }
        if let Some((false, _, err)) = &post {
            problems.push(format!(
                "post-processing failed: {}",
                err.as_deref().unwrap_or("unknown error")
            ));
        }
        let post_finals = post.as_ref().map(|p| p.1.clone()).unwrap_or_default();
        let produced_by = match &post {
            Some((true, finals, _)) => finals.clone(),
            _ => success_finals,
        };
        let result_link = format!(
            "{}{}/analyses/{id}/result",
            self.settings.lfn.scheme, self.settings.lfn.root
        );
        let all = self.kernel.read(|s| records_of(s, id));
        let now = self.kernel.clock().now();
        let started_at = all.iter().map(|r| r.record.started_at).min().unwrap_or(now);
        let ended_at = all
            .iter()
            .map(|r| r.record.ended_at)
            .max()
            .unwrap_or(now)
            .max(started_at);
        let files = self.kernel.read(|s| {
            a.def
                .element_ids
                .iter()
                .filter_map(|e| data_element(s, *e).ok())
                .flat_map(|d| d.files)
                .collect::<Vec<_>>()
        });
        let mut links = element_finals;
        links.extend(post_finals);
        let rec = ProvenanceRecord {
            analysis: id,
            analysis_element: None,
            element: None,
            step: WORKFLOW_STEP.into(),
            attempt: 1,
            fork_index: 0,
            fork_width: 1,
            job_id: None,
            pipeline: a.def.pipeline,
            pipeline_version: a.def.pipeline_version,
            script_ref: None,
            inputs: RecordInputs {
                files,
                params: a.def.params.clone(),
                elements: a.def.element_ids.clone(),
                intervened: BTreeMap::new(),
            },
            outputs: if ok > 0 {
                vec![result_link.clone()]
            } else {
                Vec::new()
            },
            started_at,
            ended_at,
            duration_ms: duration_ms(started_at, ended_at),
            resource: "orchestrator".into(),
            status: if state == AnalysisState::Completed {
                JobStatus::Succeeded
            } else {
                JobStatus::Failed
            },
            error: (!problems.is_empty()).then(|| JobError::new(problems.join("; "))),
            links,
            analysis_state: Some(state),
            stdout_tail: String::new(),
            stderr_tail: String::new(),
        };
        let mut refs = vec![a.def.pipeline];
        refs.extend(a.def.element_ids.iter().copied());
        refs.extend(rec.links.iter().copied());
        self.kernel.transact(|tx| {
            tx.create_item(
                record_item(a.def.pipeline, id, refs, &rec),
                actor,
                "workflow provenance",
            )?;
            if ok > 0 {
                let outcome = OutcomeRecord {
                    analysis: id,
                    result_link,
                    produced_by,
                    registered_at: tx.now(),
                };
                tx.record_event(
                    id,
                    Payload::OutcomeAttached {
                        outcome: serde_json::to_value(outcome).unwrap(),
                    },
                    actor,
                    "register outcome",
                )?;
            }
            tx.record_event(
                id,
                Payload::StateTransition {
                    from: Some(AnalysisState::Running.as_str().into()),
                    to: state.as_str().into(),
                },
                actor,
                "finalize",
            )
        })?;
        Ok(state)
    }

    /// Executes the post-processing unit to completion. Returns whether it
    /// succeeded, its closing records and the failure message.
    #[allow(clippy::too_many_arguments)]
    fn run_post(
        &self,
        params: &Params,
        spec: &PipelineSpec,
        pipeline: ItemId,
        version: VersionNumber,
        analysis_id: ItemId,
        mut unit: Unit,
        actor: &ActorRef,
    ) -> Result<(bool, Vec<ItemId>, Option<String>)> {
        let (tx, rx) = crossbeam_channel::unbounded();
        let new_id = || self.new_job_id();
        loop {
            let ctx = JobContext {
                analysis: analysis_id,
                params,
                env: &spec.default_env,
                common_dirs: &spec.common_dirs,
                new_id: &new_id,
            };
            for d in unit.advance(&ctx) {
                self.submit(d, actor, pipeline, version, None, &tx);
            }
            if unit.is_terminal() && unit.running() == 0 {
                break;
            }
            match rx.recv() {
                Ok(Completion::Done(done)) => {
                    let (job, result) = *done;
                    let (rec, o) = self.record(&job, &result)?;
                    if let Outcome::Retry =
                        unit.on_result(&job, &result, rec, self.settings.max_attempts)
                    {
                        self.resubmit(o, tx.clone());
                    }
                }
                Ok(Completion::Wake) => {}
                Err(_) => return Err(io_err("completion channel closed")),
            }
        }
        let all = self.kernel.read(|s| records_of(s, analysis_id));
        let mine: Vec<&StoredRecord> = all
            .iter()
            .filter(|r| r.record.is_post_processing())
            .collect();
        let finals = frontier(&unit.workflow, &mine)
            .into_iter()
            .map(|r| r.id)
            .collect();
        Ok((unit.state == ElementState::Succeeded, finals, unit.error))
    }

    fn intervene(
        &self,
        id: ItemId,
        m: &Intervention,
        actor: &ActorRef,
        reason: &str,
    ) -> Result<InterventionAck> {
        let a = self.kernel.read(|s| analysis(s, id))?;
        if !a.visible_to(&actor.id) {
            return Err(Error::NotVisible(id));
        }
        if a.state != AnalysisState::Running {
            return Err(Error::InvalidModification(format!(
                "analysis {id} is {}",
                a.state
            )));
        }
        let run = self.runs.lock().get(&id).cloned().ok_or_else(|| {
            Error::InvalidModification(format!("analysis {id} is not executing here"))
        })?;
        let units = run
            .units
            .as_ref()
            .ok_or_else(|| Error::InvalidModification(format!("analysis {id} is finalizing")))?;
        let mut st = units.lock();
        let ack = match m {
            Intervention::CancelElement { element } => {
                let i = find_unit(&st, *element)?;
                let unit = &mut st.units[i];
                if unit.is_terminal() {
                    return Err(Error::InvalidModification(format!(
                        "element {element} is already {}",
                        unit.state
                    )));
                }
                unit.cancel(format!("cancelled by {}", actor.id));
                let ae = unit.analysis_element.expect("element unit");
                self.sync_states(&mut st, actor, reason)?;
                InterventionAck {
                    analysis: id,
                    elements: vec![ae],
                    seq: self.kernel.last_seq(),
                }
            }
            Intervention::SetParam {
                step,
                key,
                value,
                element,
            } => {
                check_param(&st.ctx.spec.param_schema, key, value)
                    .map_err(|e| Error::InvalidModification(e.to_string()))?;
                let targets = pending_targets(&st, *element, step)?;
                self.edit_workflows(&mut st, &targets, actor, reason, |w| {
                    w.step_mut(step)
                        .expect("checked")
                        .params
                        .insert(key.clone(), value.clone());
                    Ok(())
                })?
            }
            Intervention::SkipStep { step, element } => {
                let targets = pending_targets(&st, *element, step)?;
                self.edit_workflows(&mut st, &targets, actor, reason, |w| {
                    w.step_mut(step).expect("checked").skipped = true;
                    Ok(())
                })?
            }
            Intervention::AppendStep { step, element } => {
                let targets = live_targets(&st, *element)?;
                self.edit_workflows(&mut st, &targets, actor, reason, |w| {
                    let names: Vec<&str> = w.steps.iter().map(|s| s.spec.name.as_str()).collect();
                    validate_steps(std::slice::from_ref(step), &names)
                        .map_err(|e| Error::InvalidModification(e.to_string()))?;
                    w.steps.push(crate::model::InstanceStep {
                        spec: step.clone(),
                        step_item: None,
                        params: Params::new(),
                        skipped: false,
                        appended: true,
                    });
                    Ok(())
                })?
            }
        };
        if let Some(w) = &run.wake {
            let _ = w.send(Completion::Wake);
        }
        Ok(InterventionAck {
            analysis: id,
            ..ack
        })
    }

    /// Applies `edit` to copies of the targeted workflows, records them, then
    /// commits them in memory. Nothing changes if any edit is rejected.
    fn edit_workflows(
        &self,
        st: &mut RunUnits,
        targets: &[usize],
        actor: &ActorRef,
        reason: &str,
        edit: impl Fn(&mut WorkflowInstance) -> Result<()>,
    ) -> Result<InterventionAck> {
        let mut edited = Vec::with_capacity(targets.len());
        for &i in targets {
            let mut w = st.units[i].workflow.clone();
            edit(&mut w)?;
            edited.push((i, w));
        }
        let seq = self.kernel.transact(|tx| {
            let mut seq = 0;
            for (i, w) in &edited {
                seq = tx.record_event(
                    st.units[*i].analysis_element.expect("element unit"),
                    Payload::PropertySet {
                        key: PROP_WORKFLOW.into(),
                        value: serde_json::to_value(w).unwrap(),
                    },
                    actor,
                    reason,
                )?;
            }
            Ok(seq)
        })?;
        let mut elements = Vec::with_capacity(edited.len());
        for (i, w) in edited {
            st.units[i].workflow = w;
            elements.extend(st.units[i].analysis_element);
        }
        Ok(InterventionAck {
            analysis: ItemId::from_uuid(uuid::Uuid::nil()),
            elements,
            seq,
        })
    }
}

fn record_item(
    described_by: ItemId,
    analysis: ItemId,
    refs: Vec<ItemId>,
    rec: &ProvenanceRecord,
) -> NewItem {
    let mut unique = Vec::with_capacity(refs.len());
    for r in refs {
        if !unique.contains(&r) {
            unique.push(r);
        }
    }
    let props: Props = [
        (PROP_TYPE, json!(TYPE_PROVENANCE_RECORD)),
        (PROP_PARENT, json!(analysis.to_string())),
        (PROP_REFS, ids_value(unique)),
        (PROP_BODY, serde_json::to_value(rec).unwrap()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();
    NewItem::instance(described_by, props)
}

fn find_unit(st: &RunUnits, element: ItemId) -> Result<usize> {
    st.units
        .iter()
        .position(|u| {
            u.analysis_element == Some(element) || u.input_elements.first() == Some(&element)
        })
        .ok_or_else(|| {
            Error::InvalidModification(format!("element {element} is not part of this analysis"))
        })
}

fn live_targets(st: &RunUnits, element: Option<ItemId>) -> Result<Vec<usize>> {
    match element {
        Some(e) => {
            let i = find_unit(st, e)?;
            if st.units[i].is_terminal() {
                return Err(Error::InvalidModification(format!(
                    "element {e} is already {}",
                    st.units[i].state
                )));
            }
            Ok(vec![i])
        }
        None => {
            let live: Vec<usize> = (0..st.units.len())
                .filter(|&i| !st.units[i].is_terminal())
                .collect();
            if live.is_empty() {
                return Err(Error::InvalidModification(
                    "no element is still running".into(),
                ));
            }
            Ok(live)
        }
    }
}

/// Live elements where `step` has not been dispatched yet. With no element
/// given, elements that already dispatched the step are left out, and the
/// call fails only if none remain.
fn pending_targets(st: &RunUnits, element: Option<ItemId>, step: &str) -> Result<Vec<usize>> {
    let live = live_targets(st, element)?;
    let mut pending = Vec::new();
    let mut dispatched = false;
    for i in live {
        match st.units[i].step_status(step) {
            None => {
                return Err(Error::InvalidModification(format!(
                    "the workflow has no step `{step}`"
                )))
            }
            Some(StepStatus::Pending) => pending.push(i),
            Some(_) => dispatched = true,
        }
    }
    if pending.is_empty() || (element.is_some() && dispatched) {
        return Err(Error::StepAlreadyDispatched(step.to_owned()));
    }
    Ok(pending)
}
