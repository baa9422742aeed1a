//! Pipelines, datasets, analyses and their elements, layered on the item kernel.
//!
//! Item layout used throughout the crate:
//!
//! | type                | kind        | described by | parent   | body                |
//! |---------------------|-------------|--------------|----------|---------------------|
//! | `pipeline`          | Description | -            | -        | versions: spec      |
//! | `step`              | Description | -            | pipeline | [`StepItem`]        |
//! | `dataset`           | Description | -            | -        | name, schema note   |
//! | `data_element`      | Instance    | dataset      | dataset  | files, metadata     |
//! | `analysis`          | Instance    | pipeline     | -        | [`AnalysisDef`]     |
//! | `analysis_element`  | Instance    | pipeline     | analysis | [`ElementBody`]     |
//! | `provenance_record` | Instance    | step/pipeline| analysis | provenance record   |

mod types;
mod workflow;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use self::types::*;
pub use self::workflow::*;
use crate::error::{Error, Result};
use crate::kernel::{
    ActorRef, ItemId, ItemState, Kernel, NewItem, Payload, Props, Seq, StoreState, Txn,
    VersionNumber, PROP_PARENT, PROP_REFS, PROP_TYPE,
};

pub const PROP_BODY: &str = "body";
pub const PROP_NAME: &str = "name";
pub const PROP_WORKFLOW: &str = "workflow";
pub const PROP_ERROR: &str = "error";

pub const TYPE_PIPELINE: &str = "pipeline";
pub const TYPE_STEP: &str = "step";
pub const TYPE_DATASET: &str = "dataset";
pub const TYPE_DATA_ELEMENT: &str = "data_element";
pub const TYPE_ANALYSIS: &str = "analysis";
pub const TYPE_ANALYSIS_ELEMENT: &str = "analysis_element";
pub const TYPE_PROVENANCE_RECORD: &str = "provenance_record";

/// Body of a `step` item: one step of one pipeline version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepItem {
    pub pipeline: ItemId,
    pub version: VersionNumber,
    pub name: String,
}

pub(crate) fn type_of(state: &ItemState) -> Option<&str> {
    state.prop_str(PROP_TYPE)
}

pub(crate) fn body<T: for<'de> Deserialize<'de>>(state: &ItemState) -> Result<T> {
    let v = state
        .prop(PROP_BODY)
        .ok_or_else(|| Error::ValidationFailed(format!("{} has no body", state.id)))?;
    T::deserialize(v).map_err(|e| Error::ValidationFailed(format!("{}: {e}", state.id)))
}

pub(crate) fn ids_value(ids: impl IntoIterator<Item = ItemId>) -> Value {
    Value::Array(
        ids.into_iter()
            .map(|i| Value::String(i.to_string()))
            .collect(),
    )
}

fn props(pairs: impl IntoIterator<Item = (&'static str, Value)>) -> Props {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

/// Checks step names, references, fork widths and acyclicity. `known` lists
/// step names outside `steps` that dependencies may also refer to.
pub fn validate_steps(steps: &[StepSpec], known: &[&str]) -> Result<()> {
    let fail = |m: String| Err(Error::ValidationFailed(m));
    if steps.is_empty() {
        return fail("a pipeline needs at least one step".into());
    }
    let mut names = HashSet::new();
    for s in steps {
        if s.name.trim().is_empty() || s.name.starts_with('<') {
            return fail(format!("invalid step name `{}`", s.name));
        }
        if s.script_ref.trim().is_empty() {
            return fail(format!("step `{}` has no script_ref", s.name));
        }
        if !names.insert(s.name.as_str()) || known.contains(&s.name.as_str()) {
            return fail(format!("duplicate step name `{}`", s.name));
        }
        if s.fork == Some(ForkSpec::Width(0)) {
            return fail(format!("step `{}` has fork width 0", s.name));
        }
    }
    for s in steps {
        for d in &s.depends_on {
            if !names.contains(d.as_str()) && !known.contains(&d.as_str()) {
                return fail(format!("step `{}` depends on unknown step `{d}`", s.name));
            }
            if d == &s.name {
                return fail(format!("step `{}` depends on itself", s.name));
            }
        }
        for b in &s.inputs {
            if let InputSource::Step(src) = &b.from {
                if !s.depends_on.contains(src) {
                    return fail(format!(
                        "step `{}` reads `{src}` without depending on it",
                        s.name
                    ));
                }
            }
        }
    }
    topo_order(steps).map(|_| ())
}

/// Kahn ordering of `steps` (indices). Dependencies on names outside `steps`
/// are treated as already satisfied.
pub fn topo_order(steps: &[StepSpec]) -> Result<Vec<usize>> {
    let index: BTreeMap<&str, usize> = steps
        .iter()
        .enumerate()
        .map(|(i, s)| (s.name.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; steps.len()];
    let mut dependents = vec![Vec::new(); steps.len()];
    for (i, s) in steps.iter().enumerate() {
        for d in &s.depends_on {
            if let Some(&j) = index.get(d.as_str()) {
                indegree[i] += 1;
                dependents[j].push(i);
            }
        }
    }
    let mut ready: Vec<usize> = (0..steps.len()).filter(|&i| indegree[i] == 0).collect();
    ready.reverse();
    let mut order = Vec::with_capacity(steps.len());
    while let Some(i) = ready.pop() {
        order.push(i);
        for &j in dependents[i].iter().rev() {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(j);
            }
        }
    }
    if order.len() != steps.len() {
        return Err(Error::ValidationFailed(
            "step dependencies contain a cycle".into(),
        ));
    }
    Ok(order)
}

fn validate_schema(schema: &[ParamSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for p in schema {
        if p.name.trim().is_empty() || !seen.insert(p.name.as_str()) {
            return Err(Error::ValidationFailed(format!(
                "bad or duplicate parameter `{}`",
                p.name
            )));
        }
        if let Some(d) = &p.default {
            if !p.ty.accepts(d) {
                return Err(Error::ValidationFailed(format!(
                    "default of `{}` is not a {:?}",
                    p.name, p.ty
                )));
            }
        }
    }
    Ok(())
}

/// Type-checks one parameter value against the schema. Names outside the
/// schema accept any scalar.
pub fn check_param(schema: &[ParamSpec], key: &str, value: &Value) -> Result<()> {
    match schema.iter().find(|p| p.name == key) {
        Some(p) if !p.ty.accepts(value) => Err(Error::ValidationFailed(format!(
            "parameter `{key}` expects {:?}, got {value}",
            p.ty
        ))),
        Some(_) => Ok(()),
        None if value.is_array() || value.is_object() || value.is_null() => Err(
            Error::ValidationFailed(format!("parameter `{key}` must be a scalar")),
        ),
        None => Ok(()),
    }
}

/// Defaults, then `base` (an already resolved map), then `overrides`; every
/// required parameter must end up with a value.
pub fn resolve_params(schema: &[ParamSpec], base: &Params, overrides: &Params) -> Result<Params> {
    let mut out: Params = schema
        .iter()
        .filter_map(|p| p.default.clone().map(|d| (p.name.clone(), d)))
        .collect();
    for (k, v) in base.iter().chain(overrides) {
        check_param(schema, k, v)?;
        out.insert(k.clone(), v.clone());
    }
    for p in schema {
        if p.required && !out.contains_key(&p.name) {
            return Err(Error::MissingRequiredParam(p.name.clone()));
        }
    }
    Ok(out)
}

/// Domain operations over a shared kernel.
#[derive(Debug, Clone)]
pub struct Registry {
    kernel: Arc<Kernel>,
}

impl Registry {
    pub fn new(kernel: Arc<Kernel>) -> Self {
        Registry { kernel }
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    /// Registers a pipeline; a name already in use gets a new version unless
    /// the content equals the latest one, which is then returned unchanged.
    pub fn register_pipeline(
        &self,
        spec: &PipelineSpec,
        actor: &ActorRef,
        reason: &str,
    ) -> Result<(ItemId, VersionNumber)> {
        if spec.name.trim().is_empty() {
            return Err(Error::ValidationFailed("pipeline name is empty".into()));
        }
        validate_steps(&spec.steps, &[])?;
        validate_schema(&spec.param_schema)?;
        let content = serde_json::to_value(spec).expect("spec serializes");
        self.kernel.transact(|tx| {
            let existing = pipeline_by_name(tx.state(), &spec.name);
            let (id, version) = match existing {
                None => {
                    let new = NewItem::description(props([
                        (PROP_TYPE, json!(TYPE_PIPELINE)),
                        (PROP_NAME, json!(spec.name)),
                    ]))
                    .with_content(content);
                    (tx.create_item(new, actor, reason)?, VersionNumber::FIRST)
                }
                Some(id) => {
                    let st = tx.state().item(&id).unwrap();
                    if st.version(st.current_version) == Some(&content) {
                        return Ok((id, st.current_version));
                    }
                    let version = st.current_version.next();
                    tx.record_event(
                        id,
                        Payload::VersionAdded { version, content },
                        actor,
                        reason,
                    )?;
                    (id, version)
                }
            };
            let mut step_items = serde_json::Map::new();
            for step in &spec.steps {
                let body = StepItem {
                    pipeline: id,
                    version,
                    name: step.name.clone(),
                };
                let new = NewItem::description(props([
                    (PROP_TYPE, json!(TYPE_STEP)),
                    (PROP_PARENT, json!(id.to_string())),
                    (PROP_BODY, serde_json::to_value(&body).unwrap()),
                ]));
                let sid = tx.create_item(new, actor, reason)?;
                step_items.insert(step.name.clone(), json!(sid.to_string()));
            }
            tx.record_event(
                id,
                Payload::PropertySet {
                    key: step_items_key(version),
                    value: Value::Object(step_items),
                },
                actor,
                reason,
            )?;
            Ok((id, version))
        })
    }

    pub fn pipeline_by_name(&self, name: &str) -> Option<ItemId> {
        self.kernel.read(|s| pipeline_by_name(s, name))
    }

    /// The spec of `version` (latest when absent) and the resolved version.
    pub fn pipeline(
        &self,
        id: ItemId,
        version: Option<VersionNumber>,
    ) -> Result<(VersionNumber, PipelineSpec)> {
        self.kernel.read(|s| pipeline_spec(s, id, version))
    }

    /// The stored content of a pipeline version, exactly as written.
    pub fn pipeline_content(&self, id: ItemId, version: VersionNumber) -> Result<Value> {
        self.kernel.read(|s| {
            let st = pipeline_state(s, id)?;
            st.version(version).cloned().ok_or(Error::UnknownVersion {
                pipeline: id,
                version: version.get(),
            })
        })
    }

    pub fn step_item(
        &self,
        pipeline: ItemId,
        version: VersionNumber,
        step: &str,
    ) -> Option<ItemId> {
        self.kernel.read(|s| step_item(s, pipeline, version, step))
    }

    pub fn register_dataset(
        &self,
        spec: &DatasetSpec,
        actor: &ActorRef,
        reason: &str,
    ) -> Result<ItemId> {
        if spec.name.trim().is_empty() {
            return Err(Error::ValidationFailed("dataset name is empty".into()));
        }
        if let Some(i) = spec.elements.iter().position(|e| e.files.is_empty()) {
            return Err(Error::EmptyElement(i));
        }
        self.kernel.transact(|tx| {
            let new = NewItem::description(props([
                (PROP_TYPE, json!(TYPE_DATASET)),
                (PROP_NAME, json!(spec.name)),
                (
                    PROP_BODY,
                    json!({ "name": spec.name, "schema_note": spec.schema_note }),
                ),
            ]));
            let ds = tx.create_item(new, actor, reason)?;
            let parent = json!(ds.to_string());
            for el in &spec.elements {
                let new = NewItem::instance(
                    ds,
                    props([
                        (PROP_TYPE, json!(TYPE_DATA_ELEMENT)),
                        (PROP_PARENT, parent.clone()),
                        (
                            PROP_BODY,
                            json!({ "files": el.files, "metadata": el.metadata }),
                        ),
                    ]),
                );
                tx.create_item(new, actor, reason)?;
            }
            Ok(ds)
        })
    }

    pub fn dataset(&self, id: ItemId) -> Result<Dataset> {
        self.kernel.read(|s| dataset(s, id))
    }

    pub fn data_element(&self, id: ItemId) -> Result<DataElement> {
        self.kernel.read(|s| data_element(s, id))
    }

    pub fn create_analysis(&self, req: &AnalysisRequest, owner: &ActorRef) -> Result<ItemId> {
        self.kernel.transact(|tx| {
            let def = build_def(tx.state(), req, None, &Params::new(), owner)?;
            create_analysis_item(tx, def, owner, "create analysis")
        })
    }

    pub fn analysis(&self, id: ItemId) -> Result<Analysis> {
        self.kernel.read(|s| analysis(s, id))
    }

    /// The analysis, if `viewer` is its owner or a grantee.
    pub fn analysis_for(&self, id: ItemId, viewer: &ActorRef) -> Result<Analysis> {
        let a = self.analysis(id)?;
        if a.visible_to(&viewer.id) {
            Ok(a)
        } else {
            Err(Error::NotVisible(id))
        }
    }

    pub fn clone_analysis(
        &self,
        src: ItemId,
        changes: &AnalysisChanges,
        actor: &ActorRef,
    ) -> Result<ItemId> {
        self.kernel.transact(|tx| {
            let source = analysis(tx.state(), src)?;
            if !source.visible_to(&actor.id) {
                return Err(Error::NotVisible(src));
            }
            let req = AnalysisRequest {
                pipeline: source.def.pipeline,
                version: Some(source.def.pipeline_version),
                dataset: source.def.dataset,
                element_ids: changes
                    .element_ids
                    .clone()
                    .unwrap_or_else(|| source.def.element_ids.clone()),
                overrides: changes.overrides.clone().unwrap_or_default(),
                post_processing: changes
                    .post_processing
                    .clone()
                    .or_else(|| source.def.post_processing.clone()),
            };
            let def = build_def(tx.state(), &req, Some(src), &source.def.params, actor)?;
            create_analysis_item(tx, def, actor, &format!("clone of {src}"))
        })
    }

    /// Grants `grantee` view access. Repeated grants are no-ops.
    pub fn share_analysis(&self, id: ItemId, owner: &ActorRef, grantee: &ActorRef) -> Result<()> {
        self.kernel.transact(|tx| {
            let a = analysis(tx.state(), id).map_err(|_| Error::UnknownAnalysis(id))?;
            if a.def.owner != owner.id {
                return Err(Error::NotOwner(id));
            }
            if grantee.id == owner.id || a.shared_with.contains(&grantee.id) {
                return Ok(());
            }
            tx.record_event(
                id,
                Payload::PermissionGranted {
                    grantee: grantee.id.clone(),
                },
                owner,
                &format!("share with {}", grantee.id),
            )?;
            Ok(())
        })
    }

    /// Attaches a note to any item the actor can see. Items belonging to an
    /// analysis follow the analysis' visibility; everything else is public.
    pub fn annotate(&self, item: ItemId, text: &str, actor: &ActorRef) -> Result<Seq> {
        if text.trim().is_empty() {
            return Err(Error::ValidationFailed("annotation text is empty".into()));
        }
        self.kernel.transact(|tx| {
            let s = tx.state();
            s.item(&item).ok_or(Error::UnknownItem(item))?;
            if let Some(a) = owning_analysis(s, item) {
                if !analysis(s, a)?.visible_to(&actor.id) {
                    return Err(Error::NotVisible(item));
                }
            }
            tx.record_event(
                item,
                Payload::Annotated {
                    text: text.to_owned(),
                },
                actor,
                "annotate",
            )
        })
    }

    pub fn can_view(&self, analysis_id: ItemId, actor: &ActorRef) -> Result<bool> {
        Ok(self.analysis(analysis_id)?.visible_to(&actor.id))
    }

    /// Child analysis elements of an analysis, in instantiation order.
    pub fn analysis_elements(&self, analysis_id: ItemId) -> Result<Vec<AnalysisElement>> {
        self.kernel.read(|s| analysis_elements(s, analysis_id))
    }
}

pub(crate) fn step_items_key(version: VersionNumber) -> String {
    format!("steps.v{version}")
}

pub(crate) fn pipeline_by_name(s: &StoreState, name: &str) -> Option<ItemId> {
    s.of_type(TYPE_PIPELINE)
        .iter()
        .copied()
        .find(|id| s.item(id).and_then(|st| st.prop_str(PROP_NAME)) == Some(name))
}

pub(crate) fn pipeline_state(s: &StoreState, id: ItemId) -> Result<&ItemState> {
    s.item(&id)
        .filter(|st| type_of(st) == Some(TYPE_PIPELINE))
        .ok_or(Error::UnknownPipeline(id))
}

pub(crate) fn pipeline_spec(
    s: &StoreState,
    id: ItemId,
    version: Option<VersionNumber>,
) -> Result<(VersionNumber, PipelineSpec)> {
    let st = pipeline_state(s, id)?;
    let v = version.unwrap_or(st.current_version);
    let content = st.version(v).ok_or(Error::UnknownVersion {
        pipeline: id,
        version: v.get(),
    })?;
    let spec = PipelineSpec::deserialize(content)
        .map_err(|e| Error::ValidationFailed(format!("stored pipeline {id}: {e}")))?;
    Ok((v, spec))
}

pub(crate) fn step_item(
    s: &StoreState,
    pipeline: ItemId,
    version: VersionNumber,
    step: &str,
) -> Option<ItemId> {
    s.item(&pipeline)?
        .prop(&step_items_key(version))?
        .get(step)?
        .as_str()?
        .parse()
        .ok()
}

pub(crate) fn dataset(s: &StoreState, id: ItemId) -> Result<Dataset> {
    let st = s
        .item(&id)
        .filter(|st| type_of(st) == Some(TYPE_DATASET))
        .ok_or(Error::UnknownDataset(id))?;
    #[derive(Deserialize)]
    struct Body {
        name: String,
        schema_note: String,
    }
    let b: Body = body(st)?;
    Ok(Dataset {
        id,
        name: b.name,
        schema_note: b.schema_note,
        elements: s.children(&id).to_vec(),
    })
}

pub(crate) fn data_element(s: &StoreState, id: ItemId) -> Result<DataElement> {
    let st = s
        .item(&id)
        .filter(|st| type_of(st) == Some(TYPE_DATA_ELEMENT))
        .ok_or(Error::UnknownItem(id))?;
    #[derive(Deserialize)]
    struct Body {
        files: Vec<String>,
        metadata: BTreeMap<String, Value>,
    }
    let b: Body = body(st)?;
    Ok(DataElement {
        id,
        dataset: st.described_by.expect("data elements are instances"),
        files: b.files,
        metadata: b.metadata,
    })
}

pub(crate) fn analysis(s: &StoreState, id: ItemId) -> Result<Analysis> {
    let st = s
        .item(&id)
        .filter(|st| type_of(st) == Some(TYPE_ANALYSIS))
        .ok_or(Error::UnknownAnalysis(id))?;
    Ok(Analysis {
        id,
        def: body(st)?,
        state: st.state.as_deref().unwrap_or("Defined").parse()?,
        shared_with: st.grants.clone(),
        annotations: st.annotations.clone(),
        created_at: st.created_at,
    })
}

pub(crate) fn analysis_elements(s: &StoreState, id: ItemId) -> Result<Vec<AnalysisElement>> {
    analysis(s, id)?;
    s.children(&id)
        .iter()
        .filter_map(|c| s.item(c))
        .filter(|st| type_of(st) == Some(TYPE_ANALYSIS_ELEMENT))
        .map(AnalysisElement::from_state)
        .collect()
}

/// The analysis an item belongs to, if any.
pub fn owning_analysis(s: &StoreState, item: ItemId) -> Option<ItemId> {
    let st = s.item(&item)?;
    match type_of(st)? {
        TYPE_ANALYSIS => Some(item),
        TYPE_ANALYSIS_ELEMENT | TYPE_PROVENANCE_RECORD => st.prop_str(PROP_PARENT)?.parse().ok(),
        _ => None,
    }
}

fn build_def(
    s: &StoreState,
    req: &AnalysisRequest,
    cloned_from: Option<ItemId>,
    base: &Params,
    owner: &ActorRef,
) -> Result<AnalysisDef> {
    let (version, spec) = pipeline_spec(s, req.pipeline, req.version)?;
    let ds = dataset(s, req.dataset)?;
    if req.element_ids.is_empty() {
        return Err(Error::ValidationFailed(
            "an analysis needs at least one element".into(),
        ));
    }
    let members: HashSet<&ItemId> = ds.elements.iter().collect();
    let mut seen = HashSet::new();
    for e in &req.element_ids {
        if !members.contains(e) {
            return Err(Error::ElementNotInDataset(*e));
        }
        if !seen.insert(e) {
            return Err(Error::ValidationFailed(format!(
                "element {e} selected twice"
            )));
        }
    }
    if let Some(post) = &req.post_processing {
        if !post.is_empty() {
            validate_steps(post, &[])?;
        }
    }
    let params = resolve_params(&spec.param_schema, base, &req.overrides)?;
    Ok(AnalysisDef {
        owner: owner.id.clone(),
        pipeline: req.pipeline,
        pipeline_version: version,
        dataset: req.dataset,
        element_ids: req.element_ids.clone(),
        params,
        post_processing: req.post_processing.clone().filter(|p| !p.is_empty()),
        cloned_from,
    })
}

fn create_analysis_item(
    tx: &mut Txn<'_>,
    def: AnalysisDef,
    actor: &ActorRef,
    reason: &str,
) -> Result<ItemId> {
    let mut refs = vec![def.pipeline, def.dataset];
    refs.extend(def.element_ids.iter().copied());
    refs.extend(def.cloned_from);
    let new = NewItem::instance(
        def.pipeline,
        props([
            (PROP_TYPE, json!(TYPE_ANALYSIS)),
            (PROP_REFS, ids_value(refs)),
            (PROP_BODY, serde_json::to_value(&def).unwrap()),
        ]),
    )
    .with_state(AnalysisState::Defined.as_str());
    tx.create_item(new, actor, reason)
}
