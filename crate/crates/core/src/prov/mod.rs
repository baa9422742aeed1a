//! W3C PROV view of an analysis, serialized as PROV-JSON or PROV-N.
//!
//! Mapping: data elements, files and the outcome are entities; job attempts
//! and the whole run are activities; the analysis owner is the agent.

mod json;
mod provn;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use self::json::{parse_prov_json, to_prov_json};
pub use self::provn::{parse_prov_n, to_prov_n};
use crate::config::ProvConfig;
use crate::error::{Error, Result};
use crate::kernel::{ActorId, ItemId, Kernel, StoreState};
use crate::model::{self, AnalysisState};
use crate::orchestrator::{outcome_of, records_of, JobStatus};

/// An attribute value: a string literal or a qualified name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttrValue {
    Literal(String),
    QName(String),
}

impl AttrValue {
    pub fn lit(s: impl Into<String>) -> Self {
        AttrValue::Literal(s.into())
    }

    pub fn qname(s: impl Into<String>) -> Self {
        AttrValue::QName(s.into())
    }

    pub fn as_str(&self) -> &str {
        match self {
            AttrValue::Literal(s) | AttrValue::QName(s) => s,
        }
    }
}

/// Attribute name to values, both kept sorted.
pub type Attrs = BTreeMap<String, BTreeSet<AttrValue>>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub start_time: Option<String>,
    pub end_time: Option<String>,
    pub attrs: Attrs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    Used,
    WasGeneratedBy,
    WasAssociatedWith,
    WasDerivedFrom,
    WasAttributedTo,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::Used,
        RelationKind::WasGeneratedBy,
        RelationKind::WasAssociatedWith,
        RelationKind::WasDerivedFrom,
        RelationKind::WasAttributedTo,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            RelationKind::Used => "used",
            RelationKind::WasGeneratedBy => "wasGeneratedBy",
            RelationKind::WasAssociatedWith => "wasAssociatedWith",
            RelationKind::WasDerivedFrom => "wasDerivedFrom",
            RelationKind::WasAttributedTo => "wasAttributedTo",
        }
    }

    pub fn from_keyword(k: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.keyword() == k)
    }

    /// PROV-JSON field names of the two arguments.
    fn json_fields(self) -> (&'static str, &'static str) {
        match self {
            RelationKind::Used => ("prov:activity", "prov:entity"),
            RelationKind::WasGeneratedBy => ("prov:entity", "prov:activity"),
            RelationKind::WasAssociatedWith => ("prov:activity", "prov:agent"),
            RelationKind::WasDerivedFrom => ("prov:generatedEntity", "prov:usedEntity"),
            RelationKind::WasAttributedTo => ("prov:entity", "prov:agent"),
        }
    }

    /// Whether PROV-N writes a placeholder for an optional third argument.
    fn has_third(self) -> bool {
        matches!(
            self,
            RelationKind::Used | RelationKind::WasGeneratedBy | RelationKind::WasAssociatedWith
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProvRelation {
    pub kind: RelationKind,
    /// First argument in PROV-N order.
    pub subject: String,
    pub object: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvDocument {
    pub prefixes: BTreeMap<String, String>,
    pub entities: BTreeMap<String, Attrs>,
    pub activities: BTreeMap<String, Activity>,
    pub agents: BTreeMap<String, Attrs>,
    pub relations: BTreeSet<ProvRelation>,
}

impl ProvDocument {
    fn relate(&mut self, kind: RelationKind, subject: &str, object: &str) {
        self.relations.insert(ProvRelation {
            kind,
            subject: subject.to_owned(),
            object: object.to_owned(),
        });
    }

    pub fn count(&self, kind: RelationKind) -> usize {
        self.relations.iter().filter(|r| r.kind == kind).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProvFormat {
    ProvJson,
    ProvN,
}

impl FromStr for ProvFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prov-json" | "json" => Ok(ProvFormat::ProvJson),
            "prov-n" | "provn" => Ok(ProvFormat::ProvN),
            _ => Err(Error::ValidationFailed(format!(
                "unknown PROV format `{s}`"
            ))),
        }
    }
}

impl fmt::Display for ProvFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProvFormat::ProvJson => "prov-json",
            ProvFormat::ProvN => "prov-n",
        })
    }
}

pub fn serialize(doc: &ProvDocument, format: ProvFormat) -> String {
    match format {
        ProvFormat::ProvJson => to_prov_json(doc),
        ProvFormat::ProvN => to_prov_n(doc),
    }
}

pub fn parse(text: &str, format: ProvFormat) -> Result<ProvDocument> {
    match format {
        ProvFormat::ProvJson => parse_prov_json(text),
        ProvFormat::ProvN => parse_prov_n(text),
    }
}

pub fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Characters allowed in the local part of generated qualified names.
fn local(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct Ids<'a> {
    prefix: &'a str,
}

impl Ids<'_> {
    fn q(&self, local_part: &str) -> String {
        format!("{}:{local_part}", self.prefix)
    }
    fn data_element(&self, id: ItemId) -> String {
        self.q(&format!("data-element-{id}"))
    }
    fn file(&self, locator: &str) -> String {
        let h = Sha256::digest(locator.as_bytes());
        self.q(&format!("file-{}", &hex::encode(h)[..16]))
    }
    fn outcome(&self, analysis: ItemId) -> String {
        self.q(&format!("outcome-{analysis}"))
    }
    fn job(&self, rec: ItemId) -> String {
        self.q(&format!("job-{rec}"))
    }
    fn workflow(&self, rec: ItemId) -> String {
        self.q(&format!("workflow-{rec}"))
    }
    fn agent(&self, actor: &ActorId) -> String {
        self.q(&format!("agent-{}", local(actor.as_str())))
    }
    fn class(&self, name: &str) -> AttrValue {
        AttrValue::qname(self.q(name))
    }
}

fn attrs(pairs: impl IntoIterator<Item = (String, AttrValue)>) -> Attrs {
    let mut out = Attrs::new();
    for (k, v) in pairs {
        out.entry(k).or_default().insert(v);
    }
    out
}

fn add(a: &mut Attrs, k: &str, v: AttrValue) {
    a.entry(k.to_owned()).or_default().insert(v);
}

fn notes(s: &StoreState, id: ItemId) -> Vec<AttrValue> {
    s.item(&id)
        .map(|st| {
            st.annotations
                .iter()
                .map(|a| AttrValue::lit(&a.text))
                .collect()
        })
        .unwrap_or_default()
}

/// Builds the PROV document of a terminal analysis visible to `viewer`.
pub fn export(
    s: &StoreState,
    analysis: ItemId,
    viewer: &ActorId,
    cfg: &ProvConfig,
) -> Result<ProvDocument> {
    let a = model::analysis(s, analysis)?;
    if !a.visible_to(viewer) {
        return Err(Error::NotVisible(analysis));
    }
    if !a.state.is_terminal() {
        return Err(Error::NotTerminal(analysis));
    }
    let ids = Ids {
        prefix: &cfg.prefix,
    };
    let p = |n: &str| format!("{}:{n}", cfg.prefix);
    let mut doc = ProvDocument::default();
    doc.prefixes
        .insert(cfg.prefix.clone(), cfg.base_uri.clone());

    let owner = ids.agent(&a.def.owner);
    doc.agents.insert(
        owner.clone(),
        attrs([
            ("prov:type".into(), AttrValue::qname("prov:Person")),
            (p("actor"), AttrValue::lit(a.def.owner.as_str())),
        ]),
    );

    for e in &a.def.element_ids {
        let de = model::data_element(s, *e)?;
        let mut at = attrs([
            ("prov:type".into(), ids.class("DataElement")),
            (p("item"), AttrValue::lit(e.to_string())),
        ]);
        for f in &de.files {
            add(&mut at, &p("file"), AttrValue::lit(f));
        }
        for n in notes(s, *e) {
            add(&mut at, &p("note"), n);
        }
        doc.entities.insert(ids.data_element(*e), at);
    }

    let file_entity = |doc: &mut ProvDocument, locator: &str| -> String {
        let id = ids.file(locator);
        doc.entities.entry(id.clone()).or_insert_with(|| {
            attrs([
                ("prov:type".into(), ids.class("File")),
                ("prov:location".into(), AttrValue::lit(locator)),
            ])
        });
        id
    };

    let records = records_of(s, analysis);
    let mut workflow_act = None;
    let mut outputs_of: BTreeMap<ItemId, Vec<String>> = BTreeMap::new();
    for r in &records {
        let rec = &r.record;
        let act = if rec.is_workflow() {
            ids.workflow(r.id)
        } else {
            ids.job(r.id)
        };
        let mut at = attrs([
            (
                "prov:type".into(),
                ids.class(if rec.is_workflow() { "Workflow" } else { "Job" }),
            ),
            (p("record"), AttrValue::lit(r.id.to_string())),
            (p("step"), AttrValue::lit(&rec.step)),
            (
                p("pipeline"),
                AttrValue::lit(format!("{}@{}", rec.pipeline, rec.pipeline_version)),
            ),
            (
                p("status"),
                AttrValue::lit(match rec.status {
                    JobStatus::Succeeded => "Succeeded",
                    JobStatus::Failed => "Failed",
                }),
            ),
            (p("resource"), AttrValue::lit(&rec.resource)),
        ]);
        if !rec.is_workflow() {
            add(
                &mut at,
                &p("attempt"),
                AttrValue::lit(rec.attempt.to_string()),
            );
            add(
                &mut at,
                &p("fork"),
                AttrValue::lit(format!("{}/{}", rec.fork_index, rec.fork_width)),
            );
        }
        if let Some(sr) = &rec.script_ref {
            add(&mut at, &p("script"), AttrValue::lit(sr));
        }
        for (k, v) in &rec.inputs.params {
            add(&mut at, &p("param"), AttrValue::lit(format!("{k}={v}")));
        }
        if let Some(e) = &rec.error {
            add(&mut at, &p("error"), AttrValue::lit(&e.message));
        }
        if let Some(st) = rec.analysis_state {
            add(&mut at, &p("state"), AttrValue::lit(st.as_str()));
        }
        for n in notes(s, r.id) {
            add(&mut at, &p("note"), n);
        }
        if rec.is_workflow() {
            for n in notes(s, analysis) {
                add(&mut at, &p("note"), n);
            }
        }
        doc.activities.insert(
            act.clone(),
            Activity {
                start_time: Some(format_time(rec.started_at)),
                end_time: Some(format_time(rec.ended_at)),
                attrs: at,
            },
        );
        doc.relate(RelationKind::WasAssociatedWith, &act, &owner);

        if rec.is_workflow() {
            for e in &rec.inputs.elements {
                doc.relate(RelationKind::Used, &act, &ids.data_element(*e));
            }
            workflow_act = Some(act);
            continue;
        }
        if rec.links.is_empty() {
            for e in &rec.inputs.elements {
                doc.relate(RelationKind::Used, &act, &ids.data_element(*e));
            }
        }
        let inputs: Vec<String> = rec
            .inputs
            .files
            .iter()
            .map(|f| file_entity(&mut doc, f))
            .collect();
        for i in &inputs {
            doc.relate(RelationKind::Used, &act, i);
        }
        let mut outs = Vec::new();
        for o in &rec.outputs {
            let out = file_entity(&mut doc, o);
            doc.relate(RelationKind::WasGeneratedBy, &out, &act);
            for i in &inputs {
                if i != &out {
                    doc.relate(RelationKind::WasDerivedFrom, &out, i);
                }
            }
            outs.push(out);
        }
        outputs_of.insert(r.id, outs);
    }

    if let Some(o) = outcome_of(s, analysis) {
        let ent = ids.outcome(analysis);
        let mut at = attrs([
            ("prov:type".into(), ids.class("Outcome")),
            ("prov:location".into(), AttrValue::lit(&o.result_link)),
            (
                p("registered"),
                AttrValue::lit(format_time(o.registered_at)),
            ),
        ]);
        if a.state == AnalysisState::PartiallyFailed {
            add(&mut at, &p("partial"), AttrValue::lit("true"));
        }
        doc.entities.insert(ent.clone(), at);
        if let Some(w) = &workflow_act {
            doc.relate(RelationKind::WasGeneratedBy, &ent, w);
        }
        doc.relate(RelationKind::WasAttributedTo, &ent, &owner);
        for rec in &o.produced_by {
            for out in outputs_of.get(rec).into_iter().flatten() {
                doc.relate(RelationKind::WasDerivedFrom, &ent, out);
            }
        }
    }
    Ok(doc)
}

/// Exports a terminal analysis in the requested format.
pub fn export_prov(
    kernel: &Kernel,
    analysis: ItemId,
    format: ProvFormat,
    viewer: &ActorId,
    cfg: &ProvConfig,
) -> Result<String> {
    let doc = kernel.read(|s| export(s, analysis, viewer, cfg))?;
    Ok(serialize(&doc, format))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural checks: relation endpoints are declared with the right kind,
/// activity times parse and do not run backwards.
pub fn validate(doc: &ProvDocument) -> ValidationReport {
    let mut v = Vec::new();
    let declared = |kind: &str, id: &str| match kind {
        "entity" => doc.entities.contains_key(id),
        "activity" => doc.activities.contains_key(id),
        _ => doc.agents.contains_key(id),
    };
    for r in &doc.relations {
        let (sk, ok) = match r.kind {
            RelationKind::Used => ("activity", "entity"),
            RelationKind::WasGeneratedBy => ("entity", "activity"),
            RelationKind::WasAssociatedWith => ("activity", "agent"),
            RelationKind::WasDerivedFrom => ("entity", "entity"),
            RelationKind::WasAttributedTo => ("entity", "agent"),
        };
        for (kind, id) in [(sk, &r.subject), (ok, &r.object)] {
            if !declared(kind, id) {
                v.push(format!(
                    "{}({}, {}): undeclared {kind} {id}",
                    r.kind.keyword(),
                    r.subject,
                    r.object
                ));
            }
        }
    }
    for (id, a) in &doc.activities {
        let parse = |t: &Option<String>, what: &str, v: &mut Vec<String>| {
            t.as_ref()
                .and_then(|t| match DateTime::parse_from_rfc3339(t) {
                    Ok(t) => Some(t),
                    Err(_) => {
                        v.push(format!("activity {id}: unparseable {what} `{t}`"));
                        None
                    }
                })
        };
        let start = parse(&a.start_time, "startTime", &mut v);
        let end = parse(&a.end_time, "endTime", &mut v);
        if let (Some(s), Some(e)) = (start, end) {
            if e < s {
                v.push(format!("activity {id}: endTime precedes startTime"));
            }
        }
    }
    ValidationReport { violations: v }
}

/// Parses a serialized document and validates it.
pub fn validate_prov(text: &str, format: ProvFormat) -> Result<ValidationReport> {
    Ok(validate(&parse(text, format)?))
}
