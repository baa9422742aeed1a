//! Lineage graph over data elements, job records, analyses, outcomes and
//! pipeline versions. Edges point from origin to derived node.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ItemId, StoreState, VersionNumber};
use crate::model::{self, type_of, TYPE_ANALYSIS, TYPE_DATA_ELEMENT, TYPE_PROVENANCE_RECORD};
use crate::orchestrator::{outcome_of, record, records_of};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    DataElement,
    JobRecord,
    Analysis,
    Outcome,
    PipelineVersion,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::DataElement => "data-element",
            NodeKind::JobRecord => "job-record",
            NodeKind::Analysis => "analysis",
            NodeKind::Outcome => "outcome",
            NodeKind::PipelineVersion => "pipeline-version",
        }
    }

    const ALL: [NodeKind; 5] = [
        NodeKind::DataElement,
        NodeKind::JobRecord,
        NodeKind::Analysis,
        NodeKind::Outcome,
        NodeKind::PipelineVersion,
    ];
}

/// A lineage node. Outcomes are keyed by their analysis id, pipeline
/// versions by `<pipeline id>@<version>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub id: String,
}

impl NodeRef {
    pub fn new(kind: NodeKind, id: impl fmt::Display) -> Self {
        NodeRef {
            kind,
            id: id.to_string(),
        }
    }

    pub fn pipeline_version(pipeline: ItemId, version: VersionNumber) -> Self {
        NodeRef::new(NodeKind::PipelineVersion, format!("{pipeline}@{version}"))
    }

    fn item(&self) -> Result<ItemId> {
        self.id
            .parse()
            .map_err(|_| Error::UnknownNode(self.to_string()))
    }

    fn pipeline_version_parts(&self) -> Result<(ItemId, VersionNumber)> {
        let bad = || Error::UnknownNode(self.to_string());
        let (p, v) = self.id.split_once('@').ok_or_else(bad)?;
        Ok((
            p.parse().map_err(|_| bad())?,
            v.parse::<u32>()
                .ok()
                .and_then(VersionNumber::new)
                .ok_or_else(bad)?,
        ))
    }

    /// Resolves user input: `kind:id`, or a bare id whose kind is looked up.
    pub fn resolve(s: &StoreState, input: &str) -> Result<NodeRef> {
        let unknown = || Error::UnknownNode(input.to_owned());
        let node = match input.split_once(':') {
            Some((kind, id)) => {
                let kind = NodeKind::ALL
                    .into_iter()
                    .find(|k| k.as_str() == kind)
                    .ok_or_else(unknown)?;
                NodeRef::new(kind, id)
            }
            None if input.contains('@') => NodeRef::new(NodeKind::PipelineVersion, input),
            None => {
                let id: ItemId = input.parse().map_err(|_| unknown())?;
                let st = s.item(&id).ok_or_else(unknown)?;
                let kind = match type_of(st) {
                    Some(TYPE_DATA_ELEMENT) => NodeKind::DataElement,
                    Some(TYPE_PROVENANCE_RECORD) => NodeKind::JobRecord,
                    Some(TYPE_ANALYSIS) => NodeKind::Analysis,
                    _ => return Err(unknown()),
                };
                NodeRef::new(kind, id)
            }
        };
        node.check(s)?;
        Ok(node)
    }

    fn check(&self, s: &StoreState) -> Result<()> {
        let unknown = || Error::UnknownNode(self.to_string());
        let ok = match self.kind {
            NodeKind::DataElement => model::data_element(s, self.item()?).is_ok(),
            NodeKind::JobRecord => record(s, self.item()?).is_ok(),
            NodeKind::Analysis => model::analysis(s, self.item()?).is_ok(),
            NodeKind::Outcome => outcome_of(s, self.item()?).is_some(),
            NodeKind::PipelineVersion => {
                let (p, v) = self.pipeline_version_parts()?;
                model::pipeline_state(s, p).is_ok_and(|st| st.version(v).is_some())
            }
        };
        ok.then_some(()).ok_or_else(unknown)
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.id)
    }
}

impl FromStr for NodeRef {
    type Err = Error;

    /// Parses `kind:id` without consulting a store.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| Error::UnknownNode(s.to_owned()))?;
        let kind = NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == kind)
            .ok_or_else(|| Error::UnknownNode(s.to_owned()))?;
        Ok(NodeRef::new(kind, id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    InputOf,
    ProducedBy,
    DerivedFrom,
    InstantiatedFrom,
    PartOf,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeRef,
    pub to: NodeRef,
    pub relation: Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Origins,
    Descendants,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origins" => Ok(Direction::Origins),
            "descendants" => Ok(Direction::Descendants),
            _ => Err(Error::ValidationFailed(format!("unknown direction `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageGraph {
    pub root: NodeRef,
    pub direction: Direction,
    /// Sorted by kind, then id.
    pub nodes: Vec<NodeRef>,
    /// Every edge between two returned nodes, sorted.
    pub edges: Vec<Edge>,
}

fn edge(from: NodeRef, to: &NodeRef, relation: Relation) -> Edge {
    Edge {
        from,
        to: to.clone(),
        relation,
    }
}

/// Edges ending at `node`.
pub(crate) fn incoming(s: &StoreState, node: &NodeRef) -> Result<Vec<Edge>> {
    let mut out = Vec::new();
    match node.kind {
        NodeKind::DataElement | NodeKind::PipelineVersion => {}
        NodeKind::JobRecord => {
            let r = record(s, node.item()?)?.record;
            if r.links.is_empty() {
                for e in &r.inputs.elements {
                    out.push(edge(
                        NodeRef::new(NodeKind::DataElement, e),
                        node,
                        Relation::InputOf,
                    ));
                }
            }
            for l in &r.links {
                out.push(edge(
                    NodeRef::new(NodeKind::JobRecord, l),
                    node,
                    Relation::DerivedFrom,
                ));
            }
            out.push(edge(
                NodeRef::pipeline_version(r.pipeline, r.pipeline_version),
                node,
                Relation::InstantiatedFrom,
            ));
        }
        NodeKind::Analysis => {
            let id = node.item()?;
            let a = model::analysis(s, id)?;
            for e in &a.def.element_ids {
                out.push(edge(
                    NodeRef::new(NodeKind::DataElement, e),
                    node,
                    Relation::InputOf,
                ));
            }
            out.push(edge(
                NodeRef::pipeline_version(a.def.pipeline, a.def.pipeline_version),
                node,
                Relation::InstantiatedFrom,
            ));
            for r in records_of(s, id) {
                out.push(edge(
                    NodeRef::new(NodeKind::JobRecord, r.id),
                    node,
                    Relation::PartOf,
                ));
            }
            if outcome_of(s, id).is_some() {
                out.push(edge(
                    NodeRef::new(NodeKind::Outcome, id),
                    node,
                    Relation::PartOf,
                ));
            }
        }
        NodeKind::Outcome => {
            let o =
                outcome_of(s, node.item()?).ok_or_else(|| Error::UnknownNode(node.to_string()))?;
            for p in &o.produced_by {
                out.push(edge(
                    NodeRef::new(NodeKind::JobRecord, p),
                    node,
                    Relation::ProducedBy,
                ));
            }
        }
    }
    Ok(out)
}

/// Edges starting at `node`.
pub(crate) fn outgoing(s: &StoreState, node: &NodeRef) -> Result<Vec<Edge>> {
    let mut out = Vec::new();
    let to = |kind, id: ItemId| NodeRef::new(kind, id);
    match node.kind {
        NodeKind::DataElement => {
            let d = node.item()?;
            for x in s.referrers(&d) {
                if let Ok(r) = record(s, *x) {
                    if r.record.links.is_empty() && r.record.inputs.elements.contains(&d) {
                        out.push(edge(
                            node.clone(),
                            &to(NodeKind::JobRecord, r.id),
                            Relation::InputOf,
                        ));
                    }
                } else if let Ok(a) = model::analysis(s, *x) {
                    if a.def.element_ids.contains(&d) {
                        out.push(edge(
                            node.clone(),
                            &to(NodeKind::Analysis, a.id),
                            Relation::InputOf,
                        ));
                    }
                }
            }
        }
        NodeKind::PipelineVersion => {
            let (p, v) = node.pipeline_version_parts()?;
            for x in s.referrers(&p) {
                if let Ok(r) = record(s, *x) {
                    if r.record.pipeline == p && r.record.pipeline_version == v {
                        out.push(edge(
                            node.clone(),
                            &to(NodeKind::JobRecord, r.id),
                            Relation::InstantiatedFrom,
                        ));
                    }
                } else if let Ok(a) = model::analysis(s, *x) {
                    if a.def.pipeline == p && a.def.pipeline_version == v {
                        out.push(edge(
                            node.clone(),
                            &to(NodeKind::Analysis, a.id),
                            Relation::InstantiatedFrom,
                        ));
                    }
                }
            }
        }
        NodeKind::JobRecord => {
            let id = node.item()?;
            let r = record(s, id)?.record;
            out.push(edge(
                node.clone(),
                &to(NodeKind::Analysis, r.analysis),
                Relation::PartOf,
            ));
            for x in s.referrers(&id) {
                if let Ok(next) = record(s, *x) {
                    if next.record.links.contains(&id) {
                        out.push(edge(
                            node.clone(),
                            &to(NodeKind::JobRecord, next.id),
                            Relation::DerivedFrom,
                        ));
                    }
                }
            }
            if outcome_of(s, r.analysis).is_some_and(|o| o.produced_by.contains(&id)) {
                out.push(edge(
                    node.clone(),
                    &to(NodeKind::Outcome, r.analysis),
                    Relation::ProducedBy,
                ));
            }
        }
        NodeKind::Analysis => {}
        NodeKind::Outcome => {
            out.push(edge(
                node.clone(),
                &to(NodeKind::Analysis, node.item()?),
                Relation::PartOf,
            ));
        }
    }
    Ok(out)
}

/// Nodes reachable from `root` in `direction` within `depth` hops (all when
/// `None`), with every edge among them.
pub fn lineage(
    s: &StoreState,
    root: &NodeRef,
    direction: Direction,
    depth: Option<usize>,
) -> Result<LineageGraph> {
    root.check(s)?;
    let mut seen: BTreeSet<NodeRef> = BTreeSet::from([root.clone()]);
    let mut queue = VecDeque::from([(root.clone(), 0usize)]);
    while let Some((n, d)) = queue.pop_front() {
        if depth.is_some_and(|max| d >= max) {
            continue;
        }
        let next: Vec<NodeRef> = match direction {
            Direction::Origins => incoming(s, &n)?.into_iter().map(|e| e.from).collect(),
            Direction::Descendants => outgoing(s, &n)?.into_iter().map(|e| e.to).collect(),
        };
        for m in next {
            if seen.insert(m.clone()) {
                queue.push_back((m, d + 1));
            }
        }
    }
    let mut edges = BTreeSet::new();
    for n in &seen {
        for e in incoming(s, n)? {
            if seen.contains(&e.from) {
                edges.insert(e);
            }
        }
    }
    Ok(LineageGraph {
        root: root.clone(),
        direction,
        nodes: seen.into_iter().collect(),
        edges: edges.into_iter().collect(),
    })
}
