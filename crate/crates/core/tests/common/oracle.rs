//! Small randomized domain stores and full-scan reference answers computed
//! from nothing but the raw event list.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use provbase::kernel::{ActorId, ActorRef, Event, ItemId, Kernel, Payload};
use provbase::model::{AnalysisRequest, DataElementSpec, DatasetSpec, Registry, StepSpec};
use provbase::orchestrator::{Orchestrator, OrchestratorSettings, SimExecutor};
use provbase::query::{
    find_data_elements, lineage, list_analyses, usage, AnalysisFilter, Constraint, Direction,
    NodeRef, Op, UsageTarget,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::linear;

pub const SITES: [&str; 3] = ["MNI", "UCL", "BIC"];
pub const TAGS: [&str; 3] = ["t1", "t2", "dti"];

pub fn actors() -> Vec<ActorRef> {
    (0..3)
        .map(|i| ActorRef::new(format!("u{i}"), format!("User {i}")))
        .collect()
}

/// A random store built through the public API. `None` when it grew past
/// `max_events`.
pub fn random_store(seed: u64, max_events: u64) -> Option<Arc<Kernel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = Arc::new(Kernel::in_memory());
    let reg = Registry::new(kernel.clone());
    let people = actors();

    let mut datasets = Vec::new();
    for d in 0..rng.gen_range(1..=2) {
        let elements = (0..rng.gen_range(1..=5))
            .map(|i| {
                let mut md = BTreeMap::new();
                if rng.gen_bool(0.8) {
                    md.insert("age".to_string(), json!(rng.gen_range(20..90)));
                }
                if rng.gen_bool(0.8) {
                    md.insert("site".to_string(), json!(SITES.choose(&mut rng).unwrap()));
                }
                let tags: Vec<&str> = TAGS.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
                md.insert("tags".to_string(), json!(tags));
                DataElementSpec {
                    files: vec![format!("lfn://d{d}/{i}.mnc")],
                    metadata: md,
                }
            })
            .collect();
        let spec = DatasetSpec {
            name: format!("d{d}"),
            schema_note: String::new(),
            elements,
        };
        datasets.push(
            reg.register_dataset(&spec, people.choose(&mut rng).unwrap(), "seed")
                .unwrap(),
        );
    }

    let mut pipelines = Vec::new();
    for p in 0..rng.gen_range(1..=2) {
        let name = format!("p{p}");
        let (id, _) = reg
            .register_pipeline(&linear(&name, rng.gen_range(1..=2)), &people[0], "seed")
            .unwrap();
        if rng.gen_bool(0.4) {
            let mut v2 = linear(&name, rng.gen_range(1..=2));
            v2.steps[0] = StepSpec::new("s0", "bin/v2.sh");
            reg.register_pipeline(&v2, &people[0], "seed").unwrap();
        }
        pipelines.push(id);
    }

    let exec = Arc::new(SimExecutor::new(
        seed,
        if rng.gen_bool(0.5) { 0.0 } else { 0.5 },
    ));
    let orch = Orchestrator::new(kernel.clone(), exec, OrchestratorSettings::default());
    for _ in 0..rng.gen_range(1..=3) {
        let owner = people.choose(&mut rng).unwrap();
        let ds = *datasets.choose(&mut rng).unwrap();
        let all = reg.dataset(ds).unwrap().elements;
        let n = rng.gen_range(1..=all.len());
        let picked: Vec<ItemId> = all.choose_multiple(&mut rng, n).copied().collect();
        let req = AnalysisRequest {
            pipeline: *pipelines.choose(&mut rng).unwrap(),
            version: rng
                .gen_bool(0.3)
                .then(|| provbase::kernel::VersionNumber::new(1).unwrap()),
            dataset: ds,
            element_ids: picked,
            overrides: Default::default(),
            post_processing: None,
        };
        let a = reg.create_analysis(&req, owner).unwrap();
        for _ in 0..rng.gen_range(0..=2) {
            let grantee = people.choose(&mut rng).unwrap();
            reg.share_analysis(a, owner, grantee).unwrap();
        }
        if rng.gen_bool(0.7) {
            orch.run_analysis(a, owner).unwrap().wait().unwrap();
        }
        if kernel.last_seq() > max_events {
            return None;
        }
    }
    (kernel.last_seq() <= max_events).then_some(kernel)
}

/// Item snapshots refolded from raw events.
#[derive(Debug, Default)]
struct Raw {
    order: Vec<ItemId>,
    props: HashMap<ItemId, BTreeMap<String, Value>>,
    state: HashMap<ItemId, String>,
    grants: HashMap<ItemId, BTreeSet<ActorId>>,
    outcomes: HashMap<ItemId, Value>,
    transitions: HashMap<ItemId, Vec<(String, String)>>,
}

impl Raw {
    fn new(events: &[Event]) -> Raw {
        let mut r = Raw::default();
        for e in events {
            match &e.payload {
                Payload::Created { props, state, .. } => {
                    r.order.push(e.item);
                    r.props.insert(e.item, props.clone().into_iter().collect());
                    if let Some(s) = state {
                        r.state.insert(e.item, s.clone());
                    }
                }
                Payload::PropertySet { key, value } => {
                    r.props
                        .get_mut(&e.item)
                        .unwrap()
                        .insert(key.clone(), value.clone());
                }
                Payload::StateTransition { to, .. } => {
                    r.state.insert(e.item, to.clone());
                    r.transitions
                        .entry(e.item)
                        .or_default()
                        .push((to.clone(), e.at.to_rfc3339()));
                }
                Payload::PermissionGranted { grantee } => {
                    r.grants.entry(e.item).or_default().insert(grantee.clone());
                }
                Payload::OutcomeAttached { outcome } => {
                    r.outcomes.insert(e.item, outcome.clone());
                }
                _ => {}
            }
        }
        r
    }

    fn of(&self, ty: &str) -> impl Iterator<Item = (ItemId, &BTreeMap<String, Value>)> + '_ {
        let ty = ty.to_owned();
        self.order
            .iter()
            .map(|id| (*id, &self.props[id]))
            .filter(move |(_, p)| p.get("type").and_then(Value::as_str) == Some(ty.as_str()))
    }

    fn visible(&self, analysis: ItemId, body: &Value, viewer: &str) -> bool {
        body["owner"] == json!(viewer)
            || self
                .grants
                .get(&analysis)
                .is_some_and(|g| g.contains(&ActorId::new(viewer)))
    }
}

#[derive(Debug, Clone)]
pub enum Q {
    Age(Op, i64),
    Site(Op, &'static str),
    Tag(&'static str),
}

impl Q {
    pub fn random(rng: &mut impl Rng) -> Q {
        match rng.gen_range(0..3) {
            0 => Q::Age(
                *[Op::Eq, Op::Neq, Op::Lt, Op::Lte, Op::Gt, Op::Gte]
                    .choose(rng)
                    .unwrap(),
                rng.gen_range(20..90),
            ),
            1 => Q::Site(
                *[Op::Eq, Op::Neq, Op::Contains, Op::Lt, Op::Gte]
                    .choose(rng)
                    .unwrap(),
                ["MNI", "UCL", "BIC", "C", "M"].choose(rng).unwrap(),
            ),
            _ => Q::Tag(TAGS.choose(rng).unwrap()),
        }
    }

    pub fn constraint(&self) -> Constraint {
        match self {
            Q::Age(o, v) => Constraint::new("age", *o, *v),
            Q::Site(o, v) => Constraint::new("site", *o, *v),
            Q::Tag(t) => Constraint::new("tags", Op::Contains, *t),
        }
    }

    fn holds(&self, md: &Value) -> bool {
        match *self {
            Q::Age(o, v) => md["age"].as_i64().is_some_and(|a| match o {
                Op::Eq => a == v,
                Op::Neq => a != v,
                Op::Lt => a < v,
                Op::Lte => a <= v,
                Op::Gt => a > v,
                _ => a >= v,
            }),
            Q::Site(o, v) => md["site"].as_str().is_some_and(|s| match o {
                Op::Eq => s == v,
                Op::Neq => s != v,
                Op::Contains => s.contains(v),
                Op::Lt => s < v,
                _ => s >= v,
            }),
            Q::Tag(t) => md["tags"].as_array().is_some_and(|a| a.contains(&json!(t))),
        }
    }
}

fn naive_find(raw: &Raw, dataset: Option<ItemId>, qs: &[Q]) -> Vec<(String, Value)> {
    let mut out: Vec<(String, Value)> = raw
        .of("data_element")
        .filter(|(_, p)| dataset.is_none_or(|d| p.get("parent") == Some(&json!(d.to_string()))))
        .filter(|(_, p)| qs.iter().all(|q| q.holds(&p["body"]["metadata"])))
        .map(|(id, p)| (id.to_string(), p["body"]["metadata"].clone()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn naive_list(
    raw: &Raw,
    viewer: &str,
    owner: Option<&str>,
    state: Option<&str>,
) -> Vec<(String, String, String)> {
    let mut out: Vec<(String, String, String)> = raw
        .of("analysis")
        .filter(|(id, p)| raw.visible(*id, &p["body"], viewer))
        .map(|(id, p)| {
            let st = raw
                .state
                .get(&id)
                .cloned()
                .unwrap_or_else(|| "Defined".into());
            (
                id.to_string(),
                p["body"]["owner"].as_str().unwrap().to_owned(),
                st,
            )
        })
        .filter(|(_, o, s)| owner.is_none_or(|w| w == o) && state.is_none_or(|w| w == s))
        .collect();
    out.sort();
    out
}

type UsageRowKey = (String, String, Option<String>, Option<String>);

fn naive_usage(raw: &Raw, target: &UsageTarget, viewer: &str) -> Vec<UsageRowKey> {
    let mut out: Vec<UsageRowKey> = raw
        .of("analysis")
        .filter(|(id, p)| raw.visible(*id, &p["body"], viewer))
        .filter(|(_, p)| {
            let b = &p["body"];
            match target {
                UsageTarget::PipelineVersion { pipeline, version } => {
                    b["pipeline"] == json!(pipeline.to_string())
                        && b["pipeline_version"] == json!(version.get())
                }
                UsageTarget::Dataset { id } => b["dataset"] == json!(id.to_string()),
                UsageTarget::DataElement { id } => b["element_ids"]
                    .as_array()
                    .unwrap()
                    .contains(&json!(id.to_string())),
            }
        })
        .map(|(id, _)| {
            let tr = raw.transitions.get(&id).cloned().unwrap_or_default();
            let started = tr
                .iter()
                .filter(|(to, _)| to == "Running")
                .map(|(_, at)| at.clone())
                .next_back();
            let ended = tr
                .iter()
                .filter(|(to, _)| matches!(to.as_str(), "Completed" | "PartiallyFailed" | "Failed"))
                .map(|(_, at)| at.clone())
                .next_back();
            let st = raw
                .state
                .get(&id)
                .cloned()
                .unwrap_or_else(|| "Defined".into());
            (id.to_string(), st, started, ended)
        })
        .collect();
    out.sort();
    out
}

type EdgeKey = (String, String, &'static str);

/// Every lineage edge, derived from record, analysis and outcome bodies.
fn naive_edges(raw: &Raw) -> BTreeSet<EdgeKey> {
    let n = |kind: &str, id: &Value| format!("{kind}:{}", id.as_str().unwrap());
    let pv = |b: &Value| {
        format!(
            "pipeline-version:{}@{}",
            b["pipeline"].as_str().unwrap(),
            b["pipeline_version"]
        )
    };
    let mut edges = BTreeSet::new();
    for (id, p) in raw.of("provenance_record") {
        let b = &p["body"];
        let me = format!("job-record:{id}");
        let links = b["links"].as_array().unwrap();
        if links.is_empty() {
            for e in b["inputs"]["elements"].as_array().unwrap() {
                edges.insert((n("data-element", e), me.clone(), "input-of"));
            }
        }
        for l in links {
            edges.insert((n("job-record", l), me.clone(), "derived-from"));
        }
        edges.insert((pv(b), me.clone(), "instantiated-from"));
        edges.insert((me.clone(), n("analysis", &b["analysis"]), "part-of"));
    }
    for (id, p) in raw.of("analysis") {
        let b = &p["body"];
        let me = format!("analysis:{id}");
        for e in b["element_ids"].as_array().unwrap() {
            edges.insert((n("data-element", e), me.clone(), "input-of"));
        }
        edges.insert((pv(b), me.clone(), "instantiated-from"));
        if let Some(o) = raw.outcomes.get(&id) {
            let out = format!("outcome:{id}");
            for r in o["produced_by"].as_array().unwrap() {
                edges.insert((n("job-record", r), out.clone(), "produced-by"));
            }
            edges.insert((out, me.clone(), "part-of"));
        }
    }
    edges
}

/// Fixpoint relaxation over the full edge list, one hop per round.
fn naive_lineage(
    edges: &BTreeSet<EdgeKey>,
    root: &str,
    dir: Direction,
    depth: Option<usize>,
) -> (BTreeSet<String>, BTreeSet<EdgeKey>) {
    let mut reached: BTreeSet<String> = BTreeSet::from([root.to_owned()]);
    let mut round = 0;
    loop {
        if depth.is_some_and(|d| round >= d) {
            break;
        }
        let mut next = reached.clone();
        for (f, t, _) in edges {
            let (src, dst) = match dir {
                Direction::Origins => (t, f),
                Direction::Descendants => (f, t),
            };
            if reached.contains(src) {
                next.insert(dst.clone());
            }
        }
        if next == reached {
            break;
        }
        reached = next;
        round += 1;
    }
    let induced = edges
        .iter()
        .filter(|(f, t, _)| reached.contains(f) && reached.contains(t))
        .cloned()
        .collect();
    (reached, induced)
}

/// Compares the query service against the reference answers on one store.
/// Returns a description of every mismatch.
pub fn check_store(kernel: &Kernel, rng: &mut impl Rng) -> Vec<String> {
    let mut bad = Vec::new();
    kernel.read(|s| {
        let raw = Raw::new(s.events());
        let people = actors();
        let datasets: Vec<ItemId> = raw.of("dataset").map(|(id, _)| id).collect();
        let elements: Vec<ItemId> = raw.of("data_element").map(|(id, _)| id).collect();

        for _ in 0..4 {
            let qs: Vec<Q> = (0..rng.gen_range(0..=3)).map(|_| Q::random(rng)).collect();
            let ds = if rng.gen_bool(0.5) {
                datasets.choose(rng).copied()
            } else {
                None
            };
            let cs: Vec<Constraint> = qs.iter().map(Q::constraint).collect();
            let mut got: Vec<(String, Value)> = find_data_elements(s, ds, &cs)
                .unwrap()
                .into_iter()
                .map(|m| (m.id.to_string(), serde_json::to_value(&m.metadata).unwrap()))
                .collect();
            got.sort_by(|a, b| a.0.cmp(&b.0));
            let want = naive_find(&raw, ds, &qs);
            if got != want {
                bad.push(format!(
                    "find_data_elements {qs:?}: {} vs {}",
                    got.len(),
                    want.len()
                ));
            }
        }

        for viewer in &people {
            let owner = rng
                .gen_bool(0.3)
                .then(|| people.choose(rng).unwrap().id.clone());
            let state = rng.gen_bool(0.3).then(|| {
                *["Defined", "Completed", "Failed", "PartiallyFailed"]
                    .choose(rng)
                    .unwrap()
            });
            let filter = AnalysisFilter {
                owner: owner.clone(),
                state: state.map(|x| x.parse().unwrap()),
                pipeline: None,
            };
            let mut got: Vec<(String, String, String)> = list_analyses(s, &viewer.id, &filter)
                .into_iter()
                .map(|a| {
                    (
                        a.id.to_string(),
                        a.owner.as_str().to_owned(),
                        a.state.as_str().to_owned(),
                    )
                })
                .collect();
            got.sort();
            let want = naive_list(
                &raw,
                viewer.id.as_str(),
                owner.as_ref().map(ActorId::as_str),
                state,
            );
            if got != want {
                bad.push(format!(
                    "list_analyses for {}: {got:?} vs {want:?}",
                    viewer.id.as_str()
                ));
            }
        }

        let analyses: Vec<(ItemId, Value)> = raw
            .of("analysis")
            .map(|(id, p)| (id, p["body"].clone()))
            .collect();
        let mut targets: Vec<UsageTarget> = datasets
            .iter()
            .map(|d| UsageTarget::Dataset { id: *d })
            .collect();
        targets.extend(elements.iter().map(|e| UsageTarget::DataElement { id: *e }));
        for (_, b) in &analyses {
            targets.push(UsageTarget::PipelineVersion {
                pipeline: b["pipeline"].as_str().unwrap().parse().unwrap(),
                version: provbase::kernel::VersionNumber::new(
                    b["pipeline_version"].as_u64().unwrap() as u32,
                )
                .unwrap(),
            });
        }
        for t in targets.choose_multiple(rng, 4) {
            let viewer = people.choose(rng).unwrap();
            let got: Vec<UsageRowKey> = usage(s, t, &viewer.id)
                .unwrap()
                .into_iter()
                .map(|r| {
                    (
                        r.analysis.to_string(),
                        r.state.as_str().to_owned(),
                        r.run_started.map(|t| t.to_rfc3339()),
                        r.run_ended.map(|t| t.to_rfc3339()),
                    )
                })
                .collect();
            let want = naive_usage(&raw, t, viewer.id.as_str());
            if got != want {
                bad.push(format!("usage {t}: {got:?} vs {want:?}"));
            }
        }

        let edges = naive_edges(&raw);
        let mut roots: Vec<String> = edges
            .iter()
            .flat_map(|(f, t, _)| [f.clone(), t.clone()])
            .collect();
        roots.extend(elements.iter().map(|e| format!("data-element:{e}")));
        roots.sort();
        roots.dedup();
        for root in roots.choose_multiple(rng, 5) {
            let dir = if rng.gen_bool(0.5) {
                Direction::Origins
            } else {
                Direction::Descendants
            };
            let depth = rng.gen_bool(0.5).then(|| rng.gen_range(0..4));
            let node: NodeRef = root.parse().unwrap();
            let g = match lineage(s, &node, dir, depth) {
                Ok(g) => g,
                Err(e) => {
                    bad.push(format!("lineage {root}: {e}"));
                    continue;
                }
            };
            let nodes: BTreeSet<String> = g.nodes.iter().map(ToString::to_string).collect();
            let got_edges: BTreeSet<EdgeKey> = g
                .edges
                .iter()
                .map(|e| {
                    let rel = serde_json::to_value(e.relation).unwrap();
                    let rel: &'static str = match rel.as_str().unwrap() {
                        "input-of" => "input-of",
                        "produced-by" => "produced-by",
                        "derived-from" => "derived-from",
                        "instantiated-from" => "instantiated-from",
                        _ => "part-of",
                    };
                    (e.from.to_string(), e.to.to_string(), rel)
                })
                .collect();
            let (want_nodes, want_edges) = naive_lineage(&edges, root, dir, depth);
            if nodes != want_nodes || got_edges != want_edges {
                bad.push(format!(
                    "lineage {root} {dir:?} {depth:?}: {} nodes/{} edges vs {}/{}",
                    nodes.len(),
                    got_edges.len(),
                    want_nodes.len(),
                    want_edges.len()
                ));
            }
        }
    });
    bad
}
