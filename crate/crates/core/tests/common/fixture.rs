use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use provbase::kernel::{ItemId, KernelOptions, SteppingClock};
use provbase::model::AnalysisState;
use provbase::orchestrator::{outcome_of, records_of, SimExecutor};
use provbase::prov::{Activity, AttrValue, Attrs, ProvDocument, ProvRelation, RelationKind};
use sha2::{Digest, Sha256};

use super::{alice, linear, World};

/// One element, one step, seeded ids and stepping clocks: fully deterministic.
pub fn minimal() -> (World, ItemId) {
    let t0 = Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap();
    let kernel = KernelOptions::default()
        .seeded_ids(7)
        .clock(Arc::new(SteppingClock::new(t0, Duration::seconds(1))))
        .open()
        .unwrap();
    let w = World::with_kernel(kernel);
    let a = w.analysis(&linear("minimal", 1), 1, &alice());
    let exec = SimExecutor::new(1, 0.0)
        .with_clock(Arc::new(SteppingClock::new(
            t0 + Duration::hours(1),
            Duration::seconds(1),
        )))
        .with_latency_ms(250, 250)
        .with_capacity(1);
    let state = w
        .orchestrator(Arc::new(exec))
        .run_analysis(a, &alice())
        .unwrap()
        .wait()
        .unwrap();
    assert_eq!(state, AnalysisState::Completed);
    (w, a)
}

fn attrs(pairs: &[(&str, AttrValue)]) -> Attrs {
    let mut a = Attrs::new();
    for (k, v) in pairs {
        a.entry(k.to_string()).or_default().insert(v.clone());
    }
    a
}

fn lit(s: impl Into<String>) -> AttrValue {
    AttrValue::lit(s)
}

fn q(s: &str) -> AttrValue {
    AttrValue::qname(s)
}

fn file_id(locator: &str) -> String {
    format!("pb:file-{}", &hex::encode(Sha256::digest(locator))[..16])
}

/// The expected export of [`minimal`], assembled field by field. Ids come
/// from the store; file entity ids are hashed here independently.
pub fn expected_minimal(w: &World, a: ItemId) -> ProvDocument {
    let recs = w.kernel.read(|s| records_of(s, a));
    let job = recs.iter().find(|r| r.record.step == "s0").unwrap();
    let wf = recs.iter().find(|r| r.record.is_workflow()).unwrap();
    let an = w.registry.analysis(a).unwrap();
    let de = an.def.element_ids[0];
    let registered = w.kernel.read(|s| outcome_of(s, a)).unwrap().registered_at;
    let job_uuid = job.record.job_id.as_ref().unwrap().to_string();

    let input = "lfn://data/ds/0.mnc";
    let output = format!("sim://{job_uuid}/s0-0.out");
    let (act, wact) = (
        format!("pb:job-{}", job.id),
        format!("pb:workflow-{}", wf.id),
    );
    let (de_id, out_id, in_id) = (
        format!("pb:data-element-{de}"),
        file_id(&output),
        file_id(input),
    );
    let outcome = format!("pb:outcome-{a}");
    let pipeline = format!("{}@1", an.def.pipeline);

    let mut d = ProvDocument::default();
    d.prefixes
        .insert("pb".into(), "https://provbase.example.org/ns#".into());
    d.agents.insert(
        "pb:agent-alice".into(),
        attrs(&[("prov:type", q("prov:Person")), ("pb:actor", lit("alice"))]),
    );
    d.entities.insert(
        de_id.clone(),
        attrs(&[
            ("prov:type", q("pb:DataElement")),
            ("pb:item", lit(de.to_string())),
            ("pb:file", lit(input)),
        ]),
    );
    d.entities.insert(
        in_id.clone(),
        attrs(&[("prov:type", q("pb:File")), ("prov:location", lit(input))]),
    );
    d.entities.insert(
        out_id.clone(),
        attrs(&[("prov:type", q("pb:File")), ("prov:location", lit(&output))]),
    );
    d.entities.insert(
        outcome.clone(),
        attrs(&[
            ("prov:type", q("pb:Outcome")),
            (
                "prov:location",
                lit(format!("lfn://provbase/analyses/{a}/result")),
            ),
            (
                "pb:registered",
                lit(registered.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)),
            ),
        ]),
    );
    let (start, end) = ("2024-03-01T10:00:00Z", "2024-03-01T10:00:00.250Z");
    d.activities.insert(
        act.clone(),
        Activity {
            start_time: Some(start.into()),
            end_time: Some(end.into()),
            attrs: attrs(&[
                ("prov:type", q("pb:Job")),
                ("pb:record", lit(job.id.to_string())),
                ("pb:step", lit("s0")),
                ("pb:pipeline", lit(&pipeline)),
                ("pb:status", lit("Succeeded")),
                ("pb:resource", lit("sim-node-00")),
                ("pb:attempt", lit("1")),
                ("pb:fork", lit("0/1")),
                ("pb:script", lit("bin/s0.sh")),
                ("pb:param", lit("iters=1")),
            ]),
        },
    );
    d.activities.insert(
        wact.clone(),
        Activity {
            start_time: Some(start.into()),
            end_time: Some(end.into()),
            attrs: attrs(&[
                ("prov:type", q("pb:Workflow")),
                ("pb:record", lit(wf.id.to_string())),
                ("pb:step", lit("<workflow>")),
                ("pb:pipeline", lit(&pipeline)),
                ("pb:status", lit("Succeeded")),
                ("pb:resource", lit("orchestrator")),
                ("pb:param", lit("iters=1")),
                ("pb:state", lit("Completed")),
            ]),
        },
    );
    let rel = |kind, s: &str, o: &str| ProvRelation {
        kind,
        subject: s.into(),
        object: o.into(),
    };
    d.relations = BTreeSet::from([
        rel(RelationKind::Used, &act, &de_id),
        rel(RelationKind::Used, &act, &in_id),
        rel(RelationKind::Used, &wact, &de_id),
        rel(RelationKind::WasGeneratedBy, &out_id, &act),
        rel(RelationKind::WasGeneratedBy, &outcome, &wact),
        rel(RelationKind::WasDerivedFrom, &out_id, &in_id),
        rel(RelationKind::WasDerivedFrom, &outcome, &out_id),
        rel(RelationKind::WasAssociatedWith, &act, "pb:agent-alice"),
        rel(RelationKind::WasAssociatedWith, &wact, "pb:agent-alice"),
        rel(RelationKind::WasAttributedTo, &outcome, "pb:agent-alice"),
    ]);

    d
}
