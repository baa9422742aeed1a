//! Random event streams against the raw kernel, plus naive oracles that
//! answer the same questions by scanning the event list.

use std::collections::{BTreeMap, BTreeSet};

use provbase::kernel::{
    ActorId, ActorRef, Event, ItemId, ItemKind, Kernel, NewItem, Payload, Props, Seq, VersionNumber,
};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

const TYPES: [&str; 3] = ["a", "b", "c"];
const KEYS: [&str; 3] = ["x", "y", "type"];
const STATES: [&str; 3] = ["A", "B", "C"];
const ACTORS: [&str; 3] = ["u1", "u2", "u3"];

fn actor(rng: &mut impl Rng) -> ActorRef {
    let id = *ACTORS.choose(rng).unwrap();
    ActorRef::new(id, id.to_uppercase())
}

/// Appends about `n` random valid events to `kernel`.
pub fn random_events(rng: &mut impl Rng, kernel: &Kernel, n: usize) {
    let mut descs: Vec<ItemId> = Vec::new();
    let mut all: Vec<ItemId> = Vec::new();
    while (kernel.last_seq() as usize) < n {
        let who = actor(rng);
        let roll = rng.gen_range(0..100);
        if descs.is_empty() || roll < 15 {
            let props: Props = [
                ("type".to_string(), json!(TYPES.choose(rng).unwrap())),
                ("n".to_string(), json!(rng.gen_range(0..10))),
            ]
            .into_iter()
            .collect();
            let mut new = NewItem::description(props);
            if rng.gen_bool(0.5) {
                new = new.with_content(json!({"v": 1}));
            }
            let id = kernel
                .transact(|tx| tx.create_item(new, &who, "desc"))
                .unwrap();
            descs.push(id);
            all.push(id);
            continue;
        }
        if roll < 40 {
            let desc = *descs.choose(rng).unwrap();
            let mut props: Props = [("type".to_string(), json!(TYPES.choose(rng).unwrap()))]
                .into_iter()
                .collect();
            if rng.gen_bool(0.5) {
                props.insert("parent".into(), json!(all.choose(rng).unwrap().to_string()));
            }
            if rng.gen_bool(0.5) {
                let refs: Vec<String> = (0..rng.gen_range(1..4))
                    .map(|_| all.choose(rng).unwrap().to_string())
                    .collect();
                props.insert("refs".into(), json!(refs));
            }
            let mut new = NewItem::instance(desc, props);
            if rng.gen_bool(0.3) {
                new = new.with_state(*STATES.choose(rng).unwrap());
            }
            let id = kernel
                .transact(|tx| tx.create_item(new, &who, "inst"))
                .unwrap();
            all.push(id);
            continue;
        }
        let item = *all.choose(rng).unwrap();
        let payload = match roll {
            40..=64 => Payload::PropertySet {
                key: KEYS.choose(rng).unwrap().to_string(),
                value: json!(rng.gen_range(0..100)),
            },
            65..=74 => Payload::Annotated {
                text: format!("note {}", rng.gen_range(0..1000)),
            },
            75..=84 => Payload::PermissionGranted {
                grantee: ActorId::new(*ACTORS.choose(rng).unwrap()),
            },
            85..=92 => {
                let from = kernel.get_state(item, None).unwrap().state;
                let to = STATES
                    .iter()
                    .find(|s| Some(s.to_string()) != from && rng.gen_bool(0.5));
                let Some(to) = to else { continue };
                Payload::StateTransition {
                    from,
                    to: to.to_string(),
                }
            }
            _ => {
                let st = kernel.get_state(item, None).unwrap();
                if st.kind != ItemKind::Description {
                    continue;
                }
                Payload::VersionAdded {
                    version: st.current_version.next(),
                    content: json!({"v": st.current_version.get() + 1}),
                }
            }
        };
        kernel.record_event(item, payload, &who, "change").unwrap();
    }
}

/// What a naive fold of an item's events up to some seq yields.
#[derive(Debug, Default, PartialEq)]
pub struct NaiveState {
    pub props: Props,
    pub state: Option<String>,
    pub version: u32,
    pub annotations: Vec<String>,
    pub grants: BTreeSet<ActorId>,
    pub events: usize,
}

pub fn naive_state(events: &[Event], item: ItemId, as_of: Seq) -> Option<NaiveState> {
    let mut out: Option<NaiveState> = None;
    for e in events.iter().filter(|e| e.item == item && e.seq <= as_of) {
        match &e.payload {
            Payload::Created { props, state, .. } => {
                out = Some(NaiveState {
                    props: props.clone(),
                    state: state.clone(),
                    version: 1,
                    events: 1,
                    ..Default::default()
                });
                continue;
            }
            p => {
                let s = out.as_mut()?;
                s.events += 1;
                match p {
                    Payload::PropertySet { key, value } => {
                        s.props.insert(key.clone(), value.clone());
                    }
                    Payload::VersionAdded { version, .. } => s.version = version.get(),
                    Payload::Annotated { text } => s.annotations.push(text.clone()),
                    Payload::PermissionGranted { grantee } => {
                        s.grants.insert(grantee.clone());
                    }
                    Payload::StateTransition { to, .. } => s.state = Some(to.clone()),
                    _ => {}
                }
            }
        }
    }
    out
}

fn created_props(events: &[Event]) -> impl Iterator<Item = (ItemId, &Props)> {
    events.iter().filter_map(|e| match &e.payload {
        Payload::Created { props, .. } => Some((e.item, props)),
        _ => None,
    })
}

/// Creation-time `type` index by scanning.
pub fn naive_of_type(events: &[Event], ty: &str) -> Vec<ItemId> {
    created_props(events)
        .filter(|(_, p)| p.get("type").and_then(Value::as_str) == Some(ty))
        .map(|(id, _)| id)
        .collect()
}

pub fn naive_children(events: &[Event], parent: ItemId) -> Vec<ItemId> {
    let want = parent.to_string();
    created_props(events)
        .filter(|(_, p)| p.get("parent").and_then(Value::as_str) == Some(want.as_str()))
        .map(|(id, _)| id)
        .collect()
}

pub fn naive_referrers(events: &[Event], target: ItemId) -> Vec<ItemId> {
    let want = json!(target.to_string());
    created_props(events)
        .filter(|(_, p)| {
            p.get("refs")
                .and_then(Value::as_array)
                .is_some_and(|r| r.contains(&want))
        })
        .map(|(id, _)| id)
        .collect()
}

pub fn item_ids(events: &[Event]) -> Vec<ItemId> {
    let mut seen = BTreeMap::new();
    for e in events {
        seen.entry(e.item).or_insert(e.seq);
    }
    seen.into_keys().collect()
}

pub fn version(v: u32) -> VersionNumber {
    VersionNumber::new(v).unwrap()
}
