use std::collections::{BTreeMap, HashMap};

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::types::*;
use crate::error::{Error, Result};

/// Property keys the store indexes at item creation.
pub const PROP_TYPE: &str = "type";
pub const PROP_PARENT: &str = "parent";
pub const PROP_REFS: &str = "refs";

/// In-memory materialization of the log: item snapshots, the raw events and
/// the secondary indexes derived from them.
#[derive(Debug, Default)]
pub struct StoreState {
    items: HashMap<ItemId, ItemState>,
    events: Vec<Event>,
    item_events: HashMap<ItemId, Vec<usize>>,
    by_type: HashMap<String, Vec<ItemId>>,
    children: HashMap<ItemId, Vec<ItemId>>,
    referrers: HashMap<ItemId, Vec<ItemId>>,
}

impl StoreState {
    pub fn item(&self, id: &ItemId) -> Option<&ItemState> {
        self.items.get(id)
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.items.contains_key(id)
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> impl Iterator<Item = &ItemState> {
        self.items.values()
    }

    pub fn last_seq(&self) -> Seq {
        self.events.len() as Seq
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, seq: Seq) -> Option<&Event> {
        seq.checked_sub(1).and_then(|i| self.events.get(i as usize))
    }

    /// Events of one item, in seq order.
    pub fn item_events<'a>(&'a self, id: &ItemId) -> impl Iterator<Item = &'a Event> + 'a {
        self.item_events
            .get(id)
            .into_iter()
            .flatten()
            .map(|&i| &self.events[i])
    }

    /// Items whose `type` property equals `ty`, in creation order.
    pub fn of_type(&self, ty: &str) -> &[ItemId] {
        self.by_type.get(ty).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Items whose `parent` property names `id`, in creation order.
    pub fn children(&self, id: &ItemId) -> &[ItemId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Items listing `id` in their `refs` property, in creation order.
    pub fn referrers(&self, id: &ItemId) -> &[ItemId] {
        self.referrers.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks whether `payload` may be appended to `item` in the current state.
    pub(crate) fn check(&self, item: &ItemId, payload: &Payload) -> Result<()> {
        if let Payload::Created {
            kind, described_by, ..
        } = payload
        {
            if self.items.contains_key(item) {
                return Err(Error::IllegalTransition(format!("{item} already exists")));
            }
            return match (kind, described_by) {
                (ItemKind::Instance, None) => Err(Error::InvalidKind(
                    "an Instance requires a description".into(),
                )),
                (_, Some(desc)) => match self.items.get(desc) {
                    Some(d) if d.kind == ItemKind::Description => Ok(()),
                    _ => Err(Error::UnknownDescription(*desc)),
                },
                (ItemKind::Description, None) => Ok(()),
            };
        }
        let state = self.items.get(item).ok_or(Error::UnknownItem(*item))?;
        match payload {
            Payload::Created { .. } => unreachable!(),
            Payload::VersionAdded { version, .. } => {
                if state.kind != ItemKind::Description {
                    return Err(Error::IllegalTransition(
                        "only descriptions are versioned".into(),
                    ));
                }
                if *version != state.current_version.next() {
                    return Err(Error::IllegalTransition(format!(
                        "expected version {}, got {version}",
                        state.current_version.next()
                    )));
                }
            }
            Payload::StateTransition { from, to } => {
                if *from != state.state {
                    return Err(Error::IllegalTransition(format!(
                        "{item} is in state {:?}, not {from:?}",
                        state.state
                    )));
                }
                if Some(to) == state.state.as_ref() {
                    return Err(Error::IllegalTransition(format!("{item} is already {to}")));
                }
            }
            Payload::Annotated { text } if text.trim().is_empty() => {
                return Err(Error::ValidationFailed("annotation text is empty".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Applies an already checked event. `event.seq` must be `last_seq() + 1`.
    pub(crate) fn apply(&mut self, event: Event) {
        debug_assert_eq!(event.seq, self.last_seq() + 1);
        let idx = self.events.len();
        let id = event.item;
        match &event.payload {
            Payload::Created { props, .. } => {
                let state = fold_created(&event);
                if let Some(ty) = props.get(PROP_TYPE).and_then(Value::as_str) {
                    self.by_type.entry(ty.to_owned()).or_default().push(id);
                }
                if let Some(parent) = props.get(PROP_PARENT).and_then(parse_id) {
                    self.children.entry(parent).or_default().push(id);
                }
                if let Some(Value::Array(refs)) = props.get(PROP_REFS) {
                    let mut seen = Vec::with_capacity(refs.len());
                    for r in refs.iter().filter_map(parse_id) {
                        if !seen.contains(&r) {
                            seen.push(r);
                            self.referrers.entry(r).or_default().push(id);
                        }
                    }
                }
                self.items.insert(id, state);
            }
            _ => {
                let state = self.items.get_mut(&id).expect("checked before apply");
                fold_event(state, &event);
            }
        }
        self.item_events.entry(id).or_default().push(idx);
        self.events.push(event);
    }

    /// Folds the events of `item` with seq <= `as_of` from scratch.
    pub fn state_as_of(&self, item: &ItemId, as_of: Seq) -> Result<ItemState> {
        let mut events = self.item_events(item).peekable();
        let first = events.peek().ok_or(Error::UnknownItem(*item))?;
        if as_of < first.seq {
            return Err(Error::SeqBeforeCreation {
                item: *item,
                as_of,
                created: first.seq,
            });
        }
        let mut state = fold_created(events.next().unwrap());
        for e in events.take_while(|e| e.seq <= as_of) {
            fold_event(&mut state, e);
        }
        Ok(state)
    }

    /// Hex SHA-256 over the id-sorted JSON serialization of every item snapshot.
    pub fn digest(&self) -> String {
        let sorted: BTreeMap<&ItemId, &ItemState> = self.items.iter().collect();
        let mut hasher = Sha256::new();
        for (id, state) in sorted {
            hasher.update(id.to_string().as_bytes());
            hasher.update(serde_json::to_vec(state).expect("snapshot serializes"));
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

fn parse_id(v: &Value) -> Option<ItemId> {
    v.as_str().and_then(|s| s.parse().ok())
}

fn fold_created(event: &Event) -> ItemState {
    let Payload::Created {
        kind,
        described_by,
        props,
        content,
        state,
    } = &event.payload
    else {
        panic!("first event of an item must be Created");
    };
    ItemState {
        id: event.item,
        kind: *kind,
        described_by: *described_by,
        current_version: VersionNumber::FIRST,
        created_at: event.at,
        created_by: event.actor.clone(),
        created_seq: event.seq,
        last_seq: event.seq,
        props: props.clone(),
        versions: vec![content.clone().unwrap_or(Value::Null)],
        state: state.clone(),
        annotations: Vec::new(),
        grants: Default::default(),
        outcomes: Vec::new(),
        event_count: 1,
    }
}

fn fold_event(state: &mut ItemState, event: &Event) {
    match &event.payload {
        Payload::Created { .. } => panic!("duplicate Created for {}", event.item),
        Payload::PropertySet { key, value } => {
            state.props.insert(key.clone(), value.clone());
        }
        Payload::VersionAdded { version, content } => {
            state.current_version = *version;
            state.versions.push(content.clone());
        }
        Payload::OutcomeAttached { outcome } => state.outcomes.push(outcome.clone()),
        Payload::Annotated { text } => state.annotations.push(Annotation {
            seq: event.seq,
            actor: event.actor.clone(),
            at: event.at,
            text: text.clone(),
        }),
        Payload::PermissionGranted { grantee } => {
            state.grants.insert(grantee.clone());
        }
        Payload::StateTransition { to, .. } => state.state = Some(to.clone()),
    }
    state.last_seq = event.seq;
    state.event_count += 1;
}
